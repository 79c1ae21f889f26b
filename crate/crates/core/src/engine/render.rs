use super::{Bindings, EngineError, Mode};
use crate::script::Template;

/// Binding namespace holding personal data. Video mode never utters it.
pub const PERSONAL_NAMESPACE: &str = "user";

pub fn is_personal(path: &str) -> bool {
    path == PERSONAL_NAMESPACE
        || path.strip_prefix(PERSONAL_NAMESPACE).is_some_and(|rest| rest.starts_with('.'))
}

/// Render a template for the given delivery mode.
///
/// Tailored modes substitute bindings and fall back to the placeholder's
/// fallback text. Video mode always prefers the fallback and only reads
/// bindings outside the personal namespace.
pub fn render_template(template: &Template, bindings: &Bindings, mode: Mode) -> Result<String, EngineError> {
    template.render_with(|path, fallback| {
        let missing = || EngineError::MissingBinding(path.to_owned());
        match mode {
            Mode::Video => match fallback {
                Some(fb) => Ok(fb.to_owned()),
                None if !is_personal(path) => bindings.get(path).cloned().ok_or_else(missing),
                None => Err(missing()),
            },
            Mode::Didactic | Mode::Roleplay => bindings
                .get(path)
                .cloned()
                .or_else(|| fallback.map(str::to_owned))
                .ok_or_else(missing),
        }
    })
}
