use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use micoach::api::{router, AppState, Clock};
use micoach_core::curriculum;
use micoach_core::engine::{start_session, Bindings, EngineConfig, Mode};
use micoach_core::persistence::{ExportFormat, Store};
use micoach_core::script::AdherenceTag;
use serde_json::{json, Value};
use tower::ServiceExt;

const TOKEN: &str = "s3cret";

struct Harness {
    app: Router,
    dir: tempfile::TempDir,
    clock: Arc<AtomicU64>,
}

fn build(dir: &std::path::Path, token: Option<&str>, clock: Arc<AtomicU64>) -> Router {
    let c = clock.clone();
    let clock: Clock = Arc::new(move || c.fetch_add(250, Ordering::SeqCst));
    let store = Store::open(dir).unwrap();
    let state = AppState::new(store, curriculum::bundled().program, token.map(str::to_owned), clock).unwrap();
    router(Arc::new(state))
}

fn harness(token: Option<&str>) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(AtomicU64::new(1_000_000));
    let app = build(dir.path(), token, clock.clone());
    Harness { app, dir, clock }
}

struct Reply {
    status: StatusCode,
    content_type: String,
    bytes: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.bytes)))
    }
}

async fn send(app: &Router, req: Request<Body>) -> Reply {
    let trainee_facing = !req.uri().path().ends_with("/export");
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let content_type = res
        .headers()
        .get(header::CONTENT_TYPE)
        .map(|v| v.to_str().unwrap().to_string())
        .unwrap_or_default();
    let bytes = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    if trainee_facing {
        let text = String::from_utf8_lossy(&bytes);
        assert!(!text.contains("\"adherence\""), "adherence leaked: {text}");
        assert!(!text.contains("nonadherent"), "adherence leaked: {text}");
    }
    Reply { status, content_type, bytes }
}

async fn get(app: &Router, uri: &str) -> Reply {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &Router, uri: &str, body: Value) -> Reply {
    let req = Request::builder()
        .method(Method::POST)
        .uri(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    send(app, req).await
}

async fn admin(app: &Router, method: Method, uri: &str, token: Option<&str>, content_type: &str, body: String) -> Reply {
    let mut b = Request::builder().method(method).uri(uri).header(header::CONTENT_TYPE, content_type);
    if let Some(t) = token {
        b = b.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    send(app, b.body(Body::from(body)).unwrap()).await
}

async fn start(app: &Router, mode: &str) -> Value {
    let r = post(app, "/api/sessions", json!({"mode": mode, "bindings": {"user.first_name": "Ana"}})).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&r.bytes));
    r.json()
}

/// Look up an option's adherence tag in the bundled script: the tests play
/// the researcher, not the trainee.
fn tag_of(segment: &str, option_id: &str, label: &str) -> AdherenceTag {
    let cur = curriculum::bundled();
    let seg = cur.ast().segment(segment).unwrap();
    seg.states
        .iter()
        .filter_map(|s| s.menu())
        .flatten()
        .find(|o| o.id == option_id && o.label.generic_text() == label)
        .map(|o| o.tag)
        .unwrap_or(AdherenceTag::Untagged)
}

/// The option on the pending menu with the wanted tag (first option for
/// teaching menus), plus the menu's segment.
fn pick(view: &Value, want: AdherenceTag) -> (String, String) {
    let menu = view["events"].as_array().unwrap().last().unwrap();
    let segment = menu["segment"].as_str().unwrap().to_string();
    let options = view["options"].as_array().unwrap();
    let chosen = options
        .iter()
        .find(|o| tag_of(&segment, o["id"].as_str().unwrap(), o["label"].as_str().unwrap()) == want)
        .unwrap_or(&options[0]);
    (chosen["id"].as_str().unwrap().to_string(), segment)
}

async fn choose(app: &Router, id: &str, view: &Value, option: &str) -> Reply {
    post(app, &format!("/api/sessions/{id}/choice"), json!({"option_id": option, "seq": view["last_seq"]})).await
}

/// Answer adherently until a role-play menu is pending.
async fn to_roleplay(app: &Router, id: &str, mut view: Value) -> Value {
    loop {
        let (option, segment) = pick(&view, AdherenceTag::Adherent);
        if segment.starts_with("rp_") {
            return view;
        }
        let r = choose(app, id, &view, &option).await;
        assert_eq!(r.status, StatusCode::OK);
        view = r.json();
    }
}

fn kinds(view: &Value) -> Vec<String> {
    view["events"].as_array().unwrap().iter().map(|e| e["kind"].as_str().unwrap().to_string()).collect()
}

#[tokio::test]
async fn healthz() {
    let h = harness(None);
    let r = get(&h.app, "/healthz").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json(), json!({"status": "ok"}));
    let r = get(&h.app, "/nope").await;
    assert_eq!((r.status, r.json()["code"].clone()), (StatusCode::NOT_FOUND, json!("NOT_FOUND")));
}

#[tokio::test]
async fn roleplay_session_greets_trainee() {
    let h = harness(None);
    let v = start(&h.app, "roleplay").await;
    let first = &v["events"][0];
    assert_eq!(first["kind"], "AgentUtterance");
    assert!(first["text"].as_str().unwrap().contains("Ana"));
    assert_eq!(v["status"], "awaiting_choice");
    assert!(!v["options"].as_array().unwrap().is_empty());
    assert_eq!(v["last_seq"].as_u64().unwrap() as usize, v["events"].as_array().unwrap().len());
}

#[tokio::test]
async fn api_events_equal_engine_events_without_adherence() {
    let h = harness(None);
    let v = start(&h.app, "roleplay").await;
    let bindings: Bindings = [("user.first_name".to_string(), "Ana".to_string())].into_iter().collect();
    let cur = curriculum::bundled();
    let (_, events) = start_session(&cur.program, Mode::Roleplay, bindings, &EngineConfig::default()).unwrap();
    let expected: Vec<Value> = events.iter().map(|e| serde_json::to_value(e.trainee_view()).unwrap()).collect();
    assert_eq!(v["events"].as_array().unwrap(), &expected);
}

#[tokio::test]
async fn video_session_plays_through() {
    let h = harness(None);
    let v = start(&h.app, "video").await;
    assert_eq!(v["status"], "completed");
    assert!(v["options"].as_array().unwrap().is_empty());
    assert_eq!(kinds(&v).last().unwrap(), "SessionCompleted");
    assert!(!kinds(&v).iter().any(|k| k == "MenuShown" || k == "ChoiceMade"));
    assert!(!v.to_string().contains("Ana"));
    let id = v["session_id"].as_str().unwrap();
    let p = get(&h.app, &format!("/api/sessions/{id}/progress")).await.json();
    assert_eq!((p["skills_completed"].as_u64(), p["skills_total"].as_u64()), (Some(6), Some(6)));
    let r = post(&h.app, &format!("/api/sessions/{id}/choice"), json!({"option_id": "o1"})).await;
    assert_eq!((r.status, r.json()["code"].clone()), (StatusCode::CONFLICT, json!("ENGINE_HALTED")));
}

#[tokio::test]
async fn bad_session_requests() {
    let h = harness(None);
    for (body, code) in [
        (json!({"mode": "flying"}), "INVALID_MODE"),
        (json!({}), "INVALID_MODE"),
        (json!({"mode": "roleplay", "bindings": {"user.first_name": 3}}), "INVALID_BINDINGS"),
        (json!({"mode": "roleplay", "bindings": ["Ana"]}), "INVALID_BINDINGS"),
        (json!({"mode": "roleplay", "bindings": {"not a path": "x"}}), "INVALID_BINDINGS"),
        (json!({"mode": "roleplay", "user_id": "../x"}), "INVALID_ID"),
    ] {
        let r = post(&h.app, "/api/sessions", body.clone()).await;
        assert_eq!(r.status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(r.json()["code"], code, "{body}");
        assert!(r.json()["message"].is_string());
    }
    let req = Request::post("/api/sessions").body(Body::from("{nope")).unwrap();
    let r = send(&h.app, req).await;
    assert_eq!((r.status, r.json()["code"].clone()), (StatusCode::BAD_REQUEST, json!("INVALID_JSON")));
    let r = post(&h.app, "/api/sessions", json!({"mode": "roleplay", "script": "missing@1"})).await;
    assert_eq!((r.status, r.json()["code"].clone()), (StatusCode::NOT_FOUND, json!("UNKNOWN_SCRIPT")));
}

#[tokio::test]
async fn turn_endpoint_cursor_and_options() {
    let h = harness(None);
    let v = start(&h.app, "roleplay").await;
    let id = v["session_id"].as_str().unwrap();
    let t = get(&h.app, &format!("/api/sessions/{id}/turn")).await.json();
    assert_eq!(t["events"], v["events"]);
    assert_eq!(t["status"], "awaiting_choice");
    assert!(!t["options"].as_array().unwrap().is_empty());
    let last = v["last_seq"].as_u64().unwrap();
    let t = get(&h.app, &format!("/api/sessions/{id}/turn?after={last}")).await.json();
    assert!(t["events"].as_array().unwrap().is_empty());
    assert_eq!(t["options"], v["options"]);
    let t = get(&h.app, &format!("/api/sessions/{id}/turn?after={}", last - 2)).await.json();
    assert_eq!(t["events"].as_array().unwrap().len(), 2);

    let r = get(&h.app, "/api/sessions/doesnotexist/turn").await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(r.json()["code"], "UNKNOWN_SESSION");
}

#[tokio::test]
async fn adherent_and_nonadherent_choices() {
    let h = harness(None);
    let v = start(&h.app, "roleplay").await;
    let id = v["session_id"].as_str().unwrap().to_string();
    let v = to_roleplay(&h.app, &id, v).await;

    let (good, _) = pick(&v, AdherenceTag::Adherent);
    let r = choose(&h.app, &id, &v, &good).await;
    assert_eq!(r.status, StatusCode::OK);
    let after_good = r.json();
    let k = kinds(&after_good);
    assert_eq!(k.first().unwrap(), "ChoiceMade");
    assert!(matches!(k.last().unwrap().as_str(), "MenuShown" | "SegmentCompleted"));
    assert!(!k.contains(&"FailureUtterance".to_string()));

    let (bad, _) = pick(&after_good, AdherenceTag::Nonadherent);
    let r = choose(&h.app, &id, &after_good, &bad).await;
    let after_bad = r.json();
    assert_eq!(kinds(&after_bad), ["ChoiceMade", "FailureUtterance", "SegmentFailed", "AgentUtterance", "MenuShown"]);
    assert_eq!(after_bad["events"][3]["speaker"], "clara");
    assert_eq!(after_bad["options"].as_array().unwrap().len(), 1);

    let p = get(&h.app, &format!("/api/sessions/{id}/progress")).await.json();
    assert_eq!(p["mistakes"], 1);
    assert_eq!(p["current_skill"], "rapport");

    let r = choose(&h.app, &id, &after_bad, "o7").await;
    assert_eq!((r.status, r.json()["code"].clone()), (StatusCode::BAD_REQUEST, json!("UNKNOWN_OPTION")));
}

#[tokio::test]
async fn repeated_choice_is_idempotent() {
    let h = harness(None);
    let v = start(&h.app, "roleplay").await;
    let id = v["session_id"].as_str().unwrap().to_string();
    let first = choose(&h.app, &id, &v, "o1").await;
    let again = choose(&h.app, &id, &v, "o1").await;
    assert_eq!(first.status, StatusCode::OK);
    assert_eq!(first.json(), again.json());
    let other = choose(&h.app, &id, &v, "o2").await;
    assert_eq!((other.status, other.json()["code"].clone()), (StatusCode::CONFLICT, json!("STALE_SEQ")));
    let ahead = post(&h.app, &format!("/api/sessions/{id}/choice"), json!({"option_id": "o1", "seq": 9999})).await;
    assert_eq!(ahead.status, StatusCode::CONFLICT);

    let store = Store::open(h.dir.path()).unwrap();
    let log = store.read_log(&id).unwrap();
    assert_eq!(log.events().filter(|e| e.chosen_option().is_some() && e.kind.as_str() == "ChoiceMade").count(), 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_double_submit_advances_once() {
    let h = harness(None);
    let v = start(&h.app, "roleplay").await;
    let id = v["session_id"].as_str().unwrap().to_string();
    let mut tasks = Vec::new();
    for _ in 0..8 {
        let (app, id, v) = (h.app.clone(), id.clone(), v.clone());
        tasks.push(tokio::spawn(async move { choose(&app, &id, &v, "o1").await.json() }));
    }
    let mut replies = Vec::new();
    for t in tasks {
        replies.push(t.await.unwrap());
    }
    assert!(replies.windows(2).all(|w| w[0] == w[1]));
    let log = Store::open(h.dir.path()).unwrap().read_log(&id).unwrap();
    assert_eq!(log.events().filter(|e| e.kind.as_str() == "ChoiceMade").count(), 1);
}

#[tokio::test]
async fn export_requires_admin_token() {
    let h = harness(Some(TOKEN));
    let v = start(&h.app, "roleplay").await;
    let id = v["session_id"].as_str().unwrap().to_string();
    choose(&h.app, &id, &v, "o1").await;
    let uri = format!("/api/sessions/{id}/export?format=jsonl");
    let r = admin(&h.app, Method::GET, &uri, None, "text/plain", String::new()).await;
    assert_eq!((r.status, r.json()["code"].clone()), (StatusCode::UNAUTHORIZED, json!("UNAUTHORIZED")));
    let r = admin(&h.app, Method::GET, &uri, Some("wrong"), "text/plain", String::new()).await;
    assert_eq!(r.status, StatusCode::UNAUTHORIZED);

    let store = Store::open(h.dir.path()).unwrap();
    let r = admin(&h.app, Method::GET, &uri, Some(TOKEN), "text/plain", String::new()).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.content_type, "application/x-ndjson");
    assert_eq!(r.bytes, store.export_events(&id, ExportFormat::Jsonl).unwrap());
    let r = admin(&h.app, Method::GET, &format!("/api/sessions/{id}/export?format=csv"), Some(TOKEN), "text/plain", String::new()).await;
    assert!(r.content_type.starts_with("text/csv"));
    assert_eq!(r.bytes, store.export_events(&id, ExportFormat::Csv).unwrap());
    let r = admin(&h.app, Method::GET, &format!("/api/sessions/{id}/export?format=xml"), Some(TOKEN), "text/plain", String::new()).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let r = admin(&h.app, Method::GET, "/api/sessions/nope/export", Some(TOKEN), "text/plain", String::new()).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    let closed = harness(None);
    let r = admin(&closed.app, Method::GET, &uri, Some(TOKEN), "text/plain", String::new()).await;
    assert_eq!((r.status, r.json()["code"].clone()), (StatusCode::FORBIDDEN, json!("ADMIN_DISABLED")));
}

const THREE_OPTIONS: &str = r#"script "bad" version 1 entry rp
segment rp (kind=roleplay, agent=mary) {
  state s {
    say "Hi."
    menu {
      option adherent "A" -> !end
      option nonadherent "B" -> !fail
      option nonadherent "C" -> !fail
    }
  }
  failure {
    say "Bye."
  }
}
"#;

#[tokio::test]
async fn script_upload_reports_validation() {
    let h = harness(Some(TOKEN));
    let r = admin(&h.app, Method::POST, "/api/scripts", Some(TOKEN), "text/plain", THREE_OPTIONS.into()).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let body = r.json();
    assert_eq!(body["code"], "OPTION_LIMIT");
    assert_eq!(body["location"]["segment"], "rp");
    assert_eq!(body["location"]["line"], 3);
    assert!(body["report"]["errors"].as_array().unwrap().iter().any(|e| e["code"] == "OPTION_LIMIT"));

    let r = admin(&h.app, Method::POST, "/api/scripts", Some(TOKEN), "text/plain", "script \"x\" version 1 entry a\nsegment a (kind=pedagogy, agent=c) {".into()).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.json()["code"], "UNBALANCED_BRACES");
    assert_eq!(r.json()["location"]["line"], 2);

    let r = admin(&h.app, Method::POST, "/api/scripts", None, "text/plain", THREE_OPTIONS.into()).await;
    assert_eq!(r.status, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn uploaded_script_can_run_sessions_after_restart() {
    let h = harness(Some(TOKEN));
    let good = THREE_OPTIONS.replace("      option nonadherent \"C\" -> !fail\n", "");
    let boundary = "XyZ";
    let form = format!(
        "--{boundary}\r\nContent-Disposition: form-data; name=\"script\"; filename=\"good.miscript\"\r\nContent-Type: text/plain\r\n\r\n{good}\r\n--{boundary}--\r\n"
    );
    let r = admin(&h.app, Method::POST, "/api/scripts", Some(TOKEN), &format!("multipart/form-data; boundary={boundary}"), form).await;
    assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.bytes));
    assert_eq!(r.json()["script"], "bad@1");
    assert_eq!(r.json()["errors"], json!([]));
    // same script again is fine, a different one under the same name is not
    let r = admin(&h.app, Method::POST, "/api/scripts", Some(TOKEN), "text/plain", good.clone()).await;
    assert_eq!(r.status, StatusCode::OK);
    let changed = good.replace("\"Hi.\"", "\"Hello.\"");
    let r = admin(&h.app, Method::POST, "/api/scripts", Some(TOKEN), "text/plain", changed).await;
    assert_eq!((r.status, r.json()["code"].clone()), (StatusCode::CONFLICT, json!("SCRIPT_EXISTS")));

    let r = post(&h.app, "/api/sessions", json!({"mode": "roleplay", "script": "bad@1"})).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let v = r.json();
    let id = v["session_id"].as_str().unwrap().to_string();
    assert_eq!(v["events"][0]["text"], "Hi.");

    // a fresh server over the same data directory picks everything up again
    let restarted = build(h.dir.path(), Some(TOKEN), h.clock.clone());
    let t = get(&restarted, &format!("/api/sessions/{id}/turn")).await.json();
    assert_eq!(t["events"], v["events"]);
    let r = choose(&restarted, &id, &v, "o2").await;
    assert_eq!(kinds(&r.json()), ["ChoiceMade", "FailureUtterance", "SegmentFailed", "AgentUtterance", "MenuShown"]);
    let r = choose(&restarted, &id, &r.json(), "o1").await.json();
    assert_eq!(r["status"], "completed");
    let s = get(&restarted, &format!("/api/sessions/{id}")).await.json();
    assert_eq!((s["status"].clone(), s["script"].clone(), s["mode"].clone()), (json!("completed"), json!("bad@1"), json!("roleplay")));
}

#[tokio::test]
async fn returning_user_keeps_bindings() {
    let h = harness(None);
    let r = post(&h.app, "/api/sessions", json!({"mode": "roleplay", "user_id": "u1", "bindings": {"user.first_name": "Ana"}})).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let r = post(&h.app, "/api/sessions", json!({"mode": "roleplay", "user_id": "u1"})).await;
    let v = r.json();
    assert!(v["events"][0]["text"].as_str().unwrap().contains("Ana"));
    let id = v["session_id"].as_str().unwrap();
    let s = get(&h.app, &format!("/api/sessions/{id}")).await.json();
    assert_eq!(s["user_id"], "u1");
}
