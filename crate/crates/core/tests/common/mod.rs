//! Independent reference implementations and generators shared by the
//! integration tests.
#![allow(dead_code)]

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

fn col(m: &[Vec<f64>], j: usize) -> Vec<f64> {
    m.iter().map(|r| r[j]).collect()
}

fn avg(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn cov(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (avg(a), avg(b));
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0)
}

/// Alpha from the item covariance matrix: k/(k-1) * (1 - trace / sum of all entries).
pub fn alpha_oracle(m: &[Vec<f64>]) -> f64 {
    let k = m[0].len();
    let cols: Vec<Vec<f64>> = (0..k).map(|j| col(m, j)).collect();
    let mut trace = 0.0;
    let mut total = 0.0;
    for i in 0..k {
        for j in 0..k {
            let c = cov(&cols[i], &cols[j]);
            total += c;
            if i == j {
                trace += c;
            }
        }
    }
    k as f64 / (k as f64 - 1.0) * (1.0 - trace / total)
}

/// ICC(C,k) with the error sum of squares taken directly from the
/// interaction residuals rather than by subtraction.
pub fn icc_oracle(m: &[Vec<f64>]) -> f64 {
    let (n, k) = (m.len(), m[0].len());
    let grand = m.iter().flatten().sum::<f64>() / (n * k) as f64;
    let row_means: Vec<f64> = m.iter().map(|r| avg(r)).collect();
    let col_means: Vec<f64> = (0..k).map(|j| avg(&col(m, j))).collect();
    let mut ss_rows = 0.0;
    for rm in &row_means {
        ss_rows += k as f64 * (rm - grand).powi(2);
    }
    let mut ss_err = 0.0;
    for i in 0..n {
        for j in 0..k {
            ss_err += (m[i][j] - row_means[i] - col_means[j] + grand).powi(2);
        }
    }
    let ms_rows = ss_rows / (n as f64 - 1.0);
    let ms_err = ss_err / ((n as f64 - 1.0) * (k as f64 - 1.0));
    (ms_rows - ms_err) / ms_rows
}

/// A random ratings matrix: `n` in 3..=30 subjects, `k` in 2..=8 raters,
/// cells drawn from a per-subject level plus noise. With `likert`, cells
/// are multiples of 1/4 in [1, 5]; otherwise arbitrary reals.
pub fn random_matrix(rng: &mut Xoshiro256PlusPlus, likert: bool) -> Vec<Vec<f64>> {
    let n = rng.random_range(3..=30);
    let k = rng.random_range(2..=8);
    (0..n)
        .map(|_| {
            let level: f64 = rng.random_range(1.0..5.0);
            (0..k)
                .map(|_| {
                    let x = level + rng.random_range(-1.5..1.5);
                    if likert {
                        ((x * 4.0).round() / 4.0).clamp(1.0, 5.0)
                    } else {
                        x
                    }
                })
                .collect()
        })
        .collect()
}

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Adherent,
    Nonadherent,
    Untagged,
}

impl Tag {
    fn keyword(self) -> &'static str {
        match self {
            Tag::Adherent => "adherent ",
            Tag::Nonadherent => "nonadherent ",
            Tag::Untagged => "",
        }
    }
}

/// Shape of a generated script: a pedagogy entry segment that calls each
/// role-play in turn. Role-play `i` has `menus[i].len()` menu states; each
/// menu is a list of option tags.
#[derive(Debug, Clone)]
pub struct ScriptShape {
    pub roleplays: Vec<Vec<Vec<Tag>>>,
    pub teaching_options: usize,
}

impl ScriptShape {
    pub fn render(&self) -> String {
        let mut s = String::from("script \"gen\" version 1 entry main\n");
        for (i, menus) in self.roleplays.iter().enumerate() {
            s += &format!("segment rp{i} (kind=roleplay, agent=mary) {{\n");
            for (j, menu) in menus.iter().enumerate() {
                s += &format!("  state m{j} {{\n    say \"Client line {i}.{j}, {{user.first_name|friend}}.\"\n    menu {{\n");
                let next = if j + 1 < menus.len() { format!("m{}", j + 1) } else { "!end".into() };
                for (o, tag) in menu.iter().enumerate() {
                    let target = if *tag == Tag::Nonadherent { "!fail".to_string() } else { next.clone() };
                    s += &format!("      option {}\"Reply {o} to {j}\" -> {target}\n", tag.keyword());
                }
                s += "    }\n  }\n";
            }
            s += "  failure {\n    say \"I have to go.\"\n  }\n}\n";
        }
        s += "segment main (kind=pedagogy, agent=clara) {\n  state intro {\n    say \"Hello {user.first_name|there}.\"\n    menu {\n";
        for o in 0..self.teaching_options {
            s += &format!("      option \"Go {o}\" -> p0\n");
        }
        s += "    }\n  }\n";
        for i in 0..self.roleplays.len() {
            s += &format!("  state p{i} {{\n    call rp{i} onfail r{i}\n  }}\n");
        }
        s += "  state done {\n    say \"Done.\"\n    end\n  }\n";
        for i in 0..self.roleplays.len() {
            s += &format!("  state r{i} {{\n    say \"Again.\"\n    menu {{\n      option \"Retry\" -> p{i}\n    }}\n  }}\n");
        }
        s += "}\n";
        s
    }

    /// Whether every role-play menu has at most two options and exactly one
    /// adherent option, the rule the validator must enforce.
    pub fn menus_conform(&self) -> bool {
        self.roleplays.iter().flatten().all(|menu| {
            menu.len() <= 2 && menu.iter().filter(|t| **t == Tag::Adherent).count() == 1
        })
    }
}

fn tag() -> impl Strategy<Value = Tag> {
    prop_oneof![3 => Just(Tag::Adherent), 3 => Just(Tag::Nonadherent), 1 => Just(Tag::Untagged)]
}

/// Arbitrary menus, including ones the validator must reject.
pub fn any_shape() -> impl Strategy<Value = ScriptShape> {
    let menu = prop::collection::vec(tag(), 1..=5);
    let rp = prop::collection::vec(menu, 1..=4);
    (prop::collection::vec(rp, 1..=3), 1usize..=4)
        .prop_map(|(roleplays, teaching_options)| ScriptShape { roleplays, teaching_options })
}

/// Well-formed menus only: one adherent option, optionally one nonadherent,
/// in either order.
pub fn valid_shape() -> impl Strategy<Value = ScriptShape> {
    let menu = prop_oneof![
        Just(vec![Tag::Adherent]),
        Just(vec![Tag::Adherent, Tag::Nonadherent]),
        Just(vec![Tag::Nonadherent, Tag::Adherent]),
    ];
    let rp = prop::collection::vec(menu, 1..=5);
    (prop::collection::vec(rp, 1..=4), 1usize..=4)
        .prop_map(|(roleplays, teaching_options)| ScriptShape { roleplays, teaching_options })
}

impl ScriptShape {
    pub fn fully_tagged(&self) -> bool {
        self.roleplays.iter().flatten().flatten().all(|t| *t != Tag::Untagged)
    }
}
