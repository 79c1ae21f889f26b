//! Fidelity and reliability measures: MITI behaviour counts and global
//! ratings, proficiency classification, inter-rater reliability, and
//! training metrics derived from session event logs.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::float::FloatCore;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Adherence, EventKind};
use crate::persistence::EventLog;

/// Global Relational score needed for proficiency (inclusive).
pub const PROFICIENT_GLOBAL: f64 = 3.5;
/// R:Q ratio needed for proficiency (inclusive).
pub const PROFICIENT_RQ: f64 = 1.0;
/// Number of per-skill ratings in a composite rating.
pub const SKILL_RATING_COUNT: usize = 6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScorerError {
    #[error("{what} = {value} is outside [1, 5]")]
    OutOfRange { what: String, value: f64 },
    #[error("expected {expected} values, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("{0}")]
    Degenerate(String),
    #[error("{0}")]
    Shape(String),
    #[error("utterance {0} is a client turn but carries a behaviour code")]
    ClientCode(usize),
    #[error("event log is empty")]
    EmptyLog,
    #[error("ratings CSV: {0}")]
    Csv(String),
}

impl ScorerError {
    pub fn code(&self) -> &'static str {
        match self {
            ScorerError::OutOfRange { .. } => "OUT_OF_RANGE",
            ScorerError::Arity { .. } => "ARITY",
            ScorerError::Degenerate(_) => "DEGENERATE",
            ScorerError::Shape(_) => "SHAPE",
            ScorerError::ClientCode(_) => "CLIENT_CODE",
            ScorerError::EmptyLog => "EMPTY_LOG",
            ScorerError::Csv(_) => "CSV",
        }
    }
}

fn check_likert(what: &str, value: f64) -> Result<(), ScorerError> {
    if (1.0..=5.0).contains(&value) {
        Ok(())
    } else {
        Err(ScorerError::OutOfRange { what: what.to_string(), value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Counselor,
    Client,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BehaviorCode {
    Question,
    Reflection,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Role,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<BehaviorCode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalRatings {
    pub empathy: f64,
    pub partnership: f64,
}

/// A human-coded counselling transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedTranscript {
    #[serde(default)]
    pub utterances: Vec<Utterance>,
    pub global_ratings: GlobalRatings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skill_ratings: Option<Vec<f64>>,
}

impl AnnotatedTranscript {
    pub fn validate(&self) -> Result<(), ScorerError> {
        if let Some(i) = self.utterances.iter().position(|u| u.speaker == Role::Client && u.code.is_some()) {
            return Err(ScorerError::ClientCode(i));
        }
        check_likert("empathy", self.global_ratings.empathy)?;
        check_likert("partnership", self.global_ratings.partnership)?;
        if let Some(r) = &self.skill_ratings {
            composite_skill_rating(r)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorCounts {
    pub questions: u32,
    pub reflections: u32,
}

pub fn count_behaviors(t: &AnnotatedTranscript) -> BehaviorCounts {
    t.utterances
        .iter()
        .filter(|u| u.speaker == Role::Counselor)
        .fold(BehaviorCounts::default(), |mut c, u| {
            match u.code {
                Some(BehaviorCode::Question) => c.questions += 1,
                Some(BehaviorCode::Reflection) => c.reflections += 1,
                _ => {}
            }
            c
        })
}

/// Reflections per question. `None` when no questions were asked.
pub fn rq_ratio(c: BehaviorCounts) -> Option<f64> {
    (c.questions > 0).then(|| f64::from(c.reflections) / f64::from(c.questions))
}

/// Mean of the empathy and partnership ratings.
pub fn global_relational(empathy: f64, partnership: f64) -> Result<f64, ScorerError> {
    check_likert("empathy", empathy)?;
    check_likert("partnership", partnership)?;
    Ok((empathy + partnership) / 2.0)
}

pub fn classify_proficiency(global: f64, ratio: Option<f64>) -> bool {
    global >= PROFICIENT_GLOBAL && ratio.is_some_and(|r| r >= PROFICIENT_RQ)
}

pub fn composite_skill_rating(ratings: &[f64]) -> Result<f64, ScorerError> {
    if ratings.len() != SKILL_RATING_COUNT {
        return Err(ScorerError::Arity { expected: SKILL_RATING_COUNT, got: ratings.len() });
    }
    for (i, r) in ratings.iter().enumerate() {
        check_likert(&format!("skill_ratings[{i}]"), *r)?;
    }
    Ok(ratings.iter().sum::<f64>() / ratings.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitiScorecard {
    pub counts: BehaviorCounts,
    pub rq_ratio: Option<f64>,
    pub global_relational: f64,
    pub proficient: bool,
    pub composite_skill_rating: Option<f64>,
}

pub fn score_transcript(t: &AnnotatedTranscript) -> Result<MitiScorecard, ScorerError> {
    t.validate()?;
    let counts = count_behaviors(t);
    let rq = rq_ratio(counts);
    let global = global_relational(t.global_ratings.empathy, t.global_ratings.partnership)?;
    Ok(MitiScorecard {
        counts,
        rq_ratio: rq,
        global_relational: global,
        proficient: classify_proficiency(global, rq),
        composite_skill_rating: t.skill_ratings.as_deref().map(composite_skill_rating).transpose()?,
    })
}

/// Subjects in rows, raters (or items) in columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct RatingsMatrix {
    rows: Vec<Vec<f64>>,
}

impl RatingsMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, ScorerError> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if n < 2 {
            return Err(ScorerError::Shape(format!("need at least 2 subjects, got {n}")));
        }
        if k < 2 {
            return Err(ScorerError::Shape(format!("need at least 2 raters, got {k}")));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != k) {
            return Err(ScorerError::Shape(format!("row {} has {} cells, expected {k}", i + 1, rows[i].len())));
        }
        if rows.iter().flatten().any(|x| !x.is_finite()) {
            return Err(ScorerError::Shape("ratings must be finite numbers".into()));
        }
        Ok(RatingsMatrix { rows })
    }

    /// Headerless CSV, one subject per line.
    pub fn from_csv(data: &str) -> Result<Self, ScorerError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(data.as_bytes());
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| ScorerError::Csv(e.to_string()))?;
            if record.iter().all(str::is_empty) {
                continue;
            }
            let row = record
                .iter()
                .map(|cell| {
                    cell.parse::<f64>()
                        .map_err(|_| ScorerError::Csv(format!("row {}: '{cell}' is not a number", line + 1)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        RatingsMatrix::new(rows)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn n_subjects(&self) -> usize {
        self.rows.len()
    }

    pub fn n_raters(&self) -> usize {
        self.rows[0].len()
    }
}

impl TryFrom<Vec<Vec<f64>>> for RatingsMatrix {
    type Error = ScorerError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        RatingsMatrix::new(rows)
    }
}

impl From<RatingsMatrix> for Vec<Vec<f64>> {
    fn from(m: RatingsMatrix) -> Self {
        m.rows
    }
}

// Reliability statistics are computed exactly and rounded once. Every finite
// double is an integer times a power of two, so rescaling all cells by the
// smallest exponent turns the table into integers; the sums of squares are
// then exact, and shifting cells by a representable constant cannot change
// the result.
struct Sums {
    n: BigInt,
    k: BigInt,
    /// Grand total.
    t: BigInt,
    /// Sum of squared cells.
    sq: BigInt,
    /// Sum of squared row totals.
    rows_sq: BigInt,
    /// Sum of squared column totals.
    cols_sq: BigInt,
    /// Cell value = integer · 2^shift.
    shift: i32,
}

impl Sums {
    fn new(m: &RatingsMatrix) -> Sums {
        let decoded: Vec<Vec<(BigInt, i32)>> = m
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|&x| {
                        let (mantissa, exp, sign) = FloatCore::integer_decode(x);
                        (BigInt::from(mantissa) * sign, i32::from(exp))
                    })
                    .collect()
            })
            .collect();
        let shift = decoded.iter().flatten().filter(|(v, _)| !v.is_zero()).map(|(_, e)| *e).min().unwrap_or(0);
        let cells: Vec<Vec<BigInt>> = decoded
            .into_iter()
            .map(|r| r.into_iter().map(|(v, e)| v << (e - shift) as usize).collect())
            .collect();
        let square = |x: &BigInt| x * x;
        let row_totals: Vec<BigInt> = cells.iter().map(|r| r.iter().sum()).collect();
        let col_totals: Vec<BigInt> = (0..m.n_raters()).map(|j| cells.iter().map(|r| &r[j]).sum()).collect();
        Sums {
            n: m.n_subjects().into(),
            k: m.n_raters().into(),
            t: row_totals.iter().sum(),
            sq: cells.iter().flatten().map(square).sum(),
            rows_sq: row_totals.iter().map(square).sum(),
            cols_sq: col_totals.iter().map(square).sum(),
            shift,
        }
    }

    /// n·k·SS_rows.
    fn rows(&self) -> BigInt {
        &self.n * &self.rows_sq - &self.t * &self.t
    }

    /// n·k·SS_columns.
    fn cols(&self) -> BigInt {
        &self.k * &self.cols_sq - &self.t * &self.t
    }

    /// n·k·SS_error.
    fn error(&self) -> BigInt {
        &self.n * &self.k * &self.sq - &self.n * &self.rows_sq - &self.k * &self.cols_sq + &self.t * &self.t
    }

    /// Undo the n·k factor and the integer scaling.
    fn unscale(&self, x: BigInt, df: usize) -> f64 {
        let scale = BigInt::from(1) << (2 * self.shift.unsigned_abs()) as usize;
        let nk = &self.n * &self.k * BigInt::from(df);
        let r = if self.shift >= 0 {
            BigRational::new(x * scale, nk)
        } else {
            BigRational::new(x, nk * scale)
        };
        r.to_f64().unwrap_or(f64::NAN)
    }
}

fn ratio(num: BigInt, den: BigInt) -> f64 {
    BigRational::new(num, den).to_f64().unwrap_or(f64::NAN)
}

/// Cronbach's alpha with items in columns.
pub fn cronbach_alpha(m: &RatingsMatrix) -> Result<f64, ScorerError> {
    let s = Sums::new(m);
    // n·(total-score SS) and n·(sum of item SS); the n−1 denominators cancel
    let total = s.rows();
    if total.is_zero() {
        return Err(ScorerError::Degenerate("total scores have zero variance".into()));
    }
    let items = &s.n * &s.sq - &s.cols_sq;
    let k1 = &s.k - 1;
    Ok(ratio(&s.k * (&total - items), k1 * total))
}

/// Two-way mean squares of a subjects × raters table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSquares {
    pub rows: f64,
    pub columns: f64,
    pub error: f64,
}

pub fn mean_squares(m: &RatingsMatrix) -> MeanSquares {
    let s = Sums::new(m);
    let (n, k) = (m.n_subjects(), m.n_raters());
    MeanSquares {
        rows: s.unscale(s.rows(), n - 1),
        columns: s.unscale(s.cols(), k - 1),
        error: s.unscale(s.error(), (n - 1) * (k - 1)),
    }
}

/// ICC(C,k): two-way model, consistency definition, average of k raters.
/// Equal to (MS_rows − MS_error) / MS_rows.
pub fn icc_avg_consistency(m: &RatingsMatrix) -> Result<f64, ScorerError> {
    let s = Sums::new(m);
    let rows = s.rows();
    if rows.is_zero() {
        return Err(ScorerError::Degenerate("subjects do not vary (MS_rows = 0)".into()));
    }
    // 1 − MS_error/MS_rows with the degrees of freedom folded in
    let rows = rows * (&s.k - 1);
    Ok(ratio(&rows - s.error(), rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetrics {
    pub duration_seconds: f64,
    pub mistakes: u32,
    pub turns: u32,
    /// Mistakes attributed to the role-play segment they occurred in.
    pub per_skill_mistakes: BTreeMap<String, u32>,
}

pub fn training_metrics(log: &EventLog) -> Result<TrainingMetrics, ScorerError> {
    let (first, last) = match (log.records.first(), log.records.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(ScorerError::EmptyLog),
    };
    let mut metrics = TrainingMetrics {
        duration_seconds: last.ts.saturating_sub(first.ts) as f64 / 1000.0,
        mistakes: 0,
        turns: 0,
        per_skill_mistakes: BTreeMap::new(),
    };
    for e in log.records.iter().map(|r| &r.event) {
        if e.kind.is_turn() {
            metrics.turns += 1;
        }
        if e.kind == EventKind::ChoiceMade && e.adherence == Some(Adherence::Nonadherent) {
            metrics.mistakes += 1;
            *metrics.per_skill_mistakes.entry(e.segment.clone()).or_default() += 1;
        }
    }
    Ok(metrics)
}

impl fmt::Display for MitiScorecard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "questions:          {}", self.counts.questions)?;
        writeln!(f, "reflections:        {}", self.counts.reflections)?;
        match self.rq_ratio {
            Some(r) => writeln!(f, "R:Q ratio:          {r:.2}")?,
            None => writeln!(f, "R:Q ratio:          undefined (no questions)")?,
        }
        writeln!(f, "global relational:  {:.2}", self.global_relational)?;
        if let Some(c) = self.composite_skill_rating {
            writeln!(f, "composite skill:    {c:.2}")?;
        }
        write!(f, "proficient:         {}", if self.proficient { "yes" } else { "no" })
    }
}
