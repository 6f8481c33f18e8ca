//! FRR / FAR / WWS evaluation and threshold sweeps.
//!
//! FRR = N_FR / N_wake, FAR = N_FA / N_non_wake and the wake word spotting
//! score WWS = FRR + FAR, all reported in percent.

use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use crate::error::{Error, Result};

/// Evaluation counts and rates at one decision threshold.
///
/// `frr`/`far` are `None` when the corresponding class is absent from the
/// score list (the rate is undefined, not zero); `wws` is present only when
/// both rates are.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EvalResult {
    pub threshold: f64,
    pub n_wake: usize,
    pub n_non_wake: usize,
    pub n_fr: usize,
    pub n_fa: usize,
    /// False reject rate in percent.
    pub frr: Option<f64>,
    /// False alarm rate in percent.
    pub far: Option<f64>,
    /// WWS score = FRR + FAR, in percent.
    pub wws: Option<f64>,
}

/// Scores one threshold. A sample is decided positive when `prob >= threshold`.
pub fn evaluate(scores: &[(f64, bool)], threshold: f64) -> Result<EvalResult> {
    if scores.is_empty() {
        return Err(Error::validation("evaluate: empty score list"));
    }
    let mut n_wake = 0usize;
    let mut n_non_wake = 0usize;
    let mut n_fr = 0usize;
    let mut n_fa = 0usize;
    for &(prob, label) in scores {
        let decision = prob >= threshold;
        if label {
            n_wake += 1;
            if !decision {
                n_fr += 1;
            }
        } else {
            n_non_wake += 1;
            if decision {
                n_fa += 1;
            }
        }
    }
    let frr = (n_wake > 0).then(|| 100.0 * n_fr as f64 / n_wake as f64);
    let far = (n_non_wake > 0).then(|| 100.0 * n_fa as f64 / n_non_wake as f64);
    let wws = match (frr, far) {
        (Some(a), Some(b)) => Some(a + b),
        _ => None,
    };
    Ok(EvalResult {
        threshold,
        n_wake,
        n_non_wake,
        n_fr,
        n_fa,
        frr,
        far,
        wws,
    })
}

/// Evaluates every threshold in the grid. FRR is nondecreasing and FAR
/// nonincreasing in the threshold.
pub fn sweep(scores: &[(f64, bool)], thresholds: &[f64]) -> Result<Vec<EvalResult>> {
    if thresholds.is_empty() {
        return Err(Error::validation("sweep: empty threshold grid"));
    }
    if thresholds.iter().any(|&t| !(0.0..=1.0).contains(&t)) {
        return Err(Error::validation("sweep: thresholds must lie in [0,1]"));
    }
    thresholds.iter().map(|&t| evaluate(scores, t)).collect()
}

/// One row of the score CSV (`id,label,p_a,p_v,p_av,decision`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub id: String,
    pub label: bool,
    pub p_a: Option<f64>,
    pub p_v: Option<f64>,
    pub p_av: Option<f64>,
    pub decision: bool,
}

impl ScoreRecord {
    /// The probability the decision was taken on: fused if present, else the
    /// single available modality.
    pub fn decision_prob(&self) -> Option<f64> {
        self.p_av.or(self.p_a).or(self.p_v)
    }
}

pub const SCORE_CSV_HEADER: &str = "id,label,p_a,p_v,p_av,decision";

fn fmt_opt(p: Option<f64>) -> String {
    match p {
        Some(v) => format!("{v:.6}"),
        None => String::new(),
    }
}

pub fn write_score_csv(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    let mut out = String::new();
    out.push_str(SCORE_CSV_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.id,
            r.label as u8,
            fmt_opt(r.p_a),
            fmt_opt(r.p_v),
            fmt_opt(r.p_av),
            r.decision as u8
        )
        .expect("write to string");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_score_csv(path: &Path) -> Result<Vec<ScoreRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 {
            if line.trim() != SCORE_CSV_HEADER {
                return Err(Error::Parse {
                    path: path.into(),
                    line: 1,
                    msg: format!("expected header `{SCORE_CSV_HEADER}`"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                path: path.into(),
                line: i + 1,
                msg: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let parse_opt = |s: &str, name: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>().map(Some).map_err(|_| Error::Parse {
                path: path.into(),
                line: i + 1,
                msg: format!("bad {name} value `{s}`"),
            })
        };
        let parse_bit = |s: &str, name: &str| -> Result<bool> {
            match s {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(Error::Parse {
                    path: path.into(),
                    line: i + 1,
                    msg: format!("bad {name} value `{s}` (want 0 or 1)"),
                }),
            }
        };
        records.push(ScoreRecord {
            id: fields[0].to_string(),
            label: parse_bit(fields[1], "label")?,
            p_a: parse_opt(fields[2], "p_a")?,
            p_v: parse_opt(fields[3], "p_v")?,
            p_av: parse_opt(fields[4], "p_av")?,
            decision: parse_bit(fields[5], "decision")?,
        });
    }
    Ok(records)
}
