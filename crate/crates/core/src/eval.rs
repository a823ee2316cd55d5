//! Pixel-wise precision–recall evaluation and run aggregation.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::changedet::ChangeMap;
use crate::error::{Error, Result};
use crate::scene::{LABEL_AFFECTED, LABEL_CLOUD};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

fn check(scores: &[f64], labels: &[bool]) -> Result<usize> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Input(format!("non-finite score {s}")));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateLabels {
            positives,
            negatives,
        });
    }
    Ok(positives)
}

/// One point per distinct score, from the highest threshold down.
pub fn precision_recall_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<PrPoint>> {
    let positives = check(scores, labels)? as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let threshold = scores[order[k]];
        while k < order.len() && scores[order[k]] == threshold {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(PrPoint {
            threshold,
            recall: tp as f64 / positives,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    Ok(points)
}

/// Average precision `Σ (R_n − R_{n−1}) P_n` over distinct-score thresholds.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let curve = precision_recall_curve(scores, labels)?;
    let mut prev = 0.0;
    let mut ap = 0.0;
    for p in curve {
        ap += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    Ok(ap)
}

pub fn write_curve_csv<W: Write>(mut w: W, curve: &[PrPoint]) -> std::io::Result<()> {
    writeln!(w, "threshold,recall,precision")?;
    for p in curve {
        writeln!(w, "{},{},{}", p.threshold, p.recall, p.precision)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSem {
    pub mean: f64,
    pub sem: f64,
}

/// Mean and standard error (sample standard deviation / √n).
pub fn aggregate_runs(values: &[f64]) -> Result<MeanSem> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Input(format!(
            "need at least 2 runs for a standard error, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    Ok(MeanSem {
        mean,
        sem: (var / nf).sqrt(),
    })
}

/// Per-run values of one class or event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sem: Option<f64>,
    /// Why no value could be computed, e.g. a label set with no positives.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Summary {
    /// Summarize per-run outcomes. The first failure wins and empties the runs.
    pub fn from_runs(runs: Vec<Result<f64>>) -> Self {
        let mut values = Vec::with_capacity(runs.len());
        for r in runs {
            match r {
                Ok(v) => values.push(v),
                Err(e) => {
                    return Summary {
                        runs: Vec::new(),
                        mean: None,
                        sem: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        }
        match values.len() {
            0 => Summary {
                runs: values,
                mean: None,
                sem: None,
                error: Some("no runs".into()),
            },
            1 => Summary {
                mean: Some(values[0]),
                runs: values,
                sem: None,
                error: None,
            },
            _ => {
                let agg = aggregate_runs(&values).expect("two or more runs");
                Summary {
                    runs: values,
                    mean: Some(agg.mean),
                    sem: Some(agg.sem),
                    error: None,
                }
            }
        }
    }
}

/// Scored pixels pooled across events.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PixelPool {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl PixelPool {
    /// Add every valid, non-cloud pixel of `map`; label 1 is positive.
    pub fn add_map(&mut self, map: &ChangeMap, mask: &[u8]) -> Result<()> {
        if mask.len() != map.scores.len() {
            return Err(Error::LengthMismatch {
                expected: map.scores.len(),
                actual: mask.len(),
            });
        }
        for ((&s, &ok), &label) in map.scores.iter().zip(&map.valid).zip(mask) {
            if ok && label != LABEL_CLOUD {
                self.scores.push(s);
                self.labels.push(label == LABEL_AFFECTED);
            }
        }
        Ok(())
    }

    pub fn auprc(&self) -> Result<f64> {
        auprc(&self.scores, &self.labels)
    }
}
