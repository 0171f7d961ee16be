//! Per-step uncertainty traces: recording, CSV/JSON round-tripping, an
//! ASCII heatmap, and summary statistics.
//!
//! The CSV layout is one row per decoding step:
//!
//! ```text
//! step,token_id,trigger_layer,applied_alpha,u_1,...,u_k
//! ```
//!
//! where `k` is the number of probed layers (model layers minus one),
//! floats are written with six decimals, and `trigger_layer` is empty on
//! steps that did not trigger. The JSON form is an array of row objects
//! with the same fields.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::decode::StepDecision;
use crate::error::{Error, Result};

/// One recorded decoding step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// 1-based step index.
    pub step: usize,
    pub token_id: u32,
    pub trigger_layer: Option<usize>,
    pub applied_alpha: f32,
    /// Normalized entropy after layers 1..=k, in layer order.
    pub uncertainties: Vec<f32>,
}

/// Uncertainty history of one generation.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyTrace {
    num_probe_layers: usize,
    rows: Vec<TraceRow>,
}

/// Aggregate statistics over a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStats {
    pub steps: usize,
    pub per_layer_mean: Vec<f64>,
    pub per_layer_max: Vec<f32>,
    pub triggered_steps: usize,
    pub trigger_rate: f64,
    /// Mean over triggered steps; absent when nothing triggered.
    pub mean_trigger_layer: Option<f64>,
    /// Mean applied alpha over triggered steps; absent when nothing
    /// triggered.
    pub mean_applied_alpha: Option<f64>,
}

const HEATMAP_RAMP: &[u8] = b" .:-=+*#%@";

impl UncertaintyTrace {
    pub fn new(num_probe_layers: usize) -> Self {
        UncertaintyTrace {
            num_probe_layers,
            rows: Vec::new(),
        }
    }

    pub fn num_probe_layers(&self) -> usize {
        self.num_probe_layers
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Append one step. Every probe slot must be filled, so traces are
    /// recorded from exhaustively probed runs only.
    pub fn record_step(&mut self, decision: &StepDecision) -> Result<()> {
        if decision.per_layer_uncertainty.len() != self.num_probe_layers {
            return Err(Error::TraceArity {
                expected: self.num_probe_layers,
                got: decision.per_layer_uncertainty.len(),
            });
        }
        let mut uncertainties = Vec::with_capacity(self.num_probe_layers);
        for (i, u) in decision.per_layer_uncertainty.iter().enumerate() {
            match u {
                Some(v) => uncertainties.push(*v),
                None => return Err(Error::TraceMissingProbe { layer: i + 1 }),
            }
        }
        self.rows.push(TraceRow {
            step: self.rows.len() + 1,
            token_id: decision.token_id,
            trigger_layer: decision.trigger_layer,
            applied_alpha: decision.applied_alpha,
            uncertainties,
        });
        Ok(())
    }

    fn csv_header(&self) -> String {
        let mut header = String::from("step,token_id,trigger_layer,applied_alpha");
        for i in 1..=self.num_probe_layers {
            write!(header, ",u_{i}").expect("string write");
        }
        header
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for row in &self.rows {
            let trigger = row
                .trigger_layer
                .map_or(String::new(), |l| l.to_string());
            write!(
                out,
                "{},{},{},{:.6}",
                row.step, row.token_id, trigger, row.applied_alpha
            )
            .expect("string write");
            for &u in &row.uncertainties {
                write!(out, ",{u:.6}").expect("string write");
            }
            out.push('\n');
        }
        out
    }

    pub fn export_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.rows).expect("trace rows serialize")
    }

    pub fn export_json(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json_string()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Load a trace from disk, sniffing JSON (leading '[') versus CSV.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if text.trim_start().starts_with('[') {
            Self::parse_json(&text)
        } else {
            Self::parse_csv(&text)
        }
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::TraceParse {
            line: 1,
            detail: "missing header".to_string(),
        })?;
        let cols: Vec<&str> = header.split(',').collect();
        let fixed = ["step", "token_id", "trigger_layer", "applied_alpha"];
        if cols.len() < fixed.len() + 1 || cols[..fixed.len()] != fixed {
            return Err(Error::TraceParse {
                line: 1,
                detail: format!("unexpected header '{header}'"),
            });
        }
        let k = cols.len() - fixed.len();
        for (i, col) in cols[fixed.len()..].iter().enumerate() {
            let expected = format!("u_{}", i + 1);
            if *col != expected {
                return Err(Error::TraceParse {
                    line: 1,
                    detail: format!("expected column '{expected}', found '{col}'"),
                });
            }
        }

        let mut trace = UncertaintyTrace::new(k);
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != fixed.len() + k {
                return Err(Error::TraceParse {
                    line: line_no,
                    detail: format!(
                        "expected {} fields, found {}",
                        fixed.len() + k,
                        fields.len()
                    ),
                });
            }
            let parse_err = |what: &str, raw: &str| Error::TraceParse {
                line: line_no,
                detail: format!("bad {what} '{raw}'"),
            };
            let step: usize = fields[0]
                .parse()
                .map_err(|_| parse_err("step", fields[0]))?;
            let token_id: u32 = fields[1]
                .parse()
                .map_err(|_| parse_err("token_id", fields[1]))?;
            let trigger_layer = if fields[2].is_empty() {
                None
            } else {
                let l: usize = fields[2]
                    .parse()
                    .map_err(|_| parse_err("trigger_layer", fields[2]))?;
                if l < 1 || l > k {
                    return Err(Error::TraceParse {
                        line: line_no,
                        detail: format!("trigger_layer {l} outside [1, {k}]"),
                    });
                }
                Some(l)
            };
            let applied_alpha: f32 = fields[3]
                .parse()
                .map_err(|_| parse_err("applied_alpha", fields[3]))?;
            let mut uncertainties = Vec::with_capacity(k);
            for raw in &fields[4..] {
                uncertainties.push(raw.parse().map_err(|_| parse_err("uncertainty", raw))?);
            }
            trace.rows.push(TraceRow {
                step,
                token_id,
                trigger_layer,
                applied_alpha,
                uncertainties,
            });
        }
        Ok(trace)
    }

    pub fn parse_json(text: &str) -> Result<Self> {
        let rows: Vec<TraceRow> = serde_json::from_str(text).map_err(|e| Error::TraceParse {
            line: e.line(),
            detail: e.to_string(),
        })?;
        let k = rows.first().map_or(0, |r| r.uncertainties.len());
        for (i, row) in rows.iter().enumerate() {
            if row.uncertainties.len() != k {
                return Err(Error::TraceParse {
                    line: 0,
                    detail: format!(
                        "row {} has {} uncertainties, expected {k}",
                        i + 1,
                        row.uncertainties.len()
                    ),
                });
            }
            if let Some(l) = row.trigger_layer {
                if l < 1 || l > k {
                    return Err(Error::TraceParse {
                        line: 0,
                        detail: format!("row {} trigger_layer {l} outside [1, {k}]", i + 1),
                    });
                }
            }
        }
        Ok(UncertaintyTrace {
            num_probe_layers: k,
            rows,
        })
    }

    /// Layers-by-steps character grid. Rows are layers 1..=k bottom-up in
    /// print order top row first, columns are steps; darker glyphs mean
    /// higher uncertainty and '!' marks the trigger cell.
    pub fn render_ascii_heatmap(&self) -> String {
        if self.rows.is_empty() {
            return "empty trace (no steps recorded)".to_string();
        }
        let mut out = String::new();
        for layer in (1..=self.num_probe_layers).rev() {
            write!(out, "layer {layer:>3} |").expect("string write");
            for row in &self.rows {
                if row.trigger_layer == Some(layer) {
                    out.push('!');
                } else {
                    let u = row.uncertainties[layer - 1].clamp(0.0, 1.0);
                    let bin = ((u * 10.0) as usize).min(HEATMAP_RAMP.len() - 1);
                    out.push(HEATMAP_RAMP[bin] as char);
                }
            }
            out.push('\n');
        }
        write!(
            out,
            "steps 1..{} left to right; ramp '{}' low to high, '!' = trigger",
            self.rows.len(),
            std::str::from_utf8(HEATMAP_RAMP).expect("ascii ramp")
        )
        .expect("string write");
        out
    }

    pub fn stats(&self) -> Option<TraceStats> {
        if self.rows.is_empty() {
            return None;
        }
        let steps = self.rows.len();
        let k = self.num_probe_layers;
        let mut per_layer_mean = vec![0.0f64; k];
        let mut per_layer_max = vec![f32::NEG_INFINITY; k];
        for row in &self.rows {
            for (i, &u) in row.uncertainties.iter().enumerate() {
                per_layer_mean[i] += u as f64;
                per_layer_max[i] = per_layer_max[i].max(u);
            }
        }
        for m in &mut per_layer_mean {
            *m /= steps as f64;
        }
        let triggered: Vec<&TraceRow> = self
            .rows
            .iter()
            .filter(|r| r.trigger_layer.is_some())
            .collect();
        let triggered_steps = triggered.len();
        let (mean_trigger_layer, mean_applied_alpha) = if triggered.is_empty() {
            (None, None)
        } else {
            let layer_sum: f64 = triggered
                .iter()
                .map(|r| r.trigger_layer.unwrap() as f64)
                .sum();
            let alpha_sum: f64 = triggered.iter().map(|r| r.applied_alpha as f64).sum();
            (
                Some(layer_sum / triggered_steps as f64),
                Some(alpha_sum / triggered_steps as f64),
            )
        };
        Some(TraceStats {
            steps,
            per_layer_mean,
            per_layer_max,
            triggered_steps,
            trigger_rate: triggered_steps as f64 / steps as f64,
            mean_trigger_layer,
            mean_applied_alpha,
        })
    }
}
