//! Per-iteration training metrics and their CSV encoding.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("expected {expected} fields, got {got}")]
    FieldCount { expected: usize, got: usize },
    #[error("unparseable field {field:?}")]
    BadField { field: String },
}

pub const CSV_HEADER: &str = "iteration,env_steps,mean_return,win_rate,measured_kl,target_kl,\
bound_lower,bound_upper,clip_fraction,l0,l1,entropy,value_loss,wall_time_s";

const N_FIELDS: usize = 14;

/// One iteration's worth of training metrics, in the column order of
/// [`CSV_HEADER`].
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub env_steps: usize,
    pub mean_return: f64,
    pub win_rate: f64,
    pub measured_kl: f64,
    pub target_kl: f64,
    pub bound_lower: f64,
    pub bound_upper: f64,
    pub clip_fraction: f64,
    pub l0: f64,
    pub l1: f64,
    pub entropy: f64,
    pub value_loss: f64,
    pub wall_time_s: f64,
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.8e}")
    }
}

fn parse_f64(s: &str) -> Result<f64, MetricsError> {
    if s == "nan" {
        return Ok(f64::NAN);
    }
    s.parse::<f64>().map_err(|_| MetricsError::BadField { field: s.to_string() })
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.env_steps,
            fmt_f64(self.mean_return),
            fmt_f64(self.win_rate),
            fmt_f64(self.measured_kl),
            fmt_f64(self.target_kl),
            fmt_f64(self.bound_lower),
            fmt_f64(self.bound_upper),
            fmt_f64(self.clip_fraction),
            fmt_f64(self.l0),
            fmt_f64(self.l1),
            fmt_f64(self.entropy),
            fmt_f64(self.value_loss),
            fmt_f64(self.wall_time_s),
        )
    }

    pub fn parse_csv_line(line: &str) -> Result<Self, MetricsError> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != N_FIELDS {
            return Err(MetricsError::FieldCount { expected: N_FIELDS, got: fields.len() });
        }
        let bad = |s: &str| MetricsError::BadField { field: s.to_string() };
        Ok(Self {
            iteration: fields[0].parse().map_err(|_| bad(fields[0]))?,
            env_steps: fields[1].parse().map_err(|_| bad(fields[1]))?,
            mean_return: parse_f64(fields[2])?,
            win_rate: parse_f64(fields[3])?,
            measured_kl: parse_f64(fields[4])?,
            target_kl: parse_f64(fields[5])?,
            bound_lower: parse_f64(fields[6])?,
            bound_upper: parse_f64(fields[7])?,
            clip_fraction: parse_f64(fields[8])?,
            l0: parse_f64(fields[9])?,
            l1: parse_f64(fields[10])?,
            entropy: parse_f64(fields[11])?,
            value_loss: parse_f64(fields[12])?,
            wall_time_s: parse_f64(fields[13])?,
        })
    }
}
