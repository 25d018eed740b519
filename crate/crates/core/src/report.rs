//! Run reports, CSV emission and cross-seed aggregation.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCount {
    pub phase: String,
    pub trajectories: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Partial,
    Complete,
    Failed,
}

/// Outcome of one pipeline run on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: String,
    pub seed: u64,
    pub config_hash: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub horizon: usize,
    pub num_users: usize,
    pub phases: Vec<PhaseCount>,
    /// True suboptimality per user, from the exact oracle.
    pub user_subopt: Vec<f64>,
    /// Per step: residual of the recovery solve on its own observations.
    pub recovery_residuals: Vec<f64>,
    /// Per step: max-abs error of the recovered block against the generator.
    pub recovery_errors: Vec<f64>,
    #[serde(default)]
    pub diagnostics: serde_json::Map<String, serde_json::Value>,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub wall_ms: u64,
}

impl RunReport {
    pub fn new(mode: &str, seed: u64, config_hash: String, horizon: usize, num_users: usize) -> Self {
        RunReport {
            mode: mode.to_string(),
            seed,
            config_hash,
            status: RunStatus::Partial,
            failure: None,
            horizon,
            num_users,
            phases: Vec::new(),
            user_subopt: Vec::new(),
            recovery_residuals: Vec::new(),
            recovery_errors: Vec::new(),
            diagnostics: serde_json::Map::new(),
            warnings: Vec::new(),
            wall_ms: 0,
        }
    }

    pub fn add_phase(&mut self, phase: &str, trajectories: u64) {
        self.phases.push(PhaseCount {
            phase: phase.to_string(),
            trajectories,
        });
    }

    pub fn phase_trajectories(&self, phase: &str) -> Option<u64> {
        self.phases.iter().find(|p| p.phase == phase).map(|p| p.trajectories)
    }

    pub fn total_trajectories(&self) -> u64 {
        self.phases.iter().map(|p| p.trajectories).sum()
    }

    pub fn max_user_subopt(&self) -> f64 {
        self.user_subopt.iter().copied().fold(f64::NAN, f64::max)
    }

    pub fn mean_user_subopt(&self) -> f64 {
        if self.user_subopt.is_empty() {
            return f64::NAN;
        }
        self.user_subopt.iter().sum::<f64>() / self.user_subopt.len() as f64
    }

    pub fn set_diag<T: Serialize>(&mut self, key: &str, value: T) {
        if let Ok(v) = serde_json::to_value(value) {
            self.diagnostics.insert(key.to_string(), v);
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn csv_header(horizon: usize) -> String {
        let mut cols = vec![
            "seed".to_string(),
            "phase".into(),
            "trajectories".into(),
            "max_user_subopt".into(),
            "mean_user_subopt".into(),
        ];
        cols.extend((1..=horizon).map(|h| format!("recovery_residual_h{h}")));
        cols.push("wall_ms".into());
        cols.join(",")
    }

    /// One row per phase plus a `total` row.
    pub fn csv_rows(&self) -> Vec<String> {
        let residuals: Vec<String> = (0..self.horizon)
            .map(|h| fmt_float(self.recovery_residuals.get(h).copied().unwrap_or(f64::NAN)))
            .collect();
        let row = |phase: &str, n: u64| {
            let mut cells = vec![
                self.seed.to_string(),
                phase.to_string(),
                n.to_string(),
                fmt_float(self.max_user_subopt()),
                fmt_float(self.mean_user_subopt()),
            ];
            cells.extend(residuals.iter().cloned());
            cells.push(self.wall_ms.to_string());
            cells.join(",")
        };
        let mut rows: Vec<String> = self.phases.iter().map(|p| row(&p.phase, p.trajectories)).collect();
        rows.push(row("total", self.total_trajectories()));
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut s = Self::csv_header(self.horizon);
        s.push('\n');
        for r in self.csv_rows() {
            s.push_str(&r);
            s.push('\n');
        }
        s
    }
}

/// Fixed-width scientific notation with 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.16e}")
    }
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Linear-interpolation quantile of the sorted sample.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub phase: String,
    pub runs: usize,
    pub median_trajectories: f64,
    pub q10_trajectories: f64,
    pub q90_trajectories: f64,
    pub median_max_subopt: f64,
    pub q90_max_subopt: f64,
}

/// Medians and quantiles per phase across runs of the same shape.
pub fn aggregate(reports: &[RunReport]) -> Result<Vec<AggregateRow>> {
    let first = reports.first().ok_or_else(|| Error::Schema("no run reports to aggregate".into()))?;
    let phases: Vec<String> = first.phases.iter().map(|p| p.phase.clone()).collect();
    for r in reports {
        let ph: Vec<&String> = r.phases.iter().map(|p| &p.phase).collect();
        if r.mode != first.mode || r.horizon != first.horizon || ph != phases.iter().collect::<Vec<_>>() {
            return Err(Error::Schema(format!("run for seed {} does not match the first run's shape", r.seed)));
        }
    }
    let subopt: Vec<f64> = reports.iter().map(|r| r.max_user_subopt()).collect();
    let mut out = Vec::new();
    let mut names = phases.clone();
    names.push("total".into());
    for name in names {
        let t: Vec<f64> = reports
            .iter()
            .map(|r| {
                if name == "total" {
                    r.total_trajectories() as f64
                } else {
                    r.phase_trajectories(&name).unwrap_or(0) as f64
                }
            })
            .collect();
        out.push(AggregateRow {
            phase: name,
            runs: reports.len(),
            median_trajectories: median(&t),
            q10_trajectories: quantile(&t, 0.1),
            q90_trajectories: quantile(&t, 0.9),
            median_max_subopt: median(&subopt),
            q90_max_subopt: quantile(&subopt, 0.9),
        });
    }
    Ok(out)
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from(
        "phase,runs,median_trajectories,q10_trajectories,q90_trajectories,median_max_subopt,q90_max_subopt\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.phase,
            r.runs,
            fmt_float(r.median_trajectories),
            fmt_float(r.q10_trajectories),
            fmt_float(r.q90_trajectories),
            fmt_float(r.median_max_subopt),
            fmt_float(r.q90_max_subopt)
        ));
    }
    s
}

/// Two-column `index value` data of median trajectories per phase.
pub fn plot_data(rows: &[AggregateRow]) -> String {
    let mut s = String::from("# phase_index median_trajectories\n");
    for (i, r) in rows.iter().enumerate() {
        s.push_str(&format!("{} {}\n", i, fmt_float(r.median_trajectories)));
    }
    s
}
