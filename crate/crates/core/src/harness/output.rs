//! CSV tables and the JSON run manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::config::ExperimentConfig;
use super::metrics::{accumulated_error_distribution, thresholds, ErrorMetrics};
use super::runners::{
    AccuracyReport, Cell, ClosedLoopReport, CompareReport, CrossReport, GapReport, MethodResult, SweepReport,
    CLOSED_LOOP_CSV_HEADER,
};
use crate::error::Result;
use crate::mcl::ESTIMATE_CSV_HEADER;
use crate::rng;

pub const FRAME_CSV_HEADER: &str = "method,frame,y_est,theta_est,std_y,std_theta,loglik,flags,y_true,theta_true";

const METRIC_COLUMNS: &str = "lat_mae,lat_sd,lat_p95,head_mae,head_sd,head_p95,n,mean_std_y,mean_std_theta,low_conf_rate,failures";

/// Files written into one output directory.
#[derive(Debug)]
pub struct RunOutput {
    dir: PathBuf,
    files: Vec<String>,
}

impl RunOutput {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        std::fs::write(self.dir.join(name), contents)?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    /// `manifest.json`: command, crate version, seeds, configuration echo,
    /// written files and a summary.
    pub fn write_manifest(&mut self, command: &str, cfg: &ExperimentConfig, summary: Value) -> Result<()> {
        let manifest = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": cfg.seed,
            "derived_seeds": derived_seeds(cfg.seed),
            "config": cfg,
            "outputs": self.files,
            "summary": summary,
        });
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| crate::Error::Format(e.to_string()))?;
        self.write("manifest.json", text.as_bytes())
    }
}

/// Top-level seeds derived from the master seed, for the manifest.
pub fn derived_seeds(seed: u64) -> BTreeMap<&'static str, u64> {
    [
        "template-scene",
        "eval-scene",
        "template-trajectory",
        "eval-trajectory",
        "template-frames",
        "eval-frames",
        "template-preprocess",
        "odometry",
        "pf-init",
        "compare-trajectory",
        "compare-frames",
    ]
    .into_iter()
    .map(|l| (l, rng::derive(seed, l)))
    .collect()
}

/// Something a runner produced that can be written and summarized.
pub trait Report {
    fn write(&self, out: &mut RunOutput) -> Result<()>;
    fn summary(&self) -> Result<Value>;
}

fn metric_cells(r: &MethodResult) -> Result<String> {
    let l = r.lateral()?;
    let h = r.heading()?;
    let (sy, st) = r.mean_std();
    Ok(format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        l.mae,
        l.sd,
        l.p95,
        h.mae,
        h.sd,
        h.p95,
        l.n,
        sy,
        st,
        r.low_confidence_rate(),
        r.failures
    ))
}

fn frame_rows(s: &mut String, prefix: &str, r: &MethodResult) {
    for rec in &r.records {
        let _ = writeln!(s, "{prefix}{},{}", r.method, rec.csv_row());
    }
}

fn metrics_json(m: &ErrorMetrics) -> Value {
    json!({ "mae": m.mae, "sd": m.sd, "p95": m.p95, "n": m.n })
}

fn summary_json(r: &MethodResult) -> Result<Value> {
    Ok(serde_json::to_value(r.summary()?).expect("summary serializes"))
}

impl Report for AccuracyReport {
    fn write(&self, out: &mut RunOutput) -> Result<()> {
        let mut frames = format!("cutoff,{FRAME_CSV_HEADER}\n");
        let mut summary = format!("cutoff,method,{METRIC_COLUMNS}\n");
        let sets = std::iter::once((true, &self.with_cutoff)).chain(self.without_cutoff.iter().map(|r| (false, r)));
        for (on, set) in sets {
            for r in set {
                frame_rows(&mut frames, &format!("{on},"), r);
                let _ = writeln!(summary, "{on},{},{}", r.method, metric_cells(r)?);
            }
        }
        out.write("accuracy_frames.csv", frames.as_bytes())?;
        out.write("accuracy_summary.csv", summary.as_bytes())
    }

    fn summary(&self) -> Result<Value> {
        let with: Vec<Value> = self.with_cutoff.iter().map(summary_json).collect::<Result<_>>()?;
        let without: Option<Vec<Value>> = self
            .without_cutoff
            .as_ref()
            .map(|s| s.iter().map(summary_json).collect::<Result<_>>())
            .transpose()?;
        Ok(json!({ "with_cutoff": with, "without_cutoff": without }))
    }
}

fn param_header(cell: &Cell, extra: bool) -> String {
    let mut h: Vec<&str> = cell.params.iter().map(|(k, _)| *k).collect();
    if extra {
        h.extend(cell.extra.iter().map(|(k, _)| *k));
    }
    h.join(",")
}

fn param_values(cell: &Cell, extra: bool) -> String {
    let mut v: Vec<String> = cell.params.iter().map(|(_, x)| x.to_string()).collect();
    if extra {
        v.extend(cell.extra.iter().map(|(_, x)| x.to_string()));
    }
    v.join(",")
}

impl SweepReport {
    fn frames_csv(&self) -> String {
        let Some(first) = self.cells.first() else {
            return format!("{FRAME_CSV_HEADER}\n");
        };
        let mut s = format!("{},{FRAME_CSV_HEADER}\n", param_header(first, false));
        for c in &self.cells {
            frame_rows(&mut s, &format!("{},", param_values(c, false)), &c.result);
        }
        s
    }

    fn summary_csv(&self) -> Result<String> {
        let Some(first) = self.cells.first() else {
            return Ok(format!("method,{METRIC_COLUMNS}\n"));
        };
        let mut s = format!("{},method,{METRIC_COLUMNS}\n", param_header(first, true));
        for c in &self.cells {
            let _ = writeln!(s, "{},{},{}", param_values(c, true), c.result.method, metric_cells(&c.result)?);
        }
        Ok(s)
    }

    fn cells_json(&self) -> Result<Value> {
        let cells: Vec<Value> = self
            .cells
            .iter()
            .map(|c| {
                let mut v = summary_json(&c.result)?;
                for (k, x) in c.params.iter().chain(&c.extra) {
                    v[*k] = json!(x);
                }
                Ok(v)
            })
            .collect::<Result<_>>()?;
        Ok(Value::Array(cells))
    }
}

impl Report for SweepReport {
    fn write(&self, out: &mut RunOutput) -> Result<()> {
        out.write(&format!("{}_frames.csv", self.kind), self.frames_csv().as_bytes())?;
        out.write(&format!("{}_summary.csv", self.kind), self.summary_csv()?.as_bytes())
    }

    fn summary(&self) -> Result<Value> {
        Ok(json!({ "kind": self.kind, "cells": self.cells_json()? }))
    }
}

impl Report for GapReport {
    fn write(&self, out: &mut RunOutput) -> Result<()> {
        self.sweep.write(out)?;
        let s = format!(
            "statistic,value\nspearman_std_y_vs_lat_mae,{}\nspearman_std_theta_vs_head_mae,{}\nframe_spearman_std_y_vs_abs_lat,{}\nframe_spearman_std_theta_vs_abs_head,{}\n",
            self.spearman_y, self.spearman_theta, self.frame_spearman_y, self.frame_spearman_theta
        );
        out.write("gaps_correlation.csv", s.as_bytes())
    }

    fn summary(&self) -> Result<Value> {
        Ok(json!({
            "cells": self.sweep.cells_json()?,
            "spearman_std_y_vs_lat_mae": self.spearman_y,
            "spearman_std_theta_vs_head_mae": self.spearman_theta,
            "frame_spearman_std_y_vs_abs_lat": self.frame_spearman_y,
            "frame_spearman_std_theta_vs_abs_head": self.frame_spearman_theta,
        }))
    }
}

fn matrix_csv(m: &[Vec<f64>]) -> String {
    let k = m.len();
    let mut s = String::from("template_row");
    for e in 0..k {
        let _ = write!(s, ",eval_row_{e}");
    }
    s.push('\n');
    for (t, row) in m.iter().enumerate() {
        let _ = write!(s, "{t}");
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

impl Report for CrossReport {
    fn write(&self, out: &mut RunOutput) -> Result<()> {
        self.sweep.write(out)?;
        out.write("cross_lateral_mae.csv", matrix_csv(&self.lateral_matrix()?).as_bytes())?;
        out.write("cross_heading_mae.csv", matrix_csv(&self.heading_matrix()?).as_bytes())
    }

    fn summary(&self) -> Result<Value> {
        Ok(json!({
            "k": self.k,
            "lateral_mae": self.lateral_matrix()?,
            "heading_mae": self.heading_matrix()?,
        }))
    }
}

fn aed_csv(results: &[MethodResult], errors: impl Fn(&MethodResult) -> Vec<f64>) -> Result<String> {
    let all: Vec<Vec<f64>> = results.iter().map(&errors).collect();
    let max = all.iter().flatten().fold(0.0f64, |m, e| m.max(e.abs()));
    let t = thresholds(max, 101);
    let mut s = String::from("threshold");
    for r in results {
        let _ = write!(s, ",{}", r.method);
    }
    s.push('\n');
    let curves: Vec<Vec<f64>> = all
        .iter()
        .map(|e| if e.is_empty() { Ok(vec![f64::NAN; t.len()]) } else { accumulated_error_distribution(e, &t) })
        .collect::<Result<_>>()?;
    for (i, th) in t.iter().enumerate() {
        let _ = write!(s, "{th}");
        for c in &curves {
            let _ = write!(s, ",{}", c[i]);
        }
        s.push('\n');
    }
    Ok(s)
}

impl Report for CompareReport {
    fn write(&self, out: &mut RunOutput) -> Result<()> {
        let mut frames = format!("{FRAME_CSV_HEADER}\n");
        for r in &self.results {
            frame_rows(&mut frames, "", r);
        }
        out.write("compare_frames.csv", frames.as_bytes())?;

        let mut s = format!("method,regime,{METRIC_COLUMNS},lat_degradation,head_degradation\n");
        for (r, row) in self.results.iter().zip(self.rows()?) {
            let _ = writeln!(s, "{},all,{},,", r.method, metric_cells(r)?);
            let large = self.large(r);
            if !large.records.is_empty() {
                let _ = writeln!(
                    s,
                    "{},large_heading,{},{},{}",
                    r.method,
                    metric_cells(&large)?,
                    row.lateral_degradation,
                    row.heading_degradation
                );
            }
        }
        out.write("compare_summary.csv", s.as_bytes())?;

        let large: Vec<MethodResult> = self.results.iter().map(|r| self.large(r)).collect();
        out.write("compare_aed_lateral.csv", aed_csv(&self.results, MethodResult::lateral_errors)?.as_bytes())?;
        out.write("compare_aed_heading.csv", aed_csv(&self.results, MethodResult::heading_errors)?.as_bytes())?;
        out.write("compare_aed_lateral_large.csv", aed_csv(&large, MethodResult::lateral_errors)?.as_bytes())?;
        out.write("compare_aed_heading_large.csv", aed_csv(&large, MethodResult::heading_errors)?.as_bytes())
    }

    fn summary(&self) -> Result<Value> {
        Ok(json!({ "large_heading": self.large_heading, "methods": serde_json::to_value(self.rows()?).expect("rows serialize") }))
    }
}

impl Report for ClosedLoopReport {
    fn write(&self, out: &mut RunOutput) -> Result<()> {
        let mut s = format!("{CLOSED_LOOP_CSV_HEADER}\n");
        for p in &self.steps {
            let _ = writeln!(s, "{},{},{},{},{},{},{},{}", p.step, p.x, p.y, p.yaw, p.y_est, p.theta_est, p.omega, p.flags);
        }
        out.write("closed_loop_trajectory.csv", s.as_bytes())?;
        let mut m = String::from("quantity,mae,sd,p95,n\n");
        for (name, v) in [
            ("offset_tracking", &self.offset),
            ("heading_tracking", &self.heading),
            ("localization_lateral", &self.localization_lateral),
            ("localization_heading", &self.localization_heading),
        ] {
            let _ = writeln!(m, "{name},{},{},{},{}", v.mae, v.sd, v.p95, v.n);
        }
        out.write("closed_loop_summary.csv", m.as_bytes())
    }

    fn summary(&self) -> Result<Value> {
        Ok(json!({
            "offset_tracking": metrics_json(&self.offset),
            "heading_tracking": metrics_json(&self.heading),
            "localization_lateral": metrics_json(&self.localization_lateral),
            "localization_heading": metrics_json(&self.localization_heading),
        }))
    }
}

// Keep the per-frame header in step with the estimate log.
const _: () = {
    let a = FRAME_CSV_HEADER.as_bytes();
    let b = ESTIMATE_CSV_HEADER.as_bytes();
    assert!(a.len() == b.len() + 7);
    let mut i = 0;
    while i < b.len() {
        assert!(a[i + 7] == b[i]);
        i += 1;
    }
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Method;
    use crate::mcl::{flags, EstimateRecord, PoseEstimate};
    use crate::measurement::PoseProposal;
    use nalgebra::Matrix2;

    fn result() -> MethodResult {
        let rec = |i: usize, y: f64| EstimateRecord {
            frame: i,
            estimate: PoseEstimate::new(PoseProposal::new(y, 0.0), Matrix2::identity() * 0.01, -5.0, flags::LOW_CONFIDENCE),
            truth: Some(PoseProposal::new(0.0, 0.0)),
        };
        MethodResult {
            method: Method::Baseline1,
            records: vec![rec(0, 0.1), rec(1, -0.3)],
            failures: 0,
        }
    }

    #[test]
    fn writes_tables_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = RunOutput::new(dir.path()).unwrap();
        let rep = AccuracyReport {
            with_cutoff: vec![result()],
            without_cutoff: None,
        };
        rep.write(&mut out).unwrap();
        let cfg = ExperimentConfig::preset("vineyard").unwrap();
        out.write_manifest("eval-accuracy", &cfg, rep.summary().unwrap()).unwrap();
        let frames = std::fs::read_to_string(dir.path().join("accuracy_frames.csv")).unwrap();
        assert_eq!(frames.lines().count(), 3);
        assert!(frames.starts_with("cutoff,method,frame,"));
        let summary = std::fs::read_to_string(dir.path().join("accuracy_summary.csv")).unwrap();
        let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row[..3], ["true", "baseline1", "0.2"]);
        let m: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["command"], "eval-accuracy");
        assert_eq!(m["seed"], 1);
        assert_eq!(m["outputs"].as_array().unwrap().len(), 2);
        assert_eq!(m["config"]["scene"]["row_spacing"], 3.0);
        assert_eq!(m["summary"]["with_cutoff"][0]["lateral"]["mae"], 0.2);
    }

    #[test]
    fn aed_ends_at_one() {
        let s = aed_csv(&[result()], MethodResult::lateral_errors).unwrap();
        let last = s.lines().last().unwrap();
        assert!(last.ends_with(",1"), "{last}");
        assert_eq!(s.lines().count(), 102);
    }
}
