use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::runner::{RunResult, Stat};
use crate::error::{Error, Result};

pub const RUN_FILE: &str = "run.json";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn stat_mean(s: Option<Stat>) -> String {
    opt(s.map(|s| s.mean))
}

fn stat_std(s: Option<Stat>) -> String {
    opt(s.map(|s| s.std))
}

pub fn header(config_hash: &str, master_seed: u64) -> String {
    format!("# config_hash={config_hash} master_seed={master_seed}\n")
}

fn head(run: &RunResult, columns: &str) -> String {
    let mut s = header(&run.config_hash, run.master_seed);
    s.push_str(columns);
    s.push('\n');
    s
}

/// One row per (trial, session), then mean and std rows per session.
pub fn sessions_csv(run: &RunResult) -> String {
    let mut s = head(run, "trial,session,a_b,a_n,a_w,base_correct,base_total,new_correct,new_total");
    for t in &run.trials {
        for e in &t.report.sessions {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                t.trial,
                e.session,
                opt(e.a_b),
                opt(e.a_n),
                e.a_w,
                e.base_correct,
                e.base_total,
                e.new_correct,
                e.new_total
            );
        }
    }
    for (tag, pick) in [("mean", true), ("std", false)] {
        for a in &run.aggregate.sessions {
            let f = |x: Option<Stat>| if pick { stat_mean(x) } else { stat_std(x) };
            let _ = writeln!(s, "{tag},{},{},{},{},,,,", a.session, f(a.a_b), f(a.a_n), f(Some(a.a_w)));
        }
    }
    s
}

/// One row per trial with the scalar metrics, then mean and std rows.
pub fn metrics_csv(run: &RunResult) -> String {
    let mut s = head(
        run,
        "trial,pd,transferability,intra_spread,inter_distance,a_b_before_cr,cr_drop,final_a_b,final_a_n,final_a_w",
    );
    for t in &run.trials {
        let last = t.report.sessions.last().expect("sessions");
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            t.trial,
            opt(t.report.pd),
            opt(t.report.transferability),
            opt(t.report.spread.and_then(|x| x.intra)),
            opt(t.report.spread.and_then(|x| x.inter)),
            t.a_b_before_cr,
            t.cr_drop,
            opt(last.a_b),
            opt(last.a_n),
            last.a_w
        );
    }
    let a = &run.aggregate;
    let fin = a.final_session();
    for (tag, f) in [("mean", stat_mean as fn(Option<Stat>) -> String), ("std", stat_std)] {
        let _ = writeln!(
            s,
            "{tag},{},{},{},{},{},{},{},{},{}",
            f(a.pd),
            f(a.transferability),
            f(a.intra_spread),
            f(a.inter_distance),
            f(Some(a.a_b_before_cr)),
            f(Some(a.cr_drop)),
            f(fin.a_b),
            f(fin.a_n),
            f(Some(fin.a_w))
        );
    }
    s
}

pub fn transferability_csv(run: &RunResult) -> String {
    let mut s = head(run, "trial,session,transferability");
    for t in &run.trials {
        for (k, v) in t.transferability_per_session.iter().enumerate() {
            let _ = writeln!(s, "{},{k},{}", t.trial, opt(*v));
        }
    }
    s
}

pub fn train_log_csv(run: &RunResult) -> String {
    let mut s = head(run, "trial,epoch,lr,batches,mean_total,mean_ce");
    for t in &run.trials {
        for e in &t.train_log {
            let _ = writeln!(s, "{},{},{},{},{},{}", t.trial, e.epoch, e.lr, e.batches, e.mean_total, e.mean_ce);
        }
    }
    s
}

/// `None` when the run did not produce histograms.
pub fn histogram_csv(run: &RunResult) -> Option<String> {
    if run.trials.iter().any(|t| t.histogram.is_none()) {
        return None;
    }
    let mut s = head(run, "trial,class_id,bin_lo,bin_hi,count");
    for t in &run.trials {
        for h in t.histogram.as_ref().expect("checked") {
            let bins = h.counts.len() as f64;
            for (b, c) in h.counts.iter().enumerate() {
                let lo = std::f64::consts::TAU * b as f64 / bins;
                let hi = std::f64::consts::TAU * (b + 1) as f64 / bins;
                let _ = writeln!(s, "{},{},{lo},{hi},{c}", t.trial, h.class_id);
            }
        }
    }
    Some(s)
}

pub fn features_csv(run: &RunResult) -> Option<String> {
    if run.trials.iter().any(|t| t.features.is_none()) {
        return None;
    }
    let d = run.config.encoder.embed_dim;
    let cols: Vec<String> = (0..d).map(|k| format!("f{k}")).collect();
    let mut s = head(run, &format!("trial,sample_id,label,{}", cols.join(",")));
    for t in &run.trials {
        let f = t.features.as_ref().expect("checked");
        for ((id, label), row) in f.sample_ids.iter().zip(&f.labels).zip(f.features.row_iter()) {
            let vals: Vec<String> = row.iter().map(f64::to_string).collect();
            let _ = writeln!(s, "{},{id},{label},{}", t.trial, vals.join(","));
        }
    }
    Some(s)
}

pub fn ib_csv(run: &RunResult) -> Option<String> {
    if run.trials.iter().any(|t| t.report.ib.is_none()) {
        return None;
    }
    let mut s = head(run, "trial,group,i_xz,i_yz,closed_form_bound");
    for t in &run.trials {
        for p in t.report.ib.as_ref().expect("checked") {
            let _ = writeln!(s, "{},{},{},{},{}", t.trial, p.group, p.i_xz, p.i_yz, opt(p.closed_form_bound));
        }
    }
    Some(s)
}

/// Artifact families that can be re-exported from a finished run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportKind {
    Metrics,
    Histograms,
    Features,
    Ib,
}

impl std::str::FromStr for ExportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "metrics" => Ok(ExportKind::Metrics),
            "histograms" => Ok(ExportKind::Histograms),
            "features" => Ok(ExportKind::Features),
            "ib" => Ok(ExportKind::Ib),
            other => Err(Error::invalid(format!(
                "unknown export {other:?}; expected metrics, histograms, features or ib"
            ))),
        }
    }
}

/// File name and contents for one export family.
pub fn render(run: &RunResult, kind: ExportKind) -> Result<Vec<(&'static str, String)>> {
    match kind {
        ExportKind::Metrics => Ok(vec![
            ("sessions.csv", sessions_csv(run)),
            ("metrics.csv", metrics_csv(run)),
            ("transferability.csv", transferability_csv(run)),
        ]),
        ExportKind::Histograms => {
            if run.config.encoder.embed_dim != 2 {
                return Err(Error::invalid(format!(
                    "angular histograms need a 2-dimensional embedding; this run used d = {}",
                    run.config.encoder.embed_dim
                )));
            }
            histogram_csv(run)
                .map(|s| vec![("histogram.csv", s)])
                .ok_or_else(|| Error::invalid("run has no histograms (metrics.histogram was off)"))
        }
        ExportKind::Features => features_csv(run)
            .map(|s| vec![("features.csv", s)])
            .ok_or_else(|| Error::invalid("run has no feature dump (metrics.features was off)")),
        ExportKind::Ib => ib_csv(run)
            .map(|s| vec![("ib.csv", s)])
            .ok_or_else(|| Error::invalid("run has no information-plane points (metrics.ib was off)")),
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    std::fs::write(&p, contents)?;
    Ok(p)
}

/// Writes the full run: `run.json`, `summary.json`, CSV tables and encoder
/// checkpoints. Returns the written paths in a fixed order.
pub fn write_run(run: &RunResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir.join("checkpoints"))?;
    let mut out = vec![
        write(dir, RUN_FILE, &serde_json::to_string(run)?)?,
        write(dir, "summary.json", &summary_json(run)?)?,
        write(dir, "config.json", &run.config.to_json_pretty()?)?,
        write(dir, "train_log.csv", &train_log_csv(run))?,
    ];
    for (name, body) in render(run, ExportKind::Metrics)? {
        out.push(write(dir, name, &body)?);
    }
    for kind in [ExportKind::Histograms, ExportKind::Features, ExportKind::Ib] {
        if let Ok(files) = render(run, kind) {
            for (name, body) in files {
                out.push(write(dir, name, &body)?);
            }
        }
    }
    let tags = BTreeMap::from([
        ("config_hash".to_string(), run.config_hash.clone()),
        ("master_seed".to_string(), run.master_seed.to_string()),
    ]);
    for t in &run.trials {
        if let Some(enc) = &t.encoder {
            let mut tags = tags.clone();
            tags.insert("trial".into(), t.trial.to_string());
            out.push(write(
                &dir.join("checkpoints"),
                &format!("encoder_trial{}.json", t.trial),
                &enc.to_json_tagged(&tags)?,
            )?);
        }
    }
    Ok(out)
}

/// Compact JSON summary: hash, seed, aggregate and per-trial reports.
pub fn summary_json(run: &RunResult) -> Result<String> {
    let trials: Vec<_> = run
        .trials
        .iter()
        .map(|t| {
            serde_json::json!({
                "trial": t.trial,
                "seed": t.seed,
                "report": t.report,
                "a_b_before_cr": t.a_b_before_cr,
                "cr_drop": t.cr_drop,
            })
        })
        .collect();
    Ok(serde_json::to_string_pretty(&serde_json::json!({
        "config_hash": run.config_hash,
        "master_seed": run.master_seed,
        "name": run.config.name,
        "aggregate": run.aggregate,
        "trials": trials,
    }))?)
}

pub fn load_run(dir: &Path) -> Result<RunResult> {
    let p = dir.join(RUN_FILE);
    if !p.exists() {
        return Err(Error::invalid(format!(
            "{} not found; export needs a completed run directory",
            p.display()
        )));
    }
    Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?)
}

/// Re-renders one artifact family from a finished run into `out`.
pub fn export(run_dir: &Path, kind: ExportKind, out: &Path) -> Result<Vec<PathBuf>> {
    let run = load_run(run_dir)?;
    std::fs::create_dir_all(out)?;
    render(&run, kind)?
        .into_iter()
        .map(|(name, body)| write(out, name, &body))
        .collect()
}
