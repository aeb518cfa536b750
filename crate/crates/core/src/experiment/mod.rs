//! Config-driven experiment driver: full runs over several seeds, the
//! temperature / contrastive / inter-class ablation grid and artifact export.

mod config;
mod report;
mod runner;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use config::{
    apply_preset, desk_config, preset, DatasetSpec, EncoderSpec, ExperimentConfig, MetricToggles, BASE_TAU,
    DEFAULT_LAMBDA_INTER, DEFAULT_LAMBDA_SSC, LOW_TAU, PRESETS,
};
pub use report::{
    export, features_csv, header, histogram_csv, ib_csv, load_run, metrics_csv, render, sessions_csv, summary_json,
    train_log_csv, transferability_csv, write_run, ExportKind, RUN_FILE,
};
pub use runner::{
    aggregate, run, run_trial, trial_seed, Aggregate, FeatureDump, RunResult, SessionAggregate, Stat, TrialResult,
};

use crate::error::{Error, Result};

/// Values each flag can take in the grid, and what "on" means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub low_tau: Vec<bool>,
    pub ssc: Vec<bool>,
    pub inter: Vec<bool>,
    pub tau_on: f64,
    pub tau_off: f64,
    pub lambda_ssc: f64,
    pub lambda_inter: f64,
}

impl AblationGrid {
    /// Full 2x2x2 grid. "On" weights come from `base` when it sets them.
    pub fn full(base: &ExperimentConfig) -> Self {
        let pick = |v: f64, d: f64| if v > 0.0 { v } else { d };
        AblationGrid {
            low_tau: vec![false, true],
            ssc: vec![false, true],
            inter: vec![false, true],
            tau_on: LOW_TAU,
            tau_off: BASE_TAU,
            lambda_ssc: pick(base.loss.lambda_ssc, DEFAULT_LAMBDA_SSC),
            lambda_inter: pick(base.loss.lambda_inter, DEFAULT_LAMBDA_INTER),
        }
    }

    /// Flag tuples in table order: sorted by (low_tau, inter, ssc).
    pub fn cells(&self) -> Vec<(bool, bool, bool)> {
        let mut cells = Vec::new();
        for &t in &self.low_tau {
            for &s in &self.ssc {
                for &i in &self.inter {
                    cells.push((t, s, i));
                }
            }
        }
        cells.sort_by_key(|&(t, s, i)| (t, i, s));
        cells.dedup();
        cells
    }

    pub fn configure(&self, base: &ExperimentConfig, (low_tau, ssc, inter): (bool, bool, bool)) -> ExperimentConfig {
        let mut c = base.clone();
        c.loss.tau = if low_tau { self.tau_on } else { self.tau_off };
        c.loss.lambda_ssc = if ssc { self.lambda_ssc } else { 0.0 };
        c.loss.lambda_inter = if inter { self.lambda_inter } else { 0.0 };
        c.name = format!("{}[tau={},ssc={},inter={}]", base.name, low_tau as u8, ssc as u8, inter as u8);
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub low_tau: bool,
    pub ssc: bool,
    pub inter: bool,
    pub config_hash: String,
    /// Final-session accuracies and the performance drop.
    pub a_b: Option<Stat>,
    pub a_n: Option<Stat>,
    pub a_w: Stat,
    pub pd: Option<Stat>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub base_config_hash: String,
    pub master_seed: u64,
    pub rows: Vec<AblationRow>,
}

/// One run per grid cell, each on its own thread.
pub fn ablate(base: &ExperimentConfig, grid: &AblationGrid) -> Result<AblationTable> {
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(Error::invalid("ablation grid is empty"));
    }
    let configs: Vec<ExperimentConfig> = cells.iter().map(|&c| grid.configure(base, c)).collect();
    let runs: Vec<RunResult> = std::thread::scope(|s| {
        let handles: Vec<_> = configs.iter().map(|c| s.spawn(move || run(c))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("ablation thread panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    let rows = cells
        .iter()
        .zip(&runs)
        .map(|(&(low_tau, ssc, inter), r)| {
            let fin = r.aggregate.final_session();
            AblationRow {
                low_tau,
                ssc,
                inter,
                config_hash: r.config_hash.clone(),
                a_b: fin.a_b,
                a_n: fin.a_n,
                a_w: fin.a_w,
                pd: r.aggregate.pd,
            }
        })
        .collect();
    Ok(AblationTable {
        base_config_hash: base.hash(),
        master_seed: base.master_seed,
        rows,
    })
}

pub fn ablation_csv(table: &AblationTable) -> String {
    let mut s = header(&table.base_config_hash, table.master_seed);
    s.push_str("low_tau,ssc,inter,a_b,a_b_std,a_n,a_n_std,a_w,a_w_std,pd,pd_std,config_hash\n");
    let m = |x: Option<Stat>| x.map(|v| v.mean.to_string()).unwrap_or_default();
    let sd = |x: Option<Stat>| x.map(|v| v.std.to_string()).unwrap_or_default();
    for r in &table.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.low_tau as u8,
            r.ssc as u8,
            r.inter as u8,
            m(r.a_b),
            sd(r.a_b),
            m(r.a_n),
            sd(r.a_n),
            r.a_w.mean,
            r.a_w.std,
            m(r.pd),
            sd(r.pd),
            r.config_hash
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_grid_order() {
        let g = AblationGrid::full(&desk_config());
        let cells = g.cells();
        assert_eq!(cells.len(), 8);
        let flags: Vec<(u8, u8, u8)> = cells.iter().map(|&(t, s, i)| (t as u8, s as u8, i as u8)).collect();
        assert_eq!(
            flags,
            vec![(0, 0, 0), (0, 1, 0), (0, 0, 1), (0, 1, 1), (1, 0, 0), (1, 1, 0), (1, 0, 1), (1, 1, 1)]
        );
    }

    #[test]
    fn on_cell_of_closer_preset_is_the_preset() {
        let closer = preset("closer").unwrap();
        let g = AblationGrid::full(&closer);
        let c = g.configure(&closer, (true, true, true));
        assert_eq!(c.loss, closer.loss);
    }
}
