use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::data::Dataset;
use crate::encoder::EncoderParams;
use crate::error::{Error, Result, StageExt};
use crate::ib::{ib_plane, IbPoint};
use crate::metrics::{angular_histogram, spread_stats, transferability_from_features, ClassHistogram, SessionReport};
use crate::numerics::Tensor;
use crate::protocol::{
    classifier_accuracy, classifier_replace, evaluate_features, make_split, train_base, EpochLog, PrototypeBank,
};
use crate::seed;

/// Test-set embeddings of the final session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureDump {
    pub sample_ids: Vec<usize>,
    pub labels: Vec<usize>,
    pub features: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub base_classes: Vec<usize>,
    pub report: SessionReport,
    /// Base-class test accuracy of the trained classifier, before replacement.
    pub a_b_before_cr: f64,
    /// `a_b_before_cr` minus base accuracy right after replacement.
    pub cr_drop: f64,
    /// Transferability restricted to the new classes of sessions `1..=t`.
    pub transferability_per_session: Vec<Option<f64>>,
    pub histogram: Option<Vec<ClassHistogram>>,
    pub features: Option<FeatureDump>,
    pub train_log: Vec<EpochLog>,
    pub prototypes: PrototypeBank,
    #[serde(skip)]
    pub encoder: Option<EncoderParams>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std })
    }

    /// Aggregates values that must be present in every trial.
    fn of_all(values: impl Iterator<Item = Option<f64>>) -> Option<Stat> {
        let v: Option<Vec<f64>> = values.collect();
        v.and_then(|v| Stat::of(&v))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionAggregate {
    pub session: usize,
    pub a_b: Option<Stat>,
    pub a_n: Option<Stat>,
    pub a_w: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub sessions: Vec<SessionAggregate>,
    pub pd: Option<Stat>,
    pub transferability: Option<Stat>,
    pub intra_spread: Option<Stat>,
    pub inter_distance: Option<Stat>,
    pub a_b_before_cr: Stat,
    pub cr_drop: Stat,
}

impl Aggregate {
    pub fn final_session(&self) -> &SessionAggregate {
        self.sessions.last().expect("at least one session")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config_hash: String,
    pub master_seed: u64,
    pub config: ExperimentConfig,
    pub trials: Vec<TrialResult>,
    pub aggregate: Aggregate,
}

pub fn trial_seed(master_seed: u64, trial: usize) -> u64 {
    seed::derive_indexed(master_seed, "trial", trial as u64)
}

fn new_class_features(z: &Tensor, labels: &[usize], classes: &[usize]) -> Result<Option<Tensor>> {
    let rows: Vec<usize> = (0..labels.len()).filter(|&i| classes.contains(&labels[i])).collect();
    if rows.is_empty() {
        Ok(None)
    } else {
        z.select_rows(&rows).map(Some)
    }
}

/// One full pass: split, base training, classifier replacement, incremental
/// sessions, evaluation and the requested metrics.
pub fn run_trial(config: &ExperimentConfig, train: &Dataset, test: &Dataset, trial: usize) -> Result<TrialResult> {
    let tseed = trial_seed(config.master_seed, trial);
    let split = make_split(train, &config.split, seed::derive(tseed, "split")).stage("split")?;
    let base_classes = split.base_classes().to_vec();

    let params = EncoderParams::init(&config.encoder_dims(train.dim()), seed::derive(tseed, "init")).stage("init")?;
    let d0 = split.session_dataset(train, 0);
    let mut train_cfg = config.train;
    train_cfg.seed = seed::derive(tseed, "train");
    let trained = train_base(params, &d0, &config.loss, &train_cfg, &config.augment).stage("train_base")?;
    let params = trained.params;

    let base_test = test.filter_classes(&base_classes);
    let a_b_before_cr =
        classifier_accuracy(&params, &trained.classifier, &trained.class_ids, &base_test).stage("evaluate_before_cr")?;

    let mut bank = classifier_replace(&params, &d0, &base_classes).stage("classifier_replace")?;
    let base_bank = bank.clone();
    let fingerprint = params.fingerprint();

    let seen_all = split.seen_classes(split.sessions() - 1);
    let eval_set = test.filter_classes(&seen_all);
    let z_all = params.embed(&eval_set.inputs()?).stage("embed_test")?;
    let labels_all = eval_set.labels();

    let mut sessions = Vec::with_capacity(split.sessions());
    let mut t_per_session = Vec::with_capacity(split.sessions());
    let base_means: Vec<Vec<f64>> = base_bank.prototypes().iter().map(|p| p.mean.clone()).collect();
    for t in 0..split.sessions() {
        if t > 0 {
            bank = bank
                .incremental_update(&params, &split.session_dataset(train, t))
                .stage(&format!("incremental_update[{t}]"))?;
        }
        let seen = split.seen_classes(t);
        let rows: Vec<usize> = (0..labels_all.len()).filter(|&i| seen.contains(&labels_all[i])).collect();
        let labels: Vec<usize> = rows.iter().map(|&i| labels_all[i]).collect();
        let eval = evaluate_features(t, &bank, &z_all.select_rows(&rows)?, &labels, &base_classes)
            .stage(&format!("evaluate[{t}]"))?;
        sessions.push(eval);

        let new_so_far: Vec<usize> = split.session_classes[1..=t].iter().flatten().copied().collect();
        let t_value = match new_class_features(&z_all, &labels_all, &new_so_far)? {
            Some(zn) if config.metrics.transferability => {
                Some(transferability_from_features(&base_means, &zn).stage("transferability")?)
            }
            _ => None,
        };
        t_per_session.push(t_value);
    }
    if params.fingerprint() != fingerprint {
        return Err(Error::EncoderChanged.at_stage("incremental_sessions"));
    }

    let a_b_after = sessions[0].a_b.expect("base classes evaluated");
    let mut report = SessionReport::new(sessions);
    report.transferability = t_per_session.last().copied().flatten();
    if config.metrics.spread {
        let base_rows: Vec<usize> = (0..labels_all.len()).filter(|&i| base_classes.contains(&labels_all[i])).collect();
        let labels: Vec<usize> = base_rows.iter().map(|&i| labels_all[i]).collect();
        report.spread = Some(
            spread_stats(&z_all.select_rows(&base_rows)?, &labels, base_bank.prototypes()).stage("spread")?,
        );
    }
    if config.metrics.ib {
        let ib: Vec<IbPoint> = ib_plane(&params, &eval_set, &base_classes, &config.metrics.ib_config).stage("ib")?;
        report.ib = Some(ib);
    }
    let histogram = if config.metrics.histogram && config.encoder.embed_dim == 2 {
        Some(angular_histogram(&z_all, &labels_all, config.metrics.histogram_bins).stage("histogram")?)
    } else {
        None
    };
    let features = config.metrics.features.then(|| FeatureDump {
        sample_ids: (0..labels_all.len()).collect(),
        labels: labels_all.clone(),
        features: z_all.clone(),
    });

    Ok(TrialResult {
        trial,
        seed: tseed,
        base_classes,
        report,
        a_b_before_cr,
        cr_drop: a_b_before_cr - a_b_after,
        transferability_per_session: t_per_session,
        histogram,
        features,
        train_log: trained.log,
        prototypes: bank,
        encoder: Some(params),
    })
}

pub fn aggregate(trials: &[TrialResult]) -> Aggregate {
    let n_sessions = trials[0].report.sessions.len();
    let sessions = (0..n_sessions)
        .map(|t| {
            let at = |f: &dyn Fn(&crate::protocol::SessionEval) -> Option<f64>| {
                Stat::of_all(trials.iter().map(|r| f(&r.report.sessions[t])))
            };
            SessionAggregate {
                session: t,
                a_b: at(&|s| s.a_b),
                a_n: at(&|s| s.a_n),
                a_w: at(&|s| Some(s.a_w)).expect("a_w always present"),
            }
        })
        .collect();
    Aggregate {
        sessions,
        pd: Stat::of_all(trials.iter().map(|r| r.report.pd)),
        transferability: Stat::of_all(trials.iter().map(|r| r.report.transferability)),
        intra_spread: Stat::of_all(trials.iter().map(|r| r.report.spread.and_then(|s| s.intra))),
        inter_distance: Stat::of_all(trials.iter().map(|r| r.report.spread.and_then(|s| s.inter))),
        a_b_before_cr: Stat::of(&trials.iter().map(|r| r.a_b_before_cr).collect::<Vec<_>>()).expect("trials"),
        cr_drop: Stat::of(&trials.iter().map(|r| r.cr_drop).collect::<Vec<_>>()).expect("trials"),
    }
}

/// Runs every trial of `config` on its own thread and aggregates them.
/// The result depends only on the config.
pub fn run(config: &ExperimentConfig) -> Result<RunResult> {
    config.validate().stage("config")?;
    let (train, test) = config.dataset.load().stage("load_data")?;
    if train.dim() != test.dim() {
        return Err(Error::invalid("train and test inputs differ in width").at_stage("load_data"));
    }
    let trials: Vec<TrialResult> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..config.seeds)
            .map(|k| {
                let (train, test) = (&train, &test);
                s.spawn(move || run_trial(config, train, test, k).map_err(|e| e.at_stage(format!("trial {k}"))))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("trial thread panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(RunResult {
        config_hash: config.hash(),
        master_seed: config.master_seed,
        config: config.clone(),
        aggregate: aggregate(&trials),
        trials,
    })
}
