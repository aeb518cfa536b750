use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{rotate_class_synthesis, split_holdout, AugmentationSpec, Dataset, Sample};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result, StageExt};
use crate::losses::LossConfig;
use crate::protocol::{classifier_replace, evaluate_session, train_base, TrainConfig};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchCandidate {
    pub loss: LossConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Samples per base class held out for validation.
    pub validation_per_class: usize,
    /// Fake incremental sessions, one rotated class each.
    pub fake_sessions: usize,
    /// Training shots per fake class; the rest of the class is test data.
    pub shots: usize,
    /// Encoder layer widths, input first.
    pub encoder_dims: Vec<usize>,
    #[serde(default)]
    pub augment: AugmentationSpec,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: usize,
    pub best_candidate: SearchCandidate,
    /// Final-session `A_W` per candidate.
    pub scores: Vec<f64>,
}

const ANGLES: [u32; 3] = [90, 180, 270];

/// Rotated copies of base classes, split into few-shot training and test
/// parts. Source classes are visited in ascending order and angles cycle
/// through 90, 180, 270.
fn fake_sessions(base: &Dataset, opts: &SearchOptions) -> Result<Vec<(Dataset, Dataset)>> {
    let classes = base.classes();
    let first_fresh = classes.last().map_or(0, |&c| c + 1);
    let mut rng = seed::rng(seed::derive(opts.seed, "fake-shots"));
    let mut out = Vec::with_capacity(opts.fake_sessions);
    for s in 0..opts.fake_sessions {
        let source = classes[s % classes.len()];
        let rotated = rotate_class_synthesis(base, source, ANGLES[s % ANGLES.len()])?;
        let relabeled = rotated
            .into_samples()
            .into_iter()
            .map(|x| Sample { label: first_fresh + s, ..x })
            .collect();
        let rotated = Dataset::new(relabeled, base.image())?;
        if rotated.len() <= opts.shots {
            return Err(Error::InsufficientSamples {
                class: source,
                needed: opts.shots + 1,
                available: rotated.len(),
            });
        }
        let mut idx: Vec<usize> = (0..rotated.len()).collect();
        idx.shuffle(&mut rng);
        let (tr, te) = idx.split_at(opts.shots);
        let (mut tr, mut te) = (tr.to_vec(), te.to_vec());
        tr.sort_unstable();
        te.sort_unstable();
        out.push((rotated.subset(&tr), rotated.subset(&te)));
    }
    Ok(out)
}

fn score(
    candidate: &SearchCandidate,
    train: &Dataset,
    validation: &Dataset,
    fakes: &[(Dataset, Dataset)],
    opts: &SearchOptions,
) -> Result<f64> {
    let base_classes = train.classes();
    let params = EncoderParams::init(&opts.encoder_dims, seed::derive(opts.seed, "search-init"))?;
    let trained = train_base(params, train, &candidate.loss, &candidate.train, &opts.augment).stage("train_base")?;
    let params = trained.params;
    let mut bank = classifier_replace(&params, train, &base_classes).stage("classifier_replace")?;
    let mut test = validation.clone();
    for (fake_train, fake_test) in fakes {
        bank = bank.incremental_update(&params, fake_train).stage("incremental_update")?;
        test = test.concat(fake_test)?;
    }
    Ok(evaluate_session(fakes.len(), &params, &bank, &test, &base_classes)
        .stage("evaluate")?
        .a_w)
}

/// Picks the candidate with the highest final-session accuracy on base
/// validation data plus rotated fake classes. Ties keep the earlier
/// candidate.
pub fn hyperparam_search(base: &Dataset, candidates: &[SearchCandidate], opts: &SearchOptions) -> Result<SearchOutcome> {
    if candidates.is_empty() {
        return Err(Error::invalid("hyperparameter search needs at least one candidate"));
    }
    if base.image().is_none() {
        return Err(Error::invalid("hyperparameter search rotates images; base data has no image shape"));
    }
    let (train, validation) = split_holdout(base, opts.validation_per_class, seed::derive(opts.seed, "search-val"))?;
    let fakes = fake_sessions(&train.concat(&validation)?, opts)?;
    let scores = candidates
        .iter()
        .map(|c| score(c, &train, &validation, &fakes, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(SearchOutcome {
        best,
        best_candidate: candidates[best].clone(),
        scores,
    })
}
