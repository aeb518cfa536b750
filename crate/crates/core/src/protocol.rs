//! Session protocol: base training with a cosine classifier, classifier
//! replacement by class-mean prototypes, frozen-encoder prototype growth in
//! the incremental sessions, and nearest-prototype evaluation.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{augment, augment_rng, AugmentationSpec, Dataset};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossBatch, LossBreakdown, LossConfig};
use crate::numerics::{cosine_similarity, Tape, Tensor};
use crate::optim::{step_lr, NesterovSgd};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub base_classes: usize,
    pub ways: usize,
    pub shots: usize,
    /// Number of incremental sessions after the base session.
    pub sessions: usize,
}

/// Disjoint class sets per session plus the training-sample indices each
/// session may use. Session 0 holds every training sample of its classes;
/// later sessions hold `shots` samples per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FscilSplit {
    pub session_classes: Vec<Vec<usize>>,
    pub session_train: Vec<Vec<usize>>,
    pub ways: usize,
    pub shots: usize,
    pub seed: u64,
}

/// Shuffles `all_classes` with `seed` and cuts `[base_count, ways, ways, ...]`.
pub fn partition_classes(
    all_classes: &[usize],
    base_count: usize,
    ways: usize,
    sessions: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let distinct: BTreeSet<usize> = all_classes.iter().copied().collect();
    if distinct.len() != all_classes.len() {
        return Err(Error::invalid("class list contains duplicates"));
    }
    if base_count < 2 {
        return Err(Error::invalid(format!("need at least 2 base classes, got {base_count}")));
    }
    if sessions > 0 && ways == 0 {
        return Err(Error::invalid("ways must be positive when there are incremental sessions"));
    }
    let needed = base_count + sessions * ways;
    if needed > all_classes.len() {
        return Err(Error::InsufficientClasses {
            needed,
            available: all_classes.len(),
        });
    }
    let mut order: Vec<usize> = distinct.into_iter().collect();
    order.shuffle(&mut seed::rng(seed::derive(seed, "classes")));
    let mut out = Vec::with_capacity(sessions + 1);
    let mut base = order[..base_count].to_vec();
    base.sort_unstable();
    out.push(base);
    for t in 0..sessions {
        let start = base_count + t * ways;
        let mut s = order[start..start + ways].to_vec();
        s.sort_unstable();
        out.push(s);
    }
    Ok(out)
}

pub fn make_split(train: &Dataset, spec: &SplitSpec, seed: u64) -> Result<FscilSplit> {
    if spec.sessions > 0 && spec.shots == 0 {
        return Err(Error::invalid("shots must be positive"));
    }
    let by_class = train.by_class();
    let classes: Vec<usize> = by_class.keys().copied().collect();
    let session_classes = partition_classes(&classes, spec.base_classes, spec.ways, spec.sessions, seed)?;
    let mut rng = seed::rng(seed::derive(seed, "shots"));
    let mut session_train = Vec::with_capacity(session_classes.len());
    for (t, classes) in session_classes.iter().enumerate() {
        let mut idx = Vec::new();
        for c in classes {
            let pool = &by_class[c];
            if t == 0 {
                idx.extend_from_slice(pool);
            } else {
                if pool.len() < spec.shots {
                    return Err(Error::InsufficientSamples {
                        class: *c,
                        needed: spec.shots,
                        available: pool.len(),
                    });
                }
                let mut pool = pool.clone();
                pool.shuffle(&mut rng);
                idx.extend_from_slice(&pool[..spec.shots]);
            }
        }
        idx.sort_unstable();
        session_train.push(idx);
    }
    Ok(FscilSplit {
        session_classes,
        session_train,
        ways: spec.ways,
        shots: spec.shots,
        seed,
    })
}

impl FscilSplit {
    pub fn sessions(&self) -> usize {
        self.session_classes.len()
    }

    pub fn base_classes(&self) -> &[usize] {
        &self.session_classes[0]
    }

    pub fn new_classes(&self) -> Vec<usize> {
        self.session_classes[1..].iter().flatten().copied().collect()
    }

    /// Classes of sessions `0..=t`.
    pub fn seen_classes(&self, t: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.session_classes[..=t].iter().flatten().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn session_dataset(&self, train: &Dataset, t: usize) -> Dataset {
        train.subset(&self.session_train[t])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    5e-4
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            lr: 0.1,
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid(format!("batch size must be >= 2, got {}", self.batch_size)));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("momentum must be in [0, 1) and weight decay nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub batches: usize,
    pub mean_total: f64,
    pub mean_ce: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    /// `[C, d]` cosine classifier, row `k` for `class_ids[k]`.
    pub classifier: Tensor,
    pub class_ids: Vec<usize>,
    pub log: Vec<EpochLog>,
}

/// Trains encoder and cosine classifier on the base session with the
/// combined objective. When `lambda_ssc > 0` every sample contributes one
/// augmented view.
pub fn train_base(
    params: EncoderParams,
    d0: &Dataset,
    loss: &LossConfig,
    train: &TrainConfig,
    aug: &AugmentationSpec,
) -> Result<TrainOutcome> {
    loss.validate()?;
    train.validate()?;
    aug.validate()?;
    if d0.is_empty() {
        return Err(Error::invalid("base session has no training samples"));
    }
    let class_ids = d0.classes();
    if class_ids.len() < 2 {
        return Err(Error::invalid("base session needs at least 2 classes"));
    }
    if d0.dim() != params.input_dim() {
        return Err(Error::shape(
            "train_base",
            format!("data dimension {} vs encoder input {}", d0.dim(), params.input_dim()),
        ));
    }
    let d = params.embed_dim();
    let mut init_rng = seed::rng(seed::derive(train.seed, "classifier"));
    let mut classifier = Tensor::matrix(
        class_ids.len(),
        d,
        (0..class_ids.len() * d)
            .map(|_| StandardNormal.sample(&mut init_rng))
            .collect(),
    )?;
    let local: Vec<usize> = d0
        .labels()
        .iter()
        .map(|l| class_ids.binary_search(l).expect("label in class list"))
        .collect();

    let mut params = params;
    let mut opt = NesterovSgd::new(train.momentum, train.weight_decay);
    let mut order: Vec<usize> = (0..d0.len()).collect();
    let mut shuffle_rng = seed::rng(seed::derive(train.seed, "shuffle"));
    let mut log = Vec::with_capacity(train.epochs);

    for epoch in 0..train.epochs {
        let lr = step_lr(train.lr, epoch, train.epochs);
        order.shuffle(&mut shuffle_rng);
        let (mut sum_total, mut sum_ce, mut batches) = (0.0, 0.0, 0usize);
        for (bi, chunk) in order.chunks(train.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let labels: Vec<usize> = chunk.iter().map(|&i| local[i]).collect();
            let mut cfg = *loss;
            if labels.iter().all(|&l| l == labels[0]) {
                cfg.lambda_inter = 0.0;
            }
            if cfg.lambda_intra > 0.0 && {
                let mut s = labels.clone();
                s.sort_unstable();
                s.windows(2).all(|w| w[0] != w[1])
            } {
                cfg.lambda_intra = 0.0;
            }

            let mut tape = Tape::new();
            let vars = params.register(&mut tape);
            let cls = tape.leaf(classifier.clone());
            let x = tape.constant(d0.inputs_of(chunk)?);
            let z = params.embed_on_tape(&mut tape, &vars, x)?;
            let augmented = if cfg.lambda_ssc > 0.0 {
                let views = chunk
                    .iter()
                    .map(|&i| {
                        let mut rng = augment_rng(train.seed, aug, epoch, i);
                        augment(&d0.samples()[i], aug, d0.image(), &mut rng).map(|s| s.input)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let xa = tape.constant(Tensor::from_rows(&views)?);
                Some(params.embed_on_tape(&mut tape, &vars, xa)?)
            } else {
                None
            };
            let batch = LossBatch {
                features: z,
                labels: &labels,
                augmented,
            };
            let (total, br): (_, LossBreakdown) = total_loss(&mut tape, &batch, &cfg, cls).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch} batch {bi}: {m}")),
                other => other,
            })?;
            if !br.total.is_finite() {
                return Err(Error::NonFinite(format!("epoch {epoch} batch {bi}: loss {}", br.total)));
            }
            let grads = tape.backward(total)?;
            let g: Vec<Tensor> = vars.all().chain(std::iter::once(cls)).map(|v| grads.get(v)).collect();
            let targets = params.net_mut().params_mut().chain(std::iter::once(&mut classifier));
            opt.step(lr, targets.zip(g.iter()));
            sum_total += br.total;
            sum_ce += br.ce;
            batches += 1;
        }
        let denom = batches.max(1) as f64;
        log.push(EpochLog {
            epoch,
            lr,
            batches,
            mean_total: sum_total / denom,
            mean_ce: sum_ce / denom,
        });
    }
    Ok(TrainOutcome {
        params,
        classifier,
        class_ids,
        log,
    })
}

/// Accuracy (percent) of the trained cosine classifier on `test`, before any
/// replacement. Samples of classes outside `class_ids` are rejected.
pub fn classifier_accuracy(params: &EncoderParams, classifier: &Tensor, class_ids: &[usize], test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let z = params.embed(&test.inputs()?)?;
    let mut correct = 0usize;
    for (row, s) in z.row_iter().zip(test.samples()) {
        if !class_ids.contains(&s.label) {
            return Err(Error::UnseenClass(s.label));
        }
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (k, phi) in classifier.row_iter().enumerate() {
            let sim = cosine_similarity(row, phi)?;
            if sim > best.0 {
                best = (sim, k);
            }
        }
        if class_ids[best.1] == s.label {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / test.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub class_id: usize,
    /// Unnormalized mean of the class's training embeddings.
    pub mean: Vec<f64>,
    pub count: usize,
}

/// Class prototypes in insertion order, tied to the encoder that produced
/// them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    prototypes: Vec<Prototype>,
    encoder_fingerprint: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn class_means(params: &EncoderParams, data: &Dataset) -> Result<Vec<Prototype>> {
    let mut out = Vec::new();
    for (class_id, idx) in data.by_class() {
        let z = params.embed(&data.inputs_of(&idx)?)?;
        let mut mean = vec![0.0; z.cols()];
        for row in z.row_iter() {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        let n = idx.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        out.push(Prototype {
            class_id,
            mean,
            count: idx.len(),
        });
    }
    Ok(out)
}

/// Replaces the trained classifier with one class-mean prototype per base
/// class. Every class in `base_classes` must have samples in `d0`.
pub fn classifier_replace(params: &EncoderParams, d0: &Dataset, base_classes: &[usize]) -> Result<PrototypeBank> {
    let present = d0.classes();
    if let Some(&missing) = base_classes.iter().find(|c| !present.contains(c)) {
        return Err(Error::EmptyClass(missing));
    }
    if d0.is_empty() {
        return Err(Error::invalid("no base-session samples"));
    }
    Ok(PrototypeBank {
        prototypes: class_means(params, d0)?,
        encoder_fingerprint: hex(&params.fingerprint()),
    })
}

impl PrototypeBank {
    /// Builds a bank directly from prototypes (no encoder binding check).
    pub fn from_prototypes(prototypes: Vec<Prototype>, params: &EncoderParams) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for p in &prototypes {
            if !seen.insert(p.class_id) {
                return Err(Error::ClassOverlap(p.class_id));
            }
        }
        Ok(PrototypeBank {
            prototypes,
            encoder_fingerprint: hex(&params.fingerprint()),
        })
    }

    pub fn prototypes(&self) -> &[Prototype] {
        &self.prototypes
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn class_ids(&self) -> Vec<usize> {
        self.prototypes.iter().map(|p| p.class_id).collect()
    }

    pub fn get(&self, class_id: usize) -> Option<&Prototype> {
        self.prototypes.iter().find(|p| p.class_id == class_id)
    }

    pub fn encoder_fingerprint(&self) -> &str {
        &self.encoder_fingerprint
    }

    /// Appends prototypes for the classes of `d_t`. Existing prototypes are
    /// untouched; the encoder must be the one used at replacement time.
    pub fn incremental_update(&self, params: &EncoderParams, d_t: &Dataset) -> Result<PrototypeBank> {
        if hex(&params.fingerprint()) != self.encoder_fingerprint {
            return Err(Error::EncoderChanged);
        }
        let mut next = self.clone();
        if d_t.is_empty() {
            return Ok(next);
        }
        if let Some(c) = d_t.classes().into_iter().find(|&c| self.get(c).is_some()) {
            return Err(Error::ClassOverlap(c));
        }
        next.prototypes.extend(class_means(params, d_t)?);
        Ok(next)
    }

    /// Scores every prototype against a feature and returns the best class
    /// (lowest class id among ties) with the scores in bank order.
    pub fn classify_feature(&self, z: &[f64]) -> Result<(usize, Vec<f64>)> {
        if self.is_empty() {
            return Err(Error::invalid("prototype bank is empty"));
        }
        let scores = self
            .prototypes
            .iter()
            .map(|p| cosine_similarity(z, &p.mean))
            .collect::<Result<Vec<_>>>()?;
        let mut best: Option<(f64, usize)> = None;
        for (p, &s) in self.prototypes.iter().zip(&scores) {
            best = match best {
                Some((bs, bc)) if s < bs || (s == bs && bc < p.class_id) => Some((bs, bc)),
                _ => Some((s, p.class_id)),
            };
        }
        Ok((best.expect("nonempty").1, scores))
    }
}

pub fn classify(params: &EncoderParams, bank: &PrototypeBank, x: &[f64]) -> Result<(usize, Vec<f64>)> {
    bank.classify_feature(&params.embed_one(x)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class_id: usize,
    pub correct: usize,
    pub total: usize,
}

/// Accuracy on all seen classes after one session. Percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionEval {
    pub session: usize,
    pub per_class: Vec<ClassAccuracy>,
    pub a_b: Option<f64>,
    pub a_n: Option<f64>,
    pub a_w: f64,
    pub base_correct: usize,
    pub base_total: usize,
    pub new_correct: usize,
    pub new_total: usize,
}

fn pct(correct: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| 100.0 * correct as f64 / total as f64)
}

/// Evaluates precomputed test features against the bank.
pub fn evaluate_features(
    session: usize,
    bank: &PrototypeBank,
    features: &Tensor,
    labels: &[usize],
    base_classes: &[usize],
) -> Result<SessionEval> {
    if labels.is_empty() || features.rows() != labels.len() {
        return Err(Error::shape("evaluate", format!("{} features for {} labels", features.rows(), labels.len())));
    }
    let ids = bank.class_ids();
    let mut per_class: Vec<ClassAccuracy> = ids
        .iter()
        .map(|&class_id| ClassAccuracy { class_id, correct: 0, total: 0 })
        .collect();
    for (row, &y) in features.row_iter().zip(labels) {
        let slot = ids.iter().position(|&c| c == y).ok_or(Error::UnseenClass(y))?;
        let (pred, _) = bank.classify_feature(row)?;
        per_class[slot].total += 1;
        if pred == y {
            per_class[slot].correct += 1;
        }
    }
    let (mut bc, mut bt, mut nc, mut nt) = (0, 0, 0, 0);
    for a in &per_class {
        if base_classes.contains(&a.class_id) {
            bc += a.correct;
            bt += a.total;
        } else {
            nc += a.correct;
            nt += a.total;
        }
    }
    per_class.retain(|a| a.total > 0);
    Ok(SessionEval {
        session,
        per_class,
        a_b: pct(bc, bt),
        a_n: pct(nc, nt),
        a_w: pct(bc + nc, bt + nt).expect("nonempty test set"),
        base_correct: bc,
        base_total: bt,
        new_correct: nc,
        new_total: nt,
    })
}

pub fn evaluate_session(
    session: usize,
    params: &EncoderParams,
    bank: &PrototypeBank,
    test: &Dataset,
    base_classes: &[usize],
) -> Result<SessionEval> {
    let z = params.embed(&test.inputs()?)?;
    evaluate_features(session, bank, &z, &test.labels(), base_classes)
}
