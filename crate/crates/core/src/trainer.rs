//! A differentiable surrogate detector trained with per-sample weights.
//!
//! The surrogate holds one logit pair `(a_k, b_k)` per class; `σ(a_k)` plays
//! the role of the mean class confidence and `σ(b_k)` the mean box overlap,
//! so the detection quality is `E_k = σ(a_k)·σ(b_k)`. Its predicted relation
//! shrinks every class offset from the background by `E_k`.
//!
//! Each step perturbs the annotated relations (worst of `m` bounded draws,
//! judged by rank agreement), weights every image through a
//! [`SampleWeighting`] scheme, and descends the weighted mean loss.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{Error, Result};
use crate::ingest::{ClassId, ImageId, ImageRelation};
use crate::rankcore::{knowledge_loss, spearman, RelationPair};
use crate::stability::{image_stability, StabilityMatrix};
use crate::theorem::compensated_sum;
use crate::weights::{weighting_schemes, SampleWeighting, WeightConfig, WeightRecord};

type Gradient = Vec<(ClassId, [f64; 2])>;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SurrogateDetector {
    pub logits: BTreeMap<ClassId, [f64; 2]>,
}

impl SurrogateDetector {
    /// Every class in `classes` starts at `initial[class]`, or `(0, 0)`.
    pub fn new(
        classes: impl IntoIterator<Item = ClassId>,
        initial: &BTreeMap<ClassId, [f64; 2]>,
    ) -> Self {
        let logits = classes
            .into_iter()
            .map(|c| (c, initial.get(&c).copied().unwrap_or([0.0, 0.0])))
            .collect();
        Self { logits }
    }

    fn logits_of(&self, class: ClassId) -> Result<[f64; 2]> {
        self.logits
            .get(&class)
            .copied()
            .ok_or_else(|| Error::domain(format!("detector has no parameters for class {class}")))
    }

    pub fn quality(&self, class: ClassId) -> Result<f64> {
        let [a, b] = self.logits_of(class)?;
        Ok(sigmoid(a) * sigmoid(b))
    }
}

fn foreground_classes(relation: &ImageRelation) -> Result<Vec<ClassId>> {
    let classes: Vec<ClassId> = relation.foreground().into_iter().map(|(c, _)| c).collect();
    if classes.is_empty() {
        return Err(Error::domain(format!(
            "image {} has no foreground classes",
            relation.image_id.0
        )));
    }
    Ok(classes)
}

/// `(1/K) Σ_k (1 − E_k)²` over the foreground classes of the image.
pub fn detector_loss(det: &SurrogateDetector, relation: &ImageRelation) -> Result<f64> {
    let classes = foreground_classes(relation)?;
    let k = classes.len() as f64;
    let mut total = 0.0;
    for c in classes {
        let e = det.quality(c)?;
        total += (1.0 - e) * (1.0 - e);
    }
    Ok(total / k)
}

/// Gradient of [`detector_loss`] with respect to each class's logit pair.
pub fn detector_loss_gradient(
    det: &SurrogateDetector,
    relation: &ImageRelation,
) -> Result<Gradient> {
    let classes = foreground_classes(relation)?;
    let k = classes.len() as f64;
    classes
        .into_iter()
        .map(|c| {
            let [a, b] = det.logits_of(c)?;
            let (sa, sb) = (sigmoid(a), sigmoid(b));
            let outer = -2.0 * (1.0 - sa * sb) / k;
            Ok((
                c,
                [outer * sb * sa * (1.0 - sa), outer * sa * sb * (1.0 - sb)],
            ))
        })
        .collect()
}

/// `G'_k = G_0 + (G_k − G_0)·E_k`; the background passes through.
pub fn predict_relation(
    det: &SurrogateDetector,
    relation: &ImageRelation,
) -> Result<ImageRelation> {
    let g0 = relation.background_gray;
    let mut grays = BTreeMap::new();
    for (&c, &g) in &relation.class_grays {
        grays.insert(c, g0 + (g - g0) * det.quality(c)?);
    }
    Ok(ImageRelation {
        image_id: relation.image_id,
        background_gray: g0,
        class_grays: grays,
        flags: relation.flags.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    /// Half-width of the uniform gray perturbation.
    pub magnitude: f64,
    pub worst_of_m: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub weights: WeightConfig,
    pub perturbation: PerturbationConfig,
    /// Name of a registered weighting scheme.
    #[serde(default = "TrainConfig::default_mode")]
    pub mode: String,
    #[serde(default)]
    pub initial_logits: BTreeMap<ClassId, [f64; 2]>,
}

impl TrainConfig {
    fn default_mode() -> String {
        "kgat".into()
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        let p = &self.perturbation;
        if !(p.magnitude >= 0.0 && p.magnitude.is_finite()) {
            return Err(Error::Config(format!(
                "perturbation magnitude must be >= 0, got {}",
                p.magnitude
            )));
        }
        if p.worst_of_m == 0 {
            return Err(Error::Config("worst_of_m must be at least 1".into()));
        }
        if self
            .initial_logits
            .values()
            .flatten()
            .any(|v| !v.is_finite())
        {
            return Err(Error::Config("initial logits must be finite".into()));
        }
        self.weights.validate()
    }

    /// Settings used with [`mispredicted_relation_fixture`].
    pub fn standard(mode: &str, seed: u64) -> Self {
        Self {
            epochs: 15,
            batch_size: 8,
            learning_rate: 0.5,
            weights: WeightConfig::default(),
            perturbation: PerturbationConfig {
                magnitude: 0.02,
                worst_of_m: 4,
                seed,
            },
            mode: mode.into(),
            initial_logits: [(ClassId(1), [-1.5, -1.5]), (ClassId(2), [1.0, 1.0])].into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean detector loss over all images after the epoch.
    pub l_det: f64,
    /// Mean `1 − ρ` on clean relations after the epoch, over images with at
    /// least two foreground classes.
    pub l_knowledge: f64,
    pub mean_w_rho: f64,
    pub mean_w_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: String,
    pub epochs: Vec<EpochStats>,
    pub detector: SurrogateDetector,
}

impl TrainReport {
    pub fn final_knowledge_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.l_knowledge)
    }
}

/// Lowest rank agreement among `m` uniformly perturbed copies of the
/// relation, scored against the clean annotation. The first draw wins ties.
fn worst_case_rho(
    det: &SurrogateDetector,
    relation: &ImageRelation,
    cfg: &PerturbationConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Option<f64>> {
    let clean = relation.foreground();
    let mut worst: Option<Option<f64>> = None;
    for _ in 0..cfg.worst_of_m {
        let mut shifted = relation.clone();
        shifted.background_gray += cfg.magnitude * (2.0 * rng.random::<f64>() - 1.0);
        for g in shifted.class_grays.values_mut() {
            *g += cfg.magnitude * (2.0 * rng.random::<f64>() - 1.0);
        }
        let predicted = predict_relation(det, &shifted)?;
        let rho = spearman(&RelationPair::from_values(&clean, &predicted.foreground()));
        worst = match worst {
            Some(Some(w)) if rho.is_some_and(|r| r < w) => Some(rho),
            None => Some(rho),
            keep => keep,
        };
    }
    Ok(worst.flatten())
}

fn clean_rho(det: &SurrogateDetector, relation: &ImageRelation) -> Result<Option<f64>> {
    let predicted = predict_relation(det, relation)?;
    Ok(spearman(&RelationPair::new(relation, &predicted)))
}

fn epoch_summary(det: &SurrogateDetector, relations: &[ImageRelation]) -> Result<(f64, f64)> {
    let per_image: Vec<(f64, Option<f64>)> = relations
        .par_iter()
        .map(|r| Ok((detector_loss(det, r)?, clean_rho(det, r)?)))
        .collect::<Result<_>>()?;
    let l_det = compensated_sum(per_image.iter().map(|p| p.0)) / per_image.len() as f64;
    let losses: Vec<f64> = per_image
        .iter()
        .filter_map(|p| p.1.map(knowledge_loss))
        .collect();
    let l_knowledge = if losses.is_empty() {
        0.0
    } else {
        compensated_sum(losses.iter().copied()) / losses.len() as f64
    };
    Ok((l_det, l_knowledge))
}

/// Runs the weighted training loop with the scheme named by `cfg.mode`.
pub fn run_training(
    relations: &[ImageRelation],
    stability: &StabilityMatrix,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let schemes = weighting_schemes();
    run_training_with(relations, stability, cfg, schemes.get(&cfg.mode)?)
}

pub fn run_training_with(
    relations: &[ImageRelation],
    stability: &StabilityMatrix,
    cfg: &TrainConfig,
    scheme: &dyn SampleWeighting,
) -> Result<TrainReport> {
    cfg.validate()?;
    if relations.is_empty() {
        return Err(Error::domain("no training images"));
    }
    let mut classes = std::collections::BTreeSet::new();
    let mut image_s = Vec::with_capacity(relations.len());
    for r in relations {
        let fg = foreground_classes(r)?;
        image_s.push(image_stability(stability, &fg)?);
        classes.extend(fg);
    }
    let mut det = SurrogateDetector::new(classes, &cfg.initial_logits);
    let n = relations.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.perturbation.seed);
        shuffle_rng.set_stream(u64::MAX - epoch as u64);
        order.shuffle(&mut shuffle_rng);

        let mut w_rho = Vec::with_capacity(n);
        let mut w_s = Vec::with_capacity(n);
        for batch in order.chunks(cfg.batch_size) {
            let det_ref = &det;
            let per_image: Vec<(WeightRecord, Gradient)> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.perturbation.seed);
                    rng.set_stream((epoch * n + i) as u64);
                    let rho = worst_case_rho(det_ref, &relations[i], &cfg.perturbation, &mut rng)?;
                    let record =
                        scheme.record(relations[i].image_id, rho, image_s[i], &cfg.weights)?;
                    Ok((record, detector_loss_gradient(det_ref, &relations[i])?))
                })
                .collect::<Result<_>>()?;

            let size = batch.len() as f64;
            let mut grads: BTreeMap<ClassId, [Vec<f64>; 2]> = BTreeMap::new();
            for (record, grad) in &per_image {
                w_rho.push(record.w_rho);
                w_s.push(record.w_s);
                for (c, g) in grad {
                    let slot = grads.entry(*c).or_default();
                    slot[0].push(record.combined * g[0]);
                    slot[1].push(record.combined * g[1]);
                }
            }
            for (c, [ga, gb]) in grads {
                let p = det.logits.get_mut(&c).expect("classes fixed at start");
                p[0] -= cfg.learning_rate * compensated_sum(ga) / size;
                p[1] -= cfg.learning_rate * compensated_sum(gb) / size;
            }
        }

        let (l_det, l_knowledge) = epoch_summary(&det, relations)?;
        let stats = EpochStats {
            epoch: epoch + 1,
            l_det,
            l_knowledge,
            mean_w_rho: compensated_sum(w_rho.iter().copied()) / n as f64,
            mean_w_s: compensated_sum(w_s.iter().copied()) / n as f64,
        };
        if [
            stats.l_det,
            stats.l_knowledge,
            stats.mean_w_rho,
            stats.mean_w_s,
        ]
        .iter()
        .any(|v| !v.is_finite())
        {
            return Err(Error::Numeric(format!(
                "non-finite loss in epoch {}",
                epoch + 1
            )));
        }
        epochs.push(stats);
    }
    Ok(TrainReport {
        mode: cfg.mode.clone(),
        epochs,
        detector: det,
    })
}

/// Two-class training set whose warmer class starts badly detected.
///
/// Half the images hold both classes (class 1 well above class 2 on average),
/// half hold only class 2. A detector initialised with
/// [`TrainConfig::standard`] predicts class 1 too close to the background, so
/// the mixed images start with reversed rank order.
pub fn mispredicted_relation_fixture(seed: u64) -> Vec<ImageRelation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = Normal::new(0.3, 0.03).expect("valid normal");
    let warm = Normal::new(0.4, 0.08).expect("valid normal");
    let mild = Normal::new(0.2, 0.05).expect("valid normal");
    (0..64u64)
        .map(|i| {
            let g0 = background.sample(&mut rng);
            let mut grays = BTreeMap::new();
            if i < 32 {
                grays.insert(ClassId(1), g0 + warm.sample(&mut rng));
            }
            grays.insert(ClassId(2), g0 + mild.sample(&mut rng));
            ImageRelation::new(ImageId(i), g0, grays)
        })
        .collect()
}

/// One-sided exact sign test: probability of at least `wins` successes in
/// `wins + losses` fair coin flips. Ties are dropped by the caller.
pub fn sign_test_p_value(wins: u64, losses: u64) -> f64 {
    let n = wins + losses;
    if wins == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, n).expect("valid binomial");
    1.0 - b.cdf(wins - 1)
}
