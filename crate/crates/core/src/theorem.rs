//! Expected rank agreement of a detector under the Gaussian class model.
//!
//! Each class `i` has a gray offset from the background distributed as
//! `N(μ̃_i, σ_i²)`; a detector of quality `E_i` sees the offset shrunk by
//! `E_i`. The expected Spearman ρ between predicted and true class order is
//! a sum over all orderings of the classes, each weighted by a
//! [`PermutationWeighting`] engine. A Monte Carlo estimator samples the
//! generative model directly and serves as an independent check.

use std::collections::BTreeMap;

use itertools::Itertools;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ClassId;
use crate::normal;
use crate::rankcore::fractional_ranks;
use crate::registry::Registry;

/// Per-class detection quality `E_i = E[P_i]·E[S̃/S]`, each in `(0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DetectorQuality(pub BTreeMap<ClassId, f64>);

impl DetectorQuality {
    pub fn get(&self, class: ClassId) -> Result<f64> {
        self.0
            .get(&class)
            .copied()
            .ok_or_else(|| Error::domain(format!("no detection quality for class {class}")))
    }

    fn validate(&self) -> Result<()> {
        for (c, &e) in &self.0 {
            if !(e > 0.0 && e <= 1.0) {
                return Err(Error::domain(format!(
                    "quality of class {c} is {e}, outside (0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// `G_i = μ_0 + (μ_i − μ_0)·E_i`.
pub fn predicted_class_gray(
    quality: &DetectorQuality,
    mu0: f64,
    mu_i: f64,
    class: ClassId,
) -> Result<f64> {
    Ok(mu0 + (mu_i - mu0) * quality.get(class)?)
}

/// Mean predicted probability times mean overlap ratio over a class's boxes.
pub fn detection_quality(probs: &[f64], overlaps: &[f64]) -> Result<f64> {
    if probs.is_empty() || probs.len() != overlaps.len() {
        return Err(Error::domain(format!(
            "need equal-length nonempty lists, got {} probabilities and {} overlaps",
            probs.len(),
            overlaps.len()
        )));
    }
    if probs
        .iter()
        .chain(overlaps)
        .any(|v| !(0.0..=1.0).contains(v))
    {
        return Err(Error::domain(
            "probabilities and overlap ratios must lie in [0, 1]",
        ));
    }
    let n = probs.len() as f64;
    Ok(probs.iter().sum::<f64>() / n * (overlaps.iter().sum::<f64>() / n))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassOffset {
    pub class_id: ClassId,
    /// Mean offset from the background, μ̃.
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct ModelClass {
    id: ClassId,
    mu: f64,
    sigma: f64,
    quality: f64,
}

/// Class offsets plus detector quality. Classes are kept in reference order
/// (ascending μ̃, ties by id), which is the order predictions are scored
/// against.
#[derive(Clone, Debug, PartialEq)]
pub struct TheoremModel {
    classes: Vec<ModelClass>,
}

/// Serialized form: `{ "offsets": [...], "quality": { "<id>": E } }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremModelSpec {
    pub offsets: Vec<ClassOffset>,
    pub quality: DetectorQuality,
}

impl TheoremModel {
    pub fn new(offsets: &[ClassOffset], quality: &DetectorQuality) -> Result<Self> {
        if offsets.len() < 2 {
            return Err(Error::domain("a theorem model needs at least two classes"));
        }
        quality.validate()?;
        let mut classes = Vec::with_capacity(offsets.len());
        for o in offsets {
            if !(o.sigma > 0.0 && o.sigma.is_finite() && o.mu.is_finite()) {
                return Err(Error::domain(format!(
                    "class {} needs finite mean and positive sigma, got ({}, {})",
                    o.class_id, o.mu, o.sigma
                )));
            }
            if classes.iter().any(|c: &ModelClass| c.id == o.class_id) {
                return Err(Error::domain(format!("class {} listed twice", o.class_id)));
            }
            classes.push(ModelClass {
                id: o.class_id,
                mu: o.mu,
                sigma: o.sigma,
                quality: quality.get(o.class_id)?,
            });
        }
        if quality.0.len() != classes.len() {
            return Err(Error::domain("quality lists classes without offsets"));
        }
        classes.sort_by(|a, b| a.mu.total_cmp(&b.mu).then(a.id.cmp(&b.id)));
        Ok(Self { classes })
    }

    pub fn from_spec(spec: &TheoremModelSpec) -> Result<Self> {
        Self::new(&spec.offsets, &spec.quality)
    }

    pub fn to_spec(&self) -> TheoremModelSpec {
        TheoremModelSpec {
            offsets: self.offsets(),
            quality: self.quality(),
        }
    }

    pub fn k(&self) -> usize {
        self.classes.len()
    }

    /// Class ids in reference order.
    pub fn class_ids(&self) -> Vec<ClassId> {
        self.classes.iter().map(|c| c.id).collect()
    }

    pub fn offsets(&self) -> Vec<ClassOffset> {
        self.classes
            .iter()
            .map(|c| ClassOffset {
                class_id: c.id,
                mu: c.mu,
                sigma: c.sigma,
            })
            .collect()
    }

    pub fn quality(&self) -> DetectorQuality {
        DetectorQuality(self.classes.iter().map(|c| (c.id, c.quality)).collect())
    }

    /// Same offsets, different detector.
    pub fn with_quality(&self, quality: &DetectorQuality) -> Result<Self> {
        Self::new(&self.offsets(), quality)
    }

    fn index(&self, class: ClassId) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c.id == class)
            .ok_or_else(|| Error::domain(format!("class {class} is not in the model")))
    }

    /// Mean and standard deviation of the predicted offset `E_i·(μ_i − μ_0)`.
    fn predicted_moments(&self, i: usize) -> (f64, f64) {
        let c = &self.classes[i];
        (c.quality * c.mu, c.quality * c.sigma)
    }

    fn pair_prob_idx(&self, i: usize, j: usize) -> f64 {
        let (mi, si) = self.predicted_moments(i);
        let (mj, sj) = self.predicted_moments(j);
        normal::cdf((mi - mj) / si.hypot(sj))
    }
}

/// `P(G_i > G_j) = Φ((E_i μ̃_i − E_j μ̃_j)/√(E_i²σ_i² + E_j²σ_j²))`.
pub fn pair_order_prob(model: &TheoremModel, i: ClassId, j: ClassId) -> Result<f64> {
    if i == j {
        return Err(Error::domain(format!(
            "pair order of class {i} with itself"
        )));
    }
    Ok(model.pair_prob_idx(model.index(i)?, model.index(j)?))
}

/// Weights an ordering of the classes (listed from lowest to highest
/// predicted gray, as indices into the model's reference order).
pub trait PermutationWeighting: Send + Sync {
    /// Largest class count the engine enumerates exactly.
    fn max_classes(&self) -> usize;

    /// Per-model precomputation shared by every ordering.
    fn prepare<'m>(&self, model: &'m TheoremModel) -> Box<dyn OrderingWeight + 'm>;
}

pub trait OrderingWeight: Send + Sync {
    fn weight(&self, order: &[usize]) -> f64;
}

/// Product of the adjacent marginal pair probabilities
/// `Π P(X(τ(m+1), τ(m)) > 0)`; weights do not sum to one.
pub struct MarginalPairs;

/// Exact chain of conditional probabilities, which telescopes to
/// `P(G_τ(1) < … < G_τ(k))` for independent Gaussian offsets. Evaluated by
/// nested trapezoidal quadrature on a shared grid.
pub struct ChainRule {
    pub grid_points: usize,
}

impl Default for ChainRule {
    fn default() -> Self {
        Self { grid_points: 4001 }
    }
}

struct MarginalWeight<'a> {
    model: &'a TheoremModel,
}

impl OrderingWeight for MarginalWeight<'_> {
    fn weight(&self, order: &[usize]) -> f64 {
        order
            .windows(2)
            .map(|w| self.model.pair_prob_idx(w[1], w[0]))
            .product()
    }
}

impl PermutationWeighting for MarginalPairs {
    fn max_classes(&self) -> usize {
        8
    }

    fn prepare<'m>(&self, model: &'m TheoremModel) -> Box<dyn OrderingWeight + 'm> {
        Box::new(MarginalWeight { model })
    }
}

struct ChainWeight {
    step: f64,
    // density of each class's predicted offset on the shared grid
    densities: Vec<Vec<f64>>,
}

impl OrderingWeight for ChainWeight {
    fn weight(&self, order: &[usize]) -> f64 {
        let n = self.densities[0].len();
        let h = self.step;
        let mut g = self.densities[order[0]].clone();
        let mut cum = vec![0.0; n];
        for &next in &order[1..] {
            // cum[t] = ∫_{-∞}^{y_t} g
            cum[0] = 0.0;
            for t in 1..n {
                cum[t] = cum[t - 1] + 0.5 * h * (g[t - 1] + g[t]);
            }
            for (t, gt) in g.iter_mut().enumerate() {
                *gt = self.densities[next][t] * cum[t];
            }
        }
        let interior: f64 = g[1..n - 1].iter().sum();
        h * (interior + 0.5 * (g[0] + g[n - 1]))
    }
}

impl PermutationWeighting for ChainRule {
    fn max_classes(&self) -> usize {
        6
    }

    fn prepare<'m>(&self, model: &'m TheoremModel) -> Box<dyn OrderingWeight + 'm> {
        let moments: Vec<(f64, f64)> = (0..model.k()).map(|i| model.predicted_moments(i)).collect();
        let lo = moments
            .iter()
            .map(|(m, s)| m - 9.0 * s)
            .fold(f64::INFINITY, f64::min);
        let hi = moments
            .iter()
            .map(|(m, s)| m + 9.0 * s)
            .fold(f64::NEG_INFINITY, f64::max);
        let n = self.grid_points.max(3);
        let step = (hi - lo) / (n - 1) as f64;
        let densities = moments
            .iter()
            .map(|&(m, s)| {
                (0..n)
                    .map(|t| normal::pdf((lo + step * t as f64 - m) / s) / s)
                    .collect()
            })
            .collect();
        Box::new(ChainWeight { step, densities })
    }
}

/// Built-in permutation-weighting engines by name.
pub fn permutation_engines() -> Registry<dyn PermutationWeighting> {
    let mut reg: Registry<dyn PermutationWeighting> = Registry::new("permutation engine");
    reg.register("marginal", Box::new(MarginalPairs))
        .register("chain-rule", Box::new(ChainRule::default()));
    reg
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationTerm {
    /// Classes from lowest to highest predicted gray.
    pub order: Vec<ClassId>,
    pub weight: f64,
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectationReport {
    pub e_rho: f64,
    pub partition_z: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_permutation: Option<Vec<PermutationTerm>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_estimate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_stderr: Option<f64>,
}

/// Spearman ρ between an ordering and the identity order.
fn ordering_rho(order: &[usize]) -> f64 {
    let k = order.len() as f64;
    let d2: f64 = order
        .iter()
        .enumerate()
        .map(|(pos, &c)| {
            let d = pos as f64 - c as f64;
            d * d
        })
        .sum();
    1.0 - 6.0 * d2 / (k * (k * k - 1.0))
}

/// Neumaier-compensated sum; the result does not depend on thread count
/// because terms arrive in a fixed order.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `E[ρ] = Σ_τ w(τ)·ρ_τ / Z` over every ordering of the model's classes.
pub fn expected_spearman(
    model: &TheoremModel,
    engine: &dyn PermutationWeighting,
    keep_terms: bool,
) -> Result<ExpectationReport> {
    let k = model.k();
    if k > engine.max_classes() {
        return Err(Error::Capacity(format!(
            "exact enumeration supports at most {} classes (got {k}); use the Monte Carlo estimator",
            engine.max_classes()
        )));
    }
    let weigher = engine.prepare(model);
    let orders: Vec<Vec<usize>> = (0..k).permutations(k).collect();
    let terms: Vec<(f64, f64)> = orders
        .par_iter()
        .map(|order| (weigher.weight(order), ordering_rho(order)))
        .collect();

    let z = compensated_sum(terms.iter().map(|t| t.0));
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::Numeric(format!("partition function is {z}")));
    }
    let e_rho = (compensated_sum(terms.iter().map(|&(w, r)| w * r)) / z).clamp(-1.0, 1.0);
    let ids = model.class_ids();
    let per_permutation = keep_terms.then(|| {
        orders
            .iter()
            .zip(&terms)
            .map(|(order, &(weight, rho))| PermutationTerm {
                order: order.iter().map(|&i| ids[i]).collect(),
                weight,
                rho,
            })
            .collect()
    });
    Ok(ExpectationReport {
        e_rho,
        partition_z: z,
        per_permutation,
        mc_estimate: None,
        mc_stderr: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
}

const MC_BLOCK: usize = 4096;

/// Samples class offsets from the model, ranks the predicted grays, and
/// averages ρ against the reference order. Block `b` draws from its own
/// ChaCha stream, so the result is independent of the thread count.
pub fn monte_carlo_expected_spearman(
    model: &TheoremModel,
    n_samples: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if n_samples < 1000 {
        return Err(Error::domain(format!(
            "Monte Carlo needs at least 1000 samples, got {n_samples}"
        )));
    }
    let k = model.k();
    let moments: Vec<(f64, f64)> = (0..k).map(|i| model.predicted_moments(i)).collect();
    let reference: Vec<f64> = (1..=k).map(|r| r as f64).collect();
    let blocks = n_samples.div_ceil(MC_BLOCK);

    let rhos: Vec<f64> = (0..blocks)
        .into_par_iter()
        .flat_map_iter(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = MC_BLOCK.min(n_samples - b * MC_BLOCK);
            let moments = &moments;
            let reference = &reference;
            let mut grays = vec![0.0; k];
            (0..count)
                .map(move |_| {
                    for (g, &(m, s)) in grays.iter_mut().zip(moments) {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *g = m + s * z;
                    }
                    let ranks = fractional_ranks(&grays);
                    let d2: f64 = ranks
                        .iter()
                        .zip(reference)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    let kf = k as f64;
                    1.0 - 6.0 * d2 / (kf * (kf * kf - 1.0))
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let n = rhos.len() as f64;
    let mean = compensated_sum(rhos.iter().copied()) / n;
    let var = compensated_sum(rhos.iter().map(|r| (r - mean) * (r - mean))) / (n - 1.0);
    Ok(MonteCarloEstimate {
        estimate: mean,
        stderr: (var / n).sqrt(),
        samples: rhos.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremComparison {
    pub e_rho_1: f64,
    pub e_rho_2: f64,
    pub knowledge_loss_1: f64,
    pub knowledge_loss_2: f64,
    /// `E₂[ρ] > E₁[ρ]`.
    pub improved: bool,
}

/// Checks that model 2 shares model 1's offsets and improves every quality
/// ratio `E_i/E_j` with `μ̃_i > μ̃_j`.
pub fn check_ratio_precondition(model1: &TheoremModel, model2: &TheoremModel) -> Result<()> {
    if model1.offsets() != model2.offsets() {
        return Err(Error::Precondition(
            "the two models must share class offsets".into(),
        ));
    }
    let (a, b) = (&model1.classes, &model2.classes);
    for i in 0..a.len() {
        for j in 0..a.len() {
            if a[i].mu > a[j].mu {
                let r1 = a[i].quality / a[j].quality;
                let r2 = b[i].quality / b[j].quality;
                if r2 <= r1 {
                    return Err(Error::Precondition(format!(
                        "quality ratio E_{}/E_{} does not improve ({r1} -> {r2})",
                        a[i].id, a[j].id
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Compares the expected knowledge loss of two detectors on the same world.
pub fn compare_detectors(
    model1: &TheoremModel,
    model2: &TheoremModel,
    engine: &dyn PermutationWeighting,
) -> Result<TheoremComparison> {
    check_ratio_precondition(model1, model2)?;
    let e1 = expected_spearman(model1, engine, false)?.e_rho;
    let e2 = expected_spearman(model2, engine, false)?.e_rho;
    Ok(TheoremComparison {
        e_rho_1: e1,
        e_rho_2: e2,
        knowledge_loss_1: 1.0 - e1,
        knowledge_loss_2: 1.0 - e2,
        improved: e2 > e1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn model(quality: &[f64], mu: &[f64], sigma: &[f64]) -> TheoremModel {
        let offsets: Vec<_> = mu
            .iter()
            .zip(sigma)
            .enumerate()
            .map(|(i, (&mu, &sigma))| ClassOffset {
                class_id: ClassId(i as u32 + 1),
                mu,
                sigma,
            })
            .collect();
        let q = DetectorQuality(
            quality
                .iter()
                .enumerate()
                .map(|(i, &e)| (ClassId(i as u32 + 1), e))
                .collect(),
        );
        TheoremModel::new(&offsets, &q).unwrap()
    }

    #[test]
    fn predicted_gray_examples() {
        let q = |e| DetectorQuality([(ClassId(1), e)].into());
        assert!((predicted_class_gray(&q(1.0), 0.2, 0.9, ClassId(1)).unwrap() - 0.9).abs() < 1e-15);
        assert!((predicted_class_gray(&q(1e-9), 0.2, 0.9, ClassId(1)).unwrap() - 0.2).abs() < 1e-8);
        assert!((predicted_class_gray(&q(0.5), 0.3, 0.7, ClassId(1)).unwrap() - 0.5).abs() < 1e-15);
        assert!(predicted_class_gray(&q(0.5), 0.3, 0.7, ClassId(2)).is_err());
    }

    #[test]
    fn detection_quality_examples() {
        assert_eq!(detection_quality(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(detection_quality(&[0.5, 0.5], &[1.0, 1.0]).unwrap(), 0.5);
        assert!((detection_quality(&[0.8, 0.6], &[0.9, 0.5]).unwrap() - 0.49).abs() < 1e-15);
        assert!(detection_quality(&[], &[]).is_err());
        assert!(detection_quality(&[0.5], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn pair_probability_examples() {
        let sym = model(&[0.7, 0.7], &[0.2, 0.2], &[0.1, 0.1]);
        assert_eq!(pair_order_prob(&sym, ClassId(1), ClassId(2)).unwrap(), 0.5);

        let m = model(&[1.0, 1.0], &[0.3, 0.1], &[0.1, 0.1]);
        let p = pair_order_prob(&m, ClassId(1), ClassId(2)).unwrap();
        assert!((p - 0.921_350_396_474_857_5).abs() < 1e-4);
        assert!(pair_order_prob(&m, ClassId(1), ClassId(1)).is_err());
    }

    #[test]
    fn pair_probability_matches_ratio_form() {
        let m = model(&[0.4, 0.9], &[0.25, 0.1], &[0.08, 0.05]);
        let (ei, ej, mi, mj, si, sj) = (0.4f64, 0.9f64, 0.25f64, 0.1f64, 0.08f64, 0.05f64);
        let r = ei / ej;
        let ratio_form = normal::cdf((r * mi - mj) / (r * r * si * si + sj * sj).sqrt());
        assert!((pair_order_prob(&m, ClassId(1), ClassId(2)).unwrap() - ratio_form).abs() < 1e-12);
    }

    #[test]
    fn pair_probabilities_are_complementary() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let m = model(
                &[rng.random_range(0.05..1.0), rng.random_range(0.05..1.0)],
                &[rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)],
                &[rng.random_range(0.01..0.3), rng.random_range(0.01..0.3)],
            );
            let p = pair_order_prob(&m, ClassId(1), ClassId(2)).unwrap();
            let q = pair_order_prob(&m, ClassId(2), ClassId(1)).unwrap();
            assert!((p + q - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_class_symmetric_model() {
        let m = model(&[0.8, 0.8], &[0.2, 0.2], &[0.1, 0.1]);
        let r = expected_spearman(&m, &MarginalPairs, true).unwrap();
        assert_eq!(r.e_rho, 0.0);
        let terms = r.per_permutation.unwrap();
        assert_eq!(terms.len(), 2);
        assert!(terms.iter().all(|t| t.weight == 0.5 && t.rho.abs() == 1.0));
    }

    #[test]
    fn two_class_certain_order() {
        let m = model(&[1.0, 1.0], &[0.0, 1.0], &[0.01, 0.01]);
        assert_eq!(
            expected_spearman(&m, &MarginalPairs, false).unwrap().e_rho,
            1.0
        );
    }

    #[test]
    fn weights_sum_to_partition_function() {
        let m = model(
            &[0.5, 0.8, 0.6, 0.9],
            &[0.1, 0.3, 0.15, 0.2],
            &[0.05, 0.1, 0.08, 0.02],
        );
        for engine in [
            &MarginalPairs as &dyn PermutationWeighting,
            &ChainRule::default(),
        ] {
            let r = expected_spearman(&m, engine, true).unwrap();
            let terms = r.per_permutation.unwrap();
            let total = compensated_sum(terms.iter().map(|t| t.weight));
            assert!((total - r.partition_z).abs() < 1e-12);
            assert!(
                (compensated_sum(terms.iter().map(|t| t.weight / r.partition_z)) - 1.0).abs()
                    < 1e-12
            );
        }
    }

    #[test]
    fn chain_rule_orderings_form_a_distribution() {
        let m = model(&[0.5, 0.8, 0.6], &[0.1, 0.3, 0.15], &[0.05, 0.1, 0.08]);
        let r = expected_spearman(&m, &ChainRule::default(), false).unwrap();
        assert!((r.partition_z - 1.0).abs() < 1e-6, "Z = {}", r.partition_z);
    }

    #[test]
    fn capacity_limits() {
        let mu: Vec<f64> = (0..9).map(|i| i as f64 * 0.1).collect();
        let m = model(&[1.0; 9], &mu, &[0.1; 9]);
        assert!(matches!(
            expected_spearman(&m, &MarginalPairs, false),
            Err(Error::Capacity(_))
        ));
        let m7 = model(&[1.0; 7], &mu[..7], &[0.1; 7]);
        assert!(matches!(
            expected_spearman(&m7, &ChainRule::default(), false),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn relabeling_leaves_expectation_unchanged() {
        let a = model(
            &[0.5, 0.8, 0.6, 0.9],
            &[0.1, 0.3, 0.15, 0.2],
            &[0.05, 0.1, 0.08, 0.02],
        );
        // same classes, listed in a different order and under different ids
        let perm = [2usize, 0, 3, 1];
        let offsets: Vec<_> = a
            .offsets()
            .iter()
            .enumerate()
            .map(|(i, o)| ClassOffset {
                class_id: ClassId(10 + perm[i] as u32),
                ..*o
            })
            .collect();
        let quality = DetectorQuality(
            a.classes
                .iter()
                .enumerate()
                .map(|(i, c)| (ClassId(10 + perm[i] as u32), c.quality))
                .collect(),
        );
        let b = TheoremModel::new(&offsets, &quality).unwrap();
        for engine in [
            &MarginalPairs as &dyn PermutationWeighting,
            &ChainRule::default(),
        ] {
            let ea = expected_spearman(&a, engine, false).unwrap().e_rho;
            let eb = expected_spearman(&b, engine, false).unwrap().e_rho;
            assert!((ea - eb).abs() < 1e-12);
        }
    }

    #[test]
    fn improving_the_hottest_class_never_hurts() {
        let mu = [0.1, 0.2, 0.3, 0.4];
        let sigma = [0.08, 0.06, 0.1, 0.07];
        let mut prev = f64::NEG_INFINITY;
        for step in 0..10 {
            let e_top = 0.3 + 0.07 * step as f64;
            let e = expected_spearman(
                &model(&[0.6, 0.5, 0.7, e_top], &mu, &sigma),
                &MarginalPairs,
                false,
            )
            .unwrap()
            .e_rho;
            assert!(e >= prev - 1e-12);
            prev = e;
        }
    }

    #[test]
    fn monte_carlo_noiseless_model() {
        let m = model(&[0.6, 0.7, 0.9], &[0.1, 0.2, 0.3], &[1e-12; 3]);
        let mc = monte_carlo_expected_spearman(&m, 2000, 1).unwrap();
        assert_eq!(mc.estimate, 1.0);
        assert_eq!(mc.stderr, 0.0);
    }

    #[test]
    fn monte_carlo_symmetric_model() {
        let m = model(&[0.6, 0.6], &[0.2, 0.2], &[0.1, 0.1]);
        let mc = monte_carlo_expected_spearman(&m, 20_000, 3).unwrap();
        assert!(mc.estimate.abs() < 3.0 * mc.stderr, "{mc:?}");
    }

    #[test]
    fn monte_carlo_is_seed_deterministic() {
        let m = model(&[0.6, 0.7, 0.9], &[0.1, 0.2, 0.3], &[0.1; 3]);
        let a = monte_carlo_expected_spearman(&m, 10_000, 5).unwrap();
        let b = monte_carlo_expected_spearman(&m, 10_000, 5).unwrap();
        assert_eq!(a, b);
        assert!(monte_carlo_expected_spearman(&m, 999, 5).is_err());
    }

    #[test]
    fn common_scaling_fails_the_precondition() {
        let m1 = model(&[0.5, 0.6, 0.7], &[0.1, 0.2, 0.3], &[0.08; 3]);
        let m2 = model(&[0.25, 0.3, 0.35], &[0.1, 0.2, 0.3], &[0.08; 3]);
        let e1 = expected_spearman(&m1, &MarginalPairs, false).unwrap().e_rho;
        let e2 = expected_spearman(&m2, &MarginalPairs, false).unwrap().e_rho;
        assert!((e1 - e2).abs() < 1e-12);
        let err = compare_detectors(&m1, &m2, &MarginalPairs).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)), "{err}");
    }

    #[test]
    fn improved_ratios_improve_expectation() {
        let m1 = model(&[0.5, 0.5, 0.5], &[0.1, 0.2, 0.3], &[0.08; 3]);
        let m2 = model(&[0.4, 0.5, 0.625], &[0.1, 0.2, 0.3], &[0.08; 3]);
        for engine in [
            &MarginalPairs as &dyn PermutationWeighting,
            &ChainRule::default(),
        ] {
            let c = compare_detectors(&m1, &m2, engine).unwrap();
            assert!(c.improved, "{c:?}");
            assert!((c.knowledge_loss_1 - (1.0 - c.e_rho_1)).abs() < 1e-15);
        }
    }

    #[test]
    fn mismatched_offsets_are_rejected() {
        let m1 = model(&[0.5, 0.5], &[0.1, 0.2], &[0.08; 2]);
        let m2 = model(&[0.4, 0.6], &[0.1, 0.25], &[0.08; 2]);
        assert!(matches!(
            compare_detectors(&m1, &m2, &MarginalPairs),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn engines_are_registered() {
        let reg = permutation_engines();
        assert_eq!(reg.names().collect::<Vec<_>>(), ["chain-rule", "marginal"]);
    }

    #[test]
    fn spec_round_trip() {
        let m = model(&[0.5, 0.8, 0.6], &[0.3, 0.1, 0.15], &[0.05, 0.1, 0.08]);
        assert_eq!(TheoremModel::from_spec(&m.to_spec()).unwrap(), m);
        assert_eq!(m.class_ids(), vec![ClassId(2), ClassId(3), ClassId(1)]);
    }
}
