//! Stability of pairwise thermal-radiation relations.
//!
//! The empirical measure is the magnitude of the mean rank-difference sign of
//! two classes over the images where both occur. Under Gaussian class
//! statistics it has the closed form `|1 − 2Φ(−Δμ/σ_Δ)|`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ClassId, ImageRelation};
use crate::normal;
use crate::rankcore::{rank_vector, sign_relation};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianClassPair {
    pub mu_k: f64,
    pub sigma_k: f64,
    pub mu_kt: f64,
    pub sigma_kt: f64,
}

/// `φ = |1 − 2Φ(−(μ_k − μ_k̃)/σ_Δ)|` with `σ_Δ = √(σ_k² + σ_k̃²)`.
pub fn closed_form_stability(pair: &GaussianClassPair) -> Result<f64> {
    if pair.sigma_k < 0.0 || pair.sigma_kt < 0.0 {
        return Err(Error::domain(
            "class standard deviations must be nonnegative",
        ));
    }
    let sigma = pair.sigma_k.hypot(pair.sigma_kt);
    let gap = pair.mu_k - pair.mu_kt;
    if sigma == 0.0 {
        return if gap == 0.0 {
            Err(Error::domain("degenerate pair"))
        } else {
            Ok(1.0)
        };
    }
    Ok((1.0 - 2.0 * normal::cdf(-gap / sigma)).abs())
}

/// Symmetric matrix of empirical pair stabilities with co-occurrence counts.
///
/// Pairs that never co-occur are absent (`None`), not zero.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilityMatrix {
    class_ids: Vec<ClassId>,
    varphi: Vec<Option<f64>>,
    counts: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityEntry {
    pub k: ClassId,
    pub kt: ClassId,
    pub varphi: Option<f64>,
    pub count: u64,
}

impl StabilityMatrix {
    pub fn class_ids(&self) -> &[ClassId] {
        &self.class_ids
    }

    fn index(&self, class: ClassId) -> Option<usize> {
        self.class_ids.binary_search(&class).ok()
    }

    /// `φ̂` for a pair of distinct classes, `None` when absent.
    pub fn get(&self, k: ClassId, kt: ClassId) -> Option<f64> {
        let (i, j) = (self.index(k)?, self.index(kt)?);
        if i == j {
            return None;
        }
        self.varphi[i * self.class_ids.len() + j]
    }

    pub fn count(&self, k: ClassId, kt: ClassId) -> u64 {
        match (self.index(k), self.index(kt)) {
            (Some(i), Some(j)) if i != j => self.counts[i * self.class_ids.len() + j],
            _ => 0,
        }
    }

    /// Unordered pairs `k < kt`, including absent ones.
    pub fn entries(&self) -> Vec<StabilityEntry> {
        let n = self.class_ids.len();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push(StabilityEntry {
                    k: self.class_ids[i],
                    kt: self.class_ids[j],
                    varphi: self.varphi[i * n + j],
                    count: self.counts[i * n + j],
                });
            }
        }
        out
    }

    pub fn from_entries(class_ids: Vec<ClassId>, entries: &[StabilityEntry]) -> Result<Self> {
        let mut ids = class_ids;
        ids.sort();
        ids.dedup();
        let n = ids.len();
        let mut m = Self {
            class_ids: ids,
            varphi: vec![None; n * n],
            counts: vec![0; n * n],
        };
        for e in entries {
            let (i, j) = match (m.index(e.k), m.index(e.kt)) {
                (Some(i), Some(j)) if i != j => (i, j),
                _ => {
                    return Err(Error::domain(format!(
                        "stability entry ({}, {}) is not a valid pair",
                        e.k, e.kt
                    )))
                }
            };
            if let Some(v) = e.varphi {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::domain(format!(
                        "stability of ({}, {}) is {v}, outside [0, 1]",
                        e.k, e.kt
                    )));
                }
            }
            let varphi = if e.count == 0 { None } else { e.varphi };
            for (a, b) in [(i, j), (j, i)] {
                m.varphi[a * n + b] = varphi;
                m.counts[a * n + b] = e.count;
            }
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, Default)]
struct SignCounters {
    // keyed by (row, col) indices into class_ids, row < col
    sums: Vec<i64>,
    counts: Vec<u64>,
}

impl SignCounters {
    fn new(n: usize) -> Self {
        Self {
            sums: vec![0; n * n],
            counts: vec![0; n * n],
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.sums.iter_mut().zip(other.sums) {
            *a += b;
        }
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
        self
    }
}

/// Builds `φ̂` for every class pair from per-image rank relations.
///
/// Ranks are taken over `{G_0, G_1, …}` with the background as class 0.
/// Counters are integers, so the parallel merge is exact.
pub fn empirical_stability(relations: &[ImageRelation]) -> Result<StabilityMatrix> {
    if relations.is_empty() {
        return Err(Error::domain(
            "no image relations to estimate stability from",
        ));
    }
    let mut class_ids: Vec<ClassId> = std::iter::once(ClassId::BACKGROUND)
        .chain(relations.iter().flat_map(|r| r.class_ids()))
        .collect();
    class_ids.sort();
    class_ids.dedup();
    let n = class_ids.len();
    let index = |c: ClassId| class_ids.binary_search(&c).expect("class collected above");

    let counters = relations
        .par_iter()
        .try_fold(
            || SignCounters::new(n),
            |mut acc, rel| -> Result<SignCounters> {
                let values = rel.with_background();
                let ranks = rank_vector(&values)?;
                for (a, &(ka, _)) in values.iter().enumerate() {
                    for &(kb, _) in &values[a + 1..] {
                        let (i, j) = (index(ka), index(kb));
                        let (lo, hi, s) = if i < j {
                            (i, j, sign_relation(&ranks, ka, kb)?)
                        } else {
                            (j, i, sign_relation(&ranks, kb, ka)?)
                        };
                        acc.sums[lo * n + hi] += i64::from(s);
                        acc.counts[lo * n + hi] += 1;
                    }
                }
                Ok(acc)
            },
        )
        .try_reduce(|| SignCounters::new(n), |a, b| Ok(a.merge(b)))?;

    let mut varphi = vec![None; n * n];
    let mut counts = vec![0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let c = counters.counts[i * n + j];
            let v = (c > 0).then(|| (counters.sums[i * n + j] as f64 / c as f64).abs());
            for (a, b) in [(i, j), (j, i)] {
                varphi[a * n + b] = v;
                counts[a * n + b] = c;
            }
        }
    }
    Ok(StabilityMatrix {
        class_ids,
        varphi,
        counts,
    })
}

/// Mean pairwise stability of the classes in one image,
/// `S_x = Σ_{k≠k̃} φ̂_{kk̃} / (K(K−1))` over ordered pairs.
///
/// Returns `Ok(None)` for images with fewer than two classes.
pub fn image_stability(
    matrix: &StabilityMatrix,
    classes_in_image: &[ClassId],
) -> Result<Option<f64>> {
    let mut classes = classes_in_image.to_vec();
    classes.sort();
    classes.dedup();
    let k = classes.len();
    if k < 2 {
        return Ok(None);
    }
    let mut missing = Vec::new();
    let mut total = 0.0;
    for &a in &classes {
        for &b in &classes {
            if a == b {
                continue;
            }
            match matrix.get(a, b) {
                Some(v) => total += v,
                None if a < b => missing.push(format!("({a}, {b})")),
                None => {}
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::domain(format!(
            "stability missing for pairs {}",
            missing.join(", ")
        )));
    }
    Ok(Some(total / (k * (k - 1)) as f64))
}
