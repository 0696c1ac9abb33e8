//! Rank vectors, Spearman correlation and the knowledge loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ClassId, ImageRelation};

/// Ascending fractional ranks aligned with `class_ids`. Ties share the mean
/// of the positions they occupy, so ranks always sum to K(K+1)/2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankVector {
    pub class_ids: Vec<ClassId>,
    pub ranks: Vec<f64>,
}

impl RankVector {
    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    pub fn rank_of(&self, class: ClassId) -> Option<f64> {
        self.class_ids
            .iter()
            .position(|&c| c == class)
            .map(|i| self.ranks[i])
    }
}

/// Fractional ranks of a slice of values (1-based, ties averaged).
pub(crate) fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

pub fn rank_vector(values: &[(ClassId, f64)]) -> Result<RankVector> {
    if values.is_empty() {
        return Err(Error::domain("cannot rank an empty list"));
    }
    if let Some((c, v)) = values.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::domain(format!(
            "class {c} has non-finite gray value {v}"
        )));
    }
    let grays: Vec<f64> = values.iter().map(|&(_, v)| v).collect();
    Ok(RankVector {
        class_ids: values.iter().map(|&(c, _)| c).collect(),
        ranks: fractional_ranks(&grays),
    })
}

/// Annotated and predicted gray values restricted to the classes both carry.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationPair {
    shared_classes: Vec<ClassId>,
    reference: Vec<f64>,
    predicted: Vec<f64>,
}

impl RelationPair {
    /// Pairs the foreground classes of two relations.
    pub fn new(reference: &ImageRelation, predicted: &ImageRelation) -> Self {
        Self::from_values(&reference.foreground(), &predicted.foreground())
    }

    pub fn from_values(reference: &[(ClassId, f64)], predicted: &[(ClassId, f64)]) -> Self {
        let mut pair = Self {
            shared_classes: Vec::new(),
            reference: Vec::new(),
            predicted: Vec::new(),
        };
        for &(class, r) in reference {
            if let Some(&(_, p)) = predicted.iter().find(|(c, _)| *c == class) {
                pair.shared_classes.push(class);
                pair.reference.push(r);
                pair.predicted.push(p);
            }
        }
        pair
    }

    pub fn shared_classes(&self) -> &[ClassId] {
        &self.shared_classes
    }

    pub fn swapped(&self) -> Self {
        Self {
            shared_classes: self.shared_classes.clone(),
            reference: self.predicted.clone(),
            predicted: self.reference.clone(),
        }
    }
}

/// Spearman's ρ over the shared classes, `1 − 6Σd²/(K(K²−1))` on fractional
/// ranks. `None` when fewer than two classes are shared.
pub fn spearman(pair: &RelationPair) -> Option<f64> {
    spearman_of(&pair.reference, &pair.predicted)
}

pub(crate) fn spearman_of(reference: &[f64], predicted: &[f64]) -> Option<f64> {
    let k = reference.len();
    if k < 2 || predicted.len() != k {
        return None;
    }
    let ra = fractional_ranks(reference);
    let rb = fractional_ranks(predicted);
    let d2: f64 = ra.iter().zip(&rb).map(|(a, b)| (a - b) * (a - b)).sum();
    let k = k as f64;
    Some((1.0 - 6.0 * d2 / (k * (k * k - 1.0))).clamp(-1.0, 1.0))
}

/// `1 − ρ`, in `[0, 2]`.
pub fn knowledge_loss(rho: f64) -> f64 {
    1.0 - rho
}

/// Sign of `rank(k) − rank(kt)`: +1, −1, or 0 on a tie.
pub fn sign_relation(ranks: &RankVector, k: ClassId, kt: ClassId) -> Result<i8> {
    let rk = ranks
        .rank_of(k)
        .ok_or_else(|| Error::domain(format!("class {k} is not in the rank vector")))?;
    let rt = ranks
        .rank_of(kt)
        .ok_or_else(|| Error::domain(format!("class {kt} is not in the rank vector")))?;
    Ok(match rk.partial_cmp(&rt) {
        Some(std::cmp::Ordering::Greater) => 1,
        Some(std::cmp::Ordering::Less) => -1,
        _ => 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labelled(values: &[f64]) -> Vec<(ClassId, f64)> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| (ClassId(i as u32 + 1), v))
            .collect()
    }

    #[test]
    fn distinct_values() {
        let r = rank_vector(&labelled(&[5.0, 1.0, 3.0])).unwrap();
        assert_eq!(r.ranks, vec![3.0, 1.0, 2.0]);
    }

    #[test]
    fn two_equal_values() {
        let r = rank_vector(&labelled(&[0.4, 0.4])).unwrap();
        assert_eq!(r.ranks, vec![1.5, 1.5]);
    }

    #[test]
    fn tie_among_four() {
        let r = rank_vector(&labelled(&[0.2, 0.2, 0.7, 0.1])).unwrap();
        assert_eq!(r.ranks, vec![2.5, 2.5, 4.0, 1.0]);
    }

    #[test]
    fn empty_list_is_an_error() {
        assert!(rank_vector(&[]).is_err());
    }

    #[test]
    fn identical_relations() {
        let v = labelled(&[0.1, 0.5, 0.3, 0.9]);
        assert_eq!(spearman(&RelationPair::from_values(&v, &v)), Some(1.0));
    }

    #[test]
    fn reversed_order() {
        let a = labelled(&[1.0, 2.0, 3.0]);
        let b = labelled(&[3.0, 2.0, 1.0]);
        assert_eq!(spearman(&RelationPair::from_values(&a, &b)), Some(-1.0));
    }

    #[test]
    fn one_swap_of_three() {
        // d² = (0, 1, 1) → 1 − 12/24
        let a = labelled(&[10.0, 20.0, 30.0]);
        let b = labelled(&[10.0, 30.0, 20.0]);
        assert_eq!(spearman(&RelationPair::from_values(&a, &b)), Some(0.5));
    }

    #[test]
    fn correlation_needs_two_shared_classes() {
        let a = vec![(ClassId(1), 0.3), (ClassId(2), 0.6)];
        let b = vec![(ClassId(2), 0.1), (ClassId(3), 0.9)];
        let pair = RelationPair::from_values(&a, &b);
        assert_eq!(pair.shared_classes(), &[ClassId(2)]);
        assert_eq!(spearman(&pair), None);
    }

    #[test]
    fn only_shared_classes_count() {
        let a = vec![
            (ClassId(1), 0.1),
            (ClassId(2), 0.2),
            (ClassId(3), 0.3),
            (ClassId(4), 0.0),
        ];
        let b = vec![
            (ClassId(3), 0.9),
            (ClassId(1), 0.1),
            (ClassId(2), 0.5),
            (ClassId(7), 0.4),
        ];
        let pair = RelationPair::from_values(&a, &b);
        assert_eq!(pair.shared_classes(), &[ClassId(1), ClassId(2), ClassId(3)]);
        assert_eq!(spearman(&pair), Some(1.0));
    }

    #[test]
    fn knowledge_loss_values() {
        assert_eq!(knowledge_loss(1.0), 0.0);
        assert_eq!(knowledge_loss(-1.0), 2.0);
        assert_eq!(knowledge_loss(0.0), 1.0);
    }

    #[test]
    fn signs() {
        let r = rank_vector(&labelled(&[0.2, 0.2, 0.7, 0.1])).unwrap();
        assert_eq!(sign_relation(&r, ClassId(3), ClassId(1)).unwrap(), 1);
        assert_eq!(sign_relation(&r, ClassId(1), ClassId(2)).unwrap(), 0);
        assert_eq!(sign_relation(&r, ClassId(3), ClassId(4)).unwrap(), 1);
        assert_eq!(sign_relation(&r, ClassId(4), ClassId(3)).unwrap(), -1);
        assert!(sign_relation(&r, ClassId(9), ClassId(1)).is_err());
    }

    proptest! {
        #[test]
        fn ranks_sum_to_triangular(values in prop::collection::vec(-5.0f64..5.0, 1..12)) {
            let r = rank_vector(&labelled(&values)).unwrap();
            let k = values.len() as f64;
            prop_assert!((r.ranks.iter().sum::<f64>() - k * (k + 1.0) / 2.0).abs() < 1e-9);
        }

        #[test]
        fn ranks_invariant_under_increasing_maps(values in prop::collection::vec(-3.0f64..3.0, 1..10)) {
            let base = rank_vector(&labelled(&values)).unwrap();
            let cubic: Vec<f64> = values.iter().map(|v| v * v * v + v).collect();
            let exp: Vec<f64> = values.iter().map(|v| v.exp()).collect();
            prop_assert_eq!(&rank_vector(&labelled(&cubic)).unwrap().ranks, &base.ranks);
            prop_assert_eq!(&rank_vector(&labelled(&exp)).unwrap().ranks, &base.ranks);
        }

        #[test]
        fn spearman_is_symmetric(
            a in prop::collection::vec(0.0f64..1.0, 2..8),
            b in prop::collection::vec(0.0f64..1.0, 2..8),
        ) {
            let n = a.len().min(b.len());
            let pair = RelationPair::from_values(&labelled(&a[..n]), &labelled(&b[..n]));
            prop_assert_eq!(spearman(&pair), spearman(&pair.swapped()));
        }

        #[test]
        fn sign_is_antisymmetric(values in prop::collection::vec(0.0f64..1.0, 2..8), i in 0usize..8, j in 0usize..8) {
            let n = values.len();
            let (ki, kj) = (ClassId((i % n) as u32 + 1), ClassId((j % n) as u32 + 1));
            let r = rank_vector(&labelled(&values)).unwrap();
            prop_assert_eq!(sign_relation(&r, ki, kj).unwrap(), -sign_relation(&r, kj, ki).unwrap());
        }
    }
}
