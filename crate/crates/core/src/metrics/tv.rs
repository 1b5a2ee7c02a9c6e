use std::collections::BTreeMap;

/// Upper bound on explicitly enumerated sequences per context.
pub const MAX_ENUMERATED_SEQUENCES: usize = 100_000;

/// `½ Σ |p - q|` over the union of both supports.
pub fn tv_distance<K: Ord + Clone>(p: &BTreeMap<K, f64>, q: &BTreeMap<K, f64>) -> f64 {
    let mut sum = 0.0;
    for (k, pv) in p {
        sum += (pv - q.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, qv) in q {
        if !p.contains_key(k) {
            sum += qv.abs();
        }
    }
    0.5 * sum
}

/// TV distance between a normalized model and a ground truth given on its
/// support only. Model mass outside the truth support is `1 - Σ P̂(s)`.
pub fn tv_against_truth<K>(truth: &[(K, f64)], model_prob: impl Fn(&K) -> f64) -> f64 {
    let mut on_support = 0.0;
    let mut covered = 0.0;
    for (s, p) in truth {
        let m = model_prob(s);
        covered += m;
        on_support += (m - p).abs();
    }
    (0.5 * (on_support + (1.0 - covered).max(0.0))).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_against_point_mass() {
        let k = 8;
        let truth = vec![(0usize, 1.0)];
        let tv = tv_against_truth(&truth, |_| 1.0 / k as f64);
        assert!((tv - (k - 1) as f64 / k as f64).abs() < 1e-15);
        let p: BTreeMap<usize, f64> = [(0, 1.0)].into();
        let q: BTreeMap<usize, f64> = (0..k).map(|i| (i, 1.0 / k as f64)).collect();
        assert!((tv_distance(&p, &q) - tv).abs() < 1e-15);
        assert_eq!(tv_distance(&q, &q), 0.0);
    }
}
