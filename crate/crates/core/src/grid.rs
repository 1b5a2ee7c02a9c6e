//! Arrival-class discretization.
//!
//! An order's arrivals are re-indexed as `(k, share)` tuples: `k` periods
//! since the previous nonzero arrival (the first measured from the period
//! before the order, so `k >= 1`) and `share` the arrival quantity as a
//! fraction of the order. Each tuple falls into one half-open class
//! `[tau_n, tau_{n+1}) x [p_m, p_{m+1})`, where the gap axis bins the number
//! of idle periods `k - 1`. Class `(0, 0)` is the end-of-sequence sentinel.
//!
//! With gap edges `0, 1, 2, 3` and share edges `0, 0.2, ..., 1.0`, an order
//! of 10 receiving `<0, 3, 5, 0, 4>` becomes tuples `(2, 0.3), (1, 0.5),
//! (2, 0.4)` and classes `(2,2), (1,3), (2,3), (0,0)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GRID_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("{axis} edges must start at 0, be strictly increasing and have at least two points")]
    BadEdges { axis: &'static str },
    #[error("arrival tuple (gap {gap}, share {share}) is outside the grid")]
    OutOfRange { gap: usize, share: f64 },
    #[error("class sequence is not terminated by the sentinel")]
    MissingSentinel,
    #[error("tokens follow the sentinel at position {0}")]
    TrailingTokens(usize),
    #[error("unknown class ({gap}, {share})")]
    UnknownClass { gap: usize, share: usize },
    #[error("unknown token id {0}")]
    UnknownToken(usize),
    #[error("order quantity must be finite and nonnegative, got {0}")]
    BadOrder(f64),
    #[error("representative table has {got} entries, grid has {expected} classes")]
    TableSize { got: usize, expected: usize },
    #[error("grid file version {0} is not supported")]
    Version(u32),
    #[error("grid json: {0}")]
    Json(String),
}

/// Class coordinates `(n, m)`, 1-based; `(0, 0)` is the sentinel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArrivalClass {
    pub gap: usize,
    pub share: usize,
}

impl ArrivalClass {
    pub const SENTINEL: ArrivalClass = ArrivalClass { gap: 0, share: 0 };

    pub fn new(gap: usize, share: usize) -> Self {
        Self { gap, share }
    }

    pub fn is_sentinel(&self) -> bool {
        *self == Self::SENTINEL
    }
}

impl From<(usize, usize)> for ArrivalClass {
    fn from((gap, share): (usize, usize)) -> Self {
        Self { gap, share }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentativeMode {
    BinCenter,
    DataMean,
}

/// Representative `(k, share)` of a class. `gap` is in periods since the
/// previous arrival; `fallback` marks a data-mean table entry that had no
/// observations and uses the bin center instead.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Representative {
    pub gap: f64,
    pub share: f64,
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrivalClassGrid {
    version: u32,
    gap_edges: Vec<usize>,
    share_edges: Vec<f64>,
    mode: RepresentativeMode,
    representatives: Vec<Representative>,
}

/// Snaps to a 1e-12 lattice so decimal bin centers such as 0.3 come out as
/// the nearest double.
fn snap(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

impl ArrivalClassGrid {
    /// Grid with bin-center representatives for either mode; call
    /// [`ArrivalClassGrid::fit_representatives`] to install data means.
    pub fn build(
        gap_edges: Vec<usize>,
        share_edges: Vec<f64>,
        mode: RepresentativeMode,
    ) -> Result<Self, GridError> {
        if gap_edges.len() < 2 || gap_edges[0] != 0 || gap_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GridError::BadEdges { axis: "gap" });
        }
        if share_edges.len() < 2
            || share_edges[0] != 0.0
            || share_edges.iter().any(|x| !x.is_finite())
            || share_edges.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(GridError::BadEdges { axis: "share" });
        }
        if *share_edges.last().expect("nonempty") <= 1.0 {
            log::warn!("share grid tops out at or below 1; yields above the order quantity will be rejected");
        }
        let mut grid = Self {
            version: GRID_VERSION,
            gap_edges,
            share_edges,
            mode,
            representatives: Vec::new(),
        };
        grid.representatives = (1..=grid.num_classes())
            .map(|token| grid.bin_center(grid.class_of_token(token).expect("in range")))
            .collect();
        Ok(grid)
    }

    /// Gap edges `0..=tau_max` in unit steps and `share_bins` equal-width share
    /// bins up to `share_max`.
    pub fn uniform(
        tau_max: usize,
        share_bins: usize,
        share_max: f64,
        mode: RepresentativeMode,
    ) -> Result<Self, GridError> {
        let shares = (0..=share_bins)
            .map(|i| snap(i as f64 * share_max / share_bins as f64))
            .collect();
        Self::build((0..=tau_max).collect(), shares, mode)
    }

    pub fn gap_edges(&self) -> &[usize] {
        &self.gap_edges
    }

    pub fn share_edges(&self) -> &[f64] {
        &self.share_edges
    }

    pub fn mode(&self) -> RepresentativeMode {
        self.mode
    }

    pub fn tau_max(&self) -> usize {
        *self.gap_edges.last().expect("validated")
    }

    pub fn share_max(&self) -> f64 {
        *self.share_edges.last().expect("validated")
    }

    pub fn gap_bins(&self) -> usize {
        self.gap_edges.len() - 1
    }

    pub fn share_bins(&self) -> usize {
        self.share_edges.len() - 1
    }

    /// Number of arrival classes, excluding the sentinel.
    pub fn num_classes(&self) -> usize {
        self.gap_bins() * self.share_bins()
    }

    /// Vocabulary size: classes plus the sentinel.
    pub fn num_tokens(&self) -> usize {
        self.num_classes() + 1
    }

    /// Token id of a class; the sentinel is token 0.
    pub fn token_of(&self, class: ArrivalClass) -> Result<usize, GridError> {
        if class.is_sentinel() {
            return Ok(0);
        }
        if class.gap == 0
            || class.share == 0
            || class.gap > self.gap_bins()
            || class.share > self.share_bins()
        {
            return Err(GridError::UnknownClass {
                gap: class.gap,
                share: class.share,
            });
        }
        Ok(1 + (class.gap - 1) * self.share_bins() + (class.share - 1))
    }

    pub fn class_of_token(&self, token: usize) -> Result<ArrivalClass, GridError> {
        if token == 0 {
            return Ok(ArrivalClass::SENTINEL);
        }
        if token > self.num_classes() {
            return Err(GridError::UnknownToken(token));
        }
        let z = token - 1;
        Ok(ArrivalClass::new(z / self.share_bins() + 1, z % self.share_bins() + 1))
    }

    /// Class containing `idle` idle periods and `share`, in bin coordinates.
    pub fn locate(&self, idle: usize, share: f64) -> Option<ArrivalClass> {
        if idle >= self.tau_max() || !(share >= 0.0) || share >= self.share_max() {
            return None;
        }
        let n = self.gap_edges.partition_point(|&e| e <= idle);
        let m = self.share_edges.partition_point(|&e| e <= share);
        Some(ArrivalClass::new(n, m))
    }

    /// Class of an arrival `k` periods after the previous one (`k >= 1`).
    pub fn classify(&self, k: usize, share: f64) -> Result<ArrivalClass, GridError> {
        k.checked_sub(1)
            .and_then(|idle| self.locate(idle, share))
            .ok_or(GridError::OutOfRange { gap: k, share })
    }

    /// Whether the tuple `(k, share)` lies in `class`.
    pub fn contains(&self, class: ArrivalClass, k: f64, share: f64) -> bool {
        if class.is_sentinel() || self.token_of(class).is_err() {
            return false;
        }
        let idle = k - 1.0;
        let (glo, ghi) = (
            self.gap_edges[class.gap - 1] as f64,
            self.gap_edges[class.gap] as f64,
        );
        let (slo, shi) = (self.share_edges[class.share - 1], self.share_edges[class.share]);
        idle >= glo && idle < ghi && share >= slo && share < shi
    }

    pub fn bin_center(&self, class: ArrivalClass) -> Representative {
        let (glo, ghi) = (self.gap_edges[class.gap - 1], self.gap_edges[class.gap]);
        let (slo, shi) = (self.share_edges[class.share - 1], self.share_edges[class.share]);
        Representative {
            // midpoint of the integer idle counts in the bin, shifted to k
            gap: (glo + ghi - 1) as f64 / 2.0 + 1.0,
            share: snap((slo + shi) / 2.0),
            fallback: false,
        }
    }

    pub fn representative(&self, class: ArrivalClass) -> Result<Representative, GridError> {
        let token = self.token_of(class)?;
        if token == 0 {
            return Err(GridError::UnknownClass { gap: 0, share: 0 });
        }
        Ok(self.representatives[token - 1])
    }

    pub fn representatives(&self) -> &[Representative] {
        &self.representatives
    }

    pub fn set_representatives(&mut self, table: Vec<Representative>) -> Result<(), GridError> {
        if table.len() != self.num_classes() {
            return Err(GridError::TableSize {
                got: table.len(),
                expected: self.num_classes(),
            });
        }
        self.representatives = table;
        Ok(())
    }

    /// Installs per-class empirical means of `tuples`; empty classes keep
    /// their bin center and are flagged. Tuples outside the grid are skipped.
    pub fn fit_representatives(&mut self, tuples: &[(usize, f64)]) {
        let table = compute_representatives(tuples, self);
        self.representatives = table;
        self.mode = RepresentativeMode::DataMean;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grid serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GridError> {
        let grid: Self = serde_json::from_str(text).map_err(|e| GridError::Json(e.to_string()))?;
        if grid.version != GRID_VERSION {
            return Err(GridError::Version(grid.version));
        }
        let rebuilt = Self::build(grid.gap_edges.clone(), grid.share_edges.clone(), grid.mode)?;
        if grid.representatives.len() != rebuilt.num_classes() {
            return Err(GridError::TableSize {
                got: grid.representatives.len(),
                expected: rebuilt.num_classes(),
            });
        }
        Ok(grid)
    }
}

pub fn compute_representatives(tuples: &[(usize, f64)], grid: &ArrivalClassGrid) -> Vec<Representative> {
    let n = grid.num_classes();
    let mut sum_k = vec![0.0; n];
    let mut sum_s = vec![0.0; n];
    let mut count = vec![0usize; n];
    for &(k, share) in tuples {
        if let Ok(class) = grid.classify(k, share) {
            let i = grid.token_of(class).expect("located class") - 1;
            sum_k[i] += k as f64;
            sum_s[i] += share;
            count[i] += 1;
        }
    }
    (0..n)
        .map(|i| {
            if count[i] == 0 {
                let mut r = grid.bin_center(grid.class_of_token(i + 1).expect("in range"));
                r.fallback = true;
                r
            } else {
                Representative {
                    gap: sum_k[i] / count[i] as f64,
                    share: sum_s[i] / count[i] as f64,
                    fallback: false,
                }
            }
        })
        .collect()
}

/// Realized (or sampled) arrivals of one order by lead-time offset `0..=L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrivalSequence {
    pub order: f64,
    pub arrivals: Vec<f64>,
}

impl ArrivalSequence {
    pub fn new(order: f64, arrivals: Vec<f64>) -> Self {
        Self { order, arrivals }
    }

    pub fn zeros(order: f64, max_lead: usize) -> Self {
        Self {
            order,
            arrivals: vec![0.0; max_lead + 1],
        }
    }

    pub fn max_lead(&self) -> usize {
        self.arrivals.len().saturating_sub(1)
    }

    pub fn total(&self) -> f64 {
        self.arrivals.iter().sum()
    }

    /// Partial fill rates `o_j / a`, all zero for a zero order.
    pub fn fill_rates(&self) -> Vec<f64> {
        if self.order == 0.0 {
            return vec![0.0; self.arrivals.len()];
        }
        self.arrivals.iter().map(|o| o / self.order).collect()
    }

    /// `(k, share)` tuples of the nonzero arrivals in time order.
    pub fn tuples(&self) -> Vec<(usize, f64)> {
        let rates = self.fill_rates();
        let mut prev: isize = -1;
        let mut out = Vec::new();
        for (j, &r) in rates.iter().enumerate() {
            if r != 0.0 {
                out.push(((j as isize - prev) as usize, r));
                prev = j as isize;
            }
        }
        out
    }

    /// `(quantity, lead time)` pairs of the nonzero arrivals.
    pub fn lead_time_pairs(&self) -> Vec<(f64, usize)> {
        self.arrivals
            .iter()
            .enumerate()
            .filter(|(_, &q)| q > 0.0)
            .map(|(j, &q)| (q, j))
            .collect()
    }

    /// Cumulative fill rate through the first `weeks` offsets.
    pub fn cumulative_fill(&self, weeks: usize) -> f64 {
        if self.order == 0.0 {
            return 0.0;
        }
        self.arrivals.iter().take(weeks).sum::<f64>() / self.order
    }
}

pub fn encode_arrivals(seq: &ArrivalSequence, grid: &ArrivalClassGrid) -> Result<Vec<ArrivalClass>, GridError> {
    if !(seq.order.is_finite() && seq.order >= 0.0) {
        return Err(GridError::BadOrder(seq.order));
    }
    let mut out = seq
        .tuples()
        .into_iter()
        .map(|(k, share)| grid.classify(k, share))
        .collect::<Result<Vec<_>, _>>()?;
    out.push(ArrivalClass::SENTINEL);
    Ok(out)
}

/// Arrivals reconstructed from a class sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub sequence: ArrivalSequence,
    /// Partial fill rates by offset.
    pub fills: Vec<f64>,
    /// Some arrival landed beyond the maximum lead time and was dropped.
    pub truncated: bool,
}

/// Maps classes (without the sentinel) to arrivals at offsets `0..=max_lead`.
pub fn decode_prefix(
    classes: &[ArrivalClass],
    grid: &ArrivalClassGrid,
    order: f64,
    max_lead: usize,
) -> Result<Decoded, GridError> {
    if !(order.is_finite() && order >= 0.0) {
        return Err(GridError::BadOrder(order));
    }
    let mut fills = vec![0.0; max_lead + 1];
    let mut truncated = false;
    let mut position = 0usize;
    for class in classes {
        if class.is_sentinel() {
            return Err(GridError::UnknownClass { gap: 0, share: 0 });
        }
        let rep = grid.representative(*class)?;
        position += (rep.gap.round() as usize).max(1);
        let offset = position - 1;
        if offset > max_lead {
            truncated = true;
            continue;
        }
        fills[offset] += rep.share;
    }
    let arrivals = if order == 0.0 {
        fills.iter_mut().for_each(|f| *f = 0.0);
        vec![0.0; max_lead + 1]
    } else {
        fills.iter().map(|f| f * order).collect()
    };
    Ok(Decoded {
        sequence: ArrivalSequence::new(order, arrivals),
        fills,
        truncated,
    })
}

pub fn decode_classes(
    classes: &[ArrivalClass],
    grid: &ArrivalClassGrid,
    order: f64,
    max_lead: usize,
) -> Result<Decoded, GridError> {
    let end = classes
        .iter()
        .position(ArrivalClass::is_sentinel)
        .ok_or(GridError::MissingSentinel)?;
    if end + 1 != classes.len() {
        return Err(GridError::TrailingTokens(end));
    }
    decode_prefix(&classes[..end], grid, order, max_lead)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn worked_grid() -> ArrivalClassGrid {
        ArrivalClassGrid::build(
            vec![0, 1, 2, 3],
            vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            RepresentativeMode::BinCenter,
        )
        .unwrap()
    }

    fn classes(pairs: &[(usize, usize)]) -> Vec<ArrivalClass> {
        pairs.iter().map(|&p| p.into()).collect()
    }

    #[test]
    fn worked_grid_has_fifteen_classes() {
        let g = worked_grid();
        assert_eq!(g.num_classes(), 15);
        assert_eq!(g.num_tokens(), 16);
    }

    #[test]
    fn bin_center_of_class_1_3() {
        let r = worked_grid().representative((1, 3).into()).unwrap();
        assert_eq!((r.gap, r.share), (1.0, 0.5));
    }

    #[test]
    fn worked_example_tuples_and_classes() {
        let seq = ArrivalSequence::new(10.0, vec![0.0, 3.0, 5.0, 0.0, 4.0]);
        assert_eq!(seq.tuples(), vec![(2, 0.3), (1, 0.5), (2, 0.4)]);
        let enc = encode_arrivals(&seq, &worked_grid()).unwrap();
        assert_eq!(enc, classes(&[(2, 2), (1, 3), (2, 3), (0, 0)]));
    }

    #[test]
    fn worked_example_decode() {
        let d = decode_classes(&classes(&[(2, 2), (1, 3), (2, 3), (0, 0)]), &worked_grid(), 10.0, 4).unwrap();
        assert_eq!(d.sequence.arrivals, vec![0.0, 3.0, 5.0, 0.0, 5.0]);
        assert!(!d.truncated);
    }

    #[test]
    fn empty_sequences() {
        let g = worked_grid();
        let zero = ArrivalSequence::zeros(10.0, 4);
        assert_eq!(encode_arrivals(&zero, &g).unwrap(), vec![ArrivalClass::SENTINEL]);
        let d = decode_classes(&[ArrivalClass::SENTINEL], &g, 10.0, 4).unwrap();
        assert_eq!(d.sequence.arrivals, vec![0.0; 5]);
    }

    #[test]
    fn single_class_decode() {
        let d = decode_classes(&classes(&[(1, 3), (0, 0)]), &worked_grid(), 20.0, 4).unwrap();
        assert_eq!(d.sequence.arrivals, vec![10.0, 0.0, 0.0, 0.0, 0.0]);
    }

    /// The gap axis bins idle periods (k - 1), consistent with the worked
    /// example: k = 2 lands in gap bin 2 = [1, 2).
    #[test]
    fn classify_against_brute_force_bin_search() {
        let g = ArrivalClassGrid::build(
            vec![0, 1, 2, 3],
            vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2],
            RepresentativeMode::BinCenter,
        )
        .unwrap();
        let brute = |k: usize, s: f64| {
            let mut hits = vec![];
            for n in 1..=g.gap_bins() {
                for m in 1..=g.share_bins() {
                    if g.contains(ArrivalClass::new(n, m), k as f64, s) {
                        hits.push(ArrivalClass::new(n, m));
                    }
                }
            }
            hits
        };
        assert_eq!(brute(2, 0.79), vec![ArrivalClass::new(2, 4)]);
        assert_eq!(g.classify(2, 0.79).unwrap(), ArrivalClass::new(2, 4));
    }

    #[test]
    fn out_of_range_tuple_is_reported() {
        let g = worked_grid();
        let seq = ArrivalSequence::new(10.0, vec![0.0, 0.0, 0.0, 0.0, 12.0]);
        assert_eq!(
            encode_arrivals(&seq, &g).unwrap_err(),
            GridError::OutOfRange { gap: 5, share: 1.2 }
        );
    }

    #[test]
    fn degenerate_single_bin() {
        let g = ArrivalClassGrid::build(vec![0, 6], vec![0.0, 2.0], RepresentativeMode::BinCenter).unwrap();
        let seq = ArrivalSequence::new(4.0, vec![1.0, 0.0, 2.0, 3.0]);
        let enc = encode_arrivals(&seq, &g).unwrap();
        assert_eq!(enc, classes(&[(1, 1), (1, 1), (1, 1), (0, 0)]));
    }

    #[test]
    fn decode_errors() {
        let g = worked_grid();
        assert_eq!(decode_classes(&classes(&[(1, 1)]), &g, 1.0, 4).unwrap_err(), GridError::MissingSentinel);
        assert!(matches!(
            decode_classes(&classes(&[(9, 1), (0, 0)]), &g, 1.0, 4),
            Err(GridError::UnknownClass { .. })
        ));
        assert_eq!(
            decode_classes(&classes(&[(0, 0), (1, 1)]), &g, 1.0, 4).unwrap_err(),
            GridError::TrailingTokens(0)
        );
    }

    #[test]
    fn decode_truncates_beyond_max_lead() {
        let d = decode_classes(&classes(&[(3, 1), (3, 1), (0, 0)]), &worked_grid(), 10.0, 4).unwrap();
        assert!(d.truncated);
        assert_eq!(d.sequence.arrivals, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn representatives_from_data() {
        let mut g = ArrivalClassGrid::uniform(4, 5, 1.0, RepresentativeMode::DataMean).unwrap();
        g.fit_representatives(&[(2, 0.25), (2, 0.35)]);
        let r = g.representative(g.classify(2, 0.25).unwrap()).unwrap();
        assert_eq!(r.gap, 2.0);
        assert!((r.share - 0.30).abs() < 1e-15);
        assert!(!r.fallback);
        let empty = g.representative(ArrivalClass::new(1, 1)).unwrap();
        assert!(empty.fallback);
        assert_eq!(empty.share, 0.1);
    }

    #[test]
    fn representatives_at_centers_are_a_fixed_point() {
        let g = worked_grid();
        let tuples: Vec<(usize, f64)> = g
            .representatives()
            .iter()
            .map(|r| (r.gap as usize, r.share))
            .collect();
        let table = compute_representatives(&tuples, &g);
        for (a, b) in table.iter().zip(g.representatives()) {
            assert_eq!((a.gap, a.share), (b.gap, b.share));
        }
    }

    #[test]
    fn representatives_lie_in_their_class() {
        let g = ArrivalClassGrid::build(vec![0, 1, 3, 7], vec![0.0, 0.1, 0.5, 1.5], RepresentativeMode::BinCenter)
            .unwrap();
        for token in 1..=g.num_classes() {
            let c = g.class_of_token(token).unwrap();
            let r = g.representative(c).unwrap();
            assert!(g.contains(c, r.gap.round(), r.share), "{c:?} {r:?}");
        }
    }

    #[test]
    fn partition_scan_including_edges() {
        let g = ArrivalClassGrid::uniform(5, 15, 1.5, RepresentativeMode::BinCenter).unwrap();
        let mut points: Vec<f64> = (0..1000).map(|i| i as f64 * 1.5 / 1000.0).collect();
        points.extend_from_slice(g.share_edges());
        for idle in 0..g.tau_max() {
            for &s in &points {
                let hits = (1..=g.num_classes())
                    .filter(|&t| g.contains(g.class_of_token(t).unwrap(), (idle + 1) as f64, s))
                    .count();
                let expect = usize::from(s < g.share_max());
                assert_eq!(hits, expect, "idle {idle} share {s}");
            }
        }
    }

    #[test]
    fn grid_json_round_trip() {
        let mut g = ArrivalClassGrid::uniform(3, 6, 1.5, RepresentativeMode::DataMean).unwrap();
        g.fit_representatives(&[(1, 0.3), (2, 1.0)]);
        let back = ArrivalClassGrid::from_json(&g.to_json()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(ArrivalClassGrid::build(vec![0, 2, 2], vec![0.0, 1.0], RepresentativeMode::BinCenter).is_err());
        assert!(ArrivalClassGrid::build(vec![1, 2], vec![0.0, 1.0], RepresentativeMode::BinCenter).is_err());
        assert!(ArrivalClassGrid::build(vec![0, 2], vec![0.0, 0.5, 0.4], RepresentativeMode::BinCenter).is_err());
    }

    fn arrivals_strategy() -> impl Strategy<Value = ArrivalSequence> {
        (1.0f64..50.0, proptest::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], 5))
            .prop_map(|(a, fracs)| {
                let arrivals = fracs.iter().map(|f| f * a).collect();
                ArrivalSequence::new(a, arrivals)
            })
    }

    proptest! {
        #[test]
        fn tuple_shares_sum_to_fill_rates(seq in arrivals_strategy()) {
            let a: f64 = seq.tuples().iter().map(|t| t.1).sum();
            let b: f64 = seq.fill_rates().iter().sum();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn reconstruction_error_bounded_by_half_bin(seq in arrivals_strategy()) {
            let g = ArrivalClassGrid::uniform(6, 15, 1.5, RepresentativeMode::BinCenter).unwrap();
            let enc = encode_arrivals(&seq, &g).unwrap();
            let dec = decode_classes(&enc, &g, seq.order, seq.max_lead()).unwrap();
            for (x, y) in seq.arrivals.iter().zip(&dec.sequence.arrivals) {
                prop_assert!((x - y).abs() <= 0.05 * seq.order + 1e-9);
            }
        }

        #[test]
        fn encode_decode_round_trip_on_classes(
            picks in proptest::collection::vec((1usize..=3, 1usize..=6), 0..4),
            order in 1.0f64..100.0,
        ) {
            let g = ArrivalClassGrid::build(vec![0, 1, 3, 5], vec![0.0, 0.1, 0.3, 0.6, 0.9, 1.2, 1.5], RepresentativeMode::BinCenter).unwrap();
            let mut seq: Vec<ArrivalClass> = picks.into_iter().map(ArrivalClass::from).collect();
            let span: f64 = seq.iter().map(|c| g.representative(*c).unwrap().gap.round()).sum();
            let max_lead = 16;
            prop_assume!(span as usize <= max_lead + 1);
            seq.push(ArrivalClass::SENTINEL);
            let dec = decode_classes(&seq, &g, order, max_lead).unwrap();
            prop_assert_eq!(encode_arrivals(&dec.sequence, &g).unwrap(), seq);
        }

        #[test]
        fn zero_order_has_zero_fill(arr in proptest::collection::vec(0.0f64..5.0, 1..6)) {
            let seq = ArrivalSequence::new(0.0, arr);
            prop_assert!(seq.fill_rates().iter().all(|&f| f == 0.0));
        }
    }
}
