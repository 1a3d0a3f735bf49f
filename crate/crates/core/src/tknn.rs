//! Threshold-KNN Shapley in closed form.
//!
//! For a validation point, the value of training point `z_i` depends on
//! `D - {z_i}` only through three counts `(c, c_x, c_z+)`; those follow from
//! counts on the full dataset by an O(1) decrement, so all N values cost O(N).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::dataset::{Dataset, DistanceMetric, LabeledPoint};
use crate::error::{Error, Result};
use crate::knn::VALIDATION_CHUNK;
use crate::valuation::{Algorithm, MethodDescriptor, SemivalueWeight, UtilityKind, ValuationResult, WeightKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TknnConfig {
    /// Neighbors satisfy `distance <= tau`.
    pub tau: f64,
    pub metric: DistanceMetric,
}

impl TknnConfig {
    pub fn new(tau: f64, metric: DistanceMetric) -> Self {
        Self { tau, metric }
    }

    pub fn validate(&self) -> Result<()> {
        self.metric.check_threshold(self.tau)
    }

    pub(crate) fn descriptor(&self, num_classes: usize, weight: WeightKind, algorithm: Algorithm) -> MethodDescriptor {
        MethodDescriptor {
            utility: UtilityKind::Tknn { tau: self.tau },
            weight,
            algorithm,
            metric: self.metric,
            num_classes,
            privacy: None,
        }
    }
}

/// Counting queries that determine a TKNN-Shapley value.
///
/// Over a dataset `S`: `c = |S|`, `c_x = 1 + #neighbors of the query in S`,
/// `c_zplus = #neighbors that share the query label`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NeighborCounts {
    pub c: u64,
    pub c_x: u64,
    pub c_zplus: u64,
}

impl NeighborCounts {
    pub fn new(c: u64, c_x: u64, c_zplus: u64) -> Result<Self> {
        let counts = Self { c, c_x, c_zplus };
        if !counts.is_valid() {
            return Err(Error::Inconsistent(format!("invalid neighbor counts {counts:?}")));
        }
        Ok(counts)
    }

    pub fn is_valid(&self) -> bool {
        self.c_x >= 1 && self.c_x <= self.c + 1 && self.c_zplus < self.c_x
    }

    /// Rounds each entry into its valid range, in order: `c >= 0`, then
    /// `1 <= c_x <= c + 1`, then `0 <= c_zplus <= c_x - 1`.
    pub fn clamped(c: i64, c_x: i64, c_zplus: i64) -> Self {
        let c = c.max(0);
        let c_x = c_x.clamp(1, c + 1);
        let c_zplus = c_zplus.clamp(0, c_x - 1);
        Self {
            c: c as u64,
            c_x: c_x as u64,
            c_zplus: c_zplus as u64,
        }
    }

    /// The counts with one point removed. The point is a neighbor when
    /// `in_threshold`, and a same-label neighbor when both flags are set.
    pub fn leave_one_out(&self, in_threshold: bool, label_match: bool) -> Result<Self> {
        let dx = u64::from(in_threshold);
        let dz = u64::from(in_threshold && label_match);
        match (self.c.checked_sub(1), self.c_x.checked_sub(dx), self.c_zplus.checked_sub(dz)) {
            (Some(c), Some(c_x), Some(c_zplus)) => Self::new(c, c_x, c_zplus),
            _ => Err(Error::Inconsistent(format!(
                "cannot remove a point from counts {self:?}"
            ))),
        }
    }

    /// Like [`leave_one_out`](Self::leave_one_out) but clamps instead of
    /// failing; used on noisy counts.
    pub(crate) fn leave_one_out_clamped(&self, in_threshold: bool, label_match: bool) -> Self {
        let dx = i64::from(in_threshold);
        let dz = i64::from(in_threshold && label_match);
        Self::clamped(self.c as i64 - 1, self.c_x as i64 - dx, self.c_zplus as i64 - dz)
    }
}

/// Counts over the whole of `ds` in one pass.
pub fn counts_full(ds: &Dataset, cfg: &TknnConfig, zval: &LabeledPoint) -> Result<NeighborCounts> {
    cfg.validate()?;
    ds.check_point(zval)?;
    let dist = cfg.metric.distances_to(ds, &zval.features)?;
    Ok(tally(&dist, ds.labels(), cfg.tau, zval.label))
}

pub(crate) fn tally(dist: &[f64], labels: &[usize], tau: f64, target: usize) -> NeighborCounts {
    let (mut nb, mut same) = (0u64, 0u64);
    for (&d, &l) in dist.iter().zip(labels) {
        if d <= tau {
            nb += 1;
            same += u64::from(l == target);
        }
    }
    NeighborCounts {
        c: dist.len() as u64,
        c_x: 1 + nb,
        c_zplus: same,
    }
}

/// Counts on `D - {z_i}` from counts on `D`.
pub fn counts_leave_one_out(full: &NeighborCounts, in_threshold: bool, label_match: bool) -> Result<NeighborCounts> {
    full.leave_one_out(in_threshold, label_match)
}

/// `A_2(c, c_x) = sum_{k=0}^{c} (1 - C(c-k, c_x) / C(c+1, c_x)) / (k+1) - 1`.
///
/// Split as `H_{c+1} - sum_k r_k / (k+1) - 1` with `r_k` the binomial ratio,
/// advanced multiplicatively in `k`. `r_k` shrinks by a factor of at least
/// `1 - c_x / c` per step, so the sum stops once the remaining tail is below
/// rounding.
pub fn a2(c: u64, c_x: u64) -> f64 {
    let mut ratio = if c_x > c + 1 {
        0.0
    } else {
        (c + 1 - c_x) as f64 / (c + 1) as f64
    };
    let tail_factor = c as f64 / c_x.max(1) as f64;
    let mut tail = 0.0;
    for k in 0..=c {
        if ratio == 0.0 {
            break;
        }
        let term = ratio / (k + 1) as f64;
        tail += term;
        if term * tail_factor < 1e-17 * tail {
            break;
        }
        // C(c-k-1, c_x) / C(c-k, c_x) = (c-k-c_x) / (c-k)
        let top = c - k;
        ratio = if top > c_x { ratio * (top - c_x) as f64 / top as f64 } else { 0.0 };
    }
    harmonic(c + 1) - tail - 1.0
}

/// `H_n`, summed directly for small `n` and by the asymptotic series otherwise.
pub(crate) fn harmonic(n: u64) -> f64 {
    if n < 256 {
        return (1..=n).rev().map(|j| 1.0 / j as f64).sum();
    }
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    let x = n as f64;
    let inv2 = 1.0 / (x * x);
    x.ln() + EULER_GAMMA + 0.5 / x - inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 / 252.0))
}

/// [`a2`] with every binomial ratio evaluated independently in log space.
pub fn a2_direct_sum(c: u64, c_x: u64) -> f64 {
    let denom = ln_binomial(c + 1, c_x);
    let mut sum = 0.0;
    for k in 0..=c {
        let ratio = if c - k < c_x {
            0.0
        } else {
            (ln_binomial(c - k, c_x) - denom).exp()
        };
        sum += (1.0 - ratio) / (k + 1) as f64;
    }
    sum - 1.0
}

/// Closed-form TKNN-Shapley of one training point given the counts over the
/// rest of the data (`D - {z_i}`).
pub fn tknn_shapley_from_counts(counts: &NeighborCounts, label_match: bool, in_threshold: bool, num_classes: usize) -> f64 {
    tknn_value(counts, label_match, in_threshold, num_classes, &mut A2Memo::default())
}

/// Remembers the last two `A_2` evaluations; within one validation point
/// the leave-one-out counts take at most two `(c, c_x)` values.
#[derive(Debug, Default)]
pub(crate) struct A2Memo {
    slots: [Option<((u64, u64), f64)>; 2],
    next: usize,
}

impl A2Memo {
    pub(crate) fn get(&mut self, c: u64, c_x: u64) -> f64 {
        for (key, val) in self.slots.iter().flatten() {
            if *key == (c, c_x) {
                return *val;
            }
        }
        let val = a2(c, c_x);
        self.slots[self.next] = Some(((c, c_x), val));
        self.next ^= 1;
        val
    }
}

pub(crate) fn tknn_value(
    counts: &NeighborCounts,
    label_match: bool,
    in_threshold: bool,
    num_classes: usize,
    memo: &mut A2Memo,
) -> f64 {
    if !in_threshold {
        return 0.0;
    }
    let m = f64::from(u8::from(label_match));
    let cx = counts.c_x as f64;
    let mut phi = (m - 1.0 / num_classes as f64) / cx;
    if counts.c_x >= 2 {
        let a1 = m / cx - counts.c_zplus as f64 / (cx * (cx - 1.0));
        phi += a1 * memo.get(counts.c, counts.c_x);
    }
    phi
}

/// Training rows per tile; a tile's features stay in cache while every
/// validation point of a chunk is compared against it.
const ROW_TILE: usize = 2048;

// one bit per validation point of a chunk
const _: () = assert!(VALIDATION_CHUNK <= 8);

/// Adds the TKNN-Shapley values for validation points `vals` (at most 8)
/// into `acc`.
fn accumulate_chunk(ds: &Dataset, cfg: &TknnConfig, vals: &[LabeledPoint], acc: &mut [f64]) -> Result<()> {
    debug_assert!(vals.len() <= 8);
    let n = ds.len();
    // bit j of within[i]: row i is inside the threshold of vals[j]
    let mut within = vec![0u8; n];
    let mut neighbors = [0u64; 8];
    let mut same = [0u64; 8];
    let mut dist = vec![0.0; ROW_TILE.min(n)];
    for z in vals {
        ds.check_point(z)?;
    }
    for start in (0..n).step_by(ROW_TILE) {
        let len = ROW_TILE.min(n - start);
        for (j, z) in vals.iter().enumerate() {
            cfg.metric.distances_rows_into(ds, start, &z.features, &mut dist[..len])?;
            for (off, &d) in dist[..len].iter().enumerate() {
                if d <= cfg.tau {
                    within[start + off] |= 1 << j;
                    neighbors[j] += 1;
                    same[j] += u64::from(ds.label(start + off) == z.label);
                }
            }
        }
    }
    // every in-threshold point of one validation point gets one of two values
    let c = ds.num_classes();
    let mut if_match = [0.0; 8];
    let mut if_mismatch = [0.0; 8];
    for j in 0..vals.len() {
        let full = NeighborCounts {
            c: n as u64,
            c_x: 1 + neighbors[j],
            c_zplus: same[j],
        };
        let mut memo = A2Memo::default();
        if same[j] > 0 {
            if_match[j] = tknn_value(&full.leave_one_out(true, true)?, true, true, c, &mut memo);
        }
        if neighbors[j] > same[j] {
            if_mismatch[j] = tknn_value(&full.leave_one_out(true, false)?, false, true, c, &mut memo);
        }
    }
    for (i, (&bits, slot)) in within.iter().zip(acc.iter_mut()).enumerate() {
        if bits == 0 {
            continue;
        }
        let label = ds.label(i);
        for (j, z) in vals.iter().enumerate() {
            if bits >> j & 1 == 1 {
                *slot += if label == z.label { if_match[j] } else { if_mismatch[j] };
            }
        }
    }
    Ok(())
}

/// TKNN-Shapley of every training point, summed over the validation set.
pub fn tknn_shapley_all(ds: &Dataset, cfg: &TknnConfig, validation: &Dataset) -> Result<ValuationResult> {
    cfg.validate()?;
    if validation.is_empty() {
        return Err(Error::EmptyValidation);
    }
    if validation.dim() != ds.dim() {
        return Err(Error::DimensionMismatch {
            expected: ds.dim(),
            got: validation.dim(),
        });
    }
    let n = ds.len();
    let chunks: Vec<usize> = (0..validation.len()).step_by(VALIDATION_CHUNK).collect();
    let partials = chunks
        .par_iter()
        .map(|&start| {
            let mut acc = vec![0.0; n];
            let vals: Vec<LabeledPoint> = (start..(start + VALIDATION_CHUNK).min(validation.len()))
                .map(|v| validation.point(v).to_owned())
                .collect();
            accumulate_chunk(ds, cfg, &vals, &mut acc)?;
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut scores = vec![0.0; n];
    for part in partials {
        for (s, p) in scores.iter_mut().zip(part) {
            *s += p;
        }
    }
    Ok(ValuationResult {
        method: cfg.descriptor(ds.num_classes(), WeightKind::Shapley, Algorithm::ClosedForm),
        validation_size: validation.len(),
        scores,
    })
}

/// Largest dataset for which [`tknn_semivalue_generic`] sums directly.
pub const GENERIC_SEMIVALUE_LIMIT: usize = 1000;

/// TKNN semivalue for an arbitrary coalition weight, by direct summation
/// over coalition sizes. O(N) per point.
pub fn tknn_semivalue_generic(
    ds: &Dataset,
    cfg: &TknnConfig,
    weight: &SemivalueWeight,
    zval: &LabeledPoint,
) -> Result<ValuationResult> {
    cfg.validate()?;
    ds.check_point(zval)?;
    let n = ds.len();
    if n > GENERIC_SEMIVALUE_LIMIT {
        return Err(Error::EnumerationLimit {
            n,
            limit: GENERIC_SEMIVALUE_LIMIT,
        });
    }
    weight.check_normalized(n)?;
    let dist = cfg.metric.distances_to(ds, &zval.features)?;
    let full = tally(&dist, ds.labels(), cfg.tau, zval.label);
    let mass: Vec<f64> = (1..=n).map(|k| weight.coalition_mass(n, k)).collect();
    let inv_c = 1.0 / ds.num_classes() as f64;

    // Sums depend only on c_x, which is the same for every in-threshold point.
    let sums = |cx: u64| -> (f64, f64) {
        let (nf, cxf) = (n as f64, cx as f64);
        let mut r = 1.0; // C(N - c_x, k) / C(N - 1, k)
        let (mut b_sum, mut lone_sum) = (0.0, 0.0);
        for (k, &m) in mass.iter().enumerate() {
            let kf = k as f64;
            let b = nf / (kf + 1.0) - r * (nf - cxf - kf) / (kf + 1.0) - cxf * r;
            b_sum += m * b;
            lone_sum += m * r;
            if k + 1 < n {
                r = if nf - cxf - kf > 0.0 { r * (nf - cxf - kf) / (nf - 1.0 - kf) } else { 0.0 };
            }
        }
        (b_sum / nf, lone_sum / nf)
    };

    let mut cache: Option<(u64, (f64, f64))> = None;
    let mut scores = vec![0.0; n];
    for (i, &d) in dist.iter().enumerate() {
        if d > cfg.tau {
            continue;
        }
        let matched = ds.label(i) == zval.label;
        let loo = full.leave_one_out(true, matched)?;
        let (b_sum, lone_sum) = match cache {
            Some((cx, s)) if cx == loo.c_x => s,
            _ => {
                let s = sums(loo.c_x);
                cache = Some((loo.c_x, s));
                s
            }
        };
        let m = f64::from(u8::from(matched));
        let mut phi = (m - inv_c) * lone_sum;
        if loo.c_x >= 2 {
            let cx = loo.c_x as f64;
            phi += (m / cx - loo.c_zplus as f64 / (cx * (cx - 1.0))) * b_sum;
        }
        scores[i] = phi;
    }
    Ok(ValuationResult {
        method: cfg.descriptor(ds.num_classes(), weight.kind(), Algorithm::DirectSum),
        validation_size: 1,
        scores,
    })
}
