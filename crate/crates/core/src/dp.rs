//! Private release of valuation scores.
//!
//! DP-TKNN privatizes the three neighbor counts of each validation point
//! once and derives every owner's score from that single noisy triple, so
//! the release costs `3 * N_val` Gaussian draws however many owners there
//! are. The DP-KNN baseline instead noises each score independently.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accountant::Accountant;
use crate::dataset::{Dataset, LabeledPoint};
use crate::error::{Error, Result};
use crate::knn::{recursion_sorted, sorted_order, Harmonics, KnnConfig, KnnVariant, VALIDATION_CHUNK};
use crate::rng::{self, tag};
use crate::tknn::{tally, tknn_value, A2Memo, NeighborCounts, TknnConfig};
use crate::valuation::{Algorithm, PrivacyBudget, ValuationResult, WeightKind};

/// l2 sensitivity of `(c, c_x, c_zplus)` to adding or removing one point.
pub const COUNT_SENSITIVITY: f64 = 1.732_050_807_568_877_2;

/// Global sensitivity of the older KNN-Shapley score for one validation point.
pub fn old_knn_sensitivity(k: usize) -> f64 {
    1.0 / (k as f64 * (k as f64 + 1.0))
}

/// Noise scale of the Gaussian mechanism for a single `(epsilon, delta)` release.
pub fn calibrate_sigma(sensitivity: f64, epsilon: f64, delta: f64) -> Result<f64> {
    if !(sensitivity > 0.0 && sensitivity.is_finite()) {
        return Err(Error::param("sensitivity", "must be positive"));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::param("epsilon", "must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param("delta", format!("{delta} is not in (0, 1)")));
    }
    Ok(sensitivity * (1.25 / delta).ln().sqrt() / epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpParams {
    /// Target budget, when `sigma` was derived from one.
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub sigma: f64,
    /// Poisson sampling rate; 1 disables subsampling.
    pub q: f64,
    pub seed: u64,
}

impl DpParams {
    /// Explicit noise scale; `epsilon` is left to the accountant.
    pub fn with_sigma(sigma: f64, delta: f64, q: f64, seed: u64) -> Result<Self> {
        let p = Self {
            epsilon: None,
            delta,
            sigma,
            q,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    /// Noise from the single-release calibration rule.
    pub fn calibrated(epsilon: f64, delta: f64, sensitivity: f64, q: f64, seed: u64) -> Result<Self> {
        let sigma = calibrate_sigma(sensitivity, epsilon, delta)?;
        let p = Self {
            epsilon: Some(epsilon),
            delta,
            sigma,
            q,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    /// Smallest noise whose composition over `mechanisms` releases stays
    /// within `(epsilon, delta)` according to `accountant`.
    pub fn accounted(
        epsilon: f64,
        delta: f64,
        sensitivity: f64,
        q: f64,
        mechanisms: usize,
        seed: u64,
        accountant: &Accountant,
    ) -> Result<Self> {
        let sigma = accountant.calibrate_sigma(sensitivity, q, mechanisms, epsilon, delta)?;
        let p = Self {
            epsilon: Some(epsilon),
            delta,
            sigma,
            q,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::param("epsilon", "must be positive"));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::param("delta", format!("{} is not in (0, 1)", self.delta)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::param("sigma", "must be finite and nonnegative"));
        }
        check_rate(self.q)
    }

    fn budget(&self, mechanism: &str, sensitivity: f64, noise_draws: usize) -> PrivacyBudget {
        PrivacyBudget {
            mechanism: mechanism.to_string(),
            epsilon: self.epsilon,
            delta: self.delta,
            sigma: self.sigma,
            sensitivity,
            q: self.q,
            seed: self.seed,
            noise_draws,
        }
    }
}

fn check_rate(q: f64) -> Result<()> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::param("q", format!("{q} is not in (0, 1]")));
    }
    Ok(())
}

/// Released counts for one validation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivatizedCounts {
    pub counts: NeighborCounts,
    /// The Gaussian draws, kept for auditing. Not part of the release.
    #[serde(skip)]
    pub raw_noise_draws: [f64; 3],
}

fn privatize_with(counts: &NeighborCounts, sigma: f64, rng: &mut ChaCha8Rng) -> PrivatizedCounts {
    let mut noise = [0.0; 3];
    for slot in &mut noise {
        let z: f64 = StandardNormal.sample(rng);
        *slot = sigma * z;
    }
    let noisy = |v: u64, e: f64| (v as f64 + e).round() as i64;
    PrivatizedCounts {
        counts: NeighborCounts::clamped(
            noisy(counts.c, noise[0]),
            noisy(counts.c_x, noise[1]),
            noisy(counts.c_zplus, noise[2]),
        ),
        raw_noise_draws: noise,
    }
}

/// Adds `N(0, sigma^2)` to each count, rounds, and clamps into the valid
/// ranges (`c` first, then `c_x`, then `c_zplus`).
pub fn privatize_counts(counts: &NeighborCounts, sigma: f64, seed: u64) -> PrivatizedCounts {
    privatize_with(counts, sigma, &mut rng::stream(seed, &[tag::COUNT_NOISE]))
}

/// Indices kept by independent coin flips with probability `q`, ascending.
fn poisson_indices(n: usize, q: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if q >= 1.0 {
        return (0..n).collect();
    }
    // skip ahead by geometric gaps instead of flipping every coin
    let gaps = Geometric::new(q).expect("q checked in (0, 1)");
    let mut kept = Vec::with_capacity((n as f64 * q * 1.2) as usize + 8);
    let mut next = 0u64;
    loop {
        next = next.saturating_add(gaps.sample(rng));
        if next >= n as u64 {
            break;
        }
        kept.push(next as usize);
        next += 1;
    }
    kept
}

/// A Poisson subsample together with the original row of every kept point.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsample {
    pub data: Dataset,
    pub owners: Vec<usize>,
}

pub fn poisson_subsample(ds: &Dataset, q: f64, seed: u64) -> Result<Subsample> {
    check_rate(q)?;
    let owners = poisson_indices(ds.len(), q, &mut rng::stream(seed, &[tag::SUBSAMPLE]));
    Ok(Subsample {
        data: ds.select(&owners),
        owners,
    })
}

fn check_shapes(ds: &Dataset, validation: &Dataset) -> Result<()> {
    if validation.is_empty() {
        return Err(Error::EmptyValidation);
    }
    if validation.dim() != ds.dim() {
        return Err(Error::DimensionMismatch {
            expected: ds.dim(),
            got: validation.dim(),
        });
    }
    Ok(())
}

/// Subsample membership and the released counts for validation point `v`.
fn release_for(
    ds: &Dataset,
    cfg: &TknnConfig,
    zval: &LabeledPoint,
    v: usize,
    params: &DpParams,
    dist: &mut [f64],
) -> Result<(Option<Vec<bool>>, PrivatizedCounts)> {
    ds.check_point(zval)?;
    cfg.metric.distances_into(ds, &zval.features, dist)?;
    let (sampled, full) = if params.q < 1.0 {
        let mut r = rng::stream(params.seed, &[v as u64, tag::SUBSAMPLE]);
        let kept = poisson_indices(ds.len(), params.q, &mut r);
        let mut mask = vec![false; ds.len()];
        let (mut nb, mut same) = (0u64, 0u64);
        for &i in &kept {
            mask[i] = true;
            if dist[i] <= cfg.tau {
                nb += 1;
                same += u64::from(ds.label(i) == zval.label);
            }
        }
        let counts = NeighborCounts {
            c: kept.len() as u64,
            c_x: 1 + nb,
            c_zplus: same,
        };
        (Some(mask), counts)
    } else {
        (None, tally(dist, ds.labels(), cfg.tau, zval.label))
    };
    let mut r = rng::stream(params.seed, &[v as u64, tag::COUNT_NOISE]);
    Ok((sampled, privatize_with(&full, params.sigma, &mut r)))
}

/// Score of one owner given the released counts of a validation point.
fn owner_score(
    released: &NeighborCounts,
    in_sample: bool,
    in_threshold: bool,
    label_match: bool,
    num_classes: usize,
    memo: &mut A2Memo,
) -> f64 {
    if !in_threshold {
        return 0.0;
    }
    let counts = if in_sample {
        released.leave_one_out_clamped(in_threshold, label_match)
    } else {
        *released
    };
    tknn_value(&counts, label_match, in_threshold, num_classes, memo)
}

/// Differentially private TKNN-Shapley of every training point, summed
/// over the validation set, with the released counts in validation order.
pub fn dp_tknn_shapley_all(
    ds: &Dataset,
    cfg: &TknnConfig,
    validation: &Dataset,
    params: &DpParams,
) -> Result<(ValuationResult, Vec<PrivatizedCounts>)> {
    cfg.validate()?;
    params.validate()?;
    check_shapes(ds, validation)?;
    let n = ds.len();
    let c = ds.num_classes();
    let chunks: Vec<usize> = (0..validation.len()).step_by(VALIDATION_CHUNK).collect();
    let partials = chunks
        .par_iter()
        .map(|&start| {
            let mut acc = vec![0.0; n];
            let mut dist = vec![0.0; n];
            let mut released = Vec::new();
            for v in start..(start + VALIDATION_CHUNK).min(validation.len()) {
                let z = validation.point(v).to_owned();
                let (sampled, priv_counts) = release_for(ds, cfg, &z, v, params, &mut dist)?;
                let mut memo = A2Memo::default();
                for (i, slot) in acc.iter_mut().enumerate() {
                    let in_sample = sampled.as_ref().is_none_or(|m| m[i]);
                    let matched = ds.label(i) == z.label;
                    *slot += owner_score(&priv_counts.counts, in_sample, dist[i] <= cfg.tau, matched, c, &mut memo);
                }
                released.push(priv_counts);
            }
            Ok((acc, released))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut scores = vec![0.0; n];
    let mut released = Vec::with_capacity(validation.len());
    for (part, rel) in partials {
        for (s, p) in scores.iter_mut().zip(part) {
            *s += p;
        }
        released.extend(rel);
    }
    let mut method = cfg.descriptor(c, WeightKind::Shapley, Algorithm::ClosedForm);
    method.privacy = Some(params.budget("gaussian_counts", COUNT_SENSITIVITY, 3 * validation.len()));
    Ok((
        ValuationResult {
            method,
            validation_size: validation.len(),
            scores,
        },
        released,
    ))
}

/// Recomputes one owner's DP-TKNN score from already released counts.
/// Only the owner's own point is read in the clear.
pub fn dp_tknn_owner_score(
    ds: &Dataset,
    cfg: &TknnConfig,
    validation: &Dataset,
    params: &DpParams,
    released: &[PrivatizedCounts],
    owner: usize,
) -> Result<f64> {
    cfg.validate()?;
    params.validate()?;
    check_shapes(ds, validation)?;
    if released.len() != validation.len() {
        return Err(Error::Inconsistent(format!(
            "{} released counts for {} validation points",
            released.len(),
            validation.len()
        )));
    }
    if owner >= ds.len() {
        return Err(Error::param("owner", format!("{owner} is out of range")));
    }
    let x = ds.point(owner);
    let mut total = 0.0;
    let mut memo = A2Memo::default();
    for (v, rel) in released.iter().enumerate() {
        let z = validation.point(v);
        let in_sample = if params.q < 1.0 {
            let mut r = rng::stream(params.seed, &[v as u64, tag::SUBSAMPLE]);
            poisson_indices(ds.len(), params.q, &mut r).binary_search(&owner).is_ok()
        } else {
            true
        };
        let d = crate::dataset::distance(cfg.metric, x.features, z.features)?;
        total += owner_score(
            &rel.counts,
            in_sample,
            d <= cfg.tau,
            x.label == z.label,
            ds.num_classes(),
            &mut memo,
        );
    }
    Ok(total)
}

/// Baseline: older-variant KNN-Shapley plus independent Gaussian noise on
/// every (owner, validation point) score. With `subsampled`, each owner's
/// score is computed on a fresh Poisson subsample of the other points.
pub fn dp_knn_shapley_all(
    ds: &Dataset,
    cfg: &KnnConfig,
    validation: &Dataset,
    params: &DpParams,
    subsampled: bool,
) -> Result<ValuationResult> {
    cfg.validate()?;
    params.validate()?;
    if cfg.variant != KnnVariant::Old {
        return Err(Error::param("variant", "the private baseline uses the old variant"));
    }
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_shapes(ds, validation)?;
    let n = ds.len();
    let c = ds.num_classes();
    let chunks: Vec<usize> = (0..validation.len()).step_by(VALIDATION_CHUNK).collect();
    let partials = chunks
        .par_iter()
        .map(|&start| {
            let mut acc = vec![0.0; n];
            let mut dist = vec![0.0; n];
            let mut matches = Vec::with_capacity(n);
            let mut sorted_scores = vec![0.0; n];
            for v in start..(start + VALIDATION_CHUNK).min(validation.len()) {
                let z = validation.point(v).to_owned();
                ds.check_point(&z)?;
                cfg.metric.distances_into(ds, &z.features, &mut dist)?;
                let order = sorted_order(&dist);
                if subsampled {
                    for (i, slot) in acc.iter_mut().enumerate() {
                        let mut r = rng::stream(params.seed, &[v as u64, tag::SUBSAMPLE, i as u64]);
                        // the owner plus a subsample of everyone else, in distance order
                        matches.clear();
                        let mut owner_pos = 0;
                        for &j in &order {
                            let j = j as usize;
                            if j == i || r.random_bool(params.q) {
                                if j == i {
                                    owner_pos = matches.len();
                                }
                                matches.push(ds.label(j) == z.label);
                            }
                        }
                        let h = Harmonics::new(matches.len(), cfg.k);
                        recursion_sorted(&matches, cfg.variant, c, &h, &mut sorted_scores[..matches.len()]);
                        *slot += sorted_scores[owner_pos];
                    }
                } else {
                    matches.clear();
                    matches.extend(order.iter().map(|&j| ds.label(j as usize) == z.label));
                    let h = Harmonics::new(n, cfg.k);
                    recursion_sorted(&matches, cfg.variant, c, &h, &mut sorted_scores);
                    for (&j, &s) in order.iter().zip(&sorted_scores) {
                        acc[j as usize] += s;
                    }
                }
                let mut r = rng::stream(params.seed, &[v as u64, tag::SCORE_NOISE]);
                for slot in acc.iter_mut() {
                    let e: f64 = StandardNormal.sample(&mut r);
                    *slot += params.sigma * e;
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut scores = vec![0.0; n];
    for part in partials {
        for (s, p) in scores.iter_mut().zip(part) {
            *s += p;
        }
    }
    let mut method = cfg.descriptor(c);
    let mechanism = if subsampled { "gaussian_scores_subsampled" } else { "gaussian_scores" };
    method.privacy = Some(params.budget(mechanism, old_knn_sensitivity(cfg.k), n * validation.len()));
    Ok(ValuationResult {
        method,
        validation_size: validation.len(),
        scores,
    })
}
