//! Likelihood-ratio membership inference against data-value scores.
//!
//! The attacker owns a point, submits a copy of it, and observes the copy's
//! value. Shadow datasets with and without the point give two Gaussian
//! reference distributions for that value; the verdict is their density
//! ratio at the observed value.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DistanceMetric, LabeledPoint};
use crate::error::{Error, Result};
use crate::eval::auroc_mask;
use crate::knn::{recursion_sorted, sorted_order, Harmonics, KnnVariant};
use crate::rng::{self, tag};
use crate::tknn::{tknn_value, A2Memo, NeighborCounts};

/// The value function under attack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ValueFunction {
    Knn { k: usize, variant: KnnVariant, metric: DistanceMetric },
    Tknn { tau: f64, metric: DistanceMetric },
    /// TKNN with privatized, optionally subsampled counts.
    DpTknn { tau: f64, metric: DistanceMetric, sigma: f64, q: f64 },
    /// Ignores the data; every point is worth `1 / C`.
    Constant,
}

impl ValueFunction {
    fn validate(&self) -> Result<()> {
        match *self {
            ValueFunction::Knn { k: 0, .. } => Err(Error::param("k", "must be at least 1")),
            ValueFunction::Tknn { tau, metric } => metric.check_threshold(tau),
            ValueFunction::DpTknn { tau, metric, sigma, q } => {
                metric.check_threshold(tau)?;
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::param("sigma", "must be finite and nonnegative"));
                }
                if !(q > 0.0 && q <= 1.0) {
                    return Err(Error::param("q", format!("{q} is not in (0, 1]")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn metric(&self) -> Option<DistanceMetric> {
        match *self {
            ValueFunction::Knn { metric, .. }
            | ValueFunction::Tknn { metric, .. }
            | ValueFunction::DpTknn { metric, .. } => Some(metric),
            ValueFunction::Constant => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiaConfig {
    /// Shadow datasets per target.
    pub shadow_count: usize,
    /// Points per shadow dataset; defaults to the server dataset's size.
    pub shadow_size: Option<usize>,
    pub variance_floor: f64,
    pub seed: u64,
}

impl Default for MiaConfig {
    fn default() -> Self {
        Self {
            shadow_count: 32,
            shadow_size: None,
            variance_floor: 1e-12,
            seed: 0,
        }
    }
}

impl MiaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shadow_count < 2 {
            return Err(Error::param("shadow_count", "need at least 2 shadow datasets"));
        }
        if self.variance_floor.is_nan() || self.variance_floor <= 0.0 {
            return Err(Error::param("variance_floor", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiaVerdict {
    /// Likelihood ratio, IN over OUT (clamped to stay finite).
    pub lambda: f64,
    pub log_lambda: f64,
    pub mu_in: f64,
    pub mu_out: f64,
    pub var_in: f64,
    pub var_out: f64,
    pub phi_obs: f64,
}

fn mean_var(xs: &[f64], floor: f64) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.max(floor))
}

fn log_density(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((x - mean).powi(2) / var + (2.0 * std::f64::consts::PI * var).ln())
}

/// Fits one Gaussian to each score set and compares densities at `phi_obs`.
pub fn likelihood_ratio(in_scores: &[f64], out_scores: &[f64], phi_obs: f64, variance_floor: f64) -> Result<MiaVerdict> {
    if in_scores.is_empty() || out_scores.is_empty() {
        return Err(Error::param("scores", "need IN and OUT scores"));
    }
    let (mu_in, var_in) = mean_var(in_scores, variance_floor);
    let (mu_out, var_out) = mean_var(out_scores, variance_floor);
    let log_lambda = log_density(phi_obs, mu_in, var_in) - log_density(phi_obs, mu_out, var_out);
    Ok(MiaVerdict {
        lambda: log_lambda.clamp(-700.0, 700.0).exp(),
        log_lambda,
        mu_in,
        mu_out,
        var_in,
        var_out,
        phi_obs,
    })
}

/// Every point the attack can touch, with per-validation-point orderings
/// precomputed so each valuation only walks a membership mask.
struct Universe {
    n: usize,
    num_classes: usize,
    labels: Vec<usize>,
    zval_labels: Vec<usize>,
    /// Per validation point: universe rows sorted by (distance, row).
    orders: Vec<Vec<u32>>,
    /// Per validation point: rows within the threshold.
    within: Vec<Vec<bool>>,
}

impl Universe {
    fn build(points: &Dataset, zval: &Dataset, value_fn: &ValueFunction) -> Result<Self> {
        let mut orders = Vec::new();
        let mut within = Vec::new();
        if let Some(metric) = value_fn.metric() {
            for v in 0..zval.len() {
                let dist = metric.distances_to(points, zval.features(v))?;
                match *value_fn {
                    ValueFunction::Knn { .. } => orders.push(sorted_order(&dist)),
                    ValueFunction::Tknn { tau, .. } | ValueFunction::DpTknn { tau, .. } => {
                        within.push(dist.iter().map(|&d| d <= tau).collect())
                    }
                    ValueFunction::Constant => {}
                }
            }
        }
        Ok(Self {
            n: points.len(),
            num_classes: points.num_classes(),
            labels: points.labels().to_vec(),
            zval_labels: zval.labels().to_vec(),
            orders,
            within,
        })
    }

    /// Value, summed over validation points, of a copy of row `target`
    /// added to the rows in `mask`. The copy sorts right after the original.
    fn copy_value(&self, value_fn: &ValueFunction, mask: &[bool], target: usize, rng: &mut ChaCha8Rng, buf: &mut Scratch) -> f64 {
        let size = mask.iter().filter(|&&b| b).count();
        let mut total = 0.0;
        for (v, &zl) in self.zval_labels.iter().enumerate() {
            let copy_match = self.labels[target] == zl;
            total += match *value_fn {
                ValueFunction::Constant => 1.0 / self.num_classes as f64,
                ValueFunction::Knn { k, variant, .. } => {
                    buf.matches.clear();
                    let mut pos = 0;
                    for &row in &self.orders[v] {
                        let row = row as usize;
                        if mask[row] {
                            buf.matches.push(self.labels[row] == zl);
                        }
                        if row == target {
                            pos = buf.matches.len();
                            buf.matches.push(copy_match);
                        }
                    }
                    let len = buf.matches.len();
                    buf.scores.resize(len, 0.0);
                    recursion_sorted(&buf.matches, variant, self.num_classes, &Harmonics::new(len, k), &mut buf.scores);
                    buf.scores[pos]
                }
                ValueFunction::Tknn { .. } | ValueFunction::DpTknn { .. } => {
                    let within = &self.within[v];
                    if !within[target] {
                        // the copy sits outside the threshold and is worth nothing
                        continue;
                    }
                    let mut counts = self.tally(mask, within, zl, size);
                    if let ValueFunction::DpTknn { sigma, q, .. } = *value_fn {
                        if q < 1.0 {
                            counts = self.subsampled_tally(mask, within, zl, size, q, rng);
                        }
                        counts = noisy(&counts, sigma, rng);
                    }
                    tknn_value(&counts, copy_match, true, self.num_classes, &mut buf.memo)
                }
            };
        }
        total
    }

    fn tally(&self, mask: &[bool], within: &[bool], label: usize, size: usize) -> NeighborCounts {
        let (mut nb, mut same) = (0u64, 0u64);
        for row in 0..self.n {
            if mask[row] && within[row] {
                nb += 1;
                same += u64::from(self.labels[row] == label);
            }
        }
        NeighborCounts {
            c: size as u64,
            c_x: 1 + nb,
            c_zplus: same,
        }
    }

    /// Counts on a Poisson subsample of the masked rows. Only rows inside
    /// the threshold need individual coins; the rest enter through `c`.
    fn subsampled_tally(&self, mask: &[bool], within: &[bool], label: usize, size: usize, q: f64, rng: &mut ChaCha8Rng) -> NeighborCounts {
        let (mut nb, mut same, mut inside) = (0u64, 0u64, 0u64);
        for row in 0..self.n {
            if mask[row] && within[row] {
                inside += 1;
                if rng.random_bool(q) {
                    nb += 1;
                    same += u64::from(self.labels[row] == label);
                }
            }
        }
        let outside = Binomial::new(size as u64 - inside, q).expect("q in (0, 1]").sample(rng);
        NeighborCounts {
            c: nb + outside,
            c_x: 1 + nb,
            c_zplus: same,
        }
    }
}

fn noisy(counts: &NeighborCounts, sigma: f64, rng: &mut ChaCha8Rng) -> NeighborCounts {
    let mut draw = |v: u64| {
        let z: f64 = StandardNormal.sample(rng);
        (v as f64 + sigma * z).round() as i64
    };
    let c = draw(counts.c);
    let c_x = draw(counts.c_x);
    let c_zplus = draw(counts.c_zplus);
    NeighborCounts::clamped(c, c_x, c_zplus)
}

#[derive(Default)]
struct Scratch {
    matches: Vec<bool>,
    scores: Vec<f64>,
    memo: A2Memo,
}

/// Layout of the universe: shadow pool, then server, then targets.
struct Layout {
    pool: usize,
    server: usize,
}

impl Layout {
    fn server_rows(&self) -> std::ops::Range<usize> {
        self.pool..self.pool + self.server
    }

    fn target_row(&self, t: usize) -> usize {
        self.pool + self.server + t
    }
}

fn attack_targets(
    value_fn: &ValueFunction,
    targets: &Dataset,
    shadow_pool: &Dataset,
    server: &Dataset,
    cfg: &MiaConfig,
    zval: &Dataset,
) -> Result<Vec<MiaVerdict>> {
    value_fn.validate()?;
    cfg.validate()?;
    if zval.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let shadow_size = cfg.shadow_size.unwrap_or(server.len());
    if shadow_size > shadow_pool.len() {
        return Err(Error::param(
            "shadow_pool",
            format!("{} points cannot fill shadow datasets of {shadow_size}", shadow_pool.len()),
        ));
    }
    let points = shadow_pool.concat(server)?.concat(targets)?;
    let zval = zval.clone().with_num_classes(points.num_classes().max(zval.num_classes()))?;
    let points = points.with_num_classes(zval.num_classes())?;
    let universe = Universe::build(&points, &zval, value_fn)?;
    let layout = Layout {
        pool: shadow_pool.len(),
        server: server.len(),
    };
    (0..targets.len())
        .into_par_iter()
        .map(|t| {
            let row = layout.target_row(t);
            let mut buf = Scratch::default();
            let mut mask = vec![false; universe.n];
            let mut ins = Vec::with_capacity(cfg.shadow_count);
            let mut outs = Vec::with_capacity(cfg.shadow_count);
            for s in 0..cfg.shadow_count {
                let mut r = rng::stream(cfg.seed, &[tag::SHADOW, t as u64, s as u64]);
                mask.iter_mut().for_each(|m| *m = false);
                for i in sample(&mut r, layout.pool, shadow_size) {
                    mask[i] = true;
                }
                outs.push(universe.copy_value(value_fn, &mask, row, &mut r, &mut buf));
                mask[row] = true;
                ins.push(universe.copy_value(value_fn, &mask, row, &mut r, &mut buf));
            }
            mask.iter_mut().for_each(|m| *m = false);
            for i in layout.server_rows() {
                mask[i] = true;
            }
            let mut r = rng::stream(cfg.seed, &[tag::SHADOW, t as u64, u64::MAX]);
            let observed = universe.copy_value(value_fn, &mask, row, &mut r, &mut buf);
            likelihood_ratio(&ins, &outs, observed, cfg.variance_floor)
        })
        .collect()
}

/// Attack verdict for a single target point.
pub fn mia_score(
    value_fn: &ValueFunction,
    target: &LabeledPoint,
    shadow_pool: &Dataset,
    server: &Dataset,
    cfg: &MiaConfig,
    zval: &Dataset,
) -> Result<MiaVerdict> {
    let targets = Dataset::from_points(std::slice::from_ref(target), server.dim(), server.num_classes())?;
    Ok(attack_targets(value_fn, &targets, shadow_pool, server, cfg, zval)?[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaReport {
    pub members: Vec<MiaVerdict>,
    pub nonmembers: Vec<MiaVerdict>,
    pub auroc: f64,
}

/// Attacks every member and non-member and scores the log-ratios with
/// members as positives.
pub fn mia_attack(
    value_fn: &ValueFunction,
    members: &Dataset,
    nonmembers: &Dataset,
    shadow_pool: &Dataset,
    server: &Dataset,
    cfg: &MiaConfig,
    zval: &Dataset,
) -> Result<MiaReport> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::param("targets", "need members and non-members"));
    }
    let targets = members.concat(nonmembers)?;
    let mut verdicts = attack_targets(value_fn, &targets, shadow_pool, server, cfg, zval)?;
    let nonmember_verdicts = verdicts.split_off(members.len());
    let scores: Vec<f64> = verdicts.iter().chain(&nonmember_verdicts).map(|v| v.log_lambda).collect();
    let is_member: Vec<bool> = (0..scores.len()).map(|i| i < members.len()).collect();
    Ok(MiaReport {
        auroc: auroc_mask(&scores, &is_member)?,
        members: verdicts,
        nonmembers: nonmember_verdicts,
    })
}

pub fn mia_auroc(
    value_fn: &ValueFunction,
    members: &Dataset,
    nonmembers: &Dataset,
    shadow_pool: &Dataset,
    server: &Dataset,
    cfg: &MiaConfig,
    zval: &Dataset,
) -> Result<f64> {
    Ok(mia_attack(value_fn, members, nonmembers, shadow_pool, server, cfg, zval)?.auroc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sets_give_unit_ratio() {
        let s = [0.1, 0.3, 0.2];
        let v = likelihood_ratio(&s, &s, 0.7, 1e-12).unwrap();
        assert_eq!(v.lambda, 1.0);
        assert_eq!(v.log_lambda, 0.0);
    }

    #[test]
    fn low_observation_favors_in_when_in_is_lower() {
        let v = likelihood_ratio(&[0.1, 0.2, 0.15], &[0.5, 0.6, 0.55], 0.05, 1e-12).unwrap();
        assert!(v.lambda > 1.0);
    }

    #[test]
    fn floor_handles_constant_scores() {
        let v = likelihood_ratio(&[1.0, 1.0], &[1.0, 1.0], 1.0, 1e-12).unwrap();
        assert_eq!(v.var_in, 1e-12);
        assert_eq!(v.lambda, 1.0);
    }

    #[test]
    fn config_validation() {
        let cfg = MiaConfig {
            shadow_count: 1,
            ..MiaConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert_eq!(MiaConfig::default().shadow_count, 32);
    }
}
