//! Privacy accounting with discretized privacy-loss distributions (PLDs).
//!
//! A mechanism's privacy loss `Y = ln(P(o) / Q(o))`, `o ~ P`, is discretized
//! on a uniform grid with every loss rounded *up*, so `epsilon_at_delta` is
//! an upper bound. Composition adds losses, i.e. convolves the mass vectors.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub const DEFAULT_GRID_STEP: f64 = 1e-4;
pub const DEFAULT_TRUNCATION_TAIL: f64 = 1e-10;

/// Edge mass below this is folded away after each convolution.
const TRIM_BOUND: f64 = 1e-15;

fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// `z` with `P(N(0,1) > z) = p`.
fn upper_quantile(p: f64) -> f64 {
    -Normal::standard().inverse_cdf(p)
}

/// Discrete distribution of the privacy loss on the grid `(offset + j) * step`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyLossDistribution {
    offset: i64,
    step: f64,
    mass: Vec<f64>,
    truncated_mass: f64,
}

impl PrivacyLossDistribution {
    /// All mass on a single loss value (rounded up onto the grid).
    pub fn point_mass(loss: f64, step: f64) -> Result<Self> {
        check_step(step)?;
        Ok(Self {
            offset: (loss / step).ceil() as i64,
            step,
            mass: vec![1.0],
            truncated_mass: 0.0,
        })
    }

    pub fn grid_start(&self) -> f64 {
        self.offset as f64 * self.step
    }

    pub fn grid_step(&self) -> f64 {
        self.step
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Probability of an unbounded loss (tails cut off by truncation).
    pub fn truncated_mass(&self) -> f64 {
        self.truncated_mass
    }

    pub fn loss(&self, j: usize) -> f64 {
        (self.offset + j as i64) as f64 * self.step
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum::<f64>() + self.truncated_mass
    }

    /// Mean of the finite part of the loss.
    pub fn mean(&self) -> f64 {
        let finite: f64 = self.mass.iter().sum();
        self.mass
            .iter()
            .enumerate()
            .map(|(j, m)| m * self.loss(j))
            .sum::<f64>()
            / finite
    }

    /// `delta(eps) = E[(1 - e^(eps - Y))_+] + truncated_mass`.
    pub fn delta_at_epsilon(&self, epsilon: f64) -> f64 {
        let mut delta = 0.0;
        for (j, &m) in self.mass.iter().enumerate().rev() {
            let y = self.loss(j);
            if y <= epsilon {
                break;
            }
            delta += m * -(epsilon - y).exp_m1();
        }
        delta + self.truncated_mass
    }

    /// Smallest grid epsilon `>= 0` whose delta is at most `delta`.
    pub fn epsilon_at_delta(&self, delta: f64) -> Result<f64> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::param("delta", format!("{delta} is not in (0, 1)")));
        }
        if self.truncated_mass > delta {
            return Err(Error::Accounting(format!(
                "truncated mass {:e} exceeds delta {delta:e}; use a finer grid or smaller truncation tail",
                self.truncated_mass
            )));
        }
        if self.delta_at_epsilon(0.0) <= delta {
            return Ok(0.0);
        }
        // delta(.) is nonincreasing; search grid indices in (0, top].
        let top = (self.offset + self.mass.len() as i64 - 1).max(1);
        let (mut lo, mut hi) = (0i64, top);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.delta_at_epsilon(mid as f64 * self.step) <= delta {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi as f64 * self.step)
    }

    /// Moves mass onto a coarser grid, rounding losses up.
    pub fn resample(&self, step: f64) -> Result<Self> {
        check_step(step)?;
        if step < self.step {
            return Err(Error::param("grid_step", "can only resample onto a coarser grid"));
        }
        if step == self.step {
            return Ok(self.clone());
        }
        let first = (self.loss(0) / step).ceil() as i64;
        let last = (self.loss(self.mass.len() - 1) / step).ceil() as i64;
        let mut mass = vec![0.0; (last - first + 1) as usize];
        for (j, &m) in self.mass.iter().enumerate() {
            let idx = (self.loss(j) / step).ceil() as i64 - first;
            mass[idx as usize] += m;
        }
        Ok(Self {
            offset: first,
            step,
            mass,
            truncated_mass: self.truncated_mass,
        })
    }

    /// Folds near-zero edge bins: the top into `truncated_mass`, the bottom
    /// into the lowest kept bin. Both moves only increase losses.
    fn trim(&mut self, bound: f64) {
        let mut upper = 0.0;
        let mut hi = self.mass.len();
        while hi > 1 && upper + self.mass[hi - 1] <= bound {
            upper += self.mass[hi - 1];
            hi -= 1;
        }
        let mut lower = 0.0;
        let mut lo = 0;
        while lo + 1 < hi && lower + self.mass[lo] <= bound {
            lower += self.mass[lo];
            lo += 1;
        }
        self.mass.truncate(hi);
        self.mass.drain(..lo);
        self.mass[0] += lower;
        self.offset += lo as i64;
        self.truncated_mass += upper;
    }

    fn convolve(&self, other: &Self) -> Self {
        let finite_target = (1.0 - self.truncated_mass) * (1.0 - other.truncated_mass);
        let mut mass = fft_convolve(&self.mass, &other.mass);
        mass.iter_mut().for_each(|m| *m = m.max(0.0));
        let sum: f64 = mass.iter().sum();
        if sum > 0.0 {
            let scale = finite_target / sum;
            mass.iter_mut().for_each(|m| *m *= scale);
        }
        let mut out = Self {
            offset: self.offset + other.offset,
            step: self.step,
            mass,
            truncated_mass: 1.0 - finite_target,
        };
        out.trim(TRIM_BOUND);
        out
    }

    /// Discretizes a loss with the given CDF / survival function over
    /// `[lo, hi]`; mass below `lo` is charged to the lowest bin and mass above
    /// the top bin is truncated.
    fn from_distribution(
        lo: f64,
        hi: f64,
        step: f64,
        cdf: impl Fn(f64) -> f64,
        sf: impl Fn(f64) -> f64,
    ) -> Self {
        let first = (lo / step).floor() as i64;
        let last = ((hi / step).ceil() as i64).max(first);
        let len = (last - first + 1) as usize;
        let mut mass = Vec::with_capacity(len);
        let mut prev_cdf = 0.0;
        let mut prev_sf = 1.0;
        for j in 0..len {
            let y = (first + j as i64) as f64 * step;
            let (c, s) = (cdf(y), sf(y));
            // difference whichever side is further from 1 for precision
            let m = if c < 0.5 { c - prev_cdf } else { prev_sf - s };
            mass.push(m.max(0.0));
            prev_cdf = c;
            prev_sf = s;
        }
        let truncated_mass = prev_sf.max(0.0);
        let mut out = Self {
            offset: first,
            step,
            mass,
            truncated_mass,
        };
        // pin total mass to one against rounding in the differences
        let finite: f64 = out.mass.iter().sum();
        let scale = (1.0 - out.truncated_mass) / finite;
        out.mass.iter_mut().for_each(|m| *m *= scale);
        out
    }
}

fn check_step(step: f64) -> Result<()> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::param("grid_step", "must be positive"));
    }
    Ok(())
}

fn check_tail(tail: f64) -> Result<()> {
    if !(tail > 0.0 && tail < 1.0) {
        return Err(Error::param("truncation_tail", "must be in (0, 1)"));
    }
    Ok(())
}

fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let out_len = a.len() + b.len() - 1;
    if a.len().min(b.len()) <= 32 {
        let mut out = vec![0.0; out_len];
        for (i, &x) in a.iter().enumerate() {
            for (j, &y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        return out;
    }
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |v: &[f64]| {
        let mut buf: Vec<Complex<f64>> = v.iter().map(|&x| Complex::new(x, 0.0)).collect();
        buf.resize(n, Complex::new(0.0, 0.0));
        buf
    };
    let mut fa = pad(a);
    let mut fb = pad(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / n as f64;
    fa[..out_len].iter().map(|c| c.re * scale).collect()
}

/// PLD of the Gaussian mechanism: with `mu = sensitivity / sigma` the loss
/// is `N(mu^2 / 2, mu^2)`.
pub fn gaussian_pld(sensitivity: f64, sigma: f64, grid_step: f64, truncation_tail: f64) -> Result<PrivacyLossDistribution> {
    check_mechanism(sensitivity, sigma)?;
    check_step(grid_step)?;
    check_tail(truncation_tail)?;
    let mu = sensitivity / sigma;
    let mean = mu * mu / 2.0;
    let z = upper_quantile(truncation_tail / 2.0);
    Ok(PrivacyLossDistribution::from_distribution(
        mean - z * mu,
        mean + z * mu,
        grid_step,
        |y| norm_cdf((y - mean) / mu),
        |y| norm_sf((y - mean) / mu),
    ))
}

/// PLD of the Poisson-subsampled Gaussian mechanism under removal of one
/// point: `P = (1-q) N(0, sigma^2) + q N(sensitivity, sigma^2)` against
/// `Q = N(0, sigma^2)`.
pub fn subsampled_gaussian_pld(
    sensitivity: f64,
    sigma: f64,
    q: f64,
    grid_step: f64,
    truncation_tail: f64,
) -> Result<PrivacyLossDistribution> {
    check_mechanism(sensitivity, sigma)?;
    check_step(grid_step)?;
    check_tail(truncation_tail)?;
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::param("q", format!("{q} is not in (0, 1]")));
    }
    let (d, s) = (sensitivity, sigma);
    // loss as a function of the output o (increasing in o)
    let log_ratio = |o: f64| (2.0 * o * d - d * d) / (2.0 * s * s);
    let loss = |o: f64| {
        let t = log_ratio(o);
        if q == 1.0 {
            t
        } else {
            let (a, b) = ((1.0 - q).ln(), q.ln() + t);
            a.max(b) + (-(a - b).abs()).exp().ln_1p()
        }
    };
    // output at which the loss equals y; None below the loss infimum ln(1-q)
    let output_at = |y: f64| -> Option<f64> {
        let t = if q == 1.0 {
            y
        } else {
            let u = y.exp_m1() / q + 1.0;
            if u <= 0.0 {
                return None;
            }
            u.ln()
        };
        Some(s * s / d * t + d / 2.0)
    };
    let cdf = |y: f64| match output_at(y) {
        None => 0.0,
        Some(o) => (1.0 - q) * norm_cdf(o / s) + q * norm_cdf((o - d) / s),
    };
    let sf = |y: f64| match output_at(y) {
        None => 1.0,
        Some(o) => (1.0 - q) * norm_sf(o / s) + q * norm_sf((o - d) / s),
    };
    let z = upper_quantile(truncation_tail / 2.0);
    let lo = loss(-s * z);
    let hi = loss(d + s * z);
    Ok(PrivacyLossDistribution::from_distribution(lo, hi, grid_step, cdf, sf))
}

fn check_mechanism(sensitivity: f64, sigma: f64) -> Result<()> {
    if !(sensitivity > 0.0 && sensitivity.is_finite()) {
        return Err(Error::param("sensitivity", "must be positive"));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param("sigma", "must be positive"));
    }
    Ok(())
}

/// PLD of the composition of `plds`. Grids are resampled to the coarsest
/// step first. Eight or more copies of one PLD compose by repeated squaring.
pub fn compose(plds: &[PrivacyLossDistribution]) -> Result<PrivacyLossDistribution> {
    let first = plds.first().ok_or_else(|| Error::param("plds", "nothing to compose"))?;
    if plds.len() >= 8 && plds.iter().all(|p| p == first) {
        return compose_identical(first, plds.len());
    }
    let step = plds.iter().map(|p| p.step).fold(0.0, f64::max);
    let mut acc = first.resample(step)?;
    for p in &plds[1..] {
        acc = acc.convolve(&p.resample(step)?);
    }
    Ok(acc)
}

/// `m`-fold self-composition.
pub fn compose_identical(pld: &PrivacyLossDistribution, m: usize) -> Result<PrivacyLossDistribution> {
    if m == 0 {
        return Err(Error::param("mechanisms", "must be at least 1"));
    }
    let mut result: Option<PrivacyLossDistribution> = None;
    let mut base = pld.clone();
    let mut k = m;
    loop {
        if k & 1 == 1 {
            result = Some(match result {
                None => base.clone(),
                Some(r) => r.convolve(&base),
            });
        }
        k >>= 1;
        if k == 0 {
            break;
        }
        base = base.convolve(&base);
    }
    Ok(result.expect("m >= 1"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccountantQuery {
    pub target_delta: f64,
}

impl AccountantQuery {
    pub fn new(target_delta: f64) -> Result<Self> {
        if !(target_delta > 0.0 && target_delta < 1.0) {
            return Err(Error::param("delta", format!("{target_delta} is not in (0, 1)")));
        }
        Ok(Self { target_delta })
    }
}

pub fn epsilon_at_delta(pld: &PrivacyLossDistribution, query: &AccountantQuery) -> Result<f64> {
    pld.epsilon_at_delta(query.target_delta)
}

/// Exact `delta(eps)` of a single Gaussian mechanism with `mu = sensitivity / sigma`.
pub fn gaussian_delta_analytic(mu: f64, epsilon: f64) -> f64 {
    norm_cdf(-epsilon / mu + mu / 2.0) - epsilon.exp() * norm_cdf(-epsilon / mu - mu / 2.0)
}

/// Exact `epsilon(delta)` of a single Gaussian mechanism, by bisection.
pub fn gaussian_epsilon_analytic(mu: f64, delta: f64) -> f64 {
    if gaussian_delta_analytic(mu, 0.0) <= delta {
        return 0.0;
    }
    let mut hi = 1.0;
    while gaussian_delta_analytic(mu, hi) > delta {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gaussian_delta_analytic(mu, mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Summary of a composed guarantee, as written to report files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountantReport {
    pub mechanisms: usize,
    pub sensitivity: f64,
    pub sigma: f64,
    pub q: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub grid_step: f64,
    pub truncated_mass: f64,
}

/// Grid parameters plus the composition routines the release code needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accountant {
    pub grid_step: f64,
    pub truncation_tail: f64,
}

impl Default for Accountant {
    fn default() -> Self {
        Self {
            grid_step: DEFAULT_GRID_STEP,
            truncation_tail: DEFAULT_TRUNCATION_TAIL,
        }
    }
}

impl Accountant {
    pub fn mechanism_pld(&self, sensitivity: f64, sigma: f64, q: f64) -> Result<PrivacyLossDistribution> {
        if q == 1.0 {
            gaussian_pld(sensitivity, sigma, self.grid_step, self.truncation_tail)
        } else {
            subsampled_gaussian_pld(sensitivity, sigma, q, self.grid_step, self.truncation_tail)
        }
    }

    /// Composed guarantee of `mechanisms` identical (subsampled) Gaussian releases.
    pub fn report(&self, sensitivity: f64, sigma: f64, q: f64, mechanisms: usize, delta: f64) -> Result<AccountantReport> {
        let query = AccountantQuery::new(delta)?;
        let pld = compose_identical(&self.mechanism_pld(sensitivity, sigma, q)?, mechanisms)?;
        Ok(AccountantReport {
            mechanisms,
            sensitivity,
            sigma,
            q,
            delta,
            epsilon: epsilon_at_delta(&pld, &query)?,
            grid_step: self.grid_step,
            truncated_mass: pld.truncated_mass(),
        })
    }

    /// Smallest noise scale (to a relative 1e-3) whose composed guarantee
    /// over `mechanisms` releases is at most `(epsilon, delta)`.
    pub fn calibrate_sigma(&self, sensitivity: f64, q: f64, mechanisms: usize, epsilon: f64, delta: f64) -> Result<f64> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::param("epsilon", "must be positive"));
        }
        let eps_at = |sigma: f64| -> Result<f64> {
            match self.report(sensitivity, sigma, q, mechanisms, delta) {
                Ok(r) => Ok(r.epsilon),
                Err(Error::Accounting(_)) => Ok(f64::INFINITY),
                Err(e) => Err(e),
            }
        };
        // bracket in units of the sensitivity
        let (mut lo, mut hi) = (sensitivity, sensitivity);
        if eps_at(hi)? > epsilon {
            while eps_at(hi)? > epsilon {
                lo = hi;
                hi *= 2.0;
                if hi > sensitivity * 1e6 {
                    return Err(Error::Accounting("no noise scale reaches the target epsilon".into()));
                }
            }
        } else {
            while eps_at(lo)? <= epsilon {
                hi = lo;
                lo /= 2.0;
                if lo < sensitivity * 1e-3 {
                    return Ok(hi);
                }
            }
        }
        while hi / lo > 1.0 + 1e-3 {
            let mid = (lo * hi).sqrt();
            if eps_at(mid)? <= epsilon {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_epsilon_is_the_loss() {
        let pld = PrivacyLossDistribution::point_mass(0.75, 1e-3).unwrap();
        for delta in [1e-8, 1e-5, 1e-4] {
            assert!((pld.epsilon_at_delta(delta).unwrap() - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_mean_and_mass() {
        let pld = gaussian_pld(1.0, 2.0, 1e-4, 1e-10).unwrap();
        assert!((pld.mean() - 0.125).abs() <= 1e-4);
        assert!((pld.total_mass() - 1.0).abs() < 1e-9);
        assert!(pld.truncated_mass() <= 1e-10);
    }

    #[test]
    fn epsilon_shrinks_with_more_noise() {
        let mut last = f64::INFINITY;
        for sigma in [1.0, 2.0, 4.0, 8.0, 16.0] {
            let eps = gaussian_pld(1.0, sigma, 1e-4, 1e-10).unwrap().epsilon_at_delta(1e-5).unwrap();
            assert!(eps < last);
            last = eps;
        }
        assert!(last < 0.4);
    }

    #[test]
    fn compose_single_is_identity() {
        let p = gaussian_pld(1.0, 3.0, 1e-3, 1e-10).unwrap();
        assert_eq!(compose(std::slice::from_ref(&p)).unwrap(), p);
    }

    #[test]
    fn delta_too_small_for_truncation() {
        let p = gaussian_pld(1.0, 3.0, 1e-3, 1e-3).unwrap();
        assert!(matches!(p.epsilon_at_delta(1e-6), Err(Error::Accounting(_))));
    }

    #[test]
    fn resample_rounds_up() {
        let p = gaussian_pld(1.0, 1.0, 1e-4, 1e-10).unwrap();
        let coarse = p.resample(1e-2).unwrap();
        assert!((coarse.total_mass() - 1.0).abs() < 1e-12);
        assert!(coarse.mean() >= p.mean());
        assert!(coarse.epsilon_at_delta(1e-5).unwrap() >= p.epsilon_at_delta(1e-5).unwrap());
    }

    #[test]
    fn parameter_validation() {
        assert!(gaussian_pld(1.0, 0.0, 1e-4, 1e-10).is_err());
        assert!(gaussian_pld(1.0, 1.0, 0.0, 1e-10).is_err());
        assert!(subsampled_gaussian_pld(1.0, 1.0, 0.0, 1e-4, 1e-10).is_err());
        assert!(subsampled_gaussian_pld(1.0, 1.0, 1.5, 1e-4, 1e-10).is_err());
        assert!(AccountantQuery::new(0.0).is_err());
        assert!(compose(&[]).is_err());
    }

    #[test]
    fn analytic_gaussian_roundtrip() {
        let eps = gaussian_epsilon_analytic(0.5, 1e-5);
        assert!((gaussian_delta_analytic(0.5, eps) - 1e-5).abs() < 1e-12);
    }
}
