//! Statistical helpers used by the experiments: summaries with batch-mean
//! standard errors, two-sample Kolmogorov–Smirnov, circle Wasserstein-1,
//! chi-square goodness of fit and the standardized trend verdict.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{invalid, Result, TrapError};

/// Minimum number of batches behind a batch-mean standard error.
pub const MIN_BATCHES: usize = 10;

/// Streaming mean/variance (Welford), mergeable for parallel reduction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanAccumulator {
    n: u64,
    mean: f64,
    m2: f64,
}

impl MeanAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Chan et al. pairwise merge.
    pub fn merge(&mut self, other: &MeanAccumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    /// Standard error of the mean under independence.
    pub fn std_error(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for MeanAccumulator {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = MeanAccumulator::new();
        for x in iter {
            acc.push(x);
        }
        acc
    }
}

/// Mean, variance and batch-mean standard error of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub batch_se: f64,
    pub batches: usize,
}

impl SampleSummary {
    /// Summarizes `xs` using `batches` contiguous batches (at least
    /// [`MIN_BATCHES`]); the remainder `n mod batches` is spread one extra
    /// item at a time over the leading batches.
    pub fn from_samples(xs: &[f64], batches: usize) -> Result<Self> {
        if batches < MIN_BATCHES {
            return invalid(format!("need at least {MIN_BATCHES} batches, got {batches}"));
        }
        if xs.len() < batches {
            return Err(TrapError::UndersizedSample { needed: batches, got: xs.len() });
        }
        let acc: MeanAccumulator = xs.iter().copied().collect();
        let base = xs.len() / batches;
        let extra = xs.len() % batches;
        let mut start = 0;
        let mut batch_means = MeanAccumulator::new();
        for b in 0..batches {
            let len = base + usize::from(b < extra);
            let s: f64 = xs[start..start + len].iter().sum();
            batch_means.push(s / len as f64);
            start += len;
        }
        Ok(Self {
            n: xs.len(),
            mean: acc.mean(),
            variance: acc.variance(),
            batch_se: batch_means.std_error(),
            batches,
        })
    }
}

/// Result of a two-sample Kolmogorov–Smirnov test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Smallest sample accepted by [`ks_two_sample`].
pub const KS_MIN_SAMPLE: usize = 25;

/// Classical two-sample KS statistic with the asymptotic Kolmogorov p-value
/// (with the Stephens small-sample correction of the effective size).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    for s in [a, b] {
        if s.len() < KS_MIN_SAMPLE {
            return Err(TrapError::UndersizedSample { needed: KS_MIN_SAMPLE, got: s.len() });
        }
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    Ok(KsResult { statistic: d, p_value: kolmogorov_q(lambda) })
}

/// Complementary Kolmogorov distribution `Q(λ) = 2 Σ (-1)^{j-1} exp(-2 j² λ²)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = sign * (-2.0 * jf * jf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 * sum.abs().max(1e-300) {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Wasserstein-1 distance between two finite measures on the circle `[0,1)`,
/// given as `(position, mass)` atoms with equal total mass.
///
/// On the circle `W1 = min_m ∫ |F(x) - G(x) - m| dx`, attained at a median of
/// the CDF difference with respect to Lebesgue measure.
pub fn wasserstein1_torus(mu: &[(f64, f64)], nu: &[(f64, f64)]) -> Result<f64> {
    let mass = |m: &[(f64, f64)]| m.iter().map(|a| a.1).sum::<f64>();
    let (mm, mn) = (mass(mu), mass(nu));
    if (mm - mn).abs() > 1e-9 * mm.abs().max(mn.abs()).max(1.0) {
        return invalid(format!("mass mismatch: {mm} vs {mn}"));
    }
    let mut events: Vec<(f64, f64)> = Vec::with_capacity(mu.len() + nu.len());
    for &(x, w) in mu {
        if !(0.0..1.0).contains(&x) || w < 0.0 {
            return invalid(format!("atom ({x}, {w}) outside [0,1) or negative"));
        }
        events.push((x, w));
    }
    for &(x, w) in nu {
        if !(0.0..1.0).contains(&x) || w < 0.0 {
            return invalid(format!("atom ({x}, {w}) outside [0,1) or negative"));
        }
        events.push((x, -w));
    }
    events.sort_by(|p, q| p.0.total_cmp(&q.0));
    // Piecewise-constant CDF difference on [0,1).
    let mut pieces: Vec<(f64, f64)> = Vec::new();
    let mut diff = 0.0;
    let mut left = 0.0;
    for (x, w) in events {
        if x > left {
            pieces.push((diff, x - left));
            left = x;
        }
        diff += w;
    }
    if left < 1.0 {
        pieces.push((diff, 1.0 - left));
    }
    let mut sorted = pieces.clone();
    sorted.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut acc = 0.0;
    let mut median = sorted.last().map_or(0.0, |p| p.0);
    for (v, len) in &sorted {
        acc += len;
        if acc >= 0.5 {
            median = *v;
            break;
        }
    }
    Ok(pieces.iter().map(|(v, len)| len * (v - median).abs()).sum())
}

/// Verdict of a monotone limit-trend check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendVerdict {
    pub fraction_decreasing: f64,
    pub pass: bool,
}

/// Default pass threshold for [`trend_test`].
pub const TREND_THRESHOLD: f64 = 0.8;

/// Fraction of strict consecutive decreases in `values` (ordered by scale);
/// passes when the fraction is at least `threshold`.
pub fn trend_test(values: &[f64], threshold: f64) -> Result<TrendVerdict> {
    if values.len() < 3 {
        return Err(TrapError::UndersizedSample { needed: 3, got: values.len() });
    }
    let steps = values.len() - 1;
    let dec = values.windows(2).filter(|w| w[1] < w[0]).count();
    let fraction = dec as f64 / steps as f64;
    Ok(TrendVerdict { fraction_decreasing: fraction, pass: fraction >= threshold })
}

/// Pearson chi-square goodness of fit of observed counts to expected
/// probabilities. Cells with expected count below `min_expected` are pooled
/// into one cell. Returns `(statistic, degrees of freedom, p-value)`.
pub fn chi_square_gof(observed: &[u64], probs: &[f64], min_expected: f64) -> Result<(f64, usize, f64)> {
    if observed.len() != probs.len() {
        return invalid("observed and probability vectors differ in length");
    }
    let total: u64 = observed.iter().sum();
    let n = total as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut pool_o, mut pool_e) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        let e = p * n;
        if e < min_expected {
            pool_o += o as f64;
            pool_e += e;
        } else {
            cells.push((o as f64, e));
        }
    }
    if pool_e > 0.0 {
        cells.push((pool_o, pool_e));
    }
    if cells.len() < 2 {
        return Err(TrapError::UndersizedSample { needed: 2, got: cells.len() });
    }
    let stat: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = cells.len() - 1;
    let p = 1.0 - ChiSquared::new(dof as f64).map_err(|e| TrapError::InvalidInput(e.to_string()))?.cdf(stat);
    Ok((stat, dof, p))
}

/// Upper-tail probability of a chi-square variable.
pub fn chi_square_sf(stat: f64, dof: f64) -> Result<f64> {
    let dist = ChiSquared::new(dof).map_err(|e| TrapError::InvalidInput(e.to_string()))?;
    Ok(1.0 - dist.cdf(stat))
}

/// Total-variation distance between two empirical distributions over
/// `0..k` given as counts.
pub fn total_variation(a: &[u64], b: &[u64]) -> f64 {
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    if na == 0 || nb == 0 {
        return 0.0;
    }
    let k = a.len().max(b.len());
    let get = |v: &[u64], i: usize| v.get(i).copied().unwrap_or(0) as f64;
    0.5 * (0..k).map(|i| (get(a, i) / na as f64 - get(b, i) / nb as f64).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use rand::Rng;

    #[test]
    fn ks_identical_and_disjoint() {
        let a: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(r.p_value > 0.99);
        let b: Vec<f64> = (0..40).map(|i| 100.0 + i as f64).collect();
        let r = ks_two_sample(&a, &b).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert!(r.p_value < 1e-6);
    }

    #[test]
    fn ks_rejects_small_samples() {
        let a = vec![0.0; 24];
        let b = vec![0.0; 30];
        assert!(matches!(ks_two_sample(&a, &b), Err(TrapError::UndersizedSample { .. })));
    }

    #[test]
    fn ks_null_calibration() {
        let mut passes = 0;
        for trial in 0..100 {
            let mut r = stream(2024, Purpose::Oracle, trial);
            let a: Vec<f64> = (0..10_000).map(|_| r.random()).collect();
            let b: Vec<f64> = (0..10_000).map(|_| r.random()).collect();
            if ks_two_sample(&a, &b).unwrap().p_value > 0.01 {
                passes += 1;
            }
        }
        assert!(passes >= 98, "only {passes}/100 null trials passed");
    }

    #[test]
    fn wasserstein_examples() {
        let mu = [(0.1, 0.5), (0.6, 0.5)];
        assert_eq!(wasserstein1_torus(&mu, &mu).unwrap(), 0.0);
        let d = wasserstein1_torus(&[(0.0, 1.0)], &[(0.9, 1.0)]).unwrap();
        assert!((d - 0.1).abs() < 1e-12);
        assert!(wasserstein1_torus(&[(0.0, 1.0)], &[(0.5, 2.0)]).is_err());
    }

    #[test]
    fn wasserstein_triangle_inequality() {
        let mut r = stream(5, Purpose::Oracle, 0);
        for _ in 0..200 {
            let mut m = || -> Vec<(f64, f64)> {
                let k = r.random_range(1..6);
                let w: Vec<f64> = (0..k).map(|_| r.random::<f64>() + 0.01).collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|wi| (r.random::<f64>(), wi / s)).collect()
            };
            let (a, b, c) = (m(), m(), m());
            let ab = wasserstein1_torus(&a, &b).unwrap();
            let bc = wasserstein1_torus(&b, &c).unwrap();
            let ac = wasserstein1_torus(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-12);
            assert!(ab <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn trend_examples() {
        assert_eq!(trend_test(&[4.0, 3.0, 2.0, 1.0], TREND_THRESHOLD).unwrap().fraction_decreasing, 1.0);
        let flat = trend_test(&[1.0, 1.0, 1.0], TREND_THRESHOLD).unwrap();
        assert_eq!(flat.fraction_decreasing, 0.0);
        assert!(!flat.pass);
        let v = trend_test(&[3.0, 2.0, 2.5, 1.0], TREND_THRESHOLD).unwrap();
        assert!((v.fraction_decreasing - 2.0 / 3.0).abs() < 1e-15);
        assert!(trend_test(&[1.0, 0.0], TREND_THRESHOLD).is_err());
    }

    #[test]
    fn accumulator_merge_matches_serial() {
        let xs: Vec<f64> = (0..101).map(|i| ((i * 37) % 17) as f64 * 0.3).collect();
        let serial: MeanAccumulator = xs.iter().copied().collect();
        let mut left: MeanAccumulator = xs[..40].iter().copied().collect();
        let right: MeanAccumulator = xs[40..].iter().copied().collect();
        left.merge(&right);
        assert_eq!(left.count(), serial.count());
        assert!((left.mean() - serial.mean()).abs() < 1e-12);
        assert!((left.variance() - serial.variance()).abs() < 1e-10);
    }

    #[test]
    fn batch_se_needs_ten_batches() {
        assert!(SampleSummary::from_samples(&[1.0; 100], 5).is_err());
        let s = SampleSummary::from_samples(&[2.0; 100], 10).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.batch_se, 0.0);
    }

    #[test]
    fn batch_se_shrinks_like_inverse_root() {
        let summarize = |n: usize| {
            let mut r = stream(11, Purpose::Oracle, n as u64);
            let xs: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
            SampleSummary::from_samples(&xs, 20).unwrap().batch_se
        };
        // Average the ratio over a few independent pairs to tame batch noise.
        let ratio: f64 = (0..8).map(|k| summarize(40_000 + 2 * k) / summarize(20_000 + k)).sum::<f64>() / 8.0;
        assert!((0.6..=0.85).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn chi_square_detects_bias() {
        let (_, dof, p) = chi_square_gof(&[250, 250, 250, 250], &[0.25; 4], 5.0).unwrap();
        assert_eq!(dof, 3);
        assert!(p > 0.99);
        let (_, _, p) = chi_square_gof(&[400, 200, 200, 200], &[0.25; 4], 5.0).unwrap();
        assert!(p < 1e-6);
    }

    #[test]
    fn tv_distance() {
        assert_eq!(total_variation(&[1, 1], &[2, 2]), 0.0);
        assert_eq!(total_variation(&[1, 0], &[0, 1]), 1.0);
    }
}
