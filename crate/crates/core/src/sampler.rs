//! Sampling from `N(mu, 1, S)`.
//!
//! Interval unions are sampled exactly (up to the inversion tolerance) by
//! inverse transform: pick an interval proportionally to its mass, then invert
//! its truncated CDF. The CDF is never formed directly; each interval is cut at
//! the mean into one-sided pieces and the inversion runs on `-ln Q(t)`, whose
//! slope is the inverse Mills ratio and therefore bounded below by
//! `sqrt(2/pi)`. This keeps the inversion well conditioned for masses far
//! below the `f64` range. Oracle-only sets fall back to rejection.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::sets::{Interval, TruncationSet};
use crate::special::{erf, inverse_mills, ln_normal_sf, ln_std_interval_mass};

const MAX_DOUBLINGS: usize = 200;
const MAX_BISECTIONS: usize = 400;

/// Accuracy knobs for truncated sampling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerAccuracy {
    /// Total-variation budget `zeta` for the union sampler.
    pub tv_budget: f64,
    /// Absolute tolerance `eta` of each CDF inversion.
    pub inversion_tolerance: f64,
    pub max_rejection_draws: usize,
}

impl Default for SamplerAccuracy {
    fn default() -> Self {
        SamplerAccuracy {
            tv_budget: 1e-10,
            inversion_tolerance: 1e-12,
            max_rejection_draws: 1_000_000,
        }
    }
}

impl SamplerAccuracy {
    pub fn validate(&self) -> Result<()> {
        if !(self.tv_budget > 0.0 && self.tv_budget < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "tv_budget must lie in (0, 1), got {}",
                self.tv_budget
            )));
        }
        if !(self.inversion_tolerance > 0.0) {
            return Err(Error::InvalidParameter("inversion_tolerance must be positive".into()));
        }
        if self.max_rejection_draws == 0 {
            return Err(Error::InvalidParameter("max_rejection_draws must be at least 1".into()));
        }
        Ok(())
    }
}

/// Bounds `lower <= f'(x) <= upper` on the derivative of the function to invert.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivativeBounds {
    pub lower: f64,
    pub upper: f64,
}

/// Inverts an increasing function given through an evaluation oracle.
///
/// `f(x, acc)` must return `f(x)` to within `acc`. The result `x` satisfies
/// `|x - f^{-1}(y)| <= eta`: a doubling search brackets the root starting from
/// `start`, then bisection runs until either the bracket is narrower than
/// `2 eta` or `|f(x) - y| <= lower * eta`, which by the mean value theorem
/// also pins `x` to within `eta`.
pub fn invert_monotone<F>(f: F, y: f64, bounds: DerivativeBounds, eta: f64, start: f64) -> Result<f64>
where
    F: Fn(f64, f64) -> f64,
{
    if !(bounds.lower > 0.0) || !(bounds.upper >= bounds.lower) {
        return Err(Error::InvalidParameter(format!(
            "derivative bounds must satisfy 0 < lower <= upper, got {bounds:?}"
        )));
    }
    if !(eta > 0.0) || !y.is_finite() || !start.is_finite() {
        return Err(Error::InvalidParameter("inversion needs finite y, start and eta > 0".into()));
    }
    let acc = bounds.lower * eta;
    let eval = |x: f64| f(x, acc);

    let f0 = eval(start);
    if (f0 - y).abs() <= acc {
        return Ok(start);
    }
    let (mut lo, mut hi);
    // the derivative floor tells us how far the root can be at most
    let mut step = (((y - f0).abs() + acc) / bounds.lower).max(eta);
    if f0 < y {
        lo = start;
        hi = start + step;
        let mut tries = 0;
        while eval(hi) < y + acc {
            tries += 1;
            if tries > MAX_DOUBLINGS || !hi.is_finite() {
                return Err(Error::BracketNotFound(MAX_DOUBLINGS));
            }
            lo = hi;
            step *= 2.0;
            hi = start + step;
        }
    } else {
        hi = start;
        lo = start - step;
        let mut tries = 0;
        while eval(lo) > y - acc {
            tries += 1;
            if tries > MAX_DOUBLINGS || !lo.is_finite() {
                return Err(Error::BracketNotFound(MAX_DOUBLINGS));
            }
            hi = lo;
            step *= 2.0;
            lo = start - step;
        }
    }

    let mut mid = 0.5 * (lo + hi);
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= 2.0 * eta {
            break;
        }
        mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = eval(mid);
        if (fm - y).abs() <= acc {
            return Ok(mid);
        }
        if fm < y {
            lo = mid;
        } else {
            hi = mid;
        }
        mid = 0.5 * (lo + hi);
    }
    Ok(mid)
}

/// Inverse transform on the one-sided standardized piece `[lo, hi]`, `0 <= lo < hi`.
///
/// Solves `Q(t) = Q(lo) - u (Q(lo) - Q(hi))` on the scale `-ln Q`.
fn invert_upper_piece(lo: f64, hi: f64, u: f64, eta: f64) -> Result<f64> {
    debug_assert!(lo >= 0.0 && hi > lo);
    let ln_q_lo = ln_normal_sf(lo);
    // fraction of Q(lo) carried by the piece, computed without cancellation
    let frac = (ln_std_interval_mass(lo, hi) - ln_q_lo).exp().min(1.0);
    let target = -ln_q_lo - (-u * frac).ln_1p();
    if !target.is_finite() {
        return Err(Error::MassUnderflow);
    }
    let bounds = DerivativeBounds {
        lower: inverse_mills(lo),
        upper: if hi.is_finite() { inverse_mills(hi) } else { f64::MAX },
    };
    let t = invert_monotone(|t, _acc| -ln_normal_sf(t), target, bounds, eta, lo)?;
    Ok(t.clamp(lo, hi))
}

/// Draws from `N(mu, 1, [a, b])` by inverse transform sampling.
pub fn sample_one_interval<R: Rng + ?Sized>(
    mu: f64,
    interval: Interval,
    acc: &SamplerAccuracy,
    rng: &mut R,
) -> Result<f64> {
    let Interval { lo: a, hi: b } = Interval::new(interval.lo, interval.hi)?;
    if a == b {
        return Ok(a);
    }
    if !mu.is_finite() {
        return Err(Error::InvalidParameter(format!("non-finite mean {mu}")));
    }
    let (lo, hi) = (a - mu, b - mu);
    if ln_std_interval_mass(lo, hi) == f64::NEG_INFINITY {
        return Err(Error::MassUnderflow);
    }
    let eta = acc.inversion_tolerance;
    let t = if lo >= 0.0 {
        invert_upper_piece(lo, hi, rng.random(), eta)?
    } else if hi <= 0.0 {
        -invert_upper_piece(-hi, -lo, rng.random(), eta)?
    } else {
        // straddles the mean: split at zero, pick a side by its mass
        let left = erf(-lo * std::f64::consts::FRAC_1_SQRT_2);
        let right = erf(hi * std::f64::consts::FRAC_1_SQRT_2);
        let pick: f64 = rng.random();
        if pick * (left + right) < right {
            invert_upper_piece(0.0, hi, rng.random(), eta)?
        } else {
            -invert_upper_piece(0.0, -lo, rng.random(), eta)?
        }
    };
    Ok((mu + t).clamp(a, b))
}

/// Draws from `N(mu, 1, S)`.
///
/// Interval unions: intervals whose share of the mass is at most
/// `tv_budget / (3 r)` are dropped, one of the rest is chosen proportionally
/// to its mass, and sampled with [`sample_one_interval`]. Oracle-only sets use
/// rejection from `N(mu, 1)` restricted to the envelope hint, if any.
pub fn sample_truncated<R: Rng + ?Sized>(
    mu: f64,
    set: &TruncationSet,
    acc: &SamplerAccuracy,
    rng: &mut R,
) -> Result<f64> {
    match set {
        TruncationSet::Intervals(ivs) => {
            if ivs.len() == 1 {
                return sample_one_interval(mu, ivs[0], acc, rng);
            }
            let ln_masses: Vec<f64> = ivs.iter().map(|iv| iv.ln_unit_mass(mu)).collect();
            let ln_max = ln_masses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if ln_max == f64::NEG_INFINITY {
                // only degenerate intervals carry no mass; anything else underflowed
                return match ivs.iter().find(|iv| iv.is_degenerate()) {
                    Some(iv) if ivs.iter().all(|iv| iv.is_degenerate()) => Ok(iv.lo),
                    _ => Err(Error::MassUnderflow),
                };
            }
            let rel: Vec<f64> = ln_masses.iter().map(|l| (l - ln_max).exp()).collect();
            let total: f64 = rel.iter().sum();
            let cutoff = acc.tv_budget / (3.0 * ivs.len() as f64);
            let kept: Vec<(usize, f64)> = rel
                .iter()
                .enumerate()
                .filter(|(_, &m)| m / total > cutoff)
                .map(|(i, &m)| (i, m))
                .collect();
            let kept_total: f64 = kept.iter().map(|(_, m)| m).sum();
            let mut target = rng.random::<f64>() * kept_total;
            let mut chosen = kept[kept.len() - 1].0;
            for &(i, m) in &kept {
                if target < m {
                    chosen = i;
                    break;
                }
                target -= m;
            }
            let inner = SamplerAccuracy {
                tv_budget: acc.tv_budget / 3.0,
                ..*acc
            };
            sample_one_interval(mu, ivs[chosen], &inner, rng)
        }
        TruncationSet::OracleOnly(oracle) => {
            for _ in 0..acc.max_rejection_draws {
                let z = match oracle.envelope {
                    Some(env) => sample_one_interval(mu, env, acc, rng)?,
                    None => mu + rng.sample::<f64, _>(StandardNormal),
                };
                if oracle.contains(z) {
                    return Ok(z);
                }
            }
            Err(Error::RejectionExhausted(acc.max_rejection_draws))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::normal_cdf;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bounds(lower: f64, upper: f64) -> DerivativeBounds {
        DerivativeBounds { lower, upper }
    }

    #[test]
    fn invert_identity() {
        let x = invert_monotone(|x, _| x, 3.5, bounds(1.0, 1.0), 1e-12, 0.0).unwrap();
        assert!((x - 3.5).abs() <= 1e-12);
    }

    #[test]
    fn invert_cubic() {
        let x = invert_monotone(|x, _| x * x * x + x, 10.0, bounds(1.0, 301.0), 1e-12, 0.0).unwrap();
        assert!((x - 2.0).abs() <= 1e-12);
        let x = invert_monotone(|x, _| x * x * x + x, -10.0, bounds(1.0, 301.0), 1e-12, 5.0).unwrap();
        assert!((x + 2.0).abs() <= 1e-12);
    }

    #[test]
    fn invert_half_normal_cdf() {
        // CDF of N(0,1,[0,inf)) is 2 Phi(x) - 1; its median solves Phi(x) = 0.75
        let cdf = |x: f64, _| 2.0 * normal_cdf(x) - 1.0;
        let x = invert_monotone(cdf, 0.5, bounds(2.0 * 0.05, 0.8), 1e-12, 0.0).unwrap();
        assert!((x - 0.674_489_750_196_082).abs() < 1e-11);
    }

    #[test]
    fn invert_rejects_bad_bounds() {
        assert!(invert_monotone(|x, _| x, 1.0, bounds(0.0, 1.0), 1e-9, 0.0).is_err());
        assert!(invert_monotone(|x, _| x, 1.0, bounds(2.0, 1.0), 1e-9, 0.0).is_err());
        // a flat function never brackets
        let r = invert_monotone(|_, _| 0.0, 1.0, bounds(1.0, 1.0), 1e-9, 0.0);
        assert!(matches!(r, Err(Error::BracketNotFound(_))));
    }

    #[test]
    fn degenerate_interval_returns_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let acc = SamplerAccuracy::default();
        let z = sample_one_interval(0.0, Interval { lo: 5.0, hi: 5.0 }, &acc, &mut rng).unwrap();
        assert_eq!(z, 5.0);
    }

    #[test]
    fn draws_stay_in_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let acc = SamplerAccuracy::default();
        let iv = Interval { lo: -1.0, hi: 1.0 };
        for _ in 0..10_000 {
            let z = sample_one_interval(0.0, iv, &acc, &mut rng).unwrap();
            assert!((-1.0..=1.0).contains(&z));
        }
    }

    #[test]
    fn half_normal_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let acc = SamplerAccuracy::default();
        let iv = Interval { lo: 0.0, hi: f64::INFINITY };
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| sample_one_interval(0.0, iv, &acc, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.797_884_560_802_865).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn far_tail_interval_is_sampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let acc = SamplerAccuracy::default();
        let set = TruncationSet::from_pairs(&[(10.0, 11.0)]).unwrap();
        for _ in 0..1000 {
            let z = sample_truncated(0.0, &set, &acc, &mut rng).unwrap();
            assert!((10.0..=11.0).contains(&z));
        }
        // a mass far below f64::MIN_POSITIVE still samples
        let set = TruncationSet::from_pairs(&[(45.0, 46.0)]).unwrap();
        let z = sample_truncated(0.0, &set, &acc, &mut rng).unwrap();
        assert!((45.0..=46.0).contains(&z));
    }

    #[test]
    fn untruncated_draws_match_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let acc = SamplerAccuracy::default();
        let set = TruncationSet::real_line();
        let n = 20_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| sample_truncated(7.0, &set, &acc, &mut rng).unwrap())
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 7.0).abs() < 0.03);
        assert!((var - 1.0).abs() < 0.04);
    }

    #[test]
    fn union_interval_shares() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let acc = SamplerAccuracy::default();
        let set = TruncationSet::from_pairs(&[(1.0, 2.0), (5.0, 6.0)]).unwrap();
        let n = 100_000;
        let upper = (0..n)
            .filter(|_| sample_truncated(3.5, &set, &acc, &mut rng).unwrap() >= 5.0)
            .count() as f64
            / n as f64;
        // symmetric placement around the mean
        assert!((upper - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn oracle_rejection_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let acc = SamplerAccuracy {
            max_rejection_draws: 50,
            ..Default::default()
        };
        let pos = TruncationSet::oracle(|z| z >= 0.0, None);
        for _ in 0..100 {
            assert!(sample_truncated(0.0, &pos, &acc, &mut rng).unwrap() >= 0.0);
        }
        let far = TruncationSet::oracle(|z| z >= 12.0, None);
        assert!(matches!(
            sample_truncated(0.0, &far, &acc, &mut rng),
            Err(Error::RejectionExhausted(50))
        ));
        // an envelope makes the same set cheap
        let env = TruncationSet::oracle(
            |z| (12.0..=13.0).contains(&z) && z.fract() < 0.5,
            Some(Interval { lo: 12.0, hi: 13.0 }),
        );
        let z = sample_truncated(0.0, &env, &acc, &mut rng).unwrap();
        assert!((12.0..12.5).contains(&z));
    }

    #[test]
    fn accuracy_validation() {
        assert!(SamplerAccuracy::default().validate().is_ok());
        let bad = SamplerAccuracy { tv_budget: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SamplerAccuracy { max_rejection_draws: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
