//! Independent numerical oracles shared by the integration suites. Nothing
//! here calls into the library's numerics.

#![allow(dead_code)]

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on P_m.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=m {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Truncated `N(mu, 1)` on a union of disjoint sorted intervals, integrated in
/// units of `exp(-d^2/2)` where `d` is the distance from `mu` to the set, so
/// masses far below `f64::MIN_POSITIVE` stay representable.
pub struct TruncatedNormalOracle {
    pub mu: f64,
    /// intervals clipped to where the scaled density exceeds e^-45
    pieces: Vec<(f64, f64)>,
    shift: f64,
    /// log of the scaled mass, i.e. `ln Z + d^2/2 + ln sqrt(2 pi)`
    ln_scaled_mass: f64,
    nodes: (Vec<f64>, Vec<f64>),
}

impl TruncatedNormalOracle {
    pub fn new(mu: f64, intervals: &[(f64, f64)]) -> Self {
        let d = intervals
            .iter()
            .map(|&(a, b)| if mu < a { a - mu } else if mu > b { mu - b } else { 0.0 })
            .fold(f64::INFINITY, f64::min);
        let shift = 0.5 * d * d;
        let reach = (d * d + 90.0).sqrt();
        let pieces: Vec<(f64, f64)> = intervals
            .iter()
            .map(|&(a, b)| (a.max(mu - reach), b.min(mu + reach)))
            .filter(|&(a, b)| b > a)
            .collect();
        let mut o = TruncatedNormalOracle { mu, pieces, shift, ln_scaled_mass: 0.0, nodes: gauss_legendre(20) };
        let total: f64 = o.pieces.clone().iter().map(|&(a, b)| o.scaled_integral(a, b)).sum();
        o.ln_scaled_mass = total.ln();
        o
    }

    fn density(&self, t: f64) -> f64 {
        (-0.5 * (t - self.mu).powi(2) + self.shift).exp()
    }

    /// Integral of the scaled density over [a, b], panels narrow enough for the local decay rate.
    fn scaled_integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let rate = (a - self.mu).abs().max((b - self.mu).abs()).max(1.0);
        let panels = ((b - a) * rate / 0.25).ceil().clamp(1.0, 1e6) as usize;
        let h = (b - a) / panels as f64;
        let (xs, ws) = &self.nodes;
        let mut sum = 0.0;
        for p in 0..panels {
            let c = a + (p as f64 + 0.5) * h;
            for (x, w) in xs.iter().zip(ws) {
                sum += w * self.density(c + 0.5 * h * x);
            }
        }
        sum * 0.5 * h
    }

    /// `ln P(Z in S)` for `Z ~ N(mu, 1)`.
    pub fn ln_mass(&self) -> f64 {
        self.ln_scaled_mass - self.shift - 0.5 * (2.0 * PI).ln()
    }

    /// CDF at each of the ascending points.
    pub fn cdf_sorted(&self, sorted: &[f64]) -> Vec<f64> {
        let total = self.ln_scaled_mass.exp();
        let mut acc = 0.0;
        let mut prev = f64::NEG_INFINITY;
        sorted
            .iter()
            .map(|&z| {
                for &(a, b) in &self.pieces {
                    let (lo, hi) = (a.max(prev), b.min(z));
                    if hi > lo {
                        acc += self.scaled_integral(lo, hi);
                    }
                }
                prev = z;
                (acc / total).min(1.0)
            })
            .collect()
    }

    /// Mean and variance by the same quadrature.
    pub fn moments(&self) -> (f64, f64) {
        let total = self.ln_scaled_mass.exp();
        let (xs, ws) = &self.nodes;
        let (mut m1, mut m2) = (0.0, 0.0);
        for &(a, b) in &self.pieces {
            let rate = (a - self.mu).abs().max((b - self.mu).abs()).max(1.0);
            let panels = ((b - a) * rate / 0.25).ceil().clamp(1.0, 1e6) as usize;
            let h = (b - a) / panels as f64;
            for p in 0..panels {
                let c = a + (p as f64 + 0.5) * h;
                for (x, w) in xs.iter().zip(ws) {
                    let t = c + 0.5 * h * x;
                    let f = w * self.density(t) * 0.5 * h;
                    m1 += f * (t - self.mu);
                    m2 += f * (t - self.mu).powi(2);
                }
            }
        }
        let (m1, m2) = (m1 / total, m2 / total);
        (self.mu + m1, m2 - m1 * m1)
    }
}

/// Two-sided one-sample Kolmogorov-Smirnov statistic given the model CDF at
/// the sorted sample.
pub fn ks_statistic(cdf_at_sorted: &[f64]) -> f64 {
    let n = cdf_at_sorted.len() as f64;
    cdf_at_sorted
        .iter()
        .enumerate()
        .map(|(i, &f)| (f - i as f64 / n).max((i + 1) as f64 / n - f))
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov p-value with Stephens' small-sample correction.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Grid-search projection oracle for `k = 2`: feasibility is
/// `A(z) <= r sum x x^T` (largest generalized eigenvalue in closed form) and `|z| <= bound`.
pub struct GridProjection2 {
    /// `A(z)_pq = c0_pq - 2 c1_pq . z + z^T c2_pq z` for pq in {00, 01, 11}
    c0: [f64; 3],
    c1: [[f64; 2]; 3],
    c2: [[[f64; 2]; 2]; 3],
    s: [f64; 3],
    pub r: f64,
    pub bound: f64,
}

impl GridProjection2 {
    pub fn new(xs: &[[f64; 2]], ys: &[f64], r: f64, bound: f64) -> Self {
        let mut g = GridProjection2 { c0: [0.0; 3], c1: [[0.0; 2]; 3], c2: [[[0.0; 2]; 2]; 3], s: [0.0; 3], r, bound };
        for (x, &y) in xs.iter().zip(ys) {
            for (e, &(p, q)) in [(0usize, 0usize), (0, 1), (1, 1)].iter().enumerate() {
                let xx = x[p] * x[q];
                g.s[e] += xx;
                g.c0[e] += y * y * xx;
                for l in 0..2 {
                    g.c1[e][l] += y * xx * x[l];
                    for m in 0..2 {
                        g.c2[e][l][m] += xx * x[l] * x[m];
                    }
                }
            }
        }
        g
    }

    pub fn spectral_ratio(&self, z: [f64; 2]) -> f64 {
        let mut a = [0.0; 3];
        for e in 0..3 {
            let lin = self.c1[e][0] * z[0] + self.c1[e][1] * z[1];
            let quad: f64 = (0..2).map(|l| (0..2).map(|m| self.c2[e][l][m] * z[l] * z[m]).sum::<f64>()).sum();
            a[e] = self.c0[e] - 2.0 * lin + quad;
        }
        // det(A - t S) = 0
        let s = self.s;
        let qa = s[0] * s[2] - s[1] * s[1];
        let qb = -(a[0] * s[2] + a[2] * s[0] - 2.0 * a[1] * s[1]);
        let qc = a[0] * a[2] - a[1] * a[1];
        let disc = (qb * qb - 4.0 * qa * qc).max(0.0);
        (-qb + disc.sqrt()) / (2.0 * qa)
    }

    pub fn feasible(&self, z: [f64; 2], slack: f64) -> bool {
        z[0].hypot(z[1]) <= self.bound + slack && self.spectral_ratio(z) <= self.r + slack
    }

    /// Distance from `w` to the nearest feasible point of a 2001^2 grid over
    /// the ball's bounding box, refined by a second 2001^2 grid around the
    /// coarse optimum. `None` if no grid point is feasible.
    pub fn distance(&self, w: [f64; 2]) -> Option<(f64, [f64; 2])> {
        let m = 2001;
        let search = |center: [f64; 2], half: f64| -> Option<(f64, [f64; 2])> {
            let h = 2.0 * half / (m - 1) as f64;
            let mut best: Option<(f64, [f64; 2])> = None;
            for i in 0..m {
                let z0 = center[0] - half + i as f64 * h;
                for j in 0..m {
                    let z = [z0, center[1] - half + j as f64 * h];
                    let d = (z[0] - w[0]).hypot(z[1] - w[1]);
                    if best.is_some_and(|b| d >= b.0) {
                        continue;
                    }
                    if self.feasible(z, 0.0) {
                        best = Some((d, z));
                    }
                }
            }
            best
        };
        let coarse = search([0.0, 0.0], self.bound)?;
        let h = 2.0 * self.bound / (m - 1) as f64;
        let fine = search(coarse.1, 2.0 * h)?;
        Some(if fine.0 < coarse.0 { fine } else { coarse })
    }
}
