//! Quadrature for g(0,x) = ∫₀^∞ ∏ᵢ e^{−t/d} I_{xᵢ}(t/d) dt.
//!
//! The integrand is the return kernel of the continuous-time walk written in
//! modified Bessel functions. Gauss–Legendre panels cover [0,1] and the dyadic
//! intervals up to T; beyond T the large-argument expansion of I_n is
//! integrated term by term, which absorbs the t^{−d/2} decay coming from the
//! zero-frequency singularity of the Fourier symbol.

use std::f64::consts::PI;

/// Number of terms of the large-argument Bessel expansion used past T.
const TAIL_TERMS: usize = 9;

pub(crate) struct Quadrature {
    dim: usize,
    pub(crate) nodes: Vec<f64>,
    pub(crate) weights: Vec<f64>,
    tail_start: f64,
}

impl Quadrature {
    /// Rule resolving all sites with sup-norm ≤ `radius` to well below `tol`.
    pub(crate) fn new(dim: usize, radius: u32, tol: f64) -> Self {
        let order = if tol >= 1e-6 {
            16
        } else if tol >= 1e-10 {
            24
        } else {
            32
        };
        let rho = radius.max(1) as f64;
        let needed = 50.0 * dim as f64 * rho * rho;
        let panels = (needed.log2().ceil() as i32).max(16) as u32;
        let tail_start = 2f64.powi(panels as i32);
        let (gx, gw) = gauss_legendre(order);
        let mut nodes = Vec::with_capacity(order * (panels as usize + 1));
        let mut weights = Vec::with_capacity(nodes.capacity());
        let mut push_panel = |a: f64, b: f64| {
            let half = 0.5 * (b - a);
            let mid = 0.5 * (b + a);
            for (x, w) in gx.iter().zip(&gw) {
                nodes.push(mid + half * x);
                weights.push(half * w);
            }
        };
        push_panel(0.0, 1.0);
        for k in 0..panels {
            push_panel(2f64.powi(k as i32), 2f64.powi(k as i32 + 1));
        }
        Quadrature { dim, nodes, weights, tail_start }
    }

    /// Scaled Bessel values `ladders[n][node] = e^{−s} I_n(s)` at `s = t_node/d`, for n ≤ `max_order`.
    pub(crate) fn bessel_ladders(&self, max_order: usize) -> Vec<Vec<f64>> {
        let mut ladders = vec![vec![0.0; self.nodes.len()]; max_order + 1];
        let mut buf = vec![0.0; max_order + 1];
        for (p, &t) in self.nodes.iter().enumerate() {
            scaled_bessel_ladder(t / self.dim as f64, &mut buf);
            for (n, v) in buf.iter().enumerate() {
                ladders[n][p] = *v;
            }
        }
        ladders
    }

    /// Contribution of [T, ∞) for the site with absolute coordinates `orders`.
    pub(crate) fn tail(&self, orders: &[u32]) -> f64 {
        let d = self.dim as f64;
        let mut poly = [0.0f64; TAIL_TERMS];
        poly[0] = 1.0;
        for &n in orders {
            let coeffs = expansion_coefficients(n);
            let mut next = [0.0f64; TAIL_TERMS];
            for (i, &p) in poly.iter().enumerate() {
                for (j, &c) in coeffs.iter().enumerate().take(TAIL_TERMS - i) {
                    next[i + j] += p * c;
                }
            }
            poly = next;
        }
        let t = self.tail_start;
        let mut total = 0.0;
        for (k, &c) in poly.iter().enumerate() {
            let k = k as f64;
            let expo = 1.0 - d / 2.0 - k;
            total += c * d.powf(k) * t.powf(expo) / (d / 2.0 + k - 1.0);
        }
        total * (d / (2.0 * PI)).powf(d / 2.0)
    }
}

/// Signed coefficients (−1)^k a_k(n) of e^{−s} I_n(s) ≈ (2πs)^{−1/2} Σ_k (−1)^k a_k(n) s^{−k}.
fn expansion_coefficients(n: u32) -> [f64; TAIL_TERMS] {
    let mu = 4.0 * (n as f64) * (n as f64);
    let mut out = [0.0; TAIL_TERMS];
    out[0] = 1.0;
    for k in 1..TAIL_TERMS {
        let odd = (2 * k - 1) as f64;
        out[k] = -out[k - 1] * (mu - odd * odd) / (8.0 * k as f64);
    }
    out
}

/// Fills `out[n] = e^{−s} I_n(s)` for n < `out.len()` by Miller's backward recurrence,
/// normalized with I_0 + 2 Σ_{n≥1} I_n = e^s.
pub(crate) fn scaled_bessel_ladder(s: f64, out: &mut [f64]) {
    let top = out.len() - 1;
    if s == 0.0 {
        out.fill(0.0);
        out[0] = 1.0;
        return;
    }
    let start = top + 20 + (90.0 * s).sqrt().ceil() as usize;
    let mut above = 0.0f64;
    let mut current = 1e-280f64;
    let mut sum = 0.0f64;
    for k in (1..=start).rev() {
        if k <= top {
            out[k] = current;
        }
        sum += 2.0 * current;
        let below = (2.0 * k as f64 / s) * current + above;
        above = current;
        current = below;
        if current > 1e250 {
            let scale = 1e-250;
            current *= scale;
            above *= scale;
            sum *= scale;
            for v in out.iter_mut().take(top + 1).skip(k.min(top + 1)) {
                *v *= scale;
            }
        }
    }
    out[0] = current;
    sum += current;
    for v in out.iter_mut() {
        *v /= sum;
    }
}

/// Gauss–Legendre nodes and weights on [−1, 1].
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pnm1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(12);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let m22: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(22)).sum();
        assert!((m22 - 2.0 / 23.0).abs() < 1e-14);
    }

    #[test]
    fn bessel_ladder_matches_reference_values() {
        // e^{-s} I_n(s) from an independent arbitrary-precision evaluation.
        let cases = [
            (0.5, 0, 0.64503527044915007),
            (0.5, 3, 0.0016043415075654608),
            (10.0, 0, 0.12783333716342861),
            (10.0, 7, 0.010806344830494886),
            (1000.0, 40, 0.0056676279027530963),
        ];
        for (s, n, want) in cases {
            let mut buf = vec![0.0; 60];
            scaled_bessel_ladder(s, &mut buf);
            assert!((buf[n] - want).abs() < 1e-13, "s={s} n={n}: {} vs {want}", buf[n]);
        }
    }

    #[test]
    fn bessel_ladder_normalization_and_small_argument() {
        let mut buf = vec![0.0; 5];
        scaled_bessel_ladder(1e-4, &mut buf);
        assert!((buf[0] - (-1e-4f64).exp() * (1.0 + 2.5e-9)).abs() < 1e-13);
        assert!((buf[1] - (-1e-4f64).exp() * 5e-5).abs() < 1e-13);
    }

    #[test]
    fn tail_expansion_matches_direct_sum_at_moderate_argument() {
        let q = Quadrature::new(3, 1, 1e-8);
        let s = 5000.0;
        let mut buf = vec![0.0; 4];
        scaled_bessel_ladder(s, &mut buf);
        let c = expansion_coefficients(3);
        let series: f64 = c.iter().enumerate().map(|(k, a)| a / s.powi(k as i32)).sum::<f64>() / (2.0 * PI * s).sqrt();
        assert!((series - buf[3]).abs() < 1e-15);
        assert!(q.tail(&[0, 0, 0]) > 0.0);
    }
}
