use std::f64::consts::PI;

use crate::lattice::{Dim, Site};

/// a_d = d·Γ(d/2 − 1) / (2π^{d/2}), the constant in g(0,x) ~ a_d·|x|₂^{2−d}.
pub fn far_field_constant(dim: Dim) -> f64 {
    let d = dim.get() as f64;
    d * gamma_half_integer(dim.get() as i32 - 2) / (2.0 * PI.powf(d / 2.0))
}

/// Γ(k/2) for integer k ≥ 1.
fn gamma_half_integer(k: i32) -> f64 {
    if k % 2 == 0 {
        (1..k / 2).map(|j| j as f64).product()
    } else {
        let mut g = PI.sqrt();
        let mut x = 0.5;
        while x < k as f64 / 2.0 - 0.25 {
            g *= x;
            x += 1.0;
        }
        g
    }
}

/// Far-field expansion of g(0,x) with its first anisotropic correction:
/// a_d r^{2−d} [1 + d(d−2)/24 · ((d+2)·Σxᵢ⁴/r⁴ − 3) / r²].
pub fn asymptotic_green(x: &Site) -> f64 {
    let d = x.dim() as f64;
    let r2: f64 = x.coords().iter().map(|&c| (c as f64).powi(2)).sum();
    if r2 == 0.0 {
        return f64::INFINITY;
    }
    let s4: f64 = x.coords().iter().map(|&c| (c as f64).powi(4)).sum();
    let dim = Dim::with_ceiling(x.dim(), crate::lattice::MAX_DIM).expect("far field needs d ≥ 3");
    let correction = 1.0 + d * (d - 2.0) / 24.0 * ((d + 2.0) * s4 / (r2 * r2) - 3.0) / r2;
    far_field_constant(dim) * r2.powf(1.0 - d / 2.0) * correction
}
