use rand::Rng;
use serde::{Deserialize, Serialize};

use super::StepSource;
use crate::error::{Error, Result};
use crate::lattice::Dim;

/// Visit indicators of a walk on (Z/NZ)^d.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusField {
    pub side: u32,
    pub dim: usize,
    pub steps: u64,
    /// Start site, first coordinate fastest.
    pub start: usize,
    pub visited: Vec<bool>,
}

impl TorusField {
    pub fn volume(&self) -> usize {
        self.visited.len()
    }

    pub fn occupied(&self) -> usize {
        self.visited.iter().filter(|&&v| v).count()
    }

    pub fn vacant_fraction(&self) -> f64 {
        1.0 - self.occupied() as f64 / self.volume() as f64
    }

    pub fn coords(&self, mut idx: usize) -> Vec<u32> {
        let n = self.side as usize;
        (0..self.dim)
            .map(|_| {
                let c = idx % n;
                idx /= n;
                c as u32
            })
            .collect()
    }
}

/// Runs ⌊u·N^d⌋ steps of simple random walk on the torus from a uniform start.
pub fn sample_torus_vacant<R: Rng + ?Sized>(side: u32, dim: Dim, u: f64, rng: &mut R) -> Result<TorusField> {
    if side < 4 {
        return Err(Error::InvalidParameter(format!("torus side must be at least 4 (got {side})")));
    }
    if !(u >= 0.0) || !u.is_finite() {
        return Err(Error::InvalidParameter(format!("level u must be a finite nonnegative number (got {u})")));
    }
    let d = dim.get();
    let n = side as usize;
    let volume = n.checked_pow(d as u32).filter(|&v| v <= 1 << 31).ok_or_else(|| Error::InvalidParameter(format!("torus {side}^{d} is too large")))?;
    let steps = (u * volume as f64).floor() as u64;
    let mut strides = vec![1usize; d];
    for k in 1..d {
        strides[k] = strides[k - 1] * n;
    }
    let start = rng.random_range(0..volume);
    let mut coords: Vec<usize> = (0..d).map(|k| start / strides[k] % n).collect();
    let mut idx = start;
    let mut visited = vec![false; volume];
    visited[idx] = true;
    let mut source = StepSource::new(d);
    for _ in 0..steps {
        let k = source.next(rng);
        let axis = k >> 1;
        let c = &mut coords[axis];
        if k & 1 == 0 {
            if *c + 1 == n {
                *c = 0;
                idx -= (n - 1) * strides[axis];
            } else {
                *c += 1;
                idx += strides[axis];
            }
        } else if *c == 0 {
            *c = n - 1;
            idx += (n - 1) * strides[axis];
        } else {
            *c -= 1;
            idx -= strides[axis];
        }
        visited[idx] = true;
    }
    Ok(TorusField { side, dim: d, steps, start, visited })
}
