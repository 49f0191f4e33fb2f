//! Discrete velocity directions.
//!
//! Gauss-Legendre nodes `zeta_i` on [-1, 1] are mapped to the first quadrant
//! angles `(zeta_i + 1) pi / 4`. Each node carries two even/odd parity pairs,
//! travelling along `(xi, -eta)` and `(xi, eta)`, so `n` nodes per quadrant
//! give `M = 4 n` velocity directions in total.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const MAX_NODES: usize = 64;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on [-1, 1], nodes ascending.
pub fn gauss_legendre(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 || n > MAX_NODES {
        return Err(Error::Argument(format!("Gauss-Legendre order must be in 1..={MAX_NODES}, got {n}")));
    }
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() <= 1e-15 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d.is_finite() {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    Ok((x, w))
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 1 {
        p0 = 1.0;
    }
    (p1, n as f64 * (z * p1 - p0) / (z * z - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityNode {
    pub zeta: f64,
    pub weight: f64,
    pub xi: f64,
    pub eta: f64,
}

/// Which of the two parity pairs attached to a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    /// Direction `(xi, -eta)`.
    First,
    /// Direction `(xi, eta)`.
    Second,
}

impl VelocityNode {
    pub fn direction(&self, p: Parity) -> [f64; 2] {
        match p {
            Parity::First => [self.xi, -self.eta],
            Parity::Second => [self.xi, self.eta],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrdinateSet {
    pub nodes: Vec<VelocityNode>,
}

impl OrdinateSet {
    pub fn new(n: usize) -> Result<Self> {
        let (z, w) = gauss_legendre(n)?;
        let nodes = z
            .iter()
            .zip(&w)
            .map(|(&zeta, &weight)| {
                let th = (zeta + 1.0) * PI / 4.0;
                VelocityNode {
                    zeta,
                    weight,
                    xi: th.cos(),
                    eta: th.sin(),
                }
            })
            .collect();
        Ok(Self { nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of velocity directions, `4 n`.
    pub fn directions(&self) -> usize {
        4 * self.nodes.len()
    }
}

/// `(1/4) sum_i w_i (r1_i + r2_i)`.
pub fn density_moment(r1: &[f64], r2: &[f64], set: &OrdinateSet) -> Result<f64> {
    if r1.len() != set.len() || r2.len() != set.len() {
        return Err(Error::Argument(format!(
            "expected {} values per parity, got {} and {}",
            set.len(),
            r1.len(),
            r2.len()
        )));
    }
    Ok(0.25
        * set
            .nodes
            .iter()
            .zip(r1.iter().zip(r2))
            .map(|(nd, (a, b))| nd.weight * (a + b))
            .sum::<f64>())
}
