//! Composite adaptive Gauss–Legendre quadrature for vector-valued integrands.
//!
//! Every panel is integrated with a 64-point rule; the error estimate is its
//! difference from a 32-point rule on the same panel, which overstates the
//! error of the finer rule. The panel with the largest estimate is bisected
//! until the summed estimate is under the absolute tolerance.

use std::sync::OnceLock;

use crate::error::{CrmError, Result};

pub const NODES_PER_PANEL: usize = 64;

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Scalar integral of `f` over `[a, b]`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(mid + half * x)).sum::<f64>() * half
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

pub fn gauss_legendre_64() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(NODES_PER_PANEL))
}

fn gauss_legendre_32() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(NODES_PER_PANEL / 2))
}

#[derive(Debug, Clone, Copy)]
pub struct AdaptiveQuadrature {
    pub abs_tol: f64,
    pub max_panels: usize,
}

impl Default for AdaptiveQuadrature {
    fn default() -> Self {
        AdaptiveQuadrature { abs_tol: 1e-8, max_panels: 4096 }
    }
}

struct Panel {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: f64,
}

impl AdaptiveQuadrature {
    /// Integrates the `dim`-vector function `f` over `[breaks[0], breaks[last]]`,
    /// with the interior breakpoints as initial panel boundaries. `f` writes
    /// its value at `x` into the output slice.
    pub fn integrate<F>(&self, f: F, breaks: &[f64], dim: usize) -> Result<Vec<f64>>
    where
        F: Fn(f64, &mut [f64]),
    {
        assert!(breaks.len() >= 2, "need at least one panel");
        let rule = gauss_legendre_64();
        let mut scratch = vec![0.0; dim];
        let mut panels = Vec::new();
        for w in breaks.windows(2) {
            if w[1] > w[0] {
                panels.push(self.panel(rule, &f, w[0], w[1], dim, &mut scratch)?);
            }
        }
        loop {
            let total_err: f64 = panels.iter().map(|p| p.error).sum();
            if total_err <= self.abs_tol {
                break;
            }
            if panels.len() >= self.max_panels {
                return Err(CrmError::QuadratureBudget { panels: self.max_panels });
            }
            let (worst, _) =
                panels.iter().enumerate().max_by(|x, y| x.1.error.total_cmp(&y.1.error)).expect("non-empty");
            let p = panels.swap_remove(worst);
            let mid = 0.5 * (p.a + p.b);
            if mid <= p.a || mid >= p.b {
                // cannot split further at floating-point resolution
                panels.push(Panel { error: 0.0, ..p });
                continue;
            }
            panels.push(self.panel(rule, &f, p.a, mid, dim, &mut scratch)?);
            panels.push(self.panel(rule, &f, mid, p.b, dim, &mut scratch)?);
        }
        // Sum in position order so the result does not depend on split history.
        panels.sort_by(|x, y| x.a.total_cmp(&y.a));
        let mut out = vec![0.0; dim];
        for p in &panels {
            for (o, v) in out.iter_mut().zip(&p.value) {
                *o += v;
            }
        }
        Ok(out)
    }

    fn panel<F>(
        &self,
        rule: &GaussLegendre,
        f: &F,
        a: f64,
        b: f64,
        dim: usize,
        scratch: &mut [f64],
    ) -> Result<Panel>
    where
        F: Fn(f64, &mut [f64]),
    {
        let value = apply(rule, f, a, b, dim, scratch)?;
        let coarse = apply(gauss_legendre_32(), f, a, b, dim, scratch)?;
        let error = value.iter().zip(&coarse).map(|(v, c)| (v - c).abs()).fold(0.0, f64::max);
        Ok(Panel { a, b, value, error })
    }
}

fn apply<F>(rule: &GaussLegendre, f: &F, a: f64, b: f64, dim: usize, scratch: &mut [f64]) -> Result<Vec<f64>>
where
    F: Fn(f64, &mut [f64]),
{
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = vec![0.0; dim];
    for (&x, &w) in rule.nodes().iter().zip(rule.weights()) {
        let t = mid + half * x;
        f(t, scratch);
        for k in 0..dim {
            let v = scratch[k];
            if !v.is_finite() {
                return Err(CrmError::NonFiniteIntegrand(t));
            }
            acc[k] += w * v;
        }
    }
    for v in &mut acc {
        *v *= half;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_is_exact_for_polynomials() {
        let r = gauss_legendre_64();
        let s: f64 = r.weights().iter().sum();
        assert!((s - 2.0).abs() < 1e-13);
        // degree 127 is the exactness limit; check a moderate odd/even pair
        let v = r.integrate(|x| x.powi(10), -1.0, 1.0);
        assert!((v - 2.0 / 11.0).abs() < 1e-14);
        let v = r.integrate(|x| x.powi(9), 0.0, 2.0);
        assert!((v - 2f64.powi(10) / 10.0).abs() < 1e-10);
    }

    #[test]
    fn adaptive_handles_narrow_peak() {
        let q = AdaptiveQuadrature::default();
        let s = 1e-3;
        let v = q
            .integrate(
                |x, out| out[0] = (-(x - 0.3) * (x - 0.3) / (2.0 * s * s)).exp(),
                &[-10.0, 0.0, 0.29, 0.31, 10.0],
                1,
            )
            .unwrap();
        let exact = s * (2.0 * std::f64::consts::PI).sqrt();
        assert!((v[0] - exact).abs() < 1e-10);
    }

    #[test]
    fn vector_components_share_panels() {
        let q = AdaptiveQuadrature::default();
        let v = q
            .integrate(
                |x, out| {
                    out[0] = x.exp();
                    out[1] = x.sin();
                },
                &[0.0, 1.0],
                2,
            )
            .unwrap();
        assert!((v[0] - (1f64.exp() - 1.0)).abs() < 1e-12);
        assert!((v[1] - (1.0 - 1f64.cos())).abs() < 1e-12);
    }

    #[test]
    fn non_finite_integrand_is_reported() {
        let q = AdaptiveQuadrature::default();
        let e = q.integrate(|_, out| out[0] = f64::NAN, &[0.0, 1.0], 1);
        assert!(matches!(e, Err(CrmError::NonFiniteIntegrand(_))));
    }
}
