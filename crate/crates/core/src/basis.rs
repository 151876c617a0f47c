//! Gauss-Lobatto quadrature and the nodal Lagrange basis on the reference
//! interval `[-1, 1]`.
//!
//! A rule with `N` nodes carries polynomials of degree `p = N - 1`. The nodes
//! are the roots of `(1 - ξ²) P_p'(ξ)`, so both cell borders are nodes and the
//! face traces are read directly from the nodal values.

use thiserror::Error;

/// Largest supported node count.
pub const MAX_ORDER: usize = 16;

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;
const NODE_HIT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("invalid quadrature order {0}: expected 2..={MAX_ORDER} nodes")]
    InvalidOrder(usize),
    #[error("basis index {index} out of range for {order} nodes")]
    IndexOutOfRange { index: usize, order: usize },
}

/// Legendre polynomial `P_n(x)` and its derivative `P_n'(x)`.
///
/// Three-term recurrence for the values, `P'_{n+1} = P'_{n-1} + (2n+1) P_n`
/// for the derivatives.
pub fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p_prev, mut p) = (1.0, x);
    let (mut dp_prev, mut dp) = (0.0, 1.0);
    for k in 1..n {
        let kf = k as f64;
        let p_next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        let dp_next = dp_prev + (2.0 * kf + 1.0) * p;
        p_prev = p;
        p = p_next;
        dp_prev = dp;
        dp = dp_next;
    }
    (p, dp)
}

/// Gauss-Lobatto nodes and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Number of nodes `N`.
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Polynomial degree carried by the rule, `N - 1`.
    pub fn degree(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Σ w_k f(ξ_k)`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Builds the `order`-node Gauss-Lobatto rule.
///
/// Interior nodes come from Newton iteration on `q(ξ) = (1 - ξ²) P_p'(ξ)`,
/// seeded with Chebyshev-Lobatto points. The Legendre equation gives
/// `q'(ξ) = -p(p+1) P_p(ξ)`, so each update is
/// `ξ += (1 - ξ²) P_p'(ξ) / (p(p+1) P_p(ξ))`.
pub fn gauss_lobatto(order: usize) -> Result<QuadratureRule, BasisError> {
    if !(2..=MAX_ORDER).contains(&order) {
        return Err(BasisError::InvalidOrder(order));
    }
    let p = order - 1;
    let pp1 = (p * (p + 1)) as f64;

    let mut nodes = vec![0.0; order];
    nodes[0] = -1.0;
    nodes[p] = 1.0;
    for (k, node) in nodes.iter_mut().enumerate().take(p).skip(1) {
        let mut x = -(std::f64::consts::PI * k as f64 / p as f64).cos();
        for _ in 0..NEWTON_MAX_ITER {
            let (pv, dpv) = legendre(p, x);
            let step = (1.0 - x * x) * dpv / (pp1 * pv);
            x += step;
            if step.abs() < NEWTON_TOL {
                break;
            }
        }
        *node = x;
    }
    // Mirror the lower half onto the upper half so the rule is exactly symmetric.
    for k in 0..order / 2 {
        let m = 0.5 * (nodes[order - 1 - k] - nodes[k]);
        nodes[k] = -m;
        nodes[order - 1 - k] = m;
    }
    if order % 2 == 1 {
        nodes[order / 2] = 0.0;
    }

    let weights = nodes
        .iter()
        .map(|&x| {
            let (pv, _) = legendre(p, x);
            2.0 / (pp1 * pv * pv)
        })
        .collect();

    Ok(QuadratureRule { nodes, weights })
}

/// Lagrange basis through the Gauss-Lobatto nodes together with its
/// differentiation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalBasis {
    rule: QuadratureRule,
    /// Row-major, `diff[l * N + k] = h_k'(ξ_l)`.
    diff: Vec<f64>,
    /// `P_p(ξ_k)`, cached for basis evaluation.
    legendre_at_nodes: Vec<f64>,
}

impl NodalBasis {
    pub fn new(order: usize) -> Result<Self, BasisError> {
        Ok(differentiation_matrix(gauss_lobatto(order)?))
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn order(&self) -> usize {
        self.rule.order()
    }

    pub fn nodes(&self) -> &[f64] {
        self.rule.nodes()
    }

    pub fn weights(&self) -> &[f64] {
        self.rule.weights()
    }

    /// `h_k'(ξ_l)`.
    pub fn diff(&self, l: usize, k: usize) -> f64 {
        self.diff[l * self.order() + k]
    }

    /// The full matrix, row-major with rows indexed by evaluation node.
    pub fn diff_matrix(&self) -> &[f64] {
        &self.diff
    }

    /// Evaluates `h_k(ξ)`.
    pub fn lagrange_eval(&self, k: usize, xi: f64) -> Result<f64, BasisError> {
        let n = self.order();
        if k >= n {
            return Err(BasisError::IndexOutOfRange { index: k, order: n });
        }
        let nodes = self.nodes();
        // Removable singularity at ξ_k, exact zeros at the other nodes.
        if let Some(l) = nodes.iter().position(|&x| (xi - x).abs() < NODE_HIT_TOL) {
            return Ok(if l == k { 1.0 } else { 0.0 });
        }
        let p = n - 1;
        let (_, dp) = legendre(p, xi);
        let denom = (p * (p + 1)) as f64 * self.legendre_at_nodes[k] * (xi - nodes[k]);
        Ok((xi - 1.0) * (xi + 1.0) * dp / denom)
    }

    /// Applies the differentiation matrix to nodal values: `out_l = Σ_k D[l][k] v_k`.
    pub fn differentiate(&self, values: &[f64]) -> Vec<f64> {
        let n = self.order();
        assert_eq!(values.len(), n, "nodal vector length");
        (0..n)
            .map(|l| (0..n).map(|k| self.diff(l, k) * values[k]).sum())
            .collect()
    }
}

/// Builds the differentiation matrix `D[l][k] = h_k'(ξ_l)` for `rule`.
///
/// Off-diagonal entries use the closed form
/// `P_p(ξ_l) / (P_p(ξ_k) (ξ_l - ξ_k))`; each diagonal entry is the negated
/// sum of its row so constants differentiate to zero up to rounding.
pub fn differentiation_matrix(rule: QuadratureRule) -> NodalBasis {
    let n = rule.order();
    let p = n - 1;
    let legendre_at_nodes: Vec<f64> = rule.nodes().iter().map(|&x| legendre(p, x).0).collect();
    let nodes = rule.nodes();
    let mut diff = vec![0.0; n * n];
    for l in 0..n {
        let mut row_sum = 0.0;
        for k in 0..n {
            if k != l {
                let d = legendre_at_nodes[l] / (legendre_at_nodes[k] * (nodes[l] - nodes[k]));
                diff[l * n + k] = d;
                row_sum += d;
            }
        }
        diff[l * n + l] = -row_sum;
    }
    NodalBasis {
        rule,
        diff,
        legendre_at_nodes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn rejects_orders_below_two() {
        assert_eq!(gauss_lobatto(1), Err(BasisError::InvalidOrder(1)));
        assert_eq!(gauss_lobatto(0), Err(BasisError::InvalidOrder(0)));
        assert!(gauss_lobatto(MAX_ORDER + 1).is_err());
    }

    #[test]
    fn two_point_rule_is_trapezoid() {
        let r = gauss_lobatto(2).unwrap();
        assert_eq!(r.nodes(), &[-1.0, 1.0]);
        assert!(close(r.weights()[0], 1.0, 1e-15) && close(r.weights()[1], 1.0, 1e-15));
    }

    #[test]
    fn three_point_rule_matches_simpson() {
        let r = gauss_lobatto(3).unwrap();
        assert_eq!(r.nodes(), &[-1.0, 0.0, 1.0]);
        // Solving the 3x3 moment system for m = 0, 1, 2 gives 1/3, 4/3, 1/3.
        let expected = [1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0];
        for (w, e) in r.weights().iter().zip(expected) {
            assert!(close(*w, e, 1e-15), "{w} vs {e}");
        }
    }

    /// Independent oracle: bisection on `(1 - ξ²) P_4'(ξ)` over (0, 1).
    #[test]
    fn five_point_rule_contains_sqrt_three_sevenths() {
        let q = |x: f64| (1.0 - x * x) * legendre(4, x).1;
        let (mut lo, mut hi) = (0.1, 0.99);
        assert!(q(lo) * q(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if q(lo) * q(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let root = 0.5 * (lo + hi);
        assert!(close(root, (3.0f64 / 7.0).sqrt(), 1e-14));

        let r = gauss_lobatto(5).unwrap();
        assert!(close(r.nodes()[3], root, 1e-14));
        assert!(close(r.nodes()[1], -root, 1e-14));
        assert_eq!(r.nodes()[2], 0.0);
    }

    #[test]
    fn legendre_low_degrees() {
        let x = 0.3;
        assert!(close(legendre(2, x).0, 0.5 * (3.0 * x * x - 1.0), 1e-15));
        assert!(close(legendre(2, x).1, 3.0 * x, 1e-15));
        assert!(close(legendre(3, x).0, 0.5 * (5.0 * x * x * x - 3.0 * x), 1e-15));
        assert!(close(legendre(3, x).1, 0.5 * (15.0 * x * x - 3.0), 1e-15));
    }

    #[test]
    fn linear_basis_is_hat_function() {
        let b = NodalBasis::new(2).unwrap();
        assert!(close(b.lagrange_eval(0, 0.0).unwrap(), 0.5, 1e-15));
        assert!(close(b.lagrange_eval(1, 0.5).unwrap(), 0.75, 1e-15));
    }

    #[test]
    fn lagrange_index_out_of_range() {
        let b = NodalBasis::new(4).unwrap();
        assert_eq!(
            b.lagrange_eval(4, 0.0),
            Err(BasisError::IndexOutOfRange { index: 4, order: 4 })
        );
    }

    #[test]
    fn partition_of_unity() {
        for n in 2..=9 {
            let b = NodalBasis::new(n).unwrap();
            for i in 0..=40 {
                let xi = -1.0 + 2.0 * i as f64 / 40.0 + 1e-3 * (i % 3) as f64;
                let xi = xi.clamp(-1.0, 1.0);
                let s: f64 = (0..n).map(|k| b.lagrange_eval(k, xi).unwrap()).sum();
                assert!(close(s, 1.0, 1e-12), "n={n} xi={xi} sum={s}");
            }
        }
    }

    #[test]
    fn linear_diff_matrix() {
        let b = NodalBasis::new(2).unwrap();
        let expected = [-0.5, 0.5, -0.5, 0.5];
        for (d, e) in b.diff_matrix().iter().zip(expected) {
            assert!(close(*d, e, 1e-15));
        }
    }

    #[test]
    fn diff_matrix_on_constant_and_identity() {
        for n in 2..=MAX_ORDER {
            let b = NodalBasis::new(n).unwrap();
            let ones = vec![1.0; n];
            assert!(b.differentiate(&ones).iter().all(|d| d.abs() < 1e-12));
            let ident = b.differentiate(b.nodes());
            assert!(ident.iter().all(|d| close(*d, 1.0, 1e-11)), "n={n}");
        }
    }

    /// Diagonal from the negative row sum agrees with the classical closed form.
    #[test]
    fn diff_matrix_corner_entries() {
        for n in 2..=9 {
            let b = NodalBasis::new(n).unwrap();
            let p = (n - 1) as f64;
            assert!(close(b.diff(0, 0), -p * (p + 1.0) / 4.0, 1e-11));
            assert!(close(b.diff(n - 1, n - 1), p * (p + 1.0) / 4.0, 1e-11));
        }
    }
}
