//! Quadrature rules used throughout the crate: Gauss-Legendre nodes, an
//! adaptive 1-D integrator, a product rule on the unit sphere, and a
//! composite rule for exponentially damped path integrals.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on (-1, 1).
///
/// Nodes are returned in ascending order. Computed by Newton iteration on the
/// Legendre recurrence; accurate to ~1e-15 for the orders used here.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be at least 1");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess for the i-th root (descending), then Newton.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = w;
        nodes[i] = -x;
        weights[i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = (n as f64) * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Fixed-order Gauss-Legendre integral of `f` over `[a, b]`.
pub fn integrate_gl(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64, nodes: &[f64], weights: &[f64]) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for (&x, &w) in nodes.iter().zip(weights) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// Adaptive integrator over `[a, b]`: recursive bisection with a 15-point
/// Gauss-Legendre rule, comparing each panel against its two halves.
///
/// Terminates when the panel correction is below `tol_rel * |total|` scaled
/// to the panel, or below an absolute floor. Intended for smooth integrands
/// with at most mild kinks (the caller splits at known kink locations).
pub fn integrate_adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol_rel: f64) -> f64 {
    let (nodes, weights) = gl15();
    let whole = integrate_gl(&mut |x| f(x), a, b, nodes, weights);
    let scale = whole.abs().max(1e-300);
    adaptive_rec(f, a, b, whole, tol_rel * scale, nodes, weights, 0)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_rec(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    whole: f64,
    tol_abs: f64,
    nodes: &[f64],
    weights: &[f64],
    depth: usize,
) -> f64 {
    let mid = 0.5 * (a + b);
    let left = integrate_gl(&mut |x| f(x), a, mid, nodes, weights);
    let right = integrate_gl(&mut |x| f(x), mid, b, nodes, weights);
    let refined = left + right;
    if (refined - whole).abs() <= tol_abs || depth >= 40 {
        return refined;
    }
    adaptive_rec(f, a, mid, left, 0.5 * tol_abs, nodes, weights, depth + 1)
        + adaptive_rec(f, mid, b, right, 0.5 * tol_abs, nodes, weights, depth + 1)
}

fn gl15() -> (&'static [f64], &'static [f64]) {
    use std::sync::OnceLock;
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let (n, w) = RULE.get_or_init(|| gauss_legendre(15));
    (n, w)
}

/// Product quadrature on the unit sphere: Gauss-Legendre in cos(theta) times
/// a uniform (trapezoidal) rule in phi. Exact for spherical harmonics of
/// degree < n_theta in theta and order < n_phi in phi.
#[derive(Debug, Clone)]
pub struct SphereRule {
    pub n_theta: usize,
    pub n_phi: usize,
    /// cos(theta) nodes, ascending.
    pub u_nodes: Vec<f64>,
    pub u_weights: Vec<f64>,
    /// Unit direction for node (i_theta, i_phi) at index `i_theta * n_phi + i_phi`.
    pub directions: Vec<[f64; 3]>,
    /// Solid-angle weight per direction; sums to 4*pi.
    pub weights: Vec<f64>,
}

impl SphereRule {
    pub fn new(n_theta: usize, n_phi: usize) -> Self {
        let (u_nodes, u_weights) = gauss_legendre(n_theta);
        let dphi = 2.0 * PI / n_phi as f64;
        let mut directions = Vec::with_capacity(n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        for (i, &u) in u_nodes.iter().enumerate() {
            let s = (1.0 - u * u).max(0.0).sqrt();
            for j in 0..n_phi {
                let phi = dphi * j as f64;
                directions.push([s * phi.cos(), s * phi.sin(), u]);
                weights.push(u_weights[i] * dphi);
            }
        }
        SphereRule { n_theta, n_phi, u_nodes, u_weights, directions, weights }
    }

    /// Split a total angular node budget into (n_theta, n_phi) with
    /// n_phi ~ 3 n_theta, matching the anisotropy of the product rule.
    pub fn from_total(total: usize) -> Self {
        let n_theta = (((total as f64) / 3.0).sqrt().round() as usize).max(2);
        let n_phi = (total / n_theta).max(4);
        Self::new(n_theta, n_phi)
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

/// Radial rule on `[0, r_max]`: Gauss-Legendre under the power map
/// `r = r_max t^(3/2)`, which clusters nodes toward the origin where
/// Gaussian-weighted and kernel-scale integrands live. A single smooth map
/// keeps the spectral convergence of the underlying rule, so doubling the
/// node count reliably collapses the error.
#[derive(Debug, Clone)]
pub struct RadialRule {
    pub r_max: f64,
    /// Nodes ascending in (0, r_max).
    pub nodes: Vec<f64>,
    /// Weights including the map Jacobian (but no r^2 volume factor).
    pub weights: Vec<f64>,
}

impl RadialRule {
    const POWER: f64 = 1.5;

    pub fn new(total_nodes: usize, r_max: f64) -> Self {
        assert!(r_max > 0.0);
        let (xs, ws) = gauss_legendre(total_nodes);
        let mut nodes = Vec::with_capacity(total_nodes);
        let mut weights = Vec::with_capacity(total_nodes);
        for (&x, &w) in xs.iter().zip(&ws) {
            let t = 0.5 * (x + 1.0);
            nodes.push(r_max * t.powf(Self::POWER));
            weights.push(0.5 * w * r_max * Self::POWER * t.powf(Self::POWER - 1.0));
        }
        RadialRule { r_max, nodes, weights }
    }
}

/// Quadrature for damped path integrals `int_0^tau exp(-nu s) g(s) ds`.
///
/// The interval is cut into panels refined dyadically toward both endpoints
/// (the integrand degenerates at the boundary ends of a chord), then further
/// split so that `nu * panel_width <= 2`. On each panel the damping
/// accumulated up to the panel start is factored out analytically and
/// Gauss-Legendre handles the residual `exp(-nu (s-a)) g(s)`, which spans at
/// most two e-foldings. Panels with `nu * s > 36` are dropped: their
/// contribution is below double-precision resolution relative to the head
/// of the integral.
#[derive(Debug, Clone)]
pub struct PathRule {
    pub order: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl PathRule {
    pub fn new(order: usize) -> Self {
        let (nodes, weights) = gauss_legendre(order.max(2));
        PathRule { order: order.max(2), nodes, weights }
    }

    pub fn integrate(&self, nu: f64, tau: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
        if !(tau > 0.0) {
            return 0.0;
        }
        let fractions = [
            0.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0 / 2.0, 3.0 / 4.0, 7.0 / 8.0, 15.0 / 16.0, 1.0,
        ];
        let mut acc = 0.0;
        for w in fractions.windows(2) {
            let (a, b) = (w[0] * tau, w[1] * tau);
            if nu * a > 36.0 {
                break;
            }
            // Split so each sub-panel sees at most ~2 e-foldings of damping.
            let splits = if nu * (b - a) > 2.0 { ((nu * (b - a)) / 2.0).ceil() as usize } else { 1 };
            let h = (b - a) / splits as f64;
            for k in 0..splits {
                let pa = a + h * k as f64;
                if nu * pa > 36.0 {
                    break;
                }
                acc += self.panel(nu, pa, pa + h, &mut g);
            }
        }
        acc
    }

    fn panel(&self, nu: f64, a: f64, b: f64, g: &mut impl FnMut(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let head = (-nu * a).exp();
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            let s = mid + half * x;
            acc += w * (-nu * (s - a)).exp() * g(s);
        }
        acc * half * head
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_five_point_matches_reference() {
        let (n, w) = gauss_legendre(5);
        // Abramowitz & Stegun 25.4.30.
        assert_relative_eq!(n[4], 0.906179845938664, epsilon = 1e-14);
        assert_relative_eq!(n[3], 0.538469310105683, epsilon = 1e-14);
        assert_relative_eq!(n[2], 0.0, epsilon = 1e-14);
        assert_relative_eq!(w[2], 0.568888888888889, epsilon = 1e-13);
        assert_relative_eq!(w[4], 0.236926885056189, epsilon = 1e-13);
        let total: f64 = w.iter().sum();
        assert_relative_eq!(total, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn adaptive_integrates_gaussian() {
        let v = integrate_adaptive(&|x: f64| (-x * x).exp(), 0.0, 10.0, 1e-12);
        assert_relative_eq!(v, 0.5 * PI.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn adaptive_handles_mild_kink() {
        // |x - 0.3|^1.5 has an integrable curvature blow-up at 0.3.
        let v = integrate_adaptive(&|x: f64| (x - 0.3f64).abs().powf(1.5), 0.0, 1.0, 1e-12);
        let exact = (0.3f64.powf(2.5) + 0.7f64.powf(2.5)) / 2.5;
        assert_relative_eq!(v, exact, epsilon = 1e-10);
    }

    #[test]
    fn sphere_rule_integrates_constants_and_harmonics() {
        let rule = SphereRule::new(4, 12);
        let total: f64 = rule.weights.iter().sum();
        assert_relative_eq!(total, 4.0 * PI, epsilon = 1e-12);
        // int z^2 over the sphere = 4 pi / 3.
        let z2: f64 = rule
            .directions
            .iter()
            .zip(&rule.weights)
            .map(|(d, w)| w * d[2] * d[2])
            .sum();
        assert_relative_eq!(z2, 4.0 * PI / 3.0, epsilon = 1e-12);
        // Odd harmonics vanish.
        let x: f64 = rule.directions.iter().zip(&rule.weights).map(|(d, w)| w * d[0]).sum();
        assert!(x.abs() < 1e-13);
    }

    #[test]
    fn radial_rule_moments_and_gaussian_mass() {
        let rule = RadialRule::new(12, 12.0);
        let m2: f64 = rule.nodes.iter().zip(&rule.weights).map(|(r, w)| w * r * r).sum();
        assert_relative_eq!(m2, 12.0f64.powi(3) / 3.0, max_relative = 1e-9);
        assert!(rule.nodes.windows(2).all(|p| p[0] < p[1]));
        assert!(rule.nodes[0] > 0.0 && *rule.nodes.last().unwrap() < 12.0);
        // int_0^inf exp(-r^2) r^2 dr = sqrt(pi)/4; refine from ~5e-4 to ~4e-8.
        let gauss = |rule: &RadialRule| -> f64 {
            rule.nodes.iter().zip(&rule.weights).map(|(r, w)| w * r * r * (-r * r).exp()).sum()
        };
        let exact = PI.sqrt() / 4.0;
        assert_relative_eq!(gauss(&rule), exact, max_relative = 1e-3);
        assert_relative_eq!(gauss(&RadialRule::new(24, 12.0)), exact, max_relative = 1e-6);
    }

    #[test]
    fn path_rule_matches_exponential_moments() {
        let rule = PathRule::new(6);
        // int_0^tau exp(-nu s) ds = (1 - exp(-nu tau))/nu.
        for &(nu, tau) in &[(0.0f64, 2.0f64), (0.5, 3.0), (4.0, 10.0), (60.0, 5.0)] {
            let got = rule.integrate(nu, tau, |_| 1.0);
            let exact = if nu == 0.0 { tau } else { (1.0 - (-nu * tau).exp()) / nu };
            assert_relative_eq!(got, exact, epsilon = 1e-10, max_relative = 1e-10);
        }
        // Polynomial integrand under damping:
        // int_0^4 s^2 e^{-2s} ds = 1/4 - e^{-8} (8 + 2 + 1/4).
        let got = rule.integrate(2.0, 4.0, |s| s * s);
        let exact = 0.25 - (-8.0f64).exp() * 10.25;
        assert_relative_eq!(got, exact, max_relative = 1e-9);
    }

    #[test]
    fn path_rule_large_damping_underflows_benignly() {
        let rule = PathRule::new(6);
        let v = rule.integrate(1e6, 1e6, |_| 1.0);
        assert_relative_eq!(v, 1e-6, max_relative = 1e-10);
    }
}
