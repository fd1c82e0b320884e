//! Gauss–Hermite rules for `∫ e^{-z²} f(z) dz`.

/// Nodes and weights of an `n`-point Gauss–Hermite rule.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `ln w_k + z_k²`, the log-weight for integrating against a unit-free integrand.
    pub log_adjusted: Vec<f64>,
}

impl GaussHermite {
    /// Newton iteration on orthonormal Hermite polynomials with the usual
    /// asymptotic starting guesses. Nodes are returned in ascending order.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
        const EPS: f64 = 1e-15;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let nf = n as f64;
        let mut z = 0.0f64;
        for i in 0..n.div_ceil(2) {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            for _ in 0..100 {
                let (pn, pn1) = orthonormal_hermite(n, z);
                let step = pn / ((2.0 * nf).sqrt() * pn1);
                z -= step;
                if step.abs() <= EPS * z.abs().max(1.0) {
                    break;
                }
            }
            let (_, pn1) = orthonormal_hermite(n, z);
            let pp = (2.0 * nf).sqrt() * pn1;
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        if n % 2 == 1 {
            x[n / 2] = 0.0;
        }
        x.reverse();
        w.reverse();
        let log_adjusted = x.iter().zip(&w).map(|(z, w)| w.ln() + z * z).collect();
        GaussHermite {
            nodes: x,
            weights: w,
            log_adjusted,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Orthonormal Hermite polynomials `(h_n(z), h_{n-1}(z))` by upward recurrence.
fn orthonormal_hermite(n: usize, z: f64) -> (f64, f64) {
    const PIM4: f64 = 0.751_125_544_464_942_5; // π^{-1/4}
    let mut p1 = PIM4;
    let mut p2 = 0.0;
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    (p1, p2)
}
