//! Robust losses on squared residuals and the scale-annealing schedule.

/// Shapes closer than this to 0 or 2 use the closed-form limits.
const SHAPE_EPS: f64 = 1e-8;

/// Welsch loss `1 - exp(-r2 / (2 c^2))`.
pub fn welsch_loss(r2: f64, c: f64) -> f64 {
    -(-r2 / (2.0 * c * c)).exp_m1()
}

/// Adaptive (Barron-family) loss with shape `alpha`, scale `c` and scale
/// control `mu >= 1`.
pub fn adaptive_loss(r2: f64, alpha: f64, c: f64, mu: f64) -> f64 {
    let x = r2 / (mu * c * c);
    if (alpha - 2.0).abs() < SHAPE_EPS {
        return 0.5 * x;
    }
    if alpha.abs() < SHAPE_EPS {
        return (0.5 * x).ln_1p();
    }
    let b = (alpha - 2.0).abs();
    // (|a-2|/a) * ((x/|a-2| + 1)^(a/2) - 1), evaluated without cancellation.
    b / alpha * (0.5 * alpha * (x / b).ln_1p()).exp_m1()
}

/// Derivative of [`adaptive_loss`] with respect to `r2`.
pub fn adaptive_loss_derivative(r2: f64, alpha: f64, c: f64, mu: f64) -> f64 {
    let s = mu * c * c;
    let x = r2 / s;
    if (alpha - 2.0).abs() < SHAPE_EPS {
        return 0.5 / s;
    }
    if alpha.abs() < SHAPE_EPS {
        return 1.0 / ((x + 2.0) * s);
    }
    let b = (alpha - 2.0).abs();
    0.5 / s * ((0.5 * alpha - 1.0) * (x / b).ln_1p()).exp()
}

/// Geometric schedule `mu0, mu0/k, ...` whose last element is exactly 1.
pub fn anneal_schedule(mu0: f64, k_mu: f64) -> Vec<f64> {
    assert!(mu0 >= 1.0 && k_mu > 1.0, "anneal schedule needs mu0 >= 1 and k_mu > 1");
    let mut out = Vec::new();
    let mut mu = mu0;
    while mu > 1.0 + 1e-12 {
        out.push(mu);
        mu /= k_mu;
    }
    out.push(1.0);
    out
}

/// Parameters of the robust NDT loss.
///
/// `d1` and `d2` are the regularisers of the exponential D2D score. Under the
/// least-squares rewriting they are redundant: `d1` is absorbed into the NDT
/// weight and `d2` into `1/c^2`. They are kept for reference only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobustLossConfig {
    pub alpha: f64,
    pub c: f64,
    pub mu: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Default for RobustLossConfig {
    fn default() -> Self {
        Self {
            alpha: -2.0,
            c: 1.5,
            mu: 1.0,
            d1: 1.0,
            d2: 1.0,
        }
    }
}

impl RobustLossConfig {
    pub fn loss(&self, r2: f64) -> f64 {
        adaptive_loss(r2, self.alpha, self.c, self.mu)
    }

    pub fn derivative(&self, r2: f64) -> f64 {
        adaptive_loss_derivative(r2, self.alpha, self.c, self.mu)
    }
}
