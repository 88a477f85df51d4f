//! Scalar loss kernel: loss values, proximal operators and Moreau envelopes.
//!
//! The Moreau envelope of `l(y; .)` with parameter `b > 0` is
//!
//! ```text
//! M(a; b) = min_x  l(y; x) + (x - a)^2 / (2 b)
//! ```
//!
//! and its minimizer is `prox_{b l(y; .)}(a)`. Derivatives follow from the
//! prox:
//!
//! * `dM/da = (a - prox) / b`
//! * `d2M/da2 = l''(prox) / (1 + b l''(prox))`
//! * `dM/db = -(a - prox)^2 / (2 b^2)`

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROX_MAX_ITERATIONS: usize = 200;
const PROX_TOLERANCE: f64 = 1e-12;
/// Above this magnitude `log(1 + e^z)` switches to `z + log1p(e^-z)`.
const SOFTPLUS_CUTOFF: f64 = 30.0;

/// Moreau envelope of a loss at one point, with derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub value: f64,
    pub prox: f64,
    /// `dM/da`
    pub grad: f64,
    /// `d2M/da2`
    pub curvature: f64,
}

impl Envelope {
    /// `dM/db`, from the prox residual.
    pub fn d_param(&self) -> f64 {
        -0.5 * self.grad * self.grad
    }
}

/// A convex loss `l(y; x)` in its prediction `x`.
///
/// Implementors supply the value and the first two derivatives in `x`; the
/// prox and the envelope default to a safeguarded Newton solve.
pub trait LossKernel: Send + Sync {
    fn value(&self, y: f64, x: f64) -> f64;
    fn deriv(&self, y: f64, x: f64) -> f64;
    fn second_deriv(&self, y: f64, x: f64) -> f64;

    fn prox(&self, y: f64, a: f64, b: f64) -> Result<f64> {
        newton_prox(self, y, a, b)
    }

    fn envelope(&self, y: f64, a: f64, b: f64) -> Result<Envelope> {
        let prox = self.prox(y, a, b)?;
        Ok(envelope_at(self, y, a, b, prox))
    }

    fn moreau(&self, y: f64, a: f64, b: f64) -> Result<f64> {
        Ok(self.envelope(y, a, b)?.value)
    }

    /// `dM/da` at `(a, b)`.
    fn moreau_grad(&self, y: f64, a: f64, b: f64) -> Result<f64> {
        Ok(self.envelope(y, a, b)?.grad)
    }
}

fn check_param(b: f64) -> Result<()> {
    if b > 0.0 && b.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "Moreau parameter must be positive and finite, got {b}"
        )))
    }
}

fn envelope_at<L: LossKernel + ?Sized>(loss: &L, y: f64, a: f64, b: f64, prox: f64) -> Envelope {
    let d = prox - a;
    let h = loss.second_deriv(y, prox);
    Envelope {
        value: loss.value(y, prox) + d * d / (2.0 * b),
        prox,
        grad: -d / b,
        curvature: h / (1.0 + b * h),
    }
}

/// Generic prox: root of `x - a + b l'(y; x)`, which is increasing with slope
/// at least one. Hence the root lies within `b |l'(y; a)|` of `a`, and Newton
/// steps are kept inside that shrinking bracket.
pub fn newton_prox<L: LossKernel + ?Sized>(loss: &L, y: f64, a: f64, b: f64) -> Result<f64> {
    check_param(b)?;
    let residual = |x: f64| x - a + b * loss.deriv(y, x);
    let r0 = residual(a);
    if r0 == 0.0 {
        return Ok(a);
    }
    let (mut lo, mut hi) = if r0 > 0.0 { (a - r0, a) } else { (a, a - r0) };
    let mut x = a;
    let mut r = r0;
    for _ in 0..PROX_MAX_ITERATIONS {
        if r.abs() < PROX_TOLERANCE {
            return Ok(x);
        }
        if r > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if (hi - lo) <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            return Ok(x);
        }
        let slope = 1.0 + b * loss.second_deriv(y, x);
        let newton = x - r / slope;
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        let r_next = residual(next);
        // Newton can ping-pong across a flat region; fall back to bisection
        // whenever it fails to halve the residual.
        if r_next.abs() > 0.5 * r.abs() && next == newton {
            if r_next > 0.0 {
                hi = next;
            } else {
                lo = next;
            }
            x = 0.5 * (lo + hi);
            r = residual(x);
        } else {
            x = next;
            r = r_next;
        }
    }
    Ok(x)
}

/// `(x - y)^2 / 2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Squared;

impl LossKernel for Squared {
    fn value(&self, y: f64, x: f64) -> f64 {
        0.5 * (x - y) * (x - y)
    }

    fn deriv(&self, y: f64, x: f64) -> f64 {
        x - y
    }

    fn second_deriv(&self, _y: f64, _x: f64) -> f64 {
        1.0
    }

    fn prox(&self, y: f64, a: f64, b: f64) -> Result<f64> {
        check_param(b)?;
        Ok((a + b * y) / (1.0 + b))
    }

    fn envelope(&self, y: f64, a: f64, b: f64) -> Result<Envelope> {
        check_param(b)?;
        let d = a - y;
        Ok(Envelope {
            value: d * d / (2.0 * (1.0 + b)),
            prox: (a + b * y) / (1.0 + b),
            grad: d / (1.0 + b),
            curvature: 1.0 / (1.0 + b),
        })
    }
}

/// `log(1 + exp(-y x))`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Logistic;

/// `log(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > SOFTPLUS_CUTOFF {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `1 / (1 + e^-z)` without overflow.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LossKernel for Logistic {
    fn value(&self, y: f64, x: f64) -> f64 {
        softplus(-x * y)
    }

    fn deriv(&self, y: f64, x: f64) -> f64 {
        -y * sigmoid(-x * y)
    }

    fn second_deriv(&self, y: f64, x: f64) -> f64 {
        let m = x * y;
        y * y * sigmoid(m) * sigmoid(-m)
    }
}

/// The two shipped losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Squared,
    Logistic,
}

impl LossKind {
    pub fn kernel(self) -> &'static dyn LossKernel {
        match self {
            LossKind::Squared => &Squared,
            LossKind::Logistic => &Logistic,
        }
    }

    pub fn value(self, y: f64, x: f64) -> f64 {
        self.kernel().value(y, x)
    }

    pub fn deriv(self, y: f64, x: f64) -> f64 {
        self.kernel().deriv(y, x)
    }

    pub fn second_deriv(self, y: f64, x: f64) -> f64 {
        self.kernel().second_deriv(y, x)
    }

    pub fn prox(self, y: f64, a: f64, b: f64) -> Result<f64> {
        self.kernel().prox(y, a, b)
    }

    pub fn moreau(self, y: f64, a: f64, b: f64) -> Result<f64> {
        self.kernel().moreau(y, a, b)
    }

    pub fn envelope(self, y: f64, a: f64, b: f64) -> Result<Envelope> {
        self.kernel().envelope(y, a, b)
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossKind::Squared => write!(f, "squared"),
            LossKind::Logistic => write!(f, "logistic"),
        }
    }
}
