//! Gaussian expectations of the Moreau envelope.
//!
//! The envelope is evaluated at `a = rH + qS` against the label
//! `Y = phi(c0 U)` with `U = cS + dZ`, `c = sqrt(kappa/alpha)`,
//! `d = sqrt(1 - kappa/alpha)` and `c0 = 1/sqrt(rho)`. The pair `(a, U)` is
//! jointly Gaussian, so every expectation is written over two independent
//! standard Gaussians `(U, W)` with `a = qc U + e W`, `e = sqrt(q^2 d^2 + r^2)`.
//! Moments that involve `S` or `H` go through their conditional mean and
//! covariance given `(U, W)`.
//!
//! For classification the label jumps at `U = 0`, so the `U` axis uses the
//! half-normal rule on each side.

use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::model::ModelKind;

use super::quadrature::QuadratureGrid;

/// The label channel of one task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Channel {
    pub model: ModelKind,
    /// `sqrt(kappa/alpha)`
    pub c: f64,
    /// `sqrt(1 - kappa/alpha)`
    pub d: f64,
    /// `1/sqrt(rho)`; infinite at `rho = 0`, where only the sign channel is allowed.
    pub c0: f64,
}

impl Channel {
    pub fn new(model: ModelKind, kappa_over_alpha: f64, rho: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&kappa_over_alpha) {
            return Err(Error::InvalidArgument(format!(
                "kappa/alpha must lie in [0, 1], got {kappa_over_alpha}"
            )));
        }
        let regression = model == ModelKind::LinearRegression;
        if !(rho <= 1.0 && (rho > 0.0 || (rho == 0.0 && !regression))) {
            return Err(Error::InvalidArgument(format!(
                "rho must lie in (0, 1] ([0, 1] for classification), got {rho}"
            )));
        }
        Ok(Self {
            model,
            c: kappa_over_alpha.sqrt(),
            d: (1.0 - kappa_over_alpha).sqrt(),
            c0: 1.0 / rho.sqrt(),
        })
    }

    /// Label as a function of `U`.
    pub fn label(&self, u: f64) -> f64 {
        match self.model {
            ModelKind::LinearRegression => self.c0 * u,
            ModelKind::BinaryClassification => {
                if u >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

/// `E[M]` and the first and second moments needed by the saddle solvers.
///
/// `g = dM/da` and `h = d2M/da2` at `a = rH + qS`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub value: f64,
    /// `E[g S]`
    pub g_s: f64,
    /// `E[g H]`
    pub g_h: f64,
    /// `E[g^2]`
    pub g_sq: f64,
    /// `E[h S^2]`
    pub h_ss: f64,
    /// `E[h S H]`
    pub h_sh: f64,
    /// `E[h H^2]`
    pub h_hh: f64,
    /// `E[g h S]`
    pub gh_s: f64,
    /// `E[g h H]`
    pub gh_h: f64,
    /// `E[g^2 h]`
    pub g_sq_h: f64,
}

impl Moments {
    /// `dE[M]/db`
    pub fn d_param(&self) -> f64 {
        -0.5 * self.g_sq
    }

    /// `d2E[M]/db2`
    pub fn d2_param(&self) -> f64 {
        self.g_sq_h
    }

    fn add_scaled(&mut self, w: f64, o: &Moments) {
        self.value += w * o.value;
        self.g_s += w * o.g_s;
        self.g_h += w * o.g_h;
        self.g_sq += w * o.g_sq;
        self.h_ss += w * o.h_ss;
        self.h_sh += w * o.h_sh;
        self.h_hh += w * o.h_hh;
        self.gh_s += w * o.gh_s;
        self.gh_h += w * o.gh_h;
        self.g_sq_h += w * o.g_sq_h;
    }
}

/// Conditional structure of `(S, H)` given `(U, W)`.
#[derive(Debug, Clone, Copy)]
struct Projection {
    qc: f64,
    e: f64,
    c: f64,
    beta_s: f64,
    beta_h: f64,
    var_s: f64,
    var_h: f64,
    cov_sh: f64,
}

impl Projection {
    fn new(channel: &Channel, q: f64, r: f64) -> Self {
        let (c, d) = (channel.c, channel.d);
        let e = (q * q * d * d + r * r).sqrt();
        let (beta_s, beta_h) = if e > 0.0 { (q * d * d / e, r / e) } else { (0.0, 0.0) };
        Self {
            qc: q * c,
            e,
            c,
            beta_s,
            beta_h,
            var_s: (1.0 - c * c - beta_s * beta_s).max(0.0),
            var_h: (1.0 - beta_h * beta_h).max(0.0),
            cov_sh: -beta_s * beta_h,
        }
    }
}

fn check(b: f64, grid: &QuadratureGrid) -> Result<()> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "Moreau parameter must be positive and finite, got {b}"
        )));
    }
    if grid.order() < super::quadrature::MIN_ORDER {
        return Err(Error::InvalidArgument("quadrature order too low".into()));
    }
    Ok(())
}

/// Full set of envelope moments at `(q, r, b)`.
pub fn moments(
    loss: LossKind,
    channel: &Channel,
    q: f64,
    r: f64,
    b: f64,
    grid: &QuadratureGrid,
) -> Result<Moments> {
    check(b, grid)?;
    let kernel = loss.kernel();
    let proj = Projection::new(channel, q, r);
    let mut err = None;
    let mut point = |u: f64, w: f64| -> Moments {
        let y = channel.label(u);
        let a = proj.qc * u + proj.e * w;
        let env = match kernel.envelope(y, a, b) {
            Ok(env) => env,
            Err(e) => {
                err.get_or_insert(e);
                return Moments::default();
            }
        };
        let (g, h) = (env.grad, env.curvature);
        let ms = proj.c * u + proj.beta_s * w;
        let mh = proj.beta_h * w;
        Moments {
            value: env.value,
            g_s: g * ms,
            g_h: g * mh,
            g_sq: g * g,
            h_ss: h * (ms * ms + proj.var_s),
            h_sh: h * (ms * mh + proj.cov_sh),
            h_hh: h * (mh * mh + proj.var_h),
            gh_s: g * h * ms,
            gh_h: g * h * mh,
            g_sq_h: g * g * h,
        }
    };
    let mut total = Moments::default();
    let (herm, half) = (&grid.hermite, &grid.half);
    match channel.model {
        ModelKind::LinearRegression => {
            for (&u, &wu) in herm.nodes.iter().zip(&herm.weights) {
                for (&w, &ww) in herm.nodes.iter().zip(&herm.weights) {
                    total.add_scaled(wu * ww, &point(u, w));
                }
            }
        }
        ModelKind::BinaryClassification => {
            for (&u, &wu) in half.nodes.iter().zip(&half.weights) {
                for (&w, &ww) in herm.nodes.iter().zip(&herm.weights) {
                    total.add_scaled(wu * ww, &point(u, w));
                    total.add_scaled(wu * ww, &point(-u, w));
                }
            }
        }
    }
    match err {
        Some(e) => Err(e),
        None => Ok(total),
    }
}

/// `E[M_{l(Y; .)}(rH + qS; b)]`.
pub fn expected_moreau(
    loss: LossKind,
    channel: &Channel,
    q: f64,
    r: f64,
    b: f64,
    grid: &QuadratureGrid,
) -> Result<f64> {
    check(b, grid)?;
    let kernel = loss.kernel();
    let proj = Projection::new(channel, q, r);
    let mut err = None;
    let mut f = |u: f64, w: f64| -> f64 {
        match kernel.moreau(channel.label(u), proj.qc * u + proj.e * w, b) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                0.0
            }
        }
    };
    let (herm, half) = (&grid.hermite, &grid.half);
    let mut total = 0.0;
    match channel.model {
        ModelKind::LinearRegression => {
            for (&u, &wu) in herm.nodes.iter().zip(&herm.weights) {
                for (&w, &ww) in herm.nodes.iter().zip(&herm.weights) {
                    total += wu * ww * f(u, w);
                }
            }
        }
        ModelKind::BinaryClassification => {
            for (&u, &wu) in half.nodes.iter().zip(&half.weights) {
                for (&w, &ww) in herm.nodes.iter().zip(&herm.weights) {
                    total += wu * ww * (f(u, w) + f(-u, w));
                }
            }
        }
    }
    match err {
        Some(e) => Err(e),
        None => Ok(total),
    }
}
