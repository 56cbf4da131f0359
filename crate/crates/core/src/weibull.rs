//! Log-domain Weibull primitives and the censored single-Weibull MLE.
//!
//! Shape `μ` and scale `σ` are stored as `ln μ`, `ln σ`. With
//! `z = μ (ln t − ln σ)`:
//!
//! ```text
//! ln f(t) = ln μ − ln σ + (μ − 1)(ln t − ln σ) − e^z
//! ln S(t) = −e^z
//! ```

use serde::{Deserialize, Serialize};

use crate::dataset::SurvivalDataset;
use crate::error::{DcsmError, Result};

const SHAPE_LO: f64 = 1e-2;
const SHAPE_HI: f64 = 1e3;
const G_TOL: f64 = 1e-10;
const MAX_BISECTIONS: usize = 500;

/// One expert distribution, `(ln μ_k, ln σ_k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullExpert {
    pub log_shape: f64,
    pub log_scale: f64,
}

/// Single-distribution fit that anchors the experts, `(ln μ, ln σ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullPrior {
    pub log_shape: f64,
    pub log_scale: f64,
}

impl WeibullExpert {
    pub fn new(shape: f64, scale: f64) -> Self {
        WeibullExpert {
            log_shape: shape.ln(),
            log_scale: scale.ln(),
        }
    }

    pub fn shape(&self) -> f64 {
        self.log_shape.exp()
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn is_finite(&self) -> bool {
        self.log_shape.is_finite() && self.log_scale.is_finite()
    }

    pub fn log_pdf(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.log_pdf_unchecked(t))
    }

    pub fn log_survival(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.log_survival_unchecked(t))
    }

    #[inline]
    pub(crate) fn log_pdf_unchecked(&self, t: f64) -> f64 {
        let mu = self.shape();
        let u = t.ln() - self.log_scale;
        self.log_shape - self.log_scale + (mu - 1.0) * u - (mu * u).exp()
    }

    #[inline]
    pub(crate) fn log_survival_unchecked(&self, t: f64) -> f64 {
        -(self.shape() * (t.ln() - self.log_scale)).exp()
    }

    /// `(ln f, ∂/∂ln μ, ∂/∂ln σ)`.
    #[inline]
    pub(crate) fn log_pdf_with_grad(&self, t: f64) -> (f64, f64, f64) {
        let mu = self.shape();
        let u = t.ln() - self.log_scale;
        let z = mu * u;
        let ez = z.exp();
        let value = self.log_shape - self.log_scale + (mu - 1.0) * u - ez;
        (value, 1.0 + z - z * ez, mu * (ez - 1.0))
    }

    /// `(ln S, ∂/∂ln μ, ∂/∂ln σ)`.
    #[inline]
    pub(crate) fn log_survival_with_grad(&self, t: f64) -> (f64, f64, f64) {
        let mu = self.shape();
        let z = mu * (t.ln() - self.log_scale);
        let ez = z.exp();
        (-ez, -z * ez, mu * ez)
    }
}

impl WeibullPrior {
    pub fn new(shape: f64, scale: f64) -> Self {
        WeibullPrior {
            log_shape: shape.ln(),
            log_scale: scale.ln(),
        }
    }

    pub fn shape(&self) -> f64 {
        self.log_shape.exp()
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn as_expert(&self) -> WeibullExpert {
        WeibullExpert {
            log_shape: self.log_shape,
            log_scale: self.log_scale,
        }
    }
}

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(DcsmError::Domain(format!("time must be positive, got {t}")))
    }
}

/// `ln f(t)` for a single expert.
pub fn log_pdf(t: f64, e: &WeibullExpert) -> Result<f64> {
    e.log_pdf(t)
}

/// `ln S(t) = ln P(T > t)` for a single expert.
pub fn log_survival(t: f64, e: &WeibullExpert) -> Result<f64> {
    e.log_survival(t)
}

/// Censored log-likelihood: `Σ_{δ=1} ln f(t) + Σ_{δ=0} ln S(t)`.
pub fn censored_log_likelihood(times: &[f64], events: &[bool], e: &WeibullExpert) -> f64 {
    times
        .iter()
        .zip(events)
        .map(|(&t, &ev)| {
            if ev {
                e.log_pdf_unchecked(t)
            } else {
                e.log_survival_unchecked(t)
            }
        })
        .sum()
}

/// Profile score in the shape parameter; `σ̂(μ)` has been eliminated.
struct ProfileScore {
    log_times: Vec<f64>,
    max_log_time: f64,
    mean_event_log_time: f64,
    events: f64,
}

impl ProfileScore {
    /// Returns `(g(μ), ln Σ t_i^μ − μ·max ln t)`.
    fn eval(&self, mu: f64) -> (f64, f64) {
        let mut s0 = 0.0;
        let mut s1 = 0.0;
        for &l in &self.log_times {
            let w = (mu * (l - self.max_log_time)).exp();
            s0 += w;
            s1 += w * l;
        }
        (1.0 / mu + self.mean_event_log_time - s1 / s0, s0.ln())
    }

    fn log_scale(&self, mu: f64) -> f64 {
        let (_, ln_s0) = self.eval(mu);
        self.max_log_time + (ln_s0 - self.events.ln()) / mu
    }
}

/// Censored single-Weibull maximum likelihood by profile likelihood:
/// `σ̂(μ)^μ = Σ t^μ / r`, and the shape solves the profile score by
/// bisection on `ln μ ∈ [ln 1e-2, ln 1e3]`.
pub fn fit_single_mle_raw(times: &[f64], events: &[bool]) -> Result<WeibullPrior> {
    if let Some(&t) = times.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
        return Err(DcsmError::Domain(format!("time must be positive, got {t}")));
    }
    let r = events.iter().filter(|&&e| e).count();
    if r == 0 {
        return Err(DcsmError::NoEvents);
    }
    let log_times: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let max_log_time = log_times.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean_event_log_time = log_times
        .iter()
        .zip(events)
        .filter(|(_, &e)| e)
        .map(|(l, _)| l)
        .sum::<f64>()
        / r as f64;
    let score = ProfileScore {
        log_times,
        max_log_time,
        mean_event_log_time,
        events: r as f64,
    };

    let (mut lo, mut hi) = (SHAPE_LO.ln(), SHAPE_HI.ln());
    let g_lo = score.eval(lo.exp()).0;
    let g_hi = score.eval(hi.exp()).0;
    // g is strictly decreasing in μ
    if !(g_lo > 0.0 && g_hi < 0.0) {
        return Err(DcsmError::NoBracket { g_lo, g_hi });
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..MAX_BISECTIONS {
        mid = 0.5 * (lo + hi);
        let g = score.eval(mid.exp()).0;
        if g.abs() < G_TOL || hi - lo < 1e-15 {
            break;
        }
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = mid.exp();
    Ok(WeibullPrior {
        log_shape: mid,
        log_scale: score.log_scale(mu),
    })
}

/// Prior fit on a dataset's stored times.
pub fn fit_single_mle(ds: &SurvivalDataset) -> Result<WeibullPrior> {
    fit_single_mle_raw(ds.times(), ds.events())
}
