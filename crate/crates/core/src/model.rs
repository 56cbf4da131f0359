//! The mixture model: gating network, `K` Weibull experts, prior and the
//! trade-off weight on censored instances.
//!
//! Losses follow the batch-mean convention: each ELBO term is averaged over
//! the uncensored (resp. censored) instances of the batch, and the prior
//! penalty is added once per batch.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::dataset::{SurvivalDataset, Transform};
use crate::error::{DcsmError, Result};
use crate::exec::Execution;
use crate::gating::{softmax, softmax_rows, GatingNetwork, ParameterVector};
use crate::weibull::{WeibullExpert, WeibullPrior};

const EXPERT_JITTER: f64 = 0.01;
const MEDIAN_BISECTIONS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct DcsmModel {
    pub gating: GatingNetwork,
    pub experts: Vec<WeibullExpert>,
    pub prior: WeibullPrior,
    pub lambda: f64,
    /// Raw-to-model transform of the training data.
    pub transform: Transform,
    pub feature_names: Vec<String>,
}

/// Mixture weights of one instance; a point on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights(pub Vec<f64>);

impl MixtureWeights {
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub elbo_u: f64,
    pub elbo_c: f64,
    pub prior_loss: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.elbo_u.is_finite()
            && self.elbo_c.is_finite()
            && self.prior_loss.is_finite()
            && self.total.is_finite()
    }
}

/// Gradient of the total loss with respect to every trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub gating: ParameterVector,
    pub log_shape: Vec<f64>,
    pub log_scale: Vec<f64>,
}

/// Model-space instances: standardized features, scaled times.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub features: ArrayView2<'a, f64>,
    pub times: &'a [f64],
    pub events: &'a [bool],
}

impl<'a> Batch<'a> {
    pub fn new(
        features: ArrayView2<'a, f64>,
        times: &'a [f64],
        events: &'a [bool],
    ) -> Result<Self> {
        if features.nrows() != times.len() || times.len() != events.len() {
            return Err(DcsmError::InvalidData(format!(
                "batch has {} rows, {} times, {} events",
                features.nrows(),
                times.len(),
                events.len()
            )));
        }
        if let Some(&t) = times.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
            return Err(DcsmError::Domain(format!("time must be positive, got {t}")));
        }
        Ok(Batch {
            features,
            times,
            events,
        })
    }

    pub fn from_dataset(ds: &'a SurvivalDataset) -> Result<Self> {
        Self::new(ds.features(), ds.times(), ds.events())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl DcsmModel {
    pub fn new(
        gating: GatingNetwork,
        experts: Vec<WeibullExpert>,
        prior: WeibullPrior,
        lambda: f64,
        transform: Transform,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if experts.is_empty() || experts.len() != gating.experts() {
            return Err(DcsmError::DimensionMismatch {
                expected: gating.experts(),
                got: experts.len(),
            });
        }
        if transform.dim() != gating.input_dim() || feature_names.len() != gating.input_dim() {
            return Err(DcsmError::DimensionMismatch {
                expected: gating.input_dim(),
                got: transform.dim(),
            });
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(DcsmError::Config(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        if !(prior.log_shape.is_finite() && prior.log_scale.is_finite()) {
            return Err(DcsmError::Config("prior must be finite".into()));
        }
        if transform.time_scale.is_nan() || transform.time_scale <= 0.0 {
            return Err(DcsmError::Config("time scale must be positive".into()));
        }
        Ok(DcsmModel {
            gating,
            experts,
            prior,
            lambda,
            transform,
            feature_names,
        })
    }

    /// Fresh model for a standardized training set: random gating network,
    /// experts at the prior with ±1% jitter on the log parameters.
    pub fn init(
        train: &SurvivalDataset,
        hidden: &[usize],
        k: usize,
        prior: WeibullPrior,
        lambda: f64,
        seed: u64,
    ) -> Result<Self> {
        let gating = GatingNetwork::init(train.dim(), hidden, k, seed)?;
        let mut rng = crate::seeded_rng(crate::mix_seed(seed, 1));
        let experts = (0..k)
            .map(|_| WeibullExpert {
                log_shape: prior.log_shape + rng.random_range(-EXPERT_JITTER..=EXPERT_JITTER),
                log_scale: prior.log_scale + rng.random_range(-EXPERT_JITTER..=EXPERT_JITTER),
            })
            .collect();
        Self::new(
            gating,
            experts,
            prior,
            lambda,
            train.transform().clone(),
            train.feature_names().to_vec(),
        )
    }

    pub fn k(&self) -> usize {
        self.experts.len()
    }

    pub fn input_dim(&self) -> usize {
        self.gating.input_dim()
    }

    pub fn time_scale(&self) -> f64 {
        self.transform.time_scale
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.input_dim() {
            return Err(DcsmError::DimensionMismatch {
                expected: self.input_dim(),
                got,
            });
        }
        Ok(())
    }

    /// Replay the training transform onto a raw dataset.
    pub fn prepare(&self, raw: &SurvivalDataset) -> Result<SurvivalDataset> {
        self.check_dim(raw.dim())?;
        raw.apply_transform(&self.transform)
    }

    // ---- per-instance API, raw units ----

    /// Mixture weights for a raw feature vector.
    pub fn mixture_weights(&self, x: &[f64]) -> Result<MixtureWeights> {
        self.check_dim(x.len())?;
        let z = self.transform.apply_features(x);
        Ok(MixtureWeights(softmax(&self.gating.logits(&z)?)))
    }

    /// `S(t | x) = Σ_k α_k(x) S_k(t / time_scale)`.
    pub fn predict_survival(&self, x: &[f64], t: f64) -> Result<f64> {
        if t.is_nan() || t <= 0.0 {
            return Err(DcsmError::Domain(format!("time must be positive, got {t}")));
        }
        let alpha = self.mixture_weights(x)?;
        Ok(self.survival_scaled(&alpha.0, t / self.time_scale()))
    }

    /// Median survival time in raw units.
    pub fn predict_median(&self, x: &[f64]) -> Result<f64> {
        let alpha = self.mixture_weights(x)?;
        Ok(self.median_scaled(&alpha.0) * self.time_scale())
    }

    pub fn assign_cluster(&self, x: &[f64]) -> Result<usize> {
        Ok(self.mixture_weights(x)?.argmax())
    }

    // ---- batch API on prepared (model-space) data ----

    /// `batch × K` mixture weights for standardized features.
    pub fn weights_matrix(&self, features: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (logits, _) = self.gating.forward(features)?;
        Ok(softmax_rows(&logits))
    }

    pub fn assign_clusters(&self, features: ArrayView2<f64>) -> Result<Vec<usize>> {
        let w = self.weights_matrix(features)?;
        Ok(w.outer_iter()
            .map(|row| argmax(row.as_slice().expect("contiguous")))
            .collect())
    }

    /// Median survival (raw units) for every row of standardized features.
    pub fn predict_medians(&self, features: ArrayView2<f64>, exec: Execution) -> Result<Vec<f64>> {
        let w = self.weights_matrix(features)?;
        let rows: Vec<Vec<f64>> = w.outer_iter().map(|r| r.to_vec()).collect();
        let scale = self.time_scale();
        Ok(exec.map_slice(&rows, |alpha| self.median_scaled(alpha) * scale))
    }

    /// Ranking score for concordance: larger means earlier expected event.
    pub fn risk_scores(&self, features: ArrayView2<f64>, exec: Execution) -> Result<Vec<f64>> {
        Ok(self
            .predict_medians(features, exec)?
            .into_iter()
            .map(|m| -m)
            .collect())
    }

    pub(crate) fn survival_scaled(&self, alpha: &[f64], t: f64) -> f64 {
        alpha
            .iter()
            .zip(&self.experts)
            .map(|(a, e)| a * e.log_survival_unchecked(t).exp())
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    /// Bracket by doubling/halving from scaled time 1, then bisect.
    pub(crate) fn median_scaled(&self, alpha: &[f64]) -> f64 {
        let s = |t: f64| self.survival_scaled(alpha, t);
        let (mut lo, mut hi);
        if s(1.0) > 0.5 {
            lo = 1.0;
            hi = 2.0;
            while s(hi) > 0.5 && hi < f64::MAX / 4.0 {
                lo = hi;
                hi *= 2.0;
            }
        } else {
            hi = 1.0;
            lo = 0.5;
            while s(lo) <= 0.5 && lo > f64::MIN_POSITIVE * 4.0 {
                hi = lo;
                lo *= 0.5;
            }
        }
        for _ in 0..MEDIAN_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if s(mid) > 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    // ---- objective ----

    /// Per-instance, per-expert `ln f` (events) or `ln S` (censored).
    fn expert_terms(&self, batch: &Batch) -> Array2<f64> {
        let mut c = Array2::zeros((batch.len(), self.k()));
        for (i, mut row) in c.outer_iter_mut().enumerate() {
            let t = batch.times[i];
            for (k, e) in self.experts.iter().enumerate() {
                row[k] = if batch.events[i] {
                    e.log_pdf_unchecked(t)
                } else {
                    e.log_survival_unchecked(t)
                };
            }
        }
        c
    }

    fn elbo_terms(&self, batch: &Batch) -> Result<(f64, f64)> {
        if batch.is_empty() {
            return Ok((0.0, 0.0));
        }
        let alpha = self.weights_matrix(batch.features)?;
        let c = self.expert_terms(batch);
        let (mut su, mut nu, mut sc, mut nc) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..batch.len() {
            let v: f64 = alpha.row(i).dot(&c.row(i));
            if batch.events[i] {
                su += v;
                nu += 1;
            } else {
                sc += v;
                nc += 1;
            }
        }
        let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
        Ok((mean(su, nu), mean(sc, nc)))
    }

    /// Batch mean of `Σ_k α_k ln f_k(t)` over instances with observed events.
    /// Censoring flags are ignored: every row is treated as an event.
    pub fn elbo_uncensored(&self, features: ArrayView2<f64>, times: &[f64]) -> Result<f64> {
        let events = vec![true; times.len()];
        let batch = Batch::new(features, times, &events)?;
        Ok(self.elbo_terms(&batch)?.0)
    }

    /// Batch mean of `Σ_k α_k ln S_k(t)`; every row is treated as censored.
    pub fn elbo_censored(&self, features: ArrayView2<f64>, times: &[f64]) -> Result<f64> {
        let events = vec![false; times.len()];
        let batch = Batch::new(features, times, &events)?;
        Ok(self.elbo_terms(&batch)?.1)
    }

    /// `Σ_k (μ_k − μ)² + (σ_k − σ)²` on the natural scale.
    pub fn prior_loss(&self) -> f64 {
        let (mu, sigma) = (self.prior.shape(), self.prior.scale());
        self.experts
            .iter()
            .map(|e| (e.shape() - mu).powi(2) + (e.scale() - sigma).powi(2))
            .sum()
    }

    /// `prior − ELBO_U − λ·ELBO_C`.
    pub fn total_loss(&self, batch: &Batch) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(DcsmError::EmptyData("loss needs a nonempty batch".into()));
        }
        let (elbo_u, elbo_c) = self.elbo_terms(batch)?;
        let prior_loss = self.prior_loss();
        Ok(LossBreakdown {
            elbo_u,
            elbo_c,
            prior_loss,
            total: prior_loss - elbo_u - self.lambda * elbo_c,
        })
    }

    /// Loss and its gradient with respect to all trainable parameters.
    ///
    /// Through the softmax, `∂/∂logit_j Σ_k α_k c_k = α_j (c_j − Σ_k α_k c_k)`.
    pub fn loss_gradients(&self, batch: &Batch) -> Result<(LossBreakdown, ModelGradients)> {
        if batch.is_empty() {
            return Err(DcsmError::EmptyData("loss needs a nonempty batch".into()));
        }
        let k = self.k();
        let (logits, cache) = self.gating.forward(batch.features)?;
        let alpha = softmax_rows(&logits);
        let n_u = batch.events.iter().filter(|&&e| e).count();
        let n_c = batch.len() - n_u;

        let mut d_logits = Array2::zeros((batch.len(), k));
        let mut g_shape = vec![0.0; k];
        let mut g_scale = vec![0.0; k];
        let (mut su, mut sc) = (0.0, 0.0);
        let mut c = vec![0.0; k];
        let mut dc_shape = vec![0.0; k];
        let mut dc_scale = vec![0.0; k];
        for i in 0..batch.len() {
            let t = batch.times[i];
            let event = batch.events[i];
            for (j, e) in self.experts.iter().enumerate() {
                let (v, da, db) = if event {
                    e.log_pdf_with_grad(t)
                } else {
                    e.log_survival_with_grad(t)
                };
                c[j] = v;
                dc_shape[j] = da;
                dc_scale[j] = db;
            }
            let a = alpha.row(i);
            let expected: f64 = a.iter().zip(&c).map(|(a, c)| a * c).sum();
            // loss weight of this instance's ELBO term
            let w = if event {
                su += expected;
                -1.0 / n_u as f64
            } else {
                sc += expected;
                -self.lambda / n_c as f64
            };
            for j in 0..k {
                d_logits[[i, j]] = w * a[j] * (c[j] - expected);
                g_shape[j] += w * a[j] * dc_shape[j];
                g_scale[j] += w * a[j] * dc_scale[j];
            }
        }
        let (mu, sigma) = (self.prior.shape(), self.prior.scale());
        for (j, e) in self.experts.iter().enumerate() {
            let (mu_j, sigma_j) = (e.shape(), e.scale());
            g_shape[j] += 2.0 * (mu_j - mu) * mu_j;
            g_scale[j] += 2.0 * (sigma_j - sigma) * sigma_j;
        }
        let gating = self.gating.backward(&cache, d_logits.view())?;

        let elbo_u = if n_u == 0 { 0.0 } else { su / n_u as f64 };
        let elbo_c = if n_c == 0 { 0.0 } else { sc / n_c as f64 };
        let prior_loss = self.prior_loss();
        Ok((
            LossBreakdown {
                elbo_u,
                elbo_c,
                prior_loss,
                total: prior_loss - elbo_u - self.lambda * elbo_c,
            },
            ModelGradients {
                gating,
                log_shape: g_shape,
                log_scale: g_scale,
            },
        ))
    }

    /// Every trainable parameter: gating vector, then `(ln μ_k, ln σ_k)` pairs.
    pub fn parameters(&self) -> Vec<f64> {
        let mut v = self.gating.flatten().0;
        for e in &self.experts {
            v.push(e.log_shape);
            v.push(e.log_scale);
        }
        v
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        let n = self.gating.param_count();
        if params.len() != n + 2 * self.k() {
            return Err(DcsmError::DimensionMismatch {
                expected: n + 2 * self.k(),
                got: params.len(),
            });
        }
        self.gating.unflatten(&params[..n])?;
        for (e, pair) in self.experts.iter_mut().zip(params[n..].chunks_exact(2)) {
            e.log_shape = pair[0];
            e.log_scale = pair[1];
        }
        Ok(())
    }
}

impl ModelGradients {
    /// Same layout as [`DcsmModel::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.gating.0.clone();
        for (a, b) in self.log_shape.iter().zip(&self.log_scale) {
            v.push(*a);
            v.push(*b);
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::SeedableRng;

    fn linear_model(output_map: Array2<f64>, experts: Vec<WeibullExpert>) -> DcsmModel {
        let d = output_map.ncols();
        DcsmModel::new(
            GatingNetwork::from_parts(vec![], output_map).unwrap(),
            experts,
            WeibullPrior::new(1.0, 1.0),
            1.0,
            Transform::identity(d),
            SurvivalDataset::default_names(d),
        )
        .unwrap()
    }

    /// Gating that yields α = (0.3, 0.7) for input x = (1): logits (0, ln(7/3)).
    fn fixed_alpha_model() -> DcsmModel {
        linear_model(
            array![[0.0], [(7.0f64 / 3.0).ln()]],
            vec![WeibullExpert::new(1.5, 0.8), WeibullExpert::new(0.7, 2.0)],
        )
    }

    #[test]
    fn zero_logits_give_uniform_weights() {
        let m = linear_model(Array2::zeros((3, 2)), vec![WeibullExpert::new(1.0, 1.0); 3]);
        for p in m.mixture_weights(&[4.0, -2.0]).unwrap().0 {
            assert_relative_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
        }
        let single = linear_model(array![[2.0, 1.0]], vec![WeibullExpert::new(1.0, 1.0)]);
        assert_eq!(single.mixture_weights(&[4.0, -2.0]).unwrap().0, vec![1.0]);
        assert!(single.mixture_weights(&[1.0]).is_err());
    }

    #[test]
    fn hand_built_elbo_terms() {
        let m = fixed_alpha_model();
        let a = m.mixture_weights(&[1.0]).unwrap().0;
        assert_relative_eq!(a[0], 0.3, epsilon = 1e-14);
        assert_relative_eq!(a[1], 0.7, epsilon = 1e-14);
        // independent per-term evaluation in natural units
        let pdf = |t: f64, mu: f64, s: f64| {
            (mu / s * (t / s).powf(mu - 1.0) * (-(t / s).powf(mu)).exp()).ln()
        };
        let surv = |t: f64, mu: f64, s: f64| -(t / s).powf(mu);
        let x = array![[1.0]];
        let u = m.elbo_uncensored(x.view(), &[0.5]).unwrap();
        assert_relative_eq!(
            u,
            0.3 * pdf(0.5, 1.5, 0.8) + 0.7 * pdf(0.5, 0.7, 2.0),
            epsilon = 1e-12
        );
        let c = m.elbo_censored(x.view(), &[0.5]).unwrap();
        assert_relative_eq!(
            c,
            0.3 * surv(0.5, 1.5, 0.8) + 0.7 * surv(0.5, 0.7, 2.0),
            epsilon = 1e-12
        );
        assert!(c <= 0.0);
        assert!(m.elbo_censored(x.view(), &[1e-12]).unwrap().abs() < 1e-7);
    }

    #[test]
    fn elbo_collapses_for_single_or_duplicate_experts() {
        let e = WeibullExpert::new(1.3, 0.6);
        let x = array![[0.2, 1.0], [-1.0, 3.0]];
        let t = [0.4, 0.9];
        let single = linear_model(array![[0.5, -0.5]], vec![e]);
        let expect = (e.log_pdf(0.4).unwrap() + e.log_pdf(0.9).unwrap()) / 2.0;
        assert_relative_eq!(
            single.elbo_uncensored(x.view(), &t).unwrap(),
            expect,
            epsilon = 1e-14
        );
        let expect_c = (e.log_survival(0.4).unwrap() + e.log_survival(0.9).unwrap()) / 2.0;
        assert_relative_eq!(
            single.elbo_censored(x.view(), &t).unwrap(),
            expect_c,
            epsilon = 1e-14
        );
        let dup = linear_model(Array2::zeros((2, 2)), vec![e, e]);
        assert_relative_eq!(
            dup.elbo_uncensored(x.view(), &t).unwrap(),
            expect,
            epsilon = 1e-14
        );
        assert_eq!(
            single
                .elbo_uncensored(Array2::zeros((0, 2)).view(), &[])
                .unwrap(),
            0.0
        );
    }

    #[test]
    fn prior_loss_cases() {
        let mut m = linear_model(Array2::zeros((2, 1)), vec![WeibullExpert::new(1.0, 1.0); 2]);
        assert_eq!(m.prior_loss(), 0.0);
        m.experts = vec![WeibullExpert::new(2.0, 1.0), WeibullExpert::new(1.0, 3.0)];
        assert_relative_eq!(m.prior_loss(), 5.0, epsilon = 1e-12);
        m.experts.truncate(1);
        assert_relative_eq!(m.prior_loss(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn total_loss_composition_and_lambda() {
        let mut m = fixed_alpha_model();
        m.experts[0] = WeibullExpert::new(2.0, 1.5);
        let x = array![[1.0], [0.2], [-0.4]];
        let t = [0.3, 0.8, 0.5];
        let ev = [true, false, false];
        let b = Batch::new(x.view(), &t, &ev).unwrap();
        let l = m.total_loss(&b).unwrap();
        let u = m
            .elbo_uncensored(x.slice(ndarray::s![0..1, ..]), &t[..1])
            .unwrap();
        let c = m
            .elbo_censored(x.slice(ndarray::s![1.., ..]), &t[1..])
            .unwrap();
        assert_relative_eq!(l.total, m.prior_loss() - u - c, epsilon = 1e-12);
        m.lambda = 0.5;
        let half = m.total_loss(&b).unwrap();
        assert_relative_eq!(half.total - l.total, 0.5 * l.elbo_c, epsilon = 1e-12);

        let all_c = [false; 3];
        m.lambda = 1.0;
        let bc = m
            .total_loss(&Batch::new(x.view(), &t, &all_c).unwrap())
            .unwrap();
        assert_eq!(bc.elbo_u, 0.0);
        assert_relative_eq!(bc.total, bc.prior_loss - bc.elbo_c, epsilon = 1e-14);
    }

    #[test]
    fn logit_gradients_vanish_for_symmetric_models() {
        let e = WeibullExpert::new(1.2, 0.9);
        let m = linear_model(Array2::zeros((2, 2)), vec![e, e]);
        let x = array![[0.3, -1.0], [1.0, 2.0]];
        let (_, g) = m
            .loss_gradients(&Batch::new(x.view(), &[0.2, 0.7], &[true, false]).unwrap())
            .unwrap();
        assert!(g.gating.0.iter().all(|v| v.abs() < 1e-15));
        let single = linear_model(array![[0.4, -0.2]], vec![e]);
        let (_, g) = single
            .loss_gradients(&Batch::new(x.view(), &[0.2, 0.7], &[true, false]).unwrap())
            .unwrap();
        assert!(g.gating.0.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let d = 3;
        let x = Array2::from_shape_simple_fn((6, d), || rng.random_range(-1.5..1.5));
        let times: Vec<f64> = (0..6).map(|_| rng.random_range(0.05..1.0)).collect();
        let events = [true, false, true, true, false, false];
        let ds = SurvivalDataset::new(
            x.clone(),
            times.clone(),
            events.to_vec(),
            SurvivalDataset::default_names(d),
        )
        .unwrap();
        let mut m = DcsmModel::init(&ds, &[4], 3, WeibullPrior::new(1.3, 0.7), 0.75, 8).unwrap();
        for e in &mut m.experts {
            e.log_shape += rng.random_range(-0.3..0.3);
            e.log_scale += rng.random_range(-0.3..0.3);
        }
        let batch = Batch::new(x.view(), &times, &events).unwrap();
        let (_, g) = m.loss_gradients(&batch).unwrap();
        let analytic = g.flatten();
        let base = m.parameters();
        let h = 1e-5;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            m.set_parameters(&p).unwrap();
            let up = m.total_loss(&batch).unwrap().total;
            p[i] -= 2.0 * h;
            m.set_parameters(&p).unwrap();
            let down = m.total_loss(&batch).unwrap().total;
            let fd = (up - down) / (2.0 * h);
            let tol = 1e-4 * fd.abs().max(analytic[i].abs()) + 1e-7;
            assert!(
                (fd - analytic[i]).abs() <= tol,
                "param {i}: {} vs {fd}",
                analytic[i]
            );
        }
    }

    #[test]
    fn two_expert_survival() {
        let m = linear_model(
            Array2::zeros((2, 1)),
            vec![WeibullExpert::new(1.0, 1.0), WeibullExpert::new(1.0, 2.0)],
        );
        let s = m.predict_survival(&[0.0], 1.0).unwrap();
        assert_relative_eq!(
            s,
            0.5 * (-1.0f64).exp() + 0.5 * (-0.5f64).exp(),
            epsilon = 1e-15
        );
        assert_relative_eq!(s, 0.4872, epsilon = 1e-4);
        assert!(m.predict_survival(&[0.0], 0.0).is_err());
        assert_relative_eq!(
            m.predict_survival(&[0.0], 1e-12).unwrap(),
            1.0,
            epsilon = 1e-11
        );
    }

    #[test]
    fn exponential_median() {
        let mut m = linear_model(array![[0.0]], vec![WeibullExpert::new(1.0, 0.37)]);
        m.transform.time_scale = 250.0;
        let med = m.predict_median(&[0.0]).unwrap();
        assert_relative_eq!(med, 0.37 * 2f64.ln() * 250.0, max_relative = 1e-6);
        assert_relative_eq!(
            m.predict_survival(&[0.0], med).unwrap(),
            0.5,
            epsilon = 1e-9
        );
    }

    #[test]
    fn median_is_permutation_invariant() {
        let a = WeibullExpert::new(0.8, 0.3);
        let b = WeibullExpert::new(2.5, 3.0);
        let m1 = linear_model(Array2::zeros((2, 1)), vec![a, b]);
        let m2 = linear_model(Array2::zeros((2, 1)), vec![b, a]);
        assert_eq!(
            m1.predict_median(&[1.0]).unwrap(),
            m2.predict_median(&[1.0]).unwrap()
        );
    }

    #[test]
    fn cluster_assignment_rules() {
        assert_eq!(argmax(&[0.2, 0.7, 0.1]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        let m = linear_model(
            array![[1.0, 0.0], [0.0, 1.0]],
            vec![WeibullExpert::new(1.0, 1.0); 2],
        );
        assert_eq!(m.assign_cluster(&[0.1, 0.4]).unwrap(), 1);
        assert_eq!(m.assign_cluster(&[0.4, 0.4]).unwrap(), 0);
    }
}
