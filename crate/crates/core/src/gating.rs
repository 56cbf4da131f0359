//! Gating network: a rectifier MLP followed by a bias-free output map that
//! yields one logit per expert, with an analytic reverse pass.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{DcsmError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out × in`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatingNetwork {
    pub layers: Vec<DenseLayer>,
    /// `K × h`, applied to the last hidden representation.
    pub output_map: Array2<f64>,
}

/// Flat view of every trainable parameter: layer by layer (weights
/// row-major, then biases), then the output map row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Activations kept from [`GatingNetwork::forward`] for the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
    shapes: Vec<(usize, usize)>,
}

impl ForwardCache {
    pub fn batch_len(&self) -> usize {
        self.input.nrows()
    }
}

fn glorot<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..=limit))
}

impl GatingNetwork {
    /// Uniform fan-based weights, zero biases; deterministic in `seed`.
    pub fn init(input_dim: usize, hidden: &[usize], experts: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || experts == 0 || hidden.contains(&0) {
            return Err(DcsmError::Config(format!(
                "invalid architecture: d={input_dim}, hidden={hidden:?}, K={experts}"
            )));
        }
        let mut rng = crate::seeded_rng(seed);
        let mut layers = Vec::with_capacity(hidden.len());
        let mut fan_in = input_dim;
        for &width in hidden {
            layers.push(DenseLayer {
                weights: glorot(&mut rng, width, fan_in),
                bias: Array1::zeros(width),
            });
            fan_in = width;
        }
        let output_map = glorot(&mut rng, experts, fan_in);
        Ok(GatingNetwork { layers, output_map })
    }

    /// Build from explicit parameters, checking that dimensions chain.
    pub fn from_parts(layers: Vec<DenseLayer>, output_map: Array2<f64>) -> Result<Self> {
        let mut width = layers
            .first()
            .map(DenseLayer::inputs)
            .unwrap_or(output_map.ncols());
        for l in &layers {
            if l.inputs() != width || l.bias.len() != l.outputs() {
                return Err(DcsmError::DimensionMismatch {
                    expected: width,
                    got: l.inputs(),
                });
            }
            width = l.outputs();
        }
        if output_map.ncols() != width {
            return Err(DcsmError::DimensionMismatch {
                expected: width,
                got: output_map.ncols(),
            });
        }
        Ok(GatingNetwork { layers, output_map })
    }

    pub fn input_dim(&self) -> usize {
        self.layers
            .first()
            .map(DenseLayer::inputs)
            .unwrap_or(self.output_map.ncols())
    }

    pub fn hidden(&self) -> Vec<usize> {
        self.layers.iter().map(DenseLayer::outputs).collect()
    }

    pub fn experts(&self) -> usize {
        self.output_map.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum::<usize>()
            + self.output_map.len()
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .map(|l| l.weights.dim())
            .chain(std::iter::once(self.output_map.dim()))
            .collect()
    }

    pub fn flatten(&self) -> ParameterVector {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            v.extend(l.weights.iter());
            v.extend(l.bias.iter());
        }
        v.extend(self.output_map.iter());
        ParameterVector(v)
    }

    /// Overwrite parameters from a flat vector in [`ParameterVector`] order.
    pub fn unflatten(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(DcsmError::DimensionMismatch {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .for_each(|w| *w = it.next().expect("length checked"));
            l.bias
                .iter_mut()
                .for_each(|b| *b = it.next().expect("length checked"));
        }
        self.output_map
            .iter_mut()
            .for_each(|w| *w = it.next().expect("length checked"));
        Ok(())
    }

    /// Batch forward pass; rows of `x` are instances.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        if x.ncols() != self.input_dim() {
            return Err(DcsmError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let h = post.last().map(|p| p.view()).unwrap_or(x);
            let z = h.dot(&l.weights.t()) + &l.bias;
            post.push(z.mapv(|v| v.max(0.0)));
            pre.push(z);
        }
        let rep = post.last().map(|p| p.view()).unwrap_or(x);
        let logits = rep.dot(&self.output_map.t());
        Ok((
            logits,
            ForwardCache {
                input: x.to_owned(),
                pre,
                post,
                shapes: self.shapes(),
            },
        ))
    }

    /// Logits for a single instance.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| DcsmError::InvalidData(e.to_string()))?;
        Ok(self.forward(view)?.0.into_raw_vec_and_offset().0)
    }

    /// Reverse pass: gradient of a loss with respect to every parameter given
    /// `∂loss/∂logits` for the cached batch. The rectifier derivative at
    /// exactly zero is taken as zero.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_logits: ArrayView2<f64>,
    ) -> Result<ParameterVector> {
        if cache.shapes != self.shapes() {
            return Err(DcsmError::InvalidData(
                "forward cache does not match this network".into(),
            ));
        }
        if d_logits.dim() != (cache.batch_len(), self.experts()) {
            return Err(DcsmError::InvalidData(format!(
                "logit gradient has shape {:?}, expected {:?}",
                d_logits.dim(),
                (cache.batch_len(), self.experts())
            )));
        }
        let rep = cache.post.last().unwrap_or(&cache.input);
        let g_out = d_logits.t().dot(rep);
        let mut delta = d_logits.dot(&self.output_map);

        let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate().rev() {
            ndarray::Zip::from(&mut delta)
                .and(&cache.pre[i])
                .for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0
                    }
                });
            let h_prev = if i == 0 {
                &cache.input
            } else {
                &cache.post[i - 1]
            };
            let g_w = delta.t().dot(h_prev);
            let g_b = delta.sum_axis(Axis(0));
            if i > 0 {
                delta = delta.dot(&l.weights);
            }
            grads.push((g_w, g_b));
        }
        grads.reverse();

        let mut v = Vec::with_capacity(self.param_count());
        for (g_w, g_b) in &grads {
            v.extend(g_w.iter());
            v.extend(g_b.iter());
        }
        v.extend(g_out.iter());
        Ok(ParameterVector(v))
    }
}

/// Numerically stable softmax (max subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Row-wise softmax of a `batch × K` matrix.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.outer_iter_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|l| (l - m).exp());
        let total = row.sum();
        row.mapv_inplace(|e| e / total);
    }
    out
}
