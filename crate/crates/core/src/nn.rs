//! Small fully-connected networks with hand-written reverse-mode
//! differentiation, plain SGD, and soft target updates.
//!
//! Everything is `f64` and batch-first: a batch is an `(n, dim)` matrix and
//! the three matrix products of backprop run through ndarray's GEMM. The
//! module also provides a central finite-difference checker used both by the
//! test suite and the `gradcheck` CLI subcommand.

use std::io::{self, BufRead, Write};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, RngCore};
use thiserror::Error;

/// `a · b` into a freshly allocated row-major array. ndarray's `dot` infers
/// the output layout from its inputs — a degenerate inner dimension yields a
/// column-major result — while the rest of this module hands out activations
/// and gradients whose rows are contiguous.
fn gemm(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    general_mat_mul(1.0, &a, &b, 0.0, &mut out);
    out
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("network needs at least one layer")]
    EmptyArchitecture,
    #[error("layer dimensions must be at least 1")]
    ZeroLayerDim,
    #[error("{what}: expected {expected}, got {got}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("architectures differ: {0}")]
    ArchMismatch(String),
    #[error("learning rate must be positive and finite, got {0}")]
    BadLearningRate(f64),
    #[error("soft-update rate must lie in [0, 1], got {0}")]
    BadRate(f64),
    #[error("probe count {requested} exceeds parameter count {available}")]
    BadProbeCount { requested: usize, available: usize },
    #[error("finite-difference check could not complete any probe")]
    DegenerateFdCheck,
    #[error("malformed snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's own output, which is
    /// all backprop needs for these three functions.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// One dense layer: `a = act(x · Wᵀ + b)` with `W` stored `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

/// Per-layer parameter gradients, in the same shapes as the layer itself.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

/// Gradients for a whole network, one entry per layer in forward order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGrad>,
}

impl GradientSet {
    /// Flat read access in canonical order (per layer: weights row-major,
    /// then biases), matching [`Mlp::param_mut`] indexing.
    pub(crate) fn param(&self, mut idx: usize) -> Option<f64> {
        for layer in &self.layers {
            let w = layer.weights.len();
            if idx < w {
                // Logical (row-major) order, independent of memory layout.
                return layer.weights.iter().nth(idx).copied();
            }
            idx -= w;
            if idx < layer.biases.len() {
                return Some(layer.biases[idx]);
            }
            idx -= layer.biases.len();
        }
        None
    }
}

/// Activations of every layer for one batch, with the input batch at index
/// zero; consumed by [`Mlp::backward_batch`].
pub struct ForwardCache {
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache holds the input at least")
    }
}

/// A multilayer perceptron: an input dimension plus a stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    input_dim: usize,
    layers: Vec<Layer>,
}

impl Mlp {
    /// Builds a network with uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`
    /// initialization for both weights and biases, drawn from `rng`.
    pub fn new(
        input_dim: usize,
        layer_specs: &[(usize, Activation)],
        rng: &mut dyn RngCore,
    ) -> Result<Self, NnError> {
        if layer_specs.is_empty() {
            return Err(NnError::EmptyArchitecture);
        }
        if input_dim == 0 || layer_specs.iter().any(|(n, _)| *n == 0) {
            return Err(NnError::ZeroLayerDim);
        }
        let mut layers = Vec::with_capacity(layer_specs.len());
        let mut fan_in = input_dim;
        for &(out, activation) in layer_specs {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weights =
                Array2::from_shape_fn((out, fan_in), |_| rng.random_range(-bound..bound));
            let biases = Array1::from_shape_fn(out, |_| rng.random_range(-bound..bound));
            layers.push(Layer {
                weights,
                biases,
                activation,
            });
            fan_in = out;
        }
        Ok(Self { input_dim, layers })
    }

    /// Assembles a network from explicit layers, validating that the
    /// dimensions chain. Used by tests and the snapshot loader.
    pub fn from_layers(input_dim: usize, layers: Vec<Layer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::EmptyArchitecture);
        }
        if input_dim == 0 {
            return Err(NnError::ZeroLayerDim);
        }
        let mut fan_in = input_dim;
        for layer in &layers {
            if layer.input_dim() != fan_in {
                return Err(NnError::DimMismatch {
                    what: "layer input dimension",
                    expected: fan_in,
                    got: layer.input_dim(),
                });
            }
            if layer.biases.len() != layer.output_dim() {
                return Err(NnError::DimMismatch {
                    what: "bias length",
                    expected: layer.output_dim(),
                    got: layer.biases.len(),
                });
            }
            fan_in = layer.output_dim();
        }
        Ok(Self { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Flat parameter write access in canonical order (per layer: weights
    /// row-major, then biases); the finite-difference checkers perturb
    /// parameters through this.
    pub(crate) fn param_mut(&mut self, mut idx: usize) -> Option<&mut f64> {
        for layer in &mut self.layers {
            let w = layer.weights.len();
            if idx < w {
                // Logical (row-major) order, independent of memory layout.
                return layer.weights.iter_mut().nth(idx);
            }
            idx -= w;
            if idx < layer.biases.len() {
                return Some(&mut layer.biases[idx]);
            }
            idx -= layer.biases.len();
        }
        None
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|_| NnError::ZeroLayerDim)?;
        let out = self.forward_batch(x)?;
        Ok(out.row(0).to_vec())
    }

    /// Batch forward pass over an `(n, input_dim)` matrix.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        Ok(self.run_forward(x)?.pop().expect("non-empty"))
    }

    /// Batch forward pass that keeps every layer's activations for a
    /// subsequent backward pass.
    pub fn forward_batch_cached(
        &self,
        x: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, ForwardCache), NnError> {
        let activations = self.run_forward(x)?;
        let output = activations.last().expect("non-empty").clone();
        Ok((output, ForwardCache { activations }))
    }

    fn run_forward(&self, x: ArrayView2<f64>) -> Result<Vec<Array2<f64>>, NnError> {
        if x.ncols() != self.input_dim {
            return Err(NnError::DimMismatch {
                what: "input dimension",
                expected: self.input_dim,
                got: x.ncols(),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_owned());
        for layer in &self.layers {
            let mut z = gemm(activations.last().expect("non-empty").view(), layer.weights.t());
            z += &layer.biases;
            z.mapv_inplace(|v| layer.activation.apply(v));
            activations.push(z);
        }
        Ok(activations)
    }

    /// Single-sample forward that also records the on/off pattern of every
    /// relu unit; the finite-difference checkers compare patterns to detect
    /// probes that straddle a kink.
    pub(crate) fn forward_pattern(&self, input: &[f64]) -> Result<(Vec<f64>, Vec<bool>), NnError> {
        if input.len() != self.input_dim {
            return Err(NnError::DimMismatch {
                what: "input dimension",
                expected: self.input_dim,
                got: input.len(),
            });
        }
        let mut a: Vec<f64> = input.to_vec();
        let mut pattern = Vec::new();
        for layer in &self.layers {
            let mut next = vec![0.0; layer.output_dim()];
            for (o, (row, b)) in layer
                .weights
                .rows()
                .into_iter()
                .zip(layer.biases.iter())
                .enumerate()
            {
                let z: f64 = row.iter().zip(a.iter()).map(|(w, x)| w * x).sum::<f64>() + b;
                next[o] = layer.activation.apply(z);
                if layer.activation == Activation::Relu {
                    pattern.push(z > 0.0);
                }
            }
            a = next;
        }
        Ok((a, pattern))
    }

    /// Gradient of the scalar `output · output_gradient` with respect to
    /// every parameter, for a single input.
    pub fn backward(
        &self,
        input: &[f64],
        output_gradient: &[f64],
    ) -> Result<GradientSet, NnError> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|_| NnError::ZeroLayerDim)?;
        let g = ArrayView2::from_shape((1, output_gradient.len()), output_gradient)
            .map_err(|_| NnError::ZeroLayerDim)?;
        let (_, cache) = self.forward_batch_cached(x)?;
        let (grads, _) = self.backward_batch(&cache, g)?;
        Ok(grads)
    }

    /// Batch reverse-mode pass. `output_grads` holds the gradient of the
    /// scalar objective with respect to the network output, one row per
    /// sample; the result sums parameter gradients over the batch and also
    /// returns the gradient with respect to the input batch.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        output_grads: ArrayView2<f64>,
    ) -> Result<(GradientSet, Array2<f64>), NnError> {
        let out = cache.output();
        if output_grads.shape() != out.shape() {
            return Err(NnError::DimMismatch {
                what: "output gradient columns",
                expected: out.ncols(),
                got: output_grads.ncols(),
            });
        }
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(NnError::ArchMismatch(
                "forward cache does not match this network".into(),
            ));
        }

        let mut g = output_grads.to_owned();
        let mut grads = vec![None; self.layers.len()];
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let a = &cache.activations[l + 1];
            if layer.activation != Activation::Identity {
                g.zip_mut_with(a, |gv, av| {
                    *gv *= layer.activation.derivative_from_output(*av)
                });
            }
            let weights = gemm(g.t(), cache.activations[l].view());
            let biases = g.sum_axis(Axis(0));
            grads[l] = Some(LayerGrad { weights, biases });
            g = gemm(g.view(), layer.weights.view());
        }
        let layers = grads.into_iter().map(|g| g.expect("filled")).collect();
        Ok((GradientSet { layers }, g))
    }

    /// Plain gradient descent: `theta <- theta - lr * grad`.
    pub fn sgd_update(&mut self, grads: &GradientSet, lr: f64) -> Result<(), NnError> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(NnError::BadLearningRate(lr));
        }
        self.check_same_shape(grads)?;
        for (layer, grad) in self.layers.iter_mut().zip(&grads.layers) {
            layer.weights.scaled_add(-lr, &grad.weights);
            layer.biases.scaled_add(-lr, &grad.biases);
        }
        Ok(())
    }

    fn check_same_shape(&self, grads: &GradientSet) -> Result<(), NnError> {
        if grads.layers.len() != self.layers.len() {
            return Err(NnError::ArchMismatch("layer count differs".into()));
        }
        for (layer, grad) in self.layers.iter().zip(&grads.layers) {
            if layer.weights.shape() != grad.weights.shape()
                || layer.biases.len() != grad.biases.len()
            {
                return Err(NnError::ArchMismatch("gradient shapes differ".into()));
            }
        }
        Ok(())
    }

    /// Polyak averaging toward `online`:
    /// `theta <- rate * online + (1 - rate) * theta`.
    pub fn soft_update(&mut self, online: &Mlp, rate: f64) -> Result<(), NnError> {
        if !(0.0..=1.0).contains(&rate) || rate.is_nan() {
            return Err(NnError::BadRate(rate));
        }
        if self.input_dim != online.input_dim || self.layers.len() != online.layers.len() {
            return Err(NnError::ArchMismatch("networks differ".into()));
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            if t.weights.shape() != o.weights.shape() || t.activation != o.activation {
                return Err(NnError::ArchMismatch("layer shapes differ".into()));
            }
            t.weights
                .zip_mut_with(&o.weights, |tv, ov| *tv = rate * ov + (1.0 - rate) * *tv);
            t.biases
                .zip_mut_with(&o.biases, |tv, ov| *tv = rate * ov + (1.0 - rate) * *tv);
        }
        Ok(())
    }

    /// Central finite-difference verification of [`Mlp::backward`].
    ///
    /// Checks `probe_count` randomly chosen parameters of the scalar
    /// `g · forward(input)` for a fixed random direction `g`, with step
    /// `h = 1e-5`, and returns the worst relative error
    /// `|fd - analytic| / max(|fd| + |analytic|, 1e-5)`. Probes whose
    /// two-sided evaluations land on different relu branches than the
    /// unperturbed pass are redrawn, since the analytic derivative is only
    /// defined on a fixed branch.
    pub fn finite_diff_check(
        &self,
        input: &[f64],
        probe_count: usize,
        rng: &mut dyn RngCore,
    ) -> Result<f64, NnError> {
        const H: f64 = 1e-5;
        let total = self.param_count();
        if probe_count == 0 || probe_count > total {
            return Err(NnError::BadProbeCount {
                requested: probe_count,
                available: total,
            });
        }

        let direction: Vec<f64> = (0..self.output_dim())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let analytic = self.backward(input, &direction)?;
        let (_, base_pattern) = self.forward_pattern(input)?;

        let scalar = |net: &Mlp| -> Result<(f64, Vec<bool>), NnError> {
            let (out, pattern) = net.forward_pattern(input)?;
            let value = out.iter().zip(&direction).map(|(o, d)| o * d).sum();
            Ok((value, pattern))
        };

        let mut max_rel = 0.0_f64;
        let mut completed = 0usize;
        for _ in 0..probe_count {
            // Redraw up to a fixed number of times if the probe straddles a
            // relu kink; parameters that keep flipping are skipped.
            let mut done = false;
            for _ in 0..32 {
                let idx = rng.random_range(0..total);
                let mut plus = self.clone();
                *plus.param_mut(idx).expect("idx < total") += H;
                let mut minus = self.clone();
                *minus.param_mut(idx).expect("idx < total") -= H;
                let (f_plus, p_plus) = scalar(&plus)?;
                let (f_minus, p_minus) = scalar(&minus)?;
                if p_plus != base_pattern || p_minus != base_pattern {
                    continue;
                }
                let fd = (f_plus - f_minus) / (2.0 * H);
                let an = analytic.param(idx).expect("idx < total");
                let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-5);
                max_rel = max_rel.max(rel);
                completed += 1;
                done = true;
                break;
            }
            let _ = done;
        }
        if completed == 0 {
            return Err(NnError::DegenerateFdCheck);
        }
        Ok(max_rel)
    }

    /// Writes a plain-text snapshot. `f64` values are formatted with the
    /// shortest representation that round-trips, so `load_snapshot` restores
    /// parameters bit for bit.
    pub fn save_snapshot(&self, w: &mut dyn Write) -> Result<(), NnError> {
        writeln!(w, "mlp v1")?;
        writeln!(w, "input_dim {}", self.input_dim)?;
        writeln!(w, "layers {}", self.layers.len())?;
        for layer in &self.layers {
            writeln!(
                w,
                "layer {} {} {}",
                layer.output_dim(),
                layer.input_dim(),
                layer.activation.name()
            )?;
            let ws: Vec<String> = layer.weights.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", ws.join(" "))?;
            let bs: Vec<String> = layer.biases.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", bs.join(" "))?;
        }
        Ok(())
    }

    /// Parses a snapshot produced by [`Mlp::save_snapshot`].
    pub fn load_snapshot(r: &mut dyn BufRead) -> Result<Self, NnError> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let mut cursor = SnapshotCursor { tokens, pos: 0 };

        cursor.expect("mlp")?;
        cursor.expect("v1")?;
        cursor.expect("input_dim")?;
        let input_dim = cursor.next_usize("input_dim")?;
        cursor.expect("layers")?;
        let layer_count = cursor.next_usize("layer count")?;

        let mut layers = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            cursor.expect("layer")?;
            let out = cursor.next_usize("layer output dim")?;
            let inp = cursor.next_usize("layer input dim")?;
            let activation = cursor
                .next("activation")
                .ok()
                .and_then(Activation::from_name)
                .ok_or_else(|| NnError::Snapshot("bad activation".into()))?;
            let mut wdata = Vec::with_capacity(out * inp);
            for _ in 0..out * inp {
                wdata.push(cursor.next_f64("weight")?);
            }
            let mut bdata = Vec::with_capacity(out);
            for _ in 0..out {
                bdata.push(cursor.next_f64("bias")?);
            }
            let weights = Array2::from_shape_vec((out, inp), wdata)
                .map_err(|e| NnError::Snapshot(e.to_string()))?;
            layers.push(Layer {
                weights,
                biases: Array1::from_vec(bdata),
                activation,
            });
        }
        if cursor.pos != cursor.tokens.len() {
            return Err(NnError::Snapshot("trailing data".into()));
        }
        Mlp::from_layers(input_dim, layers)
    }
}

struct SnapshotCursor<'a> {
    tokens: Vec<&'a str>,
    pos: usize,
}

impl<'a> SnapshotCursor<'a> {
    fn next(&mut self, what: &str) -> Result<&'a str, NnError> {
        let t = self
            .tokens
            .get(self.pos)
            .ok_or_else(|| NnError::Snapshot(format!("missing {what}")))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, want: &str) -> Result<(), NnError> {
        let t = self.next(want)?;
        if t == want {
            Ok(())
        } else {
            Err(NnError::Snapshot(format!("expected '{want}', found '{t}'")))
        }
    }

    fn next_usize(&mut self, what: &str) -> Result<usize, NnError> {
        self.next(what)?
            .parse()
            .map_err(|_| NnError::Snapshot(format!("bad {what}")))
    }

    fn next_f64(&mut self, what: &str) -> Result<f64, NnError> {
        let v: f64 = self
            .next(what)?
            .parse()
            .map_err(|_| NnError::Snapshot(format!("bad {what}")))?;
        if !v.is_finite() {
            return Err(NnError::Snapshot(format!("non-finite {what}")));
        }
        Ok(v)
    }
}
