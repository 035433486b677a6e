//! Fully connected ReLU networks with a single pre-activation output:
//! initialisation, forward evaluation, losses with exact gradients, and
//! thresholding to binary functions.

use nalgebra::{DMatrix, DVector};

use crate::data::LabelledDataset;
use crate::error::{Error, Result};
use crate::funcspace::BinaryFunction;
use crate::rng::{self, Prng};

/// Parameter initialisation scheme.
///
/// Both draw weights from an i.i.d. Gaussian truncated at two standard
/// deviations (resampling), with per-weight deviation `sigma_w / sqrt(fan_in)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// Training initialisation: biases exactly zero.
    TrainInit { sigma_w: f64 },
    /// GP-prior convention: biases drawn with a small deviation, by default
    /// `0.1 * sigma_w`.
    PriorInit { sigma_w: f64, sigma_b: f64 },
}

impl InitScheme {
    pub fn train() -> Self {
        InitScheme::TrainInit { sigma_w: 1.0 }
    }

    pub fn prior(sigma_w: f64) -> Self {
        InitScheme::PriorInit {
            sigma_w,
            sigma_b: 0.1 * sigma_w,
        }
    }

    pub fn sigma_w(&self) -> f64 {
        match *self {
            InitScheme::TrainInit { sigma_w } => sigma_w,
            InitScheme::PriorInit { sigma_w, .. } => sigma_w,
        }
    }

    pub fn sigma_b(&self) -> f64 {
        match *self {
            InitScheme::TrainInit { .. } => 0.0,
            InitScheme::PriorInit { sigma_b, .. } => sigma_b,
        }
    }
}

/// Architecture description: `layer_widths` runs input dim, hidden widths,
/// then the single output.
#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub layer_widths: Vec<usize>,
    pub init: InitScheme,
}

impl NetConfig {
    pub fn new(layer_widths: Vec<usize>, init: InitScheme) -> Result<Self> {
        if layer_widths.len() < 3 {
            return Err(Error::BadNetConfig(
                "need input, at least one hidden layer, and the output".into(),
            ));
        }
        Self::validate_common(layer_widths, init)
    }

    /// Degenerate affine network (no hidden layer): a single linear unit.
    /// Outside the main experiments; used for analytically tractable
    /// sanity systems.
    pub fn linear(input_dim: usize, init: InitScheme) -> Result<Self> {
        Self::validate_common(vec![input_dim, 1], init)
    }

    fn validate_common(layer_widths: Vec<usize>, init: InitScheme) -> Result<Self> {
        if *layer_widths.last().unwrap() != 1 {
            return Err(Error::BadNetConfig("final width must be 1".into()));
        }
        if layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::BadNetConfig("zero-width layer".into()));
        }
        if init.sigma_w() <= 0.0 {
            return Err(Error::BadNetConfig("sigma_w must be positive".into()));
        }
        if init.sigma_b() < 0.0 {
            return Err(Error::BadNetConfig("sigma_b must be non-negative".into()));
        }
        Ok(NetConfig { layer_widths, init })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// out x in weight matrix.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Concrete parameter values; shapes always consistent with the generating
/// [`NetConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    pub layers: Vec<Layer>,
}

impl NetParams {
    pub fn zeros(config: &NetConfig) -> Self {
        let layers = (0..config.n_layers())
            .map(|l| Layer {
                w: DMatrix::zeros(config.layer_widths[l + 1], config.layer_widths[l]),
                b: DVector::zeros(config.layer_widths[l + 1]),
            })
            .collect();
        NetParams { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().all(|v| v.is_finite()) && l.b.iter().all(|v| v.is_finite()))
    }

    /// Flat binary checkpoint: shape header then row-major reals per layer.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for layer in &self.layers {
            out.extend_from_slice(&(layer.w.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(layer.w.ncols() as u32).to_le_bytes());
        }
        for layer in &self.layers {
            for i in 0..layer.w.nrows() {
                for j in 0..layer.w.ncols() {
                    out.extend_from_slice(&layer.w[(i, j)].to_le_bytes());
                }
            }
            for i in 0..layer.b.len() {
                out.extend_from_slice(&layer.b[i].to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if bytes.len() < *pos + n {
                return Err(Error::Other("truncated parameter checkpoint".into()));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let n_layers = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut shapes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let rows = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let cols = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            shapes.push((rows, cols));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (rows, cols) in shapes {
            let mut w = DMatrix::zeros(rows, cols);
            for i in 0..rows {
                for j in 0..cols {
                    w[(i, j)] = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
                }
            }
            let mut b = DVector::zeros(rows);
            for i in 0..rows {
                b[i] = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            }
            layers.push(Layer { w, b });
        }
        Ok(NetParams { layers })
    }
}

/// Truncation bound, in standard deviations, for both init schemes.
pub const TRUNCATION_SIGMAS: f64 = 2.0;

/// Draw parameters for `config` deterministically from `seed`.
pub fn init_params(config: &NetConfig, seed: u64) -> NetParams {
    let mut rng = rng::rng_from_seed(seed);
    init_params_with_rng(config, &mut rng)
}

pub fn init_params_with_rng(config: &NetConfig, rng: &mut Prng) -> NetParams {
    let sigma_w = config.init.sigma_w();
    let sigma_b = config.init.sigma_b();
    let layers = (0..config.n_layers())
        .map(|l| {
            let fan_in = config.layer_widths[l];
            let fan_out = config.layer_widths[l + 1];
            let w_std = sigma_w / (fan_in as f64).sqrt();
            let mut w = DMatrix::zeros(fan_out, fan_in);
            for j in 0..fan_in {
                for i in 0..fan_out {
                    w[(i, j)] = w_std * rng::truncated_normal(rng, TRUNCATION_SIGMAS);
                }
            }
            let mut b = DVector::zeros(fan_out);
            if sigma_b > 0.0 {
                for i in 0..fan_out {
                    b[i] = sigma_b * rng::truncated_normal(rng, TRUNCATION_SIGMAS);
                }
            }
            Layer { w, b }
        })
        .collect();
    NetParams { layers }
}

/// Last-layer pre-activation for a single input.
pub fn forward(params: &NetParams, x: &[f64]) -> Result<f64> {
    if x.len() != params.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input has dimension {}, network expects {}",
            x.len(),
            params.input_dim()
        )));
    }
    let mut a = DVector::from_row_slice(x);
    let last = params.layers.len() - 1;
    for (l, layer) in params.layers.iter().enumerate() {
        let mut z = &layer.w * &a + &layer.b;
        if l != last {
            z.apply(|v| *v = v.max(0.0));
        }
        a = z;
    }
    Ok(a[0])
}

/// Pre-activations for a whole batch (rows of `x`).
pub fn forward_batch(params: &NetParams, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    if x.ncols() != params.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "batch has dimension {}, network expects {}",
            x.ncols(),
            params.input_dim()
        )));
    }
    let mut a = x.clone();
    let last = params.layers.len() - 1;
    for (l, layer) in params.layers.iter().enumerate() {
        let mut z = &a * layer.w.transpose();
        for i in 0..z.nrows() {
            for j in 0..z.ncols() {
                z[(i, j)] += layer.b[j];
            }
        }
        if l != last {
            z.apply(|v| *v = v.max(0.0));
        }
        a = z;
    }
    Ok(a.column(0).into_owned())
}

/// Positive pre-activations output 1, non-positive output 0.
pub fn threshold(z: f64) -> Result<u8> {
    if !z.is_finite() {
        return Err(Error::NonFinite(format!("threshold input {z}")));
    }
    Ok(if z > 0.0 { 1 } else { 0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    /// Mean squared error against targets in {-1, 1}.
    Mse,
    /// Binary cross-entropy of the logistic of the logit against {0, 1}.
    Ce,
}

/// Gradient of a loss with the parameter shape.
pub type Gradient = NetParams;

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean loss over the batch and its exact gradient via backpropagation.
pub fn loss_and_grad(
    params: &NetParams,
    inputs: &DMatrix<f64>,
    labels: &[u8],
    loss: Loss,
) -> Result<(f64, Gradient)> {
    let batch = inputs.nrows();
    if batch == 0 {
        return Err(Error::DimensionMismatch("empty batch".into()));
    }
    if labels.len() != batch {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {batch} rows",
            labels.len()
        )));
    }
    if inputs.ncols() != params.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "batch has dimension {}, network expects {}",
            inputs.ncols(),
            params.input_dim()
        )));
    }

    let n_layers = params.layers.len();
    // Forward pass keeping activations; activations[l] feeds layer l.
    let mut activations: Vec<DMatrix<f64>> = Vec::with_capacity(n_layers + 1);
    activations.push(inputs.clone());
    for (l, layer) in params.layers.iter().enumerate() {
        let mut z = activations.last().unwrap() * layer.w.transpose();
        for i in 0..z.nrows() {
            for j in 0..z.ncols() {
                z[(i, j)] += layer.b[j];
            }
        }
        if l != n_layers - 1 {
            z.apply(|v| *v = v.max(0.0));
        }
        activations.push(z);
    }

    let outputs = activations.last().unwrap().column(0);
    let inv_b = 1.0 / batch as f64;
    let mut loss_value = 0.0;
    let mut delta = DMatrix::zeros(batch, 1);
    for i in 0..batch {
        let z = outputs[i];
        match loss {
            Loss::Mse => {
                let t = 2.0 * labels[i] as f64 - 1.0;
                loss_value += (z - t) * (z - t) * inv_b;
                delta[(i, 0)] = 2.0 * (z - t) * inv_b;
            }
            Loss::Ce => {
                let y = labels[i] as f64;
                loss_value += (softplus(z) - y * z) * inv_b;
                delta[(i, 0)] = (sigmoid(z) - y) * inv_b;
            }
        }
    }

    // Backward pass.
    let mut grad = NetParams {
        layers: params
            .layers
            .iter()
            .map(|l| Layer {
                w: DMatrix::zeros(l.w.nrows(), l.w.ncols()),
                b: DVector::zeros(l.b.len()),
            })
            .collect(),
    };
    let mut d = delta;
    for l in (0..n_layers).rev() {
        grad.layers[l].w = d.transpose() * &activations[l];
        for j in 0..d.ncols() {
            grad.layers[l].b[j] = d.column(j).sum();
        }
        if l > 0 {
            let mut back = &d * &params.layers[l].w;
            // ReLU mask from the stored (post-activation) values.
            for i in 0..back.nrows() {
                for j in 0..back.ncols() {
                    if activations[l][(i, j)] <= 0.0 {
                        back[(i, j)] = 0.0;
                    }
                }
            }
            d = back;
        }
    }
    Ok((loss_value, grad))
}

/// Classification accuracy of thresholded outputs on a labelled dataset.
pub fn train_errors(params: &NetParams, ds: &LabelledDataset) -> Result<usize> {
    let outputs = forward_batch(params, ds.inputs())?;
    let labels = ds.labels()?;
    let mut errors = 0;
    for i in 0..labels.len() {
        if threshold(outputs[i])? != labels[i] {
            errors += 1;
        }
    }
    Ok(errors)
}

/// The binary function expressed on the test inputs, in stored order.
pub fn evaluate_function(params: &NetParams, test: &LabelledDataset) -> Result<BinaryFunction> {
    let outputs = forward_batch(params, test.inputs())?;
    let mut bits = Vec::with_capacity(outputs.len());
    for i in 0..outputs.len() {
        bits.push(threshold(outputs[i])?);
    }
    Ok(BinaryFunction::from_bits(&bits))
}
