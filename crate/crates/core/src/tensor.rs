//! Dense MLP kernel: batched forward evaluation with a tape, reverse-mode
//! parameter/input gradients, double backprop for the input-gradient-norm
//! penalty, and a bias-corrected Adam update.
//!
//! Batches are row-major `batch x width` matrices. A layer maps
//! `z = a W^T + b`; hidden layers apply Elu, the last layer applies the
//! network's [`OutputActivation`].

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    Linear,
    Sigmoid,
    /// Two output columns: column 0 is linear, column 1 is a sigmoid.
    LinearSigmoidHeads,
}

impl OutputActivation {
    pub fn name(self) -> &'static str {
        match self {
            OutputActivation::Linear => "linear",
            OutputActivation::Sigmoid => "sigmoid",
            OutputActivation::LinearSigmoidHeads => "linear-sigmoid-heads",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(OutputActivation::Linear),
            "sigmoid" => Some(OutputActivation::Sigmoid),
            "linear-sigmoid-heads" => Some(OutputActivation::LinearSigmoidHeads),
            _ => None,
        }
    }
}

#[inline]
pub fn elu(z: f64, alpha: f64) -> f64 {
    if z >= 0.0 {
        z
    } else {
        alpha * z.exp_m1()
    }
}

#[inline]
pub fn elu_d1(z: f64, alpha: f64) -> f64 {
    if z >= 0.0 {
        1.0
    } else {
        alpha * z.exp()
    }
}

/// Second derivative of Elu; the value at exactly 0 is the right limit.
#[inline]
pub fn elu_d2(z: f64, alpha: f64) -> f64 {
    if z >= 0.0 {
        0.0
    } else {
        alpha * z.exp()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One affine layer. `weight` is `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer {
            weight: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub elu_alpha: f64,
    pub output: OutputActivation,
}

impl MlpParams {
    /// All-zero network with the given layer widths (input first, output last).
    pub fn zeros(widths: &[usize], elu_alpha: f64, output: OutputActivation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Shape("an MLP needs at least input and output widths".into()));
        }
        let layers = widths.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        let params = MlpParams {
            layers,
            elu_alpha,
            output,
        };
        params.validate()?;
        Ok(params)
    }

    /// Fan-scaled uniform initialization, `U(-sqrt(6/(in+out)), +sqrt(6/(in+out)))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        widths: &[usize],
        elu_alpha: f64,
        output: OutputActivation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut params = Self::zeros(widths, elu_alpha, output)?;
        for layer in &mut params.layers {
            let limit = (6.0 / (layer.fan_in() + layer.fan_out()) as f64).sqrt();
            layer
                .weight
                .iter_mut()
                .for_each(|w| *w = rng.gen_range(-limit..limit));
        }
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        if !(self.elu_alpha > 0.0 && self.elu_alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "elu alpha must be positive, got {}",
                self.elu_alpha
            )));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::Shape(format!(
                    "layer {} outputs {} but layer {} expects {}",
                    i,
                    pair[0].fan_out(),
                    i + 1,
                    pair[1].fan_in()
                )));
            }
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.fan_out() {
                return Err(Error::Shape(format!("layer {i} bias length mismatch")));
            }
        }
        if self.output == OutputActivation::LinearSigmoidHeads && self.output_dim() != 2 {
            return Err(Error::Shape(format!(
                "two-head output needs width 2, got {}",
                self.output_dim()
            )));
        }
        if !self.is_finite() {
            return Err(Error::InvalidParameter("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    /// Layer widths, input first.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::fan_out))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }

    /// Parameters flattened layer by layer: row-major weight, then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            out.extend(layer.weight.iter().copied());
            out.extend(layer.bias.iter().copied());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        for layer in &mut self.layers {
            layer.weight.iter_mut().for_each(|w| *w = it.next().unwrap());
            layer.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }

    fn apply_output(&self, z: &Array2<f64>) -> Array2<f64> {
        let mut out = z.clone();
        match self.output {
            OutputActivation::Linear => {}
            OutputActivation::Sigmoid => out.mapv_inplace(sigmoid),
            OutputActivation::LinearSigmoidHeads => {
                out.column_mut(1).mapv_inplace(sigmoid);
            }
        }
        out
    }

    /// Multiply `upstream` (w.r.t. the activated output) by the output activation derivative.
    fn output_backward(&self, output: &Array2<f64>, upstream: ArrayView2<f64>) -> Array2<f64> {
        let mut dz = upstream.to_owned();
        match self.output {
            OutputActivation::Linear => {}
            OutputActivation::Sigmoid => {
                Zip::from(&mut dz)
                    .and(output)
                    .for_each(|d, &s| *d *= s * (1.0 - s));
            }
            OutputActivation::LinearSigmoidHeads => {
                Zip::from(dz.column_mut(1))
                    .and(output.column(1))
                    .for_each(|d, &s| *d *= s * (1.0 - s));
            }
        }
        dz
    }

    /// Batched forward pass. Rows of `input` are examples.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Tape> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects input width {}, got {}",
                self.input_dim(),
                input.ncols()
            )));
        }
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        activations.push(input.to_owned());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = activations[k].dot(&layer.weight.t());
            z += &layer.bias;
            let a = if k == last {
                self.apply_output(&z)
            } else {
                let alpha = self.elu_alpha;
                z.mapv(|v| elu(v, alpha))
            };
            pre.push(z);
            activations.push(a);
        }
        Ok(Tape { activations, pre })
    }

    /// Reverse pass for `sum_i upstream_i . output_i`.
    pub fn backward(&self, tape: &Tape, upstream: ArrayView2<f64>) -> Result<GradBundle> {
        self.check_tape(tape)?;
        let output = tape.output();
        if upstream.dim() != output.dim() {
            return Err(Error::Shape(format!(
                "upstream has shape {:?}, output has {:?}",
                upstream.dim(),
                output.dim()
            )));
        }
        let value = (&upstream * output).sum();
        let alpha = self.elu_alpha;
        let mut grads = ParamGrads::zeros_like(self);
        let mut dz = self.output_backward(output, upstream);
        for k in (0..self.layers.len()).rev() {
            let a_in = &tape.activations[k];
            grads.layers[k].weight = dz.t().dot(a_in);
            grads.layers[k].bias = dz.sum_axis(Axis(0));
            let da = dz.dot(&self.layers[k].weight);
            if k == 0 {
                return Ok(GradBundle {
                    param_grads: grads,
                    input_grad: da,
                    value,
                });
            }
            let z_prev = &tape.pre[k - 1];
            dz = da;
            Zip::from(&mut dz)
                .and(z_prev)
                .for_each(|d, &z| *d *= elu_d1(z, alpha));
        }
        unreachable!("network has at least one layer")
    }

    /// Gradient w.r.t. parameters of
    /// `sum_i [value_weight * D(u_i) + penalty_weight * (||mask . grad_u D(u_i)||_2 - 1)^2]`
    /// for a scalar linear-output network, by differentiating through the
    /// input-gradient computation. `mask[j]` selects which input coordinates
    /// enter the norm. Where the masked norm is exactly zero the penalty
    /// contributes a zero subgradient.
    pub fn penalty_backward(
        &self,
        tape: &Tape,
        mask: &[bool],
        value_weight: f64,
        penalty_weight: f64,
    ) -> Result<PenaltyEval> {
        self.check_tape(tape)?;
        if self.output != OutputActivation::Linear || self.output_dim() != 1 {
            return Err(Error::Shape(
                "penalty requires a scalar linear-output network".into(),
            ));
        }
        if mask.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "mask width {} does not match input width {}",
                mask.len(),
                self.input_dim()
            )));
        }
        let n_layers = self.layers.len();
        let batch = tape.activations[0].nrows();
        let alpha = self.elu_alpha;

        // Elu derivatives at each hidden pre-activation.
        let d1: Vec<Array2<f64>> = tape.pre[..n_layers - 1]
            .iter()
            .map(|z| z.mapv(|v| elu_d1(v, alpha)))
            .collect();
        let d2: Vec<Array2<f64>> = tape.pre[..n_layers - 1]
            .iter()
            .map(|z| z.mapv(|v| elu_d2(v, alpha)))
            .collect();

        // First-order pass: e[k] = dD/dz_k, g[k] = dD/da_k.
        let mut e: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); n_layers];
        let mut g: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); n_layers];
        e[n_layers - 1] = Array2::ones((batch, 1));
        for k in (0..n_layers).rev() {
            g[k] = e[k].dot(&self.layers[k].weight);
            if k > 0 {
                e[k - 1] = &g[k] * &d1[k - 1];
            }
        }

        let input_grad = &g[0];
        let mut penalties = Array1::zeros(batch);
        let mut grad_norms = Array1::zeros(batch);
        let mut gbar = Array2::zeros(input_grad.raw_dim());
        for i in 0..batch {
            let row = input_grad.row(i);
            let norm = row
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(v, _)| v * v)
                .sum::<f64>()
                .sqrt();
            grad_norms[i] = norm;
            penalties[i] = (norm - 1.0) * (norm - 1.0);
            if norm > 0.0 {
                let scale = penalty_weight * 2.0 * (norm - 1.0) / norm;
                for (j, &m) in mask.iter().enumerate() {
                    if m {
                        gbar[[i, j]] = scale * row[j];
                    }
                }
            }
        }

        let mut grads = ParamGrads::zeros_like(self);
        // Reverse of the first-order pass, walking layers input to output.
        let mut zbar: Vec<Array2<f64>> = Vec::with_capacity(n_layers - 1);
        for k in 0..n_layers {
            grads.layers[k].weight += &e[k].t().dot(&gbar);
            if k + 1 < n_layers {
                let ebar = gbar.dot(&self.layers[k].weight.t());
                let mut zb = &ebar * &g[k + 1];
                zb *= &d2[k];
                zbar.push(zb);
                gbar = ebar * &d1[k];
            }
        }

        // Reverse of the forward pass, seeded by the value term at the output
        // and the second-order terms at each hidden pre-activation.
        let mut dz = Array2::from_elem((batch, 1), value_weight);
        for k in (0..n_layers).rev() {
            grads.layers[k].weight += &dz.t().dot(&tape.activations[k]);
            grads.layers[k].bias += &dz.sum_axis(Axis(0));
            if k > 0 {
                let da = dz.dot(&self.layers[k].weight);
                dz = da * &d1[k - 1];
                dz += &zbar[k - 1];
            }
        }

        Ok(PenaltyEval {
            grads,
            values: tape.output().column(0).to_owned(),
            penalties,
            grad_norms,
            input_grad: g.swap_remove(0),
        })
    }

    fn check_tape(&self, tape: &Tape) -> Result<()> {
        let ok = tape.pre.len() == self.layers.len()
            && tape.activations.len() == self.layers.len() + 1
            && tape
                .pre
                .iter()
                .zip(&self.layers)
                .all(|(z, l)| z.ncols() == l.fan_out())
            && tape.activations[0].ncols() == self.input_dim();
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("tape does not match network shape".into()))
        }
    }
}

/// Cached activations of one forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    /// `activations[0]` is the input; `activations[k+1]` is the activated output of layer k.
    pub activations: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pub pre: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        &self.activations[self.activations.len() - 1]
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }
}

/// Per-parameter gradient (or moment) buffers shaped like an [`MlpParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<Layer>,
}

impl ParamGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        ParamGrads {
            layers: params
                .layers
                .iter()
                .map(|l| Layer::zeros(l.fan_in(), l.fan_out()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.bias *= factor;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    /// Flattened in the same order as [`MlpParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().collect()
    }

    fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
    }

    fn matches(&self, params: &MlpParams) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, p)| g.weight.dim() == p.weight.dim() && g.bias.len() == p.bias.len())
    }
}

#[derive(Clone, Debug)]
pub struct GradBundle {
    pub param_grads: ParamGrads,
    /// `batch x input_width`.
    pub input_grad: Array2<f64>,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct PenaltyEval {
    /// Summed over the batch.
    pub grads: ParamGrads,
    pub values: Array1<f64>,
    pub penalties: Array1<f64>,
    pub grad_norms: Array1<f64>,
    pub input_grad: Array2<f64>,
}

/// Forward pass on a single input vector.
pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
    let view = ArrayView2::from_shape((1, input.len()), input)
        .map_err(|e| Error::Shape(e.to_string()))?;
    let tape = params.forward_batch(view)?;
    let out = tape.output().row(0).to_vec();
    Ok((out, tape))
}

/// Gradients of `upstream * output` for a scalar-output network evaluated on one input.
pub fn backward_params(params: &MlpParams, tape: &Tape, upstream: f64) -> Result<GradBundle> {
    if params.output_dim() != 1 || tape.batch_size() != 1 {
        return Err(Error::Shape(
            "backward_params expects a scalar output on a single input".into(),
        ));
    }
    params.backward(tape, Array2::from_elem((1, 1), upstream).view())
}

/// Gradient of `P = (||mask . grad_u D(u)||_2 - 1)^2` w.r.t. the parameters of `D`.
/// The bundle's `value` is `P` and `input_grad` is `grad_u D(u)`.
pub fn grad_penalty_param_gradient(
    params: &MlpParams,
    input: &[f64],
    mask: &[bool],
) -> Result<GradBundle> {
    let (_, tape) = mlp_forward(params, input)?;
    let eval = params.penalty_backward(&tape, mask, 0.0, 1.0)?;
    Ok(GradBundle {
        param_grads: eval.grads,
        input_grad: eval.input_grad,
        value: eval.penalties[0],
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !(self.learning_rate > 0.0) || !beta_ok(self.beta1) || !beta_ok(self.beta2) {
            return Err(Error::InvalidParameter(format!(
                "adam requires lr > 0 and betas in [0,1): {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub first_moment: ParamGrads,
    pub second_moment: ParamGrads,
    pub step_count: u64,
}

impl OptimizerState {
    pub fn new(params: &MlpParams, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(OptimizerState {
            config,
            first_moment: ParamGrads::zeros_like(params),
            second_moment: ParamGrads::zeros_like(params),
            step_count: 0,
        })
    }

    /// In-place bias-corrected Adam step.
    pub fn step(&mut self, params: &mut MlpParams, grads: &ParamGrads) -> Result<()> {
        if !grads.matches(params) || !self.first_moment.matches(params) {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        self.step_count += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        };
        for (k, layer) in params.layers.iter_mut().enumerate() {
            let (m, v, g) = (
                &mut self.first_moment.layers[k],
                &mut self.second_moment.layers[k],
                &grads.layers[k],
            );
            Zip::from(&mut layer.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .and(&g.weight)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        Ok(())
    }
}

/// Functional form of [`OptimizerState::step`].
pub fn adam_update(
    state: &OptimizerState,
    params: &MlpParams,
    grads: &ParamGrads,
) -> Result<(OptimizerState, MlpParams)> {
    let mut state = state.clone();
    let mut params = params.clone();
    state.step(&mut params, grads)?;
    Ok((state, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear_single(weights: &[f64], bias: f64) -> MlpParams {
        let mut p = MlpParams::zeros(&[weights.len(), 1], 0.3, OutputActivation::Linear).unwrap();
        p.layers[0].weight.row_mut(0).assign(&Array1::from(weights.to_vec()));
        p.layers[0].bias[0] = bias;
        p
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpParams::zeros(&[3, 5, 1], 0.3, OutputActivation::Linear).unwrap();
        let (out, _) = mlp_forward(&p, &[0.3, -2.0, 7.0]).unwrap();
        assert_eq!(out, vec![0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut p = MlpParams::zeros(&[3, 3], 0.3, OutputActivation::Linear).unwrap();
        p.layers[0].weight = Array2::eye(3);
        let (out, _) = mlp_forward(&p, &[0.5, -1.5, 2.0]).unwrap();
        assert_eq!(out, vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn two_layer_matches_hand_evaluation() {
        // hidden: 2 units, output: 1 unit, alpha = 0.3
        let mut p = MlpParams::zeros(&[2, 2, 1], 0.3, OutputActivation::Linear).unwrap();
        p.layers[0].weight = ndarray::arr2(&[[0.5, -0.25], [-1.0, 0.75]]);
        p.layers[0].bias = ndarray::arr1(&[0.1, -0.2]);
        p.layers[1].weight = ndarray::arr2(&[[2.0, -1.5]]);
        p.layers[1].bias = ndarray::arr1(&[0.05]);
        let (out, _) = mlp_forward(&p, &[1.0, -1.0]).unwrap();

        // z1 = 0.5 + 0.25 + 0.1 = 0.85 -> elu = 0.85
        // z2 = -1.0 - 0.75 - 0.2 = -1.95 -> elu = 0.3 (e^-1.95 - 1)
        let h1 = 0.85;
        let h2 = 0.3 * ((-1.95f64).exp() - 1.0);
        let expected = 2.0 * h1 - 1.5 * h2 + 0.05;
        assert!((out[0] - expected).abs() < 1e-14, "{} vs {}", out[0], expected);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = MlpParams::zeros(&[3, 1], 0.3, OutputActivation::Linear).unwrap();
        assert!(matches!(mlp_forward(&p, &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(MlpParams::zeros(&[3, 1], 0.0, OutputActivation::Linear).is_err());
        assert!(MlpParams::zeros(&[3, 3], 0.3, OutputActivation::LinearSigmoidHeads).is_err());
        let mut p = MlpParams::zeros(&[2, 3, 1], 0.3, OutputActivation::Linear).unwrap();
        p.layers[1] = Layer::zeros(4, 1);
        assert!(p.validate().is_err());
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MlpParams::glorot(&[4, 16, 8, 1], 0.3, OutputActivation::Linear, &mut rng).unwrap();
        let x = [0.1, -0.7, 1.3, 2.2];
        let a = mlp_forward(&p, &x).unwrap().0;
        let b = mlp_forward(&p, &x).unwrap().0;
        assert_eq!(a[0].to_bits(), b[0].to_bits());
    }

    #[test]
    fn elu_is_continuous_at_zero() {
        for alpha in [0.1, 0.3, 1.0, 2.5] {
            let left = elu(-1e-300, alpha);
            let right = elu(0.0, alpha);
            assert!((left - right).abs() < 1e-12);
            assert!((elu(-1e-13, alpha) - elu(1e-13, alpha)).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_layer_gradients() {
        let w = [0.4, -1.2, 2.0];
        let z = [1.5, 0.5, -3.0];
        let p = linear_single(&w, 0.7);
        let (_, tape) = mlp_forward(&p, &z).unwrap();
        let g = backward_params(&p, &tape, 1.0).unwrap();
        assert_eq!(g.param_grads.layers[0].weight.row(0).to_vec(), z.to_vec());
        assert_eq!(g.param_grads.layers[0].bias[0], 1.0);
        assert_eq!(g.input_grad.row(0).to_vec(), w.to_vec());
    }

    #[test]
    fn constant_network_has_zero_input_grad() {
        let mut p = MlpParams::zeros(&[3, 4, 1], 0.3, OutputActivation::Linear).unwrap();
        p.layers[1].bias[0] = 2.5;
        let (out, tape) = mlp_forward(&p, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(out[0], 2.5);
        let g = backward_params(&p, &tape, 1.0).unwrap();
        assert!(g.input_grad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_tape_is_rejected() {
        let p = MlpParams::zeros(&[3, 4, 1], 0.3, OutputActivation::Linear).unwrap();
        let q = MlpParams::zeros(&[3, 5, 1], 0.3, OutputActivation::Linear).unwrap();
        let (_, tape) = mlp_forward(&p, &[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(backward_params(&q, &tape, 1.0), Err(Error::Shape(_))));
    }

    #[test]
    fn penalty_at_minimum_is_zero() {
        // D(x, y, delta) = y
        let p = linear_single(&[0.0, 1.0, 0.0], 0.0);
        let g = grad_penalty_param_gradient(&p, &[0.3, 0.9, 1.0], &[true, true, false]).unwrap();
        assert_eq!(g.value, 0.0);
        assert!(g.param_grads.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn penalty_excludes_masked_coordinate() {
        // D = 3 * delta: unmasked gradient is zero, so P = 1.
        let p = linear_single(&[0.0, 0.0, 3.0], 0.0);
        let g = grad_penalty_param_gradient(&p, &[0.3, 0.9, 1.0], &[true, true, false]).unwrap();
        assert_eq!(g.value, 1.0);
    }

    #[test]
    fn penalty_of_constant_network() {
        let mut p = MlpParams::zeros(&[3, 4, 1], 0.3, OutputActivation::Linear).unwrap();
        p.layers[1].bias[0] = -1.25;
        let g = grad_penalty_param_gradient(&p, &[0.2, 0.1, 0.0], &[true, true, false]).unwrap();
        assert_eq!(g.value, 1.0);
        assert_eq!(g.param_grads.layers[1].bias[0], 0.0);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = MlpParams::glorot(&[2, 3, 1], 0.3, OutputActivation::Linear, &mut rng).unwrap();
        let state = OptimizerState::new(&p, AdamConfig::default()).unwrap();
        let zeros = ParamGrads::zeros_like(&p);
        let (state, q) = adam_update(&state, &p, &zeros).unwrap();
        assert_eq!(p, q);
        assert_eq!(state.step_count, 1);
    }

    fn scalar_param() -> MlpParams {
        MlpParams::zeros(&[1, 1], 0.3, OutputActivation::Linear).unwrap()
    }

    fn unit_grad(p: &MlpParams) -> ParamGrads {
        let mut g = ParamGrads::zeros_like(p);
        g.layers[0].weight[[0, 0]] = 1.0;
        g
    }

    #[test]
    fn adam_single_step_closed_form() {
        let p = scalar_param();
        let cfg = AdamConfig {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let state = OptimizerState::new(&p, cfg).unwrap();
        let (_, q) = adam_update(&state, &p, &unit_grad(&p)).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((q.layers[0].weight[[0, 0]] - expected).abs() < 1e-15);
        assert_eq!(q.layers[0].bias[0], 0.0);
    }

    #[test]
    fn adam_two_steps_match_recursion() {
        let p = scalar_param();
        let cfg = AdamConfig {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let g = unit_grad(&p);
        let state = OptimizerState::new(&p, cfg).unwrap();
        let (state, q) = adam_update(&state, &p, &g).unwrap();
        let (_, q) = adam_update(&state, &q, &g).unwrap();

        // closed form: m_t = 1 - b1^t, v_t = 1 - b2^t, so m_hat = v_hat = 1 at every step
        let (b1, b2) = (0.9f64, 0.999f64);
        let mut x = 0.0;
        for t in 1..=2 {
            let m_hat = (1.0 - b1.powi(t)) / (1.0 - b1.powi(t));
            let v_hat = (1.0 - b2.powi(t)) / (1.0 - b2.powi(t));
            x -= 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        }
        assert!((q.layers[0].weight[[0, 0]] - x).abs() < 1e-14);
    }

    #[test]
    fn adam_rejects_bad_config() {
        let p = scalar_param();
        let bad = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(OptimizerState::new(&p, bad).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = MlpParams::glorot(&[3, 4, 2], 0.3, OutputActivation::LinearSigmoidHeads, &mut rng)
            .unwrap();
        let mut q = MlpParams::zeros(&[3, 4, 2], 0.3, OutputActivation::LinearSigmoidHeads).unwrap();
        q.set_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
    }
}
