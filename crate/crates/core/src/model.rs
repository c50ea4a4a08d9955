//! Layered state-space neural network.
//!
//! The state map `x[k+1] = f(x[k], u[k])` and the output map `y[k] = g(x[k])` are
//! both plain feedforward stacks of affine layers followed by an elementwise
//! activation. Hidden layers use `tanh` and the last layer of each subnetwork is
//! linear.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output `a = σ(z)`.
    #[inline]
    pub fn derivative_at_output<T: Real>(self, a: T) -> T {
        match self {
            Activation::Tanh => T::one() - a * a,
            Activation::Linear => T::one(),
        }
    }
}

/// One affine layer `σ(A·input + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T: Real> {
    pub weights: DMatrix<T>,
    pub bias: DVector<T>,
    pub activation: Activation,
}

impl<T: Real> Layer<T> {
    pub fn new(weights: DMatrix<T>, bias: DVector<T>, activation: Activation) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::dim("layer bias", weights.nrows(), bias.len()));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Architecture("non-finite layer parameter".into()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn zeros(outputs: usize, inputs: usize, activation: Activation) -> Self {
        Self {
            weights: DMatrix::zeros(outputs, inputs),
            bias: DVector::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Evaluates `σ(A·input + b)`.
    pub fn forward(&self, input: &DVector<T>) -> Result<DVector<T>> {
        if input.len() != self.inputs() {
            return Err(Error::dim("layer input", self.inputs(), input.len()));
        }
        Ok(self.forward_unchecked(input))
    }

    #[inline]
    pub(crate) fn forward_unchecked(&self, input: &DVector<T>) -> DVector<T> {
        let mut z = &self.weights * input + &self.bias;
        let act = self.activation;
        z.apply(|v| *v = act.apply(*v));
        z
    }
}

/// Widths and dimensions of both subnetworks.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Architecture {
    pub state_dim: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    /// `l_1, …, l_L`; the last entry is the state dimension.
    pub state_widths: Vec<usize>,
    /// `h_1, …, h_H`; the last entry is the output dimension.
    pub output_widths: Vec<usize>,
}

impl Architecture {
    pub fn new(
        state_dim: usize,
        input_dim: usize,
        output_dim: usize,
        state_widths: Vec<usize>,
        output_widths: Vec<usize>,
    ) -> Result<Self> {
        let arch = Self {
            state_dim,
            input_dim,
            output_dim,
            state_widths,
            output_widths,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Two layers per subnetwork: `(d+m) → l1 → d` and `d → h1 → p`.
    pub fn two_layer(
        state_dim: usize,
        input_dim: usize,
        output_dim: usize,
        state_hidden: usize,
        output_hidden: usize,
    ) -> Result<Self> {
        Self::new(
            state_dim,
            input_dim,
            output_dim,
            vec![state_hidden, state_dim],
            vec![output_hidden, output_dim],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Architecture(
                "state, input and output dimensions must be positive".into(),
            ));
        }
        if self.state_widths.is_empty() || self.output_widths.is_empty() {
            return Err(Error::Architecture(
                "each subnetwork needs at least one layer".into(),
            ));
        }
        if self.state_widths.iter().chain(&self.output_widths).any(|&w| w == 0) {
            return Err(Error::Architecture("layer widths must be positive".into()));
        }
        if *self.state_widths.last().unwrap() != self.state_dim {
            return Err(Error::Architecture(format!(
                "last state layer has width {} but state dimension is {}",
                self.state_widths.last().unwrap(),
                self.state_dim
            )));
        }
        if *self.output_widths.last().unwrap() != self.output_dim {
            return Err(Error::Architecture(format!(
                "last output layer has width {} but output dimension is {}",
                self.output_widths.last().unwrap(),
                self.output_dim
            )));
        }
        Ok(())
    }

    /// `(rows, cols)` of every state layer weight matrix.
    pub fn state_shapes(&self) -> Vec<(usize, usize)> {
        chain_shapes(self.state_dim + self.input_dim, &self.state_widths)
    }

    pub fn output_shapes(&self) -> Vec<(usize, usize)> {
        chain_shapes(self.state_dim, &self.output_widths)
    }

    /// `n_f`
    pub fn state_param_count(&self) -> usize {
        self.state_shapes().iter().map(|(r, c)| r * c + r).sum()
    }

    /// `n_g`
    pub fn output_param_count(&self) -> usize {
        self.output_shapes().iter().map(|(r, c)| r * c + r).sum()
    }

    /// `n_f + n_g + d`
    pub fn param_count(&self) -> usize {
        self.state_param_count() + self.output_param_count() + self.state_dim
    }
}

fn chain_shapes(first_inputs: usize, widths: &[usize]) -> Vec<(usize, usize)> {
    let mut prev = first_inputs;
    widths
        .iter()
        .map(|&w| {
            let shape = (w, prev);
            prev = w;
            shape
        })
        .collect()
}

fn activation_for(index: usize, count: usize) -> Activation {
    if index + 1 == count {
        Activation::Linear
    } else {
        Activation::Tanh
    }
}

/// State-space network with parameters `θ = (θ_f, θ_g, x0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SsnnModel<T: Real> {
    pub arch: Architecture,
    pub state_layers: Vec<Layer<T>>,
    pub output_layers: Vec<Layer<T>>,
    pub x0: DVector<T>,
}

impl<T: Real> SsnnModel<T> {
    /// All-zero parameters, tanh hidden layers and linear output layers.
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let ns = arch.state_widths.len();
        let no = arch.output_widths.len();
        Ok(Self {
            state_layers: arch
                .state_shapes()
                .into_iter()
                .enumerate()
                .map(|(i, (r, c))| Layer::zeros(r, c, activation_for(i, ns)))
                .collect(),
            output_layers: arch
                .output_shapes()
                .into_iter()
                .enumerate()
                .map(|(i, (r, c))| Layer::zeros(r, c, activation_for(i, no)))
                .collect(),
            x0: DVector::zeros(arch.state_dim),
            arch: arch.clone(),
        })
    }

    /// Weights and biases uniform in `[-scale, scale]`, `x0 = 0`.
    pub fn random<R: Rng + ?Sized>(arch: &Architecture, scale: f64, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        for layer in model
            .state_layers
            .iter_mut()
            .chain(model.output_layers.iter_mut())
        {
            for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *v = T::lit(rng.random_range(-scale..=scale));
            }
        }
        Ok(model)
    }

    /// Assembles a model from explicit layers and checks the dimension chain.
    pub fn from_parts(
        arch: Architecture,
        state_layers: Vec<Layer<T>>,
        output_layers: Vec<Layer<T>>,
        x0: DVector<T>,
    ) -> Result<Self> {
        let model = Self {
            arch,
            state_layers,
            output_layers,
            x0,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let check = |layers: &[Layer<T>], shapes: Vec<(usize, usize)>, what: &str| -> Result<()> {
            if layers.len() != shapes.len() {
                return Err(Error::dim(format!("{what} layer count"), shapes.len(), layers.len()));
            }
            for (i, (layer, (r, c))) in layers.iter().zip(shapes).enumerate() {
                if layer.outputs() != r {
                    return Err(Error::dim(format!("{what} layer {i} rows"), r, layer.outputs()));
                }
                if layer.inputs() != c {
                    return Err(Error::dim(format!("{what} layer {i} columns"), c, layer.inputs()));
                }
                if layer.bias.len() != r {
                    return Err(Error::dim(format!("{what} layer {i} bias"), r, layer.bias.len()));
                }
            }
            Ok(())
        };
        check(&self.state_layers, self.arch.state_shapes(), "state")?;
        check(&self.output_layers, self.arch.output_shapes(), "output")?;
        if self.x0.len() != self.arch.state_dim {
            return Err(Error::dim("initial state", self.arch.state_dim, self.x0.len()));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.arch.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output_dim
    }

    /// `f_NN(x, u)`
    pub fn state_step(&self, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        if x.len() != self.state_dim() {
            return Err(Error::dim("state vector", self.state_dim(), x.len()));
        }
        if u.len() != self.input_dim() {
            return Err(Error::dim("input vector", self.input_dim(), u.len()));
        }
        forward_stack(&self.state_layers, concat(x, u), "state")
    }

    /// `g_NN(x)`
    pub fn output_map(&self, x: &DVector<T>) -> Result<DVector<T>> {
        if x.len() != self.state_dim() {
            return Err(Error::dim("state vector", self.state_dim(), x.len()));
        }
        forward_stack(&self.output_layers, x.clone(), "output")
    }

    /// Simulates from the model's own `x0`.
    pub fn simulate(&self, inputs: &DMatrix<T>) -> Result<Trajectory<T>> {
        self.simulate_from(&self.x0, inputs)
    }

    /// Simulates from an arbitrary starting state. The trajectory has one
    /// column per input column; column 0 is `start`.
    pub fn simulate_from(&self, start: &DVector<T>, inputs: &DMatrix<T>) -> Result<Trajectory<T>> {
        let n = inputs.ncols();
        if n == 0 {
            return Err(Error::TooFewSamples {
                required: 1,
                actual: 0,
            });
        }
        if inputs.nrows() != self.input_dim() {
            return Err(Error::dim("input rows", self.input_dim(), inputs.nrows()));
        }
        if start.len() != self.state_dim() {
            return Err(Error::dim("initial state", self.state_dim(), start.len()));
        }
        let d = self.state_dim();
        let mut states = DMatrix::zeros(d, n);
        let mut outputs = DMatrix::zeros(self.output_dim(), n);
        let mut x = start.clone();
        for k in 0..n {
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { step: k });
            }
            let y = self.output_map_unchecked(&x);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { step: k });
            }
            states.set_column(k, &x);
            outputs.set_column(k, &y);
            if k + 1 < n {
                let u = inputs.column(k).into_owned();
                x = self.state_step_unchecked(&x, &u);
            }
        }
        Ok(Trajectory { states, outputs })
    }

    /// State after propagating through every input column, i.e. the state
    /// that would follow the last column of `simulate_from(start, inputs)`.
    pub fn propagate(&self, start: &DVector<T>, inputs: &DMatrix<T>) -> Result<DVector<T>> {
        let mut x = start.clone();
        for k in 0..inputs.ncols() {
            x = self.state_step(&x, &inputs.column(k).into_owned())?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { step: k + 1 });
            }
        }
        Ok(x)
    }

    pub(crate) fn state_step_unchecked(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        let mut a = concat(x, u);
        for layer in &self.state_layers {
            a = layer.forward_unchecked(&a);
        }
        a
    }

    pub(crate) fn output_map_unchecked(&self, x: &DVector<T>) -> DVector<T> {
        let mut a = x.clone();
        for layer in &self.output_layers {
            a = layer.forward_unchecked(&a);
        }
        a
    }

    /// Packs `θ = (θ_f, θ_g, x0)`. Each layer contributes its weights row by row
    /// followed by its bias; state layers come first, then output layers, then `x0`.
    pub fn flatten(&self) -> DVector<T> {
        let mut out = Vec::with_capacity(self.arch.param_count());
        for layer in self.state_layers.iter().chain(&self.output_layers) {
            push_layer(&mut out, layer);
        }
        out.extend(self.x0.iter().copied());
        DVector::from_vec(out)
    }

    /// Inverse of [`flatten`](Self::flatten). Activations follow the default
    /// assignment (tanh hidden, linear last layer).
    pub fn unflatten(arch: &Architecture, theta: &DVector<T>) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        model.assign_flat(theta)?;
        Ok(model)
    }

    /// Overwrites all parameters from a flat vector, keeping activations.
    pub fn assign_flat(&mut self, theta: &DVector<T>) -> Result<()> {
        let expected = self.arch.param_count();
        if theta.len() != expected {
            return Err(Error::dim("parameter vector", expected, theta.len()));
        }
        let mut pos = 0;
        for layer in self.state_layers.iter_mut().chain(self.output_layers.iter_mut()) {
            pos = read_layer(layer, theta.as_slice(), pos);
        }
        for i in 0..self.x0.len() {
            self.x0[i] = theta[pos + i];
        }
        Ok(())
    }

    /// Flat range occupied by `θ_g` inside [`flatten`](Self::flatten).
    pub fn output_param_range(&self) -> std::ops::Range<usize> {
        let nf = self.arch.state_param_count();
        nf..nf + self.arch.output_param_count()
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Real>(&self) -> SsnnModel<U> {
        let cast_layer = |l: &Layer<T>| Layer {
            weights: l.weights.map(|v| U::lit(v.as_f64())),
            bias: l.bias.map(|v| U::lit(v.as_f64())),
            activation: l.activation,
        };
        SsnnModel {
            arch: self.arch.clone(),
            state_layers: self.state_layers.iter().map(cast_layer).collect(),
            output_layers: self.output_layers.iter().map(cast_layer).collect(),
            x0: self.x0.map(|v| U::lit(v.as_f64())),
        }
    }
}

fn push_layer<T: Real>(out: &mut Vec<T>, layer: &Layer<T>) {
    for r in 0..layer.weights.nrows() {
        for c in 0..layer.weights.ncols() {
            out.push(layer.weights[(r, c)]);
        }
    }
    out.extend(layer.bias.iter().copied());
}

fn read_layer<T: Real>(layer: &mut Layer<T>, flat: &[T], mut pos: usize) -> usize {
    for r in 0..layer.weights.nrows() {
        for c in 0..layer.weights.ncols() {
            layer.weights[(r, c)] = flat[pos];
            pos += 1;
        }
    }
    for i in 0..layer.bias.len() {
        layer.bias[i] = flat[pos];
        pos += 1;
    }
    pos
}

pub(crate) fn concat<T: Real>(x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
    let mut v = DVector::zeros(x.len() + u.len());
    v.rows_mut(0, x.len()).copy_from(x);
    v.rows_mut(x.len(), u.len()).copy_from(u);
    v
}

fn forward_stack<T: Real>(layers: &[Layer<T>], input: DVector<T>, what: &str) -> Result<DVector<T>> {
    let mut a = input;
    for (i, layer) in layers.iter().enumerate() {
        if a.len() != layer.inputs() {
            return Err(Error::dim(format!("{what} layer {i} input"), layer.inputs(), a.len()));
        }
        a = layer.forward_unchecked(&a);
    }
    Ok(a)
}

/// Simulated states `X` (d×N, column 0 is the initial state) and outputs `Ŷ` (p×N).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    pub states: DMatrix<T>,
    pub outputs: DMatrix<T>,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.states.ncols() == 0
    }
}

/// Sample mean and covariance (`1/(N-1)` normalization) of a state sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceStats<T: Real> {
    pub mean: DVector<T>,
    pub covariance: DMatrix<T>,
    pub variances: DVector<T>,
}

impl<T: Real> VarianceStats<T> {
    pub fn from_variances(variances: DVector<T>) -> Self {
        Self {
            mean: DVector::zeros(variances.len()),
            covariance: DMatrix::from_diagonal(&variances),
            variances,
        }
    }

    pub fn is_ordered(&self, slack: T) -> bool {
        is_variance_ordered(self.variances.as_slice(), slack)
    }
}

pub fn variance_stats<T: Real>(states: &DMatrix<T>) -> Result<VarianceStats<T>> {
    let n = states.ncols();
    if n < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            actual: n,
        });
    }
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let mean = states.column_sum() * inv_n;
    let mut centered = states.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let covariance = (&centered * centered.transpose()) / T::from_usize(n - 1).unwrap();
    let variances = covariance.diagonal();
    Ok(VarianceStats {
        mean,
        covariance,
        variances,
    })
}

/// `V[i] ≥ V[i+1] - slack` for every consecutive pair.
pub fn is_variance_ordered<T: Real>(variances: &[T], slack: T) -> bool {
    variances.windows(2).all(|w| w[0] >= w[1] - slack)
}
