use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lstm::{project, reverse_columns, LstmParams, LstmState, LstmTrace};
use crate::error::{Error, Result};

const INIT_SCALE: f64 = 0.1;

/// Declarative layer description, used for construction and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Lstm {
        units: usize,
    },
    /// `units` per direction; the layer emits `2 × units` values per frame.
    Blstm {
        units: usize,
    },
    /// Framewise tanh layer.
    FeedForward {
        units: usize,
    },
    /// Framewise affine layer without nonlinearity.
    Linear {
        units: usize,
    },
}

impl LayerSpec {
    pub fn output_dim(&self) -> usize {
        match *self {
            LayerSpec::Blstm { units } => 2 * units,
            LayerSpec::Lstm { units }
            | LayerSpec::FeedForward { units }
            | LayerSpec::Linear { units } => units,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
}

impl Topology {
    /// Three BLSTM layers with a feed-forward bottleneck after each and a
    /// linear output layer: `in → 256 → 64 → 256 → 64 → 256 → 64 → out`.
    pub fn enhancement(input_dim: usize, output_dim: usize) -> Self {
        let mut layers = Vec::new();
        for _ in 0..3 {
            layers.push(LayerSpec::Blstm { units: 128 });
            layers.push(LayerSpec::FeedForward { units: 64 });
        }
        layers.push(LayerSpec::Linear { units: output_dim });
        Self { input_dim, layers }
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .last()
            .map_or(self.input_dim, LayerSpec::output_dim)
    }

    /// Input dimension followed by every layer's output dimension.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.layers.iter().map(LayerSpec::output_dim))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Layer {
    Lstm(LstmParams),
    Blstm {
        fwd: LstmParams,
        bwd: LstmParams,
    },
    Dense {
        w: DMatrix<f64>,
        b: DVector<f64>,
        activation: Activation,
    },
}

impl Layer {
    fn zeros(spec: LayerSpec, input_dim: usize) -> Self {
        match spec {
            LayerSpec::Lstm { units } => Layer::Lstm(LstmParams::zeros(input_dim, units)),
            LayerSpec::Blstm { units } => Layer::Blstm {
                fwd: LstmParams::zeros(input_dim, units),
                bwd: LstmParams::zeros(input_dim, units),
            },
            LayerSpec::FeedForward { units } | LayerSpec::Linear { units } => Layer::Dense {
                w: DMatrix::zeros(units, input_dim),
                b: DVector::zeros(units),
                activation: if matches!(spec, LayerSpec::FeedForward { .. }) {
                    Activation::Tanh
                } else {
                    Activation::Identity
                },
            },
        }
    }

    fn random(spec: LayerSpec, input_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        match spec {
            LayerSpec::Lstm { units } => {
                Layer::Lstm(LstmParams::random(input_dim, units, INIT_SCALE, rng))
            }
            LayerSpec::Blstm { units } => Layer::Blstm {
                fwd: LstmParams::random(input_dim, units, INIT_SCALE, rng),
                bwd: LstmParams::random(input_dim, units, INIT_SCALE, rng),
            },
            _ => {
                let mut layer = Layer::zeros(spec, input_dim);
                use rand::Rng;
                for s in layer.slices_mut() {
                    s.iter_mut()
                        .for_each(|v| *v = rng.random_range(-INIT_SCALE..=INIT_SCALE));
                }
                layer
            }
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Lstm(p) => LayerSpec::Lstm {
                units: p.hidden_dim(),
            },
            Layer::Blstm { fwd, .. } => LayerSpec::Blstm {
                units: fwd.hidden_dim(),
            },
            Layer::Dense { w, activation, .. } => match activation {
                Activation::Tanh => LayerSpec::FeedForward { units: w.nrows() },
                Activation::Identity => LayerSpec::Linear { units: w.nrows() },
            },
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Layer::Lstm(p) => p.input_dim(),
            Layer::Blstm { fwd, .. } => fwd.input_dim(),
            Layer::Dense { w, .. } => w.ncols(),
        }
    }

    fn slices(&self) -> Vec<&[f64]> {
        match self {
            Layer::Lstm(p) => p.slices().to_vec(),
            Layer::Blstm { fwd, bwd } => fwd.slices().into_iter().chain(bwd.slices()).collect(),
            Layer::Dense { w, b, .. } => vec![w.as_slice(), b.as_slice()],
        }
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Lstm(p) => p.slices_mut().into_iter().collect(),
            Layer::Blstm { fwd, bwd } => fwd
                .slices_mut()
                .into_iter()
                .chain(bwd.slices_mut())
                .collect(),
            Layer::Dense { w, b, .. } => vec![w.as_mut_slice(), b.as_mut_slice()],
        }
    }
}

/// Network input: real-valued frames or 1-of-N token indices.
#[derive(Debug, Clone, PartialEq)]
pub enum SeqInput {
    Dense(DMatrix<f64>),
    Tokens(Vec<usize>),
}

impl SeqInput {
    pub fn len(&self) -> usize {
        match self {
            SeqInput::Dense(m) => m.ncols(),
            SeqInput::Tokens(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn as_ref(&self) -> InRef<'_> {
        match self {
            SeqInput::Dense(m) => InRef::Dense(m),
            SeqInput::Tokens(t) => InRef::Tokens(t),
        }
    }
}

/// Training target. Dense targets use the sum-squared error; token targets
/// use soft-max cross-entropy on the network's linear outputs.
#[derive(Debug, Clone, PartialEq)]
pub enum SeqTarget {
    Dense(DMatrix<f64>),
    Tokens(Vec<usize>),
}

impl SeqTarget {
    pub fn len(&self) -> usize {
        match self {
            SeqTarget::Dense(m) => m.ncols(),
            SeqTarget::Tokens(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: SeqInput,
    pub target: SeqTarget,
}

impl Example {
    pub fn dense(input: DMatrix<f64>, target: DMatrix<f64>) -> Self {
        Self {
            input: SeqInput::Dense(input),
            target: SeqTarget::Dense(target),
        }
    }
}

#[derive(Clone, Copy)]
enum InRef<'a> {
    Dense(&'a DMatrix<f64>),
    Tokens(&'a [usize]),
}

impl InRef<'_> {
    fn reversed(&self) -> SeqInput {
        match self {
            InRef::Dense(m) => SeqInput::Dense(reverse_columns(m)),
            InRef::Tokens(t) => SeqInput::Tokens(t.iter().rev().copied().collect()),
        }
    }

    /// `w · x + b` for every frame.
    fn project(&self, w: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
        match self {
            InRef::Dense(x) => project(w, b, x),
            InRef::Tokens(toks) => {
                let mut z = DMatrix::zeros(w.nrows(), toks.len());
                for (t, &tok) in toks.iter().enumerate() {
                    let mut col = z.column_mut(t);
                    col.copy_from(&w.column(tok));
                    col += b;
                }
                z
            }
        }
    }

    /// Accumulates `dz · xᵀ` into `dw`.
    fn accumulate_weight_grad(&self, dz: &DMatrix<f64>, dw: &mut DMatrix<f64>) {
        match self {
            InRef::Dense(x) => dw.gemm(1.0, dz, &x.transpose(), 1.0),
            InRef::Tokens(toks) => {
                for (t, &tok) in toks.iter().enumerate() {
                    let mut col = dw.column_mut(tok);
                    col += dz.column(t);
                }
            }
        }
    }
}

#[allow(clippy::large_enum_variant)]
enum LayerTrace {
    Lstm(LstmTrace),
    Blstm(LstmTrace, LstmTrace),
    Dense,
}

/// Stack of recurrent and framewise layers ending in a linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceNetwork {
    input_dim: usize,
    layers: Vec<Layer>,
}

fn check_topology(topology: &Topology) -> Result<()> {
    if topology.input_dim == 0 || topology.layers.is_empty() {
        return Err(Error::Config(
            "network needs an input and at least one layer".into(),
        ));
    }
    if topology.layers.iter().any(|l| l.output_dim() == 0) {
        return Err(Error::Config("layers must have at least one unit".into()));
    }
    Ok(())
}

impl SequenceNetwork {
    pub fn zeros(topology: &Topology) -> Result<Self> {
        check_topology(topology)?;
        let dims = topology.dims();
        let layers = topology
            .layers
            .iter()
            .zip(&dims)
            .map(|(&spec, &inp)| Layer::zeros(spec, inp))
            .collect();
        Ok(Self {
            input_dim: topology.input_dim,
            layers,
        })
    }

    /// Uniform `[-0.1, 0.1]` initialisation (forget biases +1) from `seed`.
    pub fn random(topology: &Topology, seed: u64) -> Result<Self> {
        check_topology(topology)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = topology.dims();
        let layers = topology
            .layers
            .iter()
            .zip(&dims)
            .map(|(&spec, &inp)| Layer::random(spec, inp, &mut rng))
            .collect();
        Ok(Self {
            input_dim: topology.input_dim,
            layers,
        })
    }

    pub fn from_layers(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let net = Self { input_dim, layers };
        check_topology(&net.topology())?;
        let dims = net.topology().dims();
        for (l, layer) in net.layers.iter().enumerate() {
            if layer.input_dim() != dims[l] {
                return Err(Error::Config(format!(
                    "layer {l} expects {} inputs, previous layer emits {}",
                    layer.input_dim(),
                    dims[l]
                )));
            }
        }
        Ok(net)
    }

    pub fn topology(&self) -> Topology {
        Topology {
            input_dim: self.input_dim,
            layers: self.layers.iter().map(Layer::spec).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.topology().output_dim()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// All parameters as contiguous slices in a fixed order.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(Layer::slices).collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(Layer::slices_mut).collect()
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Argument(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for s in self.param_slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for s in z.param_slices_mut() {
            s.fill(0.0);
        }
        z
    }

    /// `self += alpha · other` over every parameter.
    pub fn axpy(&mut self, alpha: f64, other: &SequenceNetwork) {
        for (a, b) in self
            .param_slices_mut()
            .into_iter()
            .zip(other.param_slices())
        {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += alpha * y);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for s in self.param_slices_mut() {
            s.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.param_slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn check_input(&self, input: &SeqInput) -> Result<()> {
        match input {
            SeqInput::Dense(m) if m.nrows() != self.input_dim => Err(Error::Config(format!(
                "input frames have {} entries, network expects {}",
                m.nrows(),
                self.input_dim
            ))),
            SeqInput::Tokens(t) if t.iter().any(|&k| k >= self.input_dim) => Err(Error::Config(
                format!("token index out of range for input size {}", self.input_dim),
            )),
            _ => Ok(()),
        }
    }

    fn check_example(&self, ex: &Example) -> Result<()> {
        self.check_input(&ex.input)?;
        if ex.input.len() != ex.target.len() {
            return Err(Error::Data(format!(
                "input has {} frames, target has {}",
                ex.input.len(),
                ex.target.len()
            )));
        }
        let out = self.output_dim();
        match &ex.target {
            SeqTarget::Dense(m) if m.nrows() != out => Err(Error::Config(format!(
                "target frames have {} entries, network emits {out}",
                m.nrows()
            ))),
            SeqTarget::Tokens(t) if t.iter().any(|&k| k >= out) => {
                Err(Error::Config("target token out of range".into()))
            }
            _ => Ok(()),
        }
    }

    /// Linear outputs of the final layer, `output_dim × T`.
    pub fn forward(&self, input: &SeqInput) -> Result<DMatrix<f64>> {
        self.check_input(input)?;
        let (mut outs, _) = self.forward_traced(input.as_ref());
        Ok(outs.pop().expect("at least one layer"))
    }

    fn forward_traced(&self, input: InRef<'_>) -> (Vec<DMatrix<f64>>, Vec<LayerTrace>) {
        let mut outs: Vec<DMatrix<f64>> = Vec::with_capacity(self.layers.len());
        let mut traces = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let inp = if l == 0 {
                input
            } else {
                InRef::Dense(&outs[l - 1])
            };
            let (out, trace) = match layer {
                Layer::Lstm(p) => {
                    let tr = p.run(
                        &inp.project(&p.wx, &p.bias),
                        &LstmState::zeros(p.hidden_dim()),
                    );
                    (tr.h.clone(), LayerTrace::Lstm(tr))
                }
                Layer::Blstm { fwd, bwd } => {
                    let tf = fwd.run(
                        &inp.project(&fwd.wx, &fwd.bias),
                        &LstmState::zeros(fwd.hidden_dim()),
                    );
                    let rev = inp.reversed();
                    let tb = bwd.run(
                        &rev.as_ref().project(&bwd.wx, &bwd.bias),
                        &LstmState::zeros(bwd.hidden_dim()),
                    );
                    let hf = fwd.hidden_dim();
                    let mut out = DMatrix::zeros(hf + bwd.hidden_dim(), tf.h.ncols());
                    out.rows_mut(0, hf).copy_from(&tf.h);
                    out.rows_mut(hf, bwd.hidden_dim())
                        .copy_from(&reverse_columns(&tb.h));
                    (out, LayerTrace::Blstm(tf, tb))
                }
                Layer::Dense { w, b, activation } => {
                    let mut z = inp.project(w, b);
                    if *activation == Activation::Tanh {
                        z.apply(|v| *v = v.tanh());
                    }
                    (z, LayerTrace::Dense)
                }
            };
            outs.push(out);
            traces.push(trace);
        }
        (outs, traces)
    }

    /// Cost of one sequence and its gradient w.r.t. every parameter by
    /// untruncated back-propagation through time.
    pub fn example_gradient(&self, ex: &Example) -> Result<(SequenceNetwork, f64)> {
        self.check_example(ex)?;
        let input = ex.input.as_ref();
        let (outs, traces) = self.forward_traced(input);
        let y = outs.last().expect("at least one layer");
        let (cost, mut delta) = output_cost(y, &ex.target);

        let mut grad = self.zeros_like();
        for l in (0..self.layers.len()).rev() {
            let inp = if l == 0 {
                input
            } else {
                InRef::Dense(&outs[l - 1])
            };
            let need_dx = l > 0;
            let g = &mut grad.layers[l];
            delta = match (&self.layers[l], &traces[l], g) {
                (Layer::Lstm(p), LayerTrace::Lstm(tr), Layer::Lstm(gp)) => {
                    let dz = p.backward(tr, &delta, gp);
                    inp.accumulate_weight_grad(&dz, &mut gp.wx);
                    if need_dx {
                        p.wx.tr_mul(&dz)
                    } else {
                        DMatrix::zeros(0, 0)
                    }
                }
                (
                    Layer::Blstm { fwd, bwd },
                    LayerTrace::Blstm(tf, tb),
                    Layer::Blstm { fwd: gf, bwd: gb },
                ) => {
                    let hf = fwd.hidden_dim();
                    let d_f = delta.rows(0, hf).into_owned();
                    let d_b = reverse_columns(&delta.rows(hf, bwd.hidden_dim()).into_owned());
                    let dzf = fwd.backward(tf, &d_f, gf);
                    let dzb = bwd.backward(tb, &d_b, gb);
                    inp.accumulate_weight_grad(&dzf, &mut gf.wx);
                    let rev = inp.reversed();
                    rev.as_ref().accumulate_weight_grad(&dzb, &mut gb.wx);
                    if need_dx {
                        fwd.wx.tr_mul(&dzf) + reverse_columns(&bwd.wx.tr_mul(&dzb))
                    } else {
                        DMatrix::zeros(0, 0)
                    }
                }
                (
                    Layer::Dense { w, activation, .. },
                    LayerTrace::Dense,
                    Layer::Dense { w: gw, b: gb, .. },
                ) => {
                    let mut dz = delta;
                    if *activation == Activation::Tanh {
                        dz.zip_apply(&outs[l], |d, y| *d *= 1.0 - y * y);
                    }
                    inp.accumulate_weight_grad(&dz, gw);
                    *gb += dz.column_sum();
                    if need_dx {
                        w.tr_mul(&dz)
                    } else {
                        DMatrix::zeros(0, 0)
                    }
                }
                _ => unreachable!("gradient mirrors network structure"),
            };
        }
        Ok((grad, cost))
    }

    /// Summed cost and gradient over a batch. Sequences are processed in
    /// parallel and reduced in input order, so the result does not depend
    /// on the number of worker threads.
    pub fn gradients(&self, batch: &[Example]) -> Result<(SequenceNetwork, f64)> {
        let parts: Vec<(SequenceNetwork, f64)> = batch
            .par_iter()
            .map(|ex| self.example_gradient(ex))
            .collect::<Result<_>>()?;
        let mut total = self.zeros_like();
        let mut cost = 0.0;
        for (g, c) in &parts {
            total.axpy(1.0, g);
            cost += c;
        }
        Ok((total, cost))
    }

    pub fn example_cost(&self, ex: &Example) -> Result<f64> {
        self.check_example(ex)?;
        let y = self.forward(&ex.input)?;
        Ok(output_cost(&y, &ex.target).0)
    }

    /// Summed cost over a set of sequences (reduced in input order).
    pub fn cost(&self, set: &[Example]) -> Result<f64> {
        let costs: Vec<f64> = set
            .par_iter()
            .map(|ex| self.example_cost(ex))
            .collect::<Result<_>>()?;
        Ok(costs.iter().sum())
    }
}

/// Column-wise soft-max.
pub fn softmax_columns(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = logits.clone();
    for mut col in p.column_iter_mut() {
        let m = col.max();
        col.apply(|v| *v = (*v - m).exp());
        let s = col.sum();
        col /= s;
    }
    p
}

fn output_cost(y: &DMatrix<f64>, target: &SeqTarget) -> (f64, DMatrix<f64>) {
    match target {
        SeqTarget::Dense(t) => {
            let diff = y - t;
            (diff.norm_squared(), diff * 2.0)
        }
        SeqTarget::Tokens(toks) => {
            let mut p = softmax_columns(y);
            let mut cost = 0.0;
            for (t, &k) in toks.iter().enumerate() {
                cost -= p[(k, t)].ln();
                p[(k, t)] -= 1.0;
            }
            (cost, p)
        }
    }
}
