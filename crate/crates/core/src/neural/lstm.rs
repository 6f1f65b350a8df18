use nalgebra::{DMatrix, DVector, DVectorView};
use rand::Rng;

use super::sigmoid;
use crate::error::{Error, Result};

/// Gate blocks inside the stacked `4H` pre-activation, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Cell = 2,
    Output = 3,
}

/// One LSTM direction.
///
/// Input and recurrent weights for the four gates are stacked row-wise in
/// [`Gate`] order, so `wx` is `4H × I` and `wh` is `4H × H`. Cell-to-gate
/// (peephole) weights are diagonal and stored as vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub wx: DMatrix<f64>,
    pub wh: DMatrix<f64>,
    pub peep_i: DVector<f64>,
    pub peep_f: DVector<f64>,
    pub peep_o: DVector<f64>,
    pub bias: DVector<f64>,
}

/// Recurrent state `(h, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: DVector<f64>,
    pub c: DVector<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: DVector::zeros(hidden),
            c: DVector::zeros(hidden),
        }
    }
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            wx: DMatrix::zeros(4 * hidden_dim, input_dim),
            wh: DMatrix::zeros(4 * hidden_dim, hidden_dim),
            peep_i: DVector::zeros(hidden_dim),
            peep_f: DVector::zeros(hidden_dim),
            peep_o: DVector::zeros(hidden_dim),
            bias: DVector::zeros(4 * hidden_dim),
        }
    }

    /// Uniform weights in `[-scale, scale]`; forget-gate bias starts at +1.
    pub fn random<R: Rng>(input_dim: usize, hidden_dim: usize, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        for s in p.slices_mut() {
            s.iter_mut()
                .for_each(|v| *v = rng.random_range(-scale..=scale));
        }
        p.bias
            .rows_mut(Gate::Forget as usize * hidden_dim, hidden_dim)
            .add_scalar_mut(1.0);
        p
    }

    pub fn input_dim(&self) -> usize {
        self.wx.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.wh.ncols()
    }

    pub fn gate_input_weights(&self, gate: Gate) -> nalgebra::DMatrixView<'_, f64> {
        let h = self.hidden_dim();
        self.wx.rows(gate as usize * h, h)
    }

    pub fn gate_recurrent_weights(&self, gate: Gate) -> nalgebra::DMatrixView<'_, f64> {
        let h = self.hidden_dim();
        self.wh.rows(gate as usize * h, h)
    }

    pub fn gate_bias(&self, gate: Gate) -> DVectorView<'_, f64> {
        let h = self.hidden_dim();
        self.bias.rows(gate as usize * h, h)
    }

    pub(crate) fn slices(&self) -> [&[f64]; 6] {
        [
            self.wx.as_slice(),
            self.wh.as_slice(),
            self.peep_i.as_slice(),
            self.peep_f.as_slice(),
            self.peep_o.as_slice(),
            self.bias.as_slice(),
        ]
    }

    pub(crate) fn slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.wx.as_mut_slice(),
            self.wh.as_mut_slice(),
            self.peep_i.as_mut_slice(),
            self.peep_f.as_mut_slice(),
            self.peep_o.as_mut_slice(),
            self.bias.as_mut_slice(),
        ]
    }

    fn check(&self) -> Result<()> {
        let h = self.hidden_dim();
        let ok = self.wx.nrows() == 4 * h
            && self.wh.nrows() == 4 * h
            && self.peep_i.len() == h
            && self.peep_f.len() == h
            && self.peep_o.len() == h
            && self.bias.len() == 4 * h;
        if ok {
            Ok(())
        } else {
            Err(Error::Argument("inconsistent LSTM parameter shapes".into()))
        }
    }

    /// Runs the recurrence over pre-projected inputs `zx = Wx·x + b`
    /// (`4H × T`) and records everything the backward pass needs.
    pub(crate) fn run(&self, zx: &DMatrix<f64>, init: &LstmState) -> LstmTrace {
        let h_dim = self.hidden_dim();
        let t_len = zx.ncols();
        let mut tr = LstmTrace {
            i: DMatrix::zeros(h_dim, t_len),
            f: DMatrix::zeros(h_dim, t_len),
            g: DMatrix::zeros(h_dim, t_len),
            o: DMatrix::zeros(h_dim, t_len),
            c: DMatrix::zeros(h_dim, t_len),
            tc: DMatrix::zeros(h_dim, t_len),
            h: DMatrix::zeros(h_dim, t_len),
            init: init.clone(),
        };
        let mut h_prev = init.h.clone();
        let mut c_prev = init.c.clone();
        let mut z = DVector::zeros(4 * h_dim);
        for t in 0..t_len {
            z.copy_from(&zx.column(t));
            z.gemv(1.0, &self.wh, &h_prev, 1.0);
            for k in 0..h_dim {
                let i = sigmoid(z[k] + self.peep_i[k] * c_prev[k]);
                let f = sigmoid(z[h_dim + k] + self.peep_f[k] * c_prev[k]);
                let g = z[2 * h_dim + k].tanh();
                let c = f * c_prev[k] + i * g;
                let o = sigmoid(z[3 * h_dim + k] + self.peep_o[k] * c);
                let tc = c.tanh();
                let h = o * tc;
                tr.i[(k, t)] = i;
                tr.f[(k, t)] = f;
                tr.g[(k, t)] = g;
                tr.o[(k, t)] = o;
                tr.c[(k, t)] = c;
                tr.tc[(k, t)] = tc;
                tr.h[(k, t)] = h;
                c_prev[k] = c;
            }
            h_prev.copy_from(&tr.h.column(t));
        }
        tr
    }

    /// Back-propagates `dh` (`H × T`, loss gradient w.r.t. the hidden
    /// outputs) through time. Accumulates recurrent, peephole and bias
    /// gradients into `grad` and returns the gradient w.r.t. `zx`.
    pub(crate) fn backward(
        &self,
        trace: &LstmTrace,
        dh_out: &DMatrix<f64>,
        grad: &mut LstmParams,
    ) -> DMatrix<f64> {
        let h_dim = self.hidden_dim();
        let t_len = trace.h.ncols();
        let mut dz = DMatrix::zeros(4 * h_dim, t_len);
        let mut dh_next = DVector::zeros(h_dim);
        let mut dc_next = DVector::<f64>::zeros(h_dim);
        let mut dzt = DVector::zeros(4 * h_dim);
        for t in (0..t_len).rev() {
            for k in 0..h_dim {
                let (i, f, g, o) = (
                    trace.i[(k, t)],
                    trace.f[(k, t)],
                    trace.g[(k, t)],
                    trace.o[(k, t)],
                );
                let c = trace.c[(k, t)];
                let tc = trace.tc[(k, t)];
                let c_prev = if t > 0 {
                    trace.c[(k, t - 1)]
                } else {
                    trace.init.c[k]
                };

                let dh = dh_out[(k, t)] + dh_next[k];
                let da_o = dh * tc * o * (1.0 - o);
                let dc = dc_next[k] + dh * o * (1.0 - tc * tc) + da_o * self.peep_o[k];
                let da_i = dc * g * i * (1.0 - i);
                let da_g = dc * i * (1.0 - g * g);
                let da_f = dc * c_prev * f * (1.0 - f);

                dc_next[k] = dc * f + da_i * self.peep_i[k] + da_f * self.peep_f[k];
                grad.peep_i[k] += da_i * c_prev;
                grad.peep_f[k] += da_f * c_prev;
                grad.peep_o[k] += da_o * c;

                dzt[k] = da_i;
                dzt[h_dim + k] = da_f;
                dzt[2 * h_dim + k] = da_g;
                dzt[3 * h_dim + k] = da_o;
            }
            dz.set_column(t, &dzt);
            dh_next.gemv_tr(1.0, &self.wh, &dzt, 0.0);
            let h_prev = if t > 0 {
                trace.h.column(t - 1).into_owned()
            } else {
                trace.init.h.clone()
            };
            grad.wh.ger(1.0, &dzt, &h_prev, 1.0);
        }
        grad.bias += dz.column_sum();
        dz
    }
}

/// Per-step activations recorded by the forward pass.
#[derive(Debug, Clone)]
pub(crate) struct LstmTrace {
    pub i: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub o: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub tc: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub init: LstmState,
}

fn check_input(params: &LstmParams, x: &DMatrix<f64>) -> Result<()> {
    params.check()?;
    if x.nrows() != params.input_dim() {
        return Err(Error::Argument(format!(
            "input frames have {} entries, layer expects {}",
            x.nrows(),
            params.input_dim()
        )));
    }
    Ok(())
}

pub(crate) fn project(wx: &DMatrix<f64>, bias: &DVector<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = wx * x;
    for mut col in z.column_iter_mut() {
        col += bias;
    }
    z
}

/// Unidirectional LSTM over `x` (`I × T`) from the given initial state.
/// Returns the hidden and cell sequences, both `H × T`.
pub fn lstm_forward(
    params: &LstmParams,
    x: &DMatrix<f64>,
    init: &LstmState,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_input(params, x)?;
    let h = params.hidden_dim();
    if init.h.len() != h || init.c.len() != h {
        return Err(Error::Argument(
            "initial state size differs from hidden size".into(),
        ));
    }
    let tr = params.run(&project(&params.wx, &params.bias, x), init);
    Ok((tr.h, tr.c))
}

pub(crate) fn reverse_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let t = m.ncols();
    DMatrix::from_fn(m.nrows(), t, |r, c| m[(r, t - 1 - c)])
}

/// Bidirectional LSTM: forward and time-reversed passes from zero state,
/// concatenated per frame as `[h_fwd; h_bwd]`.
pub fn blstm_forward(fwd: &LstmParams, bwd: &LstmParams, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_input(fwd, x)?;
    check_input(bwd, x)?;
    let (hf, _) = lstm_forward(fwd, x, &LstmState::zeros(fwd.hidden_dim()))?;
    let (hb, _) = lstm_forward(
        bwd,
        &reverse_columns(x),
        &LstmState::zeros(bwd.hidden_dim()),
    )?;
    let hb = reverse_columns(&hb);
    let mut out = DMatrix::zeros(hf.nrows() + hb.nrows(), x.ncols());
    out.rows_mut(0, hf.nrows()).copy_from(&hf);
    out.rows_mut(hf.nrows(), hb.nrows()).copy_from(&hb);
    Ok(out)
}
