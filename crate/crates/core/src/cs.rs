//! Correlation-shaping dereverberation.
//!
//! A multi-input single-output FIR equalizer is adapted on the linear
//! prediction residuals of the input channels so that the autocorrelation of
//! its output is small at long lags. Lags up to the don't-care limit are
//! ignored; lags beyond it are weighted by a decaying exponential. The
//! adapted equalizer is then applied to the original signals.

use log::debug;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

const MAX_HALVINGS: usize = 40;

fn fft_len(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

fn forward(x: &[f64], n: usize, planner: &mut FftPlanner<f64>) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::default());
    planner.plan_fft_forward(n).process(&mut buf);
    buf
}

fn inverse(mut buf: Vec<Complex64>, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = buf.len();
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// `R(τ) = Σ_n x(n) x(n - τ)` for `τ = 0..=tau_max`, samples outside the
/// signal being zero. Lags at or beyond the length are zero.
pub fn autocorr(x: &[f64], tau_max: usize) -> Vec<f64> {
    let mut out = vec![0.0; tau_max + 1];
    if x.is_empty() {
        return out;
    }
    let mut planner = FftPlanner::new();
    let n = fft_len(2 * x.len());
    let spec = forward(x, n, &mut planner);
    let r = inverse(spec.iter().map(|c| c * c.conj()).collect(), &mut planner);
    for (tau, o) in out.iter_mut().enumerate().take(x.len()) {
        *o = r[tau];
    }
    out
}

/// `R(k) = Σ_n y(n) x(n - k)` for `k` in `k_min..=k_max`.
pub fn cross_corr(y: &[f64], x: &[f64], k_min: isize, k_max: isize) -> Vec<f64> {
    let count = (k_max - k_min + 1).max(0) as usize;
    if y.is_empty() || x.is_empty() {
        return vec![0.0; count];
    }
    let mut planner = FftPlanner::new();
    let n = fft_len(y.len() + x.len());
    let fy = forward(y, n, &mut planner);
    let fx = forward(x, n, &mut planner);
    let r = inverse(
        fy.iter().zip(&fx).map(|(a, b)| a * b.conj()).collect(),
        &mut planner,
    );
    (k_min..=k_max)
        .map(|k| {
            // lags outside the support wrap onto zero padding
            if k >= y.len() as isize || -k >= x.len() as isize {
                0.0
            } else {
                r[k.rem_euclid(n as isize) as usize]
            }
        })
        .collect()
}

/// Full linear convolution, length `a.len() + b.len() - 1`.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let len = a.len() + b.len() - 1;
    if a.len().min(b.len()) <= 32 {
        let mut out = vec![0.0; len];
        for (i, &u) in a.iter().enumerate() {
            if u != 0.0 {
                for (j, &v) in b.iter().enumerate() {
                    out[i + j] += u * v;
                }
            }
        }
        return out;
    }
    let mut planner = FftPlanner::new();
    let n = fft_len(len);
    let fa = forward(a, n, &mut planner);
    let fb = forward(b, n, &mut planner);
    let mut r = inverse(
        fa.iter().zip(&fb).map(|(p, q)| p * q).collect(),
        &mut planner,
    );
    r.truncate(len);
    r
}

/// Linear predictor `x̂(n) = Σ_k a_k x(n - k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpModel {
    pub coefficients: Vec<f64>,
    /// Root of the final prediction-error power per sample.
    pub gain: f64,
}

impl LpModel {
    pub fn order(&self) -> usize {
        self.coefficients.len()
    }
}

/// Levinson-Durbin solution on autocorrelation lags `0..=order`. The
/// recursion stops early, leaving zero coefficients, when the prediction
/// error vanishes.
pub fn levinson(r: &[f64], order: usize) -> Result<LpModel> {
    if r.len() <= order {
        return Err(Error::Argument(format!(
            "need {} lags for order {order}",
            order + 1
        )));
    }
    if !(r[0] > 0.0) {
        return Err(Error::Degenerate(
            "zero-energy signal has no predictor".into(),
        ));
    }
    let mut a = vec![0.0; order];
    let mut err = r[0];
    for i in 0..order {
        if err <= 1e-14 * r[0] {
            break;
        }
        let acc: f64 = (0..i).map(|j| a[j] * r[i - j]).sum();
        let k = (r[i + 1] - acc) / err;
        let prev = a.clone();
        a[i] = k;
        for j in 0..i {
            a[j] = prev[j] - k * prev[i - 1 - j];
        }
        err *= 1.0 - k * k;
    }
    Ok(LpModel {
        coefficients: a,
        gain: err.max(0.0).sqrt(),
    })
}

/// Prediction residual `e(n) = x(n) - Σ a_k x(n - k)` with a model fitted
/// to the whole signal.
pub fn lp_residual(x: &[f64], order: usize) -> Result<(Vec<f64>, LpModel)> {
    if x.len() <= order {
        return Err(Error::Argument(format!(
            "signal of {} samples is too short for order {order}",
            x.len()
        )));
    }
    if x.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate(
            "zero-energy signal has no predictor".into(),
        ));
    }
    let model = levinson(&autocorr(x, order), order)?;
    Ok((lp_inverse_filter(x, &model), model))
}

pub fn lp_inverse_filter(x: &[f64], model: &LpModel) -> Vec<f64> {
    (0..x.len())
        .map(|n| {
            let pred: f64 = model
                .coefficients
                .iter()
                .enumerate()
                .take(n)
                .map(|(k, a)| a * x[n - 1 - k])
                .sum();
            x[n] - pred
        })
        .collect()
}

/// Inverse of [`lp_inverse_filter`].
pub fn lp_synthesis(e: &[f64], model: &LpModel) -> Vec<f64> {
    let mut x = vec![0.0; e.len()];
    for n in 0..e.len() {
        let pred: f64 = model
            .coefficients
            .iter()
            .enumerate()
            .take(n)
            .map(|(k, a)| a * x[n - 1 - k])
            .sum();
        x[n] = e[n] + pred;
    }
    x
}

/// `y(n) = Σ_m Σ_l g_m(l) x_m(n - l)` over the full convolution support,
/// `N + L - 1` samples.
pub fn miso_filter_full(g: &DMatrix<f64>, x: &[Vec<f64>]) -> Result<Vec<f64>> {
    if g.nrows() != x.len() {
        return Err(Error::Argument(format!(
            "equalizer has {} channels, input has {}",
            g.nrows(),
            x.len()
        )));
    }
    let n = x.first().map_or(0, Vec::len);
    if x.iter().any(|c| c.len() != n) {
        return Err(Error::Data("channels differ in length".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut y = vec![0.0; n + g.ncols() - 1];
    for (m, xm) in x.iter().enumerate() {
        let taps: Vec<f64> = g.row(m).iter().copied().collect();
        let nonzero: Vec<(usize, f64)> = taps
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, v)| v != 0.0)
            .collect();
        if nonzero.len() <= 32 {
            // sparse taps (e.g. an identity equalizer) are applied exactly
            for (l, v) in nonzero {
                for (acc, s) in y[l..].iter_mut().zip(xm) {
                    *acc += v * s;
                }
            }
            continue;
        }
        for (acc, v) in y.iter_mut().zip(convolve(&taps, xm)) {
            *acc += v;
        }
    }
    Ok(y)
}

/// [`miso_filter_full`] truncated to the input length (zero history).
pub fn miso_filter(g: &DMatrix<f64>, x: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = x.first().map_or(0, Vec::len);
    let mut y = miso_filter_full(g, x)?;
    y.truncate(n);
    Ok(y)
}

/// Lag weights `W(τ)`: zero up to and including the don't-care limit,
/// `exp(-α(τ - τ_dc))` up to `τ_max` with `W(τ_max) = floor`, zero beyond.
#[derive(Debug, Clone, PartialEq)]
pub struct LagWeights {
    pub dont_care: usize,
    pub tau_max: usize,
    weights: Vec<f64>,
}

impl LagWeights {
    pub fn exponential(dont_care: usize, tau_max: usize, floor: f64) -> Result<Self> {
        if tau_max <= dont_care {
            return Err(Error::Config(format!(
                "maximum lag {tau_max} must exceed the don't-care limit {dont_care}"
            )));
        }
        if !(floor > 0.0 && floor <= 1.0) {
            return Err(Error::Config(format!(
                "weight floor {floor} must be in (0, 1]"
            )));
        }
        let alpha = -floor.ln() / (tau_max - dont_care) as f64;
        let weights = (0..=tau_max)
            .map(|tau| {
                if tau <= dont_care {
                    0.0
                } else {
                    (-alpha * (tau - dont_care) as f64).exp()
                }
            })
            .collect();
        Ok(Self {
            dont_care,
            tau_max,
            weights,
        })
    }

    pub fn get(&self, tau: usize) -> f64 {
        self.weights.get(tau).copied().unwrap_or(0.0)
    }

    /// Lags with nonzero weight.
    pub fn shaped(&self) -> std::ops::RangeInclusive<usize> {
        self.dont_care + 1..=self.tau_max
    }

    /// `E = Σ_τ W(τ) R(τ)²`.
    pub fn objective(&self, ryy: &[f64]) -> f64 {
        self.shaped()
            .map(|tau| self.get(tau) * ryy.get(tau).copied().unwrap_or(0.0).powi(2))
            .sum()
    }
}

/// Output autocorrelation and output-input cross-correlations for one
/// equalizer setting.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationState {
    /// `R_yy(τ)` for `τ = 0..=τ_max`.
    pub ryy: Vec<f64>,
    /// Per channel, `R_yx(k)` for `k = -τ_max ..= L - 1 + τ_max`.
    pub ryx: Vec<Vec<f64>>,
    pub tau_max: usize,
    pub taps: usize,
    pub samples: usize,
}

impl CorrelationState {
    pub fn compute(y: &[f64], x: &[Vec<f64>], taps: usize, tau_max: usize) -> Self {
        let t = tau_max as isize;
        Self {
            ryy: autocorr(y, tau_max),
            ryx: x
                .iter()
                .map(|xm| cross_corr(y, xm, -t, taps as isize - 1 + t))
                .collect(),
            tau_max,
            taps,
            samples: y.len(),
        }
    }

    fn ryx_at(&self, m: usize, k: isize) -> f64 {
        self.ryx[m][(k + self.tau_max as isize) as usize]
    }
}

/// `∇_m(l) = Σ_τ W(τ) R_yy(τ) (R_yx_m(l - τ) + R_yx_m(l + τ))`, half the
/// derivative of the weighted objective.
pub fn cs_gradient(state: &CorrelationState, weights: &LagWeights) -> DMatrix<f64> {
    let m_ch = state.ryx.len();
    let coef: Vec<(isize, f64)> = weights
        .shaped()
        .filter(|&tau| tau <= state.tau_max)
        .map(|tau| (tau as isize, weights.get(tau) * state.ryy[tau]))
        .filter(|&(_, c)| c != 0.0)
        .collect();
    DMatrix::from_fn(m_ch, state.taps, |m, l| {
        let l = l as isize;
        coef.iter()
            .map(|&(tau, c)| c * (state.ryx_at(m, l - tau) + state.ryx_at(m, l + tau)))
            .sum()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsConfig {
    /// Taps per channel.
    pub eq_len: usize,
    pub dont_care: usize,
    pub tau_max: usize,
    /// Relative weight at `tau_max`.
    pub weight_floor: f64,
    pub mu: f64,
    pub max_iters: usize,
    /// Stop when the relative objective decrease of an accepted step falls
    /// below this.
    pub tol: f64,
    pub lp_order: usize,
    /// Channel whose centre tap starts at one; `None` picks the channel with
    /// the most energy.
    pub reference_channel: Option<usize>,
}

impl Default for CsConfig {
    /// 62.5 ms equalizers, an 18.7 ms don't-care region and τ_max = 62.5 ms
    /// at 16 kHz.
    fn default() -> Self {
        Self {
            eq_len: 1000,
            dont_care: 300,
            tau_max: 1000,
            weight_floor: 0.1,
            mu: 5e-3,
            max_iters: 500,
            tol: 1e-8,
            lp_order: 16,
            reference_channel: Some(0),
        }
    }
}

impl CsConfig {
    /// Millisecond settings converted at `sample_rate`.
    pub fn from_ms(eq_ms: f64, dont_care_ms: f64, tau_max_ms: f64, sample_rate: u32) -> Self {
        let s = |ms: f64| (ms * f64::from(sample_rate) / 1000.0).round() as usize;
        Self {
            eq_len: s(eq_ms),
            dont_care: s(dont_care_ms),
            tau_max: s(tau_max_ms),
            ..Self::default()
        }
    }

    pub fn weights(&self) -> Result<LagWeights> {
        LagWeights::exponential(self.dont_care, self.tau_max, self.weight_floor)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eq_len == 0 {
            return Err(Error::Config("equalizer needs at least one tap".into()));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!(
                "step size {} must be finite and nonnegative",
                self.mu
            )));
        }
        self.weights().map(|_| ())
    }
}

/// Equalizer taps (`M × L`) and the delay introduced by the initial tap.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualizerBank {
    pub g: DMatrix<f64>,
    pub delay: usize,
}

impl EqualizerBank {
    /// Unit centre tap on `reference`, zeros elsewhere.
    pub fn identity(channels: usize, taps: usize, reference: usize) -> Self {
        let delay = taps / 2;
        let mut g = DMatrix::zeros(channels, taps);
        g[(reference, delay)] = 1.0;
        Self { g, delay }
    }

    /// Filters `x` and removes the equalizer delay, keeping the input length.
    pub fn apply(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        let n = x.first().map_or(0, Vec::len);
        let y = miso_filter_full(&self.g, x)?;
        Ok((0..n)
            .map(|i| y.get(i + self.delay).copied().unwrap_or(0.0))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    /// Objective before adaptation and after every accepted step.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub final_mu: f64,
    /// `R_yy(0)` that every accepted equalizer is scaled to.
    pub energy: f64,
}

fn pick_reference(x: &[Vec<f64>], cfg: &CsConfig) -> Result<usize> {
    match cfg.reference_channel {
        Some(r) if r < x.len() => Ok(r),
        Some(r) => Err(Error::Config(format!("reference channel {r} out of range"))),
        None => Ok(x
            .iter()
            .map(|c| c.iter().map(|v| v * v).sum::<f64>())
            .enumerate()
            .fold(
                (0, f64::MIN),
                |best, (i, e)| if e > best.1 { (i, e) } else { best },
            )
            .0),
    }
}

struct Evaluation {
    y: Vec<f64>,
    ryy: Vec<f64>,
    objective: f64,
}

fn evaluate(g: &DMatrix<f64>, x: &[Vec<f64>], weights: &LagWeights) -> Result<Evaluation> {
    let y = miso_filter_full(g, x)?;
    let ryy = autocorr(&y, weights.tau_max);
    let objective = weights.objective(&ryy);
    Ok(Evaluation { y, ryy, objective })
}

/// Adapts the equalizer by normalised gradient descent on the weighted
/// long-lag autocorrelation energy of the filtered residuals. After each
/// step the taps are rescaled so that `R_yy(0)` keeps its initial value. A
/// step that would increase the objective is retried with half the step
/// size.
pub fn cs_adapt(residuals: &[Vec<f64>], cfg: &CsConfig) -> Result<(EqualizerBank, AdaptReport)> {
    cfg.validate()?;
    if residuals.is_empty() {
        return Err(Error::Argument("no input channels".into()));
    }
    let weights = cfg.weights()?;
    let reference = pick_reference(residuals, cfg)?;
    let mut bank = EqualizerBank::identity(residuals.len(), cfg.eq_len, reference);
    let mut cur = evaluate(&bank.g, residuals, &weights)?;
    let energy = cur.ryy[0];
    if !(energy > 0.0) {
        return Err(Error::Degenerate("reference channel has no energy".into()));
    }
    if !cur.objective.is_finite() {
        return Err(Error::Adaptation("initial objective is not finite".into()));
    }
    let mut report = AdaptReport {
        objective: vec![cur.objective],
        iterations: 0,
        final_mu: cfg.mu,
        energy,
    };
    let mut mu = cfg.mu;
    for iter in 0..cfg.max_iters {
        report.iterations = iter + 1;
        let state = CorrelationState::compute(&cur.y, residuals, cfg.eq_len, cfg.tau_max);
        let grad = cs_gradient(&state, &weights);
        let norm = grad.norm();
        if !norm.is_finite() {
            return Err(Error::Adaptation(format!(
                "gradient is not finite at iteration {iter}"
            )));
        }
        if norm == 0.0 {
            break;
        }
        let direction = grad / norm;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let mut g = &bank.g - &direction * mu;
            let mut trial = evaluate(&g, residuals, &weights)?;
            if !(trial.ryy[0] > 0.0) {
                mu *= 0.5;
                continue;
            }
            let s = (energy / trial.ryy[0]).sqrt();
            g *= s;
            trial.y.iter_mut().for_each(|v| *v *= s);
            trial.ryy.iter_mut().for_each(|v| *v *= s * s);
            trial.objective *= s.powi(4);
            if !trial.objective.is_finite() {
                return Err(Error::Adaptation(format!(
                    "objective is not finite at iteration {iter}"
                )));
            }
            if trial.objective <= cur.objective {
                accepted = Some((g, trial));
                break;
            }
            mu *= 0.5;
        }
        let Some((g, trial)) = accepted else {
            debug!("no decreasing step after {MAX_HALVINGS} halvings; stopping");
            break;
        };
        let rel = (cur.objective - trial.objective) / cur.objective.max(f64::MIN_POSITIVE);
        bank.g = g;
        cur = trial;
        report.objective.push(cur.objective);
        if rel < cfg.tol {
            break;
        }
    }
    report.final_mu = mu;
    debug!(
        "correlation shaping: objective {:.4e} -> {:.4e} in {} iterations",
        report.objective[0], cur.objective, report.iterations
    );
    Ok((bank, report))
}

/// Adapts on the prediction residuals of every channel and applies the
/// equalizer to the original channels. The output is aligned with the
/// input and has its length.
pub fn cs_dereverb_signals(x: &[Vec<f64>], cfg: &CsConfig) -> Result<(Vec<f64>, AdaptReport)> {
    if x.is_empty() {
        return Err(Error::Argument("no input channels".into()));
    }
    let residuals: Vec<Vec<f64>> = x
        .iter()
        .map(|c| lp_residual(c, cfg.lp_order).map(|(e, _)| e))
        .collect::<Result<_>>()?;
    let (bank, report) = cs_adapt(&residuals, cfg)?;
    Ok((bank.apply(x)?, report))
}

pub fn cs_dereverb(input: &AudioBuffer, cfg: &CsConfig) -> Result<(AudioBuffer, AdaptReport)> {
    let (y, report) = cs_dereverb_signals(input.channels(), cfg)?;
    Ok((AudioBuffer::mono(input.sample_rate(), y)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, len: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn direct_autocorr(x: &[f64], tau_max: usize) -> Vec<f64> {
        (0..=tau_max)
            .map(|t| (t..x.len()).map(|n| x[n] * x[n - t]).sum())
            .collect()
    }

    #[test]
    fn autocorr_closed_forms() {
        let mut imp = vec![0.0; 10];
        imp[0] = 1.0;
        assert_eq!(autocorr(&imp, 5)[0], 1.0);
        assert!(autocorr(&imp, 5)[1..].iter().all(|v| v.abs() < 1e-15));
        let ones = vec![1.0; 20];
        for (t, r) in autocorr(&ones, 25).iter().enumerate() {
            let expect = 20usize.saturating_sub(t) as f64;
            assert!((r - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn autocorr_matches_direct_sum() {
        let x = noise(3, 700);
        let fast = autocorr(&x, 200);
        let slow = direct_autocorr(&x, 200);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-9);
        }
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        for (a, b) in autocorr(&rev, 200).iter().zip(&fast) {
            assert!((a - b).abs() < 1e-12 * fast[0]);
        }
    }

    #[test]
    fn cross_corr_matches_direct_sum() {
        let y = noise(1, 40);
        let x = noise(2, 30);
        let r = cross_corr(&y, &x, -35, 45);
        for (i, k) in (-35isize..=45).enumerate() {
            let expect: f64 = (0..y.len() as isize)
                .filter(|n| n - k >= 0 && ((n - k) as usize) < x.len())
                .map(|n| y[n as usize] * x[(n - k) as usize])
                .sum();
            assert!((r[i] - expect).abs() < 1e-12, "k = {k}");
        }
    }

    #[test]
    fn levinson_white_and_ar2() {
        let x = noise(7, 32000);
        let (e, _) = lp_residual(&x, 16).unwrap();
        let var = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64;
        assert!((var(&e) / var(&x) - 1.0).abs() < 0.1);

        let innov = noise(8, 20000);
        let mut ar = vec![0.0; innov.len()];
        for n in 0..ar.len() {
            let p1 = if n >= 1 { ar[n - 1] } else { 0.0 };
            let p2 = if n >= 2 { ar[n - 2] } else { 0.0 };
            ar[n] = innov[n] + 1.3 * p1 - 0.6 * p2;
        }
        let (e, model) = lp_residual(&ar, 4).unwrap();
        assert!((model.coefficients[0] - 1.3).abs() < 0.05);
        assert!((model.coefficients[1] + 0.6).abs() < 0.05);
        let corr = {
            let dot: f64 = e.iter().zip(&innov).map(|(a, b)| a * b).sum();
            dot / (var(&e) * var(&innov)).sqrt() / e.len() as f64
        };
        assert!(corr >= 0.99, "{corr}");

        let back = lp_synthesis(&e, &model);
        assert!(back.iter().zip(&ar).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn lp_edge_cases() {
        let x = noise(1, 100);
        let (e, m) = lp_residual(&x, 0).unwrap();
        assert_eq!(e, x);
        assert_eq!(m.order(), 0);
        assert!(matches!(
            lp_residual(&[0.0; 50], 4),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(lp_residual(&x[..3], 4), Err(Error::Argument(_))));
    }

    #[test]
    fn miso_identity_zero_and_direct() {
        let x = vec![noise(1, 50), noise(2, 50)];
        let mut g = DMatrix::zeros(2, 8);
        assert!(miso_filter(&g, &x).unwrap().iter().all(|&v| v == 0.0));
        g[(0, 0)] = 1.0;
        assert_eq!(miso_filter(&g, &x).unwrap(), x[0]);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = DMatrix::from_fn(2, 8, |_, _| rng.random_range(-1.0..1.0));
        let y = miso_filter(&g, &x).unwrap();
        for n in 0..50 {
            let mut expect = 0.0;
            for m in 0..2 {
                for l in 0..8.min(n + 1) {
                    expect += g[(m, l)] * x[m][n - l];
                }
            }
            assert!((y[n] - expect).abs() < 1e-12);
        }

        let bank = EqualizerBank::identity(2, 9, 1);
        assert_eq!(bank.apply(&x).unwrap(), x[1]);
        assert!(miso_filter(&DMatrix::zeros(3, 2), &x).is_err());
    }

    #[test]
    fn weights_shape() {
        let w = LagWeights::exponential(300, 1000, 0.1).unwrap();
        assert_eq!(w.get(300), 0.0);
        assert_eq!(w.get(301), (-(10f64.ln()) / 700.0).exp());
        assert!((w.get(1000) - 0.1).abs() < 1e-12);
        assert_eq!(w.get(1001), 0.0);
        assert!(LagWeights::exponential(10, 10, 0.1).is_err());
    }

    #[test]
    fn zero_long_lag_correlation_means_zero_gradient() {
        let mut imp = vec![0.0; 64];
        imp[0] = 1.0;
        let x = vec![imp];
        let bank = EqualizerBank::identity(1, 4, 0);
        let y = miso_filter_full(&bank.g, &x).unwrap();
        let st = CorrelationState::compute(&y, &x, 4, 20);
        let w = LagWeights::exponential(5, 20, 0.1).unwrap();
        assert!(cs_gradient(&st, &w).iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn single_tap_tiny_case_by_hand() {
        // L = 1, y = g x, so R_yy(τ) = g² R_xx(τ) and R_yx(±τ) = g R_xx(τ).
        let x = vec![1.0, -2.0, 0.5, 3.0, -1.0, 0.0, 2.0, 1.0];
        let g = 0.7;
        let gm = DMatrix::from_element(1, 1, g);
        let xs = vec![x.clone()];
        let y = miso_filter_full(&gm, &xs).unwrap();
        let st = CorrelationState::compute(&y, &xs, 1, 4);
        let w = LagWeights::exponential(1, 4, 0.5).unwrap();
        let r = direct_autocorr(&x, 4);
        let expect: f64 = (2..=4)
            .map(|t| w.get(t) * g * g * r[t] * 2.0 * g * r[t])
            .sum();
        let got = cs_gradient(&st, &w)[(0, 0)];
        assert!((got - expect).abs() < 1e-12 * expect.abs().max(1.0));
    }

    #[test]
    fn zero_step_keeps_equalizer() {
        let x = vec![noise(5, 3000)];
        let cfg = CsConfig {
            eq_len: 16,
            dont_care: 10,
            tau_max: 40,
            mu: 0.0,
            max_iters: 5,
            ..CsConfig::default()
        };
        let (bank, report) = cs_adapt(&x, &cfg).unwrap();
        assert_eq!(bank, EqualizerBank::identity(1, 16, 0));
        assert!(report.objective.iter().all(|&e| e == report.objective[0]));
    }

    #[test]
    fn zero_iterations_return_reference() {
        let x = vec![noise(5, 3000), noise(6, 3000)];
        let cfg = CsConfig {
            eq_len: 64,
            dont_care: 10,
            tau_max: 80,
            max_iters: 0,
            ..CsConfig::default()
        };
        let (y, _) = cs_dereverb_signals(&x, &cfg).unwrap();
        assert_eq!(y, x[0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn autocorr_bounded_by_energy(seed in 0u64..1000, len in 2usize..300) {
            let x = noise(seed, len);
            let r = autocorr(&x, len - 1);
            prop_assert!(r.iter().all(|v| v.abs() <= r[0] * (1.0 + 1e-12)));
        }

        #[test]
        fn accepted_steps_never_increase(seed in 0u64..50) {
            let x = vec![noise(seed, 600), noise(seed + 100, 600)];
            let cfg = CsConfig {
                eq_len: 8,
                dont_care: 4,
                tau_max: 30,
                mu: 0.05,
                max_iters: 15,
                ..CsConfig::default()
            };
            let (bank, report) = cs_adapt(&x, &cfg).unwrap();
            prop_assert!(report.objective.windows(2).all(|w| w[1] <= w[0]));
            let y = miso_filter_full(&bank.g, &x).unwrap();
            let r0 = autocorr(&y, 0)[0];
            prop_assert!((r0 - report.energy).abs() <= 1e-9 * report.energy);
        }
    }
}
