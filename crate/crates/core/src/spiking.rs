//! Spike-domain building blocks: Poisson rate encoding, parametric leaky
//! integrate-and-fire (PLIF) layers trained through a surrogate gradient, and
//! the non-spiking accumulator readout used by the output heads.
//!
//! Layer state lives on the [`Tape`]: every forward pass starts the membrane
//! (or accumulated potential) at its reset value, so consecutive samples or
//! batches never share state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DosaError, Result};
use crate::numerics::{Matrix, ParamId, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub timesteps: usize,
    /// Simulation step in milliseconds. Only recorded; dynamics are per-step.
    pub dt_ms: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            timesteps: 10,
            dt_ms: 1.0,
            seed: 0,
        }
    }
}

/// One Bernoulli draw per (timestep, sample, feature) with probability equal
/// to the feature value. Returns `timesteps` matrices shaped like `features`.
pub fn poisson_encode<R: Rng + ?Sized>(
    features: &Matrix,
    cfg: &EncoderConfig,
    rng: &mut R,
) -> Result<Vec<Matrix>> {
    if cfg.timesteps == 0 {
        return Err(DosaError::Config("encoder needs at least one timestep".into()));
    }
    for r in 0..features.rows() {
        for (c, &v) in features.row(r).iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(DosaError::Range { row: r, col: c, value: v });
            }
        }
    }
    let mut out = Vec::with_capacity(cfg.timesteps);
    for _ in 0..cfg.timesteps {
        let mut s = features.clone();
        for v in s.as_mut_slice() {
            *v = if rng.gen::<f64>() < *v { 1.0 } else { 0.0 };
        }
        out.push(s);
    }
    Ok(out)
}

/// Selects rows out of an encoded spike train.
pub fn select_spike_rows(spikes: &[Matrix], rows: &[usize]) -> Vec<Matrix> {
    spikes.iter().map(|s| s.select_rows(rows)).collect()
}

/// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn uniform_weights<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-bound..=bound))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlifConfig {
    pub v_threshold: f64,
    pub v_reset: f64,
    /// Width of the arctangent surrogate.
    pub surrogate_alpha: f64,
    /// Initial membrane time constant; stored as `w` with `1/tau = sigmoid(w)`.
    pub init_tau: f64,
}

impl Default for PlifConfig {
    fn default() -> Self {
        Self {
            v_threshold: 1.0,
            v_reset: 0.0,
            surrogate_alpha: 2.0,
            init_tau: 2.0,
        }
    }
}

/// How the threshold crossing is evaluated in the forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpikeFunction {
    /// Binary spikes; the surrogate is used only for gradients.
    #[default]
    Heaviside,
    /// The surrogate's smooth primitive in both passes. Used for gradient checks.
    Smooth,
}

/// Fully connected layer of PLIF neurons with one shared time constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlifLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub tau_raw: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
    pub cfg: PlifConfig,
    #[serde(default)]
    pub spike_fn: SpikeFunction,
}

/// Parameters of a [`PlifLayer`] loaded onto a tape for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct PlifVars {
    weight: Var,
    bias: Var,
    /// `sigmoid(w) = 1/tau`, 1×1.
    decay: Var,
}

impl PlifLayer {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        cfg: PlifConfig,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), uniform_weights(fan_in, fan_out, rng), true);
        let bias = store.add(format!("{name}.bias"), Matrix::zeros(1, fan_out), true);
        // sigmoid(w) = 1/tau  =>  w = -ln(tau - 1)
        let w0 = -(cfg.init_tau - 1.0).ln();
        let tau_raw = store.add(format!("{name}.tau_raw"), Matrix::scalar(w0), true);
        Self {
            weight,
            bias,
            tau_raw,
            fan_in,
            fan_out,
            cfg,
            spike_fn: SpikeFunction::Heaviside,
        }
    }

    pub fn tau(&self, store: &ParamStore) -> f64 {
        1.0 / crate::numerics::sigmoid(store.value(self.tau_raw).get(0, 0))
    }

    pub fn load(&self, tape: &mut Tape, store: &ParamStore) -> PlifVars {
        let weight = tape.param(store, self.weight);
        let bias = tape.param(store, self.bias);
        let raw = tape.param(store, self.tau_raw);
        let decay = tape.sigmoid(raw);
        PlifVars { weight, bias, decay }
    }

    /// Membrane at the start of a sample's simulation.
    pub fn initial_membrane(&self, tape: &mut Tape, batch: usize) -> Var {
        tape.constant(Matrix::filled(batch, self.fan_out, self.cfg.v_reset))
    }

    /// Synaptic current `x W + b` for one timestep of presynaptic spikes.
    pub fn input_current(&self, tape: &mut Tape, vars: &PlifVars, spikes: Var) -> Result<Var> {
        let xw = tape.matmul(spikes, vars.weight)?;
        tape.add_row(xw, vars.bias)
    }

    /// One charge / fire / hard-reset update. Returns `(spikes, membrane)`.
    pub fn step(&self, tape: &mut Tape, vars: &PlifVars, membrane: Var, current: Var) -> Result<(Var, Var)> {
        let PlifConfig {
            v_threshold,
            v_reset,
            surrogate_alpha,
            ..
        } = self.cfg;
        // H = V + (I - (V - V_reset)) / tau
        let drive = tape.sub(current, membrane)?;
        let drive = tape.affine(drive, 1.0, v_reset);
        let leak = tape.scale_by(vars.decay, drive)?;
        let h = tape.add(membrane, leak)?;

        let over = tape.affine(h, 1.0, -v_threshold);
        let s = match self.spike_fn {
            SpikeFunction::Heaviside => tape.spike(over, surrogate_alpha),
            SpikeFunction::Smooth => tape.smooth_spike(over, surrogate_alpha),
        };

        // V = H (1 - S) + V_reset S
        let keep = tape.affine(s, -1.0, 1.0);
        let mut v = tape.mul(h, keep)?;
        if v_reset != 0.0 {
            let reset = tape.affine(s, v_reset, 0.0);
            v = tape.add(v, reset)?;
        }
        Ok((s, v))
    }

    /// Runs the layer over a full spike train (one entry per timestep).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, inputs: &[Var]) -> Result<Vec<Var>> {
        let Some(&first) = inputs.first() else {
            return Ok(Vec::new());
        };
        let batch = tape.value(first).rows();
        let vars = self.load(tape, store);
        let mut v = self.initial_membrane(tape, batch);
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let i = self.input_current(tape, &vars, x)?;
            let (s, next) = self.step(tape, &vars, v, i)?;
            out.push(s);
            v = next;
        }
        Ok(out)
    }
}

/// Non-spiking readout: integrates its input current and reports the
/// time-average of `tanh` of the running potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccumulatorHead {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl AccumulatorHead {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), uniform_weights(fan_in, fan_out, rng), true);
        let bias = store.add(format!("{name}.bias"), Matrix::zeros(1, fan_out), true);
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    /// `P_t = P_{t-1} + s_t W + b` with `P_0 = 0`; output `(1/T) Σ_t tanh(P_t)`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(DosaError::Config("readout needs at least one timestep".into()));
        }
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let mut potential: Option<Var> = None;
        let mut acc: Option<Var> = None;
        for &s in inputs {
            let xw = tape.matmul(s, w)?;
            let current = tape.add_row(xw, b)?;
            let p = match potential {
                Some(p) => tape.add(p, current)?,
                None => current,
            };
            potential = Some(p);
            let th = tape.tanh(p);
            acc = Some(match acc {
                Some(a) => tape.add(a, th)?,
                None => th,
            });
        }
        let total = acc.expect("at least one timestep");
        Ok(tape.affine(total, 1.0 / inputs.len() as f64, 0.0))
    }
}
