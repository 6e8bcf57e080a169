//! Adam with bias correction, per-parameter-group step multipliers and a
//! monotonicity guard (halve-step retries on objective increase).

use serde::{Deserialize, Serialize};

use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Refinement iterations per frame during initialization.
    pub iters_init: usize,
    /// Iterations of the object-only temporal stage.
    pub iters_stage1: usize,
    /// Iterations of the full joint temporal stage.
    pub iters_stage2: usize,
    /// Per-group step multipliers.
    pub lr_rotation: f64,
    pub lr_translation: f64,
    pub lr_articulation: f64,
    pub lr_scale: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            step_size: 8e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            iters_init: 120,
            iters_stage1: 25,
            iters_stage2: 60,
            lr_rotation: 1.0,
            lr_translation: 1.0,
            lr_articulation: 2.0,
            lr_scale: 0.5,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.step_size > 0.0) {
            return Err(PipelineError::Invalid {
                context: "adam config".into(),
                reason: format!("step_size must be positive, got {}", self.step_size),
            });
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(PipelineError::Invalid {
                    context: "adam config".into(),
                    reason: format!("{name} must be in [0, 1), got {b}"),
                });
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(PipelineError::Invalid {
                context: "adam config".into(),
                reason: "epsilon must be positive".into(),
            });
        }
        for (name, lr) in [
            ("lr_rotation", self.lr_rotation),
            ("lr_translation", self.lr_translation),
            ("lr_articulation", self.lr_articulation),
            ("lr_scale", self.lr_scale),
        ] {
            if !(lr >= 0.0) {
                return Err(PipelineError::Invalid {
                    context: "adam config".into(),
                    reason: format!("{name} must be >= 0, got {lr}"),
                });
            }
        }
        Ok(())
    }
}

/// First/second-moment state of one Adam run.
#[derive(Debug, Clone)]
pub struct Adam {
    step_size: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: &AdamConfig, dim: usize) -> Self {
        Adam {
            step_size: cfg.step_size,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// One bias-corrected update. `multipliers` scales the step per index
    /// (0 freezes a parameter entirely — its moments do not update either);
    /// `step_scale` is the guard's halving factor.
    pub fn step_scaled(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        multipliers: &[f64],
        step_scale: f64,
    ) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        assert_eq!(multipliers.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            if multipliers[i] == 0.0 {
                continue;
            }
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -=
                step_scale * multipliers[i] * self.step_size * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], multipliers: &[f64]) {
        self.step_scaled(params, grads, multipliers, 1.0);
    }

    fn snapshot(&self) -> (Vec<f64>, Vec<f64>, u64) {
        (self.m.clone(), self.v.clone(), self.t)
    }

    fn restore(&mut self, snap: &(Vec<f64>, Vec<f64>, u64)) {
        self.m.copy_from_slice(&snap.0);
        self.v.copy_from_slice(&snap.1);
        self.t = snap.2;
    }

    /// Forgets the moment estimates. The next step is then a pure
    /// sign-of-gradient step, which descends for a small enough scale.
    fn reset_moments(&mut self) {
        self.m.fill(0.0);
        self.v.fill(0.0);
        self.t = 0;
    }
}

/// What the monotonicity guard does when all halved retries still increase
/// the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuardMode {
    /// Roll the iteration back, forget the momentum (which may point
    /// uphill), and persistently halve a trust multiplier on every later
    /// proposal. Once the trust collapses no dyadic fraction of a gradient
    /// step improves the objective from the current point, so the run stops
    /// there: strictly monotone, and an exact no-op when started at such a
    /// point.
    Reject,
    /// Take the most-halved step anyway (escapes plateaus); the driver
    /// returns the best-seen parameters at the end.
    ForceAccept,
}

/// Halving schedule: the initial step plus three retries.
const GUARD_TRIES: usize = 4;

/// Reject-mode runs stop once the persistent trust multiplier falls below
/// this (17 consecutive rejected iterations).
const TRUST_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct DescentReport {
    /// Objective after each iteration (post-guard).
    pub losses: Vec<f64>,
    /// Iterations where every retry failed.
    pub rejected: usize,
    pub best_loss: f64,
}

/// Runs `iters` guarded Adam iterations in place. `eval(params, want_grad)`
/// returns the objective and, when asked, its gradient. After every
/// parameter write the 4-blocks listed in `quat_offsets` are renormalized.
pub fn guarded_descent(
    params: &mut Vec<f64>,
    multipliers: &[f64],
    quat_offsets: &[usize],
    adam: &mut Adam,
    iters: usize,
    mode: GuardMode,
    mut eval: impl FnMut(&[f64], bool) -> Result<(f64, Option<Vec<f64>>), PipelineError>,
) -> Result<DescentReport, PipelineError> {
    let mut report = DescentReport { losses: Vec::with_capacity(iters), rejected: 0, best_loss: f64::INFINITY };
    if iters == 0 {
        return Ok(report);
    }
    let (mut cur_loss, _) = eval(params, false)?;
    let mut best = params.clone();
    report.best_loss = cur_loss;
    let mut trust = 1.0f64;

    for _ in 0..iters {
        let (_, grads) = eval(params, true)?;
        let grads = grads.expect("eval must return gradients when asked");
        let park = params.clone();
        let state = adam.snapshot();
        let mut accepted = false;
        for attempt in 0..GUARD_TRIES {
            params.copy_from_slice(&park);
            adam.restore(&state);
            adam.step_scaled(params, &grads, multipliers, trust * 0.5f64.powi(attempt as i32));
            normalize_quat_blocks(params, quat_offsets);
            let (loss, _) = eval(params, false)?;
            if loss.is_finite() && loss < cur_loss {
                cur_loss = loss;
                accepted = true;
                break;
            }
            if attempt + 1 == GUARD_TRIES && mode == GuardMode::ForceAccept && loss.is_finite() {
                cur_loss = loss;
                accepted = true;
            }
        }
        if !accepted {
            params.copy_from_slice(&park);
            adam.restore(&state);
            report.rejected += 1;
        }
        if cur_loss < report.best_loss {
            report.best_loss = cur_loss;
            best.copy_from_slice(params);
        }
        report.losses.push(cur_loss);
        if mode == GuardMode::Reject {
            if accepted {
                trust = (2.0 * trust).min(1.0);
            } else {
                adam.reset_moments();
                trust *= 0.5;
                if trust < TRUST_FLOOR {
                    break;
                }
            }
        }
    }
    if mode == GuardMode::ForceAccept {
        params.copy_from_slice(&best);
    }
    Ok(report)
}

/// Normalizes each 4-component quaternion block in a flat parameter vector.
pub fn normalize_quat_blocks(params: &mut [f64], quat_offsets: &[usize]) {
    for &off in quat_offsets {
        let n = (params[off] * params[off]
            + params[off + 1] * params[off + 1]
            + params[off + 2] * params[off + 2]
            + params[off + 3] * params[off + 3])
            .sqrt();
        if n > 1e-12 {
            for k in 0..4 {
                params[off + k] /= n;
            }
        }
    }
}
