//! Deterministic DDIM generator with step jumps.
//!
//! The sampler visits `T, T − δt, …` down to the last positive step, then
//! lands on `t = 0` where `ᾱ_0 ≡ 1`, so the final state is `x̂_0` itself.
//! Every step is affine in the current state and the predicted noise:
//!
//! ```text
//! z' = c₁ z + c₂ ε(z, t),   c₁ = √(ᾱ'/ᾱ),   c₂ = √(1 − ᾱ') − c₁ √(1 − ᾱ)
//! ```
//!
//! which gives the reverse-mode adjoint directly: `g ← c₁ g + Jᵀ(c₂ g)`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::prior::{NoiseSchedule, ScoreModel};
use crate::tensor::Tensor3;

#[derive(Clone)]
pub struct SamplerConfig {
    schedule: NoiseSchedule,
    model: Arc<dyn ScoreModel>,
    delta_t: usize,
}

impl std::fmt::Debug for SamplerConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SamplerConfig")
            .field("steps", &self.schedule.steps())
            .field("delta_t", &self.delta_t)
            .finish_non_exhaustive()
    }
}

/// One jump `t → t_next` with its affine coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jump {
    pub t: usize,
    pub t_next: usize,
    pub c_state: f64,
    pub c_noise: f64,
}

impl SamplerConfig {
    pub fn new(schedule: NoiseSchedule, model: Arc<dyn ScoreModel>, delta_t: usize) -> Result<Self> {
        if delta_t == 0 || delta_t > schedule.steps() {
            return Err(Error::config(
                "delta_t",
                format!("must lie in 1..={}, got {delta_t}", schedule.steps()),
            ));
        }
        Ok(Self {
            schedule,
            model,
            delta_t,
        })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn model(&self) -> &dyn ScoreModel {
        self.model.as_ref()
    }

    pub fn delta_t(&self) -> usize {
        self.delta_t
    }

    /// Same model and schedule, different step increment.
    pub fn with_delta_t(&self, delta_t: usize) -> Result<Self> {
        Self::new(self.schedule.clone(), self.model.clone(), delta_t)
    }

    /// Visited steps `T, T − δt, …, 0`.
    pub fn step_grid(&self) -> Vec<usize> {
        let mut grid: Vec<usize> = (1..=self.schedule.steps())
            .rev()
            .step_by(self.delta_t)
            .collect();
        grid.push(0);
        grid
    }

    pub fn jumps(&self) -> Vec<Jump> {
        self.step_grid()
            .windows(2)
            .map(|w| {
                let (t, t_next) = (w[0], w[1]);
                let ab = self.schedule.alpha_bar(t);
                let ab_next = self.schedule.alpha_bar(t_next);
                let c_state = (ab_next / ab).sqrt();
                let c_noise = (1.0 - ab_next).sqrt() - c_state * (1.0 - ab).sqrt();
                Jump {
                    t,
                    t_next,
                    c_state,
                    c_noise,
                }
            })
            .collect()
    }
}

/// Runs the sampler from `z_T`, returning `x̂_0`.
pub fn generate(cfg: &SamplerConfig, z_t: &Tensor3) -> Result<Tensor3> {
    Ok(generate_trace(cfg, z_t)?.pop().unwrap())
}

/// All visited states `[z_T, …, z_0]`; the last entry is the output.
pub fn generate_trace(cfg: &SamplerConfig, z_t: &Tensor3) -> Result<Vec<Tensor3>> {
    let sched = cfg.schedule();
    let grid = cfg.step_grid();
    let mut states = Vec::with_capacity(grid.len());
    states.push(z_t.clone());
    for w in grid.windows(2) {
        let (t, t_next) = (w[0], w[1]);
        let z = states.last().unwrap();
        let eps = cfg.model().epsilon(sched, z, t)?;
        let ab = sched.alpha_bar(t);
        let ab_next = sched.alpha_bar(t_next);
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (sa_next, sn_next) = (ab_next.sqrt(), (1.0 - ab_next).sqrt());
        let next: Vec<f64> = z
            .as_slice()
            .iter()
            .zip(eps.as_slice())
            .map(|(&zv, &e)| {
                let x0 = (zv - sn * e) / sa;
                sa_next * x0 + sn_next * (zv - sa * x0) / sn
            })
            .collect();
        let next = z.with_data(next);
        if !next.is_finite() {
            return Err(Error::Numeric { step: t });
        }
        states.push(next);
    }
    Ok(states)
}

/// `(∂G/∂z_T)ᵀ v` by reverse accumulation over the cached forward states.
pub fn generate_adjoint(cfg: &SamplerConfig, z_t: &Tensor3, v: &Tensor3) -> Result<Tensor3> {
    let states = generate_trace(cfg, z_t)?;
    adjoint_from_trace(cfg, &states, v)
}

/// Adjoint pass reusing states from [`generate_trace`].
pub fn adjoint_from_trace(cfg: &SamplerConfig, states: &[Tensor3], v: &Tensor3) -> Result<Tensor3> {
    states[0].same_shape(v)?;
    let jumps = cfg.jumps();
    debug_assert_eq!(jumps.len() + 1, states.len());
    let mut g = v.clone();
    for (jump, z) in jumps.iter().zip(states).rev() {
        let through_model = cfg
            .model()
            .epsilon_vjp(cfg.schedule(), z, jump.t, &g.scale(jump.c_noise))?;
        let mut next = g.scale(jump.c_state);
        next.axpy(1.0, &through_model);
        if !next.is_finite() {
            return Err(Error::Numeric { step: jump.t });
        }
        g = next;
    }
    Ok(g)
}

/// Fixed-point sweeps per jump used by [`invert_ode`] before giving up on
/// convergence.
pub const MAX_INVERSION_SWEEPS: usize = 64;

/// Deterministic inversion: runs the jumps backwards from `x_0`.
///
/// Each jump solves `z = (z' − c₂ ε(z, t)) / c₁` for the earlier state `z` by
/// fixed-point iteration, started from the explicit estimate that evaluates
/// the noise at `z'`. Iteration stops once an update moves no entry by more
/// than `1e−13` relative to the state, or after [`MAX_INVERSION_SWEEPS`].
pub fn invert_ode(cfg: &SamplerConfig, x0: &Tensor3) -> Result<Tensor3> {
    invert_jumps(cfg, x0, MAX_INVERSION_SWEEPS, 1e-13)
}

/// Inversion with exactly `refinements` fixed-point sweeps per jump. Zero
/// sweeps is the explicit one-evaluation inversion.
pub fn invert_ode_refined(cfg: &SamplerConfig, x0: &Tensor3, refinements: usize) -> Result<Tensor3> {
    invert_jumps(cfg, x0, refinements, 0.0)
}

fn invert_jumps(cfg: &SamplerConfig, x0: &Tensor3, sweeps: usize, tol: f64) -> Result<Tensor3> {
    let sched = cfg.schedule();
    let mut z = x0.clone();
    for jump in cfg.jumps().iter().rev() {
        let step = |from: &Tensor3| -> Result<Tensor3> {
            let eps = cfg.model().epsilon(sched, from, jump.t)?;
            z.zip_map(&eps, |zv, e| (zv - jump.c_noise * e) / jump.c_state)
        };
        let mut up = step(&z)?;
        for _ in 0..sweeps {
            let next = step(&up)?;
            let moved = next.zip_map(&up, |a, b| a - b)?.max_abs();
            up = next;
            if !up.is_finite() || moved <= tol * (1.0 + up.max_abs()) {
                break;
            }
        }
        if !up.is_finite() {
            return Err(Error::Numeric { step: jump.t });
        }
        z = up;
    }
    Ok(z)
}
