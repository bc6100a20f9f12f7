//! Ray traversal of signed distance fields: sphere tracing (safe stepping by
//! the distance bound) and fixed-step occupancy marching.

use crate::core::{Ray, Vec3};
use crate::error::{Error, Result};
use crate::fields::{FieldScratch, OccupancyOracle, Sdf};

/// Sphere tracing controls. `max_steps` bounds the number of advances, so a
/// trace evaluates the field at most `max_steps + 1` times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceParams {
    pub max_steps: usize,
    pub eps: f64,
    pub t_start: f64,
    pub t_max: f64,
}

impl Default for TraceParams {
    fn default() -> Self {
        TraceParams {
            max_steps: 12,
            eps: 1e-3,
            t_start: 0.0,
            t_max: 4.0,
        }
    }
}

impl TraceParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::config("trace needs at least one step"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config(format!(
                "trace eps must be positive, got {}",
                self.eps
            )));
        }
        if !(self.t_max > self.t_start) || !self.t_start.is_finite() || !self.t_max.is_finite() {
            return Err(Error::config(format!(
                "trace range [{}, {}] must be finite and increasing",
                self.t_start, self.t_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceOutcome {
    /// |s| dropped below eps.
    Hit,
    /// Step budget exhausted while still near the surface; downstream
    /// shading treats the final position as the hit.
    MaxSteps,
    /// Reached t_max with the field still clearly positive.
    Escaped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceResult {
    pub t: f64,
    pub x: Vec3,
    pub s: f64,
    pub steps: usize,
    pub outcome: TraceOutcome,
    /// Field was negative at t_start (ray begins inside the surface).
    pub started_inside: bool,
}

impl TraceResult {
    /// Whether shading should treat this trace as having found a surface.
    pub fn surface_like(&self) -> bool {
        matches!(self.outcome, TraceOutcome::Hit | TraceOutcome::MaxSteps)
    }
}

/// One field evaluation along a trace, in visit order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub step: usize,
    pub t: f64,
    pub x: Vec3,
    pub s: f64,
}

/// Sphere tracing: repeatedly advance by the signed distance, clamped into
/// [t_start, t_max]. The unclamped step is safe because |s| lower-bounds the
/// distance to the nearest surface along any direction.
pub fn sphere_trace<S: Sdf>(
    field: &S,
    ray: &Ray,
    params: &TraceParams,
    ws: &mut FieldScratch,
) -> TraceResult {
    sphere_trace_observed(field, ray, params, ws, |_| {})
}

/// As [`sphere_trace`], reporting every field evaluation to `observer`.
pub fn sphere_trace_observed<S: Sdf>(
    field: &S,
    ray: &Ray,
    params: &TraceParams,
    ws: &mut FieldScratch,
    mut observer: impl FnMut(&TraceSample),
) -> TraceResult {
    let mut t = params.t_start;
    let mut steps = 0;
    let mut started_inside = false;
    loop {
        let x = ray.at(t);
        let s = field.eval(x, ws);
        if steps == 0 {
            started_inside = s < 0.0;
        }
        observer(&TraceSample { step: steps, t, x, s });
        let outcome = if s.abs() < params.eps {
            TraceOutcome::Hit
        } else if t >= params.t_max {
            TraceOutcome::Escaped
        } else if steps == params.max_steps {
            TraceOutcome::MaxSteps
        } else {
            t = (t + s).clamp(params.t_start, params.t_max);
            steps += 1;
            continue;
        };
        return TraceResult {
            t,
            x,
            s,
            steps,
            outcome,
            started_inside,
        };
    }
}

/// Fixed-step occupancy marching controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarchParams {
    pub step: f64,
    pub t_start: f64,
    pub t_max: f64,
}

impl Default for MarchParams {
    fn default() -> Self {
        MarchParams {
            step: 0.01,
            t_start: 0.0,
            t_max: 4.0,
        }
    }
}

impl MarchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) {
            return Err(Error::config(format!(
                "march step must be positive, got {}",
                self.step
            )));
        }
        if !(self.t_max > self.t_start) {
            return Err(Error::config(format!(
                "march range [{}, {}] must be increasing",
                self.t_start, self.t_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarchResult {
    pub hit: bool,
    /// Parameter of the first occupied sample when hit.
    pub t: f64,
    pub samples: usize,
}

/// Walk the ray at fixed parameter increments and report the first sample
/// whose occupancy reaches one half. For continuous oracles the crossing is
/// refined by linear interpolation between the bracketing samples; the hard
/// indicator jumps, so its hits stay on the sample lattice. Features thinner
/// than the step can fall between samples and go unreported; that trade for
/// speed is intentional.
pub fn ray_march_occupancy(
    oracle: &OccupancyOracle,
    ray: &Ray,
    params: &MarchParams,
) -> MarchResult {
    let refine = !matches!(oracle, OccupancyOracle::Hard { .. });
    let mut samples = 0;
    let mut prev: Option<(f64, f64)> = None;
    let mut k = 0u64;
    loop {
        let t = params.t_start + k as f64 * params.step;
        if t > params.t_max {
            return MarchResult {
                hit: false,
                t: params.t_max,
                samples,
            };
        }
        samples += 1;
        let o = oracle.eval(ray.at(t));
        if o >= 0.5 {
            let t_hit = match prev {
                Some((tp, op)) if refine && o > op => {
                    tp + (t - tp) * (0.5 - op) / (o - op)
                }
                _ => t,
            };
            return MarchResult {
                hit: true,
                t: t_hit,
                samples,
            };
        }
        prev = Some((t, o));
        k += 1;
    }
}
