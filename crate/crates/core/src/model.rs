//! The NPI-controlled susceptible-infected model.
//!
//! Continuous dynamics:
//!
//! ```text
//! s' = -a s i
//! i' =  a s i - beta i
//! a' = -gamma a + gamma h[u]
//! ```
//!
//! where `a` is the contagion rate and `h[u]` the contagion drive produced by
//! the NPI vector `u`. Everything here works on population fractions.

#[allow(unused_imports)]
use num_traits::Float;
use crate::linalg::{Mat6, Vec6};
use crate::{Error, Result};

/// Upper clamp for the contagion rate, 1/day.
pub const ALPHA_CAP: f64 = 10.0;

/// Susceptible fraction, infected fraction and contagion rate.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CompartmentState {
    pub s: f64,
    pub i: f64,
    pub alpha: f64,
}

impl CompartmentState {
    pub fn new(s: f64, i: f64, alpha: f64) -> Result<Self> {
        let x = CompartmentState { s, i, alpha };
        x.validate()?;
        Ok(x)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s.is_finite() && self.i.is_finite() && self.alpha.is_finite()) {
            return Err(Error::NonFinite("compartment state"));
        }
        let ok = (0.0..=1.0).contains(&self.s)
            && (0.0..=1.0).contains(&self.i)
            && self.s + self.i <= 1.0 + 1e-12
            && self.alpha >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(alloc::format!(
                "state out of range: s={}, i={}, alpha={}",
                self.s,
                self.i,
                self.alpha
            )))
        }
    }

    /// New infections per day, `alpha * s * i`.
    pub fn incidence(&self) -> f64 {
        self.alpha * self.s * self.i
    }

    /// Projects onto the physical ranges. Returns whether anything moved.
    pub fn clamp(&mut self) -> bool {
        let before = *self;
        self.s = self.s.clamp(0.0, 1.0);
        self.i = self.i.clamp(0.0, 1.0);
        if self.s + self.i > 1.0 {
            self.s = 1.0 - self.i;
        }
        self.alpha = self.alpha.clamp(0.0, ALPHA_CAP);
        before != *self
    }
}

/// Fixed epidemiological parameters of a region.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelParams {
    /// Elimination rate from the contagious group, 1/day.
    pub beta: f64,
    /// Action-to-effect rate, 1/day.
    pub gamma: f64,
    /// Population size, persons.
    pub population: f64,
    /// Euler discretization step, days.
    pub delta_t: f64,
    /// Generation time-unit of the reproduction rate, days. Kept apart from
    /// `delta_t` even though both are often written with the same symbol.
    pub rt_generation_unit: f64,
}

impl ModelParams {
    pub fn new(beta: f64, gamma: f64, population: f64, delta_t: f64, rt_generation_unit: f64) -> Result<Self> {
        let p = ModelParams {
            beta,
            gamma,
            population,
            delta_t,
            rt_generation_unit,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.beta, self.gamma, self.population, self.delta_t, self.rt_generation_unit];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        if fields.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidParameter("model parameters must be strictly positive".into()));
        }
        if self.delta_t > (1.0 / self.beta).min(1.0 / self.gamma) {
            return Err(Error::InvalidParameter(alloc::format!(
                "delta_t = {} exceeds min(1/beta, 1/gamma)",
                self.delta_t
            )));
        }
        Ok(())
    }

    pub fn with_delta_t(mut self, delta_t: f64) -> Result<Self> {
        self.delta_t = delta_t;
        self.validate()?;
        Ok(self)
    }
}

/// Compartment state extended with the three co-states of the control
/// problem.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AugmentedState {
    pub state: CompartmentState,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl AugmentedState {
    pub fn from_state(state: CompartmentState) -> Self {
        AugmentedState {
            state,
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
        }
    }

    pub fn costates(&self) -> [f64; 3] {
        [self.lambda1, self.lambda2, self.lambda3]
    }

    pub fn to_vector(&self) -> Vec6 {
        Vec6::new(
            self.state.s,
            self.state.i,
            self.state.alpha,
            self.lambda1,
            self.lambda2,
            self.lambda3,
        )
    }

    pub fn from_vector(v: &Vec6) -> Self {
        AugmentedState {
            state: CompartmentState {
                s: v[0],
                i: v[1],
                alpha: v[2],
            },
            lambda1: v[3],
            lambda2: v[4],
            lambda3: v[5],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// Result of one Euler step of the compartment dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateStep {
    pub state: CompartmentState,
    /// Set when the raw Euler update left the physical ranges.
    pub clamped: bool,
}

/// One first-order Euler step of the compartment dynamics.
///
/// `noise` is `(w_s, w_i, w_alpha)` and enters scaled by `delta_t`.
pub fn step_state(x: &CompartmentState, drive: f64, p: &ModelParams, noise: [f64; 3]) -> Result<StateStep> {
    if !(x.s.is_finite() && x.i.is_finite() && x.alpha.is_finite() && drive.is_finite())
        || noise.iter().any(|w| !w.is_finite())
    {
        return Err(Error::NonFinite("step_state input"));
    }
    let dt = p.delta_t;
    let flow = x.alpha * x.s * x.i;
    let mut next = CompartmentState {
        s: x.s - dt * flow + dt * noise[0],
        i: x.i + dt * flow - dt * p.beta * x.i + dt * noise[1],
        alpha: x.alpha - dt * p.gamma * x.alpha + dt * p.gamma * drive + dt * noise[2],
    };
    let clamped = next.clamp();
    Ok(StateStep { state: next, clamped })
}

/// Shared bracket `lambda1 - lambda2 - 1 + eps` of the co-state equations.
fn costate_bracket(a: &AugmentedState, eps: f64) -> f64 {
    a.lambda1 - a.lambda2 - 1.0 + eps
}

/// Continuous co-state rates `-dH/d(s, i, alpha)`.
pub fn costate_rates(a: &AugmentedState, p: &ModelParams, eps: f64) -> [f64; 3] {
    let x = &a.state;
    let k = costate_bracket(a, eps);
    [
        k * x.alpha * x.i,
        k * x.alpha * x.s + p.beta * a.lambda2,
        k * x.s * x.i + p.gamma * a.lambda3,
    ]
}

/// One forward Euler step of the co-states, `(eta_1, eta_2, eta_3)` noise
/// scaled by `delta_t`.
pub fn step_costates(a: &AugmentedState, p: &ModelParams, eps: f64, noise: [f64; 3]) -> Result<[f64; 3]> {
    if !a.is_finite() || !eps.is_finite() || noise.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("step_costates input"));
    }
    let rates = costate_rates(a, p, eps);
    let dt = p.delta_t;
    let l = a.costates();
    Ok(core::array::from_fn(|k| l[k] + dt * rates[k] + dt * noise[k]))
}

/// One Euler step of the full six-dimensional system with zero noise.
///
/// When `costates` is false the co-states are carried unchanged.
pub fn step_augmented(a: &AugmentedState, drive: f64, p: &ModelParams, eps: f64, costates: bool) -> Result<(AugmentedState, bool)> {
    let step = step_state(&a.state, drive, p, [0.0; 3])?;
    let l = if costates {
        step_costates(a, p, eps, [0.0; 3])?
    } else {
        a.costates()
    };
    Ok((
        AugmentedState {
            state: step.state,
            lambda1: l[0],
            lambda2: l[1],
            lambda3: l[2],
        },
        step.clamped,
    ))
}

/// Jacobian of [`step_augmented`] (without clamping) at `a`.
///
/// The drive enters additively so it does not appear here.
pub fn step_jacobian(a: &AugmentedState, p: &ModelParams, eps: f64, costates: bool) -> Mat6 {
    let dt = p.delta_t;
    let (s, i, al) = (a.state.s, a.state.i, a.state.alpha);
    let mut j = Mat6::identity();
    // s row
    j[(0, 0)] -= dt * al * i;
    j[(0, 1)] -= dt * al * s;
    j[(0, 2)] -= dt * s * i;
    // i row
    j[(1, 0)] += dt * al * i;
    j[(1, 1)] += dt * (al * s - p.beta);
    j[(1, 2)] += dt * s * i;
    // alpha row
    j[(2, 2)] -= dt * p.gamma;
    if costates {
        let k = costate_bracket(a, eps);
        // lambda1 = l1 + dt k a i
        j[(3, 1)] += dt * k * al;
        j[(3, 2)] += dt * k * i;
        j[(3, 3)] += dt * al * i;
        j[(3, 4)] -= dt * al * i;
        // lambda2 = l2 + dt (k a s + beta l2)
        j[(4, 0)] += dt * k * al;
        j[(4, 2)] += dt * k * s;
        j[(4, 3)] += dt * al * s;
        j[(4, 4)] += dt * (p.beta - al * s);
        // lambda3 = l3 + dt (k s i + gamma l3)
        j[(5, 0)] += dt * k * i;
        j[(5, 1)] += dt * k * s;
        j[(5, 3)] += dt * s * i;
        j[(5, 4)] -= dt * s * i;
        j[(5, 5)] += dt * p.gamma;
    }
    j
}

/// Fraction of new cases per day, `alpha s i + v`.
pub fn observe_new_cases(x: &CompartmentState, noise: f64) -> Result<f64> {
    let y = x.incidence() + noise;
    if y.is_finite() {
        Ok(y)
    } else {
        Err(Error::NonFinite("new-case observation"))
    }
}

/// Fraction of total confirmed cases, `s0 - s + v`.
pub fn observe_total_cases(x: &CompartmentState, s0: f64, noise: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s0) {
        return Err(Error::InvalidParameter(alloc::format!("initial susceptible fraction {s0} outside [0, 1]")));
    }
    if x.s > s0 {
        return Err(Error::InconsistentInitialCondition { s: x.s, s0 });
    }
    let y = s0 - x.s + noise;
    if y.is_finite() {
        Ok(y)
    } else {
        Err(Error::NonFinite("total-case observation"))
    }
}

/// Instantaneous reproduction rate `exp(unit * (alpha - beta))`.
pub fn reproduction_rate(alpha: f64, p: &ModelParams) -> f64 {
    (p.rt_generation_unit * (alpha - p.beta)).exp()
}
