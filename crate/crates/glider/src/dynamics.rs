//! Dimensionless ODE model of an actively controlled falling ellipse.
//!
//! Body-frame momentum equations with a quasi-steady parametric closure for
//! the fluid force, torque and circulation, integrated with fixed-step RK4.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dimensionless body/fluid parameters of the elliptical glider.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GliderParams {
    /// Aspect ratio b/a, 0 < beta < 1.
    pub beta: f64,
    /// Density ratio rho_s / rho_f.
    pub rho_star: f64,
    /// Translational drag coefficients.
    #[serde(default = "default_a_coef")]
    pub a_coef: f64,
    #[serde(default = "default_b_coef")]
    pub b_coef: f64,
    /// Rotational drag coefficients.
    #[serde(default = "default_mu_nu")]
    pub mu: f64,
    #[serde(default = "default_mu_nu")]
    pub nu: f64,
    /// Circulation coefficients.
    #[serde(default = "default_c_t")]
    pub c_t: f64,
    #[serde(default = "default_c_r")]
    pub c_r: f64,
}

fn default_a_coef() -> f64 {
    1.4
}
fn default_b_coef() -> f64 {
    1.0
}
fn default_mu_nu() -> f64 {
    0.2
}
fn default_c_t() -> f64 {
    1.2
}
fn default_c_r() -> f64 {
    std::f64::consts::PI
}

impl GliderParams {
    /// Nominal closure constants with the given shape and density ratio.
    pub fn new(beta: f64, rho_star: f64) -> Self {
        Self {
            beta,
            rho_star,
            a_coef: 1.4,
            b_coef: 1.0,
            mu: 0.2,
            nu: 0.2,
            c_t: 1.2,
            c_r: std::f64::consts::PI,
        }
    }

    /// Dimensionless moment of inertia, always recomputed from beta and rho*.
    pub fn inertia(&self) -> f64 {
        self.beta * self.rho_star
    }

    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("beta", self.beta),
            ("rho_star", self.rho_star),
            ("a_coef", self.a_coef),
            ("mu", self.mu),
            ("nu", self.nu),
            ("c_t", self.c_t),
            ("c_r", self.c_r),
        ];
        for (name, v) in positives {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidParam {
                    name,
                    reason: format!("must be finite and > 0, got {v}"),
                });
            }
        }
        if !self.b_coef.is_finite() || self.b_coef < 0.0 {
            return Err(Error::InvalidParam {
                name: "b_coef",
                reason: format!("must be finite and >= 0, got {}", self.b_coef),
            });
        }
        if self.beta >= 1.0 {
            return Err(Error::InvalidParam {
                name: "beta",
                reason: format!("aspect ratio must be < 1, got {}", self.beta),
            });
        }
        Ok(())
    }
}

/// Instantaneous state of the glider. `theta` is unwrapped: full rotations
/// accumulate, which the tumbling diagnostics rely on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GliderState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    /// Body-frame velocity along the major semi-axis.
    pub u: f64,
    /// Body-frame velocity along the minor semi-axis.
    pub v: f64,
    /// Angular velocity.
    pub w: f64,
    /// Elapsed dimensionless time.
    pub t: f64,
}

impl GliderState {
    pub fn at_rest() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
            u: 0.0,
            v: 0.0,
            w: 0.0,
            t: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.theta, self.u, self.v, self.w, self.t]
            .iter()
            .all(|c| c.is_finite())
    }

    fn check_finite(&self, context: &'static str) -> Result<()> {
        for (name, c) in [
            ("x", self.x),
            ("y", self.y),
            ("theta", self.theta),
            ("u", self.u),
            ("v", self.v),
            ("w", self.w),
            ("t", self.t),
        ] {
            if !c.is_finite() {
                return Err(Error::NonFinite {
                    context,
                    component: name.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Quasi-steady fluid closure outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeroForces {
    /// Translational fluid-force magnitude coefficient.
    pub f: f64,
    /// Fluid torque.
    pub m: f64,
    /// Circulation.
    pub gamma: f64,
}

/// Evaluate the parametric fluid closure at body-frame velocities (u, v, w).
///
/// At u = v = 0 the (u^2-v^2)/(u^2+v^2) and uv/sqrt(u^2+v^2) ratios are
/// defined as 0, so F = 0 and Gamma reduces to its rotational part.
pub fn closure(params: &GliderParams, u: f64, v: f64, w: f64) -> Result<AeroForces> {
    for (name, c) in [("u", u), ("v", v), ("w", w)] {
        if !c.is_finite() {
            return Err(Error::NonFinite {
                context: "closure",
                component: name.to_string(),
            });
        }
    }
    let speed2 = u * u + v * v;
    let speed = speed2.sqrt();
    let (ratio, uv_over_speed) = if speed2 > 0.0 {
        ((u * u - v * v) / speed2, u * v / speed)
    } else {
        (0.0, 0.0)
    };
    let f = std::f64::consts::FRAC_1_PI * (params.a_coef - params.b_coef * ratio) * speed;
    let m = 0.2 * (params.mu + params.nu * w.abs()) * w;
    let gamma = (2.0 / std::f64::consts::PI) * (params.c_r * w - params.c_t * uv_over_speed);
    Ok(AeroForces { f, m, gamma })
}

/// Time derivative of the six state components (u', v', w', x', y', theta').
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDeriv {
    pub du: f64,
    pub dv: f64,
    pub dw: f64,
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

/// Effective rotational inertia on the left of the angular momentum equation.
fn j_eff(params: &GliderParams) -> f64 {
    let b2 = params.beta * params.beta;
    0.25 * (params.inertia() * (1.0 + b2) + 0.5 * (1.0 - b2) * (1.0 - b2))
}

/// Right-hand side of the controlled falling-ellipse ODE system.
pub fn derivative(params: &GliderParams, state: &GliderState, tau: f64) -> Result<StateDeriv> {
    state.check_finite("derivative")?;
    if !tau.is_finite() {
        return Err(Error::NonFinite {
            context: "derivative",
            component: "tau".to_string(),
        });
    }
    let aero = closure(params, state.u, state.v, state.w)?;
    let i = params.inertia();
    let b2 = params.beta * params.beta;
    let (sin_t, cos_t) = state.theta.sin_cos();
    let du = ((i + 1.0) * state.v * state.w - aero.gamma * state.v - sin_t - aero.f * state.u)
        / (i + b2);
    let dv = (-(i + b2) * state.u * state.w + aero.gamma * state.u - cos_t - aero.f * state.v)
        / (i + 1.0);
    let dw = (-(1.0 - b2) * state.u * state.v - aero.m + tau) / j_eff(params);
    let dx = state.u * cos_t - state.v * sin_t;
    let dy = state.u * sin_t + state.v * cos_t;
    Ok(StateDeriv {
        du,
        dv,
        dw,
        dx,
        dy,
        dtheta: state.w,
    })
}

fn advance(state: &GliderState, d: &StateDeriv, h: f64) -> GliderState {
    GliderState {
        x: state.x + h * d.dx,
        y: state.y + h * d.dy,
        theta: state.theta + h * d.dtheta,
        u: state.u + h * d.du,
        v: state.v + h * d.dv,
        w: state.w + h * d.dw,
        t: state.t + h,
    }
}

/// One classical RK4 substep of size `h` under constant torque `tau`.
pub fn rk4_substep(params: &GliderParams, state: &GliderState, tau: f64, h: f64) -> Result<GliderState> {
    let k1 = derivative(params, state, tau)?;
    let k2 = derivative(params, &advance(state, &k1, 0.5 * h), tau)?;
    let k3 = derivative(params, &advance(state, &k2, 0.5 * h), tau)?;
    let k4 = derivative(params, &advance(state, &k3, h), tau)?;
    let combined = StateDeriv {
        du: (k1.du + 2.0 * k2.du + 2.0 * k3.du + k4.du) / 6.0,
        dv: (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv) / 6.0,
        dw: (k1.dw + 2.0 * k2.dw + 2.0 * k3.dw + k4.dw) / 6.0,
        dx: (k1.dx + 2.0 * k2.dx + 2.0 * k3.dx + k4.dx) / 6.0,
        dy: (k1.dy + 2.0 * k2.dy + 2.0 * k3.dy + k4.dy) / 6.0,
        dtheta: (k1.dtheta + 2.0 * k2.dtheta + 2.0 * k3.dtheta + k4.dtheta) / 6.0,
    };
    let next = advance(state, &combined, h);
    let names: [(&'static str, f64); 6] = [
        ("x", next.x),
        ("y", next.y),
        ("theta", next.theta),
        ("u", next.u),
        ("v", next.v),
        ("w", next.w),
    ];
    for (component, c) in names {
        if !c.is_finite() {
            return Err(Error::BlowUp { component });
        }
    }
    Ok(next)
}

/// Default number of RK4 substeps per control interval (h = 0.01 at dt = 0.5).
pub const DEFAULT_SUBSTEPS: usize = 50;

/// Advance the state by `dt_control` under constant torque, using `n_sub`
/// fixed RK4 substeps. `theta` accumulates without wrapping.
pub fn step(
    params: &GliderParams,
    state: &GliderState,
    tau: f64,
    dt_control: f64,
    n_sub: usize,
) -> Result<GliderState> {
    if dt_control == 0.0 {
        return Ok(*state);
    }
    let h = dt_control / n_sub as f64;
    let mut s = *state;
    for _ in 0..n_sub {
        s = rk4_substep(params, &s, tau, h)?;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn defaults() -> GliderParams {
        GliderParams::new(0.1, 200.0)
    }

    #[test]
    fn inertia_is_product_of_beta_and_rho() {
        let p = defaults();
        assert_eq!(p.inertia(), 0.1 * 200.0);
    }

    #[test]
    fn closure_pure_major_axis_translation() {
        let a = closure(&defaults(), 1.0, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(a.f, 0.4 / std::f64::consts::PI, epsilon = 1e-12);
        assert_eq!(a.m, 0.0);
        assert_eq!(a.gamma, 0.0);
    }

    #[test]
    fn closure_zero_velocity_convention() {
        let a = closure(&defaults(), 0.0, 0.0, 0.0).unwrap();
        assert_eq!((a.f, a.m, a.gamma), (0.0, 0.0, 0.0));
    }

    #[test]
    fn closure_pure_rotation() {
        let a = closure(&defaults(), 0.0, 0.0, 1.0).unwrap();
        assert_eq!(a.f, 0.0);
        assert_abs_diff_eq!(a.m, 0.08, epsilon = 1e-15);
        assert_abs_diff_eq!(a.gamma, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn closure_diagonal_translation_circulation() {
        let a = closure(&defaults(), 1.0, 1.0, 0.0).unwrap();
        let expected = -(2.0 / std::f64::consts::PI) * 1.2 / 2f64.sqrt();
        assert_abs_diff_eq!(a.gamma, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(a.gamma, -0.540190, epsilon = 1e-6);
    }

    #[test]
    fn closure_torque_sign_matches_spin() {
        for w in [-2.0, -0.5, 0.5, 2.0] {
            let a = closure(&defaults(), 0.3, -0.2, w).unwrap();
            assert_eq!(a.m.signum(), w.signum());
        }
        assert_eq!(closure(&defaults(), 0.3, -0.2, 0.0).unwrap().m, 0.0);
    }

    #[test]
    fn closure_rejects_non_finite() {
        assert!(closure(&defaults(), f64::NAN, 0.0, 0.0).is_err());
        assert!(closure(&defaults(), 0.0, f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn derivative_at_rest_is_pure_gravity() {
        let d = derivative(&defaults(), &GliderState::at_rest(), 0.0).unwrap();
        assert_eq!(d.du, 0.0);
        assert_abs_diff_eq!(d.dv, -1.0 / 21.0, epsilon = 1e-15);
        assert_eq!(d.dw, 0.0);
        assert_eq!((d.dx, d.dy, d.dtheta), (0.0, 0.0, 0.0));
    }

    #[test]
    fn derivative_vertical_attitude_projects_gravity_on_major_axis() {
        let p = GliderParams::new(0.3, 50.0);
        let state = GliderState {
            theta: std::f64::consts::FRAC_PI_2,
            ..GliderState::at_rest()
        };
        let d = derivative(&p, &state, 0.0).unwrap();
        let i = p.inertia();
        assert_abs_diff_eq!(d.du, -1.0 / (i + p.beta * p.beta), epsilon = 1e-15);
        assert_abs_diff_eq!(d.dv, 0.0, epsilon = 1e-16);
    }

    #[test]
    fn derivative_torque_cancels_fluid_torque() {
        let state = GliderState {
            w: 1.0,
            ..GliderState::at_rest()
        };
        let d = derivative(&defaults(), &state, 0.08).unwrap();
        assert_abs_diff_eq!(d.dw, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn step_zero_duration_is_identity() {
        let s = GliderState {
            x: 1.0,
            y: -2.0,
            theta: 0.3,
            u: 0.5,
            v: -0.1,
            w: 0.2,
            t: 4.0,
        };
        assert_eq!(step(&defaults(), &s, 0.3, 0.0, 50).unwrap(), s);
    }

    #[test]
    fn step_from_rest_is_pure_vertical_fall() {
        let s = step(&defaults(), &GliderState::at_rest(), 0.0, 0.5, 50).unwrap();
        assert_eq!(s.x, 0.0);
        assert_eq!(s.u, 0.0);
        assert_eq!(s.theta, 0.0);
        assert_eq!(s.w, 0.0);
        assert!(s.y < 0.0);
        assert!(s.v < 0.0);
        assert_abs_diff_eq!(s.t, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn step_substep_self_consistency() {
        let p = defaults();
        let s0 = GliderState {
            x: 0.0,
            y: 0.0,
            theta: 0.2,
            u: 0.4,
            v: -0.3,
            w: 0.1,
            t: 0.0,
        };
        let twice = step(&p, &step(&p, &s0, 0.3, 0.5, 50).unwrap(), 0.3, 0.5, 50).unwrap();
        let once = step(&p, &s0, 0.3, 1.0, 100).unwrap();
        for (a, b) in [
            (twice.x, once.x),
            (twice.y, once.y),
            (twice.theta, once.theta),
            (twice.u, once.u),
            (twice.v, once.v),
            (twice.w, once.w),
        ] {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn validate_rejects_bad_params() {
        let mut p = defaults();
        p.beta = 0.0;
        assert!(p.validate().is_err());
        let mut p = defaults();
        p.beta = 1.5;
        assert!(p.validate().is_err());
        let mut p = defaults();
        p.b_coef = -0.1;
        assert!(p.validate().is_err());
        assert!(defaults().validate().is_ok());
    }

    #[test]
    fn left_right_mirror_symmetry() {
        // Reflecting about the vertical axis negates (x, theta, u, w, tau)
        // and keeps (y, v); solutions map to solutions.
        let p = defaults();
        let s0 = GliderState {
            x: 0.0,
            y: 0.0,
            theta: 0.3,
            u: 0.2,
            v: -0.1,
            w: 0.05,
            t: 0.0,
        };
        let m0 = GliderState {
            x: -s0.x,
            y: s0.y,
            theta: -s0.theta,
            u: -s0.u,
            v: s0.v,
            w: -s0.w,
            t: 0.0,
        };
        let mut a = s0;
        let mut b = m0;
        for _ in 0..10 {
            a = step(&p, &a, 0.4, 0.5, 50).unwrap();
            b = step(&p, &b, -0.4, 0.5, 50).unwrap();
        }
        assert_abs_diff_eq!(a.x, -b.x, epsilon = 1e-9);
        assert_abs_diff_eq!(a.y, b.y, epsilon = 1e-9);
        assert_abs_diff_eq!(a.theta, -b.theta, epsilon = 1e-9);
        assert_abs_diff_eq!(a.u, -b.u, epsilon = 1e-9);
        assert_abs_diff_eq!(a.v, b.v, epsilon = 1e-9);
        assert_abs_diff_eq!(a.w, -b.w, epsilon = 1e-9);
    }
}
