//! Expectation-value dynamics of the 1-D harmonic oscillator.
//!
//! For a quadratic potential the Ehrenfest equations close on (⟨x̂⟩, ⟨p̂⟩)
//! and coincide with Hamilton's equations, so the classical closed form is
//! an exact oracle for the integrator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed RK4 substeps taken inside every output interval of a [`TimeGrid`].
pub const RK4_SUBSTEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseState {
    pub x: f64,
    pub p: f64,
}

impl PhaseState {
    pub fn new(x: f64, p: f64) -> Self {
        Self { x, p }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.p.is_finite()
    }

    fn axpy(self, h: f64, d: PhaseState) -> PhaseState {
        PhaseState::new(self.x + h * d.x, self.p + h * d.p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatorParams {
    pub m: f64,
    pub omega: f64,
    pub hbar: f64,
}

impl OscillatorParams {
    pub fn new(m: f64, omega: f64, hbar: f64) -> Result<Self> {
        let params = Self { m, omega, hbar };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m.is_finite() && self.m > 0.0) {
            return Err(Error::validation(format!(
                "mass must be finite and > 0, got {}",
                self.m
            )));
        }
        if !(self.omega.is_finite() && self.omega > 0.0) {
            return Err(Error::validation(format!(
                "omega must be finite and > 0, got {}",
                self.omega
            )));
        }
        if !(self.hbar.is_finite() && self.hbar >= 0.0) {
            return Err(Error::validation(format!(
                "hbar must be finite and >= 0, got {}",
                self.hbar
            )));
        }
        Ok(())
    }
}

/// Strictly increasing sample times starting at or after zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::validation(format!(
                "time grid needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(Error::validation("time grid contains a non-finite point"));
        }
        if points[0] < 0.0 {
            return Err(Error::validation(format!(
                "time grid must start at t >= 0, got {}",
                points[0]
            )));
        }
        if let Some(k) = points.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::validation(format!(
                "time grid not strictly increasing at index {}: {} -> {}",
                k + 1,
                points[k],
                points[k + 1]
            )));
        }
        Ok(Self { points })
    }

    /// `steps` evenly spaced points on `[start, stop]`, endpoints exact.
    pub fn linspace(start: f64, stop: f64, steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::validation(format!(
                "time grid needs at least 2 steps, got {steps}"
            )));
        }
        let delta = (stop - start) / (steps - 1) as f64;
        let mut points: Vec<f64> = (0..steps).map(|k| start + k as f64 * delta).collect();
        points[steps - 1] = stop;
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;

    fn try_from(points: Vec<f64>) -> Result<Self> {
        TimeGrid::new(points)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(grid: TimeGrid) -> Self {
        grid.points
    }
}

/// ⟨x̂(t)⟩ sampled on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    x_values: Vec<f64>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, x_values: Vec<f64>) -> Result<Self> {
        if x_values.len() != grid.len() {
            return Err(Error::validation(format!(
                "trajectory has {} values for a grid of {} points",
                x_values.len(),
                grid.len()
            )));
        }
        if x_values.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("trajectory contains a non-finite value"));
        }
        Ok(Self { grid, x_values })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn x_values(&self) -> &[f64] {
        &self.x_values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.x_values
    }
}

/// Time derivative (d⟨x̂⟩/dt, d⟨p̂⟩/dt). `hbar` is accepted but never read:
/// for a quadratic potential the expectation values obey the classical
/// equations exactly.
pub fn ehrenfest_rhs(state: PhaseState, params: &OscillatorParams) -> PhaseState {
    PhaseState {
        x: state.p / params.m,
        p: -params.m * params.omega * params.omega * state.x,
    }
}

fn rk4_step(state: PhaseState, h: f64, params: &OscillatorParams) -> PhaseState {
    let k1 = ehrenfest_rhs(state, params);
    let k2 = ehrenfest_rhs(state.axpy(0.5 * h, k1), params);
    let k3 = ehrenfest_rhs(state.axpy(0.5 * h, k2), params);
    let k4 = ehrenfest_rhs(state.axpy(h, k3), params);
    PhaseState {
        x: state.x + h / 6.0 * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x),
        p: state.p + h / 6.0 * (k1.p + 2.0 * k2.p + 2.0 * k3.p + k4.p),
    }
}

fn check_inputs(initial: PhaseState, params: &OscillatorParams) -> Result<()> {
    if !initial.is_finite() {
        return Err(Error::validation(format!(
            "initial state is not finite: {initial:?}"
        )));
    }
    params.validate()
}

/// Full phase-space states at every grid point. The first state is `initial`
/// itself; integration starts at the first grid point.
pub fn integrate_phase(
    initial: PhaseState,
    grid: &TimeGrid,
    params: &OscillatorParams,
) -> Result<Vec<PhaseState>> {
    check_inputs(initial, params)?;
    let mut states = Vec::with_capacity(grid.len());
    let mut state = initial;
    states.push(state);
    for w in grid.points().windows(2) {
        let h = (w[1] - w[0]) / RK4_SUBSTEPS as f64;
        for _ in 0..RK4_SUBSTEPS {
            state = rk4_step(state, h, params);
        }
        states.push(state);
    }
    if states.iter().any(|s| !s.is_finite()) {
        return Err(Error::validation(
            "integration diverged to a non-finite state",
        ));
    }
    Ok(states)
}

pub fn integrate_trajectory(
    initial: PhaseState,
    grid: &TimeGrid,
    params: &OscillatorParams,
) -> Result<Trajectory> {
    let states = integrate_phase(initial, grid, params)?;
    Trajectory::new(grid.clone(), states.into_iter().map(|s| s.x).collect())
}

/// x(t) = x₀ cos(ω(t − t₀)) + p₀/(mω) sin(ω(t − t₀)), with t₀ the first grid point.
pub fn classical_closed_form(
    initial: PhaseState,
    grid: &TimeGrid,
    params: &OscillatorParams,
) -> Result<Trajectory> {
    check_inputs(initial, params)?;
    let t0 = grid.points()[0];
    let amp_p = initial.p / (params.m * params.omega);
    let values = grid
        .points()
        .iter()
        .map(|&t| {
            let (s, c) = (params.omega * (t - t0)).sin_cos();
            initial.x * c + amp_p * s
        })
        .collect();
    Trajectory::new(grid.clone(), values)
}

/// H = p²/2m + ½mω²x².
pub fn energy(state: PhaseState, params: &OscillatorParams) -> f64 {
    state.p * state.p / (2.0 * params.m)
        + 0.5 * params.m * params.omega * params.omega * state.x * state.x
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn unit(hbar: f64) -> OscillatorParams {
        OscillatorParams::new(1.0, 1.0, hbar).unwrap()
    }

    fn default_grid() -> TimeGrid {
        TimeGrid::linspace(0.0, 10.0, 100).unwrap()
    }

    #[test]
    fn rhs_examples() {
        assert_eq!(
            ehrenfest_rhs(PhaseState::new(1.0, 0.0), &unit(5.0)),
            PhaseState::new(0.0, -1.0)
        );
        assert_eq!(
            ehrenfest_rhs(PhaseState::new(0.0, 0.0), &unit(0.3)),
            PhaseState::new(0.0, 0.0)
        );
        let params = OscillatorParams::new(2.0, 3.0, 1.0).unwrap();
        assert_eq!(
            ehrenfest_rhs(PhaseState::new(2.0, 3.0), &params),
            PhaseState::new(1.5, -36.0)
        );
    }

    #[test]
    fn integrator_hits_minus_one_at_pi() {
        let grid = TimeGrid::linspace(0.0, PI, 32).unwrap();
        let traj = integrate_trajectory(PhaseState::new(1.0, 0.0), &grid, &unit(1.0)).unwrap();
        assert_eq!(traj.x_values()[0], 1.0);
        assert!((traj.x_values()[31] + 1.0).abs() <= 1e-6);
    }

    #[test]
    fn origin_is_fixed_point() {
        let traj =
            integrate_trajectory(PhaseState::new(0.0, 0.0), &default_grid(), &unit(1.0)).unwrap();
        assert!(traj.x_values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn trajectory_ignores_hbar() {
        let ic = PhaseState::new(1.0, 0.0);
        let a = integrate_trajectory(ic, &default_grid(), &unit(5.0)).unwrap();
        let b = integrate_trajectory(ic, &default_grid(), &unit(0.01)).unwrap();
        let bits = |t: &Trajectory| t.x_values().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(vec![0.0, 1.0, 1.0])
            .unwrap_err()
            .is_validation());
        assert!(TimeGrid::new(vec![0.0, 2.0, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.0]).is_err());
        assert!(TimeGrid::new(vec![-1.0, 0.0]).is_err());
        assert!(TimeGrid::linspace(0.0, 10.0, 1).is_err());
        assert!(serde_json::from_str::<TimeGrid>("[0.0, 0.5, 0.4]").is_err());
        let grid = default_grid();
        assert_eq!(grid.len(), 100);
        assert_eq!(grid.points()[99], 10.0);
    }

    #[test]
    fn params_validation() {
        assert!(OscillatorParams::new(0.0, 1.0, 1.0).is_err());
        assert!(OscillatorParams::new(1.0, -1.0, 1.0).is_err());
        assert!(OscillatorParams::new(1.0, 1.0, -0.1).is_err());
        assert!(OscillatorParams::new(1.0, 1.0, f64::NAN).is_err());
        assert!(OscillatorParams::new(1.0, 1.0, 0.0).is_ok());
    }

    #[test]
    fn non_finite_initial_state_rejected() {
        let err = integrate_trajectory(PhaseState::new(f64::NAN, 0.0), &default_grid(), &unit(1.0));
        assert!(err.unwrap_err().is_validation());
    }

    #[test]
    fn closed_form_examples() {
        let grid = TimeGrid::new(vec![0.0, PI / 2.0, 2.0 * PI]).unwrap();
        let a = classical_closed_form(PhaseState::new(1.0, 0.0), &grid, &unit(0.0)).unwrap();
        assert_eq!(a.x_values()[0], 1.0);
        assert!((a.x_values()[2] - 1.0).abs() <= 1e-12);
        let b = classical_closed_form(PhaseState::new(0.0, 1.0), &grid, &unit(0.0)).unwrap();
        assert!((b.x_values()[1] - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn energy_examples() {
        assert_eq!(energy(PhaseState::new(1.0, 0.0), &unit(1.0)), 0.5);
        assert_eq!(energy(PhaseState::new(0.0, 0.0), &unit(1.0)), 0.0);
        assert_eq!(energy(PhaseState::new(0.0, 2.0), &unit(1.0)), 2.0);
    }

    #[test]
    fn periodicity_over_two_pi() {
        // Spacing π/100, so index k + 200 sits at t_k + 2π.
        let grid = TimeGrid::linspace(0.0, 4.0 * PI, 401).unwrap();
        let traj = integrate_trajectory(PhaseState::new(0.7, -1.3), &grid, &unit(1.0)).unwrap();
        let x = traj.x_values();
        for k in 0..=200 {
            assert!((x[k + 200] - x[k]).abs() <= 1e-6);
        }
    }

    fn arb_ic() -> impl Strategy<Value = PhaseState> {
        (-2.0f64..2.0, -2.0f64..2.0).prop_map(|(x, p)| PhaseState::new(x, p))
    }

    proptest! {
        #[test]
        fn rhs_bitwise_independent_of_hbar(x in -1e3f64..1e3, p in -1e3f64..1e3, h1 in 0.0f64..10.0, h2 in 0.0f64..10.0) {
            let s = PhaseState::new(x, p);
            let a = ehrenfest_rhs(s, &unit(h1));
            let b = ehrenfest_rhs(s, &unit(h2));
            prop_assert_eq!(a.x.to_bits(), b.x.to_bits());
            prop_assert_eq!(a.p.to_bits(), b.p.to_bits());
        }

        #[test]
        fn integrator_matches_closed_form(ic in arb_ic()) {
            let grid = default_grid();
            let num = integrate_trajectory(ic, &grid, &unit(1.0)).unwrap();
            let exact = classical_closed_form(ic, &grid, &unit(1.0)).unwrap();
            for (a, b) in num.x_values().iter().zip(exact.x_values()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }

        #[test]
        fn energy_is_conserved(ic in arb_ic(), m in 0.5f64..2.0, omega in 0.5f64..2.0) {
            let params = OscillatorParams::new(m, omega, 1.0).unwrap();
            let states = integrate_phase(ic, &default_grid(), &params).unwrap();
            let e0 = energy(ic, &params);
            for s in &states {
                prop_assert!((energy(*s, &params) - e0).abs() <= 1e-6 * e0.max(1.0));
            }
        }

        #[test]
        fn integration_is_linear(ic in arb_ic()) {
            let grid = default_grid();
            let base = integrate_trajectory(ic, &grid, &unit(1.0)).unwrap();
            for alpha in [-1.0, 0.5, 2.0] {
                let scaled = PhaseState::new(alpha * ic.x, alpha * ic.p);
                let t = integrate_trajectory(scaled, &grid, &unit(1.0)).unwrap();
                for (a, b) in t.x_values().iter().zip(base.x_values()) {
                    prop_assert!((a - alpha * b).abs() <= 1e-9);
                }
            }
        }
    }
}
