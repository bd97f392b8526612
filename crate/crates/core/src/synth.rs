//! Synthetic ground truth from underdamped Langevin dynamics.
//!
//! Each cylindrical component evolves independently as an inertial
//! Ornstein-Uhlenbeck process, optionally confined by a harmonic restoring
//! force. With the default parameters the radial and axial components are
//! confined (short-time ballistic motion that saturates into trapping)
//! while the angle diffuses freely, so the ensemble reproduces the three
//! scaling regimes the evaluation pipeline looks for.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{standard_normal, substream};
use crate::trajectory::{Coordinate, Trajectory};

/// Langevin parameters for one coordinate component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComponentLangevin {
    /// Velocity damping rate (1/s).
    pub damping: f64,
    /// Harmonic confinement stiffness (1/s^2); zero leaves the component free.
    pub stiffness: f64,
    /// Velocity noise intensity (unit^2/s^3).
    pub noise: f64,
    /// Confinement center, also the starting position (mm or rad).
    pub equilibrium: f64,
}

impl ComponentLangevin {
    /// Stationary velocity variance of the damped process.
    pub fn velocity_variance(&self) -> f64 {
        self.noise / self.damping
    }

    /// Stationary position variance; only defined for confined components.
    pub fn position_variance(&self) -> Option<f64> {
        (self.stiffness > 0.0).then(|| self.noise / (self.damping * self.stiffness))
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.damping > 0.0) {
            return Err(Error::invalid(
                "LangevinConfig",
                format!("{name}: damping must be positive, got {}", self.damping),
            ));
        }
        if self.stiffness < 0.0 || self.noise < 0.0 || !self.equilibrium.is_finite() {
            return Err(Error::invalid(
                "LangevinConfig",
                format!("{name}: stiffness and noise must be non-negative, equilibrium finite"),
            ));
        }
        Ok(())
    }
}

/// Full synthetic-dataset configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LangevinConfig {
    pub r: ComponentLangevin,
    pub theta: ComponentLangevin,
    pub z: ComponentLangevin,
    /// Sampling interval (s).
    pub dt: f64,
    /// Coordinates per trajectory.
    pub steps: usize,
    pub n_traj: usize,
    pub seed: u64,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        // Damping time ~10 dt puts the ballistic-to-trapped crossover inside
        // the observable lag window; position spread ~2 mm keeps r positive.
        LangevinConfig {
            r: ComponentLangevin {
                damping: 21.0,
                stiffness: 200.0,
                noise: 16_800.0,
                equilibrium: 25.0,
            },
            theta: ComponentLangevin {
                damping: 21.0,
                stiffness: 0.0,
                noise: 60.0,
                equilibrium: 0.0,
            },
            z: ComponentLangevin {
                damping: 21.0,
                stiffness: 200.0,
                noise: 16_800.0,
                equilibrium: 50.0,
            },
            dt: 0.00476,
            steps: 1100,
            n_traj: 15,
            seed: 42,
        }
    }
}

impl LangevinConfig {
    pub fn validate(&self) -> Result<()> {
        self.r.validate("r")?;
        self.theta.validate("theta")?;
        self.z.validate("z")?;
        if !(self.dt > 0.0) {
            return Err(Error::invalid(
                "LangevinConfig",
                format!("dt must be positive, got {}", self.dt),
            ));
        }
        if self.steps < 2 {
            return Err(Error::invalid("LangevinConfig", "steps must be at least 2"));
        }
        if self.n_traj == 0 {
            return Err(Error::invalid("LangevinConfig", "n_traj must be at least 1"));
        }
        Ok(())
    }

    pub fn components(&self) -> [&ComponentLangevin; 3] {
        [&self.r, &self.theta, &self.z]
    }
}

/// Euler-Maruyama integration of one component from explicit initial
/// conditions: `x' = v`, `v' = -damping*v - stiffness*(x - eq) + noise term`.
pub fn integrate_component(
    comp: &ComponentLangevin,
    x0: f64,
    v0: f64,
    steps: usize,
    dt: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let kick = (2.0 * comp.noise).sqrt() * dt.sqrt();
    let mut xs = Vec::with_capacity(steps);
    let mut x = x0;
    let mut v = v0;
    for step in 0..steps {
        xs.push(x);
        if !x.is_finite() || !v.is_finite() {
            return Err(Error::non_finite(format!("Langevin state at step {step}")));
        }
        let drift = -comp.damping * v - comp.stiffness * (x - comp.equilibrium);
        let (x_now, v_now) = (x, v);
        x = x_now + v_now * dt;
        v = v_now + drift * dt + kick * standard_normal(rng);
    }
    Ok(xs)
}

/// Initial conditions drawn from the stationary law: confined components
/// start at a stationary position draw, free components at the equilibrium
/// value; velocities are stationary draws. With zero noise all draws
/// collapse to the fixed point.
fn initial_conditions(comp: &ComponentLangevin, rng: &mut impl Rng) -> (f64, f64) {
    let x0 = match comp.position_variance() {
        Some(var) => comp.equilibrium + var.sqrt() * standard_normal(rng),
        None => comp.equilibrium,
    };
    let v0 = comp.velocity_variance().sqrt() * standard_normal(rng);
    (x0, v0)
}

/// Simulate the configured ensemble. Each (trajectory, component) pair has
/// its own derived random stream, so trajectories are independent and the
/// whole dataset is reproducible from the seed.
pub fn simulate(cfg: &LangevinConfig) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.n_traj);
    for i in 0..cfg.n_traj {
        let mut series: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for (slot, (comp, name)) in series.iter_mut().zip(
            cfg.components()
                .into_iter()
                .zip(["synth.r", "synth.theta", "synth.z"]),
        ) {
            let mut rng = substream(cfg.seed, name, i as u64);
            let (x0, v0) = initial_conditions(comp, &mut rng);
            *slot = integrate_component(comp, x0, v0, cfg.steps, cfg.dt, &mut rng)?;
        }
        let coords: Vec<Coordinate> = (0..cfg.steps)
            .map(|t| Coordinate::new(series[0][t], series[1][t], series[2][t]))
            .collect();
        out.push(Trajectory::new(coords, cfg.dt)?);
    }
    Ok(out)
}
