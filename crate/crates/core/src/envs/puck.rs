//! Puck worlds: a unit disk pushed around a walled square by one of four
//! diagonal thrust combinations, with quadratic air drag and inelastic
//! walls. The mountainous variant adds a valley across the middle of the
//! square with gravity acting along its slope.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::sim::{Environment, SimRng};

/// Thrust sign pairs `(x, y)` for the four controls.
pub const PUCK_CONTROLS: [(f64, f64); 4] = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];

const VALLEY_SOUTH: f64 = 25.0;
const VALLEY_NORTH: f64 = 75.0;
const PLATEAU_HEIGHT: f64 = 15.0;

/// Height of the mountainous world along `y`: 15 on both plateaus and a
/// cosine valley `7.5·[1 − cos(π(y − 50)/25)]` between them, continuous at
/// both edges with its floor at `y = 50`.
pub fn mountain_height(y: f64) -> f64 {
    if !(VALLEY_SOUTH..=VALLEY_NORTH).contains(&y) {
        PLATEAU_HEIGHT
    } else {
        0.5 * PLATEAU_HEIGHT * (1.0 - (PI * (y - 50.0) / 25.0).cos())
    }
}

/// `d height / dy`.
pub fn mountain_slope(y: f64) -> f64 {
    if !(VALLEY_SOUTH..=VALLEY_NORTH).contains(&y) {
        0.0
    } else {
        0.5 * PLATEAU_HEIGHT * PI / 25.0 * (PI * (y - 50.0) / 25.0).sin()
    }
}

/// `100 − speed²` on the northern plateau, 0 elsewhere.
pub fn mountain_reward(state: &PuckState) -> f64 {
    if state.y > VALLEY_NORTH {
        100.0 - state.speed_sq()
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PuckVariant {
    /// Reach a randomly placed target; reward is minus the distance to it.
    Flat,
    /// Climb out of the valley onto the northern plateau.
    Mountain,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PuckConfig {
    pub variant: PuckVariant,
    pub size: f64,
    pub thrust: f64,
    pub decision_interval: f64,
    pub substep: f64,
    pub restitution: f64,
    /// Drag force is `drag · speed²`, opposing the velocity.
    pub drag: f64,
    pub episode_secs: f64,
    pub gravity: f64,
    pub mass: f64,
    pub radius: f64,
    /// Reset velocities are drawn from `[-reset_speed, reset_speed]` per
    /// axis (flat world only).
    pub reset_speed: f64,
}

impl PuckConfig {
    pub fn flat() -> Self {
        PuckConfig {
            variant: PuckVariant::Flat,
            size: 100.0,
            thrust: 5.0,
            decision_interval: 0.1,
            substep: 0.01,
            restitution: 0.9,
            drag: 0.005,
            episode_secs: 30.0,
            gravity: 0.0,
            mass: 1.0,
            radius: 1.0,
            reset_speed: 10.0,
        }
    }

    pub fn mountain() -> Self {
        PuckConfig {
            variant: PuckVariant::Mountain,
            thrust: 3.0,
            episode_secs: 120.0,
            gravity: 10.0,
            reset_speed: 0.0,
            ..PuckConfig::flat()
        }
    }

    fn substeps(&self) -> Result<usize> {
        let ratio = self.decision_interval / self.substep;
        let n = ratio.round();
        if !(self.substep > 0.0) || n < 1.0 || (ratio - n).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "substep {} must divide the decision interval {}",
                self.substep, self.decision_interval
            )));
        }
        Ok(n as usize)
    }

    fn obs_dim(&self) -> usize {
        match self.variant {
            PuckVariant::Flat => 6,
            PuckVariant::Mountain => 9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PuckState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub tx: f64,
    pub ty: f64,
    /// Simulated seconds since the last reset.
    pub elapsed: f64,
}

impl PuckState {
    pub fn at_rest(x: f64, y: f64) -> Self {
        PuckState {
            x,
            y,
            vx: 0.0,
            vy: 0.0,
            tx: x,
            ty: y,
            elapsed: 0.0,
        }
    }

    pub fn speed_sq(&self) -> f64 {
        self.vx * self.vx + self.vy * self.vy
    }

    pub fn kinetic_energy(&self, mass: f64) -> f64 {
        0.5 * mass * self.speed_sq()
    }

    pub fn target_distance(&self) -> f64 {
        (self.x - self.tx).hypot(self.y - self.ty)
    }
}

#[derive(Clone, Debug)]
pub struct PuckEnv {
    config: PuckConfig,
    substeps: usize,
}

impl PuckEnv {
    pub fn new(config: PuckConfig) -> Result<Self> {
        let substeps = config.substeps()?;
        if !(config.size > 2.0 * config.radius) || !(config.mass > 0.0) {
            return Err(Error::Config("puck world geometry is invalid".into()));
        }
        if !(0.0..=1.0).contains(&config.restitution) {
            return Err(Error::Config(format!("restitution {} outside [0, 1]", config.restitution)));
        }
        Ok(PuckEnv { config, substeps })
    }

    pub fn flat() -> Self {
        PuckEnv::new(PuckConfig::flat()).expect("default flat config is valid")
    }

    pub fn mountain() -> Self {
        PuckEnv::new(PuckConfig::mountain()).expect("default mountain config is valid")
    }

    pub fn config(&self) -> &PuckConfig {
        &self.config
    }

    fn reflect(&self, pos: &mut f64, vel: &mut f64) {
        let lo = self.config.radius;
        let hi = self.config.size - self.config.radius;
        if *pos < lo {
            *pos = (2.0 * lo - *pos).min(hi);
            *vel = -self.config.restitution * *vel;
        } else if *pos > hi {
            *pos = (2.0 * hi - *pos).max(lo);
            *vel = -self.config.restitution * *vel;
        }
    }

    /// Integrates one decision interval under constant thrust `(fx, fy)`
    /// with semi-implicit Euler substeps. Does not advance the clock.
    pub fn integrate(&self, s: &mut PuckState, fx: f64, fy: f64) {
        let c = &self.config;
        let dt = c.substep;
        for _ in 0..self.substeps {
            let speed = s.vx.hypot(s.vy);
            let ax = (fx - c.drag * speed * s.vx) / c.mass;
            let mut ay = (fy - c.drag * speed * s.vy) / c.mass;
            if c.variant == PuckVariant::Mountain {
                ay -= c.gravity * mountain_slope(s.y);
            }
            s.vx += ax * dt;
            s.vy += ay * dt;
            s.x += s.vx * dt;
            s.y += s.vy * dt;
            self.reflect(&mut s.x, &mut s.vx);
            self.reflect(&mut s.y, &mut s.vy);
        }
    }

    fn random_position(&self, rng: &mut SimRng) -> f64 {
        rng.random_range(self.config.radius..self.config.size - self.config.radius)
    }

    fn start_state(&self, rng: &mut SimRng) -> PuckState {
        match self.config.variant {
            PuckVariant::Flat => {
                let v = self.config.reset_speed;
                let speed = |rng: &mut SimRng| if v > 0.0 { rng.random_range(-v..=v) } else { 0.0 };
                PuckState {
                    x: self.random_position(rng),
                    y: self.random_position(rng),
                    vx: speed(rng),
                    vy: speed(rng),
                    tx: self.random_position(rng),
                    ty: self.random_position(rng),
                    elapsed: 0.0,
                }
            }
            PuckVariant::Mountain => PuckState {
                x: self.random_position(rng),
                y: 0.5 * self.config.size,
                vx: 0.0,
                vy: 0.0,
                tx: 0.5 * self.config.size,
                ty: self.config.size,
                elapsed: 0.0,
            },
        }
    }

    fn reward(&self, s: &PuckState) -> f64 {
        match self.config.variant {
            PuckVariant::Flat => -s.target_distance(),
            PuckVariant::Mountain => mountain_reward(s),
        }
    }

    /// Scaled controller inputs.
    ///
    /// Flat: `x, y` mapped to `[-1, 1]`, velocities divided by 10, and the
    /// puck-minus-target offsets divided by the side length.
    /// Mountain: `x, y, z` mapped to `[-1, 1]`; the offsets to the centre of
    /// the northern wall (at plateau height) divided by the side length and
    /// plateau height; velocities `vx, vy, vz` divided by 10.
    pub fn observation(&self, s: &PuckState, out: &mut [f64]) {
        let half = 0.5 * self.config.size;
        let vscale = 10.0;
        match self.config.variant {
            PuckVariant::Flat => {
                out[0] = (s.x - half) / half;
                out[1] = (s.y - half) / half;
                out[2] = s.vx / vscale;
                out[3] = s.vy / vscale;
                out[4] = (s.x - s.tx) / self.config.size;
                out[5] = (s.y - s.ty) / self.config.size;
            }
            PuckVariant::Mountain => {
                let z = mountain_height(s.y);
                let zh = 0.5 * PLATEAU_HEIGHT;
                out[0] = (s.x - half) / half;
                out[1] = (s.y - half) / half;
                out[2] = (z - zh) / zh;
                out[3] = (s.x - half) / half;
                out[4] = (s.y - self.config.size) / self.config.size;
                out[5] = (z - PLATEAU_HEIGHT) / PLATEAU_HEIGHT;
                out[6] = s.vx / vscale;
                out[7] = s.vy / vscale;
                out[8] = mountain_slope(s.y) * s.vy / vscale;
            }
        }
    }
}

impl Environment for PuckEnv {
    type State = PuckState;

    fn num_controls(&self) -> usize {
        PUCK_CONTROLS.len()
    }

    fn obs_dim(&self) -> usize {
        self.config.obs_dim()
    }

    fn reward_bound(&self) -> f64 {
        let c = &self.config;
        match c.variant {
            PuckVariant::Flat => c.size * std::f64::consts::SQRT_2,
            PuckVariant::Mountain => {
                // Terminal speed under full diagonal thrust plus the speed
                // gained falling from the plateau, with a factor-2 margin.
                let terminal_sq = c.thrust * std::f64::consts::SQRT_2 / c.drag;
                100.0 + 2.0 * (terminal_sq + 2.0 * c.gravity * PLATEAU_HEIGHT)
            }
        }
    }

    fn reset(&self, rng: &mut SimRng) -> PuckState {
        self.start_state(rng)
    }

    fn observe(&self, state: &PuckState, _rng: &mut SimRng, obs: &mut [f64]) {
        self.observation(state, obs);
    }

    fn step(&self, state: &mut PuckState, control: usize, rng: &mut SimRng) -> f64 {
        let (sx, sy) = PUCK_CONTROLS[control];
        self.integrate(state, sx * self.config.thrust, sy * self.config.thrust);
        state.elapsed += self.config.decision_interval;
        if state.elapsed >= self.config.episode_secs - 1e-9 {
            *state = self.start_state(rng);
        }
        self.reward(state)
    }
}
