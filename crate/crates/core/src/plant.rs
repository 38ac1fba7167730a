//! Ground-truth skid-steer vehicle model.
//!
//! The plant is deliberately simple: each drive side is a first-order lag
//! toward `duty * v_max(payload)`, the chassis follows exact arcs with a
//! single effective track width standing in for skid scrub, each of the
//! four Hall encoders accumulates fractional ticks, and the battery drains
//! linearly with mean absolute duty.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::RobotConfig;
use crate::geometry::{arc_step, body_velocity, Pose, SidePair};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlantError {
    #[error("payload {payload} kg outside the calibrated envelope [{min}, {max}] kg")]
    OutOfEnvelope { payload: f64, min: f64, max: f64 },
    #[error("invalid calibration anchors: {0}")]
    InvalidAnchors(&'static str),
    #[error("invalid encoder noise sigma {0}")]
    InvalidNoise(f64),
}

/// Payload-dependent speed envelope and battery endurance.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationAnchors {
    /// (payload kg, straight-line v_max m/s), payload strictly increasing.
    pub v_max: Vec<(f64, f64)>,
    /// (payload kg, spin-rate rad/s) the effective track width is fitted to.
    pub omega_max: (f64, f64),
    /// Seconds of full-duty driving from 100 % to empty.
    pub battery_endurance_s: f64,
}

impl Default for CalibrationAnchors {
    fn default() -> Self {
        CalibrationAnchors {
            v_max: vec![(0.0, 0.60), (3.0, 0.50), (6.0, 0.45)],
            omega_max: (3.0, 0.35),
            battery_endurance_s: 3600.0,
        }
    }
}

impl CalibrationAnchors {
    pub fn validate(&self) -> Result<(), PlantError> {
        if self.v_max.is_empty() {
            return Err(PlantError::InvalidAnchors("no v_max anchors"));
        }
        if self.v_max.iter().any(|&(m, v)| !(m >= 0.0 && v > 0.0 && m.is_finite() && v.is_finite())) {
            return Err(PlantError::InvalidAnchors("anchor payloads must be >= 0 and speeds > 0"));
        }
        for w in self.v_max.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(PlantError::InvalidAnchors("payloads must be strictly increasing"));
            }
            if w[1].1 >= w[0].1 {
                return Err(PlantError::InvalidAnchors("speeds must be strictly decreasing"));
            }
        }
        if !(self.omega_max.1 > 0.0 && self.omega_max.1.is_finite()) {
            return Err(PlantError::InvalidAnchors("omega_max must be positive"));
        }
        if !(self.battery_endurance_s > 0.0 && self.battery_endurance_s.is_finite()) {
            return Err(PlantError::InvalidAnchors("battery endurance must be positive"));
        }
        v_max_of_payload(self.omega_max.0, self)
            .map_err(|_| PlantError::InvalidAnchors("omega anchor payload outside v_max anchors"))?;
        Ok(())
    }

    pub fn payload_range(&self) -> (f64, f64) {
        (self.v_max[0].0, self.v_max[self.v_max.len() - 1].0)
    }

    /// Track width that makes saturated counter-rotation hit the spin anchor:
    /// `omega = 2 v_max / b`.
    pub fn fitted_track_width(&self) -> f64 {
        let (m, omega) = self.omega_max;
        let v = v_max_of_payload(m, self).expect("validated anchors");
        2.0 * v / omega
    }
}

/// Piecewise-linear straight-line speed limit for a payload.
pub fn v_max_of_payload(payload_kg: f64, anchors: &CalibrationAnchors) -> Result<f64, PlantError> {
    let (min, max) = anchors.payload_range();
    if !(payload_kg >= min && payload_kg <= max) {
        return Err(PlantError::OutOfEnvelope {
            payload: payload_kg,
            min,
            max,
        });
    }
    let pts = &anchors.v_max;
    if pts.len() == 1 {
        return Ok(pts[0].1);
    }
    let i = pts
        .windows(2)
        .position(|w| payload_kg <= w[1].0)
        .unwrap_or(pts.len() - 2);
    let (m0, v0) = pts[i];
    let (m1, v1) = pts[i + 1];
    Ok(v0 + (v1 - v0) * (payload_kg - m0) / (m1 - m0))
}

/// First-order lag of a side's speed toward `duty * v_max`.
pub fn motor_step(wheel_speed: f64, duty: f64, dt: f64, v_max: f64, tau: f64) -> f64 {
    wheel_speed + (duty * v_max - wheel_speed) * (1.0 - (-dt / tau).exp())
}

/// Advances the chassis pose for constant side speeds over `dt`.
pub fn chassis_step(pose: Pose, left: f64, right: f64, track_width: f64, dt: f64) -> Pose {
    let (v, omega) = body_velocity(left, right, track_width);
    arc_step(pose, v, omega, dt)
}

/// Accumulates encoder rotation; returns the new residual and the whole
/// ticks emitted (truncated toward zero).
pub fn encoder_step(
    residual: f64,
    wheel_speed: f64,
    dt: f64,
    wheel_radius: f64,
    ticks_per_rev: u32,
) -> (f64, i64) {
    if wheel_speed == 0.0 {
        return (residual, 0);
    }
    let total =
        residual + wheel_speed / (std::f64::consts::TAU * wheel_radius) * ticks_per_rev as f64 * dt;
    let emitted = total.trunc();
    (total - emitted, emitted as i64)
}

/// Idle draw as a fraction of full-duty draw.
pub const IDLE_DRAIN_FRACTION: f64 = 0.1;

pub fn battery_step(pct: f64, duty: SidePair<f64>, dt: f64, endurance_s: f64) -> f64 {
    let mean = (duty.left.abs() + duty.right.abs()) / 2.0;
    let rate = 100.0 / endurance_s * (IDLE_DRAIN_FRACTION + (1.0 - IDLE_DRAIN_FRACTION) * mean);
    (pct - rate * dt).max(0.0)
}

/// Encoder order used throughout: left-front, left-back, right-front, right-back.
pub const ENCODER_SIDES: [Side; 4] = [Side::Left, Side::Left, Side::Right, Side::Right];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub pose: Pose,
    pub wheel_speed: SidePair<f64>,
    pub encoder_residual: [f64; 4],
    pub battery_pct: f64,
    pub clock: f64,
}

#[derive(Debug, Clone)]
pub struct Plant {
    state: PlantState,
    anchors: CalibrationAnchors,
    payload_kg: f64,
    v_max: f64,
    track_width: f64,
    wheel_radius: f64,
    ticks_per_rev: u32,
    tau: f64,
    substep: f64,
    substeps_done: u64,
    noise: Option<(Normal<f64>, ChaCha8Rng)>,
}

impl Plant {
    pub fn new(cfg: &RobotConfig, seed: u64) -> Result<Self, PlantError> {
        let v_max = v_max_of_payload(cfg.payload_kg, &cfg.anchors)?;
        let noise = if cfg.encoder_noise > 0.0 {
            let dist =
                Normal::new(0.0, cfg.encoder_noise).map_err(|_| PlantError::InvalidNoise(cfg.encoder_noise))?;
            Some((dist, ChaCha8Rng::seed_from_u64(seed)))
        } else if cfg.encoder_noise == 0.0 {
            None
        } else {
            return Err(PlantError::InvalidNoise(cfg.encoder_noise));
        };
        Ok(Plant {
            state: PlantState {
                pose: Pose::default(),
                wheel_speed: SidePair::default(),
                encoder_residual: [0.0; 4],
                battery_pct: 100.0,
                clock: 0.0,
            },
            anchors: cfg.anchors.clone(),
            payload_kg: cfg.payload_kg,
            v_max,
            track_width: cfg.track_width_effective,
            wheel_radius: cfg.wheel_radius,
            ticks_per_rev: cfg.ticks_per_rev,
            tau: cfg.motor_tau,
            substep: 1.0 / cfg.plant_rate as f64,
            substeps_done: 0,
            noise,
        })
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn payload_kg(&self) -> f64 {
        self.payload_kg
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn track_width(&self) -> f64 {
        self.track_width
    }

    /// Chassis (v, omega) implied by the current side speeds.
    pub fn body_velocity(&self) -> (f64, f64) {
        body_velocity(
            self.state.wheel_speed.left,
            self.state.wheel_speed.right,
            self.track_width,
        )
    }

    /// Changes the carried payload. Side speeds above the new limit are
    /// clipped to it.
    pub fn set_payload(&mut self, payload_kg: f64) -> Result<(), PlantError> {
        self.v_max = v_max_of_payload(payload_kg, &self.anchors)?;
        self.payload_kg = payload_kg;
        let lim = self.v_max;
        self.state.wheel_speed = self.state.wheel_speed.map(|v| v.clamp(-lim, lim));
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn set_battery(&mut self, pct: f64) {
        self.state.battery_pct = pct;
    }

    /// One fixed substep under constant duty. Returns ticks per encoder.
    pub fn substep(&mut self, duty: SidePair<f64>) -> [i64; 4] {
        let dt = self.substep;
        let duty = duty.map(|d| d.clamp(-1.0, 1.0));
        let s = &mut self.state;
        s.battery_pct = battery_step(s.battery_pct, duty, dt, self.anchors.battery_endurance_s);
        let drive = if s.battery_pct > 0.0 {
            duty
        } else {
            SidePair::default()
        };
        s.wheel_speed = SidePair::new(
            motor_step(s.wheel_speed.left, drive.left, dt, self.v_max, self.tau),
            motor_step(s.wheel_speed.right, drive.right, dt, self.v_max, self.tau),
        );
        s.pose = chassis_step(
            s.pose,
            s.wheel_speed.left,
            s.wheel_speed.right,
            self.track_width,
            dt,
        );
        let mut ticks = [0i64; 4];
        for (i, side) in ENCODER_SIDES.iter().enumerate() {
            let mut speed = match side {
                Side::Left => s.wheel_speed.left,
                Side::Right => s.wheel_speed.right,
            };
            if let Some((dist, rng)) = self.noise.as_mut() {
                speed += dist.sample(rng);
            }
            let (res, emitted) = encoder_step(
                s.encoder_residual[i],
                speed,
                dt,
                self.wheel_radius,
                self.ticks_per_rev,
            );
            s.encoder_residual[i] = res;
            ticks[i] = emitted;
        }
        self.substeps_done += 1;
        s.clock = self.substeps_done as f64 * dt;
        ticks
    }

    /// Runs `n` substeps under constant duty, summing the encoder ticks.
    pub fn advance(&mut self, duty: SidePair<f64>, n: u32) -> [i64; 4] {
        let mut total = [0i64; 4];
        for _ in 0..n {
            let t = self.substep(duty);
            for (acc, d) in total.iter_mut().zip(t) {
                *acc += d;
            }
        }
        total
    }
}
