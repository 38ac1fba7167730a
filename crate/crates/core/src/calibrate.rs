//! Steady-state envelope check: saturated straight and spin runs through
//! the full fast-mode pipeline, measured against the calibration anchors.

use serde::Serialize;

use crate::config::StackConfig;
use crate::plant::v_max_of_payload;
use crate::robot::RobotError;
use crate::ros::Twist;
use crate::sim::{World, HOLD_INTERVAL};

pub const CALIBRATION_PAYLOADS: [f64; 3] = [0.0, 3.0, 6.0];
pub const CALIBRATION_TOLERANCE: f64 = 0.02;

/// Command magnitude far beyond the envelope, so both sides saturate.
const SATURATING: f64 = 10.0;
const SETTLE_S: f64 = 2.0;
const MEASURE_S: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Measurement {
    pub measured: f64,
    pub target: f64,
    pub rel_error: f64,
    pub pass: bool,
}

impl Measurement {
    fn new(measured: f64, target: f64) -> Self {
        let rel_error = (measured - target).abs() / target.abs();
        Measurement {
            measured,
            target,
            rel_error,
            pass: rel_error <= CALIBRATION_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PayloadCalibration {
    pub payload_kg: f64,
    pub v_max: Measurement,
    /// Spin target is the ω anchor at its payload, `2·v_max/b` elsewhere.
    pub omega_max: Measurement,
    pub omega_anchored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub tolerance: f64,
    pub track_width_effective: f64,
    pub payloads: Vec<PayloadCalibration>,
    pub pass: bool,
}

impl CalibrationReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "calibration (b_eff = {:.6} m, tolerance {}%)\n",
            self.track_width_effective,
            self.tolerance * 100.0
        );
        for p in &self.payloads {
            let verdict = |m: &Measurement| if m.pass { "pass" } else { "FAIL" };
            out += &format!(
                "payload {} kg: v {:.3} (target {:.3}) {}, omega {:.3} (target {:.3}{}) {}\n",
                p.payload_kg,
                p.v_max.measured,
                p.v_max.target,
                verdict(&p.v_max),
                p.omega_max.measured,
                p.omega_max.target,
                if p.omega_anchored { "" } else { ", derived" },
                verdict(&p.omega_max),
            );
        }
        out += if self.pass { "overall: pass\n" } else { "overall: FAIL\n" };
        out
    }
}

/// Mean ground-truth (v, ω) over the last `MEASURE_S` of a held command,
/// sampled every hold interval.
pub fn steady_state(cfg: &StackConfig, payload_kg: f64, cmd: Twist) -> Result<(f64, f64), RobotError> {
    let mut cfg = cfg.clone();
    cfg.robot.payload_kg = payload_kg;
    let mut w = World::new(&cfg)?;
    w.drive(cmd, SETTLE_S)?;
    let (mut sv, mut sw, mut n) = (0.0, 0.0, 0u32);
    while w.clock() < SETTLE_S + MEASURE_S - 1e-9 {
        w.drive(cmd, w.clock() + HOLD_INTERVAL)?;
        let (v, omega) = w.robot().plant().body_velocity();
        sv += v;
        sw += omega;
        n += 1;
    }
    Ok((sv / n as f64, sw / n as f64))
}

pub fn calibrate(cfg: &StackConfig) -> Result<CalibrationReport, RobotError> {
    cfg.validate()?;
    let anchors = &cfg.robot.anchors;
    let b = cfg.robot.track_width_effective;
    let mut payloads = Vec::new();
    for m in CALIBRATION_PAYLOADS {
        let v_target = v_max_of_payload(m, anchors)?;
        let (v, _) = steady_state(cfg, m, Twist::new(SATURATING, 0.0))?;
        let (_, omega) = steady_state(cfg, m, Twist::new(0.0, SATURATING))?;
        let omega_anchored = (m - anchors.omega_max.0).abs() < 1e-12;
        let omega_target = if omega_anchored {
            anchors.omega_max.1
        } else {
            2.0 * v_target / b
        };
        payloads.push(PayloadCalibration {
            payload_kg: m,
            v_max: Measurement::new(v, v_target),
            omega_max: Measurement::new(omega, omega_target),
            omega_anchored,
        });
    }
    let pass = payloads.iter().all(|p| p.v_max.pass && p.omega_max.pass);
    Ok(CalibrationReport {
        tolerance: CALIBRATION_TOLERANCE,
        track_width_effective: b,
        payloads,
        pass,
    })
}
