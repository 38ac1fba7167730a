//! Planar pose arithmetic shared by the plant and the firmware odometry.

use std::f64::consts::{PI, TAU};

/// Below this yaw rate an arc is integrated as a straight segment.
pub const STRAIGHT_LINE_EPS: f64 = 1e-9;

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose { x, y, theta }
    }
}

/// A left/right pair, one value per drive side.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SidePair<T> {
    pub left: T,
    pub right: T,
}

impl<T> SidePair<T> {
    pub fn new(left: T, right: T) -> Self {
        SidePair { left, right }
    }

    pub fn map<U>(self, mut f: impl FnMut(T) -> U) -> SidePair<U> {
        SidePair {
            left: f(self.left),
            right: f(self.right),
        }
    }
}

/// Chassis (v, omega) from side speeds and effective track width.
pub fn body_velocity(left: f64, right: f64, track_width: f64) -> (f64, f64) {
    ((left + right) / 2.0, (right - left) / track_width)
}

/// Exact integration of constant (v, omega) over `dt`.
pub fn arc_step(pose: Pose, v: f64, omega: f64, dt: f64) -> Pose {
    if omega.abs() < STRAIGHT_LINE_EPS {
        return Pose {
            x: pose.x + v * dt * pose.theta.cos(),
            y: pose.y + v * dt * pose.theta.sin(),
            theta: wrap_angle(pose.theta + omega * dt),
        };
    }
    let r = v / omega;
    let theta_next = pose.theta + omega * dt;
    Pose {
        x: pose.x + r * (theta_next.sin() - pose.theta.sin()),
        y: pose.y - r * (theta_next.cos() - pose.theta.cos()),
        theta: wrap_angle(theta_next),
    }
}
