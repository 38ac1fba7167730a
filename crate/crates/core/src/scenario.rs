//! Timed scenario scripts run against a fast-mode [`World`].
//!
//! ```text
//! # drive, then check the steady state
//! SEED 7
//! AT 0   CMD 0.5 0 5        # v, omega, optional hold (s)
//! AT 2   PAYLOAD 6
//! AT 4.5 ASSERT speed 0.45 2%
//! AT 8   ASSERT speed 0 0.01
//! DURATION 8
//! ```
//!
//! A held `CMD` is re-published every 0.1 s until `t + hold`, which is
//! what keeps the command watchdog quiet. Tolerances ending in `%` are
//! relative to the target, otherwise absolute.

use std::fmt;
use std::str::FromStr;

use crate::config::StackConfig;
use crate::robot::RobotError;
use crate::ros::Twist;
pub use crate::sim::HOLD_INTERVAL;
use crate::sim::World;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub msg: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Ground-truth chassis speed (m/s).
    Speed,
    /// Ground-truth yaw rate (rad/s).
    Omega,
    X,
    Y,
    Theta,
    Battery,
    /// Twist in the latest odometry message received by the operator.
    OdomSpeed,
    OdomOmega,
    OdomX,
    OdomY,
    OdomTheta,
    DutyLeft,
    DutyRight,
    /// 1 when the firmware watchdog is tripped, else 0.
    Watchdog,
}

impl Metric {
    pub const ALL: [Metric; 14] = [
        Metric::Speed,
        Metric::Omega,
        Metric::X,
        Metric::Y,
        Metric::Theta,
        Metric::Battery,
        Metric::OdomSpeed,
        Metric::OdomOmega,
        Metric::OdomX,
        Metric::OdomY,
        Metric::OdomTheta,
        Metric::DutyLeft,
        Metric::DutyRight,
        Metric::Watchdog,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Speed => "speed",
            Metric::Omega => "omega",
            Metric::X => "x",
            Metric::Y => "y",
            Metric::Theta => "theta",
            Metric::Battery => "battery",
            Metric::OdomSpeed => "odom-speed",
            Metric::OdomOmega => "odom-omega",
            Metric::OdomX => "odom-x",
            Metric::OdomY => "odom-y",
            Metric::OdomTheta => "odom-theta",
            Metric::DutyLeft => "duty-left",
            Metric::DutyRight => "duty-right",
            Metric::Watchdog => "watchdog",
        }
    }

    pub fn sample(self, w: &World) -> f64 {
        let plant = w.robot().plant();
        let (v, omega) = plant.body_velocity();
        let pose = plant.state().pose;
        let odom = w.last_odom().copied().unwrap_or_default();
        match self {
            Metric::Speed => v,
            Metric::Omega => omega,
            Metric::X => pose.x,
            Metric::Y => pose.y,
            Metric::Theta => pose.theta,
            Metric::Battery => plant.state().battery_pct,
            Metric::OdomSpeed => odom.twist.linear_x,
            Metric::OdomOmega => odom.twist.angular_z,
            Metric::OdomX => odom.x,
            Metric::OdomY => odom.y,
            Metric::OdomTheta => odom.theta,
            Metric::DutyLeft => w.robot().duty().left,
            Metric::DutyRight => w.robot().duty().right,
            Metric::Watchdog => u8::from(w.robot().firmware().state().watchdog_tripped).into(),
        }
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.to_ascii_lowercase().replace('_', "-");
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown metric `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tolerance {
    Absolute(f64),
    /// Percent of |target|.
    Percent(f64),
}

impl Tolerance {
    pub fn bound(self, target: f64) -> f64 {
        match self {
            Tolerance::Absolute(a) => a,
            Tolerance::Percent(p) => p / 100.0 * target.abs(),
        }
    }
}

impl fmt::Display for Tolerance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tolerance::Absolute(a) => write!(f, "{a}"),
            Tolerance::Percent(p) => write!(f, "{p}%"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assertion {
    pub metric: Metric,
    pub target: f64,
    pub tolerance: Tolerance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    Cmd { twist: Twist, hold: f64 },
    Payload(f64),
    Assert(Assertion),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub line: usize,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scenario {
    pub events: Vec<Event>,
    pub duration: f64,
    pub seed: Option<u64>,
}

impl FromStr for Scenario {
    type Err = ParseError;

    fn from_str(text: &str) -> Result<Self, ParseError> {
        let mut sc = Scenario::default();
        let mut duration = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: String| ParseError { line, msg };
            let words: Vec<&str> = raw.split('#').next().unwrap_or("").split_whitespace().collect();
            let num = |s: &str, what: &str| -> Result<f64, ParseError> {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("{what}: expected a number, got `{s}`")))
            };
            match words.as_slice() {
                [] => {}
                [kw, t] if kw.eq_ignore_ascii_case("DURATION") => {
                    let d = num(t, "duration")?;
                    if d < 0.0 {
                        return Err(err("duration must be >= 0".into()));
                    }
                    duration = Some((d, line));
                }
                [kw, s] if kw.eq_ignore_ascii_case("SEED") => {
                    sc.seed = Some(s.parse().map_err(|_| err(format!("seed: expected an integer, got `{s}`")))?);
                }
                [at, t, kind, args @ ..] if at.eq_ignore_ascii_case("AT") => {
                    let time = num(t, "time")?;
                    if time < 0.0 {
                        return Err(err("event time must be >= 0".into()));
                    }
                    if sc.events.last().is_some_and(|e| e.time > time) {
                        return Err(err("event times must be non-decreasing".into()));
                    }
                    let action = match (kind.to_ascii_uppercase().as_str(), args) {
                        ("CMD", [v, w]) => Action::Cmd {
                            twist: Twist::new(num(v, "v")?, num(w, "omega")?),
                            hold: 0.0,
                        },
                        ("CMD", [v, w, h]) => {
                            let hold = num(h, "hold")?;
                            if hold < 0.0 {
                                return Err(err("hold must be >= 0".into()));
                            }
                            Action::Cmd {
                                twist: Twist::new(num(v, "v")?, num(w, "omega")?),
                                hold,
                            }
                        }
                        ("PAYLOAD", [kg]) => Action::Payload(num(kg, "payload")?),
                        ("ASSERT", [m, target, tol]) => Action::Assert(Assertion {
                            metric: m.parse().map_err(err)?,
                            target: num(target, "target")?,
                            tolerance: parse_tolerance(tol).ok_or_else(|| err(format!("bad tolerance `{tol}`")))?,
                        }),
                        ("CMD", _) => return Err(err("expected `AT <t> CMD <v> <omega> [hold]`".into())),
                        ("PAYLOAD", _) => return Err(err("expected `AT <t> PAYLOAD <kg>`".into())),
                        ("ASSERT", _) => {
                            return Err(err("expected `AT <t> ASSERT <metric> <target> <tol[%]>`".into()))
                        }
                        (other, _) => return Err(err(format!("unknown event `{other}`"))),
                    };
                    sc.events.push(Event { time, line, action });
                }
                _ => return Err(err(format!("cannot parse `{}`", raw.trim()))),
            }
        }
        let last = sc.events.iter().map(|e| e.time).fold(0.0, f64::max);
        sc.duration = match duration {
            Some((d, line)) if d < last => {
                return Err(ParseError {
                    line,
                    msg: format!("duration {d} is before the last event at {last}"),
                })
            }
            Some((d, _)) => d,
            None => last,
        };
        Ok(sc)
    }
}

fn parse_tolerance(s: &str) -> Option<Tolerance> {
    let t = match s.strip_suffix('%') {
        Some(p) => Tolerance::Percent(p.parse().ok()?),
        None => Tolerance::Absolute(s.parse().ok()?),
    };
    match t {
        Tolerance::Absolute(v) | Tolerance::Percent(v) if v >= 0.0 && v.is_finite() => Some(t),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssertionResult {
    pub time: f64,
    pub line: usize,
    pub assertion: Assertion,
    pub actual: f64,
    pub passed: bool,
}

impl fmt::Display for AssertionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = &self.assertion;
        write!(
            f,
            "{} t={} {}: expected {} ± {}, actual {:.6} (line {})",
            if self.passed { "PASS" } else { "FAIL" },
            self.time,
            a.metric.name(),
            a.target,
            a.tolerance,
            self.actual,
            self.line
        )
    }
}

#[derive(Debug)]
pub struct ScenarioReport {
    pub results: Vec<AssertionResult>,
    pub world: World,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }
}

/// Runs `sc` in fast virtual time. A `SEED` line in the scenario overrides
/// the config seed.
pub fn run_scenario(sc: &Scenario, cfg: &StackConfig) -> Result<ScenarioReport, RobotError> {
    let mut cfg = cfg.clone();
    if let Some(seed) = sc.seed {
        cfg.seed = seed;
    }
    let mut world = World::new(&cfg)?;
    let eps = cfg.robot.control_period() / 2.0;
    let mut results = Vec::new();
    let mut held: Option<(Twist, f64, f64)> = None;
    let mut next = 0;
    loop {
        let now = world.clock();
        if let Some((twist, until, due)) = held {
            if due <= now + eps {
                world.command(twist)?;
                let due = due + HOLD_INTERVAL;
                held = (due <= until + eps).then_some((twist, until, due));
            }
        }
        while let Some(ev) = sc.events.get(next).filter(|e| e.time <= now + eps) {
            match ev.action {
                Action::Cmd { twist, hold } => {
                    world.command(twist)?;
                    let due = now + HOLD_INTERVAL;
                    held = (hold > 0.0 && due <= now + hold + eps).then_some((twist, now + hold, due));
                }
                Action::Payload(kg) => world.set_payload(kg)?,
                Action::Assert(a) => {
                    let actual = a.metric.sample(&world);
                    results.push(AssertionResult {
                        time: ev.time,
                        line: ev.line,
                        assertion: a,
                        actual,
                        passed: (actual - a.target).abs() <= a.tolerance.bound(a.target),
                    });
                }
            }
            next += 1;
        }
        if now >= sc.duration - eps {
            break;
        }
        world.step()?;
    }
    Ok(ScenarioReport { results, world })
}
