//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines are always printed.

/// Fails the enclosing criterion with a formatted reason.
macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

mod codec;
mod pipeline;
mod reference;
mod sim;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

/// `Ok(detail)` on pass, `Err(reason)` on failure.
pub type Verdict = Result<String, String>;

type Criterion = (&'static str, fn() -> Verdict);

const CRITERIA: &[Criterion] = &[
    ("calibration anchors", sim::calibration),
    ("battery endurance", sim::battery),
    ("end-to-end pipeline", pipeline::end_to_end),
    ("watchdog", sim::watchdog),
    ("codec conformance", codec::conformance),
    ("broker behavior", broker::behavior),
    ("numerics", sim::numerics),
    ("determinism", sim::determinism),
];

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    let mut ran = 0;
    for (name, check) in CRITERIA {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("PASS {name} [{secs:.2}s]: {detail}"),
            Err(reason) => {
                failures += 1;
                println!("FAIL {name} [{secs:.2}s]: {reason}");
            }
        }
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
