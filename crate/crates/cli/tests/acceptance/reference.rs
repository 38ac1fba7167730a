//! Deliberately naive reference implementations used as oracles.

/// Backtracking wildcard matcher over pre-split levels.
pub fn matches(filter: &str, topic: &str) -> bool {
    let f: Vec<&str> = filter.split('/').collect();
    let t: Vec<&str> = topic.split('/').collect();
    fn go(f: &[&str], t: &[&str]) -> bool {
        match (f.split_first(), t.split_first()) {
            (None, None) => true,
            // '#' swallows the parent level and everything below it
            (Some((&"#", _)), _) => true,
            (Some((&"+", fr)), Some((_, tr))) => go(fr, tr),
            (Some((lit, fr)), Some((lvl, tr))) => lit == lvl && go(fr, tr),
            _ => false,
        }
    }
    go(&f, &t)
}

/// Filter well-formedness by the rules alone: non-empty, `+` and `#` fill
/// whole levels, `#` only last.
pub fn filter_is_valid(filter: &str) -> bool {
    if filter.is_empty() {
        return false;
    }
    let levels: Vec<&str> = filter.split('/').collect();
    levels.iter().enumerate().all(|(i, l)| match *l {
        "+" => true,
        "#" => i == levels.len() - 1,
        other => !other.contains(['+', '#']),
    })
}

/// Pose after `dt` of explicit Euler steps of size `h` under constant
/// side speeds.
pub fn euler(mut pose: (f64, f64, f64), left: f64, right: f64, b: f64, dt: f64, h: f64) -> (f64, f64, f64) {
    let v = (left + right) / 2.0;
    let w = (right - left) / b;
    let n = (dt / h).round() as usize;
    for _ in 0..n {
        let (x, y, th) = pose;
        pose = (x + h * v * th.cos(), y + h * v * th.sin(), th + h * w);
    }
    pose
}

/// Angle difference folded into (-pi, pi].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let mut d = (a - b) % std::f64::consts::TAU;
    if d > std::f64::consts::PI {
        d -= std::f64::consts::TAU;
    } else if d <= -std::f64::consts::PI {
        d += std::f64::consts::TAU;
    }
    d
}

/// The reference matcher on hand-checked cases.
pub fn matcher_self_check() -> bool {
    matches("openscout/+/cmd_vel", "openscout/alpha/cmd_vel")
        && matches("a/#", "a/b/c")
        && matches("a/#", "a")
        && matches("#", "a")
        && !matches("a/+", "a/b/c")
        && !matches("a/+", "a")
        && !matches("a/b", "a")
}
