//! Closed-form Dubins shortest paths, used as an independent reference.

use std::f64::consts::{PI, TAU};

fn md(a: f64) -> f64 {
    a.rem_euclid(TAU)
}

/// Shortest Dubins path length (in units of length) between two oriented
/// points for minimum turning radius `rho`.
pub fn dubins_length(from: [f64; 3], to: [f64; 3], rho: f64) -> f64 {
    let dx = to[0] - from[0];
    let dy = to[1] - from[1];
    let d = dx.hypot(dy) / rho;
    let phi = dy.atan2(dx);
    let a = md(from[2] - phi);
    let b = md(to[2] - phi);
    let (sa, ca, sb, cb) = (a.sin(), a.cos(), b.sin(), b.cos());
    let cab = (a - b).cos();
    let mut best = f64::INFINITY;
    let mut take = |t: f64, p: f64, q: f64| {
        let l = t + p + q;
        if l.is_finite() && l < best {
            best = l;
        }
    };
    // LSL
    let p2 = 2.0 + d * d - 2.0 * cab + 2.0 * d * (sa - sb);
    if p2 >= 0.0 {
        let tmp = (cb - ca).atan2(d + sa - sb);
        take(md(-a + tmp), p2.sqrt(), md(b - tmp));
    }
    // RSR
    let p2 = 2.0 + d * d - 2.0 * cab + 2.0 * d * (sb - sa);
    if p2 >= 0.0 {
        let tmp = (ca - cb).atan2(d - sa + sb);
        take(md(a - tmp), p2.sqrt(), md(-b + tmp));
    }
    // LSR
    let p2 = -2.0 + d * d + 2.0 * cab + 2.0 * d * (sa + sb);
    if p2 >= 0.0 {
        let p = p2.sqrt();
        let tmp = (-ca - cb).atan2(d + sa + sb) - (-2.0f64).atan2(p);
        take(md(-a + tmp), p, md(-md(b) + tmp));
    }
    // RSL
    let p2 = -2.0 + d * d + 2.0 * cab - 2.0 * d * (sa + sb);
    if p2 >= 0.0 {
        let p = p2.sqrt();
        let tmp = (ca + cb).atan2(d - sa - sb) - 2.0f64.atan2(p);
        take(md(a - tmp), p, md(b - tmp));
    }
    // RLR
    let c = (6.0 - d * d + 2.0 * cab + 2.0 * d * (sa - sb)) / 8.0;
    if c.abs() <= 1.0 {
        let p = md(TAU - c.acos());
        let t = md(a - (ca - cb).atan2(d - sa + sb) + p / 2.0);
        take(t, p, md(a - b - t + p));
    }
    // LRL
    let c = (6.0 - d * d + 2.0 * cab + 2.0 * d * (sb - sa)) / 8.0;
    if c.abs() <= 1.0 {
        let p = md(TAU - c.acos());
        let t = md(-a - (ca - cb).atan2(d + sa - sb) + p / 2.0);
        take(t, p, md(b - a - t + p));
    }
    let _ = PI;
    best * rho
}

/// Minimum time for a Dubins car at `start` to reach the closed disk
/// `(center, radius)` with any heading, by brute force over boundary points
/// and terminal headings.
pub fn time_to_disk(start: [f64; 3], center: [f64; 2], radius: f64, rho: f64, speed: f64, n: usize) -> f64 {
    if (start[0] - center[0]).hypot(start[1] - center[1]) <= radius {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for i in 0..n {
        let a = TAU * i as f64 / n as f64;
        let p = [center[0] + radius * a.cos(), center[1] + radius * a.sin()];
        for j in 0..n {
            let h = TAU * j as f64 / n as f64;
            best = best.min(dubins_length(start, [p[0], p[1], h], rho));
        }
    }
    best / speed
}
