#![allow(dead_code)]

use loadgame::{Breakpoint, CostCurve};
use proptest::prelude::*;

/// Random non-decreasing staircase/ramp with its last breakpoint at capacity.
/// Every segment has a positive slope, so the curve is strictly increasing.
pub fn strict_curve() -> impl Strategy<Value = CostCurve> {
    (
        0.0..20.0f64,
        prop::collection::vec(
            (
                0.5..10.0f64,
                0.01..3.0f64,
                prop::bool::weighted(0.3),
                0.1..5.0f64,
            ),
            1..5,
        ),
    )
        .prop_map(|(base, segments)| {
            let mut bps = vec![Breakpoint::new(0.0, base)];
            let (mut q, mut rate) = (0.0, base);
            for (width, rise, jump, jump_size) in segments {
                if jump && q > 0.0 {
                    rate += jump_size;
                    bps.push(Breakpoint::new(q, rate));
                }
                q += width;
                rate += rise;
                bps.push(Breakpoint::new(q, rate));
            }
            CostCurve::new(bps, q).expect("generated curve is valid")
        })
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + k as f64 * h);
    }
    sum * h / 3.0
}

/// Piecewise Simpson that splits at the supplied points so kinks and jumps
/// fall on panel edges.
pub fn simpson_split(f: impl Fn(f64) -> f64, a: f64, b: f64, cuts: &[f64]) -> f64 {
    let mut edges: Vec<f64> = cuts.iter().copied().filter(|&c| c > a && c < b).collect();
    edges.push(a);
    edges.push(b);
    edges.sort_by(f64::total_cmp);
    edges
        .windows(2)
        .map(|w| {
            if w[1] <= w[0] {
                return 0.0;
            }
            // evaluate just inside the panel so each side of a jump uses its own limit
            let d = 1e-9 * (w[1] - w[0]);
            simpson(|x| f(x.clamp(w[0] + d, w[1] - d)), w[0], w[1], 64)
        })
        .sum()
}

pub fn breakpoint_quantities(curve: &CostCurve) -> Vec<f64> {
    curve.breakpoints().iter().map(|b| b.quantity).collect()
}
