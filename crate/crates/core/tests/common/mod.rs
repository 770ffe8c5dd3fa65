//! Test-only oracles, independent of the library's numerics.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Adaptive Simpson with Richardson correction.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    // Split into unit panels so the recursion never misses a fringe.
    let panels = ((b - a).ceil() as usize).max(1) * 4;
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let lo = a + k as f64 * h;
            let hi = lo + h;
            let (fa, fb) = (f(lo), f(hi));
            let (m, fm, whole) = simpson(f, lo, fa, hi, fb);
            recurse(f, lo, fa, hi, fb, m, fm, whole, tol / panels as f64, 40)
        })
        .sum()
}

fn sinc(z: f64) -> f64 {
    if z == 0.0 {
        1.0
    } else {
        z.sin() / z
    }
}

/// Joint density for s = 0 written out with explicit real/imaginary parts:
/// ψ_A = E·e^{iπu}, ψ_B = E·e^{−iπu}, splitter t = 1/√2, r = i/√2.
pub fn joint_oracle(u: f64, d1: bool, bs_in: bool, width_ratio: f64) -> f64 {
    let e = sinc(PI * width_ratio * u);
    let (ar, ai) = (e * (PI * u).cos(), e * (PI * u).sin());
    let (br, bi) = (e * (PI * u).cos(), -e * (PI * u).sin());
    let (re, im) = match (bs_in, d1) {
        (false, true) => (ar, ai),
        (false, false) => (br, bi),
        // t·ψ_A + r·ψ_B
        (true, true) => ((ar - bi) / 2f64.sqrt(), (ai + br) / 2f64.sqrt()),
        // r·ψ_A + t·ψ_B
        (true, false) => ((-ai + br) / 2f64.sqrt(), (ar + bi) / 2f64.sqrt()),
    };
    0.5 * (re * re + im * im)
}

pub fn grid(n: usize, range: f64) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| -range + 2.0 * range * k as f64 / (n - 1) as f64)
}
