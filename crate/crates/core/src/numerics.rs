//! Small numerical helpers shared by the density and sampling code.

/// Number of intervals of the uniform grid used for every normalization
/// integral and for the sampler tables.
pub const GRID_INTERVALS: usize = 1 << 14;

/// `sin(z)/z`, continuous at zero.
pub fn sinc(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        let z2 = z * z;
        1.0 - z2 / 6.0 + z2 * z2 / 120.0
    } else {
        z.sin() / z
    }
}

/// Composite Simpson rule over `[lo, hi]` with `intervals` (even) panels.
pub fn simpson<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, intervals: usize) -> f64 {
    assert!(intervals >= 2 && intervals.is_multiple_of(2), "Simpson needs an even panel count");
    let h = (hi - lo) / intervals as f64;
    let mut odd = 0.0;
    let mut even = 0.0;
    for i in 1..intervals {
        let x = lo + i as f64 * h;
        if i % 2 == 1 {
            odd += f(x);
        } else {
            even += f(x);
        }
    }
    h / 3.0 * (f(lo) + f(hi) + 4.0 * odd + 2.0 * even)
}

/// Simpson integral on the standard grid.
pub fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> f64 {
    simpson(f, lo, hi, GRID_INTERVALS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn sinc_series_matches_direct_evaluation_near_cutoff() {
        let z = 1.0e-4;
        assert!((sinc(z * 0.999) - (z * 0.999).sin() / (z * 0.999)).abs() < 1e-16);
        assert_eq!(sinc(0.0), 1.0);
        assert!((sinc(PI)).abs() < 1e-16);
    }

    #[test]
    fn simpson_is_exact_for_cubics() {
        let v = simpson(|x| x * x * x - 2.0 * x + 1.0, -1.0, 2.0, 2);
        assert!((v - (15.0 / 4.0 - 3.0 + 3.0)).abs() < 1e-12);
    }

    #[test]
    fn integrate_sin_squared() {
        let v = integrate(|x| (PI * x).sin().powi(2), 0.0, 4.0);
        assert!((v - 2.0).abs() < 1e-12);
    }
}
