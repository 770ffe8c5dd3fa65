//! Closed-form biphoton amplitudes and detection densities.
//!
//! Everything here works in the dimensionless D0 coordinate `u = x·d/(λL)`,
//! in which the two-slit fringe period is exactly 1. Each slit contributes a
//! single-slit Fraunhofer envelope `sinc(π(a/d)(u ∓ s))` times a phase
//! `exp(±iπu)`; the idler arm routes each slit to D1/D2 either directly
//! (which-path configuration) or through a symmetric 50/50 beam splitter.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::ops::{Add, Mul};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{integrate, sinc};

/// Geometry and timing of one experiment setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApparatusConfig {
    pub wavelength_nm: f64,
    pub slit_separation_um: f64,
    pub slit_width_um: f64,
    pub screen_distance_m: f64,
    pub beam_splitter_in: bool,
    /// Signed shift of each slit's envelope centre, in fringe periods.
    pub envelope_offset: f64,
    /// Half-width `U` of the D0 coordinate range.
    pub detector_range: f64,
    pub idler_delay_ns: f64,
    pub detector_response_ns: f64,
}

impl Default for ApparatusConfig {
    fn default() -> Self {
        ApparatusConfig {
            wavelength_nm: 702.0,
            slit_separation_um: 300.0,
            slit_width_um: 60.0,
            screen_distance_m: 2.0,
            beam_splitter_in: false,
            envelope_offset: 0.0,
            detector_range: 5.0,
            idler_delay_ns: 8.0,
            detector_response_ns: 1.0,
        }
    }
}

impl ApparatusConfig {
    pub fn with_beam_splitter(mut self, inserted: bool) -> Self {
        self.beam_splitter_in = inserted;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("wavelength", self.wavelength_nm),
            ("slit separation", self.slit_separation_um),
            ("slit width", self.slit_width_um),
            ("screen distance", self.screen_distance_m),
            ("detector range", self.detector_range),
            ("detector response", self.detector_response_ns),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        if self.slit_width_um >= self.slit_separation_um {
            return Err(Error::InvalidConfig(format!(
                "slit width {} µm must be smaller than slit separation {} µm",
                self.slit_width_um, self.slit_separation_um
            )));
        }
        if !self.envelope_offset.is_finite() {
            return Err(Error::InvalidConfig("envelope offset must be finite".into()));
        }
        if !(self.idler_delay_ns.is_finite() && self.idler_delay_ns > self.detector_response_ns) {
            return Err(Error::InvalidConfig(format!(
                "idler delay {} ns must exceed the detector response {} ns",
                self.idler_delay_ns, self.detector_response_ns
            )));
        }
        Ok(())
    }

    /// `a/d`, the ratio setting how many fringes fit under the envelope.
    pub fn width_ratio(&self) -> f64 {
        self.slit_width_um / self.slit_separation_um
    }

    /// Physical fringe period `λL/d` in metres.
    pub fn fringe_period_m(&self) -> f64 {
        self.wavelength_nm * 1e-9 * self.screen_distance_m / (self.slit_separation_um * 1e-6)
    }

    /// Maps a D0 displacement in metres onto the fringe-period coordinate.
    pub fn to_dimensionless(&self, x_m: f64) -> f64 {
        x_m / self.fringe_period_m()
    }

    pub fn to_physical(&self, u: f64) -> f64 {
        u * self.fringe_period_m()
    }

    fn check_range(&self, u: f64) -> Result<()> {
        if u.abs() <= self.detector_range {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                u,
                range: self.detector_range,
            })
        }
    }
}

/// Free-function form of [`ApparatusConfig::to_dimensionless`].
pub fn to_dimensionless(x_m: f64, config: &ApparatusConfig) -> f64 {
    config.to_dimensionless(x_m)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ComplexAmplitude {
    pub re: f64,
    pub im: f64,
}

impl ComplexAmplitude {
    pub const ZERO: ComplexAmplitude = ComplexAmplitude { re: 0.0, im: 0.0 };
    pub const ONE: ComplexAmplitude = ComplexAmplitude { re: 1.0, im: 0.0 };

    pub const fn new(re: f64, im: f64) -> Self {
        ComplexAmplitude { re, im }
    }

    pub fn from_polar(modulus: f64, phase: f64) -> Self {
        ComplexAmplitude {
            re: modulus * phase.cos(),
            im: modulus * phase.sin(),
        }
    }

    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    pub fn modulus(self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn phase(self) -> f64 {
        self.im.atan2(self.re)
    }

    pub fn conj(self) -> Self {
        ComplexAmplitude::new(self.re, -self.im)
    }
}

impl Add for ComplexAmplitude {
    type Output = ComplexAmplitude;

    fn add(self, rhs: Self) -> Self {
        ComplexAmplitude::new(self.re + rhs.re, self.im + rhs.im)
    }
}

impl Mul for ComplexAmplitude {
    type Output = ComplexAmplitude;

    fn mul(self, rhs: Self) -> Self {
        ComplexAmplitude::new(
            self.re * rhs.re - self.im * rhs.im,
            self.re * rhs.im + self.im * rhs.re,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlitLabel {
    A,
    B,
}

impl SlitLabel {
    pub const ALL: [SlitLabel; 2] = [SlitLabel::A, SlitLabel::B];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IdlerDetector {
    D1,
    D2,
}

impl IdlerDetector {
    pub const ALL: [IdlerDetector; 2] = [IdlerDetector::D1, IdlerDetector::D2];

    pub fn label(self) -> &'static str {
        match self {
            IdlerDetector::D1 => "D1",
            IdlerDetector::D2 => "D2",
        }
    }
}

impl fmt::Display for IdlerDetector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Signal-photon amplitude at `u` for a pair born in `slit`.
pub fn slit_amplitude(u: f64, slit: SlitLabel, config: &ApparatusConfig) -> ComplexAmplitude {
    let (centre, sign) = match slit {
        SlitLabel::A => (config.envelope_offset, 1.0),
        SlitLabel::B => (-config.envelope_offset, -1.0),
    };
    let envelope = sinc(PI * config.width_ratio() * (u - centre));
    ComplexAmplitude::from_polar(envelope, sign * PI * u)
}

/// Amplitude for an idler from `slit` to reach `detector`.
///
/// Without the beam splitter A goes to D1 and B to D2. With it, the
/// transmitted paths are A→D1 and B→D2 (amplitude 1/√2) and the reflected
/// paths pick up a factor i/√2.
pub fn idler_transfer(slit: SlitLabel, detector: IdlerDetector, bs_in: bool) -> ComplexAmplitude {
    let transmitted = matches!(
        (slit, detector),
        (SlitLabel::A, IdlerDetector::D1) | (SlitLabel::B, IdlerDetector::D2)
    );
    match (bs_in, transmitted) {
        (false, true) => ComplexAmplitude::ONE,
        (false, false) => ComplexAmplitude::ZERO,
        (true, true) => ComplexAmplitude::new(FRAC_1_SQRT_2, 0.0),
        (true, false) => ComplexAmplitude::new(0.0, FRAC_1_SQRT_2),
    }
}

/// The 2×2 idler transfer matrix, rows indexed by detector, columns by slit.
pub fn transfer_matrix(bs_in: bool) -> [[ComplexAmplitude; 2]; 2] {
    let mut m = [[ComplexAmplitude::ZERO; 2]; 2];
    for (row, det) in IdlerDetector::ALL.into_iter().enumerate() {
        for (col, slit) in SlitLabel::ALL.into_iter().enumerate() {
            m[row][col] = idler_transfer(slit, det, bs_in);
        }
    }
    m
}

fn joint_unchecked(u: f64, detector: IdlerDetector, config: &ApparatusConfig) -> f64 {
    let bs = config.beam_splitter_in;
    let total = slit_amplitude(u, SlitLabel::A, config) * idler_transfer(SlitLabel::A, detector, bs)
        + slit_amplitude(u, SlitLabel::B, config) * idler_transfer(SlitLabel::B, detector, bs);
    0.5 * total.norm_sqr()
}

fn marginal_unchecked(u: f64, config: &ApparatusConfig) -> f64 {
    joint_unchecked(u, IdlerDetector::D1, config) + joint_unchecked(u, IdlerDetector::D2, config)
}

/// Unnormalized joint density of a signal at `u` and an idler at `detector`.
pub fn joint_density(u: f64, detector: IdlerDetector, config: &ApparatusConfig) -> Result<f64> {
    config.check_range(u)?;
    Ok(joint_unchecked(u, detector, config))
}

/// Unnormalized D0 density ignoring the idler outcome.
pub fn marginal_density_d0(u: f64, config: &ApparatusConfig) -> Result<f64> {
    config.check_range(u)?;
    Ok(marginal_unchecked(u, config))
}

/// Incoherent part of the density seen through `gate` (`None` = ungated):
/// the same sum as the joint density with the slit cross term dropped.
/// This is the envelope against which fringe visibility is measured.
pub fn envelope_density(u: f64, gate: Option<IdlerDetector>, config: &ApparatusConfig) -> f64 {
    let bs = config.beam_splitter_in;
    let detectors: &[IdlerDetector] = match gate {
        Some(ref d) => std::slice::from_ref(d),
        None => &IdlerDetector::ALL,
    };
    let mut total = 0.0;
    for &det in detectors {
        for slit in SlitLabel::ALL {
            total += slit_amplitude(u, slit, config).norm_sqr()
                * idler_transfer(slit, det, bs).norm_sqr();
        }
    }
    0.5 * total
}

/// Normalization integrals for one configuration, computed once.
///
/// All integrals use composite Simpson on the standard uniform grid over
/// `[-U, U]`.
#[derive(Debug, Clone)]
pub struct DensityModel {
    config: ApparatusConfig,
    detector_mass: [f64; 2],
}

impl DensityModel {
    pub fn new(config: &ApparatusConfig) -> Result<Self> {
        config.validate()?;
        let range = config.detector_range;
        let detector_mass = IdlerDetector::ALL
            .map(|det| integrate(|u| joint_unchecked(u, det, config), -range, range));
        Ok(DensityModel {
            config: *config,
            detector_mass,
        })
    }

    pub fn config(&self) -> &ApparatusConfig {
        &self.config
    }

    /// Integral of the unnormalized marginal over `[-U, U]`.
    pub fn total_mass(&self) -> f64 {
        self.detector_mass[0] + self.detector_mass[1]
    }

    pub fn joint(&self, u: f64, detector: IdlerDetector) -> Result<f64> {
        joint_density(u, detector, &self.config)
    }

    pub fn marginal(&self, u: f64) -> Result<f64> {
        marginal_density_d0(u, &self.config)
    }

    /// Joint density normalized over both detectors and the whole range.
    pub fn joint_normalized(&self, u: f64, detector: IdlerDetector) -> Result<f64> {
        Ok(self.joint(u, detector)? / self.total_mass())
    }

    pub fn marginal_normalized(&self, u: f64) -> Result<f64> {
        Ok(self.marginal(u)? / self.total_mass())
    }

    pub fn detector_probability(&self, detector: IdlerDetector) -> f64 {
        self.detector_mass[detector as usize] / self.total_mass()
    }

    /// D0 density conditioned on the idler reaching `detector`.
    pub fn conditional(&self, u: f64, detector: IdlerDetector) -> Result<f64> {
        let mass = self.detector_mass[detector as usize];
        if !(mass > 0.0) {
            return Err(Error::DegenerateConditioning(detector));
        }
        Ok(self.joint(u, detector)? / mass)
    }
}

pub fn conditional_density(
    u: f64,
    detector: IdlerDetector,
    config: &ApparatusConfig,
) -> Result<f64> {
    DensityModel::new(config)?.conditional(u, detector)
}

pub fn detector_probability(detector: IdlerDetector, config: &ApparatusConfig) -> Result<f64> {
    Ok(DensityModel::new(config)?.detector_probability(detector))
}

/// Marginal values below this (the unnormalized peak is 1) are treated as
/// envelope zeros.
pub const VANISHING_DENSITY: f64 = 1e-30;

/// Probability that the idler reaches D1 given a signal at `u`.
pub fn idler_d1_probability(u: f64, config: &ApparatusConfig) -> Result<f64> {
    let d1 = joint_density(u, IdlerDetector::D1, config)?;
    let d2 = joint_unchecked(u, IdlerDetector::D2, config);
    let marginal = d1 + d2;
    if !(marginal > VANISHING_DENSITY) {
        return Err(Error::ImpossibleEvent(u));
    }
    Ok((d1 / marginal).clamp(0.0, 1.0))
}

#[cfg(test)]
#[allow(clippy::field_reassign_with_default)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eraser() -> ApparatusConfig {
        ApparatusConfig::default().with_beam_splitter(true)
    }

    #[test]
    fn coordinate_map() {
        let cfg = ApparatusConfig::default();
        assert_eq!(to_dimensionless(0.0, &cfg), 0.0);
        assert!((cfg.to_dimensionless(cfg.fringe_period_m()) - 1.0).abs() < 1e-15);
        // 4.68 mm · 300 µm / (702 nm · 2 m) = 1.404e-6 / 1.404e-6
        assert!((cfg.to_dimensionless(4.68e-3) - 1.0).abs() < 1e-3);
        let x = 1.234e-3;
        assert!((cfg.to_physical(cfg.to_dimensionless(x)) - x).abs() < 1e-18);
    }

    #[test]
    fn config_validation() {
        assert!(ApparatusConfig::default().validate().is_ok());
        let c = ApparatusConfig {
            slit_width_um: 300.0,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let mut c = ApparatusConfig::default();
        c.idler_delay_ns = 0.5;
        assert!(c.validate().is_err());
        let mut c = ApparatusConfig::default();
        c.detector_range = 0.0;
        assert!(c.validate().is_err());
        let mut c = ApparatusConfig::default();
        c.wavelength_nm = f64::NAN;
        assert!(c.validate().is_err());
    }

    #[test]
    fn slit_amplitude_values() {
        let cfg = ApparatusConfig::default();
        let a0 = slit_amplitude(0.0, SlitLabel::A, &cfg);
        assert_eq!(a0, ComplexAmplitude::ONE);

        let a = slit_amplitude(0.5, SlitLabel::A, &cfg);
        let expected = (0.1 * PI).sin() / (0.1 * PI);
        assert!((a.modulus() - expected).abs() < 1e-15);
        assert!((a.modulus() - 0.98363).abs() < 1e-5);
        assert!((a.phase() - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn transfer_values() {
        assert_eq!(
            idler_transfer(SlitLabel::A, IdlerDetector::D1, false),
            ComplexAmplitude::ONE
        );
        assert_eq!(
            idler_transfer(SlitLabel::A, IdlerDetector::D2, false),
            ComplexAmplitude::ZERO
        );
        assert_eq!(
            idler_transfer(SlitLabel::B, IdlerDetector::D2, false),
            ComplexAmplitude::ONE
        );
        assert!((idler_transfer(SlitLabel::A, IdlerDetector::D2, true).norm_sqr() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn transfer_matrix_is_unitary() {
        for bs in [false, true] {
            let m = transfer_matrix(bs);
            for i in 0..2 {
                for j in 0..2 {
                    // (M†M)_ij = Σ_k conj(M_ki) M_kj
                    let mut acc = ComplexAmplitude::ZERO;
                    for row in &m {
                        acc = acc + row[i].conj() * row[j];
                    }
                    let target = if i == j { 1.0 } else { 0.0 };
                    assert!((acc.re - target).abs() < 1e-15, "bs={bs} ({i},{j}) {acc:?}");
                    assert!(acc.im.abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn joint_density_examples() {
        let cfg = eraser();
        assert!((joint_density(0.0, IdlerDetector::D1, &cfg).unwrap() - 0.5).abs() < 1e-15);
        assert!(joint_density(0.25, IdlerDetector::D2, &cfg).unwrap().abs() < 1e-15);

        let mut which_path = ApparatusConfig::default();
        which_path.envelope_offset = 0.4;
        for k in 0..50 {
            let u = -4.9 + 0.2 * k as f64;
            let e = sinc(PI * 0.2 * (u - 0.4));
            let got = joint_density(u, IdlerDetector::D1, &which_path).unwrap();
            assert!((got - 0.5 * e * e).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_form_with_beam_splitter() {
        let cfg = eraser();
        for k in 0..=400 {
            let u = -5.0 + 0.025 * k as f64;
            let env = sinc(PI * 0.2 * u).powi(2);
            let s = (2.0 * PI * u).sin();
            let d1 = joint_density(u, IdlerDetector::D1, &cfg).unwrap();
            let d2 = joint_density(u, IdlerDetector::D2, &cfg).unwrap();
            assert!((d1 - env * (1.0 + s) / 2.0).abs() < 1e-14);
            assert!((d2 - env * (1.0 - s) / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn domain_errors() {
        let cfg = ApparatusConfig::default();
        assert!(matches!(
            joint_density(5.01, IdlerDetector::D1, &cfg),
            Err(Error::OutOfRange { .. })
        ));
        assert!(marginal_density_d0(-6.0, &cfg).is_err());
        assert!(marginal_density_d0(5.0, &cfg).is_ok());
    }

    #[test]
    fn marginal_examples() {
        for bs in [false, true] {
            let cfg = ApparatusConfig::default().with_beam_splitter(bs);
            assert!((marginal_density_d0(0.0, &cfg).unwrap() - 1.0).abs() < 1e-15);
            assert_eq!(
                marginal_density_d0(0.25, &cfg).unwrap(),
                marginal_density_d0(-0.25, &cfg).unwrap()
            );
        }
    }

    #[test]
    fn detector_probabilities() {
        for bs in [false, true] {
            let cfg = ApparatusConfig::default().with_beam_splitter(bs);
            let p1 = detector_probability(IdlerDetector::D1, &cfg).unwrap();
            assert!((p1 - 0.5).abs() < 1e-12);
        }
        let mut cfg = ApparatusConfig::default();
        cfg.envelope_offset = 0.3;
        let model = DensityModel::new(&cfg).unwrap();
        assert!((model.detector_probability(IdlerDetector::D1) - 0.5).abs() < 1e-10);
        let sum: f64 = IdlerDetector::ALL.iter().map(|&d| model.detector_probability(d)).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conditional_without_splitter_is_slit_a_envelope() {
        let mut cfg = ApparatusConfig::default();
        cfg.envelope_offset = 0.7;
        let model = DensityModel::new(&cfg).unwrap();
        let envelope = |u: f64| sinc(PI * 0.2 * (u - 0.7)).powi(2);
        let mass = integrate(envelope, -5.0, 5.0);
        for k in 0..100 {
            let u = -5.0 + 0.1 * k as f64;
            let got = model.conditional(u, IdlerDetector::D1).unwrap();
            assert!((got - envelope(u) / mass).abs() < 1e-12);
        }
    }

    #[test]
    fn idler_probability_at_antifringe_null() {
        let cfg = eraser();
        assert!((idler_d1_probability(0.25, &cfg).unwrap() - 1.0).abs() < 1e-15);
        assert!((idler_d1_probability(0.0, &cfg).unwrap() - 0.5).abs() < 1e-15);
        assert!((idler_d1_probability(-0.25, &cfg).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn impossible_event_is_guarded() {
        // a/d = 0.2 puts the first envelope zero at u = 5 when s = 0.
        let mut cfg = eraser();
        cfg.detector_range = 6.0;
        assert!(matches!(idler_d1_probability(5.0, &cfg), Err(Error::ImpossibleEvent(_))));
    }

    #[test]
    fn envelope_of_ungated_equals_marginal() {
        let mut cfg = eraser();
        cfg.envelope_offset = 0.2;
        for k in 0..100 {
            let u = -5.0 + 0.1 * k as f64;
            let m = marginal_density_d0(u, &cfg).unwrap();
            assert!((envelope_density(u, None, &cfg) - m).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn completeness_and_no_signaling(u in -5.0f64..5.0, s in -1.0f64..1.0) {
            let mut cfg = ApparatusConfig::default();
            cfg.envelope_offset = s;
            let out = marginal_density_d0(u, &cfg).unwrap();
            let bs = cfg.with_beam_splitter(true);
            let inn = marginal_density_d0(u, &bs).unwrap();
            prop_assert!((out - inn).abs() < 1e-12);
            let parts = joint_density(u, IdlerDetector::D1, &bs).unwrap()
                + joint_density(u, IdlerDetector::D2, &bs).unwrap();
            prop_assert!((parts - inn).abs() < 1e-12);
            prop_assert!(inn >= 0.0);
        }

        #[test]
        fn slit_mirror_symmetry(u in -5.0f64..5.0) {
            let cfg = ApparatusConfig::default();
            let a = slit_amplitude(u, SlitLabel::A, &cfg).modulus();
            let b = slit_amplitude(-u, SlitLabel::B, &cfg).modulus();
            prop_assert!((a - b).abs() < 1e-15);
        }

        #[test]
        fn fringe_factors_are_antifringes(u in -4.5f64..4.5) {
            // With the envelope divided out, the D2 pattern is the D1 pattern
            // translated by half a period.
            let cfg = eraser();
            let f1 = joint_density(u, IdlerDetector::D1, &cfg).unwrap() / envelope_density(u, Some(IdlerDetector::D1), &cfg);
            let v = u + 0.5;
            let f2 = joint_density(v, IdlerDetector::D2, &cfg).unwrap() / envelope_density(v, Some(IdlerDetector::D2), &cfg);
            prop_assert!((f1 - f2).abs() < 1e-12);
        }
    }
}
