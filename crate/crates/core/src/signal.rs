//! Signal primitives shared by every imaging method: geometry, carrier
//! frequencies, phasor algebra and the closed-form depth-correction bounds.

use std::f64::consts::{PI, TAU};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// A point or direction in meters, `[x, y, z]`.
pub type Vec3 = [f64; 3];

#[inline]
pub fn distance(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

#[inline]
pub(crate) fn is_finite3(p: &Vec3) -> bool {
    p.iter().all(|v| v.is_finite())
}

/// `exp(j·2π·cycles)`.
///
/// The argument is reduced to a quarter period before a polynomial
/// evaluation, which keeps the result accurate to a few ulp for the
/// hundreds of cycles a millimeter-wave round trip accumulates.
#[inline]
pub fn cis_cycles(cycles: f64) -> Complex64 {
    let r = cycles - cycles.round();
    let q = (r * 4.0).round();
    let x = (r - q * 0.25) * TAU;
    let x2 = x * x;
    // Taylor series, |x| <= pi/4; truncation error below 1e-18.
    let s = x
        * (1.0
            + x2 * (-1.0 / 6.0
                + x2 * (1.0 / 120.0
                    + x2 * (-1.0 / 5040.0
                        + x2 * (1.0 / 362_880.0
                            + x2 * (-1.0 / 39_916_800.0
                                + x2 * (1.0 / 6_227_020_800.0
                                    + x2 * (-1.0 / 1_307_674_368_000.0
                                        + x2 * (1.0 / 355_687_428_096_000.0)))))))));
    let c = 1.0
        + x2 * (-0.5
            + x2 * (1.0 / 24.0
                + x2 * (-1.0 / 720.0
                    + x2 * (1.0 / 40_320.0
                        + x2 * (-1.0 / 3_628_800.0
                            + x2 * (1.0 / 479_001_600.0
                                + x2 * (-1.0 / 87_178_291_200.0
                                    + x2 * (1.0 / 20_922_789_888_000.0
                                        + x2 * (-1.0 / 6_402_373_705_728_000.0)))))))));
    match (q as i64) & 3 {
        0 => Complex64::new(c, s),
        1 => Complex64::new(-s, c),
        2 => Complex64::new(-c, -s),
        _ => Complex64::new(s, -c),
    }
}

/// A complex phasor whose phase is read as a principal value in (−π, π].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phasor(pub Complex64);

impl Phasor {
    pub fn new(re: f64, im: f64) -> Self {
        Phasor(Complex64::new(re, im))
    }

    /// Principal phase in (−π, π]; the −π tie maps to +π.
    pub fn phase(&self) -> f64 {
        let a = self.0.im.atan2(self.0.re);
        if a <= -PI {
            PI
        } else {
            a
        }
    }

    pub fn magnitude(&self) -> f64 {
        self.0.norm()
    }

    pub fn value(&self) -> Complex64 {
        self.0
    }

    /// Residual phase in the depth-proportional sign convention.
    ///
    /// A residual phasor `exp(−j·2π·f·Δρ/c)` carries a positive `Δρ` as a
    /// negative angle; this returns `+2π·f·Δρ/c` (wrapped), the quantity that
    /// [`phase_to_depth_correction`] expects.
    pub fn residual_phase(&self) -> f64 {
        Phasor(self.0.conj()).phase()
    }
}

impl From<Complex64> for Phasor {
    fn from(c: Complex64) -> Self {
        Phasor(c)
    }
}

/// Ordered carrier frequencies in hertz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FrequencySet {
    freqs: Vec<f64>,
}

impl FrequencySet {
    pub fn new(freqs: Vec<f64>) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::Validation("frequency set is empty".into()));
        }
        if freqs.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return Err(Error::Validation(format!(
                "frequencies must be finite and positive: {freqs:?}"
            )));
        }
        if freqs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation(format!(
                "frequencies must be strictly increasing: {freqs:?}"
            )));
        }
        Ok(FrequencySet { freqs })
    }

    /// `count` frequencies evenly spaced over `[start, stop]`.
    pub fn linear(start: f64, stop: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Validation("frequency count must be >= 1".into()));
        }
        if count == 1 {
            return FrequencySet::new(vec![start]);
        }
        let step = (stop - start) / (count - 1) as f64;
        FrequencySet::new((0..count).map(|i| start + step * i as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.freqs
    }

    pub fn get(&self, k: usize) -> f64 {
        self.freqs[k]
    }

    /// `f[j] − f[i]`.
    pub fn difference(&self, i: usize, j: usize) -> f64 {
        self.freqs[j] - self.freqs[i]
    }

    pub fn bandwidth(&self) -> f64 {
        self.freqs[self.freqs.len() - 1] - self.freqs[0]
    }
}

impl TryFrom<Vec<f64>> for FrequencySet {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        FrequencySet::new(v)
    }
}

impl From<FrequencySet> for Vec<f64> {
    fn from(f: FrequencySet) -> Self {
        f.freqs
    }
}

/// A frequency set with a stable name, e.g. a row of the evaluated
/// configuration table.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedFrequencies {
    pub name: String,
    /// Short label used in report tables, e.g. `Δ0.5`.
    pub label: String,
    pub set: FrequencySet,
}

const GHZ: f64 = 1e9;

/// The six evaluated two-frequency configurations `(name, label, f1, f2)`.
pub const CONFIG_TABLE: [(&str, &str, f64, f64); 6] = [
    ("d0.5", "Δ0.5", 81.45, 82.00),
    ("d1.0", "Δ1.0", 80.98, 82.00),
    ("d2.0", "Δ2.0", 79.95, 82.00),
    ("d4.0", "Δ4.0", 77.91, 82.00),
    ("d8.0", "Δ8.0", 73.97, 82.00),
    ("d10.0", "Δ10.0", 72.00, 82.00),
];

/// Three-frequency configurations: lowest difference from the top pair,
/// two high differences against 72 GHz.
pub const THREE_FSK: [(&str, &str, f64, f64, f64); 3] = [
    ("3fsk-d0.5-d10.0", "(Δ0.5,Δ10.0)", 72.00, 81.45, 82.00),
    ("3fsk-d1.0-d10.0", "(Δ1.0,Δ10.0)", 72.00, 80.98, 82.00),
    ("3fsk-d2.0-d10.0", "(Δ2.0,Δ10.0)", 72.00, 79.95, 82.00),
];

/// Lower and upper edge of the stepped-frequency band, Hz.
pub const FSCW_BAND: (f64, f64) = (72.0 * GHZ, 82.0 * GHZ);

pub fn standard_configs() -> Vec<NamedFrequencies> {
    CONFIG_TABLE
        .iter()
        .map(|(name, label, f1, f2)| NamedFrequencies {
            name: name.to_string(),
            label: label.to_string(),
            set: FrequencySet::new(vec![f1 * GHZ, f2 * GHZ]).expect("static table"),
        })
        .collect()
}

/// Resolve a configuration name.
///
/// Known names are the rows of [`CONFIG_TABLE`] and [`THREE_FSK`], plus
/// `fscw-N` for `N` evenly spaced steps across [`FSCW_BAND`] (`bp-max` is
/// an alias for `fscw-128`).
pub fn named_frequencies(name: &str) -> Result<NamedFrequencies> {
    if let Some(row) = CONFIG_TABLE.iter().find(|r| r.0 == name) {
        return Ok(NamedFrequencies {
            name: row.0.into(),
            label: row.1.into(),
            set: FrequencySet::new(vec![row.2 * GHZ, row.3 * GHZ])?,
        });
    }
    if let Some(row) = THREE_FSK.iter().find(|r| r.0 == name) {
        return Ok(NamedFrequencies {
            name: row.0.into(),
            label: row.1.into(),
            set: FrequencySet::new(vec![row.2 * GHZ, row.3 * GHZ, row.4 * GHZ])?,
        });
    }
    let steps = if name == "bp-max" {
        Some(128)
    } else {
        name.strip_prefix("fscw-").and_then(|n| n.parse::<usize>().ok())
    };
    match steps {
        Some(n) if n >= 1 => Ok(NamedFrequencies {
            name: name.into(),
            label: if name == "bp-max" { "max".into() } else { format!("{n}f") },
            set: FrequencySet::linear(FSCW_BAND.0, FSCW_BAND.1, n)?,
        }),
        _ => Err(Error::Config(format!("unknown frequency configuration `{name}`"))),
    }
}

/// TX and RX element positions of a MIMO aperture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AntennaArray {
    tx: Vec<Vec3>,
    rx: Vec<Vec3>,
}

impl AntennaArray {
    pub fn new(tx: Vec<Vec3>, rx: Vec<Vec3>) -> Result<Self> {
        if tx.is_empty() || rx.is_empty() {
            return Err(Error::Validation(format!(
                "array needs at least one TX and one RX element (got {}x{})",
                tx.len(),
                rx.len()
            )));
        }
        if !tx.iter().chain(rx.iter()).all(is_finite3) {
            return Err(Error::Validation("antenna positions must be finite".into()));
        }
        Ok(AntennaArray { tx, rx })
    }

    /// Square boundary layout in the `z = 0` plane: TX elements share the
    /// top and bottom edges, RX elements the left and right edges. Elements
    /// sit at the centers of equal cells along each edge.
    pub fn boundary(tx_count: usize, rx_count: usize, side: f64) -> Result<Self> {
        if !(side.is_finite() && side > 0.0) {
            return Err(Error::Validation(format!("aperture side must be > 0, got {side}")));
        }
        let half = side / 2.0;
        let edge = |n: usize| -> Vec<f64> {
            (0..n).map(|i| -half + (i as f64 + 0.5) * side / n as f64).collect()
        };
        let (top, bottom) = (tx_count.div_ceil(2), tx_count / 2);
        let (right, left) = (rx_count.div_ceil(2), rx_count / 2);
        let mut tx: Vec<Vec3> = edge(top).into_iter().map(|x| [x, half, 0.0]).collect();
        tx.extend(edge(bottom).into_iter().map(|x| [x, -half, 0.0]));
        let mut rx: Vec<Vec3> = edge(right).into_iter().map(|y| [half, y, 0.0]).collect();
        rx.extend(edge(left).into_iter().map(|y| [-half, y, 0.0]));
        AntennaArray::new(tx, rx)
    }

    pub fn tx(&self) -> &[Vec3] {
        &self.tx
    }

    pub fn rx(&self) -> &[Vec3] {
        &self.rx
    }

    pub fn tx_count(&self) -> usize {
        self.tx.len()
    }

    pub fn rx_count(&self) -> usize {
        self.rx.len()
    }

    pub fn pair_count(&self) -> usize {
        self.tx.len() * self.rx.len()
    }
}

/// An ideal point scatterer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointTarget {
    pub position: Vec3,
    pub reflectivity: Complex64,
    /// Constant phase offset, radians.
    pub phase_offset: f64,
}

impl PointTarget {
    pub fn unit(position: Vec3) -> Self {
        PointTarget {
            position,
            reflectivity: Complex64::new(1.0, 0.0),
            phase_offset: 0.0,
        }
    }
}

/// Simulation ground truth: a list of point targets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub targets: Vec<PointTarget>,
}

impl Scene {
    pub fn new(targets: Vec<PointTarget>) -> Self {
        Scene { targets }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.targets.iter().map(|t| t.position).collect()
    }

    /// Union of two scenes, `self` first.
    pub fn union(&self, other: &Scene) -> Scene {
        let mut targets = self.targets.clone();
        targets.extend_from_slice(&other.targets);
        Scene { targets }
    }
}

/// Demodulated measurements indexed `(tx, rx, frequency)`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BasebandTensor {
    tx_count: usize,
    rx_count: usize,
    freq_count: usize,
    data: Vec<Complex64>,
}

impl BasebandTensor {
    pub fn new(tx_count: usize, rx_count: usize, freq_count: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != tx_count * rx_count * freq_count {
            return Err(Error::Dimension(format!(
                "tensor data has {} entries, expected {}x{}x{}",
                data.len(),
                tx_count,
                rx_count,
                freq_count
            )));
        }
        if data.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::Validation("tensor contains non-finite entries".into()));
        }
        Ok(BasebandTensor {
            tx_count,
            rx_count,
            freq_count,
            data,
        })
    }

    pub fn zeros(tx_count: usize, rx_count: usize, freq_count: usize) -> Self {
        BasebandTensor {
            tx_count,
            rx_count,
            freq_count,
            data: vec![Complex64::new(0.0, 0.0); tx_count * rx_count * freq_count],
        }
    }

    #[inline]
    pub fn index(&self, t: usize, r: usize, k: usize) -> usize {
        (t * self.rx_count + r) * self.freq_count + k
    }

    #[inline]
    pub fn get(&self, t: usize, r: usize, k: usize) -> Complex64 {
        self.data[self.index(t, r, k)]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.tx_count, self.rx_count, self.freq_count)
    }

    pub fn tx_count(&self) -> usize {
        self.tx_count
    }

    pub fn rx_count(&self) -> usize {
        self.rx_count
    }

    pub fn freq_count(&self) -> usize {
        self.freq_count
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Keep only the listed frequency indices, in order.
    pub fn select_frequencies(&self, keep: &[usize]) -> Result<BasebandTensor> {
        if let Some(k) = keep.iter().find(|&&k| k >= self.freq_count) {
            return Err(Error::Dimension(format!(
                "frequency index {k} out of range for {} frequencies",
                self.freq_count
            )));
        }
        let mut data = Vec::with_capacity(self.tx_count * self.rx_count * keep.len());
        for t in 0..self.tx_count {
            for r in 0..self.rx_count {
                data.extend(keep.iter().map(|&k| self.get(t, r, k)));
            }
        }
        BasebandTensor::new(self.tx_count, self.rx_count, keep.len(), data)
    }

    /// Structural check against an array and a frequency set.
    pub fn check_dims(&self, array: &AntennaArray, freqs: &FrequencySet) -> Result<()> {
        let expected = (array.tx_count(), array.rx_count(), freqs.len());
        if self.dims() != expected {
            return Err(Error::Dimension(format!(
                "tensor is {:?} but array/frequencies imply {:?}",
                self.dims(),
                expected
            )));
        }
        Ok(())
    }
}

impl fmt::Display for BasebandTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BasebandTensor({}x{}x{})", self.tx_count, self.rx_count, self.freq_count)
    }
}

/// Bistatic path length `‖tx − p‖ + ‖rx − p‖`.
pub fn round_trip_distance(tx: &Vec3, rx: &Vec3, p: &Vec3) -> f64 {
    distance(tx, p) + distance(rx, p)
}

/// Expected phasor `exp(−j·2π·f·ρ/c)` for a candidate at path length `rho`.
pub fn hypothesis(rho: f64, f: f64) -> Phasor {
    Phasor(cis_cycles(-f * rho / SPEED_OF_LIGHT))
}

/// Half-width `c / (4·Δf)` of the window a differential phasor at `delta_f`
/// can correct without ambiguity.
pub fn max_unambiguous_depth(delta_f: f64) -> Result<f64> {
    if !(delta_f.is_finite() && delta_f > 0.0) {
        return Err(Error::Domain(format!("frequency difference must be > 0, got {delta_f}")));
    }
    Ok(SPEED_OF_LIGHT / (4.0 * delta_f))
}

/// Depth correction `c·φ / (4π·f_eff)` for a residual phase `phase`.
pub fn phase_to_depth_correction(phase: f64, f_eff: f64) -> Result<f64> {
    if !(f_eff.is_finite() && f_eff > 0.0) {
        return Err(Error::Domain(format!("effective frequency must be > 0, got {f_eff}")));
    }
    Ok(SPEED_OF_LIGHT * phase / (4.0 * PI * f_eff))
}

/// `c2 · conj(c1)`: behaves like a residual phasor at `f2 − f1`.
pub fn differential_phasor(c1: Phasor, c2: Phasor) -> Phasor {
    Phasor(c2.0 * c1.0.conj())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const C: f64 = SPEED_OF_LIGHT;

    #[test]
    fn round_trip_examples() {
        assert_eq!(round_trip_distance(&[0.0; 3], &[0.0; 3], &[0.0, 0.0, 0.5]), 1.0);
        let rho = round_trip_distance(&[0.1, 0.0, 0.0], &[-0.1, 0.0, 0.0], &[0.0, 0.0, 0.3]);
        assert!((rho - 2.0 * 0.1f64.sqrt()).abs() < 1e-15);
        assert!((rho - 0.632_455_532_033_675_9).abs() < 1e-12);
        assert_eq!(round_trip_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
    }

    #[test]
    fn hypothesis_examples() {
        let f = 77e9;
        let h0 = hypothesis(0.0, f).0;
        assert_eq!((h0.re, h0.im), (1.0, 0.0));
        let h1 = hypothesis(C / f, f).0;
        assert!((h1 - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        let hq = hypothesis(C / (4.0 * f), f).0;
        assert!((hq - Complex64::new(0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn standard_configs_depth_bounds() {
        let expected_cm = [13.60, 7.32, 3.66, 1.83, 0.93, 0.75];
        for (cfg, want) in standard_configs().iter().zip(expected_cm) {
            let got = max_unambiguous_depth(cfg.set.difference(0, 1)).unwrap() * 100.0;
            assert!((got - want).abs() <= 0.05, "{}: {got} cm vs {want} cm", cfg.name);
        }
        assert!((max_unambiguous_depth(10e9).unwrap() - 0.0075).abs() < 1e-4);
        assert!((max_unambiguous_depth(2.05e9).unwrap() * 100.0 - 3.66).abs() < 0.005);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(max_unambiguous_depth(0.0), Err(Error::Domain(_))));
        assert!(matches!(max_unambiguous_depth(-1.0), Err(Error::Domain(_))));
        assert!(matches!(phase_to_depth_correction(0.1, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn phase_to_depth_examples() {
        assert_eq!(phase_to_depth_correction(0.0, 1e9).unwrap(), 0.0);
        let d = phase_to_depth_correction(PI, 10e9).unwrap();
        assert!((d - max_unambiguous_depth(10e9).unwrap()).abs() < 1e-15);
        assert!((d - 0.0075).abs() < 1e-4);
    }

    #[test]
    fn single_target_correction_recovers_offset() {
        // Monostatic pair on axis; true depth is 3 mm behind the prior.
        let (f1, f2) = (81.45e9, 82.0e9);
        let prior = 0.30;
        let truth = prior + 0.003;
        let s = |f: f64| hypothesis(2.0 * truth, f).0;
        let c1 = Phasor(s(f1) * hypothesis(2.0 * prior, f1).0.conj());
        let c2 = Phasor(s(f2) * hypothesis(2.0 * prior, f2).0.conj());
        let dd = phase_to_depth_correction(differential_phasor(c1, c2).residual_phase(), f2 - f1).unwrap();
        assert!((dd - 0.003).abs() < 1e-6, "{dd}");
    }

    #[test]
    fn differential_identity() {
        let (f1, f2, tau) = (72e9, 82e9, 1.7e-9);
        let c1 = Phasor(Complex64::from_polar(1.0, -TAU * f1 * tau));
        let c2 = Phasor(Complex64::from_polar(1.0, -TAU * f2 * tau));
        let want = Complex64::from_polar(1.0, -TAU * (f2 - f1) * tau);
        assert!((differential_phasor(c1, c2).0 - want).norm() < 1e-9);
        let same = differential_phasor(c1, c1);
        assert!(same.0.re > 0.0 && same.0.im.abs() < 1e-15);
    }

    #[test]
    fn principal_phase_tie_is_positive_pi() {
        assert_eq!(Phasor::new(-1.0, 0.0).phase(), PI);
        assert_eq!(Phasor::new(-1.0, -0.0).phase(), PI);
        assert_eq!(Phasor::new(-1.0, 0.0).residual_phase(), PI);
    }

    #[test]
    fn frequency_set_validation() {
        assert!(FrequencySet::new(vec![]).is_err());
        assert!(FrequencySet::new(vec![2.0, 1.0]).is_err());
        assert!(FrequencySet::new(vec![1.0, 1.0]).is_err());
        assert!(FrequencySet::new(vec![-1.0, 1.0]).is_err());
        let f = FrequencySet::linear(72e9, 82e9, 128).unwrap();
        assert_eq!(f.len(), 128);
        assert!((f.bandwidth() - 10e9).abs() < 1.0);
        assert!(named_frequencies("nope").is_err());
        assert_eq!(named_frequencies("bp-max").unwrap().set.len(), 128);
        assert_eq!(named_frequencies("3fsk-d1.0-d10.0").unwrap().set.len(), 3);
    }

    #[test]
    fn boundary_array_layout() {
        let a = AntennaArray::boundary(16, 16, 0.05).unwrap();
        assert_eq!(a.pair_count(), 256);
        assert!(a.tx().iter().all(|p| (p[1].abs() - 0.025).abs() < 1e-15));
        assert!(a.rx().iter().all(|p| (p[0].abs() - 0.025).abs() < 1e-15));
        assert!(AntennaArray::new(vec![], vec![[0.0; 3]]).is_err());
        assert!(AntennaArray::new(vec![[f64::NAN, 0.0, 0.0]], vec![[0.0; 3]]).is_err());
    }

    #[test]
    fn cis_matches_std_sin_cos() {
        for i in 0..20_000 {
            let x = (i as f64 - 10_000.0) * 0.037_1;
            let want = (TAU * (x - x.round())).sin_cos();
            let got = cis_cycles(x);
            assert!((got.re - want.1).abs() < 4e-16 && (got.im - want.0).abs() < 4e-16, "{x}");
        }
    }

    proptest! {
        #[test]
        fn round_trip_matches_extended_precision(
            tx in prop::array::uniform3(-1.0f64..1.0),
            rx in prop::array::uniform3(-1.0f64..1.0),
            p in prop::array::uniform3(-1.0f64..1.0),
        ) {
            // Compensated norms: each squared sum carried as a two-sum pair.
            fn norm_ext(a: &Vec3, b: &Vec3) -> f64 {
                let (mut hi, mut lo) = (0.0f64, 0.0f64);
                for i in 0..3 {
                    let d = a[i] - b[i];
                    let sq = d * d;
                    let err = d.mul_add(d, -sq);
                    let s = hi + sq;
                    let bb = s - hi;
                    lo += (hi - (s - bb)) + (sq - bb) + err;
                    hi = s;
                }
                let total = hi + lo;
                let r = total.sqrt();
                // One Newton step on the extended sum.
                r + (total - r * r) / (2.0 * r.max(f64::MIN_POSITIVE))
            }
            let got = round_trip_distance(&tx, &rx, &p);
            let want = norm_ext(&tx, &p) + norm_ext(&rx, &p);
            prop_assert!((got - want).abs() <= 4.0 * f64::EPSILON * want.max(1e-300));
        }

        #[test]
        fn hypothesis_is_periodic(rho in 0.0f64..2.0, f in 70e9f64..85e9, n in 1u32..5) {
            let a = hypothesis(rho, f).0;
            let b = hypothesis(rho + n as f64 * C / f, f).0;
            prop_assert!((a - b).norm() < 1e-9);
            prop_assert!((a.norm() - 1.0).abs() < 1e-14);
        }

        #[test]
        fn differential_phase_is_wrapped_subtraction(a in -PI..PI, b in -PI..PI, ma in 0.1f64..2.0, mb in 0.1f64..2.0) {
            let c1 = Phasor(Complex64::from_polar(ma, a));
            let c2 = Phasor(Complex64::from_polar(mb, b));
            let d = differential_phasor(c1, c2);
            let mut want = (b - a) % TAU;
            if want <= -PI { want += TAU; }
            if want > PI { want -= TAU; }
            let diff = (d.phase() - want).abs();
            prop_assert!(diff < 1e-9 || (TAU - diff) < 1e-9);
            prop_assert!((d.magnitude() - ma * mb).abs() < 1e-12);
            let back = differential_phasor(c2, c1);
            let prod = d.0 * back.0;
            prop_assert!(prod.re > 0.0 && prod.im.abs() < 1e-12 * prod.re.max(1.0));
        }

        #[test]
        fn phase_to_depth_is_odd_and_linear(phi in -PI / 2.0..PI / 2.0, df in 0.1e9f64..20e9) {
            let d = phase_to_depth_correction(phi, df).unwrap();
            prop_assert_eq!(phase_to_depth_correction(-phi, df).unwrap(), -d);
            let d2 = phase_to_depth_correction(2.0 * phi, df).unwrap();
            prop_assert!((d2 - 2.0 * d).abs() <= 1e-15 * d.abs().max(1e-12));
            prop_assert!(d.abs() <= max_unambiguous_depth(df).unwrap());
            prop_assert!(d == 0.0 || d.signum() == phi.signum());
        }
    }
}
