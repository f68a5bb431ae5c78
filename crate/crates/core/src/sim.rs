//! Point-target forward model producing baseband tensors.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{cis_cycles, distance, AntennaArray, BasebandTensor, FrequencySet, Scene, SPEED_OF_LIGHT};

/// Name of the generator behind noise draws, recorded in run metadata.
pub const NOISE_RNG: &str = "ChaCha20Rng::seed_from_u64(seed), stream t*R+r per TX-RX pair, StandardNormal (rand_chacha 0.9, rand_distr 0.5)";

/// Additive noise settings. `snr_db = None` disables noise.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec::default()
    }

    pub fn with_snr(snr_db: f64, seed: u64) -> Self {
        NoiseSpec { snr_db: Some(snr_db), seed }
    }
}

/// Forward-model options beyond noise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Scale each echo by `1/ρ²`.
    #[serde(default)]
    pub path_loss: bool,
}

/// Synthesize `s[t,r,k] = Σ A·exp(j(φ_c − 2π f_k ρ/c)) + n`.
pub fn simulate_baseband(
    scene: &Scene,
    array: &AntennaArray,
    freqs: &FrequencySet,
    noise: &NoiseSpec,
) -> Result<BasebandTensor> {
    simulate_baseband_with(scene, array, freqs, noise, SimOptions::default())
}

pub fn simulate_baseband_with(
    scene: &Scene,
    array: &AntennaArray,
    freqs: &FrequencySet,
    noise: &NoiseSpec,
    opts: SimOptions,
) -> Result<BasebandTensor> {
    if scene.is_empty() {
        return Err(Error::Validation("cannot simulate an empty scene".into()));
    }
    if let Some(t) = scene.targets.iter().find(|t| {
        !(t.reflectivity.norm() > 0.0 && t.reflectivity.norm().is_finite() && t.phase_offset.is_finite())
            || !t.position.iter().all(|v| v.is_finite())
    }) {
        return Err(Error::Validation(format!("invalid target {t:?}")));
    }
    let (nt, nr, nf) = (array.tx_count(), array.rx_count(), freqs.len());
    let cycles_per_m: Vec<f64> = freqs.as_slice().iter().map(|f| f / SPEED_OF_LIGHT).collect();
    let amps: Vec<Complex64> = scene
        .targets
        .iter()
        .map(|t| t.reflectivity * Complex64::from_polar(1.0, t.phase_offset))
        .collect();

    let mut tensor = BasebandTensor::zeros(nt, nr, nf);
    let row_len = nr * nf;
    tensor
        .data_mut()
        .par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(t, row)| {
            let tx = &array.tx()[t];
            for (target, amp) in scene.targets.iter().zip(&amps) {
                let dt = distance(tx, &target.position);
                for (r, rx) in array.rx().iter().enumerate() {
                    let rho = dt + distance(rx, &target.position);
                    let a = if opts.path_loss { amp / (rho * rho) } else { *amp };
                    let out = &mut row[r * nf..(r + 1) * nf];
                    for (o, cpm) in out.iter_mut().zip(&cycles_per_m) {
                        *o += a * cis_cycles(-cpm * rho);
                    }
                }
            }
        });

    if let Some(snr_db) = noise.snr_db {
        add_noise(&mut tensor, snr_db, noise.seed)?;
    }
    Ok(tensor)
}

/// Add circular complex Gaussian noise so that mean |s|² over the clean
/// tensor divided by the noise variance equals `10^(snr_db/10)`.
///
/// Each TX-RX pair draws from its own ChaCha20 stream, so the result does
/// not depend on how pairs are scheduled.
pub fn add_noise(tensor: &mut BasebandTensor, snr_db: f64, seed: u64) -> Result<()> {
    if !snr_db.is_finite() {
        return Err(Error::Validation(format!("snr_db must be finite, got {snr_db}")));
    }
    let n = tensor.data().len() as f64;
    let power = tensor.data().iter().map(|c| c.norm_sqr()).sum::<f64>() / n;
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt() / std::f64::consts::SQRT_2;
    let nf = tensor.freq_count();
    tensor.data_mut().par_chunks_mut(nf).enumerate().for_each(|(pair, cell)| {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(pair as u64);
        for c in cell.iter_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *c += Complex64::new(sigma * re, sigma * im);
        }
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{PointTarget, Vec3};
    use proptest::prelude::*;

    fn reference(scene: &Scene, array: &AntennaArray, freqs: &FrequencySet) -> Vec<Complex64> {
        let mut out = Vec::new();
        for tx in array.tx() {
            for rx in array.rx() {
                for f in freqs.as_slice() {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for t in &scene.targets {
                        let rho = ((tx[0] - t.position[0]).powi(2) + (tx[1] - t.position[1]).powi(2) + (tx[2] - t.position[2]).powi(2)).sqrt()
                            + ((rx[0] - t.position[0]).powi(2) + (rx[1] - t.position[1]).powi(2) + (rx[2] - t.position[2]).powi(2)).sqrt();
                        let phase = t.phase_offset - 2.0 * std::f64::consts::PI * f * rho / SPEED_OF_LIGHT;
                        acc += t.reflectivity * Complex64::new(phase.cos(), phase.sin());
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    #[test]
    fn single_monostatic_target() {
        let array = AntennaArray::new(vec![[0.0; 3]], vec![[0.0; 3]]).unwrap();
        let freqs = FrequencySet::new(vec![82e9]).unwrap();
        let scene = Scene::new(vec![PointTarget::unit([0.0, 0.0, 0.3])]);
        let s = simulate_baseband(&scene, &array, &freqs, &NoiseSpec::none()).unwrap();
        let want = -2.0 * std::f64::consts::PI * 82e9 * 0.6 / SPEED_OF_LIGHT;
        let got = s.get(0, 0, 0);
        let diff = (got * Complex64::from_polar(1.0, -want)).arg();
        assert!(diff.abs() < 1e-9);
        assert!((got.norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn superposition() {
        let array = AntennaArray::boundary(4, 4, 0.05).unwrap();
        let freqs = FrequencySet::new(vec![77e9, 80e9]).unwrap();
        let a = Scene::new(vec![PointTarget::unit([0.01, 0.0, 0.3])]);
        let b = Scene::new(vec![PointTarget {
            position: [-0.01, 0.02, 0.33],
            reflectivity: Complex64::new(0.3, -0.2),
            phase_offset: 0.4,
        }]);
        let none = NoiseSpec::none();
        let sa = simulate_baseband(&a, &array, &freqs, &none).unwrap();
        let sb = simulate_baseband(&b, &array, &freqs, &none).unwrap();
        let sab = simulate_baseband(&a.union(&b), &array, &freqs, &none).unwrap();
        for i in 0..sab.data().len() {
            assert_eq!(sab.data()[i], sa.data()[i] + sb.data()[i]);
        }
    }

    #[test]
    fn reduced_qar50_matches_reference() {
        let array = AntennaArray::boundary(8, 8, 0.5).unwrap();
        let freqs = FrequencySet::linear(72e9, 82e9, 16).unwrap();
        let scene = Scene::new(
            (0..7)
                .map(|i| PointTarget {
                    position: [0.01 * i as f64 - 0.03, 0.005 * i as f64, 0.25 + 0.01 * i as f64],
                    reflectivity: Complex64::new(1.0 - 0.1 * i as f64, 0.05 * i as f64),
                    phase_offset: 0.3 * i as f64,
                })
                .collect(),
        );
        let s = simulate_baseband(&scene, &array, &freqs, &NoiseSpec::none()).unwrap();
        let want = reference(&scene, &array, &freqs);
        let scale = want.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for (g, w) in s.data().iter().zip(&want) {
            assert!((g - w).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn noise_is_seeded_and_scaled() {
        let array = AntennaArray::boundary(16, 16, 0.05).unwrap();
        let freqs = FrequencySet::linear(72e9, 82e9, 8).unwrap();
        let scene = Scene::new(vec![PointTarget::unit([0.0, 0.0, 0.3])]);
        let clean = simulate_baseband(&scene, &array, &freqs, &NoiseSpec::none()).unwrap();
        let a = simulate_baseband(&scene, &array, &freqs, &NoiseSpec::with_snr(10.0, 9)).unwrap();
        let b = simulate_baseband(&scene, &array, &freqs, &NoiseSpec::with_snr(10.0, 9)).unwrap();
        let c = simulate_baseband(&scene, &array, &freqs, &NoiseSpec::with_snr(10.0, 10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let noise_power: f64 =
            a.data().iter().zip(clean.data()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>() / a.data().len() as f64;
        // Clean power is 1; expect 0.1 within sampling error of 2048 draws.
        assert!((noise_power - 0.1).abs() < 0.01, "{noise_power}");
    }

    #[test]
    fn path_loss_scales_by_inverse_square() {
        let array = AntennaArray::new(vec![[0.0; 3]], vec![[0.0; 3]]).unwrap();
        let freqs = FrequencySet::new(vec![80e9]).unwrap();
        let scene = Scene::new(vec![PointTarget::unit([0.0, 0.0, 0.5])]);
        let s = simulate_baseband_with(&scene, &array, &freqs, &NoiseSpec::none(), SimOptions { path_loss: true })
            .unwrap();
        assert!((s.get(0, 0, 0).norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_empty_scene() {
        let array = AntennaArray::boundary(2, 2, 0.05).unwrap();
        let freqs = FrequencySet::new(vec![80e9]).unwrap();
        assert!(simulate_baseband(&Scene::default(), &array, &freqs, &NoiseSpec::none()).is_err());
    }

    proptest! {
        #[test]
        fn frequency_shift_consistency(p in prop::array::uniform3(-0.05f64..0.05), z in 0.2f64..0.5, f1 in 72e9f64..76e9, df in 0.1e9f64..6e9) {
            let pos: Vec3 = [p[0], p[1], z];
            let array = AntennaArray::boundary(2, 2, 0.05).unwrap();
            let freqs = FrequencySet::new(vec![f1, f1 + df]).unwrap();
            let s = simulate_baseband(&Scene::new(vec![PointTarget::unit(pos)]), &array, &freqs, &NoiseSpec::none()).unwrap();
            for t in 0..2 {
                for r in 0..2 {
                    let rho = crate::signal::round_trip_distance(&array.tx()[t], &array.rx()[r], &pos);
                    let want = -2.0 * std::f64::consts::PI * df * rho / SPEED_OF_LIGHT;
                    let d = (s.get(t, r, 1) * s.get(t, r, 0).conj() * Complex64::from_polar(1.0, -want)).arg();
                    prop_assert!(d.abs() < 1e-9);
                }
            }
        }
    }
}
