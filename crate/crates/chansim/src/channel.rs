//! Array response, multipath channel synthesis, codebook, sum-rate and beam
//! selection.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Result, SimError};

/// One propagation path. Path 0 of a [`PathSet`] is line of sight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub gain: Complex64,
    /// Seconds.
    pub delay: f64,
    /// Angle of departure in radians, measured from array broadside.
    pub aod: f64,
}

pub type PathSet = Vec<Path>;

/// Entry `m` is `exp(j 2π/λ d m sin θ)`.
pub fn array_response(theta: f64, antennas: usize, spacing: f64, wavelength: f64) -> Vec<Complex64> {
    let k = 2.0 * PI / wavelength * spacing * theta.sin();
    (0..antennas).map(|m| Complex64::from_polar(1.0, k * m as f64)).collect()
}

/// `h = Σ_ℓ α_ℓ exp(-j 2π f_c τ_ℓ) a(θ_ℓ)`.
pub fn synthesize_channel(paths: &[Path], antennas: usize, spacing: f64, carrier_hz: f64) -> Vec<Complex64> {
    let wavelength = crate::config::SPEED_OF_LIGHT / carrier_hz;
    let mut h = vec![Complex64::new(0.0, 0.0); antennas];
    for p in paths {
        let coeff = p.gain * Complex64::from_polar(1.0, -2.0 * PI * carrier_hz * p.delay);
        for (hm, am) in h.iter_mut().zip(array_response(p.aod, antennas, spacing, wavelength)) {
            *hm += coeff * am;
        }
    }
    h
}

/// Sine of beam `b`'s steering angle: `-1 + (2b + 1)/B`.
pub fn codebook_sine(b: usize, size: usize) -> f64 {
    -1.0 + (2 * b + 1) as f64 / size as f64
}

/// DFT codebook over a half-wavelength grid in `sin θ`. Beams are unit norm.
pub fn dft_codebook(antennas: usize, size: usize, spacing: f64, wavelength: f64) -> Result<Vec<Vec<Complex64>>> {
    if size < 2 {
        return Err(SimError::Domain(format!("codebook size must be at least 2, got {size}")));
    }
    if antennas == 0 {
        return Err(SimError::Domain("codebook needs at least one antenna".into()));
    }
    let norm = 1.0 / (antennas as f64).sqrt();
    Ok((0..size)
        .map(|b| {
            let theta = codebook_sine(b, size).asin();
            array_response(theta, antennas, spacing, wavelength).into_iter().map(|a| a * norm).collect()
        })
        .collect())
}

/// `hᴴ v`.
pub fn inner(h: &[Complex64], v: &[Complex64]) -> Complex64 {
    h.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum()
}

/// Downlink sum-rate in bits/s/Hz for channels `h[k]` and beamformers `v[k]`.
pub fn sum_rate(h: &[Vec<Complex64>], v: &[Vec<Complex64>], noise_power: f64, max_power: f64) -> Result<f64> {
    if !(noise_power > 0.0) {
        return Err(SimError::Domain(format!("noise power must be positive, got {noise_power}")));
    }
    if h.len() != v.len() {
        return Err(SimError::Domain(format!("{} channels but {} beamformers", h.len(), v.len())));
    }
    if let Some(k) = (0..h.len()).find(|&k| h[k].len() != v[k].len() || h[k].len() != h[0].len()) {
        return Err(SimError::Domain(format!("user {k} has mismatched antenna dimensions")));
    }
    let power: f64 = v.iter().map(|vk| norm_sqr(vk)).sum();
    // Relative slack so a beamformer scaled to exactly P_DL is feasible.
    if power > max_power * (1.0 + 1e-12) {
        return Err(SimError::Constraint(format!("transmit power {power} exceeds {max_power}")));
    }
    let mut rate = 0.0;
    for (k, hk) in h.iter().enumerate() {
        let gains: Vec<f64> = v.iter().map(|vj| inner(hk, vj).norm_sqr()).collect();
        let interference: f64 = gains.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, g)| g).sum();
        rate += (1.0 + gains[k] / (interference + noise_power)).log2();
    }
    Ok(rate)
}

/// Best codebook beam for `h` and its gain `|hᴴ f_b|²`. Ties go to the lowest index.
pub fn optimal_beam(h: &[Complex64], codebook: &[Vec<Complex64>]) -> Result<(usize, f64)> {
    if h.iter().all(|c| *c == Complex64::new(0.0, 0.0)) {
        return Err(SimError::Degenerate("beam selection on an all-zero channel".into()));
    }
    if h.iter().any(|c| !c.is_finite()) {
        return Err(SimError::Degenerate("beam selection on a non-finite channel".into()));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (b, f) in codebook.iter().enumerate() {
        let g = inner(h, f).norm_sqr();
        if g > best.1 {
            best = (b, g);
        }
    }
    Ok(best)
}

/// `-20 log10(‖h‖ / √M)`.
pub fn path_loss_db(h: &[Complex64]) -> f64 {
    -20.0 * (norm_sqr(h).sqrt() / (h.len() as f64).sqrt()).log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    const C: f64 = crate::config::SPEED_OF_LIGHT;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn broadside_response_is_all_ones() {
        for m in [1, 4, 32] {
            assert!(array_response(0.0, m, 0.5, 1.0).iter().all(|&a| a == Complex64::new(1.0, 0.0)));
        }
    }

    #[test]
    fn endfire_half_wavelength_alternates() {
        let a = array_response(PI / 2.0, 2, 0.5, 1.0);
        assert!(close(a[0], Complex64::new(1.0, 0.0), 1e-15));
        assert!(close(a[1], Complex64::new(-1.0, 0.0), 1e-15));
    }

    #[test]
    fn unit_phase_path_gives_all_ones() {
        let fc = 5e9;
        let path = Path { gain: Complex64::new(1.0, 0.0), delay: 7.0 / fc, aod: 0.0 };
        let h = synthesize_channel(&[path], 8, C / fc / 2.0, fc);
        assert!(h.iter().all(|&x| close(x, Complex64::new(1.0, 0.0), 1e-9)), "{h:?}");
    }

    #[test]
    fn half_gain_halves_the_norm() {
        let fc = 5.915e9;
        let path = Path { gain: Complex64::new(0.5, 0.0), delay: 3.3e-7, aod: 0.4 };
        let h = synthesize_channel(&[path], 32, C / fc / 2.0, fc);
        assert!((norm_sqr(&h).sqrt() - 0.5 * 32f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn codebook_beams_are_unit_norm_with_increasing_sines() {
        let cb = dft_codebook(4, 8, 0.5, 1.0).unwrap();
        assert_eq!(cb.len(), 8);
        assert!(cb.iter().all(|f| (norm_sqr(f) - 1.0).abs() < 1e-12));
        let sines: Vec<f64> = (0..8).map(|b| codebook_sine(b, 8)).collect();
        assert!(sines.windows(2).all(|w| w[0] < w[1]));
        assert!(sines[0] > -1.0 && sines[7] < 1.0);
    }

    #[test]
    fn square_codebook_gram_has_unit_diagonal() {
        let cb = dft_codebook(16, 16, 0.5, 1.0).unwrap();
        for (i, f) in cb.iter().enumerate() {
            assert!((inner(f, f).re - 1.0).abs() < 1e-12);
            for g in &cb[i + 1..] {
                // Half-wavelength grid with B = M is orthogonal.
                assert!(inner(f, g).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn codebook_rejects_tiny_size() {
        assert!(matches!(dft_codebook(4, 1, 0.5, 1.0), Err(SimError::Domain(_))));
    }

    #[test]
    fn aligned_beamformer_has_closed_form_rate() {
        let h = array_response(0.3, 4, 0.5, 1.0).iter().map(|a| a * 1e-4).collect::<Vec<_>>();
        let p: f64 = 0.8;
        let scale = p.sqrt() / norm_sqr(&h).sqrt();
        let v: Vec<Complex64> = h.iter().map(|x| x * scale).collect();
        let sigma2 = 1e-9;
        let r = sum_rate(std::slice::from_ref(&h), &[v], sigma2, 1.0).unwrap();
        let expected = (1.0 + p * norm_sqr(&h) / sigma2).log2();
        assert!((r - expected).abs() < 1e-10 * expected);
    }

    #[test]
    fn orthogonal_beamformer_gives_zero_rate() {
        let h = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        let v = vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)];
        assert_eq!(sum_rate(&[h], &[v], 1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn sum_rate_errors() {
        let h = vec![Complex64::new(1.0, 0.0)];
        let v = vec![Complex64::new(2.0, 0.0)];
        assert!(matches!(sum_rate(std::slice::from_ref(&h), std::slice::from_ref(&v), 1.0, 1.0), Err(SimError::Constraint(_))));
        assert!(matches!(sum_rate(std::slice::from_ref(&h), std::slice::from_ref(&v), 0.0, 9.0), Err(SimError::Domain(_))));
        assert!(matches!(sum_rate(&[h], &[v], -1.0, 9.0), Err(SimError::Domain(_))));
    }

    #[test]
    fn matched_channel_selects_its_beam() {
        let cb = dft_codebook(8, 16, 0.5, 1.0).unwrap();
        for b in 0..16 {
            assert_eq!(optimal_beam(&cb[b], &cb).unwrap().0, b);
        }
    }

    #[test]
    fn zero_channel_is_degenerate() {
        let cb = dft_codebook(4, 4, 0.5, 1.0).unwrap();
        let h = vec![Complex64::new(0.0, 0.0); 4];
        assert!(matches!(optimal_beam(&h, &cb), Err(SimError::Degenerate(_))));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let f = vec![Complex64::new(1.0, 0.0)];
        let cb = vec![vec![Complex64::new(0.5, 0.0)], f.clone(), f.clone(), vec![Complex64::new(0.0, 1.0)]];
        assert_eq!(optimal_beam(&f, &cb).unwrap().0, 1);
    }

    #[test]
    fn path_loss_of_unit_channel_is_zero() {
        let h = array_response(0.2, 8, 0.5, 1.0);
        assert!(path_loss_db(&h).abs() < 1e-12);
        let half: Vec<Complex64> = h.iter().map(|x| x * 0.1).collect();
        assert!((path_loss_db(&half) - 20.0).abs() < 1e-12);
    }
}
