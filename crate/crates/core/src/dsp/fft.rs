//! Iterative radix-2 decimation-in-time FFT.

use std::f64::consts::PI;

use num_complex::Complex64;

/// Precomputed twiddles and bit-reversal permutation for one transform size.
#[derive(Debug, Clone)]
pub struct Fft {
    size: usize,
    twiddles: Vec<Complex64>,
    bit_reverse: Vec<usize>,
}

impl Fft {
    /// Panics unless `size` is a nonzero power of two.
    pub fn new(size: usize) -> Self {
        assert!(size.is_power_of_two(), "FFT size must be a power of two, got {size}");
        let bits = size.trailing_zeros();
        let bit_reverse = (0..size)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let twiddles = (0..size / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / size as f64))
            .collect();
        Self {
            size,
            twiddles,
            bit_reverse,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Unnormalized forward transform, in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, false);
    }

    /// Inverse transform including the `1/K` factor, in place.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, true);
        let scale = 1.0 / self.size as f64;
        for x in data.iter_mut() {
            *x *= scale;
        }
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        assert_eq!(data.len(), self.size, "buffer length does not match FFT size");
        for i in 0..self.size {
            let j = self.bit_reverse[i];
            if i < j {
                data.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= self.size {
            let half = len / 2;
            let stride = self.size / len;
            for start in (0..self.size).step_by(len) {
                for k in 0..half {
                    let w = self.twiddles[k * stride];
                    let w = if inverse { w.conj() } else { w };
                    let a = data[start + k];
                    let b = data[start + k + half] * w;
                    data[start + k] = a + b;
                    data[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }
}

/// Forward FFT of a real frame; returns all `K` bins.
pub fn fft(frame: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = frame.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    Fft::new(frame.len()).forward(&mut buf);
    buf
}

/// Inverse FFT with `1/K` normalization.
pub fn ifft(spectrum: &[Complex64]) -> Vec<Complex64> {
    let mut buf = spectrum.to_vec();
    Fft::new(spectrum.len()).inverse(&mut buf);
    buf
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dft(x: &[f64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(t, &v)| v * Complex64::from_polar(1.0, -2.0 * PI * (k * t % n) as f64 / n as f64))
                    .sum()
            })
            .collect()
    }

    #[test]
    fn impulse_gives_flat_spectrum() {
        let mut x = vec![0.0; 256];
        x[0] = 1.0;
        for bin in fft(&x) {
            assert_eq!(bin, Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn cosine_lands_in_two_bins() {
        let k = 256;
        let x: Vec<f64> = (0..k).map(|n| (2.0 * PI * n as f64 * 4.0 / k as f64).cos()).collect();
        let oracle = naive_dft(&x);
        let spec = fft(&x);
        for (bin, (a, b)) in spec.iter().zip(&oracle).enumerate() {
            assert!((a - b).norm() < 1e-10);
            let expected = if bin == 4 || bin == k - 4 { k as f64 / 2.0 } else { 0.0 };
            assert!((a.norm() - expected).abs() < 1e-10, "bin {bin}: {a}");
        }
    }

    #[test]
    fn matches_naive_dft_for_all_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for log in 0..=8 {
            let n = 1 << log;
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let err = fft(&x)
                .iter()
                .zip(naive_dft(&x))
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-10, "n={n} err={err}");
        }
    }

    #[test]
    fn inverse_round_trip_and_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let spec = fft(&x);
        let back = ifft(&spec);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b.re).abs() < 1e-12 && b.im.abs() < 1e-12);
        }
        let time: f64 = x.iter().map(|v| v * v).sum();
        let freq: f64 = spec.iter().map(|c| c.norm_sqr()).sum::<f64>() / 256.0;
        assert!((time - freq).abs() / time < 1e-9);
    }
}
