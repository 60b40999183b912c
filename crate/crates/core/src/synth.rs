//! Speech-like test material: syllables of formant-filtered pulse trains and
//! fricative noise separated by silent gaps, plus white and pink noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{Role, Utterance, SAMPLE_RATE};

const FS: f64 = SAMPLE_RATE as f64;

/// Two-pole resonator `y(n) = g·x(n) + a1·y(n-1) + a2·y(n-2)`.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64) -> Self {
        let r = (-PI * bandwidth / FS).exp();
        Self {
            a1: 2.0 * r * (2.0 * PI * freq / FS).cos(),
            a2: -r * r,
            gain: 1.0 - r,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn raised_cosine_envelope(len: usize, ramp: usize) -> Vec<f64> {
    let ramp = ramp.min(len / 2).max(1);
    (0..len)
        .map(|n| {
            let edge = n.min(len - 1 - n);
            if edge >= ramp {
                1.0
            } else {
                0.5 * (1.0 - (PI * edge as f64 / ramp as f64).cos())
            }
        })
        .collect()
}

fn voiced(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let f0_start = rng.gen_range(90.0..220.0);
    let f0_end = f0_start * rng.gen_range(0.85..1.15);
    let formants = [
        (rng.gen_range(300.0..850.0), rng.gen_range(60.0..110.0)),
        (rng.gen_range(850.0..2300.0), rng.gen_range(70.0..130.0)),
        (rng.gen_range(2300.0..3200.0), rng.gen_range(90.0..160.0)),
        (rng.gen_range(3300.0..4200.0), rng.gen_range(120.0..200.0)),
    ];
    let mut cascade: Vec<Resonator> = formants.iter().map(|&(f, b)| Resonator::new(f, b)).collect();
    // glottal pulse shaping: a double real pole
    let (mut g1, mut g2) = (0.0, 0.0);
    let mut phase = 1.0;
    (0..len)
        .map(|n| {
            let f0 = f0_start + (f0_end - f0_start) * n as f64 / len as f64;
            phase += f0 / FS;
            let pulse = if phase >= 1.0 {
                phase -= 1.0;
                1.0
            } else {
                0.0
            };
            g1 = 0.94 * g1 + pulse;
            g2 = 0.94 * g2 + g1;
            let mut x = g2 * 0.05 + rng.gen_range(-0.01..0.01);
            for r in cascade.iter_mut() {
                x = r.tick(x) * 4.0;
            }
            x
        })
        .collect()
}

fn fricative(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut res = Resonator::new(rng.gen_range(2500.0..6000.0), rng.gen_range(1000.0..2000.0));
    (0..len).map(|_| res.tick(rng.gen_range(-1.0..1.0))).collect()
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / max);
    }
}

/// `len` samples of syllable-like segments (0.12–0.35 s) with exact-zero
/// gaps between them, peak-normalized to 0.5.
pub fn speech_like(len: usize, seed: u64) -> Utterance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; len];
    let mut pos = ((rng.gen_range(0.05..0.15) * FS) as usize).min(len / 4);
    while pos < len {
        let seg_len = ((rng.gen_range(0.12..0.35) * FS) as usize).min(len - pos);
        let (mut seg, peak) = if rng.gen_bool(0.8) {
            (voiced(seg_len, &mut rng), rng.gen_range(0.4..1.0))
        } else {
            (fricative(seg_len, &mut rng), rng.gen_range(0.05..0.2))
        };
        normalize_peak(&mut seg, peak);
        let env = raised_cosine_envelope(seg_len, (0.02 * FS) as usize);
        for ((o, s), e) in out[pos..pos + seg_len].iter_mut().zip(&seg).zip(&env) {
            *o = s * e;
        }
        pos += seg_len + (rng.gen_range(0.03..0.12) * FS) as usize;
    }
    normalize_peak(&mut out, 0.5);
    Utterance::new(out, Role::Clean)
}

/// Uniform white noise in `[-0.5, 0.5)`.
pub fn white_noise(len: usize, seed: u64) -> Utterance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Utterance::new((0..len).map(|_| rng.gen_range(-0.5..0.5)).collect(), Role::Noise)
}

/// Approximately 1/f noise from Paul Kellet's refined filter bank.
pub fn pink_noise(len: usize, seed: u64) -> Utterance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = [0.0f64; 7];
    let mut out: Vec<f64> = (0..len)
        .map(|_| {
            let w: f64 = rng.gen_range(-1.0..1.0);
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let y = b.iter().sum::<f64>() + w * 0.5362;
            b[6] = w * 0.115926;
            y
        })
        .collect();
    normalize_peak(&mut out, 0.5);
    Utterance::new(out, Role::Noise)
}
