//! Synthetic corpus shared by the integration tests and the acceptance suite.

#![allow(dead_code)]

use wfenhance::audio::Utterance;
use wfenhance::pipeline::{Mixture, Split};
use wfenhance::synth::{pink_noise, speech_like, white_noise};

pub const UTTERANCE_LEN: usize = 32_000;
pub const SNRS: [f64; 3] = [0.0, 5.0, 10.0];

pub struct Corpus {
    pub train: Vec<Mixture>,
    pub val: Vec<Mixture>,
    /// Utterance 16 (never trained on) at 5 dB in fresh white noise.
    pub held_out: Mixture,
}

fn noise(kind: usize, seed: u64) -> (Utterance, &'static str) {
    if kind == 0 {
        (white_noise(UTTERANCE_LEN, seed), "white")
    } else {
        (pink_noise(UTTERANCE_LEN, seed), "pink")
    }
}

/// 20 utterances: 0..16 train, 16..20 val. Every utterance is mixed with both
/// noise types at an SNR from {0, 5, 10} dB.
pub fn corpus() -> Corpus {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for u in 0..20u64 {
        let clean = speech_like(UTTERANCE_LEN, 100 + u);
        let split = if u < 16 { Split::Train } else { Split::Val };
        for kind in 0..2 {
            let (n, label) = noise(kind, 1000 + 2 * u + kind as u64);
            let snr = SNRS[(u as usize + kind) % 3];
            let m = Mixture::mix(&clean, &n, snr, 0, split, label).unwrap();
            match split {
                Split::Train => train.push(m),
                _ => val.push(m),
            }
        }
    }
    let held_out = Mixture::mix(
        &speech_like(UTTERANCE_LEN, 116),
        &white_noise(UTTERANCE_LEN, 9999),
        5.0,
        0,
        Split::Test,
        "white",
    )
    .unwrap();
    Corpus { train, val, held_out }
}
