use wfenhance::dsp::StftConfig;
use wfenhance::neural::Topology;
use wfenhance::pipeline::{train, Dataset, FeatureStats, LossWeighting, Mixture, Split, TrainConfig};
use wfenhance::percept::WeightConfig;
use wfenhance::synth::{speech_like, white_noise};

fn tiny_set() -> Dataset {
    let cfg = StftConfig::default();
    // 63 hops plus one frame gives exactly 64 frames
    let len = 63 * cfg.hop + cfg.frame_len;
    let m = Mixture::mix(&speech_like(len, 31), &white_noise(len, 32), 5.0, 0, Split::Train, "white").unwrap();
    let ds = Dataset::from_mixtures([&m], LossWeighting::Filter(WeightConfig::amr(0.92, 0.6)), &cfg).unwrap();
    assert_eq!(ds.len(), 64);
    ds
}

#[test]
fn overfits_tiny_dataset() {
    let ds = tiny_set();
    let stats = FeatureStats::fit(&ds).unwrap();
    let cfg = TrainConfig {
        max_steps: 500,
        weighting: ds.weighting,
        ..TrainConfig::default()
    };
    let out = train::<f32>(&ds, None, &stats, Topology::default(), &cfg).unwrap();
    let ratio = out.final_loss() / out.initial_loss();
    assert!(ratio < 0.1, "final/initial = {ratio}");
    assert_eq!(out.log.first().unwrap().step, 0);
    assert_eq!(out.log.last().unwrap().step, 500);
    assert!(out.log.iter().all(|r| r.val_loss.is_none()));
}
