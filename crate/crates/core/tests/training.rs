//! End-to-end learning on small synthetic scenes. Slow in unoptimized builds;
//! the workspace test profile compiles with optimizations.

use std::collections::BTreeMap;

use partcount_core::dataset::Annotation;
use partcount_core::density::WindowPolicy;
use partcount_core::net::{CountingNet, NetConfig};
use partcount_core::synth::{generate_scene, SynthConfig};
use partcount_core::train::{prepare_sample, train, TrainConfig, TrainSample};

fn samples(config: &SynthConfig, scenes: std::ops::Range<usize>) -> BTreeMap<u64, TrainSample> {
    scenes
        .map(|s| {
            let view = &generate_scene(config, s).unwrap().views[0];
            let anns = view.annotations(s as u64, 1);
            let refs: Vec<&Annotation> = anns.iter().collect();
            (s as u64, prepare_sample(s as u64, &view.image, &refs, 128, WindowPolicy::default()).unwrap())
        })
        .collect()
}

#[test]
fn trained_net_counts_held_out_scene() {
    let base = SynthConfig {
        views_per_scene: 1,
        count_range: (5, 15),
        radius_range: (10.0, 16.0),
        image_size: 256,
        seed: 7,
        ..SynthConfig::default()
    };
    let mut data = samples(&base, 0..14);
    let ids: Vec<u64> = data.keys().copied().collect();
    let (train_ids, dev_ids) = ids.split_at(10);
    let config = TrainConfig { learning_rate: 1e-3, epochs: 20, image_size: 128, seed: 1, ..TrainConfig::default() };
    let net = CountingNet::<f32>::new(NetConfig { seed: 1, ..NetConfig::default() }).unwrap();
    let out = train(net, train_ids, dev_ids, &mut data, &config).unwrap();

    let held_out = samples(&SynthConfig { count_range: (10, 10), seed: 99, ..base }, 0..3);
    for (id, s) in &held_out {
        let predicted = out.best_net.count(&s.image, &s.exemplars).unwrap();
        assert!((predicted - 10.0).abs() <= 3.0, "held-out scene {id}: counted {predicted:.2} of 10");
    }
}
