use partcount_core::density::DensityMap;
use partcount_core::loss::{combined_loss_with_grad, LossConfig, ObjectMask};
use partcount_core::net::{CountingNet, ExemplarSet, FeatureMap, NetConfig};
use partcount_core::BBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-3;

struct Problem {
    image: FeatureMap<f64>,
    exemplars: ExemplarSet,
    gt: DensityMap,
    mask: ObjectMask,
    config: LossConfig,
}

fn problem(seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = FeatureMap::from_raw(3, 8, 8, (0..192).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let gt = DensityMap::from_raw(8, 8, (0..64).map(|_| rng.random_range(0.0..0.5)).collect()).unwrap();
    let mask = ObjectMask { width: 8, height: 8, values: (0..64).map(|_| rng.random_range(0..2u8)).collect() };
    let exemplars = ExemplarSet::new(vec![BBox::new(1.0, 1.0, 3.0, 3.0), BBox::new(4.0, 3.5, 3.5, 4.0)]);
    let config = LossConfig { lambda: 0.05, ..LossConfig::default() };
    Problem { image, exemplars, gt, mask, config }
}

fn loss(net: &CountingNet<f64>, p: &Problem) -> f64 {
    let fwd = net.forward(&p.image, &p.exemplars, false).unwrap();
    let pred = DensityMap::from_raw(8, 8, fwd.density.data.clone()).unwrap();
    combined_loss_with_grad(&pred, &p.gt, &p.mask, &p.config).unwrap().0.combined
}

fn analytic(net: &CountingNet<f64>, p: &Problem) -> Vec<Vec<f64>> {
    let fwd = net.forward(&p.image, &p.exemplars, true).unwrap();
    let pred = DensityMap::from_raw(8, 8, fwd.density.data.clone()).unwrap();
    let (_, g) = combined_loss_with_grad(&pred, &p.gt, &p.mask, &p.config).unwrap();
    net.backward(&fwd, &g).unwrap()
}

/// Kaiming-initialized miniature net with unit biases: every rectifier output
/// is active and no max or rectifier kink lies within `EPS` of the point.
fn live_net(seed: u64, output_gain: f64) -> CountingNet<f64> {
    let mut net = CountingNet::<f64>::new(NetConfig { seed, output_gain, ..NetConfig::miniature() }).unwrap();
    for p in net.params_mut() {
        if p.name.ends_with("bias") {
            p.data.iter_mut().for_each(|b| *b = 1.0);
        }
    }
    net
}

fn assert_matches_central_differences(net: &CountingNet<f64>, p: &Problem) {
    let fwd = net.forward(&p.image, &p.exemplars, false).unwrap();
    let live = fwd.density.data.iter().filter(|v| **v > 0.0).count();
    assert!(live == 64, "only {live} active output pixels");
    let grads = analytic(net, p);
    for (t, tensor) in net.params().iter().enumerate() {
        let mut worst: f64 = 0.0;
        for i in 0..tensor.data.len() {
            let mut plus = net.clone();
            plus.params_mut()[t].data[i] += EPS;
            let mut minus = net.clone();
            minus.params_mut()[t].data[i] -= EPS;
            let numeric = (loss(&plus, p) - loss(&minus, p)) / (2.0 * EPS);
            let a = grads[t][i];
            let scale = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / scale);
        }
        assert!(worst < 1e-4, "{}: max relative error {worst:e}", tensor.name);
    }
}

#[test]
fn miniature_net_matches_central_differences() {
    assert_matches_central_differences(&live_net(8, 1.0), &problem(8));
}

#[test]
fn output_gain_is_differentiated() {
    assert_matches_central_differences(&live_net(8, 0.25), &problem(8));
}

#[test]
fn gradient_of_sum_is_sum_of_gradients() {
    let net = CountingNet::<f64>::new(NetConfig { seed: 4, ..NetConfig::miniature() }).unwrap();
    let p = problem(3);
    let fwd = net.forward(&p.image, &p.exemplars, true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let u1: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
    let u2: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
    let both: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a + b).collect();
    let g1 = net.backward(&fwd, &u1).unwrap();
    let g2 = net.backward(&fwd, &u2).unwrap();
    let g = net.backward(&fwd, &both).unwrap();
    for ((a, b), c) in g1.iter().flatten().zip(g2.iter().flatten()).zip(g.iter().flatten()) {
        assert!((a + b - c).abs() <= 1e-10);
    }
}
