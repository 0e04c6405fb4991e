use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fsev::cli::config::{Command, RunConfig};
use fsev::estimator::{mean_and_se, radial_offset, Potential, Prior, Problem};
use fsev::features::{FeatureDecl, FeatureSet};
use fsev::geometry::{Domain, DrumShape, SamplingRegion};
use fsev::network::{Architecture, ModeSnapshot, NetworkParams};
use fsev::trainer::{adam_step, beta_for, lr_at, n_at, AdamConfig, AdamState, TrainConfig};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #[test]
    fn paper_schedule_is_exact(epoch in 0usize..120_000) {
        let c = TrainConfig::paper();
        let stage = (epoch / 20_000) as u32;
        prop_assert_eq!(lr_at(&c, epoch), 5e-3 / 4f64.powi(stage as i32));
        prop_assert_eq!(n_at(&c, epoch), 1000 * 2usize.pow(stage));
    }

    #[test]
    fn schedules_are_monotone(epoch in 0usize..29_999) {
        let c = TrainConfig::desk();
        prop_assert!(lr_at(&c, epoch + 1) <= lr_at(&c, epoch));
        prop_assert!(n_at(&c, epoch + 1) >= n_at(&c, epoch));
    }

    #[test]
    fn beta_is_factor_times_max(found in prop::collection::vec(0.1f64..100.0, 1..8)) {
        let c = TrainConfig::paper();
        let max = found.iter().copied().fold(f64::MIN, f64::max);
        prop_assert_eq!(beta_for(&found, &c), Some(4.0 * max));
    }

    #[test]
    fn zero_gradient_keeps_parameters(theta in prop::collection::vec(-5.0f64..5.0, 1..20), steps in 1usize..5) {
        let mut p = theta.clone();
        let mut st = AdamState::new(p.len());
        for e in 0..steps {
            adam_step(&mut p, &vec![0.0; theta.len()], &mut st, 1e-2, &AdamConfig::default(), e).unwrap();
        }
        prop_assert_eq!(p, theta);
    }

    #[test]
    fn radial_offset_stays_in_range(w_plus in 1e-6f64..10.0, s in 0.01f64..0.99, u in 0.0f64..=1.0) {
        let w = radial_offset(w_plus, s, u);
        prop_assert!((0.0..=w_plus).contains(&w));
    }

    #[test]
    fn domain_tokens_round_trip(a in -5.0f64..0.0, len in 0.1f64..5.0, r in 0.1f64..3.0, scale in 0.1f64..4.0) {
        for d in [
            Domain::interval(a, a + len).unwrap(),
            Domain::boxed(vec![a, a - 1.0], vec![a + len, a + 2.0 * len]).unwrap(),
            Domain::ball(vec![a, len, 0.5], r).unwrap(),
            Domain::drum(DrumShape::B, scale).unwrap(),
        ] {
            prop_assert_eq!(Domain::from_tokens(&d.to_tokens()).unwrap(), d);
        }
    }

    #[test]
    fn config_render_round_trips(
        s in 0.01f64..0.99,
        k in 1usize..10,
        seed in any::<u64>(),
        lr0 in 1e-5f64..1e-1,
        growth in 1.0f64..3.0,
        pot in 0usize..4,
    ) {
        let text = format!(
            "domain = interval\ns = {s}\nK = {k}\nseed = {seed}\nlr0 = {lr0}\nn_growth = {growth}\npotential = {}\n",
            Potential::ALL[pot].name()
        );
        let c = RunConfig::parse(&text, Command::Solve, None, None).unwrap();
        prop_assert_eq!(RunConfig::parse(&c.render(), Command::Solve, None, None).unwrap(), c);
    }

    #[test]
    fn loss_is_scale_invariant(c in prop_oneof![-10.0f64..-0.01, 0.01f64..10.0], seed in 0u64..1000) {
        let dom = Domain::interval(-1.0, 1.0).unwrap();
        let p = Problem::on(dom.clone(), 0.6, Potential::Harmonic, &mut rng(seed)).unwrap();
        let set = FeatureSet::from_decl(&dom, &FeatureDecl::standard(0.6, 6, 0)).unwrap();
        let arch = Architecture::new(1, 2, 6).unwrap();
        let net = NetworkParams::init(arch, &mut rng(seed + 1));
        let prior = ModeSnapshot { params: NetworkParams::init(arch, &mut rng(seed + 2)), features: set.clone(), lambda_hat: 1.0, lambda_se: 0.0, l2_norm_sq: 0.3 };
        let sample = p.prepare(p.draw_batch(500, &mut rng(seed + 3)).unwrap(), &[Prior::from(&prior)]).unwrap();
        let out = fsev::network::forward_batch(&net, &set, &sample.batch.stacked()).unwrap();
        let base = p.loss(&sample, &out, 3.0, None).unwrap().loss;
        let scaled: Vec<f64> = out.iter().map(|v| c * v).collect();
        let again = p.loss(&sample, &scaled, 3.0, None).unwrap().loss;
        prop_assert!(((again - base) / base).abs() <= 1e-12);
    }
}

fn quadratic_bump(xs: &[f64]) -> fsev::Result<Vec<f64>> {
    Ok(xs.iter().map(|x| (1.0 - x * x).max(0.0)).collect())
}

#[test]
fn standard_error_scales_as_inverse_root_n() {
    let p = Problem::on(Domain::interval(-1.0, 1.0).unwrap(), 0.5, Potential::Zero, &mut rng(1)).unwrap();
    let mut r = rng(2);
    let spread = |n: usize, r: &mut ChaCha8Rng| {
        let v: Vec<f64> = (0..200)
            .map(|_| {
                let b = p.draw_batch(n, r).unwrap();
                let ux = quadratic_bump(&b.xs).unwrap();
                let uy = quadratic_bump(&b.shifted()).unwrap();
                p.estimate_a1(&b, &ux, &uy).unwrap() + p.estimate_a2(&b, &ux).unwrap()
            })
            .collect();
        mean_and_se(&v).1
    };
    let se: Vec<f64> = [1_000, 10_000, 100_000].iter().map(|&n| spread(n, &mut r)).collect();
    for w in se.windows(2) {
        let ratio = w[0] / w[1] / 10f64.sqrt();
        assert!((ratio - 1.0).abs() < 0.2, "se {se:?}");
    }
}

#[test]
fn seminorm_does_not_depend_on_sampling_region() {
    let dom = Domain::LShape;
    let set = FeatureSet::from_decl(&dom, &FeatureDecl::standard(0.5, 6, 3)).unwrap();
    let net = NetworkParams::init(Architecture::new(2, 2, 9).unwrap(), &mut rng(5));
    let u = |xs: &[f64]| fsev::network::forward_batch(&net, &set, xs).unwrap();
    let mut stats = Vec::new();
    for region in [dom.default_region(), SamplingRegion::boxed(vec![-1.5; 2], vec![1.5; 2]).unwrap()] {
        let p = Problem::new(dom.clone(), region, 0.5, Potential::Zero, 1e-4, &mut rng(6)).unwrap();
        let mut r = rng(7);
        let v: Vec<f64> = (0..200)
            .map(|_| {
                let b = p.draw_batch(10_000, &mut r).unwrap();
                p.estimate_a1(&b, &u(&b.xs), &u(&b.shifted())).unwrap() + p.estimate_a2(&b, &u(&b.xs)).unwrap()
            })
            .collect();
        stats.push(mean_and_se(&v));
    }
    let (m0, s0) = stats[0];
    let (m1, s1) = stats[1];
    assert!((m0 - m1).abs() < 3.0 * (s0 * s0 + s1 * s1).sqrt(), "{stats:?}");
}

#[test]
fn random_networks_respect_the_rayleigh_bound() {
    // first eigenvalue at s = 0.5 on (-1, 1)
    let lambda1 = 1.15777;
    let dom = Domain::interval(-1.0, 1.0).unwrap();
    let p = Problem::on(dom.clone(), 0.5, Potential::Zero, &mut rng(1)).unwrap();
    let set = FeatureSet::from_decl(&dom, &FeatureDecl::standard(0.5, 10, 0)).unwrap();
    let arch = Architecture::new(1, 2, 10).unwrap();
    for trial in 0..100 {
        let snap = ModeSnapshot {
            params: NetworkParams::init(arch, &mut rng(100 + trial)),
            features: set.clone(),
            lambda_hat: 0.0,
            lambda_se: 0.0,
            l2_norm_sq: 0.0,
        };
        let est = p.estimate_eigenvalue(&snap, 5_000, 10, &mut rng(trial)).unwrap();
        assert!(est.lambda_hat >= lambda1 - 3.0 * est.se, "trial {trial}: {est:?}");
    }
}
