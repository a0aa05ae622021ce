use ncmac::io::{self, Metadata};
use ncmac::linalg::{self, CMat};
use ncmac::metrics::{self, MetricKind};
use ncmac::model::{JointConstellation, UserConstellation};
use ncmac::pep;
use ncmac::simulator::{self, SimPlan};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pair(seed: u64, t: usize, m: usize, p: f64) -> (CMat, CMat) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || {
        let x = linalg::cgauss(t, m, &mut r);
        let s = (p * t as f64 / linalg::fro2(&x)).sqrt();
        linalg::scale(&x, s)
    };
    (draw(), draw())
}

fn small_constellation(seed: u64, t: usize) -> JointConstellation {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let users = (0..2)
        .map(|_| UserConstellation::from_symbols((0..2).map(|_| linalg::cgauss(t, 1, &mut r)).collect()).unwrap())
        .collect();
    JointConstellation::from_users(t, 2, users).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn riemannian_sandwiches_b(seed in any::<u64>(), t in 2usize..6, m in 1usize..3, lp in -1.0f64..2.0) {
        let (x, xp) = pair(seed, t, m.min(t), 10f64.powf(lp));
        let b = metrics::metric_b(&x, &xp).unwrap();
        let dr = metrics::riemannian_distance(&x, &xp).unwrap();
        let tol = 1e-10 * b.max(1.0);
        prop_assert!(dr <= b + tol);
        prop_assert!(b <= (t as f64).sqrt() * dr + tol);
    }

    #[test]
    fn pep_is_a_probability_below_chernoff(seed in any::<u64>(), t in 2usize..5, n in 1usize..4, lp in -0.5f64..1.5) {
        let (x, xp) = pair(seed, t, 1, 10f64.powf(lp));
        let pe = pep::pep_closed_form(&x, &xp, n).unwrap().value;
        let ch = pep::pep_chernoff(&x, &xp, n, 0.5).unwrap();
        prop_assert!((0.0..=1.0).contains(&pe));
        prop_assert!(pe <= ch * (1.0 + 1e-9));
        let (lo, hi) = pep::exponent_bounds(&x, &xp).unwrap();
        let ex = -pe.ln() / n as f64;
        prop_assert!(ex >= lo - 1e-9 && ex <= hi + 1e-9);
    }

    #[test]
    fn metrics_invariant_under_common_rotation(seed in any::<u64>(), t in 2usize..5) {
        let c = small_constellation(seed, t);
        let u = linalg::haar_unitary(t, &mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let users = c
            .users()
            .iter()
            .map(|usr| UserConstellation::new(usr.symbols().iter().map(|x| &u * x).collect(), usr.power()).unwrap())
            .collect();
        let rotated = JointConstellation::new(c.config().clone(), users).unwrap();
        for kind in [MetricKind::B, MetricKind::J(0.5), MetricKind::D, MetricKind::E, MetricKind::M1] {
            let a = metrics::evaluate(kind, &c).unwrap().value;
            let b = metrics::evaluate(kind, &rotated).unwrap().value;
            prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0), "{:?}: {} vs {}", kind, a, b);
        }
    }

    #[test]
    fn d_metric_is_nonnegative_and_sandwiched(seed in any::<u64>(), t in 2usize..5) {
        let c = small_constellation(seed, t);
        let d = metrics::d_min(&c).unwrap().value;
        let lo = metrics::min_k_d(&c).unwrap().value;
        prop_assert!(d >= -1e-12);
        prop_assert!(d >= lo - 1e-9 * d.max(1.0) && d <= lo + 1.0 + 1e-9 * d.max(1.0));
    }

    #[test]
    fn json_round_trip(seed in any::<u64>(), t in 2usize..5) {
        let c = small_constellation(seed, t);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let meta = Metadata { n: Some(2), ..Default::default() };
        io::save_constellation(&path, &c, &meta).unwrap();
        let (back, m) = io::load_constellation(&path).unwrap();
        prop_assert_eq!(back, c);
        prop_assert_eq!(m, meta);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn simulation_is_seed_reproducible(seed in any::<u64>()) {
        let c = small_constellation(seed, 3);
        let plan = SimPlan { n: 2, snr_db: vec![0.0, 10.0], max_trials: 4096, target_errors: 50, seed };
        let a = simulator::simulate_ser(&c, &plan).unwrap();
        let b = simulator::simulate_ser(&c, &plan).unwrap();
        prop_assert_eq!(a.to_csv(), b.to_csv());
    }
}
