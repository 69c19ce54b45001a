mod common;

use common::{random_jet, random_poly, real_point};
use kam_engine::error::FlowError;
use kam_engine::flow::{
    check_symplectic, compose_hamiltonian, displacement_check, flow_time, integrate_flow,
    lie_series, Smallness,
};
use kam_engine::hamiltonian::{jet_norm, Layout, Point, PolyHamiltonian, SamplePlan};
use kam_engine::spaces::SiteLattice;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn lattice() -> SiteLattice {
    SiteLattice::singletons(&[1, 2], 3)
}

fn layout(lat: &SiteLattice) -> Layout {
    Layout::new(2, lat.len(), 12).unwrap()
}

fn gap(a: &Point, b: &Point) -> f64 {
    let parts = |p: &Point| {
        p.theta
            .iter()
            .chain(&p.r)
            .chain(&p.z)
            .copied()
            .collect::<Vec<_>>()
    };
    parts(a)
        .iter()
        .zip(parts(b))
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn series_flow_agrees_with_direct_integration(seed in any::<u64>(), t in 0.05f64..1.0) {
        let lat = lattice();
        let lay = layout(&lat);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_jet(&mut rng, &lay, 2, 0.02);
        let phi = flow_time(&s, t, 1e-13, None).unwrap();
        for _ in 0..3 {
            let x = real_point(&mut rng, &lay, 0.02, 0.1);
            let y = phi.apply(&x).unwrap();
            let y_ode = integrate_flow(&s, &x, t, 1e-13).unwrap();
            prop_assert!(gap(&y, &y_ode) <= 1e-8, "gap {}", gap(&y, &y_ode));
        }
    }

    #[test]
    fn backward_flow_inverts_forward_flow(seed in any::<u64>(), t in 0.05f64..1.0) {
        let lat = lattice();
        let lay = layout(&lat);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_jet(&mut rng, &lay, 2, 0.02);
        let fwd = flow_time(&s, t, 1e-13, None).unwrap();
        let back = flow_time(&s.neg(), t, 1e-13, None).unwrap();
        let x = real_point(&mut rng, &lay, 0.02, 0.1);
        let round = back.apply(&fwd.apply(&x).unwrap()).unwrap();
        prop_assert!(gap(&round, &x) <= 1e-10);
    }

    #[test]
    fn split_time_flows_compose(seed in any::<u64>(), split in 0.1f64..0.9) {
        let lat = lattice();
        let lay = layout(&lat);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_jet(&mut rng, &lay, 2, 0.02);
        let x = real_point(&mut rng, &lay, 0.02, 0.1);
        let whole = flow_time(&s, 1.0, 1e-13, None).unwrap().apply(&x).unwrap();
        let a = flow_time(&s, split, 1e-13, None).unwrap();
        let b = flow_time(&s, 1.0 - split, 1e-13, None).unwrap();
        prop_assert!(gap(&whole, &b.apply(&a.apply(&x).unwrap()).unwrap()) <= 1e-10);
    }

    #[test]
    fn flow_is_symplectic_at_real_points(seed in any::<u64>()) {
        let lat = lattice();
        let lay = layout(&lat);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_jet(&mut rng, &lay, 2, 0.02);
        let phi = flow_time(&s, 1.0, 1e-13, None).unwrap();
        let pts: Vec<Point> = (0..2).map(|_| real_point(&mut rng, &lay, 0.02, 0.1)).collect();
        prop_assert!(check_symplectic(&phi, &pts).unwrap() <= 1e-8);
    }

    #[test]
    fn displacement_stays_within_generator_bound(seed in any::<u64>()) {
        let lat = lattice();
        let lay = layout(&lat);
        let (sigma, mu) = (1.0, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_jet(&mut rng, &lay, 2, 1e-6);
        let plan = SamplePlan::default();
        let s_norm = jet_norm(&s, &lat, sigma, mu, &plan).unwrap();
        let phi = flow_time(&s, 1.0, 1e-14, None).unwrap();
        let pts = plan.base_points(&lat, lay.n, 0.5 * mu);
        let chk = displacement_check(&phi, &pts[..16], &lat, s_norm, mu, plan.alpha).unwrap();
        prop_assert!(chk.holds(), "{chk:?}");
    }

    #[test]
    fn pullback_matches_evaluation_along_the_flow(seed in any::<u64>()) {
        let lat = lattice();
        let lay = Layout { k_max: 24, ..layout(&lat) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_jet(&mut rng, &lay, 1, 0.01);
        let h = random_poly(&mut rng, &lay, 12, 2, 1, 3, 1.0).realify();
        let phi = flow_time(&s, 1.0, 1e-14, None).unwrap();
        let hc = compose_hamiltonian(&h, &phi).unwrap();
        for _ in 0..4 {
            let x = real_point(&mut rng, &lay, 0.02, 0.1);
            let direct = h.eval(&phi.apply(&x).unwrap());
            prop_assert!((hc.eval(&x) - direct).norm() <= 1e-8 * h.l1().max(1.0));
        }
    }
}

#[test]
fn lie_series_of_the_zero_generator_is_the_identity() {
    let lat = lattice();
    let lay = layout(&lat);
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let h = random_poly(&mut rng, &lay, 20, 3, 1, 3, 1.0);
    let out = lie_series(&h, &PolyHamiltonian::zero(&lay), 1.0, 1e-14).unwrap();
    assert_eq!(out.distance(&h), 0.0);
}

#[test]
fn oversized_generator_is_refused() {
    let lat = lattice();
    let lay = layout(&lat);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let s = random_jet(&mut rng, &lay, 2, 1.0);
    let check = Smallness {
        norm: 1.0,
        eta: 0.25,
        nu: 0.1,
    };
    assert!(matches!(
        flow_time(&s, 1.0, 1e-13, Some(check)),
        Err(FlowError::TooLarge { .. })
    ));
    assert!(matches!(
        flow_time(&s, -0.1, 1e-13, None),
        Err(FlowError::BadTime(_))
    ));
}
