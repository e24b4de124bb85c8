use beamgrid::channel::{
    beam_pair_gains, channel_from_paths, dft_codebook, geometric_channel, is_los, link_endpoints, nearest_dft_beam,
    optimal_pair, propagation_paths, steering_vector, ArrayPair, ChannelMatrix, ChannelParams, Codebook, GainMatrix,
    Link, LinkConfig, Path,
};
use beamgrid::features::GridSpec;
use beamgrid::geometry::Vec3;
use beamgrid::scene::{generate_scene, Scene, SceneConfig, Vehicle};
use beamgrid::Error;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{FRAC_PI_2, PI};

fn random_channel(n_rx: usize, n_tx: usize, seed: u64) -> ChannelMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n_rx * n_tx).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    ChannelMatrix { n_rx, n_tx, data }
}

fn random_codebook(n: usize, beams: usize, seed: u64) -> Codebook {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beams = (0..beams)
        .map(|_| (0..n).map(|_| Complex64::from_polar(rng.random_range(0.1..1.0), rng.random_range(0.0..2.0 * PI))).collect())
        .collect();
    Codebook { element_count: n, beams }
}

/// Direct triple loop over rx element, tx element and the pair.
fn naive_gains(h: &ChannelMatrix, tx: &Codebook, rx: &Codebook) -> Vec<f64> {
    let mut out = Vec::new();
    for wt in &tx.beams {
        for wr in &rx.beams {
            let mut z = Complex64::new(0.0, 0.0);
            for (r, wr_r) in wr.iter().enumerate() {
                for (t, wt_t) in wt.iter().enumerate() {
                    z += wr_r.conj() * h.data[r * h.n_tx + t] * wt_t;
                }
            }
            out.push(z.norm_sqr());
        }
    }
    out
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

fn street_scene(vehicles: Vec<Vehicle>) -> Scene {
    Scene { vehicles, rsu_position: Vec3::new(14.0, -3.0, 5.0), coverage: GridSpec::default().coverage(), frame_id: 0, rng_seed: 0 }
}

fn ms() -> Vehicle {
    Vehicle::new(14.0, 10.0, 4.5, 1.8, 1.5, FRAC_PI_2).with_ms(true)
}

fn blocker() -> Vehicle {
    Vehicle::new(14.0, 4.0, 4.0, 2.5, 4.0, FRAC_PI_2)
}

fn reflector() -> Vehicle {
    Vehicle::new(20.0, 5.0, 12.0, 2.5, 4.0, FRAC_PI_2)
}

#[test]
fn gains_match_triple_loop() {
    for seed in 0..20 {
        let (n_rx, n_tx) = (1 + seed as usize % 5, 2 + seed as usize % 9);
        let h = random_channel(n_rx, n_tx, seed);
        let tx = random_codebook(n_tx, 7, seed + 100);
        let rx = random_codebook(n_rx, 3, seed + 200);
        let g = beam_pair_gains(&h, &tx, &rx).unwrap();
        assert_eq!((g.n_tx, g.n_rx), (7, 3));
        for (a, b) in g.gains.iter().zip(naive_gains(&h, &tx, &rx)) {
            assert!(rel_close(*a, b, 1e-12), "{a} vs {b}");
        }
    }
}

#[test]
fn codebook_size_mismatch_is_rejected() {
    let h = random_channel(2, 4, 0);
    let err = beam_pair_gains(&h, &dft_codebook(3), &dft_codebook(2)).unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch(_)));
}

#[test]
fn on_grid_single_path_peaks_at_matching_beams() {
    let (n_tx, n_rx) = (16, 4);
    for (kt, kr) in [(0, 0), (3, 1), (9, 2), (15, 3)] {
        let s_tx = {
            let s = 2.0 * kt as f64 / n_tx as f64;
            if s > 1.0 { s - 2.0 } else { s }
        };
        let s_rx = {
            let s = 2.0 * kr as f64 / n_rx as f64;
            if s > 1.0 { s - 2.0 } else { s }
        };
        assert_eq!(nearest_dft_beam(n_tx, s_tx), kt);
        assert_eq!(nearest_dft_beam(n_rx, s_rx), kr);
        let axis = Vec3::new(1.0, 0.0, 0.0);
        let dir = |s: f64| Vec3::new(s, (1.0 - s * s).max(0.0).sqrt(), 0.0);
        let mut h = ChannelMatrix::zeros(n_rx, n_tx);
        h.add_path(Complex64::new(0.5, 0.0), &steering_vector(n_rx, axis, dir(s_rx)), &steering_vector(n_tx, axis, dir(s_tx)));
        let g = beam_pair_gains(&h, &dft_codebook(n_tx), &dft_codebook(n_rx)).unwrap();
        assert_eq!(optimal_pair(&g), kt * n_rx + kr);
        assert!((g.get(kt, kr) - 0.25).abs() < 1e-12);
        // Orthogonal DFT beams see nothing of an on-grid path.
        let off: f64 = g.gains.iter().enumerate().filter(|&(i, _)| i != kt * n_rx + kr).map(|(_, v)| v).sum();
        assert!(off < 1e-20);
    }
}

#[test]
fn optimal_pair_examples() {
    let g = |gains: Vec<f64>| GainMatrix { n_tx: 2, n_rx: 2, gains, los: true, noise_power: 1.0 };
    assert_eq!(optimal_pair(&g(vec![1.0, 2.0, 3.0, 0.0])), 2);
    assert_eq!(optimal_pair(&g(vec![5.0; 4])), 0);
    assert_eq!(optimal_pair(&g(vec![0.0, 7.0, 7.0, 1.0])), 1);
}

#[test]
fn clear_link_has_single_free_space_path() {
    let s = street_scene(vec![ms()]);
    let params = ChannelParams::default();
    let paths = propagation_paths(&s, &params).unwrap();
    assert_eq!(paths.len(), 1);
    let (tx, rx) = link_endpoints(&s).unwrap();
    assert!((paths[0].length - (rx - tx).norm()).abs() < 1e-12);
    assert_eq!(paths[0].coeff, 1.0);
    // Unit-norm steering vectors: the Frobenius power equals the free-space path power.
    let arrays = ArrayPair::for_scene(&s, 8, 2).unwrap();
    let h = channel_from_paths(&paths, &arrays, &params);
    let frob: f64 = h.data.iter().map(|c| c.norm_sqr()).sum();
    let amp = params.wavelength / (4.0 * PI * paths[0].length);
    assert!(rel_close(frob, amp * amp, 1e-12));
    let g = Link::new(LinkConfig { n_tx: 8, n_rx: 2, params }).evaluate(&s).unwrap();
    assert!(g.los);
    assert!(rel_close(g.gains.iter().sum::<f64>(), frob, 1e-12));
}

#[test]
fn blocked_link_keeps_only_the_image_path() {
    let s = street_scene(vec![ms(), blocker(), reflector()]);
    let (tx, rx) = link_endpoints(&s).unwrap();
    assert!(!is_los(&s, tx, rx));
    let params = ChannelParams::default();
    let paths = propagation_paths(&s, &params).unwrap();
    assert_eq!(paths.len(), 1, "{paths:?}");
    // Image method: mirror the receiver across the reflector's west face at x = 18.75.
    let image = Vec3::new(2.0 * 18.75 - rx.x, rx.y, rx.z);
    assert!((paths[0].length - (image - tx).norm()).abs() < 1e-9);
    assert_eq!(paths[0].coeff, params.reflection_coeff);
    assert!(paths[0].departure.x > 0.0 && paths[0].arrival.x > 0.0);
    let g = Link::new(LinkConfig { n_tx: 8, n_rx: 2, params }).evaluate(&s).unwrap();
    assert!(!g.los);
    let amp = params.reflection_coeff * params.wavelength / (4.0 * PI * paths[0].length);
    assert!(rel_close(g.gains.iter().sum::<f64>(), amp * amp, 1e-12));
}

#[test]
fn fully_blocked_link_has_no_path() {
    let s = street_scene(vec![ms(), blocker()]);
    let arrays = ArrayPair::for_scene(&s, 8, 2).unwrap();
    assert!(matches!(geometric_channel(&s, &arrays, &ChannelParams::default()), Err(Error::NoPath)));
    assert!(matches!(Link::new(LinkConfig::default()).evaluate(&street_scene(vec![blocker()])), Err(Error::NoMs)));
}

#[test]
fn reflection_legs_are_symmetric_about_the_face() {
    let s = street_scene(vec![ms(), blocker(), reflector()]);
    let p: Path = propagation_paths(&s, &ChannelParams::default()).unwrap()[0];
    // Mirroring the departure across the face plane x = const gives the outgoing leg, i.e. -arrival.
    assert!((p.departure.x - p.arrival.x).abs() < 1e-12);
    assert!((p.departure.y + p.arrival.y).abs() < 1e-12);
    assert!((p.departure.z + p.arrival.z).abs() < 1e-12);
}

#[test]
fn rsu_array_is_broadside_to_the_coverage_center() {
    let cfg = SceneConfig { vehicle_count_range: [4, 8], ..SceneConfig::default() };
    let s = generate_scene(&cfg, 5).unwrap();
    let arrays = ArrayPair::for_scene(&s, 8, 2).unwrap();
    let d = s.coverage.center() - s.rsu_position;
    assert!(Vec3::new(d.x, d.y, 0.0).dot(arrays.tx_axis).abs() < 1e-12);
    assert!(arrays.tx_axis.z == 0.0 && (arrays.tx_axis.norm() - 1.0).abs() < 1e-12);
    assert!((arrays.rx_axis - s.ms().unwrap().heading()).norm() < 1e-15);
}

proptest! {
    #[test]
    fn global_phase_leaves_gains_unchanged(seed in any::<u64>(), phi in 0.0..(2.0 * PI)) {
        let h = random_channel(3, 6, seed);
        let mut hp = h.clone();
        hp.scale(Complex64::from_polar(1.0, phi));
        let (tx, rx) = (dft_codebook(6), dft_codebook(3));
        let a = beam_pair_gains(&h, &tx, &rx).unwrap();
        let b = beam_pair_gains(&hp, &tx, &rx).unwrap();
        for (x, y) in a.gains.iter().zip(&b.gains) {
            prop_assert!((x - y).abs() <= 1e-12 * a.max_gain());
        }
    }

    #[test]
    fn scaling_by_c_scales_gains_by_c_squared(seed in any::<u64>(), re in -3.0..3.0f64, im in -3.0..3.0f64) {
        let c = Complex64::new(re, im);
        prop_assume!(c.norm() > 1e-3);
        let h = random_channel(4, 5, seed);
        let mut hc = h.clone();
        hc.scale(c);
        let (tx, rx) = (dft_codebook(5), dft_codebook(4));
        let a = beam_pair_gains(&h, &tx, &rx).unwrap();
        let b = beam_pair_gains(&hc, &tx, &rx).unwrap();
        for (x, y) in a.gains.iter().zip(&b.gains) {
            prop_assert!((x * c.norm_sqr() - y).abs() <= 1e-12 * b.max_gain());
        }
        prop_assert_eq!(optimal_pair(&a), optimal_pair(&b));
    }

    #[test]
    fn dft_gains_preserve_frobenius_power(seed in any::<u64>(), n_rx in 1usize..6, n_tx in 1usize..12) {
        let h = random_channel(n_rx, n_tx, seed);
        let g = beam_pair_gains(&h, &dft_codebook(n_tx), &dft_codebook(n_rx)).unwrap();
        let frob: f64 = h.data.iter().map(|c| c.norm_sqr()).sum();
        prop_assert!(rel_close(g.gains.iter().sum::<f64>(), frob, 1e-12));
    }

    #[test]
    fn generated_links_are_consistent(seed in 0u64..5_000) {
        let cfg = SceneConfig::default();
        let Ok(s) = generate_scene(&cfg, seed) else { return Ok(()) };
        let link = Link::new(LinkConfig { n_tx: 8, n_rx: 2, params: ChannelParams::default() });
        match link.evaluate(&s) {
            Ok(g) => {
                prop_assert!(g.gains.iter().all(|&v| v >= 0.0 && v.is_finite()));
                prop_assert!(g.max_gain() > 0.0);
                let (tx, rx) = link_endpoints(&s).unwrap();
                prop_assert_eq!(g.los, is_los(&s, tx, rx));
            }
            Err(Error::NoPath) => {
                let (tx, rx) = link_endpoints(&s).unwrap();
                prop_assert!(!is_los(&s, tx, rx));
            }
            Err(e) => prop_assert!(false, "{}", e),
        }
    }
}
