//! Property checks of the numeric core: gradient correctness, integrator
//! order, spectrum invariance under scaling, normalization round trips,
//! slice statistics, dataset determinism, and spectral content of the
//! simulated trajectories.

use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gridfuse_core::eig::eig_dense;
use gridfuse_core::fusion::{global_rollout, Frame, GlobalModel, Provenance};
use gridfuse_core::grid::dataset::{generate_dataset, DatasetConfig};
use gridfuse_core::grid::io::save_dataset;
use gridfuse_core::grid::linearize::truth_global;
use gridfuse_core::grid::powerflow::newton_power_flow;
use gridfuse_core::grid::two_machine_three_bus;
use gridfuse_core::nn::{loss_and_grads, HeadInit, Mlp, ParamStore};
use gridfuse_core::tensor::Tensor;
use gridfuse_core::train::normalize::ChannelStats;
use gridfuse_core::train::{SliceStream, SliceTable};

// --- gradient versus central finite differences -------------------------

fn mlp_loss(store: &ParamStore, mlp: &Mlp, input: &[f64]) -> f64 {
    let (value, _) = loss_and_grads(store, |sess| {
        let x = sess
            .tape
            .leaf(Tensor::new(vec![input.len()], input.to_vec()));
        let out = mlp.forward(sess, x);
        Ok(sess.tape.sq_sum(out))
    })
    .unwrap();
    value
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn mlp_gradients_match_finite_differences(
        seed in 0u64..1000,
        input in prop::collection::vec(-1.5f64..1.5, 3),
    ) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = Mlp::new(&mut store, "p", &[3, 8, 4], HeadInit::Random, &mut rng);
        let (_, grads) = loss_and_grads(&store, |sess| {
            let x = sess.tape.leaf(Tensor::new(vec![3], input.clone()));
            let out = mlp.forward(sess, x);
            Ok(sess.tape.sq_sum(out))
        })
        .unwrap();
        let h = 1e-6;
        for (pi, g) in grads.iter().enumerate() {
            for k in 0..g.data().len() {
                let mut plus = store.clone();
                plus.tensors_mut()[pi].data_mut()[k] += h;
                let mut minus = store.clone();
                minus.tensors_mut()[pi].data_mut()[k] -= h;
                let fd = (mlp_loss(&plus, &mlp, &input) - mlp_loss(&minus, &mlp, &input)) / (2.0 * h);
                let ad = g.data()[k];
                let denom = fd.abs().max(ad.abs()).max(1e-6);
                prop_assert!(
                    (fd - ad).abs() / denom <= 1e-4,
                    "param {pi} entry {k}: ad {ad} vs fd {fd}"
                );
            }
        }
    }
}

// --- midpoint integrator is second order --------------------------------

fn rollout_endpoint_error(a: &Tensor, x0: &Tensor, t_end: f64, steps: usize) -> f64 {
    let g = GlobalModel {
        a_sys: a.clone(),
        b_sys: Tensor::new(vec![x0.data().len()], vec![0.0; x0.data().len()]),
        frame: Frame::Physical,
        provenance: Provenance::Truth,
    };
    let dt = t_end / steps as f64;
    let states = global_rollout(&g, x0, steps, dt).unwrap();
    // Harmonic oscillator x'' = -w^2 x, exact solution known in closed form.
    let w = 2.0;
    let exact = [
        x0.data()[0] * (w * t_end).cos(),
        -w * x0.data()[0] * (w * t_end).sin(),
    ];
    let got = states.last().unwrap();
    ((got.data()[0] - exact[0]).powi(2) + (got.data()[1] - exact[1]).powi(2)).sqrt()
}

#[test]
fn midpoint_halving_dt_quarters_the_error() {
    let a = Tensor::new(vec![2, 2], vec![0.0, 1.0, -4.0, 0.0]);
    let x0 = Tensor::new(vec![2], vec![1.0, 0.0]);
    for steps in [50usize, 100, 200] {
        let coarse = rollout_endpoint_error(&a, &x0, 1.5, steps);
        let fine = rollout_endpoint_error(&a, &x0, 1.5, steps * 2);
        let ratio = coarse / fine;
        assert!(
            (3.5..=4.5).contains(&ratio),
            "steps {steps}: error ratio {ratio} outside [3.5, 4.5]"
        );
    }
}

// --- diagonal similarity preserves the spectrum -------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn diagonal_similarity_preserves_spectrum(
        a in prop::collection::vec(-2.0f64..2.0, 16),
        s in prop::collection::vec(0.1f64..10.0, 4),
    ) {
        let n = 4;
        let orig = Tensor::new(vec![n, n], a.clone());
        let mut scaled = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                scaled[i * n + j] = s[i] * a[i * n + j] / s[j];
            }
        }
        let scaled = Tensor::new(vec![n, n], scaled);
        let mut e1 = eig_dense(&orig).unwrap();
        let mut e2 = eig_dense(&scaled).unwrap();
        let key = |z: &Complex64| (z.re, z.im);
        e1.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
        e2.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
        for (l1, l2) in e1.iter().zip(&e2) {
            prop_assert!((l1 - l2).norm() <= 1e-8, "{l1} vs {l2}");
        }
    }

    // --- normalization round trip ---------------------------------------

    #[test]
    fn normalize_round_trip_is_exact(
        mu in prop::collection::vec(-5.0f64..5.0, 6),
        s in prop::collection::vec(1e-3f64..100.0, 6),
        v in prop::collection::vec(-10.0f64..10.0, 6),
    ) {
        let stats = ChannelStats { mu, s, floored: Vec::new() };
        let orig = Tensor::new(vec![6], v);
        let back = stats.denormalize_vec(&stats.normalize_vec(&orig));
        for (x, y) in orig.data().iter().zip(back.data()) {
            prop_assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
        }
    }

    // --- slice window frequencies match the table -----------------------

    #[test]
    fn slice_window_frequencies_match_weights(seed in 0u64..200) {
        let table = SliceTable::default();
        let mut stream = SliceStream::new(seed, (0..10).collect(), 1000, 0, &table).unwrap();
        let n = 20_000usize;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..n {
            *counts.entry(stream.draw().len).or_insert(0usize) += 1;
        }
        for &(len, weight) in &table.entries {
            let freq = *counts.get(&len).unwrap_or(&0) as f64 / n as f64;
            prop_assert!(
                (freq - weight).abs() <= 0.02,
                "len {len}: drawn {freq}, expected {weight}"
            );
        }
    }
}

// --- dataset generation is byte-deterministic ---------------------------

#[test]
fn dataset_files_are_byte_identical_across_runs() {
    let grid = two_machine_three_bus();
    let cfg = DatasetConfig {
        n_samples: 3,
        steps: 120,
        ..DatasetConfig::benchmark("two-machine-three-bus", 3, 42)
    };
    let dump = || {
        let ds = generate_dataset(&grid, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let mut files: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        files
            .iter()
            .map(|p| (p.file_name().unwrap().to_owned(), std::fs::read(p).unwrap()))
            .collect::<Vec<_>>()
    };
    let a = dump();
    let b = dump();
    assert!(!a.is_empty());
    assert_eq!(a, b, "dataset artifacts differ between identical configs");
}

// --- spectral peak of the angle swing matches the eigenvalue ------------

#[test]
fn trajectory_spectrum_peaks_at_the_oscillatory_mode() {
    let grid = two_machine_three_bus();
    let op = grid.nominal_op();
    let eq = newton_power_flow(&grid, &op).unwrap();
    let truth = truth_global(&grid, &eq).unwrap();
    let f_mode = eig_dense(&truth.a_sys)
        .unwrap()
        .iter()
        .map(|l| l.im.abs() / (2.0 * std::f64::consts::PI))
        .fold(0.0f64, f64::max);
    assert!(
        f_mode > 0.05,
        "expected an oscillatory mode, got {f_mode} Hz"
    );

    let dt = 0.01;
    let steps = 16_384;
    let x0 = Tensor::new(vec![4], vec![0.02, 0.0, -0.02, 0.0]);
    let states = global_rollout(&truth, &x0, steps, dt).unwrap();
    // Relative rotor angle isolates the swing mode.
    let signal: Vec<f64> = states.iter().map(|x| x.data()[0] - x.data()[2]).collect();
    let n = signal.len();
    // Hann-windowed direct DFT over a fine frequency grid up to 2 Hz.
    let mut best = (0.0f64, 0.0f64);
    let mut f = 0.01;
    while f < 2.0 {
        let (mut re, mut im) = (0.0, 0.0);
        for (k, &x) in signal.iter().enumerate() {
            let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos();
            let ph = 2.0 * std::f64::consts::PI * f * k as f64 * dt;
            re += w * x * ph.cos();
            im -= w * x * ph.sin();
        }
        let mag = (re * re + im * im).sqrt();
        if mag > best.1 {
            best = (f, mag);
        }
        f += 0.001;
    }
    let rel = (best.0 - f_mode).abs() / f_mode;
    assert!(
        rel <= 0.02,
        "spectral peak {:.4} Hz vs mode {:.4} Hz ({:.2}% off)",
        best.0,
        f_mode,
        100.0 * rel
    );
}
