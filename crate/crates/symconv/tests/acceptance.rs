//! Acceptance suite: one test per criterion, each printing a PASS line
//! (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! Criteria 6 and 7 train on the MNIST IDX files under `data/mnist/` at the
//! workspace root (override with SYMCONV_MNIST_DIR); run
//! `scripts/fetch_mnist.sh` first if the directory is empty.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::path::PathBuf;
use symconv::conv::{
    build_toeplitz, cross_correlate, symmetric_forward_counted, ConvGeometry,
};
use symconv::data::{generate_synthetic, load_idx, prepare_splits, stratified_subset};
use symconv::fir::{spectral_phase_report, SpectralVerdict};
use symconv::harness::{run_matrix, train_run, TrainingConfig};
use symconv::matrix::Matrix;
use symconv::network::{
    count_network_parameters, finite_difference_check, gradcheck_inputs, reduced_network,
    Condition, Layer, Network,
};
use symconv::stats::wilcoxon_rank_sum;
use symconv::symmetry::{
    build_orbit_map, count_parameters, expand, expand_with, random_kernel, SymmetryClass, T2bMode,
};

fn mnist_dir() -> PathBuf {
    if let Ok(dir) = std::env::var("SYMCONV_MNIST_DIR") {
        return PathBuf::from(dir);
    }
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

fn load_mnist() -> (symconv::data::RawDataset, symconv::data::RawDataset) {
    let dir = mnist_dir();
    let train = load_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    );
    let test = load_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    );
    match (train, test) {
        (Ok(tr), Ok(te)) => (tr, te),
        (e1, e2) => panic!(
            "MNIST files not usable under {} (set SYMCONV_MNIST_DIR or run scripts/fetch_mnist.sh): {:?} / {:?}",
            mnist_dir().display(),
            e1.err(),
            e2.err()
        ),
    }
}

#[test]
fn criterion_1_parameter_counts() {
    assert_eq!(
        count_network_parameters(Condition::parse("L-R-R").unwrap()).features,
        1375
    );
    assert_eq!(
        count_network_parameters(Condition::parse("L-T2B-T2B").unwrap()).features,
        660
    );
    assert_eq!(
        count_network_parameters(Condition::parse("L-T1-T1").unwrap()).features,
        330
    );
    assert_eq!(count_parameters(SymmetryClass::R, 5).unwrap(), 25);
    assert_eq!(count_parameters(SymmetryClass::T1, 5).unwrap(), 6);
    assert_eq!(count_parameters(SymmetryClass::T2A, 5).unwrap(), 13);
    assert_eq!(count_parameters(SymmetryClass::T2B, 5).unwrap(), 12);
    println!(
        "criterion 1: PASS — feature params 1375/660/330, per-kernel 25/6/13/12"
    );
}

#[test]
fn criterion_2_forward_path_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut done = 0usize;
    let mut worst = 0.0f64;
    while done < 200 {
        let k = [3usize, 5, 7][rng.random_range(0..3)];
        let s = 1 + rng.random_range(0..2usize);
        let n = rng.random_range(k..=16usize);
        let p = rng.random_range(0..=2usize);
        let Ok(geom) = ConvGeometry::new(n, k, p, s) else { continue };
        let img = Matrix::from_vec(
            n,
            n,
            (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        let class = SymmetryClass::ALL[rng.random_range(0..4)];
        let kern = random_kernel(class, k, 1.0, &mut rng).unwrap();
        let full = expand(&kern).unwrap();

        let direct = cross_correlate(&img, &full, &geom).unwrap();
        let toe = build_toeplitz(&full, &geom).unwrap().apply(&img).unwrap();
        let (sym, _) = symmetric_forward_counted(&img, &kern, &geom).unwrap();

        let norm = direct.frobenius_norm().max(1e-30);
        let d1 = direct.max_abs_diff(&toe) / norm;
        let d2 = direct.max_abs_diff(&sym) / norm;
        worst = worst.max(d1).max(d2);
        assert!(d1 < 1e-12, "toeplitz diverged: {d1}");
        assert!(d2 < 1e-12, "symmetric path diverged: {d2}");
        done += 1;
    }
    println!("criterion 2: PASS — 200 instances, max relative deviation {worst:.3e}");
}

#[test]
fn criterion_3_gradient_correctness() {
    let mut worst_overall = 0.0f64;
    for name in ["L-R-R", "L-T1-T1", "L-T2A-T2A", "L-T2B-T2B"] {
        let cond = Condition::parse(name).unwrap();
        let net = reduced_network(cond.layer1, cond.layer2, T2bMode::Consistent, 17).unwrap();
        let (images, targets) = gradcheck_inputs(2, 15, 3, 18);
        let report = finite_difference_check(&net, &images, &targets, 1e-6, 1e-5).unwrap();
        assert!(
            report.passed,
            "{name}: max rel err {} at {} over {} params",
            report.max_rel_error, report.worst, report.checked
        );
        worst_overall = worst_overall.max(report.max_rel_error);
    }
    println!(
        "criterion 3: PASS — finite differences within 1e-5 (worst {worst_overall:.3e}) for L-R-R, L-T1-T1, L-T2A-T2A, L-T2B-T2B(consistent)"
    );
}

#[test]
fn criterion_4_symmetry_preserved_after_1000_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(4001);
    let normal = Normal::new(0.0, 1.0).unwrap();
    for (name, mode) in [
        ("L-T1-T1", T2bMode::Literal),
        ("L-T2A-T2A", T2bMode::Literal),
        ("L-T2B-T2B", T2bMode::Literal),
        ("L-T2B-T2B", T2bMode::Consistent),
        ("L-T2B-R", T2bMode::Literal),
    ] {
        let cond = Condition::parse(name).unwrap();
        let mut net = Network::digit_classifier(cond, mode, 4002).unwrap();
        for step in 0..1000 {
            let img = Matrix::from_vec(
                29,
                29,
                (0..29 * 29).map(|_| normal.sample(&mut rng)).collect(),
            );
            let cache = net.forward(&img).unwrap();
            let grads = net.backward(&cache, step % 10).unwrap();
            net.sgd_step(&grads, 0.001, 1.0);
        }
        for layer in &net.layers {
            let Layer::Conv(c) = layer else { continue };
            let map = build_orbit_map(c.class, c.kernel_size).unwrap();
            let n = c.kernel_size;
            for kern in &c.kernels {
                let w = expand_with(kern, &map).unwrap();
                match c.class {
                    SymmetryClass::R => {}
                    SymmetryClass::T1 => {
                        for i in 0..n {
                            for j in 0..n {
                                assert_eq!(w[(i, j)], w[(n - 1 - i, j)], "{name}");
                                assert_eq!(w[(i, j)], w[(i, n - 1 - j)], "{name}");
                                assert_eq!(w[(i, j)], w[(j, i)], "{name}");
                            }
                        }
                    }
                    SymmetryClass::T2A => {
                        for i in 0..n {
                            for j in 0..n {
                                assert_eq!(w[(i, j)], w[(n - 1 - i, n - 1 - j)], "{name}");
                            }
                        }
                    }
                    SymmetryClass::T2B => {
                        assert_eq!(w[(n / 2, n / 2)], 0.0, "{name} center");
                        for i in 0..n {
                            for j in 0..n {
                                assert_eq!(w[(i, j)], -w[(n - 1 - i, n - 1 - j)], "{name}");
                            }
                        }
                    }
                }
            }
        }
    }
    println!(
        "criterion 4: PASS — exact symmetry equalities after 1000 SGD steps (T1/T2A/T2B, both T2B modes)"
    );
}

#[test]
fn criterion_5_linear_phase_of_trained_kernels() {
    // short training runs on the synthetic set, then spectral classification
    let train = generate_synthetic(60, 5001);
    let test = generate_synthetic(12, 5002);
    let data = prepare_splits(&train, &test, 0.9, 5003).unwrap();
    let cfg = TrainingConfig { epochs: 2, lr: 0.001, ..TrainingConfig::default() };
    let mut worst = 0.0f64;
    for name in ["L-T1-T1", "L-T2A-T2A", "L-T2B-T2B"] {
        let cond = Condition::parse(name).unwrap();
        let (_, net) = train_run(cond, &data, &cfg, 5004).unwrap();
        // kernels must have actually moved
        let fresh = Network::digit_classifier(cond, cfg.t2b_mode, 5004).unwrap();
        assert_ne!(
            fresh.layers.iter().find_map(|l| match l {
                Layer::Conv(c) => Some(c.kernels.clone()),
                _ => None,
            }),
            net.layers.iter().find_map(|l| match l {
                Layer::Conv(c) => Some(c.kernels.clone()),
                _ => None,
            }),
            "{name}: training left kernels untouched"
        );
        for layer in &net.layers {
            let Layer::Conv(c) = layer else { continue };
            for kern in &c.kernels {
                let w = expand(kern).unwrap();
                let report = spectral_phase_report(&w).unwrap();
                let expected = match c.class {
                    SymmetryClass::T1 | SymmetryClass::T2A => SpectralVerdict::SymmetricReal,
                    SymmetryClass::T2B => SpectralVerdict::AntisymmetricImaginary,
                    SymmetryClass::R => continue,
                };
                assert_eq!(report.verdict, expected, "{name} {:?}", c.class);
                assert!(
                    report.deviation <= 1e-9,
                    "{name} {:?}: deviation {}",
                    c.class,
                    report.deviation
                );
                worst = worst.max(report.deviation);
            }
        }
    }
    println!(
        "criterion 5: PASS — trained T1/T2A kernels purely real, T2B purely imaginary (max deviation {worst:.3e})"
    );
}

#[test]
fn criterion_6_full_mnist_accuracy() {
    let (train, test) = load_mnist();
    let data = prepare_splits(&train, &test, 0.9, 90).unwrap();
    let cfg = TrainingConfig::default(); // lr 0.001, 5 epochs, per-example
    let conds = [
        Condition::parse("L-R-R").unwrap(),
        Condition::parse("L-T2A-R").unwrap(),
    ];
    let grouped = run_matrix(&conds, &data, &cfg, 42, 1).unwrap();
    let acc_rr = grouped[0].1[0].test.acc;
    let acc_t2ar = grouped[1].1[0].test.acc;
    assert!(
        acc_rr >= 97.0,
        "L-R-R reached only {acc_rr:.2}% (need >= 97.0)"
    );
    assert!(
        (acc_rr - acc_t2ar).abs() <= 1.0,
        "L-T2A-R at {acc_t2ar:.2}% is more than 1 point from L-R-R at {acc_rr:.2}%"
    );
    println!(
        "criterion 6: PASS — full MNIST, 5 epochs: L-R-R {acc_rr:.2}%, L-T2A-R {acc_t2ar:.2}% (gap {:.2})",
        (acc_rr - acc_t2ar).abs()
    );
}

#[test]
fn criterion_7_subset_benchmark_learned_vs_fixed() {
    let (train, test) = load_mnist();
    let train = stratified_subset(&train, 600, 0xd15c);
    let test = stratified_subset(&test, 100, 0xd15d);
    assert_eq!(train.len(), 6000);
    assert_eq!(test.len(), 1000);
    let data = prepare_splits(&train, &test, 0.9, 90).unwrap();
    let cfg = TrainingConfig::default();
    let conditions = Condition::all();
    let grouped = run_matrix(&conditions, &data, &cfg, 42, 1).unwrap();

    let acc_of = |name: &str| -> f64 {
        grouped
            .iter()
            .find(|(c, _)| c.to_string() == name)
            .map(|(_, rs)| rs[0].test.acc)
            .expect("condition present")
    };

    for (cond, runs) in &grouped {
        if cond.mode == symconv::network::Mode::Learned {
            let acc = runs[0].test.acc;
            assert!(acc >= 90.0, "{cond} reached only {acc:.2}% (need >= 90)");
        }
    }
    for pair in ["R-R", "T1-T1", "T2A-T2A", "T2B-T2B", "T1-R", "T2A-R", "T2B-R"] {
        let l = acc_of(&format!("L-{pair}"));
        let f = acc_of(&format!("F-{pair}"));
        assert!(
            f < l,
            "F-{pair} at {f:.2}% did not underperform L-{pair} at {l:.2}%"
        );
    }
    let summary: Vec<String> = grouped
        .iter()
        .map(|(c, rs)| format!("{c} {:.1}", rs[0].test.acc))
        .collect();
    println!(
        "criterion 7: PASS — 6000/1000 subset, all learned >= 90%, F < L per pair [{}]",
        summary.join(", ")
    );
}

/// Enumeration oracle over all C(n+m, n) rank assignments.
fn exact_p_by_enumeration(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut pooled: Vec<(f64, usize)> = a
        .iter()
        .map(|&v| (v, 0usize))
        .chain(b.iter().map(|&v| (v, 1usize)))
        .collect();
    pooled.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    // doubled mid-ranks stay integral
    let total = pooled.len();
    let mut ranks2 = vec![0i64; total];
    let mut i = 0;
    while i < total {
        let mut j = i + 1;
        while j < total && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        for r in ranks2.iter_mut().take(j).skip(i) {
            *r = (i + 1 + j) as i64;
        }
        i = j;
    }
    let w_obs: i64 = pooled
        .iter()
        .zip(&ranks2)
        .filter(|((_, g), _)| *g == 0)
        .map(|(_, &r)| r)
        .sum();
    let mut count_le = 0u64;
    let mut count_ge = 0u64;
    let mut count_all = 0u64;
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let w: i64 = idx.iter().map(|&i| ranks2[i]).sum();
        count_all += 1;
        if w <= w_obs {
            count_le += 1;
        }
        if w >= w_obs {
            count_ge += 1;
        }
        let mut i = n;
        loop {
            if i == 0 {
                return (2.0 * count_le.min(count_ge) as f64 / count_all as f64).min(1.0);
            }
            i -= 1;
            if idx[i] != i + total - n {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..n {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[test]
fn criterion_8_rank_sum_validity() {
    // extreme separation: p = 2/252
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [6.0, 7.0, 8.0, 9.0, 10.0];
    let t = wilcoxon_rank_sum(&a, &b).unwrap();
    assert!((t.p_value - 2.0 / 252.0).abs() < 1e-15, "p = {}", t.p_value);

    // exact test vs enumeration for all n, m <= 6 across 500 random samples
    let mut rng = ChaCha8Rng::seed_from_u64(8001);
    let mut checked = 0;
    while checked < 500 {
        let n = rng.random_range(3..=6usize);
        let m = rng.random_range(3..=6usize);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..10) as f64).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(0..10) as f64).collect();
        let t = wilcoxon_rank_sum(&a, &b).unwrap();
        if t.degenerate {
            continue;
        }
        let oracle = exact_p_by_enumeration(&a, &b);
        assert!(
            (t.p_value - oracle).abs() < 1e-12,
            "{a:?} vs {b:?}: {} != {oracle}",
            t.p_value
        );
        checked += 1;
    }

    // same-distribution rejection rate at the 5% level
    let mut rejections = 0;
    for _ in 0..1000 {
        let a: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
        if wilcoxon_rank_sum(&a, &b).unwrap().p_value < 0.05 {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / 1000.0;
    assert!(
        (0.03..=0.07).contains(&rate),
        "rejection rate {rate} outside 5% +/- 2%"
    );
    println!(
        "criterion 8: PASS — p=2/252 on extreme split, 500 enumeration matches, rejection rate {:.1}%",
        100.0 * rate
    );
}

#[test]
fn criterion_9_multiply_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(9001);
    let img = Matrix::from_vec(
        13,
        13,
        (0..169).map(|_| rng.random_range(-1.0..1.0)).collect(),
    );
    let geom = ConvGeometry::new(13, 5, 0, 2).unwrap();
    let pixels = (geom.out_dim() * geom.out_dim()) as u64;
    let mut seen = Vec::new();
    for (class, expected) in [
        (SymmetryClass::T1, 6u64),
        (SymmetryClass::T2A, 13),
        (SymmetryClass::T2B, 12),
        (SymmetryClass::R, 25),
    ] {
        let kern = random_kernel(class, 5, 1.0, &mut rng).unwrap();
        let (_, muls) = symmetric_forward_counted(&img, &kern, &geom).unwrap();
        assert_eq!(muls, expected * pixels, "{class}: {muls} multiplies");
        seen.push(format!("{class}={expected}"));
    }
    println!(
        "criterion 9: PASS — multiplications per output pixel: {}",
        seen.join(" ")
    );
}
