use proptest::prelude::*;

use kafnet::bounds::{recursion_xyz, stability_epsilon, ParamBounds, StabilityInputs};
use kafnet::data;
use kafnet::grad::check::random_network;
use kafnet::net::{read_network, softmax, write_network, Network};
use kafnet::rng;
use kafnet::train::moving_average;

/// Plain loops over the parameter tables, sharing nothing with the library's forward pass.
fn oracle_logits(net: &Network<f64>, x: &[f64]) -> Vec<f64> {
    let dict = net.dictionary().elements().to_vec();
    let gamma = net.gamma();
    let mut a = x.to_vec();
    for layer in &net.params.hidden {
        let w = &layer.affine.weights;
        let mut next = Vec::new();
        for j in 0..w.rows() {
            let mut g = layer.affine.biases[j];
            for h in 0..w.cols() {
                g += w.get(j, h) * a[h];
            }
            let mut act = 0.0;
            for k in 0..dict.len() {
                act += layer.kaf.mixing.get(j, k) * (-gamma * (g - dict[k]) * (g - dict[k])).exp();
            }
            next.push(act);
        }
        a = next;
    }
    let out = &net.params.output;
    (0..out.weights.rows())
        .map(|j| {
            let mut g = out.biases[j];
            for h in 0..out.weights.cols() {
                g += out.weights.get(j, h) * a[h];
            }
            g
        })
        .collect()
}

fn small_net(seed: u64) -> (Network<f64>, Vec<f64>) {
    use rand::Rng as _;
    let mut r = rng::stream(seed, 0);
    let m = r.random_range(1..=4);
    let q = r.random_range(2..=4);
    let mut widths: Vec<usize> = (0..q - 1).map(|_| r.random_range(1..=6)).collect();
    widths.push(r.random_range(2..=4));
    let d = r.random_range(1..=12);
    let gamma = [0.005, 0.1, 1.0, 4.0][r.random_range(0..4)];
    let net = random_network(&mut r, m, &widths, d.max(2), gamma);
    let x = (0..m).map(|_| r.random_range(-2.0..2.0)).collect();
    (net, x)
}

#[test]
fn forward_matches_scalar_loop_oracle() {
    for seed in 0..200 {
        let (net, x) = small_net(seed);
        let trace = net.forward(&x).unwrap();
        let expect = oracle_logits(&net, &x);
        for (a, b) in trace.logits.iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "seed {seed}: {a} vs {b}");
        }
    }
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 1..10), c in -100.0f64..100.0) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        let shifted: Vec<f64> = logits.iter().map(|v| v + c).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn kernels_and_activations_are_bounded(seed in any::<u64>()) {
        let (net, x) = small_net(seed);
        let trace = net.forward(&x).unwrap();
        let d = net.dictionary().len() as f64;
        let alpha = net
            .params
            .hidden
            .iter()
            .map(|l| l.kaf.mixing.max_abs())
            .fold(0.0, f64::max);
        for h in &trace.hidden {
            prop_assert!(h.kernels.as_slice().iter().all(|&e| e > 0.0 && e <= 1.0));
            prop_assert!(h.activations.iter().all(|a| a.abs() <= d * alpha));
        }
    }

    #[test]
    fn forward_is_deterministic(seed in any::<u64>()) {
        let (net, x) = small_net(seed);
        prop_assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
    }

    #[test]
    fn serialization_round_trips(seed in any::<u64>()) {
        let (net, _) = small_net(seed);
        let mut buf = Vec::new();
        write_network(&net, &mut buf).unwrap();
        let back: Network<f64> = read_network(&buf[..]).unwrap();
        prop_assert_eq!(back, net);
    }

    #[test]
    fn stability_is_monotone(
        l in 0.1f64..10.0,
        beta in 0.1f64..10.0,
        c in 0.001f64..0.5,
        t in 1u64..100_000,
        n in 2u64..100_000,
    ) {
        let base = StabilityInputs { l_const: l, beta_const: beta, c, t_steps: t, n_samples: n };
        let eps = stability_epsilon(&base).unwrap();
        let more_t = stability_epsilon(&StabilityInputs { t_steps: t + 1 + t / 3, ..base }).unwrap();
        let more_l = stability_epsilon(&StabilityInputs { l_const: l * 1.5, ..base }).unwrap();
        let more_n = stability_epsilon(&StabilityInputs { n_samples: n + 1 + n / 3, ..base }).unwrap();
        prop_assert!(more_t > eps);
        prop_assert!(more_l > eps);
        prop_assert!(more_n < eps);
    }

    #[test]
    fn first_layer_second_derivative_bound_is_zero(a in 0.0f64..5.0, w in 0.0f64..3.0, gamma in 0.001f64..5.0) {
        let pb = ParamBounds {
            a, w_max: w, b_max: 1.0, alpha_max: 1.0, r: 3.0, gamma, m: 3, widths: vec![4, 4, 2], d: 5,
        };
        let rep = recursion_xyz(&pb);
        prop_assert_eq!(rep.z_per_layer[0], 0.0);
        prop_assert_eq!(rep.x_per_layer[0], 3.0 * w * a + 1.0);
    }

    #[test]
    fn classes_are_balanced(half in 2usize..200, seed in any::<u64>()) {
        let ds: data::Dataset<f64> = data::generate(2 * half, seed, 1.0, 1.0).unwrap();
        prop_assert_eq!(ds.class_counts(2), vec![half, half]);
    }

    #[test]
    fn moving_average_stays_within_range(v in prop::collection::vec(0.0f64..10.0, 1..200), w in 1usize..40) {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for m in moving_average(&v, w) {
            prop_assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
        }
    }
}

#[test]
fn noise_features_are_uncorrelated_with_labels() {
    let ds: data::Dataset<f64> = data::generate(1000, 2024, 1.0, 1.0).unwrap();
    let labels: Vec<f64> = ds.labels.iter().map(|&y| y as f64).collect();
    for col in data::INFORMATIVE_DIMS..ds.dim() {
        let xs: Vec<f64> = ds.features.iter().map(|r| r[col]).collect();
        let r = correlation(&xs, &labels);
        assert!(r.abs() < 0.1, "column {col}: {r}");
    }
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// `Y_Q` grows like `H^(4(Q-1))` when every width and the dictionary size equal `H`.
#[test]
fn y_bound_scales_with_width_like_its_order() {
    for q in 2..=4usize {
        for gamma in [0.01, 0.1, 1.0] {
            let y_q = |h: usize| {
                let mut widths = vec![h; q - 1];
                widths.push(2);
                let pb = ParamBounds {
                    a: 1.0, w_max: 1.0, b_max: 1.0, alpha_max: 1.0, r: 3.0, gamma, m: 4, widths, d: h,
                };
                *recursion_xyz(&pb).y_per_layer.last().unwrap()
            };
            let factor = 2f64.powi(4 * (q as i32 - 1) + 1);
            let c = (y_q(32) / (factor * y_q(16))).max(1.0);
            let mut h = 16;
            while h <= 512 {
                let (small, large) = (y_q(h), y_q(2 * h));
                assert!(large.is_finite());
                assert!(large <= c * factor * small, "Q={q} gamma={gamma} H={h}: {large} vs {small}");
                h *= 2;
            }
        }
    }
}

#[test]
fn f32_and_f64_forward_agree() {
    for seed in 0..20 {
        let (net, x) = small_net(seed);
        let net32: Network<f32> = net.cast();
        let x32: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let p64 = net.forward(&x).unwrap().probs;
        let p32 = net32.forward(&x32).unwrap().probs;
        for (a, b) in p64.iter().zip(p32) {
            assert!((a - b as f64).abs() < 1e-4, "seed {seed}: {a} vs {b}");
        }
    }
}
