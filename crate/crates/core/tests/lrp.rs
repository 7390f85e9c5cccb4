mod common;

use common::*;
use fpsim::lrp::{
    component_relevance, component_relevance_report, initial_relevance, propagate, propagate_with, BiasRule, LrpConfig,
    LrpError, ReferenceSet, RelevanceInit, RelevanceMap,
};
use fpsim::nn::{Architecture, LayerSpec, Network, ParameterVector, Tensor};
use fpsim::pruning::enumerate_components;

fn dense(input: usize, out: usize, weights: &[f64], bias: &[f64]) -> Network<f64> {
    let arch = Architecture {
        input_shape: vec![input],
        layers: vec![LayerSpec::Dense { out_features: out }],
    };
    let mut net = Network::<f64>::new(&arch).unwrap();
    let mut p = Vec::new();
    for j in 0..out {
        p.extend_from_slice(&weights[j * input..(j + 1) * input]);
        p.push(bias[j]);
    }
    net.set_params(&ParameterVector::new(p)).unwrap();
    net
}

#[test]
fn identity_layer_passes_logits_through() {
    let mut net = dense(2, 2, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]);
    let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
    let logits = net.forward(&x, true).unwrap();
    let rmap = propagate(&net, &logits, 0.0).unwrap();
    assert_eq!(rmap.inputs[0].data(), &[1.0, 2.0]);
}

#[test]
fn relevance_splits_by_contribution() {
    let mut net = dense(2, 1, &[3.0, 1.0], &[0.0]);
    let x = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
    net.forward(&x, true).unwrap();
    let start = Tensor::new(vec![1, 1], vec![4.0]).unwrap();
    let rmap = propagate_with(&net, start, &LrpConfig::with_epsilon(0.0)).unwrap();
    assert_eq!(rmap.inputs[0].data(), &[3.0, 1.0]);
}

#[test]
fn bias_rules_differ_only_in_denominator() {
    let mut net = dense(2, 1, &[3.0, 1.0], &[4.0]);
    let x = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
    let logits = net.forward(&x, true).unwrap();
    assert_eq!(logits.data(), &[8.0]);
    let absorb = propagate_with(&net, logits.clone(), &LrpConfig::with_epsilon(0.0)).unwrap();
    assert_eq!(absorb.inputs[0].data(), &[3.0, 1.0]);
    let cfg = LrpConfig {
        bias_rule: BiasRule::Exclude,
        ..LrpConfig::with_epsilon(0.0)
    };
    let exclude = propagate_with(&net, logits, &cfg).unwrap();
    assert_eq!(exclude.inputs[0].data(), &[6.0, 2.0]);
}

fn max_boundary_error<T: fpsim::Scalar>(rmap: &RelevanceMap<T>, layers: usize) -> f64 {
    let top = rmap.boundary_sums(layers);
    let mut worst = 0.0f64;
    for l in 0..layers {
        for (a, b) in rmap.boundary_sums(l).iter().zip(&top) {
            worst = worst.max(rel_err(*a, *b));
        }
    }
    worst
}

#[test]
fn conservation_without_bias_or_epsilon() {
    let mut r = rng(31);
    for _ in 0..25 {
        let arch = random_arch(&mut r);
        let mut net = random_net::<f64>(&arch, &mut r, true);
        let x = random_input::<f64>(&arch.input_shape, 3, &mut r);
        let logits = net.forward(&x, true).unwrap();
        let rmap = propagate(&net, &logits, 0.0).unwrap();
        let err = max_boundary_error(&rmap, net.layers().len());
        assert!(err < 1e-5, "relative error {err} on {arch:?}");
    }
}

#[test]
fn conservation_holds_in_single_precision_on_default_cnn() {
    let arch = Architecture::default_cnn(&[3, 32, 32], 8);
    let mut r = rng(32);
    let mut net = random_net::<f32>(&arch, &mut r, true);
    let x = random_input::<f32>(&arch.input_shape, 4, &mut r);
    let logits = net.forward(&x, true).unwrap();
    let rmap = propagate(&net, &logits, 0.0).unwrap();
    let top = rmap.boundary_sums(net.layers().len());
    let scale: Vec<f64> = (0..4).map(|b| logits.sample(b).iter().map(|v| v.abs() as f64).sum()).collect();
    for l in 0..net.layers().len() {
        for ((a, b), s) in rmap.boundary_sums(l).iter().zip(&top).zip(&scale) {
            assert!((a - b).abs() <= 1e-5 * s, "boundary {l}: {a} vs {b}");
        }
    }
}

#[test]
fn epsilon_loses_little_relevance() {
    let mut r = rng(33);
    let eps = 1e-4;
    for _ in 0..25 {
        let arch = random_arch(&mut r);
        let mut net = random_net::<f64>(&arch, &mut r, true);
        let x = random_input::<f64>(&arch.input_shape, 1, &mut r);
        let logits = net.forward(&x, true).unwrap();
        let total: f64 = logits.data().iter().sum();
        if total.abs() < 0.1 {
            continue;
        }
        let rmap = propagate(&net, &logits, eps).unwrap();
        let got = rmap.boundary_sums(0)[0];
        let bound = eps * net.layers().len() as f64 * 10.0;
        assert!((got - total).abs() / total.abs() <= bound, "{got} vs {total}");
    }
}

#[test]
fn dead_component_gets_zero_relevance() {
    let mut r = rng(34);
    let arch = Architecture {
        input_shape: vec![2, 6, 6],
        layers: vec![
            LayerSpec::Conv2d { out_channels: 3, kernel: 3, same_padding: true },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { size: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { out_features: 4 },
            LayerSpec::Relu,
            LayerSpec::Dense { out_features: 2 },
        ],
    };
    let mut net = random_net::<f64>(&arch, &mut r, false);
    // Conv channel 1 feeds flattened cells 9..18 of the first dense layer;
    // dense unit 2 feeds column 2 of the classifier.
    let idx = net.parameter_index().clone();
    let mut p = net.params();
    for j in 0..4 {
        let range = idx.channel_range(4, j).unwrap();
        p.values_mut()[range.start + 9..range.start + 18].fill(0.0);
    }
    for j in 0..2 {
        let range = idx.channel_range(6, j).unwrap();
        p.values_mut()[range.start + 2] = 0.0;
    }
    net.set_params(&p).unwrap();
    let components = enumerate_components(&net);
    let x = random_input::<f64>(&arch.input_shape, 5, &mut r);
    let logits = net.forward(&x, true).unwrap();
    let rmap = propagate(&net, &logits, 1e-9).unwrap();
    let scores = component_relevance(&rmap, &net, &components).unwrap();
    let conv1 = components.iter().position(|c| c.layer_index == 0 && c.channel_index == 1).unwrap();
    let dense2 = components.iter().position(|c| c.layer_index == 4 && c.channel_index == 2).unwrap();
    for s in &scores {
        assert_eq!(s[conv1], 0.0);
        assert_eq!(s[dense2], 0.0);
    }
}

#[test]
fn batch_matches_per_sample_propagation() {
    let mut r = rng(35);
    for _ in 0..10 {
        let arch = random_arch(&mut r);
        let mut net = random_net::<f32>(&arch, &mut r, false);
        let x = random_input::<f32>(&arch.input_shape, 4, &mut r);
        let logits = net.forward(&x, true).unwrap();
        let batched = propagate(&net, &logits, 1e-9).unwrap();
        for b in 0..4 {
            let xb = x.slice_batch(b, b + 1);
            let lb = net.forward(&xb, true).unwrap();
            let single = propagate(&net, &lb, 1e-9).unwrap();
            for (l, t) in single.inputs.iter().enumerate() {
                for (u, v) in t.data().iter().zip(batched.inputs[l].sample(b)) {
                    assert!((u - v).abs() <= 1e-6 * (1.0 + v.abs()), "layer {l}: {u} vs {v}");
                }
            }
        }
    }
}

#[test]
fn channel_score_sums_its_cells() {
    let arch = Architecture {
        input_shape: vec![1, 1, 2],
        layers: vec![
            LayerSpec::Conv2d { out_channels: 2, kernel: 1, same_padding: true },
            LayerSpec::Flatten,
            LayerSpec::Dense { out_features: 1 },
        ],
    };
    let net = Network::<f64>::new(&arch).unwrap();
    let components = enumerate_components(&net);
    assert_eq!(components.len(), 2);
    let rmap = RelevanceMap {
        inputs: vec![
            Tensor::zeros(&[1, 1, 1, 2]),
            Tensor::new(vec![1, 2, 1, 2], vec![0.2, 0.3, 0.5, 0.0]).unwrap(),
            Tensor::zeros(&[1, 4]),
        ],
        output: Tensor::zeros(&[1, 1]),
    };
    let scores = component_relevance(&rmap, &net, &components).unwrap();
    assert!((scores[0][0] - 0.5).abs() < 1e-15);
    assert!((scores[0][1] - 0.5).abs() < 1e-15);
}

#[test]
fn component_scores_match_neuron_level_oracle() {
    let mut r = rng(36);
    let arch = Architecture {
        input_shape: vec![3],
        layers: vec![
            LayerSpec::Dense { out_features: 4 },
            LayerSpec::Relu,
            LayerSpec::Dense { out_features: 2 },
        ],
    };
    let mut net = random_net::<f64>(&arch, &mut r, false);
    let x = random_input::<f64>(&[3], 1, &mut r);
    let logits = net.forward(&x, true).unwrap();
    let eps = 1e-3;
    let rmap = propagate(&net, &logits, eps).unwrap();
    let scores = component_relevance(&rmap, &net, &enumerate_components(&net)).unwrap();

    let p = params_f64(&net.params());
    let (l1, l2) = p.split_at(4 * 4);
    let w1: Vec<f64> = l1.chunks(4).flat_map(|c| c[..3].to_vec()).collect();
    let b1: Vec<f64> = l1.chunks(4).map(|c| c[3]).collect();
    let w2: Vec<f64> = l2.chunks(5).flat_map(|c| c[..4].to_vec()).collect();
    let b2: Vec<f64> = l2.chunks(5).map(|c| c[4]).collect();
    let h: Vec<f64> = matvec(&w1, &b1, x.data()).into_iter().map(|v| v.max(0.0)).collect();
    let z = matvec(&w2, &b2, &h);
    for k in 0..4 {
        let mut rk = 0.0;
        for j in 0..2 {
            let d = z[j] + if z[j] >= 0.0 { eps } else { -eps };
            rk += h[k] * w2[j * 4 + k] / d * z[j];
        }
        assert!((scores[0][k] - rk).abs() < 1e-12, "unit {k}: {} vs {rk}", scores[0][k]);
    }
}

fn reference(x: Tensor<f64>, classes: usize) -> ReferenceSet<f64> {
    let m = x.batch();
    ReferenceSet {
        images: x,
        labels: Tensor::new(vec![m, classes], vec![1.0; m * classes]).unwrap(),
    }
}

#[test]
fn report_is_mean_of_sample_scores() {
    let mut r = rng(37);
    let arch = random_arch(&mut r);
    let mut net = random_net::<f64>(&arch, &mut r, false);
    let classes = net.num_classes();
    let x = random_input::<f64>(&arch.input_shape, 2, &mut r);
    let components = enumerate_components(&net);
    let logits = net.forward(&x, true).unwrap();
    let per_sample = component_relevance(&propagate(&net, &logits, 1e-9).unwrap(), &net, &components).unwrap();
    let cfg = LrpConfig::default();

    let one = component_relevance_report(&net, &reference(x.slice_batch(0, 1), classes), &cfg).unwrap();
    assert_eq!(one.sample_count, 1);
    assert_eq!(one.mean_relevance, per_sample[0]);

    let two = component_relevance_report(&net, &reference(x.clone(), classes), &cfg).unwrap();
    for (k, m) in two.mean_relevance.iter().enumerate() {
        let want = (per_sample[0][k] + per_sample[1][k]) / 2.0;
        assert!((m - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }

    let dup = x.gather_batch(&[0, 0]);
    let dup = component_relevance_report(&net, &reference(dup, classes), &cfg).unwrap();
    assert_eq!(dup.mean_relevance, one.mean_relevance);
}

#[test]
fn report_is_deterministic_across_thread_counts() {
    let mut r = rng(38);
    let arch = Architecture::default_cnn(&[3, 32, 32], 8);
    let net = random_net::<f32>(&arch, &mut r, false);
    let x = random_input::<f32>(&arch.input_shape, 40, &mut r);
    let refset = ReferenceSet {
        labels: Tensor::new(vec![40, 8], vec![1.0; 320]).unwrap(),
        images: x,
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| component_relevance_report(&net, &refset, &LrpConfig::default()).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a.components.len(), 8 + 16 + 32);
    assert!(a.mean_relevance.iter().zip(&b.mean_relevance).all(|(x, y)| x.to_bits() == y.to_bits()));
    let mut csv = Vec::new();
    a.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("component_id,layer_index,channel_index,mean_relevance\n"));
    assert_eq!(text.lines().count(), 57);
}

#[test]
fn positive_logit_init_masks_negative_classes() {
    let logits = Tensor::new(vec![1, 3], vec![2.0f64, -1.0, 0.5]).unwrap();
    let labels = Tensor::new(vec![1, 3], vec![1.0, 0.0, 0.0]).unwrap();
    let r = initial_relevance(&logits, Some(&labels), RelevanceInit::PositiveLogits).unwrap();
    assert_eq!(r.data(), &[2.0, 0.0, 0.0]);
    let r = initial_relevance(&logits, None, RelevanceInit::Logits).unwrap();
    assert_eq!(r.data(), logits.data());
}

#[test]
fn errors_are_reported() {
    let net = dense(2, 2, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]);
    let logits = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
    assert!(matches!(propagate(&net, &logits, 0.0), Err(LrpError::MissingCache { layer: 0 })));
    let mut cached = net.clone();
    cached.forward(&Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap(), true).unwrap();
    assert!(matches!(propagate(&cached, &logits, -1e-3), Err(LrpError::NegativeEpsilon(_))));
    let empty = ReferenceSet {
        images: Tensor::zeros(&[0, 2]),
        labels: Tensor::zeros(&[0, 2]),
    };
    assert!(matches!(
        component_relevance_report(&net, &empty, &LrpConfig::default()),
        Err(LrpError::EmptyReferenceSet)
    ));
}
