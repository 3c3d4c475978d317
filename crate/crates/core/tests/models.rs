use genrenet_core::models::*;
use genrenet_core::CoreError;
use genrenet_nn::checkpoint::save_checkpoint;
use genrenet_nn::{Mode, NnError, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn image_batch(b: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[b, 3, 224, 224], |_| rng.random_range(0.0..1.0))
}

fn conv(cin: usize, cout: usize, k: usize, bias: bool) -> usize {
    cin * cout * k * k + if bias { cout } else { 0 }
}

fn linear(i: usize, o: usize) -> usize {
    i * o + o
}

/// Trainable parameters of ResNet18 without its classifier, counted from the layer list.
fn backbone_count() -> usize {
    let bn = |c: usize| 2 * c;
    let mut n = conv(3, 64, 7, false) + bn(64);
    let mut cin = 64;
    for (stage, cout) in [64, 128, 256, 512].into_iter().enumerate() {
        for i in 0..2 {
            n += conv(cin, cout, 3, false) + bn(cout) + conv(cout, cout, 3, false) + bn(cout);
            if stage > 0 && i == 0 {
                n += conv(cin, cout, 1, false) + bn(cout);
            }
            cin = cout;
        }
    }
    n
}

#[test]
fn parameter_counts_follow_the_layer_lists() {
    let resnet = build_resnet18(10, 1);
    assert_eq!(resnet.parameter_count(), backbone_count() + linear(512, 10));
    assert_eq!(resnet.parameter_count(), 11_181_642);

    let gru = 2 * 3 * (672 * 256 + 256 * 256);
    let hybrid = build_hybrid(10, ColumnFeatures::Rgb, 1).unwrap();
    let resnet_path = backbone_count() + linear(512, 256) + 2 * 256;
    assert_eq!(hybrid.parameter_count(), resnet_path + gru + linear(512, 256) + linear(512, 10));

    let cnn = conv(3, 32, 3, true) + conv(32, 64, 3, true) + conv(64, 128, 3, true) + linear(128 * 28 * 28, 10);
    assert_eq!(build_cnn_baseline(10, 1).parameter_count(), cnn);
    assert_eq!(build_cnn_baseline(10, 2).parameter_count(), cnn);

    let gray = build_bigru_classifier(10, ColumnFeatures::Gray, 1);
    assert_eq!(gray.parameter_count(), 2 * 3 * (224 * 256 + 256 * 256) + linear(512, 256) + linear(256, 10));
}

#[test]
fn parameter_names_are_unique() {
    for arch in Architecture::ALL {
        let m = build_model(arch, 10, ColumnFeatures::Rgb, 3).unwrap();
        let mut names: Vec<&str> = m.params().iter().map(|p| p.name.as_str()).collect();
        let n = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), n, "{arch}");
    }
}

#[test]
fn resnet_stage_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let backbone = ResNetBackbone::new("resnet", &mut rng);
    let shapes = backbone.stage_shapes(&image_batch(1, 0)).unwrap();
    let sides: Vec<usize> = shapes.iter().map(|s| s[2]).collect();
    assert_eq!(sides, vec![56, 56, 28, 14, 7]);
    let channels: Vec<usize> = shapes.iter().map(|s| s[1]).collect();
    assert_eq!(channels, vec![64, 64, 128, 256, 512]);
}

#[test]
fn zero_input_gives_finite_logits_for_every_architecture() {
    let zeros = Tensor::zeros(&[2, 3, 224, 224]);
    for arch in Architecture::ALL {
        let mut m = build_model(arch, 10, ColumnFeatures::Rgb, 4).unwrap();
        let logits = m.infer(&zeros).unwrap();
        assert_eq!(logits.shape(), &[2, 10], "{arch}");
        assert!(logits.is_finite(), "{arch}");
        let train = m.forward(&zeros, Mode::Train).unwrap();
        assert_eq!(train.shape(), &[2, 10]);
    }
    let m = build_cnn_baseline(10, 0);
    assert!(matches!(m.infer(&Tensor::zeros(&[1, 3, 224, 223])), Err(CoreError::Shape { .. })));
}

#[test]
fn eval_mode_is_deterministic() {
    let x = image_batch(2, 5);
    let mut m = build_hybrid(10, ColumnFeatures::Rgb, 5).unwrap();
    let a = m.forward(&x, Mode::Eval).unwrap();
    let b = m.forward(&x, Mode::Eval).unwrap();
    assert_eq!(a.data(), b.data());
    assert_eq!(m.infer(&x).unwrap().data(), a.data());
}

fn scramble(model: &mut ModelGraph, prefix: &str, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.params_mut().into_iter().filter(|p| p.name.starts_with(prefix)) {
        for v in p.value.data_mut() {
            *v = rng.random_range(-0.1..0.1);
        }
    }
}

#[test]
fn zeroed_gru_head_removes_the_gru_pathway() {
    let x = image_batch(2, 6);
    let mut m = build_hybrid(10, ColumnFeatures::Rgb, 6).unwrap();
    let before = m.infer(&x).unwrap();
    scramble(&mut m, "gru.", 1);
    assert_ne!(m.infer(&x).unwrap().data(), before.data());

    for v in m.param_mut("gru_head.fc.weight").unwrap().value.data_mut() {
        *v = 0.0;
    }
    let ablated = m.infer(&x).unwrap();
    scramble(&mut m, "gru.", 2);
    assert_eq!(m.infer(&x).unwrap().data(), ablated.data());

    // Changing pixels still moves the logits through the ResNet pathway.
    let mut y = x.clone();
    for v in y.data_mut().iter_mut().step_by(7) {
        *v = 1.0 - *v;
    }
    assert_ne!(m.infer(&y).unwrap().data(), ablated.data());
}

#[test]
fn bigru_classifier_matches_hybrid_gru_half() {
    let x = image_batch(2, 7);
    let mut hybrid = build_hybrid(10, ColumnFeatures::Rgb, 8).unwrap();
    let mut bigru = build_bigru_classifier(10, ColumnFeatures::Rgb, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let w: Vec<f32> = (0..256 * 10).map(|_| rng.random_range(-0.1..0.1)).collect();

    let shared: Vec<(String, Tensor<f32>)> =
        hybrid.state().into_iter().filter(|(n, _)| n.starts_with("gru.") || n.starts_with("gru_head.")).collect();
    for (name, t) in shared {
        bigru.param_mut(&name).unwrap().value = t;
    }
    bigru.param_mut("head.fc.weight").unwrap().value = Tensor::from_vec(&[256, 10], w.clone()).unwrap();
    let bias = hybrid.param("head.fc.bias").unwrap().value.clone();
    bigru.param_mut("head.fc.bias").unwrap().value = bias;
    // Head rows 0..256 read the ResNet half, rows 256..512 the GRU half.
    let mut head = vec![0.0f32; 256 * 10];
    head.extend_from_slice(&w);
    hybrid.param_mut("head.fc.weight").unwrap().value = Tensor::from_vec(&[512, 10], head).unwrap();

    let a = hybrid.infer(&x).unwrap();
    let b = bigru.infer(&x).unwrap();
    for (p, q) in a.data().iter().zip(b.data()) {
        assert!((p - q).abs() <= 1e-5 * (1.0 + q.abs()), "{p} vs {q}");
    }
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.ckpt");
    let second = dir.path().join("b.ckpt");
    let m = build_resnet18(10, 11);
    m.save_weights(&first).unwrap();
    let mut other = build_resnet18(10, 12);
    other.load_weights(&first).unwrap();
    other.save_weights(&second).unwrap();
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    for (p, q) in m.params().iter().zip(other.params()) {
        assert_eq!(p.value.data(), q.value.data());
    }

    save_model(&m, &first, vec![("repr".into(), "mel".into())]).unwrap();
    let loaded = load_model(&first).unwrap();
    assert_eq!(loaded.architecture, Architecture::ResNet18);
    assert_eq!(ModelCard::load(&first).unwrap().extra, vec![("repr".to_string(), "mel".to_string())]);
}

fn mismatch_lines(err: CoreError) -> Vec<String> {
    match err {
        CoreError::Nn(NnError::Mismatch(lines)) => lines,
        other => panic!("expected a mismatch, got {other}"),
    }
}

#[test]
fn missing_and_mismatched_tensors_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("partial.ckpt");
    let m = build_resnet18(10, 13);
    let params = m.params();
    save_checkpoint(&path, params.iter().filter(|p| p.name != "resnet.layer2.0.conv1.weight").map(|p| (p.name.as_str(), &p.value)))
        .unwrap();
    let mut target = build_resnet18(10, 14);
    let lines = mismatch_lines(target.load_weights(&path).unwrap_err());
    assert_eq!(lines, vec!["missing tensor resnet.layer2.0.conv1.weight".to_string()]);

    // A 5-class head cannot be loaded into a 10-class model, but the backbone transplants.
    let small = build_resnet18(5, 15);
    small.save_weights(&path).unwrap();
    let lines = mismatch_lines(target.load_weights(&path).unwrap_err());
    assert_eq!(lines.len(), 2);
    assert!(lines.iter().all(|l| l.starts_with("shape mismatch for resnet.fc.")));
    load_external_resnet_weights(&mut target, &path, WeightScope::Backbone).unwrap();
    assert_eq!(target.param("resnet.conv1.weight").unwrap().value.data(), small.param("resnet.conv1.weight").unwrap().value.data());
    let mut hybrid = build_hybrid(10, ColumnFeatures::Rgb, 16).unwrap();
    load_external_resnet_weights(&mut hybrid, &path, WeightScope::Backbone).unwrap();
    assert!(load_external_resnet_weights(&mut build_cnn_baseline(10, 0), &path, WeightScope::Backbone).is_err());
}

#[test]
fn predict_accepts_single_images() {
    let m = build_cnn_baseline(10, 17);
    let x = image_batch(1, 17);
    let single = x.clone().reshape(&[3, 224, 224]).unwrap();
    let (a, ia) = predict(&m, &x).unwrap();
    let (b, ib) = predict(&m, &single).unwrap();
    assert_eq!((a.clone(), ia), (b, ib));
    assert!((a.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert!(predict(&m, &image_batch(2, 0)).is_err());
}

proptest! {
    #[test]
    fn softmax_sums_to_one(logits in prop::collection::vec(-50.0f32..50.0, 10)) {
        let d = GenreDistribution::from_logits(&logits).unwrap();
        prop_assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(d.probs.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn shifting_logits_keeps_the_prediction(logits in prop::collection::vec(-20i32..20, 10), shift in -100i32..100) {
        // Integer-valued logits keep ties exact under the shift.
        let a: Vec<f32> = logits.iter().map(|&v| v as f32).collect();
        let b: Vec<f32> = logits.iter().map(|&v| (v + shift) as f32).collect();
        let da = GenreDistribution::from_logits(&a).unwrap();
        let db = GenreDistribution::from_logits(&b).unwrap();
        prop_assert_eq!(da.argmax(), db.argmax());
        let first_max = (0..10).find(|&i| logits[i] == *logits.iter().max().unwrap()).unwrap();
        prop_assert_eq!(da.argmax(), first_max);
    }
}
