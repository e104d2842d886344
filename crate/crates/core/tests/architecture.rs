use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenefuse_core::nn::{predict_proba, Context, LayerSpec, Tensor};
use scenefuse_core::zoo::{build_mlp, build_vgg14, read_checkpoint, write_checkpoint, Family, Normalization};
use scenefuse_core::Error;

const TABLE1_OUTPUTS: [&[usize]; 14] = [
    &[128, 128, 64],
    &[64, 64, 64],
    &[64, 64, 128],
    &[32, 32, 128],
    &[32, 32, 256],
    &[32, 32, 256],
    &[32, 32, 256],
    &[16, 16, 256],
    &[16, 16, 512],
    &[16, 16, 512],
    &[16, 16, 512],
    &[512],
    &[1024],
    &[10],
];

#[test]
fn full_vgg14_rows_match_table() {
    let spec = build_vgg14(&[128, 128, 6], 10, 1.0).unwrap();
    let outs = spec.row_outputs().unwrap();
    assert_eq!(outs.len(), TABLE1_OUTPUTS.len());
    for (got, want) in outs.iter().zip(TABLE1_OUTPUTS) {
        assert_eq!(got.as_slice(), want);
    }
    assert_eq!(spec.weight_layer_count(), 14);
    let convs = spec.layers().iter().filter(|l| matches!(l, LayerSpec::Conv { .. })).count();
    assert_eq!(convs, 12);
}

#[test]
fn full_vgg14_parameter_count() {
    // per block: BN over the input channels, 3x3 conv with bias, BN over the outputs
    let widths = [6, 64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512, 512];
    let mut oracle = 0;
    for w in widths.windows(2) {
        let (cin, cout) = (w[0], w[1]);
        oracle += 2 * cin + 9 * cin * cout + cout + 2 * cout;
    }
    oracle += 512 * 1024 + 1024 + 1024 * 10 + 10;
    assert_eq!(oracle, 11_135_254);

    let net = build_vgg14(&[128, 128, 6], 10, 1.0).unwrap().build::<f32>(0).unwrap();
    assert_eq!(net.trainable_count(), oracle);
}

#[test]
fn full_vgg14_forward_shapes() {
    let spec = build_vgg14(&[128, 128, 6], 10, 1.0).unwrap();
    let mut net = spec.build::<f32>(1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::from_vec(&[1, 128, 128, 6], (0..128 * 128 * 6).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .unwrap();
    let trace = net.forward_trace(&x, &mut Context::eval()).unwrap();
    let mut end = 0;
    for (row, want) in spec.rows.iter().zip(TABLE1_OUTPUTS) {
        end += row.len();
        assert_eq!(&trace[end - 1].dims()[1..], want);
    }
    let probs = trace.last().unwrap().data();
    let sum: f32 = probs.iter().sum();
    assert!((sum - 1.0).abs() < 1e-5);
}

#[test]
fn scaled_shape_flow_matches_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (dims, scale) in [([32, 32, 6], 0.125), ([16, 16, 3], 0.25), ([24, 24, 2], 0.5)] {
        let spec = build_vgg14(&dims, 10, scale).unwrap();
        let flow = scenefuse_core::nn::shape_flow(&spec.input_dims, &spec.layers()).unwrap();
        let mut net = spec.build::<f32>(4).unwrap();
        let mut input_dims = vec![2];
        input_dims.extend(dims);
        let len = input_dims.iter().product();
        let x = Tensor::from_vec(&input_dims, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let trace = net.forward_trace(&x, &mut Context::eval()).unwrap();
        for (t, f) in trace.iter().zip(&flow) {
            assert_eq!(&t.dims()[1..], f.as_slice());
        }
    }
}

#[test]
fn mlp_rows_match_table() {
    let spec = build_mlp(2048, 10, 1.0).unwrap();
    let widths: Vec<usize> = spec.row_outputs().unwrap().into_iter().map(|d| d[0]).collect();
    assert_eq!(widths, vec![8192, 8192, 1024, 10]);
    assert_eq!(spec.weight_layer_count(), 4);
    for row in &spec.rows[..3] {
        assert_eq!(row[2], LayerSpec::Dropout { rate: 0.40 });
    }
    assert!(build_mlp(1024, 10, 1.0).is_ok());
    assert!(build_mlp(4096, 10, 1.0).is_ok());
}

#[test]
fn checkpoint_round_trip_predicts_identically() {
    let arch = build_vgg14(&[32, 32, 6], 10, 0.125).unwrap();
    let mut net = arch.build::<f32>(5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // perturb the running statistics so they are exercised too
    for p in net.params_mut() {
        for v in p.value.data_mut() {
            *v += rng.gen_range(0.0..0.1);
        }
    }
    let norm = Normalization::identity(6);
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &arch, &net, &norm).unwrap();
    let mut loaded = read_checkpoint(buf.as_slice()).unwrap();
    loaded.require(Family::Vgg14).unwrap();

    let x = Tensor::from_vec(&[5, 32, 32, 6], (0..5 * 32 * 32 * 6).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .unwrap();
    let a = predict_proba(&mut net, &x, 5).unwrap();
    let b = predict_proba(&mut loaded.network, &x, 5).unwrap();
    assert_eq!(a, b);

    let mut again = Vec::new();
    write_checkpoint(&mut again, &loaded.arch, &loaded.network, &loaded.norm).unwrap();
    assert_eq!(buf, again);
}

#[test]
fn mlp_checkpoint_refused_as_vgg() {
    let arch = build_mlp(16, 10, 1.0 / 64.0).unwrap();
    let net = arch.build::<f32>(0).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &arch, &net, &Normalization::identity(16)).unwrap();
    let loaded = read_checkpoint(buf.as_slice()).unwrap();
    assert!(matches!(loaded.require(Family::Vgg14), Err(Error::Shape(_))));
}
