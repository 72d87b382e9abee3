use ginet::gi_unit::GiMode;
use ginet::losses::LossWeights;
use ginet::model::{
    backbone_forward, ginet_backward, ginet_forward, sample_objective, GINetConfig, GINetParams, OutputGrads, Spatial,
};
use ginet::numerics::CounterRng;
use ginet::{Error, Matrix};
use proptest::prelude::*;

fn small() -> GINetConfig {
    GINetConfig {
        nodes: 4,
        node_dim: 4,
        channels: 8,
        embed_dim: 6,
        classes: 3,
        widths: [4, 4, 8],
        ..GINetConfig::default()
    }
}

fn image(dims: Spatial, seed: u64) -> Matrix<f32> {
    let mut rng = CounterRng::new(seed);
    let data = (0..dims.len() * 3).map(|_| rng.uniform(0.0, 1.0) as f32).collect();
    Matrix::from_vec(dims.len(), 3, data).unwrap()
}

fn embeddings(cfg: &GINetConfig, seed: u64) -> Matrix<f32> {
    let mut rng = CounterRng::new(seed);
    let data = (0..cfg.classes * cfg.embed_dim)
        .map(|_| rng.uniform(-1.0, 1.0) as f32)
        .collect();
    Matrix::from_vec(cfg.classes, cfg.embed_dim, data).unwrap()
}

#[test]
fn output_shapes_for_toy_config() {
    let cfg = GINetConfig::default();
    let dims = Spatial::new(32, 32);
    let params = GINetParams::<f32>::init(&cfg, 3, None).unwrap();
    let out = ginet_forward(&image(dims, 1), dims, &embeddings(&cfg, 2), &params, &cfg).unwrap();
    assert_eq!(out.main.shape(), (32 * 32, 6));
    assert_eq!(out.aux.shape(), (32 * 32, 6));
    assert_eq!(out.trace.x.shape(), (64, 32));
    assert_eq!(out.trace.feature_dims, Spatial::new(8, 8));
    assert_eq!(out.s_o.unwrap().shape(), (6, 16));
    assert_eq!(out.v.unwrap().shape(), (1, 6));
}

#[test]
fn zero_image_and_zero_biases_give_zero_features() {
    let cfg = small();
    let mut params = GINetParams::<f32>::init(&cfg, 5, None).unwrap();
    for b in params.backbone.iter_mut() {
        b.bias.fill(0.0);
    }
    let dims = Spatial::new(16, 16);
    let (_, x, _, _) = backbone_forward(&Matrix::zeros(dims.len(), 3), dims, &params, &cfg).unwrap();
    assert_eq!(x.max_abs(), 0.0);
}

#[test]
fn indivisible_input_is_config_error() {
    let cfg = small();
    let params = GINetParams::<f32>::init(&cfg, 5, None).unwrap();
    let dims = Spatial::new(18, 16);
    let err = backbone_forward(&image(dims, 0), dims, &params, &cfg).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn shifting_by_the_stride_shifts_interior_features() {
    let cfg = small();
    let params = GINetParams::<f32>::init(&cfg, 9, None).unwrap();
    let dims = Spatial::new(64, 64);
    let img = image(dims, 4);
    let mut shifted = Matrix::zeros(dims.len(), 3);
    for y in 0..64 {
        for x in 0..64 {
            let src = y * 64 + (x + 60) % 64;
            shifted.row_mut(y * 64 + x).copy_from_slice(img.row(src));
        }
    }
    let (_, a, _, fd) = backbone_forward(&img, dims, &params, &cfg).unwrap();
    let (_, b, _, _) = backbone_forward(&shifted, dims, &params, &cfg).unwrap();
    for y in 0..fd.height {
        for x in 3..=11 {
            let (ra, rb) = (a.row(y * fd.width + x), b.row(y * fd.width + x + 1));
            for (u, v) in ra.iter().zip(rb) {
                assert!((u - v).abs() <= 1e-6, "cell ({y},{x}): {u} vs {v}");
            }
        }
    }
}

#[test]
fn forward_is_bitwise_deterministic() {
    let cfg = small();
    let dims = Spatial::new(16, 16);
    let (img, l) = (image(dims, 7), embeddings(&cfg, 8));
    let p1 = GINetParams::<f32>::init(&cfg, 11, None).unwrap();
    let p2 = GINetParams::<f32>::init(&cfg, 11, None).unwrap();
    let a = ginet_forward(&img, dims, &l, &p1, &cfg).unwrap();
    let b = ginet_forward(&img, dims, &l, &p2, &cfg).unwrap();
    assert_eq!(a.main, b.main);
    assert_eq!(a.aux, b.aux);
    assert_eq!(a.v, b.v);
}

#[test]
fn closed_gates_reduce_to_visual_reasoning() {
    let full = small();
    let visual = GINetConfig {
        gi_mode: GiMode::VisualOnly,
        ..full.clone()
    };
    let dims = Spatial::new(16, 16);
    let (img, l) = (image(dims, 1), embeddings(&full, 2));
    let params = GINetParams::<f32>::init(&full, 13, None).unwrap();
    let a = ginet_forward(&img, dims, &l, &params, &full).unwrap();
    let b = ginet_forward(&img, dims, &l, &params, &visual).unwrap();
    assert_eq!(a.main, b.main);
    assert!(b.s_o.is_none());
}

fn objective(cfg: &GINetConfig, weights: LossWeights, seed: u64) -> GINetParams<f64> {
    let dims = Spatial::new(16, 16);
    let mut rng = CounterRng::new(seed);
    let mask: Vec<u8> = (0..dims.len()).map(|_| rng.below(cfg.classes as u64) as u8).collect();
    let presence: Vec<f64> = (0..cfg.classes)
        .map(|c| if mask.contains(&(c as u8)) { 1.0 } else { 0.0 })
        .collect();
    let params = GINetParams::<f64>::init(cfg, seed, None).unwrap();
    let (_, g) = sample_objective(
        &image(dims, seed).cast(),
        dims,
        &mask,
        &presence,
        &embeddings(cfg, seed).cast(),
        &params,
        cfg,
        &weights,
        &vec![true; cfg.classes],
        true,
    )
    .unwrap();
    g.unwrap()
}

#[test]
fn unused_centroids_get_no_gradient() {
    let g = objective(
        &small(),
        LossWeights {
            lambda: 0.0,
            alpha: 0.0,
        },
        3,
    );
    assert_eq!(g.centroids.max_abs(), 0.0);
    assert_eq!(g.aux_conv.weight.max_abs(), 0.0);
}

#[test]
fn closed_s2v_gate_still_receives_gradient() {
    for seed in [1, 2, 3] {
        let g = objective(&GINetConfig::default(), LossWeights::default(), seed);
        assert!(g.gi.interaction.beta_s2v.max_abs() > 0.0, "seed {seed}");
        assert!(g.gi.interaction.beta_v2s.max_abs() > 0.0, "seed {seed}");
    }
}

#[test]
fn mismatched_trace_is_contract_error() {
    let cfg = small();
    let dims = Spatial::new(16, 16);
    let params = GINetParams::<f32>::init(&cfg, 1, None).unwrap();
    let out = ginet_forward(&image(dims, 1), dims, &embeddings(&cfg, 1), &params, &cfg).unwrap();
    let wider = GINetConfig { channels: 12, ..cfg };
    let other = GINetParams::<f32>::init(&wider, 1, None).unwrap();
    let seeds = OutputGrads {
        main: Matrix::zeros(dims.len(), 3),
        aux: Matrix::zeros(dims.len(), 3),
        presence: None,
    };
    let err = ginet_backward(&out.trace, &other, &seeds).unwrap_err();
    assert!(matches!(err, Error::Contract(_)), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shape_contract_for_divisible_inputs(h in 2usize..=32, w in 2usize..=32, seed in 0u64..1000) {
        let cfg = small();
        let dims = Spatial::new(4 * h, 4 * w);
        let params = GINetParams::<f32>::init(&cfg, seed, None).unwrap();
        let out = ginet_forward(&image(dims, seed), dims, &embeddings(&cfg, seed), &params, &cfg).unwrap();
        prop_assert_eq!(out.main.shape(), (dims.len(), cfg.classes));
        prop_assert_eq!(out.aux.shape(), (dims.len(), cfg.classes));
        prop_assert_eq!(out.trace.x.shape(), (h * w, cfg.channels));
        prop_assert!(out.main.is_finite() && out.aux.is_finite());
    }
}
