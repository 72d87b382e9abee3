//! The gradient-check suite: every backward in the crate against central
//! differences at double precision.

use crate::data::presence_from_mask;
use crate::error::Result;
use crate::gi_unit::{
    evolve_semantic, gi_backward, gi_forward, graph_conv_backward, guidance_backward, guidance_logits, s2v_update,
    s2v_update_backward, semantic_mlp, semantic_mlp_backward, v2s_update, v2s_update_backward, GiDims, GiMode,
    GiParams, GraphConvParams, GuidanceParams, InteractionParams, MlpParams,
};
use crate::losses::{pixel_cross_entropy, presence_backward, sc_loss, LossWeights, IGNORE_INDEX};
use crate::model::conv::conv_relu_backward;
use crate::model::upsample::{bilinear_resize, bilinear_resize_backward};
use crate::model::{conv::conv_relu, sample_objective, ConvParams, GINetConfig, GINetParams, Spatial};
use crate::numerics::gradcheck::{frobenius_dot, random_matrix, ClosureOp};
use crate::numerics::{
    add_row_bias, grad_check, matmul, matmul_backward, relu, relu_backward, row_dots, row_softmax,
    row_softmax_backward, scale_rows, scale_rows_backward, sigmoid, sigmoid_backward, CounterRng, Differentiable,
    GradCheckOptions, GradCheckReport, Matrix,
};
use crate::projection::{
    compute_assignment, compute_assignment_backward, project, project_backward, reproject, reproject_backward,
    ProjectionParams,
};

pub const TOLERANCE: f64 = 1e-4;
pub const DEFAULT_SEEDS: [u64; 3] = [11, 23, 47];

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub seeds: Vec<u64>,
    pub max_probes_per_tensor: Option<usize>,
    /// Test hook: the named op's backward is perturbed before checking.
    pub corrupt: Option<String>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seeds: DEFAULT_SEEDS.to_vec(),
            max_probes_per_tensor: None,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub seed: u64,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn passes(&self) -> bool {
        self.report.passes(TOLERANCE)
    }
}

type Case = (Box<dyn Differentiable>, Vec<Matrix<f64>>);

fn case<F, B>(name: &str, labels: &[&str], point: Vec<Matrix<f64>>, f: F, b: B) -> Case
where
    F: Fn(&[Matrix<f64>]) -> Result<f64> + 'static,
    B: Fn(&[Matrix<f64>]) -> Result<Vec<Matrix<f64>>> + 'static,
{
    (Box::new(ClosureOp::new(name, labels, f, b)), point)
}

struct Corrupted(Box<dyn Differentiable>);

impl Differentiable for Corrupted {
    fn name(&self) -> String {
        self.0.name()
    }
    fn labels(&self, point: &[Matrix<f64>]) -> Vec<String> {
        self.0.labels(point)
    }
    fn forward(&self, point: &[Matrix<f64>]) -> Result<f64> {
        self.0.forward(point)
    }
    fn backward(&self, point: &[Matrix<f64>]) -> Result<Vec<Matrix<f64>>> {
        let mut g = self.0.backward(point)?;
        if let Some(first) = g.first_mut() {
            *first = first.map(|v| 1.5 * v + 1e-3);
        }
        Ok(g)
    }
}

/// Names of every op in the suite, in run order.
pub fn op_names() -> Vec<String> {
    cases(0).into_iter().map(|(op, _)| op.name()).collect()
}

pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<SuiteEntry>> {
    let mut out = Vec::new();
    for &seed in &opts.seeds {
        for (op, point) in cases(seed) {
            let op: Box<dyn Differentiable> = match &opts.corrupt {
                Some(name) if *name == op.name() => Box::new(Corrupted(op)),
                _ => op,
            };
            let go = GradCheckOptions {
                max_probes_per_tensor: opts.max_probes_per_tensor,
                seed,
                ..GradCheckOptions::default()
            };
            out.push(SuiteEntry {
                seed,
                report: grad_check(op.as_ref(), &point, &go)?,
            });
        }
    }
    Ok(out)
}

fn cases(seed: u64) -> Vec<Case> {
    let mut rng = CounterRng::derive_label(seed, "gradcheck-suite");
    let mut rm = |r: usize, c: usize, s: f64| random_matrix(r, c, -s, s, &mut rng);
    let mut v: Vec<Case> = Vec::new();

    let r = rm(3, 2, 1.0);
    v.push(case(
        "matmul",
        &["a", "b"],
        vec![rm(3, 4, 1.0), rm(4, 2, 1.0)],
        {
            let r = r.clone();
            move |p| Ok(frobenius_dot(&r, &matmul(&p[0], &p[1])?))
        },
        move |p| {
            let (da, db) = matmul_backward(&p[0], &p[1], &r)?;
            Ok(vec![da, db])
        },
    ));

    let r = rm(3, 5, 1.0);
    v.push(case(
        "row_softmax",
        &["x"],
        vec![rm(3, 5, 2.0)],
        {
            let r = r.clone();
            move |p| Ok(frobenius_dot(&r, &row_softmax(&p[0])))
        },
        move |p| Ok(vec![row_softmax_backward(&row_softmax(&p[0]), &r)?]),
    ));

    let r = rm(4, 4, 1.0);
    v.push(case(
        "relu",
        &["x"],
        vec![rm(4, 4, 1.0)],
        {
            let r = r.clone();
            move |p| Ok(frobenius_dot(&r, &relu(&p[0])))
        },
        move |p| Ok(vec![relu_backward(&p[0], &r)?]),
    ));

    let r = rm(4, 4, 1.0);
    v.push(case(
        "sigmoid",
        &["x"],
        vec![rm(4, 4, 3.0)],
        {
            let r = r.clone();
            move |p| Ok(frobenius_dot(&r, &sigmoid(&p[0])))
        },
        move |p| Ok(vec![sigmoid_backward(&sigmoid(&p[0]), &r)?]),
    ));

    let r = rm(4, 3, 1.0);
    v.push(case(
        "scale_rows",
        &["m", "scale"],
        vec![rm(4, 3, 1.0), rm(1, 4, 1.0)],
        {
            let r = r.clone();
            move |p| Ok(frobenius_dot(&r, &scale_rows(&p[0], &p[1])?))
        },
        move |p| {
            let (dm, ds) = scale_rows_backward(&p[0], &p[1], &r)?;
            Ok(vec![dm, ds])
        },
    ));

    let r = rm(3, 4, 1.0);
    v.push(case(
        "add_row_bias",
        &["x", "bias"],
        vec![rm(3, 4, 1.0), rm(1, 4, 1.0)],
        {
            let r = r.clone();
            move |p| Ok(frobenius_dot(&r, &add_row_bias(&p[0], &p[1])?))
        },
        move |_| Ok(vec![r.clone(), r.col_sums()]),
    ));

    let r = rm(1, 4, 1.0);
    v.push(case(
        "row_dots",
        &["a", "b"],
        vec![rm(4, 3, 1.0), rm(4, 3, 1.0)],
        {
            let r = r.clone();
            move |p| Ok(frobenius_dot(&r, &row_dots(&p[0], &p[1])?))
        },
        move |p| {
            let (da, db) = presence_backward(&p[0], &p[1], &r)?;
            Ok(vec![da, db])
        },
    ));

    for (stride, side) in [(1usize, 5usize), (2, 6)] {
        let dims = Spatial::new(side, side);
        let out = dims.strided(stride);
        let r = rm(out.len(), 3, 1.0);
        let conv = move |p: &[Matrix<f64>]| {
            let params = ConvParams {
                weight: p[1].clone(),
                bias: p[2].clone(),
            };
            conv_relu(&p[0], dims, &params, stride).map(|(o, _, t)| (o, t, params))
        };
        v.push(case(
            &format!("conv3x3_relu/stride{stride}"),
            &["input", "weight", "bias"],
            vec![rm(dims.len(), 2, 1.0), rm(18, 3, 0.5), rm(1, 3, 0.2)],
            {
                let r = r.clone();
                move |p| Ok(frobenius_dot(&r, &conv(p)?.0))
            },
            move |p| {
                let (_, trace, params) = conv(p)?;
                let (d_in, g) = conv_relu_backward(&trace, &params, &r, true)?;
                Ok(vec![d_in.expect("requested"), g.weight, g.bias])
            },
        ));
    }

    let (from, to) = (Spatial::new(3, 3), Spatial::new(6, 6));
    let r = rm(to.len(), 2, 1.0);
    v.push(case(
        "bilinear_resize",
        &["map"],
        vec![rm(from.len(), 2, 1.0)],
        {
            let r = r.clone();
            move |p| Ok(frobenius_dot(&r, &bilinear_resize(&p[0], from, to)?))
        },
        move |_| Ok(vec![bilinear_resize_backward(&r, from, to)?]),
    ));

    // graph-unit stages on N=2, M=3, L=6, C=4, D=4, K=5
    let (n, m, l, c, d, k) = (2, 3, 6, 4, 4, 5);

    let r = rm(n, l, 1.0);
    v.push(case(
        "assignment",
        &["x", "w_z"],
        vec![rm(l, c, 1.0), rm(n, c, 1.0)],
        {
            let r = r.clone();
            move |p| Ok(frobenius_dot(&r, compute_assignment(&p[0], &p[1])?.matrix()))
        },
        move |p| {
            let z = compute_assignment(&p[0], &p[1])?;
            let (dx, dw) = compute_assignment_backward(&p[0], &p[1], &z, &r)?;
            Ok(vec![dx, dw])
        },
    ));

    let r = rm(n, d, 1.0);
    v.push(case(
        "projection",
        &["x", "z", "w"],
        vec![rm(l, c, 1.0), rm(n, l, 1.0), rm(c, d, 1.0)],
        {
            let r = r.clone();
            move |p| Ok(frobenius_dot(&r, &project(&p[0], &p[1], &p[2])?))
        },
        move |p| {
            let (dx, dz, dw) = project_backward(&p[0], &p[1], &p[2], &r)?;
            Ok(vec![dx, dz, dw])
        },
    ));

    let r = rm(l, c, 1.0);
    v.push(case(
        "reprojection",
        &["p_o", "z", "w_o", "x"],
        vec![rm(n, d, 1.0), rm(n, l, 1.0), rm(d, c, 1.0), rm(l, c, 1.0)],
        {
            let r = r.clone();
            move |p| Ok(frobenius_dot(&r, &reproject(&p[0], &p[1], &p[2], &p[3])?))
        },
        move |p| {
            let (a, b, c, e) = reproject_backward(&p[0], &p[1], &p[2], &r)?;
            Ok(vec![a, b, c, e])
        },
    ));

    let lm = rm(m, k, 1.0);
    let r = rm(m, d, 1.0);
    let mlp = |p: &[Matrix<f64>]| MlpParams {
        w: p[0].clone(),
        b: p[1].clone(),
    };
    v.push(case(
        "semantic_mlp",
        &["w_mlp", "b_mlp"],
        vec![rm(k, d, 1.0), rm(1, d, 0.5)],
        {
            let (r, lm) = (r.clone(), lm.clone());
            move |p| Ok(frobenius_dot(&r, &semantic_mlp(&lm, &mlp(p))?.0))
        },
        move |p| {
            let (_, pre) = semantic_mlp(&lm, &mlp(p))?;
            let g = semantic_mlp_backward(&lm, &pre, &r)?;
            Ok(vec![g.w, g.b])
        },
    ));

    let r = rm(m, d, 1.0);
    let gc = |p: &[Matrix<f64>]| GraphConvParams {
        adjacency: p[1].clone(),
        weight: p[2].clone(),
    };
    v.push(case(
        "graph_conv",
        &["nodes", "adjacency", "weight"],
        vec![rm(m, d, 1.0), rm(m, m, 1.0), rm(d, d, 1.0)],
        {
            let r = r.clone();
            move |p| Ok(frobenius_dot(&r, &evolve_semantic(&p[0], &gc(p))?.0))
        },
        move |p| {
            let (_, pre) = evolve_semantic(&p[0], &gc(p))?;
            let (a, b, c) = graph_conv_backward(&p[0], &gc(p), &pre, &r)?;
            Ok(vec![a, b, c])
        },
    ));

    let (r1, r2) = (rm(n, m, 1.0), rm(m, n, 1.0));
    let gp = |p: &[Matrix<f64>]| GuidanceParams {
        w_p: p[2].clone(),
        w_s: p[3].clone(),
    };
    v.push(case(
        "guidance",
        &["p_tilde", "s_tilde", "w_p", "w_s"],
        vec![rm(n, d, 1.0), rm(m, d, 1.0), rm(d / 2, d, 1.0), rm(d / 2, d, 1.0)],
        {
            let (r1, r2) = (r1.clone(), r2.clone());
            move |p| {
                let lg = guidance_logits(&p[0], &p[1], &gp(p))?;
                let s2v = row_softmax(&lg.s2v);
                let v2s = row_softmax(&lg.s2v.transpose());
                Ok(frobenius_dot(&r1, &s2v) + frobenius_dot(&r2, &v2s))
            }
        },
        move |p| {
            let lg = guidance_logits(&p[0], &p[1], &gp(p))?;
            let s2v = row_softmax(&lg.s2v);
            let v2s = row_softmax(&lg.s2v.transpose());
            let (a, b, c, e) = guidance_backward(&p[0], &p[1], &gp(p), &lg, &s2v, &r1, &v2s, &r2)?;
            Ok(vec![a, b, c, e])
        },
    ));

    let r = rm(n, d, 1.0);
    let (w_v2s, beta_v2s) = (rm(d, d, 1.0), rm(1, m, 1.0));
    let ip_s2v = move |p: &[Matrix<f64>]| InteractionParams {
        w_s2v: p[3].clone(),
        w_v2s: w_v2s.clone(),
        beta_s2v: p[4].clone(),
        beta_v2s: beta_v2s.clone(),
    };
    let ip_b = ip_s2v.clone();
    v.push(case(
        "s2v_update",
        &["p_tilde", "s_tilde", "g_s2v", "w_s2v", "beta_s2v"],
        vec![
            rm(n, d, 1.0),
            rm(m, d, 1.0),
            rm(n, m, 1.0),
            rm(d, d, 1.0),
            rm(1, n, 1.0),
        ],
        {
            let r = r.clone();
            move |p| Ok(frobenius_dot(&r, &s2v_update(&p[0], &p[1], &p[2], &ip_s2v(p))?))
        },
        move |p| {
            let (a, b, c, e, f) = s2v_update_backward(&p[1], &p[2], &ip_b(p), &r)?;
            Ok(vec![a, b, c, e, f])
        },
    ));

    let r = rm(m, d, 1.0);
    let (w_s2v, beta_s2v) = (rm(d, d, 1.0), rm(1, n, 1.0));
    let ip_v2s = move |p: &[Matrix<f64>]| InteractionParams {
        w_s2v: w_s2v.clone(),
        w_v2s: p[3].clone(),
        beta_s2v: beta_s2v.clone(),
        beta_v2s: p[4].clone(),
    };
    let ip_b = ip_v2s.clone();
    v.push(case(
        "v2s_update",
        &["p_tilde", "s_tilde", "g_v2s", "w_v2s", "beta_v2s"],
        vec![
            rm(n, d, 1.0),
            rm(m, d, 1.0),
            rm(m, n, 1.0),
            rm(d, d, 1.0),
            rm(1, m, 1.0),
        ],
        {
            let r = r.clone();
            move |p| Ok(frobenius_dot(&r, &v2s_update(&p[0], &p[1], &p[2], &ip_v2s(p))?))
        },
        move |p| {
            let (a, b, c, e, f) = v2s_update_backward(&p[0], &p[1], &p[2], &ip_b(p), &r)?;
            Ok(vec![a, b, c, e, f])
        },
    ));

    v.push(gi_unit_case(
        seed,
        rm(l, c, 1.0),
        rm(m, k, 1.0),
        GiDims {
            nodes: n,
            classes: m,
            node_dim: d,
            embed_dim: k,
        },
        c,
    ));

    let y = vec![1.0, 0.0, 1.0];
    let yb = y.clone();
    v.push(case(
        "sc_loss",
        &["s_o", "centroids"],
        vec![rm(m, d, 1.0), rm(m, d, 1.0)],
        move |p| Ok(sc_loss(&p[0], &p[1], &y)?.loss),
        move |p| {
            let sc = sc_loss(&p[0], &p[1], &yb)?;
            let (ds, dc) = presence_backward(&p[0], &p[1], &sc.d_logits)?;
            Ok(vec![ds, dc])
        },
    ));

    let labels = [0u8, 2, 1, IGNORE_INDEX, 1, 0];
    v.push(case(
        "pixel_cross_entropy",
        &["logits"],
        vec![rm(6, 3, 2.0)],
        move |p| Ok(pixel_cross_entropy(&p[0], &labels, IGNORE_INDEX)?.loss),
        move |p| Ok(vec![pixel_cross_entropy(&p[0], &labels, IGNORE_INDEX)?.d_logits]),
    ));

    v.push(model_case(seed));
    v
}

const GI_LABELS: [&str; 16] = [
    "x", "w_z", "w", "w_o", "mlp.w", "mlp.b", "a_v", "w_v", "a_s", "w_s_gcn", "w_p", "w_s", "w_s2v", "w_v2s",
    "beta_s2v", "beta_v2s",
];

fn gi_pack(x: Matrix<f64>, pp: &ProjectionParams<f64>, g: &GiParams<f64>) -> Vec<Matrix<f64>> {
    vec![
        x,
        pp.w_z.clone(),
        pp.w.clone(),
        pp.w_o.clone(),
        g.mlp.w.clone(),
        g.mlp.b.clone(),
        g.visual.adjacency.clone(),
        g.visual.weight.clone(),
        g.semantic.adjacency.clone(),
        g.semantic.weight.clone(),
        g.guidance.w_p.clone(),
        g.guidance.w_s.clone(),
        g.interaction.w_s2v.clone(),
        g.interaction.w_v2s.clone(),
        g.interaction.beta_s2v.clone(),
        g.interaction.beta_v2s.clone(),
    ]
}

fn gi_unpack(p: &[Matrix<f64>]) -> (ProjectionParams<f64>, GiParams<f64>) {
    let c = |i: usize| p[i].clone();
    (
        ProjectionParams {
            w_z: c(1),
            w: c(2),
            w_o: c(3),
        },
        GiParams {
            mlp: MlpParams { w: c(4), b: c(5) },
            visual: GraphConvParams {
                adjacency: c(6),
                weight: c(7),
            },
            semantic: GraphConvParams {
                adjacency: c(8),
                weight: c(9),
            },
            guidance: GuidanceParams { w_p: c(10), w_s: c(11) },
            interaction: InteractionParams {
                w_s2v: c(12),
                w_v2s: c(13),
                beta_s2v: c(14),
                beta_v2s: c(15),
            },
        },
    )
}

/// Full graph unit, scalarised as `⟨R_x, X̃⟩ + ⟨R_s, S_o⟩`, at a generic point
/// (non-zero gates, relu-gain weights) so every path carries gradient.
fn gi_unit_case(seed: u64, x: Matrix<f64>, lm: Matrix<f64>, dims: GiDims, channels: usize) -> Case {
    let mut rng = CounterRng::derive_label(seed, "gi-unit-case");
    let s = |l: &str| CounterRng::derive_label(seed, l).at(0);
    let pp = ProjectionParams::init(dims.nodes, channels, dims.node_dim, s).expect("valid dims");
    let g = GiParams::init(dims, None, s).expect("valid dims");
    let mut point = gi_pack(x, &pp, &g);
    for (label, m) in GI_LABELS.iter().zip(point.iter_mut()).skip(1) {
        *m = if label.starts_with("beta") || *label == "mlp.b" {
            random_matrix(m.rows(), m.cols(), 0.5, 1.5, &mut rng)
        } else {
            m.scale(6f64.sqrt())
        };
    }
    let rx = random_matrix(point[0].rows(), point[0].cols(), -1.0, 1.0, &mut rng);
    let rs = random_matrix(dims.classes, dims.node_dim, -1.0, 1.0, &mut rng);
    let (lb, rxb, rsb) = (lm.clone(), rx.clone(), rs.clone());
    case(
        "gi_unit",
        &GI_LABELS,
        point,
        move |p| {
            let (pp, g) = gi_unpack(p);
            let out = gi_forward(&p[0], &lm, &pp, &g, GiMode::Full)?;
            Ok(frobenius_dot(&rx, &out.x_tilde) + frobenius_dot(&rs, &out.s_o.expect("full mode")))
        },
        move |p| {
            let (pp, g) = gi_unpack(p);
            let out = gi_forward(&p[0], &lb, &pp, &g, GiMode::Full)?;
            let (dx, gp, gg) = gi_backward(&out.trace, &pp, &g, &rxb, Some(&rsb))?;
            Ok(gi_pack(dx, &gp, &gg))
        },
    )
}

/// Composed objective `ce + α·aux + λ·sc` of the whole network on a 16×16
/// image, w.r.t. every parameter tensor.
fn model_case(seed: u64) -> Case {
    let cfg = GINetConfig {
        nodes: 4,
        node_dim: 4,
        channels: 6,
        embed_dim: 5,
        classes: 3,
        widths: [3, 4, 5],
        ..GINetConfig::default()
    };
    let dims = Spatial::new(16, 16);
    let mut rng = CounterRng::derive_label(seed, "model-case");
    let image = random_matrix(dims.len(), 3, 0.0, 1.0, &mut rng);
    let lm = random_matrix(cfg.classes, cfg.embed_dim, -1.0, 1.0, &mut rng);
    let mask: Vec<u8> = (0..dims.len())
        .map(|_| {
            if rng.bernoulli(0.05) {
                IGNORE_INDEX
            } else {
                rng.below(cfg.classes as u64) as u8
            }
        })
        .collect();
    let y: Vec<f64> = presence_from_mask(&mask, cfg.classes)
        .iter()
        .map(|&b| b as f64)
        .collect();
    // A generic point rather than the initialisation: zero biases put dead
    // receptive fields exactly on a relu kink, zero gates cut the
    // interaction paths, and fan-in-scale weights leave some gradients
    // below the central-difference roundoff floor.
    let mut params = GINetParams::<f64>::init(&cfg, seed, None).expect("valid config");
    for (name, m) in params.tensors_mut() {
        if name.ends_with(".bias") || name.contains(".beta_") {
            *m = random_matrix(m.rows(), m.cols(), -0.5, 0.5, &mut rng);
        } else {
            *m = m.scale(6f64.sqrt());
        }
    }
    let point: Vec<Matrix<f64>> = params.tensors().into_iter().map(|(_, m)| m.clone()).collect();
    let labels: Vec<&str> = params.tensors().into_iter().map(|(n, _)| n).collect();

    let template = params;
    let eval = move |p: &[Matrix<f64>], with_grad: bool| {
        let mut params = template.clone();
        for ((_, dst), src) in params.tensors_mut().into_iter().zip(p) {
            *dst = src.clone();
        }
        let active = vec![true; cfg.classes];
        sample_objective(
            &image,
            dims,
            &mask,
            &y,
            &lm,
            &params,
            &cfg,
            &LossWeights::default(),
            &active,
            with_grad,
        )
    };
    let eval_b = eval.clone();
    case(
        "model_objective",
        &labels,
        point,
        move |p| Ok(eval(p, false)?.0.total),
        move |p| {
            let grads = eval_b(p, true)?.1.expect("gradient requested");
            Ok(grads.tensors().into_iter().map(|(_, m)| m.clone()).collect())
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corruption_hook_is_detected() {
        let opts = SuiteOptions {
            seeds: vec![5],
            max_probes_per_tensor: Some(4),
            corrupt: Some("matmul".into()),
        };
        let entries = run_suite(&opts).unwrap();
        let bad: Vec<_> = entries.iter().filter(|e| !e.passes()).collect();
        assert_eq!(bad.len(), 1);
        assert_eq!(bad[0].report.op, "matmul");
    }

    #[test]
    fn names_are_unique() {
        let names = op_names();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
    }
}
