//! The graph interaction unit.
//!
//! Forward order: assignment and projection of the visual features, MLP on
//! the class embeddings, one graph convolution per graph, the two guidance
//! matrices, the semantic-to-visual and visual-to-semantic updates, and
//! finally the residual re-projection. [`gi_forward`] records every
//! intermediate in a [`GiTrace`] which [`gi_backward`] consumes.

use crate::error::{Error, Result, StageExt};
use crate::numerics::{
    add_row_bias, matmul, matmul_backward, matmul_nt, matmul_tn, relu, relu_backward, row_softmax,
    row_softmax_backward, scale_rows, scale_rows_backward, seeded_init, Init, Matrix, Scalar,
};
use crate::projection::{
    compute_assignment, compute_assignment_backward, project, project_backward, reproject, reproject_backward,
    ProjectionParams,
};

/// How much of the unit runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GiMode {
    /// Both graphs and the bidirectional interaction.
    Full,
    /// Visual graph reasoning only: `X̃ = X + Zᵀ·relu((A_v+I)·P·W_v)·W_o`.
    VisualOnly,
    /// Unit bypassed, `X̃ = X`.
    Off,
}

impl GiMode {
    pub fn code(self) -> u32 {
        match self {
            GiMode::Full => 0,
            GiMode::VisualOnly => 1,
            GiMode::Off => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(GiMode::Full),
            1 => Some(GiMode::VisualOnly),
            2 => Some(GiMode::Off),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GiMode::Full => "full",
            GiMode::VisualOnly => "visual",
            GiMode::Off => "off",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(GiMode::Full),
            "visual" => Some(GiMode::VisualOnly),
            "off" => Some(GiMode::Off),
            _ => None,
        }
    }

    pub fn uses_semantics(self) -> bool {
        self == GiMode::Full
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    /// `K × D`
    pub w: Matrix<T>,
    /// `1 × D`
    pub b: Matrix<T>,
}

/// Learnable adjacency and node transform of one graph convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphConvParams<T> {
    pub adjacency: Matrix<T>,
    pub weight: Matrix<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceParams<T> {
    /// `D/2 × D`, applied to visual nodes.
    pub w_p: Matrix<T>,
    /// `D/2 × D`, applied to semantic nodes.
    pub w_s: Matrix<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionParams<T> {
    pub w_s2v: Matrix<T>,
    pub w_v2s: Matrix<T>,
    /// `1 × N`, zero at construction.
    pub beta_s2v: Matrix<T>,
    /// `1 × M`, zero at construction.
    pub beta_v2s: Matrix<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GiParams<T> {
    pub mlp: MlpParams<T>,
    pub visual: GraphConvParams<T>,
    pub semantic: GraphConvParams<T>,
    pub guidance: GuidanceParams<T>,
    pub interaction: InteractionParams<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GiDims {
    pub nodes: usize,
    pub classes: usize,
    pub node_dim: usize,
    pub embed_dim: usize,
}

impl<T: Scalar> GiParams<T> {
    /// Random weights, zero biases and zero gates. `semantic_adjacency`
    /// replaces the random `A_s` (e.g. with co-occurrence statistics).
    pub fn init(dims: GiDims, semantic_adjacency: Option<Matrix<T>>, seed: impl Fn(&str) -> u64) -> Result<Self> {
        let GiDims {
            nodes: n,
            classes: m,
            node_dim: d,
            embed_dim: k,
        } = dims;
        if d % 2 != 0 {
            return Err(Error::Config(format!("node dimension {d} must be even")));
        }
        let a_s = match semantic_adjacency {
            Some(a) => {
                a.expect_shape("semantic adjacency", m, m)?;
                a
            }
            None => seeded_init(m, m, Init::fan_in_rows(m), seed("semantic.adjacency"))?,
        };
        Ok(GiParams {
            mlp: MlpParams {
                w: seeded_init(k, d, Init::fan_in_rows(k), seed("mlp.w"))?,
                b: Matrix::zeros(1, d),
            },
            visual: GraphConvParams {
                adjacency: seeded_init(n, n, Init::fan_in_rows(n), seed("visual.adjacency"))?,
                weight: seeded_init(d, d, Init::fan_in_rows(d), seed("visual.weight"))?,
            },
            semantic: GraphConvParams {
                adjacency: a_s,
                weight: seeded_init(d, d, Init::fan_in_rows(d), seed("semantic.weight"))?,
            },
            guidance: GuidanceParams {
                w_p: seeded_init(d / 2, d, Init::FanInUniform { fan_in: d }, seed("guidance.w_p"))?,
                w_s: seeded_init(d / 2, d, Init::FanInUniform { fan_in: d }, seed("guidance.w_s"))?,
            },
            interaction: InteractionParams {
                w_s2v: seeded_init(d, d, Init::fan_in_rows(d), seed("interaction.w_s2v"))?,
                w_v2s: seeded_init(d, d, Init::fan_in_rows(d), seed("interaction.w_v2s"))?,
                beta_s2v: Matrix::zeros(1, n),
                beta_v2s: Matrix::zeros(1, m),
            },
        })
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix<T>| Matrix::zeros(m.rows(), m.cols());
        GiParams {
            mlp: MlpParams {
                w: z(&self.mlp.w),
                b: z(&self.mlp.b),
            },
            visual: GraphConvParams {
                adjacency: z(&self.visual.adjacency),
                weight: z(&self.visual.weight),
            },
            semantic: GraphConvParams {
                adjacency: z(&self.semantic.adjacency),
                weight: z(&self.semantic.weight),
            },
            guidance: GuidanceParams {
                w_p: z(&self.guidance.w_p),
                w_s: z(&self.guidance.w_s),
            },
            interaction: InteractionParams {
                w_s2v: z(&self.interaction.w_s2v),
                w_v2s: z(&self.interaction.w_v2s),
                beta_s2v: z(&self.interaction.beta_s2v),
                beta_v2s: z(&self.interaction.beta_v2s),
            },
        }
    }
}

/// `S = relu(L·W + b)`; returns `(S, pre-activation)`.
pub fn semantic_mlp<T: Scalar>(l: &Matrix<T>, mlp: &MlpParams<T>) -> Result<(Matrix<T>, Matrix<T>)> {
    let pre = add_row_bias(&matmul(l, &mlp.w)?, &mlp.b)?;
    Ok((relu(&pre), pre))
}

/// Gradients of [`semantic_mlp`] w.r.t. its parameters: `(d_w, d_b)`.
pub fn semantic_mlp_backward<T: Scalar>(l: &Matrix<T>, pre: &Matrix<T>, d_s: &Matrix<T>) -> Result<MlpParams<T>> {
    let d_pre = relu_backward(pre, d_s)?;
    Ok(MlpParams {
        w: matmul_tn(l, &d_pre)?,
        b: d_pre.col_sums(),
    })
}

fn graph_conv<T: Scalar>(nodes: &Matrix<T>, g: &GraphConvParams<T>) -> Result<(Matrix<T>, Matrix<T>)> {
    let n = nodes.rows();
    g.adjacency.expect_shape("graph adjacency", n, n)?;
    // (A + I)·X without materialising A + I
    let mut mixed = matmul(&g.adjacency, nodes)?;
    mixed.add_assign(nodes)?;
    let pre = matmul(&mixed, &g.weight)?;
    Ok((relu(&pre), pre))
}

/// Gradients of a graph convolution: `(d_nodes, d_adjacency, d_weight)`.
pub fn graph_conv_backward<T: Scalar>(
    nodes: &Matrix<T>,
    g: &GraphConvParams<T>,
    pre: &Matrix<T>,
    d_out: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>)> {
    let d_pre = relu_backward(pre, d_out)?;
    let mut mixed = matmul(&g.adjacency, nodes)?;
    mixed.add_assign(nodes)?;
    let (d_mixed, d_weight) = matmul_backward(&mixed, &g.weight, &d_pre)?;
    let (d_adj, mut d_nodes) = matmul_backward(&g.adjacency, nodes, &d_mixed)?;
    d_nodes.add_assign(&d_mixed)?;
    Ok((d_nodes, d_adj, d_weight))
}

/// `P̃ = relu((A_v + I)·P·W_v)`; returns `(P̃, pre-activation)`.
pub fn evolve_visual<T: Scalar>(p: &Matrix<T>, g: &GraphConvParams<T>) -> Result<(Matrix<T>, Matrix<T>)> {
    graph_conv(p, g)
}

/// `S̃ = relu((A_s + I)·S·W_s)`; returns `(S̃, pre-activation)`.
pub fn evolve_semantic<T: Scalar>(s: &Matrix<T>, g: &GraphConvParams<T>) -> Result<(Matrix<T>, Matrix<T>)> {
    graph_conv(s, g)
}

/// Reduced node features and the `N × M` bilinear similarity logits.
#[derive(Clone, Debug)]
pub struct GuidanceLogits<T> {
    /// `N × D/2`, rows `W_p·p̃_i`
    pub qp: Matrix<T>,
    /// `M × D/2`, rows `W_s·s̃_j`
    pub qs: Matrix<T>,
    /// `N × M`, `(W_p·p̃_i)·(W_s·s̃_j)`
    pub s2v: Matrix<T>,
}

pub fn guidance_logits<T: Scalar>(
    p_t: &Matrix<T>,
    s_t: &Matrix<T>,
    gp: &GuidanceParams<T>,
) -> Result<GuidanceLogits<T>> {
    let qp = matmul_nt(p_t, &gp.w_p)?;
    let qs = matmul_nt(s_t, &gp.w_s)?;
    let s2v = matmul_nt(&qp, &qs)?;
    Ok(GuidanceLogits { qp, qs, s2v })
}

/// `G_s2v` (`N × M`): softmax over semantic nodes for each visual node.
pub fn guidance_s2v<T: Scalar>(p_t: &Matrix<T>, s_t: &Matrix<T>, gp: &GuidanceParams<T>) -> Result<Matrix<T>> {
    Ok(row_softmax(&guidance_logits(p_t, s_t, gp)?.s2v))
}

/// `G_v2s` (`M × N`): softmax over visual nodes for each semantic node.
pub fn guidance_v2s<T: Scalar>(p_t: &Matrix<T>, s_t: &Matrix<T>, gp: &GuidanceParams<T>) -> Result<Matrix<T>> {
    Ok(row_softmax(&guidance_logits(p_t, s_t, gp)?.s2v.transpose()))
}

/// Backward through both guidance matrices given their outputs and
/// upstream gradients. Returns `(d_p̃, d_s̃, d_w_p, d_w_s)`.
pub fn guidance_backward<T: Scalar>(
    p_t: &Matrix<T>,
    s_t: &Matrix<T>,
    gp: &GuidanceParams<T>,
    logits: &GuidanceLogits<T>,
    g_s2v: &Matrix<T>,
    d_g_s2v: &Matrix<T>,
    g_v2s: &Matrix<T>,
    d_g_v2s: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>, Matrix<T>)> {
    let mut d_logits = row_softmax_backward(g_s2v, d_g_s2v)?;
    d_logits.add_assign(&row_softmax_backward(g_v2s, d_g_v2s)?.transpose())?;
    // logits = Qp·Qsᵀ
    let d_qp = matmul(&d_logits, &logits.qs)?;
    let d_qs = matmul_tn(&d_logits, &logits.qp)?;
    // Q = X·Wᵀ  ⇒  dW = dQᵀ·X, dX = dQ·W
    let d_w_p = matmul_tn(&d_qp, p_t)?;
    let d_w_s = matmul_tn(&d_qs, s_t)?;
    let d_p_t = matmul(&d_qp, &gp.w_p)?;
    let d_s_t = matmul(&d_qs, &gp.w_s)?;
    Ok((d_p_t, d_s_t, d_w_p, d_w_s))
}

/// `P_o = P̃ + diag(β_s2v)·G_s2v·S̃·W_s2v`
pub fn s2v_update<T: Scalar>(
    p_t: &Matrix<T>,
    s_t: &Matrix<T>,
    g_s2v: &Matrix<T>,
    ip: &InteractionParams<T>,
) -> Result<Matrix<T>> {
    let message = matmul(&matmul(g_s2v, s_t)?, &ip.w_s2v)?;
    let mut p_o = scale_rows(&message, &ip.beta_s2v)?;
    p_o.add_assign(p_t)?;
    Ok(p_o)
}

/// Gradients of [`s2v_update`]: `(d_p̃, d_s̃, d_g_s2v, d_w_s2v, d_β_s2v)`.
pub fn s2v_update_backward<T: Scalar>(
    s_t: &Matrix<T>,
    g_s2v: &Matrix<T>,
    ip: &InteractionParams<T>,
    d_p_o: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>, Matrix<T>, Matrix<T>)> {
    let gs = matmul(g_s2v, s_t)?;
    let message = matmul(&gs, &ip.w_s2v)?;
    let (d_message, d_beta) = scale_rows_backward(&message, &ip.beta_s2v, d_p_o)?;
    let (d_gs, d_w) = matmul_backward(&gs, &ip.w_s2v, &d_message)?;
    let (d_g, d_s_t) = matmul_backward(g_s2v, s_t, &d_gs)?;
    Ok((d_p_o.clone(), d_s_t, d_g, d_w, d_beta))
}

/// `S_o = diag(β_v2s)·S̃ + G_v2s·P̃·W_v2s`
pub fn v2s_update<T: Scalar>(
    p_t: &Matrix<T>,
    s_t: &Matrix<T>,
    g_v2s: &Matrix<T>,
    ip: &InteractionParams<T>,
) -> Result<Matrix<T>> {
    let mut s_o = matmul(&matmul(g_v2s, p_t)?, &ip.w_v2s)?;
    s_o.add_assign(&scale_rows(s_t, &ip.beta_v2s)?)?;
    Ok(s_o)
}

/// Gradients of [`v2s_update`]: `(d_p̃, d_s̃, d_g_v2s, d_w_v2s, d_β_v2s)`.
pub fn v2s_update_backward<T: Scalar>(
    p_t: &Matrix<T>,
    s_t: &Matrix<T>,
    g_v2s: &Matrix<T>,
    ip: &InteractionParams<T>,
    d_s_o: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>, Matrix<T>, Matrix<T>)> {
    let (d_s_t, d_beta) = scale_rows_backward(s_t, &ip.beta_v2s, d_s_o)?;
    let gp = matmul(g_v2s, p_t)?;
    let (d_gp, d_w) = matmul_backward(&gp, &ip.w_v2s, d_s_o)?;
    let (d_g, d_p_t) = matmul_backward(g_v2s, p_t, &d_gp)?;
    Ok((d_p_t, d_s_t, d_g, d_w, d_beta))
}

/// Semantic half of the trace; absent when the unit runs visual-only.
#[derive(Clone, Debug)]
pub struct SemanticTrace<T> {
    pub s_pre: Matrix<T>,
    pub s: Matrix<T>,
    pub s_t_pre: Matrix<T>,
    pub s_t: Matrix<T>,
    pub logits: GuidanceLogits<T>,
    pub g_s2v: Matrix<T>,
    pub g_v2s: Matrix<T>,
}

#[derive(Clone, Debug)]
pub struct GiTrace<T> {
    pub mode: GiMode,
    pub x: Matrix<T>,
    pub l: Matrix<T>,
    pub z: Matrix<T>,
    pub p: Matrix<T>,
    pub p_t_pre: Matrix<T>,
    pub p_t: Matrix<T>,
    pub semantic: Option<SemanticTrace<T>>,
    pub p_o: Matrix<T>,
}

#[derive(Clone, Debug)]
pub struct GiOutput<T> {
    pub x_tilde: Matrix<T>,
    /// Exemplar semantic graph; `None` unless the mode uses semantics.
    pub s_o: Option<Matrix<T>>,
    pub trace: GiTrace<T>,
}

pub fn gi_forward<T: Scalar>(
    x: &Matrix<T>,
    l: &Matrix<T>,
    proj: &ProjectionParams<T>,
    gi: &GiParams<T>,
    mode: GiMode,
) -> Result<GiOutput<T>> {
    let z = compute_assignment(x, &proj.w_z).stage("assignment")?.into_matrix();
    let p = project(x, &z, &proj.w).stage("projection")?;
    let (p_t, p_t_pre) = evolve_visual(&p, &gi.visual).stage("visual graph")?;

    let (p_o, semantic, s_o) = if mode.uses_semantics() {
        let (s, s_pre) = semantic_mlp(l, &gi.mlp).stage("semantic mlp")?;
        let (s_t, s_t_pre) = evolve_semantic(&s, &gi.semantic).stage("semantic graph")?;
        let logits = guidance_logits(&p_t, &s_t, &gi.guidance).stage("guidance")?;
        let g_s2v = row_softmax(&logits.s2v);
        let g_v2s = row_softmax(&logits.s2v.transpose());
        let p_o = s2v_update(&p_t, &s_t, &g_s2v, &gi.interaction).stage("s2v")?;
        let s_o = v2s_update(&p_t, &s_t, &g_v2s, &gi.interaction).stage("v2s")?;
        let trace = SemanticTrace {
            s_pre,
            s,
            s_t_pre,
            s_t,
            logits,
            g_s2v,
            g_v2s,
        };
        (p_o, Some(trace), Some(s_o))
    } else {
        (p_t.clone(), None, None)
    };

    let x_tilde = reproject(&p_o, &z, &proj.w_o, x).stage("reprojection")?;
    Ok(GiOutput {
        x_tilde,
        s_o,
        trace: GiTrace {
            mode,
            x: x.clone(),
            l: l.clone(),
            z,
            p,
            p_t_pre,
            p_t,
            semantic,
            p_o,
        },
    })
}

/// Backward through [`gi_forward`]. `d_s_o` is ignored (and may be `None`)
/// when the trace has no semantic half. Returns `(d_x, projection grads, unit grads)`.
pub fn gi_backward<T: Scalar>(
    trace: &GiTrace<T>,
    proj: &ProjectionParams<T>,
    gi: &GiParams<T>,
    d_x_tilde: &Matrix<T>,
    d_s_o: Option<&Matrix<T>>,
) -> Result<(Matrix<T>, ProjectionParams<T>, GiParams<T>)> {
    let mut g_proj = proj.zeros_like();
    let mut g_gi = gi.zeros_like();

    let (d_p_o, mut d_z, d_w_o, mut d_x) =
        reproject_backward(&trace.p_o, &trace.z, &proj.w_o, d_x_tilde).stage("reprojection")?;
    g_proj.w_o = d_w_o;

    let mut d_p_t;
    match (&trace.semantic, trace.mode.uses_semantics()) {
        (Some(sem), true) => {
            let ip = &gi.interaction;
            let zero_s_o;
            let d_s_o = match d_s_o {
                Some(d) => d,
                None => {
                    zero_s_o = Matrix::zeros(sem.s_t.rows(), sem.s_t.cols());
                    &zero_s_o
                }
            };
            let (a_p_t, a_s_t, d_g_v2s, d_w_v2s, d_b_v2s) =
                v2s_update_backward(&trace.p_t, &sem.s_t, &sem.g_v2s, ip, d_s_o).stage("v2s")?;
            let (b_p_t, b_s_t, d_g_s2v, d_w_s2v, d_b_s2v) =
                s2v_update_backward(&sem.s_t, &sem.g_s2v, ip, &d_p_o).stage("s2v")?;
            g_gi.interaction = InteractionParams {
                w_s2v: d_w_s2v,
                w_v2s: d_w_v2s,
                beta_s2v: d_b_s2v,
                beta_v2s: d_b_v2s,
            };
            let (c_p_t, c_s_t, d_w_p, d_w_s) = guidance_backward(
                &trace.p_t,
                &sem.s_t,
                &gi.guidance,
                &sem.logits,
                &sem.g_s2v,
                &d_g_s2v,
                &sem.g_v2s,
                &d_g_v2s,
            )
            .stage("guidance")?;
            g_gi.guidance = GuidanceParams { w_p: d_w_p, w_s: d_w_s };

            d_p_t = a_p_t;
            d_p_t.add_assign(&b_p_t)?;
            d_p_t.add_assign(&c_p_t)?;
            let mut d_s_t = a_s_t;
            d_s_t.add_assign(&b_s_t)?;
            d_s_t.add_assign(&c_s_t)?;

            let (d_s, d_a_s, d_w_sg) =
                graph_conv_backward(&sem.s, &gi.semantic, &sem.s_t_pre, &d_s_t).stage("semantic graph")?;
            g_gi.semantic = GraphConvParams {
                adjacency: d_a_s,
                weight: d_w_sg,
            };
            g_gi.mlp = semantic_mlp_backward(&trace.l, &sem.s_pre, &d_s).stage("semantic mlp")?;
        }
        (None, false) => d_p_t = d_p_o,
        _ => return Err(Error::Contract("trace does not match its recorded mode".into())),
    }

    let (d_p, d_a_v, d_w_v) =
        graph_conv_backward(&trace.p, &gi.visual, &trace.p_t_pre, &d_p_t).stage("visual graph")?;
    g_gi.visual = GraphConvParams {
        adjacency: d_a_v,
        weight: d_w_v,
    };

    let (dx_proj, dz_proj, d_w) = project_backward(&trace.x, &trace.z, &proj.w, &d_p).stage("projection")?;
    g_proj.w = d_w;
    d_x.add_assign(&dx_proj)?;
    d_z.add_assign(&dz_proj)?;

    let (dx_assign, d_w_z) = compute_assignment_backward(&trace.x, &proj.w_z, &trace.z, &d_z).stage("assignment")?;
    g_proj.w_z = d_w_z;
    d_x.add_assign(&dx_assign)?;
    Ok((d_x, g_proj, g_gi))
}
