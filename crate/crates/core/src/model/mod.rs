//! Backbone → graph interaction unit → classifier, with an auxiliary head
//! on the third backbone block and a presence-scoring head on the
//! exemplar semantic graph.

pub mod checkpoint;
pub mod conv;
mod params;
pub mod upsample;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use conv::{ConvParams, Spatial};
pub use params::{cooccurrence_adjacency, is_decayed, GINetParams, LinearParams, PARAM_NAMES};

use crate::error::{Error, Result, StageExt};
use crate::gi_unit::{gi_backward, gi_forward, GiMode, GiTrace};
use crate::losses::{pixel_cross_entropy, presence_backward, presence_scores, sc_loss_from_scores, LossWeights};
use crate::numerics::{add_row_bias, matmul, matmul_nt, matmul_tn, Matrix, Scalar};
use conv::{conv_relu, conv_relu_backward, ConvTrace};
use upsample::{bilinear_resize_backward, bilinear_upsample};

/// Initial semantic adjacency.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdjacencyInit {
    Random,
    /// Conditional co-occurrence of classes over the training scenes.
    Cooccurrence,
}

impl AdjacencyInit {
    pub fn code(self) -> u32 {
        match self {
            AdjacencyInit::Random => 0,
            AdjacencyInit::Cooccurrence => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(AdjacencyInit::Random),
            1 => Some(AdjacencyInit::Cooccurrence),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GINetConfig {
    /// Visual graph nodes `N`.
    pub nodes: usize,
    /// Node feature dimension `D`; must be even.
    pub node_dim: usize,
    /// Backbone output channels `C`.
    pub channels: usize,
    /// Word-vector dimension `K`.
    pub embed_dim: usize,
    /// Class count `M`.
    pub classes: usize,
    /// Output widths of backbone blocks 1–3; block 3 feeds the auxiliary head.
    pub widths: [usize; 3],
    /// Total backbone stride: 1, 2 or 4.
    pub stride: usize,
    pub gi_mode: GiMode,
    pub semantic_adjacency: AdjacencyInit,
}

impl Default for GINetConfig {
    fn default() -> Self {
        GINetConfig {
            nodes: 8,
            node_dim: 16,
            channels: 32,
            embed_dim: 50,
            classes: 6,
            widths: [8, 16, 32],
            stride: 4,
            gi_mode: GiMode::Full,
            semantic_adjacency: AdjacencyInit::Random,
        }
    }
}

impl GINetConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.nodes", self.nodes),
            ("model.node_dim", self.node_dim),
            ("model.channels", self.channels),
            ("model.embed_dim", self.embed_dim),
            ("model.widths[0]", self.widths[0]),
            ("model.widths[1]", self.widths[1]),
            ("model.widths[2]", self.widths[2]),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.node_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "model.node_dim = {} must be even",
                self.node_dim
            )));
        }
        if !(2..=254).contains(&self.classes) {
            return Err(Error::Config(format!(
                "class count {} must be in [2, 254]",
                self.classes
            )));
        }
        if ![1, 2, 4].contains(&self.stride) {
            return Err(Error::Config(format!(
                "model.stride = {} must be 1, 2 or 4",
                self.stride
            )));
        }
        Ok(())
    }

    /// Per-block strides; stride-2 blocks come first.
    pub fn block_strides(&self) -> [usize; 4] {
        match self.stride {
            4 => [2, 2, 1, 1],
            2 => [2, 1, 1, 1],
            _ => [1, 1, 1, 1],
        }
    }

    pub fn check_input(&self, dims: Spatial) -> Result<()> {
        if dims.height == 0
            || dims.width == 0
            || !dims.height.is_multiple_of(self.stride)
            || !dims.width.is_multiple_of(self.stride)
        {
            return Err(Error::Config(format!(
                "input {}x{} is not divisible by stride {}",
                dims.height, dims.width, self.stride
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    pub image_dims: Spatial,
    pub feature_dims: Spatial,
    pub backbone: Vec<ConvTrace<T>>,
    /// Output of block 3, `L × widths[2]`.
    pub mid: Matrix<T>,
    /// Output of block 4, `L × C`.
    pub x: Matrix<T>,
    pub gi: Option<GiTrace<T>>,
    pub x_tilde: Matrix<T>,
    pub aux_conv: ConvTrace<T>,
    pub aux_features: Matrix<T>,
    pub s_o: Option<Matrix<T>>,
    pub v: Option<Matrix<T>>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    /// `(H·W) × M` main logits.
    pub main: Matrix<T>,
    /// `(H·W) × M` auxiliary logits.
    pub aux: Matrix<T>,
    pub s_o: Option<Matrix<T>>,
    /// Presence scores `1 × M`.
    pub v: Option<Matrix<T>>,
    pub trace: ForwardTrace<T>,
}

/// Upstream gradients of the three heads.
#[derive(Clone, Debug)]
pub struct OutputGrads<T> {
    pub main: Matrix<T>,
    pub aux: Matrix<T>,
    /// Gradient w.r.t. the pre-sigmoid presence logits.
    pub presence: Option<Matrix<T>>,
}

/// Runs the four conv blocks; returns `(mid, x, traces, feature dims)`.
pub fn backbone_forward<T: Scalar>(
    image: &Matrix<T>,
    dims: Spatial,
    params: &GINetParams<T>,
    cfg: &GINetConfig,
) -> Result<(Matrix<T>, Matrix<T>, Vec<ConvTrace<T>>, Spatial)> {
    cfg.check_input(dims)?;
    let mut traces = Vec::with_capacity(4);
    let mut cur = image.clone();
    let mut cur_dims = dims;
    let mut mid = None;
    for (i, (p, &s)) in params.backbone.iter().zip(&cfg.block_strides()).enumerate() {
        let (out, od, tr) = conv_relu(&cur, cur_dims, p, s).stage("backbone")?;
        traces.push(tr);
        if i == 2 {
            mid = Some(out.clone());
        }
        cur = out;
        cur_dims = od;
    }
    Ok((mid.expect("four blocks"), cur, traces, cur_dims))
}

pub fn ginet_forward<T: Scalar>(
    image: &Matrix<T>,
    dims: Spatial,
    l_mat: &Matrix<T>,
    params: &GINetParams<T>,
    cfg: &GINetConfig,
) -> Result<ForwardOutput<T>> {
    if image.cols() != 3 {
        return Err(Error::shape("image", image.shape(), (dims.len(), 3)));
    }
    let (mid, x, backbone, fdims) = backbone_forward(image, dims, params, cfg)?;

    let (x_tilde, gi, s_o) = match cfg.gi_mode {
        GiMode::Off => (x.clone(), None, None),
        mode => {
            let out = gi_forward(&x, l_mat, &params.projection, &params.gi, mode).stage("gi unit")?;
            (out.x_tilde, Some(out.trace), out.s_o)
        }
    };
    let v = match &s_o {
        Some(s) => Some(presence_scores(s, &params.centroids).stage("presence head")?),
        None => None,
    };

    let main_low = params.classifier.forward(&x_tilde).stage("classifier")?;
    let main = bilinear_upsample(&main_low, fdims, dims).stage("upsample")?;

    let (aux_features, _, aux_conv) = conv_relu(&mid, fdims, &params.aux_conv, 1).stage("aux head")?;
    let aux_low = params.aux_classifier.forward(&aux_features).stage("aux head")?;
    let aux = bilinear_upsample(&aux_low, fdims, dims).stage("upsample")?;

    Ok(ForwardOutput {
        main,
        aux,
        s_o: s_o.clone(),
        v: v.clone(),
        trace: ForwardTrace {
            image_dims: dims,
            feature_dims: fdims,
            backbone,
            mid,
            x,
            gi,
            x_tilde,
            aux_conv,
            aux_features,
            s_o,
            v,
        },
    })
}

pub fn ginet_backward<T: Scalar>(
    trace: &ForwardTrace<T>,
    params: &GINetParams<T>,
    seeds: &OutputGrads<T>,
) -> Result<GINetParams<T>> {
    let mut grads = params.zeros_like();
    let (dims, fdims) = (trace.image_dims, trace.feature_dims);
    if trace.backbone.len() != params.backbone.len() || trace.x_tilde.cols() != params.classifier.weight.rows() {
        return Err(Error::Contract("trace does not match the parameter bundle".into()));
    }

    // main classifier
    let d_main_low = bilinear_resize_backward(&seeds.main, fdims, dims).stage("upsample")?;
    let (d_x_tilde, g_cls) = params.classifier.backward(&trace.x_tilde, &d_main_low)?;
    grads.classifier = g_cls;

    // presence head and graph unit
    let d_s_o = match (&seeds.presence, &trace.s_o) {
        (Some(d), Some(s_o)) => {
            let (d_s, d_c) = presence_backward(s_o, &params.centroids, d).stage("presence head")?;
            grads.centroids = d_c;
            Some(d_s)
        }
        _ => None,
    };
    let mut d_x = match &trace.gi {
        Some(gi_trace) => {
            let (d_x, g_proj, g_gi) =
                gi_backward(gi_trace, &params.projection, &params.gi, &d_x_tilde, d_s_o.as_ref()).stage("gi unit")?;
            grads.projection = g_proj;
            grads.gi = g_gi;
            d_x
        }
        None => d_x_tilde,
    };

    // auxiliary head
    let d_aux_low = bilinear_resize_backward(&seeds.aux, fdims, dims).stage("upsample")?;
    let (d_aux_feat, g_aux_cls) = params.aux_classifier.backward(&trace.aux_features, &d_aux_low)?;
    grads.aux_classifier = g_aux_cls;
    let (d_mid, g_aux_conv) = conv_relu_backward(&trace.aux_conv, &params.aux_conv, &d_aux_feat, true)?;
    grads.aux_conv = g_aux_conv;
    let mut d_mid = d_mid;

    // backbone, last block first
    for i in (0..4).rev() {
        let (d_in, g) = conv_relu_backward(&trace.backbone[i], &params.backbone[i], &d_x, i > 0).stage("backbone")?;
        grads.backbone[i] = g;
        if let Some(mut d_in) = d_in {
            if let (3, Some(d)) = (i, d_mid.take()) {
                d_in.add_assign(&d)?;
            }
            d_x = d_in;
        }
    }
    Ok(grads)
}

/// Per-sample loss terms (unweighted) and pixel counts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SampleLoss {
    pub total: f64,
    pub ce: f64,
    pub aux: f64,
    pub sc: f64,
    pub correct: usize,
    pub counted: usize,
}

/// Forward, weighted objective and (optionally) the full parameter gradient
/// for one sample. Loss terms whose weight is zero are not evaluated and
/// report 0.
pub fn sample_objective<T: Scalar>(
    image: &Matrix<T>,
    dims: Spatial,
    mask: &[u8],
    presence: &[T],
    l_mat: &Matrix<T>,
    params: &GINetParams<T>,
    cfg: &GINetConfig,
    weights: &LossWeights,
    sc_active: &[bool],
    with_grad: bool,
) -> Result<(SampleLoss, Option<GINetParams<T>>)> {
    let fwd = ginet_forward(image, dims, l_mat, params, cfg)?;
    let ignore = crate::losses::IGNORE_INDEX;
    let ce = pixel_cross_entropy(&fwd.main, mask, ignore).stage("cross entropy")?;
    let (aux_loss, d_aux) = if weights.alpha > 0.0 {
        let a = pixel_cross_entropy(&fwd.aux, mask, ignore).stage("aux cross entropy")?;
        (a.loss.as_f64(), a.d_logits.scale(T::of(weights.alpha)))
    } else {
        (0.0, Matrix::zeros(fwd.aux.rows(), fwd.aux.cols()))
    };
    let (sc_value, d_presence) = match (&fwd.v, weights.lambda > 0.0) {
        (Some(v), true) => {
            let sc = sc_loss_from_scores(v, presence, sc_active).stage("sc loss")?;
            (sc.loss.as_f64(), Some(sc.d_logits.scale(T::of(weights.lambda))))
        }
        _ => (0.0, None),
    };

    let (correct, counted) = pixel_hits(&fwd.main, mask);
    let ce_value = ce.loss.as_f64();
    let loss = SampleLoss {
        total: crate::losses::total_loss(ce_value, aux_loss, sc_value, weights),
        ce: ce_value,
        aux: aux_loss,
        sc: sc_value,
        correct,
        counted,
    };
    if !with_grad {
        return Ok((loss, None));
    }
    let seeds = OutputGrads {
        main: ce.d_logits,
        aux: d_aux,
        presence: d_presence,
    };
    Ok((loss, Some(ginet_backward(&fwd.trace, params, &seeds)?)))
}

/// Per-pixel argmax of a logit map.
pub fn argmax_rows<T: Scalar>(logits: &Matrix<T>) -> Vec<u8> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best as u8
        })
        .collect()
}

/// `(correct, counted)` over non-ignored pixels.
pub fn pixel_hits<T: Scalar>(logits: &Matrix<T>, mask: &[u8]) -> (usize, usize) {
    let pred = argmax_rows(logits);
    let mut correct = 0;
    let mut counted = 0;
    for (&p, &g) in pred.iter().zip(mask) {
        if g == crate::losses::IGNORE_INDEX {
            continue;
        }
        counted += 1;
        if p == g {
            correct += 1;
        }
    }
    (correct, counted)
}

impl<T: Scalar> LinearParams<T> {
    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        add_row_bias(&matmul(x, &self.weight)?, &self.bias)
    }

    /// `(d_x, grads)`
    pub fn backward(&self, x: &Matrix<T>, d_out: &Matrix<T>) -> Result<(Matrix<T>, LinearParams<T>)> {
        let grads = LinearParams {
            weight: matmul_tn(x, d_out)?,
            bias: d_out.col_sums(),
        };
        Ok((matmul_nt(d_out, &self.weight)?, grads))
    }
}
