use super::{AdjacencyInit, ConvParams, GINetConfig};
use crate::error::{Error, Result};
use crate::gi_unit::{GiDims, GiParams};
use crate::numerics::{seeded_init, CounterRng, Init, Matrix, Scalar};
use crate::projection::ProjectionParams;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams<T> {
    pub weight: Matrix<T>,
    pub bias: Matrix<T>,
}

/// Every learnable tensor of the network. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct GINetParams<T> {
    pub backbone: [ConvParams<T>; 4],
    pub aux_conv: ConvParams<T>,
    pub aux_classifier: LinearParams<T>,
    pub projection: ProjectionParams<T>,
    pub gi: GiParams<T>,
    /// Semantic centroids `c_i`, `M × D`.
    pub centroids: Matrix<T>,
    pub classifier: LinearParams<T>,
}

/// Canonical tensor order, used by the optimizer and the checkpoint format.
pub const PARAM_NAMES: [&str; 30] = [
    "backbone.0.weight",
    "backbone.0.bias",
    "backbone.1.weight",
    "backbone.1.bias",
    "backbone.2.weight",
    "backbone.2.bias",
    "backbone.3.weight",
    "backbone.3.bias",
    "aux.conv.weight",
    "aux.conv.bias",
    "aux.classifier.weight",
    "aux.classifier.bias",
    "projection.w_z",
    "projection.w",
    "projection.w_o",
    "gi.mlp.weight",
    "gi.mlp.bias",
    "gi.visual.adjacency",
    "gi.visual.weight",
    "gi.semantic.adjacency",
    "gi.semantic.weight",
    "gi.guidance.w_p",
    "gi.guidance.w_s",
    "gi.interaction.w_s2v",
    "gi.interaction.w_v2s",
    "gi.interaction.beta_s2v",
    "gi.interaction.beta_v2s",
    "sc.centroids",
    "classifier.weight",
    "classifier.bias",
];

/// Weight decay applies to everything except biases and interaction gates.
pub fn is_decayed(name: &str) -> bool {
    !(name.ends_with(".bias") || name.contains(".beta_"))
}

fn param_seed(seed: u64, name: &str) -> u64 {
    CounterRng::derive_label(seed, name).at(0)
}

fn conv<T: Scalar>(cin: usize, cout: usize, seed: u64, name: &str) -> Result<ConvParams<T>> {
    Ok(ConvParams {
        weight: seeded_init(9 * cin, cout, Init::fan_in_rows(9 * cin), param_seed(seed, name))?,
        bias: Matrix::zeros(1, cout),
    })
}

fn linear<T: Scalar>(cin: usize, cout: usize, seed: u64, name: &str) -> Result<LinearParams<T>> {
    Ok(LinearParams {
        weight: seeded_init(cin, cout, Init::fan_in_rows(cin), param_seed(seed, name))?,
        bias: Matrix::zeros(1, cout),
    })
}

impl<T: Scalar> GINetParams<T> {
    /// Seeded initialisation. `semantic_adjacency` is required when the
    /// config asks for co-occurrence initialisation.
    pub fn init(cfg: &GINetConfig, seed: u64, semantic_adjacency: Option<Matrix<T>>) -> Result<Self> {
        cfg.validate()?;
        let [w1, w2, w3] = cfg.widths;
        let (c, m, d) = (cfg.channels, cfg.classes, cfg.node_dim);
        let a_s =
            match cfg.semantic_adjacency {
                AdjacencyInit::Random => None,
                AdjacencyInit::Cooccurrence => Some(semantic_adjacency.ok_or_else(|| {
                    Error::Config("co-occurrence adjacency requested but no statistics supplied".into())
                })?),
            };
        let dims = GiDims {
            nodes: cfg.nodes,
            classes: m,
            node_dim: d,
            embed_dim: cfg.embed_dim,
        };
        Ok(GINetParams {
            backbone: [
                conv(3, w1, seed, "backbone.0")?,
                conv(w1, w2, seed, "backbone.1")?,
                conv(w2, w3, seed, "backbone.2")?,
                conv(w3, c, seed, "backbone.3")?,
            ],
            aux_conv: conv(w3, w3, seed, "aux.conv")?,
            aux_classifier: linear(w3, m, seed, "aux.classifier")?,
            projection: ProjectionParams::init(cfg.nodes, c, d, |l| param_seed(seed, &format!("projection.{l}")))?,
            gi: GiParams::init(dims, a_s, |l| param_seed(seed, &format!("gi.{l}")))?,
            centroids: seeded_init(m, d, Init::FanInUniform { fan_in: d }, param_seed(seed, "sc.centroids"))?,
            classifier: linear(c, m, seed, "classifier")?,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, m) in out.tensors_mut() {
            m.fill(T::zero());
        }
        out
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Matrix<T>)> {
        let GINetParams {
            backbone: [b0, b1, b2, b3],
            aux_conv,
            aux_classifier,
            projection: p,
            gi,
            centroids,
            classifier,
        } = self;
        let list = [
            &b0.weight,
            &b0.bias,
            &b1.weight,
            &b1.bias,
            &b2.weight,
            &b2.bias,
            &b3.weight,
            &b3.bias,
            &aux_conv.weight,
            &aux_conv.bias,
            &aux_classifier.weight,
            &aux_classifier.bias,
            &p.w_z,
            &p.w,
            &p.w_o,
            &gi.mlp.w,
            &gi.mlp.b,
            &gi.visual.adjacency,
            &gi.visual.weight,
            &gi.semantic.adjacency,
            &gi.semantic.weight,
            &gi.guidance.w_p,
            &gi.guidance.w_s,
            &gi.interaction.w_s2v,
            &gi.interaction.w_v2s,
            &gi.interaction.beta_s2v,
            &gi.interaction.beta_v2s,
            centroids,
            &classifier.weight,
            &classifier.bias,
        ];
        PARAM_NAMES.into_iter().zip(list).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix<T>)> {
        let GINetParams {
            backbone: [b0, b1, b2, b3],
            aux_conv,
            aux_classifier,
            projection: p,
            gi,
            centroids,
            classifier,
        } = self;
        let list = [
            &mut b0.weight,
            &mut b0.bias,
            &mut b1.weight,
            &mut b1.bias,
            &mut b2.weight,
            &mut b2.bias,
            &mut b3.weight,
            &mut b3.bias,
            &mut aux_conv.weight,
            &mut aux_conv.bias,
            &mut aux_classifier.weight,
            &mut aux_classifier.bias,
            &mut p.w_z,
            &mut p.w,
            &mut p.w_o,
            &mut gi.mlp.w,
            &mut gi.mlp.b,
            &mut gi.visual.adjacency,
            &mut gi.visual.weight,
            &mut gi.semantic.adjacency,
            &mut gi.semantic.weight,
            &mut gi.guidance.w_p,
            &mut gi.guidance.w_s,
            &mut gi.interaction.w_s2v,
            &mut gi.interaction.w_v2s,
            &mut gi.interaction.beta_s2v,
            &mut gi.interaction.beta_v2s,
            centroids,
            &mut classifier.weight,
            &mut classifier.bias,
        ];
        PARAM_NAMES.into_iter().zip(list).collect()
    }

    pub fn cast<U: Scalar>(&self) -> GINetParams<U> {
        GINetParams::<U> {
            backbone: std::array::from_fn(|i| ConvParams {
                weight: self.backbone[i].weight.cast(),
                bias: self.backbone[i].bias.cast(),
            }),
            aux_conv: ConvParams {
                weight: self.aux_conv.weight.cast(),
                bias: self.aux_conv.bias.cast(),
            },
            aux_classifier: LinearParams {
                weight: self.aux_classifier.weight.cast(),
                bias: self.aux_classifier.bias.cast(),
            },
            projection: ProjectionParams {
                w_z: self.projection.w_z.cast(),
                w: self.projection.w.cast(),
                w_o: self.projection.w_o.cast(),
            },
            gi: cast_gi(&self.gi),
            centroids: self.centroids.cast(),
            classifier: LinearParams {
                weight: self.classifier.weight.cast(),
                bias: self.classifier.bias.cast(),
            },
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, s: T) {
        for (_, m) in self.tensors_mut() {
            m.as_mut_slice().iter_mut().for_each(|x| *x *= s);
        }
    }
}

fn cast_gi<T: Scalar, U: Scalar>(gi: &GiParams<T>) -> GiParams<U> {
    use crate::gi_unit::{GraphConvParams, GuidanceParams, InteractionParams, MlpParams};
    GiParams {
        mlp: MlpParams {
            w: gi.mlp.w.cast(),
            b: gi.mlp.b.cast(),
        },
        visual: GraphConvParams {
            adjacency: gi.visual.adjacency.cast(),
            weight: gi.visual.weight.cast(),
        },
        semantic: GraphConvParams {
            adjacency: gi.semantic.adjacency.cast(),
            weight: gi.semantic.weight.cast(),
        },
        guidance: GuidanceParams {
            w_p: gi.guidance.w_p.cast(),
            w_s: gi.guidance.w_s.cast(),
        },
        interaction: InteractionParams {
            w_s2v: gi.interaction.w_s2v.cast(),
            w_v2s: gi.interaction.w_v2s.cast(),
            beta_s2v: gi.interaction.beta_s2v.cast(),
            beta_v2s: gi.interaction.beta_v2s.cast(),
        },
    }
}

/// `A[i][j] = P(class j present | class i present)` over the given presence
/// vectors, zero diagonal; rows of never-present classes stay zero.
pub fn cooccurrence_adjacency<T: Scalar>(presence: &[Vec<T>], classes: usize) -> Matrix<T> {
    let mut counts = Matrix::<f64>::zeros(classes, classes);
    for y in presence {
        for i in (0..classes).filter(|&i| y[i] > T::zero()) {
            for j in (0..classes).filter(|&j| y[j] > T::zero()) {
                counts[(i, j)] += 1.0;
            }
        }
    }
    let mut a = Matrix::zeros(classes, classes);
    for i in 0..classes {
        let n = counts[(i, i)];
        if n == 0.0 {
            continue;
        }
        for j in (0..classes).filter(|&j| j != i) {
            a[(i, j)] = T::of(counts[(i, j)] / n);
        }
    }
    a
}
