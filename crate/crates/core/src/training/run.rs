use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::optim::{poly_lr, sgd_step, OptimState};
use crate::data::{augment, generate_dataset, ConfusionMatrix, SceneConfig, SceneSample};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::{
    argmax_rows, cooccurrence_adjacency, ginet_forward, sample_objective, AdjacencyInit, GINetConfig, GINetParams,
};
use crate::numerics::{CounterRng, Matrix};

pub const METRICS_HEADER: &str = "iter,lr,loss_total,loss_ce,loss_aux,loss_sc,pixacc,miou";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub power: f64,
    pub iters: usize,
    pub batch: usize,
    /// A metrics row is written every `log_interval` iterations.
    pub log_interval: usize,
    /// Full-set evaluation every `eval_interval` iterations.
    pub eval_interval: usize,
    pub augment: bool,
    /// Drives initialisation, batch sampling and augmentation.
    pub seed: u64,
    pub loss: LossWeights,
    /// When false, class 0 is left out of the presence loss.
    pub sc_include_background: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.001,
            momentum: 0.9,
            weight_decay: 1e-4,
            power: 0.9,
            iters: 200,
            batch: 4,
            log_interval: 10,
            eval_interval: 100,
            augment: true,
            seed: 1,
            loss: LossWeights::default(),
            sc_include_background: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return fail(format!("train.base_lr = {} must be positive", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("train.momentum = {} must be in [0, 1)", self.momentum));
        }
        if !(0.0..).contains(&self.weight_decay) {
            return fail(format!(
                "train.weight_decay = {} must be non-negative",
                self.weight_decay
            ));
        }
        if self.power.is_nan() || self.power <= 0.0 {
            return fail(format!("train.power = {} must be positive", self.power));
        }
        for (name, v) in [
            ("train.iters", self.iters),
            ("train.batch", self.batch),
            ("train.log_interval", self.log_interval),
            ("train.eval_interval", self.eval_interval),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        for (name, v) in [("loss.lambda", self.loss.lambda), ("loss.alpha", self.loss.alpha)] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} = {v} must be non-negative"));
            }
        }
        Ok(())
    }

    fn stream(&self, label: &str) -> CounterRng {
        CounterRng::derive_label(self.seed, label)
    }

    pub fn init_seed(&self) -> u64 {
        self.stream("init").at(0)
    }
}

/// One line of the metrics CSV. On evaluation rows `pixacc` and `miou`
/// come from the full scene set after the step; otherwise `pixacc` is the
/// batch accuracy before it.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_ce: f64,
    pub loss_aux: f64,
    pub loss_sc: f64,
    pub pixacc: f64,
    pub miou: Option<f64>,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        let miou = self.miou.map(|m| m.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iter, self.lr, self.loss_total, self.loss_ce, self.loss_aux, self.loss_sc, self.pixacc, miou
        )
    }
}

pub fn write_metrics_csv(rows: &[MetricsRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv_line())?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub miou: f64,
    pub pixel_accuracy: f64,
    pub per_class: Vec<Option<f64>>,
    pub confusion: ConfusionMatrix,
}

/// Argmax predictions over the set, confusion counts aggregated before IoU.
pub fn evaluate(
    params: &GINetParams<f32>,
    cfg: &GINetConfig,
    samples: &[SceneSample],
    l_mat: &Matrix<f32>,
) -> Result<EvalReport> {
    if l_mat.rows() != cfg.classes {
        return Err(Error::Config(format!(
            "model has {} classes but {} class embeddings were supplied",
            cfg.classes,
            l_mat.rows()
        )));
    }
    let mut cm = ConfusionMatrix::new(cfg.classes);
    for s in samples {
        if s.presence.len() != cfg.classes {
            return Err(Error::Config(format!(
                "model has {} classes but the data has {}",
                cfg.classes,
                s.presence.len()
            )));
        }
        let fwd = ginet_forward(&s.image.to_matrix(), s.image.dims(), l_mat, params, cfg)?;
        cm.add(&argmax_rows(&fwd.main), &s.mask)?;
    }
    Ok(EvalReport {
        miou: cm.miou(),
        pixel_accuracy: cm.pixel_accuracy(),
        per_class: cm.iou(),
        confusion: cm,
    })
}

pub struct TrainOutcome {
    pub params: GINetParams<f32>,
    pub rows: Vec<MetricsRow>,
    pub final_eval: EvalReport,
}

fn check_consistent(model: &GINetConfig, data: &SceneConfig, train: &TrainConfig, l_mat: &Matrix<f32>) -> Result<()> {
    model.validate()?;
    data.validate()?;
    train.validate()?;
    if model.classes != data.classes.len() {
        return Err(Error::Config(format!(
            "model.classes = {} but data.classes lists {}",
            model.classes,
            data.classes.len()
        )));
    }
    if !data.side.is_multiple_of(model.stride) {
        return Err(Error::Config(format!(
            "data.side = {} is not divisible by model.stride = {}",
            data.side, model.stride
        )));
    }
    if l_mat.shape() != (model.classes, model.embed_dim) {
        return Err(Error::Config(format!(
            "class embeddings are {:?}, expected ({}, {})",
            l_mat.shape(),
            model.classes,
            model.embed_dim
        )));
    }
    Ok(())
}

/// Runs the full schedule in single precision, single-threaded.
pub fn train_loop(
    model: &GINetConfig,
    data: &SceneConfig,
    train: &TrainConfig,
    l_mat: &Matrix<f32>,
) -> Result<TrainOutcome> {
    check_consistent(model, data, train, l_mat)?;
    let scenes = generate_dataset(data);
    let m = model.classes;
    let a_s = match model.semantic_adjacency {
        AdjacencyInit::Cooccurrence => {
            let y: Vec<Vec<f32>> = scenes.iter().map(|s| s.presence_vector()).collect();
            Some(cooccurrence_adjacency(&y, m))
        }
        AdjacencyInit::Random => None,
    };
    let mut params = GINetParams::<f32>::init(model, train.init_seed(), a_s)?;
    let mut state = OptimState::new(&params);
    let mut sc_active = vec![true; m];
    if !train.sc_include_background {
        sc_active[0] = false;
    }
    let batch_stream = train.stream("batch");
    let aug_stream = train.stream("augment");

    let mut rows = Vec::new();
    let mut final_eval = None;
    for iter in 0..train.iters {
        let lr = poly_lr(train.base_lr, iter, train.iters, train.power)?;
        let mut grad_sum: Option<GINetParams<f32>> = None;
        let (mut total, mut ce, mut aux, mut sc) = (0.0, 0.0, 0.0, 0.0);
        let (mut correct, mut counted) = (0usize, 0usize);
        for b in 0..train.batch {
            let k = (iter * train.batch + b) as u64;
            let scene = CounterRng::new(batch_stream.at(k)).below(scenes.len() as u64) as usize;
            let sample = if train.augment {
                augment(&scenes[scene], aug_stream.at(k))
            } else {
                scenes[scene].clone()
            };
            let (loss, grads) = sample_objective(
                &sample.image.to_matrix(),
                sample.image.dims(),
                &sample.mask,
                &sample.presence_vector(),
                l_mat,
                &params,
                model,
                &train.loss,
                &sc_active,
                true,
            )?;
            let non_finite = |detail: String| Error::NonFinite {
                iter,
                sample: b,
                scene,
                detail,
            };
            if !loss.total.is_finite() {
                return Err(non_finite(format!("ce={} aux={} sc={}", loss.ce, loss.aux, loss.sc)));
            }
            let grads = grads.expect("gradient requested");
            if !grads.is_finite() {
                return Err(non_finite("non-finite gradient".into()));
            }
            match grad_sum.as_mut() {
                Some(acc) => acc.add_assign(&grads)?,
                None => grad_sum = Some(grads),
            }
            total += loss.total;
            ce += loss.ce;
            aux += loss.aux;
            sc += loss.sc;
            correct += loss.correct;
            counted += loss.counted;
        }
        let mut grads = grad_sum.expect("batch is non-empty");
        grads.scale_in_place(1.0 / train.batch as f32);
        sgd_step(&mut params, &grads, &mut state, lr, train.momentum, train.weight_decay)?;

        let last = iter + 1 == train.iters;
        let eval_now = (iter + 1) % train.eval_interval == 0 || last;
        if iter % train.log_interval == 0 || eval_now {
            let n = train.batch as f64;
            let mut row = MetricsRow {
                iter,
                lr,
                loss_total: total / n,
                loss_ce: ce / n,
                loss_aux: aux / n,
                loss_sc: sc / n,
                pixacc: if counted == 0 {
                    0.0
                } else {
                    correct as f64 / counted as f64
                },
                miou: None,
            };
            if eval_now {
                let report = evaluate(&params, model, &scenes, l_mat)?;
                row.pixacc = report.pixel_accuracy;
                row.miou = Some(report.miou);
                final_eval = Some(report);
            }
            log::info!(
                "iter {iter} lr {lr:.3e} loss {:.4} (ce {:.4} aux {:.4} sc {:.4}) pixacc {:.4}{}",
                row.loss_total,
                row.loss_ce,
                row.loss_aux,
                row.loss_sc,
                row.pixacc,
                row.miou.map(|m| format!(" miou {m:.4}")).unwrap_or_default()
            );
            rows.push(row);
        }
    }
    Ok(TrainOutcome {
        params,
        rows,
        final_eval: final_eval.expect("last iteration evaluates"),
    })
}

pub fn sweep_file_name(lambda: f64) -> String {
    format!("metrics_lambda_{lambda:.1}.csv")
}

/// Trains once per λ and writes one metrics file each into `out_dir`.
pub fn lambda_sweep(
    model: &GINetConfig,
    data: &SceneConfig,
    train: &TrainConfig,
    l_mat: &Matrix<f32>,
    lambdas: &[f64],
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    for &lambda in lambdas {
        let cfg = TrainConfig {
            loss: LossWeights { lambda, ..train.loss },
            ..train.clone()
        };
        let outcome = train_loop(model, data, &cfg, l_mat)?;
        let path = out_dir.join(sweep_file_name(lambda));
        write_metrics_csv(&outcome.rows, fs::File::create(&path)?)?;
        files.push(path);
    }
    Ok(files)
}
