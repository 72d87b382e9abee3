//! Command-line entry point: `train`, `eval`, `gradcheck` and
//! `inspect-projection`.
//!
//! Exit codes: 0 success, 1 gradient-check failure, 2 usage or
//! configuration error, 3 numeric failure.

pub mod config;
pub mod suite;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::generate_dataset;
use crate::data::generate_scene;
use crate::data::netpbm::{encode_pgm, encode_ppm};
use crate::error::{Error, Result};
use crate::model::{ginet_forward, load_checkpoint, save_checkpoint, Checkpoint};
use crate::numerics::CounterRng;
use crate::training::{evaluate, lambda_sweep, train_loop, write_metrics_csv, EvalReport};
pub use config::RunConfig;
use suite::{run_suite, SuiteOptions, DEFAULT_SEEDS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "ginet", version, about = "Graph interaction network for toy scene parsing")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Run configuration (`key = value` lines); the bundled toy config when absent.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override a configuration key; repeatable, applied after the file.
    #[arg(long = "set", global = true, value_name = "K=V")]
    pub set: Vec<String>,
    /// Master seed (initialisation, batching, augmentation, gradient-check points).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Word-vector file in GloVe text format.
    #[arg(long, global = true, value_name = "PATH")]
    pub embeddings: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train on the configured scene set; writes metrics.csv and final.ckpt.
    Train {
        /// Run once per value of `sweep.lambdas` instead, one metrics file each.
        #[arg(long)]
        sweep: bool,
    },
    /// Evaluate a checkpoint on the configured scene set.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Check every backward pass against central differences.
    Gradcheck {
        /// Perturb the named op's backward (negative control).
        #[arg(long, hide = true, value_name = "OP")]
        corrupt_backward: Option<String>,
    },
    /// Write the projection heatmaps of one scene as PGM files.
    InspectProjection {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "N", default_value_t = 0)]
        sample: usize,
    },
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Stage { source, .. } => exit_code(source),
        Error::NonFinite { .. } | Error::Probe { .. } => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut overrides = common.set.clone();
    if let Some(s) = common.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(o) = &common.out {
        overrides.push(format!("output.dir={}", o.display()));
    }
    if let Some(p) = &common.embeddings {
        overrides.push(format!("embeddings.path={}", p.display()));
    }
    RunConfig::load(common.config.as_deref(), &overrides)
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let cfg = resolve(&cli.common)?;
    match &cli.command {
        Command::Train { sweep } => cmd_train(&cfg, *sweep),
        Command::Eval { checkpoint } => cmd_eval(&cfg, checkpoint),
        Command::Gradcheck { corrupt_backward } => cmd_gradcheck(&cfg, cli.common.seed, corrupt_backward.clone()),
        Command::InspectProjection { checkpoint, sample } => cmd_inspect_projection(&cfg, checkpoint, *sample),
    }
}

pub fn cmd_train(cfg: &RunConfig, sweep: bool) -> Result<i32> {
    let l_mat = cfg.semantic_inputs()?;
    fs::create_dir_all(&cfg.output_dir)?;
    if sweep {
        let files = lambda_sweep(
            &cfg.model,
            &cfg.data,
            &cfg.train,
            &l_mat,
            &cfg.sweep_lambdas,
            &cfg.output_dir,
        )?;
        for f in files {
            println!("wrote {}", f.display());
        }
        return Ok(EXIT_OK);
    }
    let outcome = train_loop(&cfg.model, &cfg.data, &cfg.train, &l_mat)?;
    let metrics = cfg.output_dir.join("metrics.csv");
    write_metrics_csv(&outcome.rows, fs::File::create(&metrics)?)?;
    let ckpt = cfg.output_dir.join("final.ckpt");
    save_checkpoint(&ckpt, &cfg.model, &outcome.params)?;
    print_report(&outcome.final_eval, &cfg.data.classes, &mut std::io::stdout())?;
    println!("wrote {} and {}", metrics.display(), ckpt.display());
    Ok(EXIT_OK)
}

fn load_compatible(cfg: &RunConfig, path: &Path) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if ck.config != cfg.model {
        return Err(Error::Config(format!(
            "checkpoint {} was trained with {:?}, but the configuration describes {:?}",
            path.display(),
            ck.config,
            cfg.model
        )));
    }
    Ok(ck)
}

/// Per-class table, mIoU and pixel accuracy as `name,value` CSV lines.
pub fn report_csv(report: &EvalReport, classes: &[String]) -> String {
    let mut s = String::from("name,value\n");
    s += &format!("miou,{}\npixacc,{}\n", report.miou, report.pixel_accuracy);
    for (name, iou) in classes.iter().zip(&report.per_class) {
        s += &format!("iou_{name},{}\n", iou.map(|v| v.to_string()).unwrap_or_default());
    }
    s
}

fn print_report(report: &EvalReport, classes: &[String], out: &mut impl Write) -> Result<()> {
    writeln!(out, "mIoU   {:.4}", report.miou)?;
    writeln!(out, "pixacc {:.4}", report.pixel_accuracy)?;
    writeln!(out, "{:<12} IoU", "class")?;
    for (name, iou) in classes.iter().zip(&report.per_class) {
        match iou {
            Some(v) => writeln!(out, "{name:<12} {v:.4}")?,
            None => writeln!(out, "{name:<12} -")?,
        }
    }
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<i32> {
    let ck = load_compatible(cfg, checkpoint)?;
    let l_mat = cfg.semantic_inputs()?;
    let report = evaluate(&ck.params, &ck.config, &generate_dataset(&cfg.data), &l_mat)?;
    print_report(&report, &cfg.data.classes, &mut std::io::stdout())?;
    fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("eval.csv");
    fs::write(&path, report_csv(&report, &cfg.data.classes))?;
    println!("wrote {}", path.display());
    Ok(EXIT_OK)
}

/// The three suite seeds: fixed defaults, or derived from `--seed`.
pub fn suite_seeds(seed: Option<u64>) -> Vec<u64> {
    match seed {
        None => DEFAULT_SEEDS.to_vec(),
        Some(s) => (0..3).map(|i| CounterRng::derive(s, i).at(0)).collect(),
    }
}

pub fn cmd_gradcheck(cfg: &RunConfig, seed: Option<u64>, corrupt: Option<String>) -> Result<i32> {
    let opts = SuiteOptions {
        seeds: suite_seeds(seed),
        max_probes_per_tensor: (cfg.gradcheck_max_probes > 0).then_some(cfg.gradcheck_max_probes),
        corrupt,
    };
    let entries = run_suite(&opts)?;
    let mut failed = Vec::new();
    for e in &entries {
        let status = if e.passes() { "ok  " } else { "FAIL" };
        println!("{status} seed={:<20} {}", e.seed, e.report);
        if !e.passes() {
            failed.push(e);
        }
    }
    if failed.is_empty() {
        println!(
            "gradcheck: {} reports, all within {:e}",
            entries.len(),
            suite::TOLERANCE
        );
        Ok(EXIT_OK)
    } else {
        for e in &failed {
            eprintln!(
                "gradcheck failure: {} (seed {}) worst {}[{},{}] rel err {:.3e}",
                e.report.op, e.seed, e.report.worst_tensor, e.report.worst.0, e.report.worst.1, e.report.max_rel_error
            );
        }
        Ok(EXIT_CHECK)
    }
}

/// `v / max · 255`, rounded.
pub fn heatmap_bytes(values: &[f32]) -> Vec<u8> {
    let max = values.iter().fold(0f32, |a, &b| a.max(b));
    values
        .iter()
        .map(|&v| {
            if max > 0.0 {
                (v / max * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect()
}

pub fn cmd_inspect_projection(cfg: &RunConfig, checkpoint: &Path, sample: usize) -> Result<i32> {
    let ck = load_compatible(cfg, checkpoint)?;
    if sample >= cfg.data.scenes {
        return Err(Error::Config(format!(
            "--sample {sample} is out of range for {} scenes",
            cfg.data.scenes
        )));
    }
    let scene = generate_scene(&cfg.data, sample as u64);
    let l_mat = cfg.semantic_inputs()?;
    let fwd = ginet_forward(
        &scene.image.to_matrix(),
        scene.image.dims(),
        &l_mat,
        &ck.params,
        &ck.config,
    )?;
    let gi = fwd
        .trace
        .gi
        .ok_or_else(|| Error::Config("model.gi_mode = off has no projection to inspect".into()))?;
    let fd = fwd.trace.feature_dims;
    fs::create_dir_all(&cfg.output_dir)?;
    let input = cfg.output_dir.join("input.ppm");
    fs::write(
        &input,
        encode_ppm(scene.image.width, scene.image.height, &scene.image.to_rgb8()),
    )?;
    for n in 0..gi.z.rows() {
        let path = cfg.output_dir.join(format!("node_{n:02}.pgm"));
        fs::write(&path, encode_pgm(fd.width, fd.height, &heatmap_bytes(gi.z.row(n))))?;
    }
    println!(
        "wrote {} and {} node heatmaps ({}x{}) to {}",
        input.display(),
        gi.z.rows(),
        fd.width,
        fd.height,
        cfg.output_dir.display()
    );
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        let nf = Error::NonFinite {
            iter: 0,
            sample: 0,
            scene: 0,
            detail: String::new(),
        };
        assert_eq!(exit_code(&nf), EXIT_NUMERIC);
        let wrapped = Error::Stage {
            stage: "s",
            source: Box::new(nf),
        };
        assert_eq!(exit_code(&wrapped), EXIT_NUMERIC);
    }

    #[test]
    fn heatmap_normalisation() {
        assert_eq!(heatmap_bytes(&[0.0, 0.5, 1.0]), vec![0, 128, 255]);
        assert_eq!(heatmap_bytes(&[0.0, 0.0]), vec![0, 0]);
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["ginet", "frobnicate"]), EXIT_CONFIG);
        assert_eq!(
            run(["ginet", "--config", "/nonexistent/x.conf", "gradcheck"]),
            EXIT_CONFIG
        );
    }

    #[test]
    fn seeds_follow_override() {
        assert_eq!(suite_seeds(None), DEFAULT_SEEDS.to_vec());
        let s = suite_seeds(Some(9));
        assert_eq!(s.len(), 3);
        assert_eq!(s, suite_seeds(Some(9)));
    }
}
