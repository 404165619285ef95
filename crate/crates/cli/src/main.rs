//! `mimnet`: reproducible runs over the whole pipeline. Subcommands
//! generate oracle datasets, train (fresh or transferred), evaluate
//! checkpoints, predict single spectra and run design sweeps.
//!
//! Exit codes are a stable scripting contract: 0 success, 64 usage,
//! 65 refused configuration, 66 unreadable or invalid input file,
//! 2 output I/O failure. Progress goes to stderr, results to stdout
//! or the requested output files.

use clap::{Parser, Subcommand};
use mimnet_core::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use mimnet_core::data::{
    fmt_f64, generate_grid, is_extrapolated, normalize_geometry, read_dataset, split,
    write_dataset, Dataset, GeometrySample, MetalKind, SPECTRUM_POINTS,
};
use mimnet_core::model::{predict, ModelParams};
use mimnet_core::numeric::DenseMatrix;
use mimnet_core::sweeps::{
    find_resonance, phase_at, run_sweep, FixedParams, SweepBackend, SweepError, SweepRow,
    SweepSpec, VaryParam,
};
use mimnet_core::training::{run_training, InitSpec, TrainConfig, TrainObserver, MAX_EPOCH_BUDGET};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

const EXIT_IO: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_REFUSED: u8 = 65;
const EXIT_BAD_INPUT: u8 = 66;

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(m: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: m.into(),
        }
    }
    fn refused(m: impl Into<String>) -> Self {
        Failure {
            code: EXIT_REFUSED,
            message: m.into(),
        }
    }
    fn bad_input(m: impl Into<String>) -> Self {
        Failure {
            code: EXIT_BAD_INPUT,
            message: m.into(),
        }
    }
    fn io(m: impl Into<String>) -> Self {
        Failure {
            code: EXIT_IO,
            message: m.into(),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "mimnet",
    version,
    about = "Surrogate modeling of MIM metasurface spectra"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the full 6561-sample oracle dataset for one metal
    GenData {
        /// Metal: al, au or ag
        #[arg(long)]
        metal: String,
        /// Dataset CSV path (a .meta.json sidecar is written next to it)
        #[arg(long)]
        out: PathBuf,
        /// Provenance seed recorded in the sidecar
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on a dataset: seeded split, inherited k-fold, fine-tune
    Train {
        /// Dataset CSV produced by gen-data
        #[arg(long)]
        data: PathBuf,
        /// Warm-start from this checkpoint (transfer learning)
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 100)]
        epochs_per_fold: usize,
        /// Stage-1 learning rate; on silver transfer runs the generic
        /// default is replaced by 3e-4
        #[arg(long, default_value_t = 5e-4)]
        lr: f64,
        #[arg(long, default_value_t = 1e-4)]
        finetune_lr: f64,
        #[arg(long, default_value_t = 100)]
        finetune_epochs: usize,
        #[arg(long, default_value_t = 128)]
        batch: usize,
        /// Split / shuffle / init seed; identical seeds reproduce runs bit for bit
        #[arg(long)]
        seed: u64,
        /// Checkpoint output path
        #[arg(long)]
        out: PathBuf,
        /// Run report output path (JSON)
        #[arg(long)]
        report: PathBuf,
        /// Permit more than the 1100-epoch budget
        #[arg(long)]
        allow_over_budget: bool,
    },
    /// Evaluate a checkpoint on a dataset, printing the dB loss
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Which samples: test, pool or all
        #[arg(long, default_value = "all")]
        split: String,
        /// Split seed; required for test/pool (must match the training run)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predict one spectrum from a geometry
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        /// Geometry as H,P,R,T in nm
        #[arg(long)]
        geometry: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep one geometry parameter and tabulate the spectra
    Sweep {
        /// Oracle backend: al, au or ag
        #[arg(long)]
        oracle: Option<String>,
        /// Model backend: a trained checkpoint
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Parameter to vary: H, P, R or T
        #[arg(long)]
        vary: String,
        /// start:stop:step in nm, endpoints inclusive
        #[arg(long)]
        range: String,
        /// The other three parameters, e.g. H=30,P=300,T=80
        #[arg(long)]
        fixed: String,
        /// Add a phase_at_probe column at this wavelength (nm)
        #[arg(long)]
        probe_phase: Option<f64>,
        /// Add a resonance_nm column
        #[arg(long)]
        find_resonance: bool,
        /// Permit model-backend rows outside the training ranges
        #[arg(long)]
        allow_extrapolation: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::GenData { metal, out, seed } => cmd_gen_data(&metal, &out, seed),
        Cmd::Train {
            data,
            init,
            folds,
            epochs_per_fold,
            lr,
            finetune_lr,
            finetune_epochs,
            batch,
            seed,
            out,
            report,
            allow_over_budget,
        } => {
            let config = TrainConfig {
                folds,
                epochs_per_fold,
                stage1_lr: lr,
                finetune_lr,
                finetune_epochs,
                batch_size: batch,
                seed,
                init: match init {
                    Some(p) => InitSpec::FromCheckpoint(p),
                    None => InitSpec::Fresh,
                },
            };
            cmd_train(&data, config, &out, &report, allow_over_budget)
        }
        Cmd::Evaluate {
            ckpt,
            data,
            split,
            seed,
        } => cmd_evaluate(&ckpt, &data, &split, seed),
        Cmd::Predict {
            ckpt,
            geometry,
            out,
        } => cmd_predict(&ckpt, &geometry, &out),
        Cmd::Sweep {
            oracle,
            ckpt,
            vary,
            range,
            fixed,
            probe_phase,
            find_resonance,
            allow_extrapolation,
            out,
        } => cmd_sweep(SweepArgs {
            oracle,
            ckpt,
            vary,
            range,
            fixed,
            probe_phase,
            find_resonance,
            allow_extrapolation,
            out,
        }),
    }
}

fn parse_metal(s: &str) -> Result<MetalKind, Failure> {
    MetalKind::from_str(s).map_err(|e| Failure::usage(e.to_string()))
}

fn load_dataset(path: &Path) -> Result<Dataset, Failure> {
    read_dataset(path).map_err(|e| Failure::bad_input(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<ModelParams, Failure> {
    let (params, _, _) = load_checkpoint(path)
        .map_err(|e| Failure::bad_input(format!("{}: {e}", path.display())))?;
    Ok(params)
}

fn cmd_gen_data(metal: &str, out: &Path, seed: u64) -> Result<(), Failure> {
    let metal = parse_metal(metal)?;
    let ds = generate_grid(metal, seed);
    write_dataset(&ds, out).map_err(|e| Failure::io(format!("{}: {e}", out.display())))?;
    eprintln!("wrote {} samples to {}", ds.samples.len(), out.display());
    Ok(())
}

struct StderrProgress {
    folds: usize,
}

impl TrainObserver for StderrProgress {
    fn fold_finished(&mut self, fold: usize, val_db: f64, _params: &ModelParams) {
        eprintln!(
            "fold {}/{}: validation {:.2} dB",
            fold + 1,
            self.folds,
            val_db
        );
    }
}

fn cmd_train(
    data: &Path,
    config: TrainConfig,
    out: &Path,
    report_path: &Path,
    allow_over_budget: bool,
) -> Result<(), Failure> {
    // flag sanity first, then the budget gate, then any file I/O
    config
        .validate()
        .map_err(|e| Failure::usage(e.to_string()))?;
    let budget = config.epoch_budget();
    if budget > MAX_EPOCH_BUDGET && !allow_over_budget {
        return Err(Failure::refused(format!(
            "epoch budget {budget} exceeds {MAX_EPOCH_BUDGET} \
             (folds x epochs-per-fold + finetune-epochs); pass --allow-over-budget to override"
        )));
    }
    let dataset = load_dataset(data)?;
    let mut progress = StderrProgress {
        folds: config.folds,
    };
    let outcome = run_training(&dataset, &config, &mut progress).map_err(|e| {
        use mimnet_core::training::TrainError;
        match e {
            TrainError::Checkpoint(_) | TrainError::Data(_) => Failure::bad_input(e.to_string()),
            other => Failure::refused(other.to_string()),
        }
    })?;
    let meta = CheckpointMeta {
        metal: dataset.metal,
        seed: config.seed,
        epochs_total: outcome.epochs_total,
    };
    save_checkpoint(out, &outcome.params, &meta, Some(&outcome.optimizer))
        .map_err(|e| Failure::io(format!("{}: {e}", out.display())))?;
    let mut report =
        serde_json::to_string_pretty(&outcome.report).expect("report serialization cannot fail");
    report.push('\n');
    fs::write(report_path, report)
        .map_err(|e| Failure::io(format!("{}: {e}", report_path.display())))?;
    eprintln!(
        "test {:.2} dB, checkpoint {}, report {}",
        outcome.report.test_db,
        out.display(),
        report_path.display()
    );
    Ok(())
}

fn cmd_evaluate(ckpt: &Path, data: &Path, which: &str, seed: Option<u64>) -> Result<(), Failure> {
    let params = load_model(ckpt)?;
    let dataset = load_dataset(data)?;
    let samples = match which {
        "all" => dataset.samples.clone(),
        "test" | "pool" => {
            let seed = seed.ok_or_else(|| {
                Failure::usage(format!(
                    "--split {which} needs --seed to recompute the split"
                ))
            })?;
            let (pool, test) =
                split(&dataset, seed).map_err(|e| Failure::bad_input(e.to_string()))?;
            if which == "test" {
                test
            } else {
                pool
            }
        }
        other => {
            return Err(Failure::usage(format!(
                "--split must be test, pool or all, got '{other}'"
            )))
        }
    };
    let db = mimnet_core::training::evaluate(&params, &samples)
        .map_err(|e| Failure::bad_input(e.to_string()))?;
    println!("{db:.2}");
    Ok(())
}

fn parse_geometry(s: &str) -> Result<GeometrySample, Failure> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        return Err(Failure::usage(format!(
            "--geometry wants H,P,R,T (4 values), got {}",
            parts.len()
        )));
    }
    let mut vals = [0.0; 4];
    for (v, raw) in vals.iter_mut().zip(&parts) {
        *v = raw
            .trim()
            .parse()
            .map_err(|e| Failure::usage(format!("--geometry value '{raw}': {e}")))?;
    }
    GeometrySample::new(vals[0], vals[1], vals[2], vals[3])
        .map_err(|e| Failure::usage(e.to_string()))
}

// comma-led "re_0..re_63,im_0..im_63" so callers can prepend their key column
fn spectrum_cols() -> String {
    let mut h = String::new();
    for k in 0..SPECTRUM_POINTS {
        let _ = write!(h, ",re_{k}");
    }
    for k in 0..SPECTRUM_POINTS {
        let _ = write!(h, ",im_{k}");
    }
    h
}

const WAVELENGTH_COMMENT: &str = "# wavelengths_nm: 500 + k*350/63 for k = 0..63";

fn cmd_predict(ckpt: &Path, geometry: &str, out: &Path) -> Result<(), Failure> {
    let params = load_model(ckpt)?;
    let g = parse_geometry(geometry)?;
    let extrapolated = is_extrapolated(&g, &params.norm_stats);
    if extrapolated {
        eprintln!(
            "warning: geometry lies outside the training ranges; prediction is an extrapolation"
        );
    }
    let mut x = DenseMatrix::new(1, 4);
    x.row_mut(0)
        .copy_from_slice(&normalize_geometry(&g, &params.norm_stats));
    let (re, im) = predict(&params, &x).map_err(|e| Failure::bad_input(e.to_string()))?;
    let mut text = String::new();
    text.push_str("# mimnet predict v1\n");
    text.push_str(WAVELENGTH_COMMENT);
    text.push('\n');
    let _ = writeln!(text, "# geometry: H={} P={} R={} T={}", g.h, g.p, g.r, g.t);
    let _ = writeln!(text, "# extrapolated: {extrapolated}");
    text.push_str(&spectrum_cols()[1..]);
    text.push('\n');
    let mut row = String::new();
    for (i, v) in re.row(0).iter().chain(im.row(0)).enumerate() {
        if i > 0 {
            row.push(',');
        }
        row.push_str(&fmt_f64(*v));
    }
    text.push_str(&row);
    text.push('\n');
    fs::write(out, text).map_err(|e| Failure::io(format!("{}: {e}", out.display())))?;
    Ok(())
}

fn parse_range(s: &str) -> Result<(f64, f64, f64), Failure> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(Failure::usage(format!(
            "--range wants start:stop:step, got '{s}'"
        )));
    }
    let mut vals = [0.0; 3];
    for (v, raw) in vals.iter_mut().zip(&parts) {
        *v = raw
            .parse()
            .map_err(|e| Failure::usage(format!("--range value '{raw}': {e}")))?;
    }
    Ok((vals[0], vals[1], vals[2]))
}

fn parse_fixed(s: &str) -> Result<FixedParams, Failure> {
    let mut fixed = FixedParams::default();
    for item in s.split(',') {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("--fixed entry '{item}' wants NAME=VALUE")))?;
        let value: f64 = raw
            .trim()
            .parse()
            .map_err(|e| Failure::usage(format!("--fixed value '{raw}': {e}")))?;
        let slot = match key.trim().to_ascii_uppercase().as_str() {
            "H" => &mut fixed.h,
            "P" => &mut fixed.p,
            "R" => &mut fixed.r,
            "T" => &mut fixed.t,
            other => {
                return Err(Failure::usage(format!(
                    "--fixed key '{other}' is not one of H, P, R, T"
                )))
            }
        };
        if slot.is_some() {
            return Err(Failure::usage(format!("--fixed sets {key} twice")));
        }
        *slot = Some(value);
    }
    Ok(fixed)
}

struct SweepArgs {
    oracle: Option<String>,
    ckpt: Option<PathBuf>,
    vary: String,
    range: String,
    fixed: String,
    probe_phase: Option<f64>,
    find_resonance: bool,
    allow_extrapolation: bool,
    out: PathBuf,
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let (backend, backend_desc) = match (&args.oracle, &args.ckpt) {
        (Some(metal), None) => {
            let m = parse_metal(metal)?;
            (SweepBackend::Oracle(m), format!("oracle {m}"))
        }
        (None, Some(path)) => (
            SweepBackend::Model(Box::new(load_model(path)?)),
            format!("model {}", path.display()),
        ),
        _ => {
            return Err(Failure::usage(
                "exactly one backend: --oracle METAL or --ckpt PATH",
            ))
        }
    };
    let vary = VaryParam::from_str(&args.vary).map_err(|e| Failure::usage(e.to_string()))?;
    let spec = SweepSpec {
        backend,
        vary,
        fixed: parse_fixed(&args.fixed)?,
        range: parse_range(&args.range)?,
        probe: args.probe_phase,
    };
    let rows = run_sweep(&spec).map_err(|e| match e {
        SweepError::BadSpec { .. } => Failure::usage(e.to_string()),
        other => Failure::refused(other.to_string()),
    })?;
    let flagged: Vec<f64> = rows
        .iter()
        .filter(|r| r.extrapolated)
        .map(|r| r.value)
        .collect();
    if !flagged.is_empty() && !args.allow_extrapolation {
        return Err(Failure::refused(format!(
            "{} of {} sweep values fall outside the model's training ranges \
             (first offender: {} = {}); pass --allow-extrapolation to proceed",
            flagged.len(),
            rows.len(),
            vary,
            flagged[0]
        )));
    }
    let text = render_sweep(&spec, &rows, &backend_desc, &args, &flagged)
        .map_err(|e| Failure::refused(e.to_string()))?;
    fs::write(&args.out, text).map_err(|e| Failure::io(format!("{}: {e}", args.out.display())))?;
    eprintln!("wrote {} rows to {}", rows.len(), args.out.display());
    Ok(())
}

fn render_sweep(
    spec: &SweepSpec,
    rows: &[SweepRow],
    backend_desc: &str,
    args: &SweepArgs,
    flagged: &[f64],
) -> Result<String, SweepError> {
    let mut text = String::with_capacity(rows.len() * 3400);
    text.push_str("# mimnet sweep v1\n");
    let _ = writeln!(text, "# backend: {backend_desc}");
    let _ = writeln!(
        text,
        "# vary: {} over {}:{}:{}",
        spec.vary, spec.range.0, spec.range.1, spec.range.2
    );
    let _ = writeln!(text, "# fixed: {}", args.fixed);
    text.push_str(WAVELENGTH_COMMENT);
    text.push('\n');
    if let Some(probe) = spec.probe {
        let _ = writeln!(text, "# probe_nm: {probe}");
    }
    if !flagged.is_empty() {
        let list: Vec<String> = flagged.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(text, "# extrapolated_values: {}", list.join(" "));
    }
    text.push_str("param_value");
    text.push_str(&spectrum_cols());
    if spec.probe.is_some() {
        text.push_str(",phase_at_probe");
    }
    if args.find_resonance {
        text.push_str(",resonance_nm");
    }
    text.push('\n');
    for row in rows {
        text.push_str(&fmt_f64(row.value));
        for v in row.spectrum.re().iter().chain(row.spectrum.im()) {
            text.push(',');
            text.push_str(&fmt_f64(*v));
        }
        if let Some(probe) = spec.probe {
            text.push(',');
            text.push_str(&fmt_f64(phase_at(&row.spectrum, probe)?));
        }
        if args.find_resonance {
            text.push(',');
            text.push_str(&fmt_f64(find_resonance(&row.spectrum)));
        }
        text.push('\n');
    }
    Ok(text)
}
