//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 validation error (including bad arguments),
//! 2 I/O error. The resolved configuration of every run is logged at info
//! level. `RPCI_THREADS` or `--threads` bounds the worker pool.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use crate::agreement::{aggregate_agreement, model_vs_observers, observer_vs_rest, ObserverSet};
use crate::error::{Error, Result};
use crate::io::write_atomic_str;
use crate::metrics::{evaluate_pair, PatientMetrics};
use crate::phantom::{generate_phantom, perturb_labels, PhantomSpec};
use crate::preprocess::{crop_with_margin, dilate_labels, CropSpec, DilationSpec, DEFAULT_MARGIN_MM, DEFAULT_RADIUS_MM};
use crate::priors::{apply_fan, balance_fan, FanConfig, FanPartition, Sweep};
use crate::study::{
    agreement_study, evaluate_study, load_manifest, make_folds, parse_json, performance_report, render,
    Format, PatientEntry, StudyManifest, VoxelTally, DEFAULT_FOLDS,
};
use crate::volume::{read_labels, read_scalar, write_labels, write_scalar, BinaryMask};

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "RPCI_THREADS";

#[cfg(debug_assertions)]
const BUILD_PROFILE: &str = "debug";
#[cfg(not(debug_assertions))]
const BUILD_PROFILE: &str = "release";

fn long_version() -> String {
    format!(
        "{} ({} build, {}/{})",
        env!("CARGO_PKG_VERSION"),
        BUILD_PROFILE,
        std::env::consts::ARCH,
        std::env::consts::OS
    )
}

#[derive(Debug, Parser)]
#[command(name = "rpci", version, about = "Evaluation toolkit for rPCI region segmentation")]
pub struct Cli {
    /// Worker threads (default: available parallelism, or RPCI_THREADS).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Crop CT and labels to the labels plus a margin, then dilate the labels.
    Preprocess(PreprocessArgs),
    /// Per-region Dice, HD95 and ASD of a prediction against ground truth.
    Evaluate(EvaluateArgs),
    /// Interobserver agreement, optionally with a model scored against every observer.
    Agreement(AgreementArgs),
    /// Split a small-bowel mask into regions 9-12 by a volume-balanced fan.
    FanPartition(FanArgs),
    /// Write a seeded synthetic 13-region phantom.
    Phantom(PhantomArgs),
    /// Seeded k-fold split of patient ids.
    Folds(FoldsArgs),
    /// Aggregate per-patient records into a cohort table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Format {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepArg {
    /// Superior towards patient left (clockwise on a radiological coronal view).
    Cw,
    /// Superior towards patient right.
    Ccw,
}

#[derive(Debug, Args, Serialize)]
pub struct PreprocessArgs {
    /// Label volume (NIfTI-1, stored labels 0-13).
    #[arg(long)]
    pub labels: PathBuf,
    /// CT volume on the same grid; cropped with the labels when given.
    #[arg(long)]
    pub ct: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MARGIN_MM)]
    pub margin_mm: f64,
    #[arg(long, default_value_t = DEFAULT_RADIUS_MM)]
    pub radius_mm: f64,
    /// Receives labels.nii.gz and, with --ct, ct.nii.gz.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long, requires = "pred", conflicts_with = "manifest")]
    pub gt: Option<PathBuf>,
    #[arg(long, requires = "gt")]
    pub pred: Option<PathBuf>,
    /// Patient id for a single pair.
    #[arg(long, default_value = "case", requires = "gt")]
    pub id: String,
    #[arg(long, requires = "model", required_unless_present = "gt")]
    pub manifest: Option<PathBuf>,
    /// Model key in the manifest's pred_paths.
    #[arg(long, requires = "manifest")]
    pub model: Option<String>,
    /// Per-patient records (JSON); stdout when omitted.
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Cohort table.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
}

#[derive(Debug, Args, Serialize)]
pub struct AgreementArgs {
    #[arg(long, conflicts_with_all = ["observer", "pred"], required_unless_present = "observer")]
    pub manifest: Option<PathBuf>,
    /// Model key for the _M columns (manifest mode).
    #[arg(long, requires = "manifest")]
    pub model: Option<String>,
    /// Observer annotation as NAME=PATH; repeat for each observer.
    #[arg(long, value_parser = parse_named_path)]
    pub observer: Vec<(String, PathBuf)>,
    /// Model prediction for the _M columns (single-patient mode).
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long, default_value = "case")]
    pub id: String,
    /// Agreement table; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
}

#[derive(Debug, Args, Serialize)]
pub struct FanArgs {
    /// Small-bowel mask; every non-zero voxel is bowel.
    #[arg(long)]
    pub bowel: PathBuf,
    /// Mesenteric root in world mm.
    #[arg(long, value_parser = parse_triple_f64, allow_hyphen_values = true)]
    pub root: [f64; 3],
    /// Direction of the first cut-free ray, degrees from superior towards
    /// patient left.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub start_angle: f64,
    #[arg(long, value_enum, default_value_t = SweepArg::Cw)]
    pub sweep: SweepArg,
    /// Relabelled volume (regions 9-12, stored 10-13).
    #[arg(long)]
    pub out: PathBuf,
    /// Partition sidecar; defaults to the output path with .json.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PhantomArgs {
    #[arg(long, value_parser = parse_triple_usize, default_value = "64,64,64")]
    pub dims: [usize; 3],
    #[arg(long, value_parser = parse_triple_f64, default_value = "1,1,1")]
    pub spacing: [f64; 3],
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.2)]
    pub bowel_fraction: f64,
    /// Also write this many perturbed observer annotations.
    #[arg(long, default_value_t = 0)]
    pub observers: usize,
    /// Largest boundary displacement of the observer annotations.
    #[arg(long, default_value_t = 2.0)]
    pub perturb_mm: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FoldsArgs {
    /// Text file with one id per line (blank lines and # comments skipped).
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    pub ids: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fold file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    pub format: FormatArg,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Per-patient record files written by `evaluate`.
    #[arg(long, num_args = 1.., required_unless_present = "from_report", conflicts_with = "from_report")]
    pub records: Vec<PathBuf>,
    /// Re-render an existing JSON report.
    #[arg(long)]
    pub from_report: Option<PathBuf>,
    /// Manifest whose ground truths supply the voxel distribution column.
    #[arg(long, conflicts_with = "from_report")]
    pub manifest: Option<PathBuf>,
    /// Report file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
}

fn parse_triple<T: std::str::FromStr>(s: &str) -> std::result::Result<[T; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got {s:?}"));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<T>().map_err(|_| format!("invalid number {p:?}"))?);
    }
    out.try_into().map_err(|_| "expected three values".to_string())
}

fn parse_triple_f64(s: &str) -> std::result::Result<[f64; 3], String> {
    let v = parse_triple::<f64>(s)?;
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(format!("values must be finite, got {s:?}"))
    }
}

fn parse_triple_usize(s: &str) -> std::result::Result<[usize; 3], String> {
    parse_triple::<usize>(s)
}

fn parse_named_path(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => {
            Ok((name.to_string(), PathBuf::from(path)))
        }
        _ => Err(format!("expected NAME=PATH, got {s:?}")),
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            if e.kind() == ErrorKind::DisplayVersion {
                println!("rpci {}", long_version());
            } else {
                let _ = e.print();
            }
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

/// Runs a parsed command inside a pool of the requested size.
pub fn execute(cli: &Cli) -> Result<()> {
    match cli.threads {
        Some(0) => Err(Error::invalid("--threads must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(&cli.command))
        }
        None => dispatch(&cli.command),
    }
}

fn log_config<T: Serialize>(name: &str, args: &T) {
    match serde_json::to_string(args) {
        Ok(s) => info!("{name}: {s} (threads: {})", rayon::current_num_threads()),
        Err(e) => warn!("{name}: configuration not printable: {e}"),
    }
}

fn dispatch(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Preprocess(a) => {
            log_config("preprocess", a);
            preprocess(a)
        }
        Command::Evaluate(a) => {
            log_config("evaluate", a);
            evaluate(a)
        }
        Command::Agreement(a) => {
            log_config("agreement", a);
            agreement(a)
        }
        Command::FanPartition(a) => {
            log_config("fan-partition", a);
            fan_partition(a)
        }
        Command::Phantom(a) => {
            log_config("phantom", a);
            phantom(a)
        }
        Command::Folds(a) => {
            log_config("folds", a);
            folds(a)
        }
        Command::Report(a) => {
            log_config("report", a);
            report(a)
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic_str(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn preprocess(a: &PreprocessArgs) -> Result<()> {
    let crop = CropSpec::new(a.margin_mm)?;
    let dilation = DilationSpec::new(a.radius_mm)?;
    let labels = read_labels(&a.labels)?;
    let (ct, labels) = match &a.ct {
        Some(p) => {
            let (c, l) = crop_with_margin(&read_scalar(p)?, &labels, crop)?;
            (Some(c), l)
        }
        None => {
            let bbox = crate::preprocess::crop_box(&labels, crop)?;
            (None, labels.crop(&bbox))
        }
    };
    let labels = dilate_labels(&labels, dilation)?;
    ensure_dir(&a.out_dir)?;
    if let Some(ct) = ct {
        write_scalar(&ct, a.out_dir.join("ct.nii.gz"))?;
    }
    write_labels(&labels, a.out_dir.join("labels.nii.gz"))?;
    info!("preprocessed grid {:?}", labels.dims());
    Ok(())
}

fn records_json(records: &[PatientMetrics]) -> Result<String> {
    Ok(serde_json::to_string_pretty(records)? + "\n")
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let (records, voxel_percent, dataset) = match (&a.gt, &a.pred, &a.manifest, &a.model) {
        (Some(gt), Some(pred), None, _) => {
            let gt = read_labels(gt)?;
            let pred = read_labels(pred)?;
            let m = evaluate_pair(&a.id, &gt, &pred)?;
            let mut t = VoxelTally::default();
            t.add(&gt);
            (vec![m], t.percentages().ok(), None)
        }
        (None, None, Some(manifest), Some(model)) => {
            let manifest = load_manifest(manifest)?;
            let run = evaluate_study(&manifest, model)?;
            (run.records, Some(run.voxel_percent), manifest.dataset)
        }
        _ => return Err(Error::invalid("evaluate needs --gt with --pred, or --manifest with --model")),
    };
    let mut table = performance_report(&records, voxel_percent.as_ref())?;
    table.dataset = dataset;
    for w in &table.warnings {
        warn!("{w}");
    }
    let records_text = records_json(&records)?;
    let table_text = render(&table, a.format.into())?;
    match (&a.records, &a.out) {
        (None, None) => emit(None, &records_text),
        (r, o) => {
            if let Some(r) = r {
                write_atomic_str(r, &records_text)?;
            }
            if let Some(o) = o {
                write_atomic_str(o, &table_text)?;
            }
            Ok(())
        }
    }
}

fn agreement(a: &AgreementArgs) -> Result<()> {
    let report = if let Some(manifest) = &a.manifest {
        let manifest = load_manifest(manifest)?;
        agreement_study(&manifest, a.model.as_deref())?
    } else {
        let vols = a
            .observer
            .iter()
            .map(|(name, path)| Ok((name.clone(), read_labels(path)?)))
            .collect::<Result<Vec<_>>>()?;
        let set = ObserverSet::new(a.id.clone(), vols)?;
        let human = observer_vs_rest(&set)?;
        let model = match &a.pred {
            Some(p) => Some(vec![model_vs_observers(&read_labels(p)?, &set)?]),
            None => None,
        };
        aggregate_agreement(&[human], model.as_deref())?
    };
    info!(
        "agreement over {} patients, {} observers, {} human samples, {} model samples",
        report.patients, report.observers, report.human_samples, report.model_samples
    );
    for w in &report.table.warnings {
        warn!("{w}");
    }
    emit(a.out.as_deref(), &render(&report.table, a.format.into())?)
}

fn fan_partition(a: &FanArgs) -> Result<()> {
    let cfg = FanConfig {
        start_angle: a.start_angle.to_radians(),
        sweep: match a.sweep {
            SweepArg::Cw => Sweep::Left,
            SweepArg::Ccw => Sweep::Right,
        },
        ..FanConfig::new(a.root)
    };
    cfg.validate()?;
    let labels = read_labels(&a.bowel)?;
    let mask = BinaryMask::new(*labels.geometry(), labels.data().iter().map(|&v| v > 0).collect())?;
    let partition = balance_fan(&mask, &cfg)?;
    let out = apply_fan(&mask, &partition)?;
    let json_path = a.json.clone().unwrap_or_else(|| sidecar_path(&a.out));
    write_labels(&out, &a.out)?;
    write_atomic_str(&json_path, &(serde_json::to_string_pretty(&partition)? + "\n"))?;
    info!(
        "cuts {:?} deg, fractions {:?}",
        partition.cut_angles.map(f64::to_degrees),
        partition.achieved_fractions
    );
    Ok(())
}

/// `x.nii.gz` → `x.json`.
fn sidecar_path(p: &Path) -> PathBuf {
    let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("fan");
    let stem = name.trim_end_matches(".gz").trim_end_matches(".nii");
    p.with_file_name(format!("{stem}.json"))
}

#[derive(Serialize)]
struct PhantomSidecar<'a> {
    spec: &'a PhantomSpec,
    fan: &'a FanPartition,
}

fn phantom(a: &PhantomArgs) -> Result<()> {
    let spec = PhantomSpec {
        bowel_fraction: a.bowel_fraction,
        ..PhantomSpec::new(a.dims, a.spacing, a.seed)
    };
    spec.validate()?;
    if a.observers > 0 && !(a.perturb_mm >= 0.0 && a.perturb_mm.is_finite()) {
        return Err(Error::invalid("--perturb-mm must be finite and non-negative"));
    }
    let p = generate_phantom(&spec)?;
    ensure_dir(&a.out_dir)?;
    write_scalar(&p.ct, a.out_dir.join("ct.nii.gz"))?;
    write_labels(&p.labels, a.out_dir.join("labels.nii.gz"))?;
    let sidecar = PhantomSidecar { spec: &spec, fan: &p.fan };
    write_atomic_str(&a.out_dir.join("fan.json"), &(serde_json::to_string_pretty(&sidecar)? + "\n"))?;

    let mut entry = PatientEntry {
        id: format!("phantom-{}", a.seed),
        ct_path: Some("ct.nii.gz".into()),
        gt_path: Some("labels.nii.gz".into()),
        pred_paths: Default::default(),
        observer_paths: Default::default(),
    };
    for i in 0..a.observers {
        let name = format!("observer{}", i + 1);
        let seed = a.seed.wrapping_add(1 + i as u64);
        let lv = perturb_labels(&p.labels, a.perturb_mm, seed)?;
        let file = format!("{name}.nii.gz");
        write_labels(&lv, a.out_dir.join(&file))?;
        entry.observer_paths.insert(name, file.into());
    }
    let manifest = StudyManifest {
        dataset: Some("synthetic phantom".into()),
        notes: None,
        patients: vec![entry],
    };
    write_atomic_str(
        &a.out_dir.join("manifest.json"),
        &(serde_json::to_string_pretty(&manifest)? + "\n"),
    )?;
    info!("phantom written to {}", a.out_dir.display());
    Ok(())
}

fn read_ids(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn folds(a: &FoldsArgs) -> Result<()> {
    let ids = match (&a.ids, &a.manifest) {
        (Some(p), _) => read_ids(p)?,
        (None, Some(m)) => load_manifest(m)?.ids(),
        (None, None) => return Err(Error::invalid("folds needs --ids or --manifest")),
    };
    let f = make_folds(&ids, a.k, a.seed)?;
    let text = match a.format {
        FormatArg::Json => serde_json::to_string_pretty(&f)? + "\n",
        FormatArg::Csv => f.to_csv()?,
    };
    emit(a.out.as_deref(), &text)
}

fn report(a: &ReportArgs) -> Result<()> {
    let table = if let Some(p) = &a.from_report {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        parse_json(&text)?
    } else {
        let mut records: Vec<PatientMetrics> = Vec::new();
        for p in &a.records {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let batch: Vec<PatientMetrics> = serde_json::from_str(&text)?;
            records.extend(batch);
        }
        records.sort_by(|x, y| x.patient_id.cmp(&y.patient_id));
        let (voxel_percent, dataset) = match &a.manifest {
            Some(m) => {
                let manifest = load_manifest(m)?;
                let mut tally = VoxelTally::default();
                for p in &manifest.patients {
                    if let Some(gt) = &p.gt_path {
                        tally.add(&read_labels(gt)?);
                    }
                }
                (Some(tally.percentages()?), manifest.dataset)
            }
            None => (None, None),
        };
        let mut t = performance_report(&records, voxel_percent.as_ref())?;
        t.dataset = dataset;
        t
    };
    for w in &table.warnings {
        warn!("{w}");
    }
    emit(a.out.as_deref(), &render(&table, a.format.into())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argument_parsers() {
        assert_eq!(parse_triple_f64("1, -2.5,3").unwrap(), [1.0, -2.5, 3.0]);
        assert!(parse_triple_f64("1,2").is_err());
        assert!(parse_triple_f64("1,2,inf").is_err());
        assert_eq!(parse_triple_usize("64,64,32").unwrap(), [64, 64, 32]);
        assert_eq!(parse_named_path("a=x.nii").unwrap(), ("a".to_string(), PathBuf::from("x.nii")));
        assert!(parse_named_path("x.nii").is_err());
        assert_eq!(sidecar_path(Path::new("d/fan.nii.gz")), PathBuf::from("d/fan.json"));
    }

    #[test]
    fn exit_codes_for_bad_arguments() {
        assert_eq!(run(["rpci", "--help"]), 0);
        assert_eq!(run(["rpci", "--version"]), 0);
        assert_eq!(run(["rpci", "bogus"]), 1);
        assert_eq!(run(["rpci", "folds", "--k", "5"]), 1);
        assert_eq!(run(["rpci", "evaluate", "--gt", "a.nii"]), 1);
        assert_eq!(run(["rpci", "--threads", "0", "folds", "--ids", "x"]), 1);
        assert_eq!(run(["rpci", "folds", "--ids", "/nonexistent/ids.txt"]), 2);
    }

    #[test]
    fn defaults_mirror_protocol() {
        let c = Cli::try_parse_from(["rpci", "preprocess", "--labels", "l", "--out-dir", "o"]).unwrap();
        match c.command {
            Command::Preprocess(a) => assert_eq!((a.margin_mm, a.radius_mm), (15.0, 2.0)),
            _ => unreachable!(),
        }
        let c = Cli::try_parse_from(["rpci", "folds", "--ids", "x"]).unwrap();
        match c.command {
            Command::Folds(a) => assert_eq!(a.k, 5),
            _ => unreachable!(),
        }
    }
}
