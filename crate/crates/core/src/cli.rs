//! Command-line front end. [`run`] returns the process exit code:
//! 0 on success, 1 on invalid input or usage, 2 on I/O and format errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::Deserialize;

use crate::debias::debias_batch;
use crate::error::{RezeError, Result};
use crate::fit::{fit, Aggregation, FitConfig, ShrinkMode};
use crate::io::{pair_digest, read_dump, read_rzm, sha256_hex, verify_digest, write_atomic, write_dump, write_rzm};
use crate::matrix::DenseMatrix;
use crate::metrics::{dispersion_report, isoscore, whitening_fit};
use crate::objectives::{evaluate, ObjectiveConfig};
use crate::relations::{build_relations, EmbeddingDump, RelationSet};
use crate::synth::{generate, SynthConfig};
use crate::train::{train, LinearEncoder, TrainConfig};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "reze", version, about = "Relation-eigenspace debiasing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit shrink factors on an anchor/positive dump pair.
    Fit(FitArgs),
    /// Write debiased relations as a dump of width 2d.
    Debias(DebiasArgs),
    /// Print InfoNCE, regularization and combined losses.
    Loss(LossArgs),
    /// Generate a synthetic multi-source fixture.
    Synth(SynthArgs),
    /// Train a linear encoder and write the loss history.
    Train(TrainArgs),
    /// IsoScore of the rows of a dump.
    Isoscore(IsoArgs),
    /// Per-dimension dispersion before/after debiasing.
    Report(ReportArgs),
    /// Fit a whitening transform on one dump and apply it to another.
    Whiten(WhitenArgs),
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    anchors: PathBuf,
    #[arg(long)]
    positives: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.99)]
    rho: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.7)]
    eta: f64,
    #[arg(long, default_value_t = 1e-8)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.0)]
    clip_lo: f64,
    #[arg(long, default_value_t = 2.0)]
    clip_hi: f64,
    #[arg(long, default_value_t = Aggregation::Median)]
    aggregation: Aggregation,
    #[arg(long, default_value_t = ShrinkMode::Literal)]
    shrink_mode: ShrinkMode,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    normalize: bool,
}

#[derive(Debug, Args)]
struct DebiasArgs {
    #[arg(long)]
    rzm: PathBuf,
    #[arg(long)]
    anchors: PathBuf,
    #[arg(long)]
    positives: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the undebiased relations, e.g. as `report --before` input.
    #[arg(long)]
    raw_out: Option<PathBuf>,
    /// Warn when the dumps differ from the ones the matrix was fitted on.
    #[arg(long)]
    verify: bool,
}

#[derive(Debug, Args)]
struct LossArgs {
    #[arg(long)]
    rzm: PathBuf,
    #[arg(long)]
    current_anchors: PathBuf,
    #[arg(long)]
    current_positives: PathBuf,
    #[arg(long)]
    ref_anchors: PathBuf,
    #[arg(long)]
    ref_positives: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    temperature: f64,
    #[arg(long, default_value_t = 1.0)]
    reg_weight: f64,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    rzm: PathBuf,
    #[arg(long)]
    out_history: PathBuf,
}

#[derive(Debug, Args)]
struct IsoArgs {
    #[arg(long)]
    input: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    rzm: PathBuf,
    #[arg(long)]
    before: PathBuf,
    #[arg(long)]
    after: PathBuf,
}

#[derive(Debug, Args)]
struct WhitenArgs {
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    apply: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// `train` configuration document. Data paths resolve against the
/// document's directory.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    anchors: PathBuf,
    positives: PathBuf,
    #[serde(default = "defaults::steps")]
    steps: usize,
    #[serde(default = "defaults::batch")]
    batch: usize,
    #[serde(default = "defaults::learning_rate")]
    learning_rate: f64,
    #[serde(default = "defaults::temperature")]
    temperature: f64,
    #[serde(default = "defaults::reg_weight")]
    reg_weight: f64,
    #[serde(default)]
    shuffle_seed: u64,
    #[serde(default = "defaults::mixed")]
    mixed_batches: bool,
    /// Std-dev of Gaussian noise added to the identity initialization.
    #[serde(default)]
    init_noise: f64,
    #[serde(default)]
    init_seed: u64,
}

mod defaults {
    pub fn steps() -> usize {
        200
    }
    pub fn batch() -> usize {
        32
    }
    pub fn learning_rate() -> f64 {
        0.05
    }
    pub fn temperature() -> f64 {
        0.05
    }
    pub fn reg_weight() -> f64 {
        1.0
    }
    pub fn mixed() -> bool {
        true
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
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

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Fit(a) => cmd_fit(a),
        Command::Debias(a) => cmd_debias(a),
        Command::Loss(a) => cmd_loss(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Isoscore(a) => cmd_isoscore(a),
        Command::Report(a) => cmd_report(a),
        Command::Whiten(a) => cmd_whiten(a),
    }
}

/// One-line record of what produced an output. Output paths are left out so
/// reruns into a different location stay byte-identical.
fn provenance(command: &str, params: &[(&str, String)]) -> String {
    let mut line = format!("reze {VERSION} {command}");
    for (k, v) in params {
        let _ = write!(line, " {k}={v}");
    }
    line
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".provenance.txt");
    PathBuf::from(s)
}

fn write_sidecar(out: &Path, line: &str) -> Result<()> {
    write_atomic(&sidecar(out), format!("{line}\n").as_bytes())
}

fn relations_from(anchors: &EmbeddingDump, positives: &EmbeddingDump, normalize: bool) -> Result<RelationSet<f64>> {
    build_relations::<f64>(anchors, positives, normalize)
}

/// A relation set stored as a dump of width `D`.
fn relation_dump(set: &RelationSet<f64>) -> Result<EmbeddingDump> {
    EmbeddingDump::new(set.relations.clone(), set.source_ids.clone(), set.source_names.clone())
}

fn dump_as_relations(dump: &EmbeddingDump) -> Result<RelationSet<f64>> {
    RelationSet::new(
        dump.vectors().clone(),
        dump.source_ids().to_vec(),
        dump.source_names().to_vec(),
        false,
    )
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let config = FitConfig {
        rho: a.rho,
        gamma: a.gamma,
        eta: a.eta,
        epsilon: a.epsilon,
        clip_lo: a.clip_lo,
        clip_hi: a.clip_hi,
        aggregation: a.aggregation,
        shrink_mode: a.shrink_mode,
    };
    config.validate()?;
    let anchors = read_dump(&a.anchors)?;
    let positives = read_dump(&a.positives)?;
    let relations = relations_from(&anchors, &positives, a.normalize)?;
    let mut rm = fit(&relations, &config)?;
    let digest = pair_digest(&anchors, &positives)?;
    rm.provenance = Some(provenance(
        "fit",
        &[
            ("rho", format!("{:?}", a.rho)),
            ("gamma", format!("{:?}", a.gamma)),
            ("eta", format!("{:?}", a.eta)),
            ("epsilon", format!("{:?}", a.epsilon)),
            ("clip_lo", format!("{:?}", a.clip_lo)),
            ("clip_hi", format!("{:?}", a.clip_hi)),
            ("aggregation", a.aggregation.to_string()),
            ("shrink_mode", a.shrink_mode.to_string()),
            ("normalize", a.normalize.to_string()),
            ("anchors", file_digest(&a.anchors)?),
            ("positives", file_digest(&a.positives)?),
        ],
    ));
    rm.input_digest = Some(digest);
    write_rzm(&rm, &a.out)?;
    let flagged = rm.flagged_dims().unwrap_or_default();
    println!("D={}", rm.dim());
    println!("S={}", rm.num_sources());
    println!("k={}", rm.active);
    println!("theta={:?}", rm.threshold);
    println!("flagged_dims={}", flagged.len());
    println!("shrunk_entries={}", rm.shrunk_entries());
    Ok(())
}

fn cmd_debias(a: DebiasArgs) -> Result<()> {
    let rm = read_rzm(&a.rzm)?;
    let anchors = read_dump(&a.anchors)?;
    let positives = read_dump(&a.positives)?;
    if a.verify {
        if let Some(msg) = verify_digest(&rm, &anchors, &positives)? {
            log::warn!("{msg}");
            eprintln!("warning: {msg}");
        }
    }
    let relations = relations_from(&anchors, &positives, rm.normalize)?;
    let debiased = relations.with_relations(debias_batch(&relations, &rm)?)?;
    let line = provenance(
        "debias",
        &[
            ("rzm", file_digest(&a.rzm)?),
            ("anchors", file_digest(&a.anchors)?),
            ("positives", file_digest(&a.positives)?),
        ],
    );
    write_dump(&relation_dump(&debiased)?, &a.out)?;
    write_sidecar(&a.out, &line)?;
    if let Some(raw) = &a.raw_out {
        write_dump(&relation_dump(&relations)?, raw)?;
        write_sidecar(raw, &line)?;
    }
    Ok(())
}

fn split_halves(m: &DenseMatrix<f64>) -> Result<(DenseMatrix<f64>, DenseMatrix<f64>)> {
    let d = m.cols() / 2;
    let left: Vec<&[f64]> = m.row_iter().map(|r| &r[..d]).collect();
    let right: Vec<&[f64]> = m.row_iter().map(|r| &r[d..]).collect();
    Ok((DenseMatrix::from_rows(&left)?, DenseMatrix::from_rows(&right)?))
}

fn cmd_loss(a: LossArgs) -> Result<()> {
    let rm = read_rzm(&a.rzm)?;
    let objective = ObjectiveConfig {
        temperature: a.temperature,
        reg_weight: a.reg_weight,
    };
    objective.validate()?;
    let current = relations_from(&read_dump(&a.current_anchors)?, &read_dump(&a.current_positives)?, rm.normalize)?;
    let reference = relations_from(&read_dump(&a.ref_anchors)?, &read_dump(&a.ref_positives)?, rm.normalize)?;
    if current.source_ids != reference.source_ids {
        return Err(RezeError::Mismatch { field: "source_ids" });
    }
    let targets = debias_batch(&reference, &rm)?;
    let (anchors, positives) = split_halves(&current.relations)?;
    let report = evaluate(&anchors, &positives, &targets, &objective)?;
    println!(
        "# provenance: {}",
        provenance(
            "loss",
            &[
                ("temperature", format!("{:?}", a.temperature)),
                ("reg_weight", format!("{:?}", a.reg_weight)),
                ("rzm", file_digest(&a.rzm)?),
                ("current_anchors", file_digest(&a.current_anchors)?),
                ("current_positives", file_digest(&a.current_positives)?),
                ("ref_anchors", file_digest(&a.ref_anchors)?),
                ("ref_positives", file_digest(&a.ref_positives)?),
            ],
        )
    );
    println!("main={:?}", report.main);
    println!("reze={:?}", report.reze);
    println!("combined={:?}", report.combined);
    Ok(())
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| RezeError::config(format!("{}: {}", path.display(), e.message())))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let config: SynthConfig = read_toml(&a.config)?;
    let (anchors, positives, truth) = generate(&config)?;
    let prefix = a.out_prefix.as_os_str().to_owned();
    let with_suffix = |suffix: &str| {
        let mut p = prefix.clone();
        p.push(suffix);
        PathBuf::from(p)
    };
    let line = provenance("synth", &[("config", file_digest(&a.config)?)]);
    write_dump(&anchors, with_suffix(".anchors.rzd"))?;
    write_dump(&positives, with_suffix(".positives.rzd"))?;
    let mut truth_text = format!("# provenance: {line}\n");
    truth_text.push_str(&truth.to_text());
    write_atomic(&with_suffix(".truth.txt"), truth_text.as_bytes())?;
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let file: TrainFile = read_toml(&a.config)?;
    let base = a.config.parent().unwrap_or(Path::new("."));
    let anchors_path = base.join(&file.anchors);
    let positives_path = base.join(&file.positives);
    let anchors = read_dump(&anchors_path)?;
    let positives = read_dump(&positives_path)?;
    let rm = read_rzm(&a.rzm)?;
    if let Some(msg) = verify_digest(&rm, &anchors, &positives)? {
        log::warn!("{msg}");
    }
    let config = TrainConfig {
        steps: file.steps,
        batch: file.batch,
        learning_rate: file.learning_rate,
        objective: ObjectiveConfig {
            temperature: file.temperature,
            reg_weight: file.reg_weight,
        },
        shuffle_seed: file.shuffle_seed,
        mixed_batches: file.mixed_batches,
    };
    let d = anchors.dim();
    let reference = LinearEncoder::identity(d);
    let init = LinearEncoder::perturbed_identity(d, file.init_noise, file.init_seed);
    let history = train(&anchors, &positives, &rm, &reference, &init, &config)?;
    let line = provenance(
        "train",
        &[
            ("config", file_digest(&a.config)?),
            ("rzm", file_digest(&a.rzm)?),
            ("anchors", file_digest(&anchors_path)?),
            ("positives", file_digest(&positives_path)?),
        ],
    );
    let mut text = format!("# provenance: {line}\n");
    text.push_str(&history.to_table());
    write_atomic(&a.out_history, text.as_bytes())?;
    for (label, s) in [("before", history.before), ("after", history.after)] {
        println!("{label}.isoscore={:?}", s.isoscore);
        println!("{label}.displacement={:?}", s.displacement);
        println!("{label}.flagged_dispersion={:?}", s.flagged_dispersion);
    }
    Ok(())
}

fn cmd_isoscore(a: IsoArgs) -> Result<()> {
    let dump = read_dump(&a.input)?;
    let result = isoscore(dump.vectors())?;
    println!("# provenance: {}", provenance("isoscore", &[("input", file_digest(&a.input)?)]));
    println!("score={:?}", result.score);
    println!("dim={}", result.dim);
    println!("samples={}", result.samples);
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let rm = read_rzm(&a.rzm)?;
    let before = dump_as_relations(&read_dump(&a.before)?)?;
    let after = read_dump(&a.after)?;
    if after.source_ids() != before.source_ids.as_slice() {
        return Err(RezeError::Mismatch { field: "source_ids" });
    }
    let report = dispersion_report(&before, after.vectors(), &rm)?;
    println!(
        "# provenance: {}",
        provenance(
            "report",
            &[
                ("rzm", file_digest(&a.rzm)?),
                ("before", file_digest(&a.before)?),
                ("after", file_digest(&a.after)?),
            ],
        )
    );
    print!("{}", report.to_table());
    print!("{}", report.summary());
    Ok(())
}

fn cmd_whiten(a: WhitenArgs) -> Result<()> {
    let fit_set = read_dump(&a.fit)?;
    let target = read_dump(&a.apply)?;
    let whitening = whitening_fit(fit_set.vectors())?;
    let out = EmbeddingDump::new(
        whitening.apply_rows(target.vectors())?,
        target.source_ids().to_vec(),
        target.source_names().to_vec(),
    )?;
    write_dump(&out, &a.out)?;
    write_sidecar(
        &a.out,
        &provenance(
            "whiten",
            &[("fit", file_digest(&a.fit)?), ("apply", file_digest(&a.apply)?)],
        ),
    )?;
    Ok(())
}
