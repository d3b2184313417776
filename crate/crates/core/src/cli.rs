//! Command-line orchestration of the selection pipeline.
//!
//! Every command reads one JSON run config; scalar flags override the file.
//! Outputs are staged next to their destination and only moved into place
//! once the whole command has succeeded, and existing outputs are never
//! replaced without `--force`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::baselines::{run_baseline, write_baseline_scores, BaselineInputs, Method};
use crate::corpus::{load_corpus, write_corpus_with_header, CorpusRecord, PROVENANCE_KEY};
use crate::error::{Error, Result};
use crate::evaluation::{
    ablate_model_size, ablate_prefix_length, ablate_threshold, build_datasets, evaluate, AblationTable,
    Datasets, DownstreamScope, ExperimentConfig,
};
use crate::evaluation::ablation::DownstreamArgs;
use crate::prefix::init_prefix;
use crate::prefix::tune_prefix;
use crate::scoring::{read_scores, score_stream_with_header, select_scores};
use crate::tiny_lm::{init_params, load_params, load_prefix, save_params, save_prefix, train_lm, LmConfig};

pub const LOG_ENV: &str = "DOMAINSIFT_LOG";

#[derive(Debug, Parser)]
#[command(name = "domainsift", version, about = "Domain-prefix likelihood-ratio corpus selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run config.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long = "prefix-len")]
    pub prefix_len: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic pretraining, pool, reference and held-out corpora.
    GenData(Common),
    /// Pretrain the base model on the mixture corpus.
    TrainBase(Common),
    /// Tune the domain prefix on the reference corpus.
    TunePrefix(Common),
    /// Score the candidate pool.
    Score(Common),
    /// Apply the threshold to a score file and write the selected records.
    Select(Common),
    /// Score and select with a reference method.
    Baseline {
        #[arg(value_enum)]
        method: MethodArg,
        #[command(flatten)]
        common: Common,
    },
    /// Compare all methods on the labeled pool.
    Evaluate(Common),
    /// Run one ablation sweep.
    Ablate {
        #[arg(value_enum)]
        which: Ablation,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenData(c)
            | Command::TrainBase(c)
            | Command::TunePrefix(c)
            | Command::Score(c)
            | Command::Select(c)
            | Command::Evaluate(c) => c,
            Command::Baseline { common, .. } | Command::Ablate { common, .. } => common,
        }
    }

    fn name(&self) -> String {
        match self {
            Command::GenData(_) => "gen-data".into(),
            Command::TrainBase(_) => "train-base".into(),
            Command::TunePrefix(_) => "tune-prefix".into(),
            Command::Score(_) => "score".into(),
            Command::Select(_) => "select".into(),
            Command::Baseline { method, .. } => format!("baseline {}", Method::from(*method).name()),
            Command::Evaluate(_) => "evaluate".into(),
            Command::Ablate { which, .. } => format!("ablate {}", which.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Ppl,
    Random,
    Dsir,
    Full,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Ppl => Method::Ppl,
            MethodArg::Random => Method::Random,
            MethodArg::Dsir => Method::Dsir,
            MethodArg::Full => Method::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Ablation {
    Threshold,
    PrefixLength,
    ModelSize,
}

impl Ablation {
    fn name(self) -> &'static str {
        match self {
            Ablation::Threshold => "threshold",
            Ablation::PrefixLength => "prefix_length",
            Ablation::ModelSize => "model_size",
        }
    }
}

/// Input and output locations; relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub pretrain: PathBuf,
    pub pool: PathBuf,
    pub reference: PathBuf,
    pub heldout: PathBuf,
    pub base_checkpoint: PathBuf,
    pub prefix_checkpoint: PathBuf,
    pub tune_curve: PathBuf,
    pub scores: PathBuf,
    pub selected: PathBuf,
    pub baseline_dir: PathBuf,
    /// Report stem; `.json`, `.txt` and `.csv` are written.
    pub report: PathBuf,
    pub ablation_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        let p = PathBuf::from;
        Paths {
            pretrain: p("data/pretrain.jsonl"),
            pool: p("data/pool.jsonl"),
            reference: p("data/reference.jsonl"),
            heldout: p("data/heldout.jsonl"),
            base_checkpoint: p("out/base.lmds"),
            prefix_checkpoint: p("out/prefix.lmds"),
            tune_curve: p("out/tune_curve.jsonl"),
            scores: p("out/scores.jsonl"),
            selected: p("out/selected.jsonl"),
            baseline_dir: p("out/baselines"),
            report: p("out/report"),
            ablation_dir: p("out/ablations"),
        }
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.pretrain,
            &mut self.pool,
            &mut self.reference,
            &mut self.heldout,
            &mut self.base_checkpoint,
            &mut self.prefix_checkpoint,
            &mut self.tune_curve,
            &mut self.scores,
            &mut self.selected,
            &mut self.baseline_dir,
            &mut self.report,
            &mut self.ablation_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub taus: Vec<f64>,
    pub prefix_lengths: Vec<usize>,
    pub model_sizes: Vec<LmConfig>,
    /// Also fine-tune and measure held-out perplexity per sweep cell.
    pub downstream: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            taus: vec![0.8, 0.9, 1.0, 1.1, 1.2],
            prefix_lengths: vec![1, 5, 10, 30, 60],
            model_sizes: vec![LmConfig::tiny(), LmConfig::small()],
            downstream: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub experiment: ExperimentConfig,
    pub ablation: AblationConfig,
}

impl RunConfig {
    /// Parses a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        cfg.paths.resolve(base);
        Ok(cfg)
    }

    /// Flag > file > default.
    pub fn apply_overrides(&mut self, c: &Common) {
        if let Some(seed) = c.seed {
            self.experiment.seed = seed;
        }
        if let Some(w) = c.workers {
            self.experiment.selection.workers = w;
        }
        if let Some(tau) = c.tau {
            self.experiment.selection.tau = tau;
        }
        if let Some(m) = c.prefix_len {
            self.experiment.prefix_len = m;
        }
    }

    /// SHA-256 of the effective config. The worker count cannot change any
    /// output, so it is left out.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.experiment.selection.workers = 0;
        let json = serde_json::to_string(&canon).expect("configs always serialize");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Every violated field for `command`, in one pass.
    pub fn validate(&self, command: &Command) -> Result<()> {
        let mut errs = match self.experiment.validate() {
            Ok(()) => Vec::new(),
            Err(Error::Config(v)) => v.into_iter().map(|m| format!("experiment: {m}")).collect(),
            Err(e) => vec![e.to_string()],
        };
        let p = &self.paths;
        let mut need = |field: &str, path: &Path| {
            if !path.is_file() {
                errs.push(format!("paths.{field}: no such file {}", path.display()));
            }
        };
        match command {
            Command::GenData(_) => {}
            Command::TrainBase(_) => need("pretrain", &p.pretrain),
            Command::TunePrefix(_) => {
                need("base_checkpoint", &p.base_checkpoint);
                need("reference", &p.reference);
            }
            Command::Score(_) => {
                need("base_checkpoint", &p.base_checkpoint);
                need("prefix_checkpoint", &p.prefix_checkpoint);
                need("pool", &p.pool);
            }
            Command::Select(_) => {
                need("scores", &p.scores);
                need("pool", &p.pool);
            }
            Command::Baseline { method, .. } => {
                need("pool", &p.pool);
                match method {
                    MethodArg::Ppl => need("base_checkpoint", &p.base_checkpoint),
                    MethodArg::Dsir => need("reference", &p.reference),
                    MethodArg::Random | MethodArg::Full => {}
                }
            }
            Command::Evaluate(_) => {
                need("base_checkpoint", &p.base_checkpoint);
                need("prefix_checkpoint", &p.prefix_checkpoint);
                need("pool", &p.pool);
                need("reference", &p.reference);
                need("heldout", &p.heldout);
            }
            Command::Ablate { which, .. } => match which {
                Ablation::Threshold => {
                    need("base_checkpoint", &p.base_checkpoint);
                    need("prefix_checkpoint", &p.prefix_checkpoint);
                    need("pool", &p.pool);
                    if self.ablation.downstream {
                        need("heldout", &p.heldout);
                    }
                }
                Ablation::PrefixLength => {
                    need("base_checkpoint", &p.base_checkpoint);
                    need("reference", &p.reference);
                    need("heldout", &p.heldout);
                }
                Ablation::ModelSize => {}
            },
        }
        let a = &self.ablation;
        if let Command::Ablate { which, .. } = command {
            match which {
                Ablation::Threshold if a.taus.is_empty() => errs.push("ablation.taus: empty".into()),
                Ablation::Threshold => {
                    if a.taus.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
                        errs.push("ablation.taus: every tau must be finite and > 0".into());
                    }
                }
                Ablation::PrefixLength if a.prefix_lengths.is_empty() => {
                    errs.push("ablation.prefix_lengths: empty".into())
                }
                Ablation::ModelSize => {
                    if a.model_sizes.len() < 2 {
                        errs.push("ablation.model_sizes: need at least two configs".into());
                    }
                    for (i, c) in a.model_sizes.iter().enumerate() {
                        if let Err(Error::Config(v)) = c.validate() {
                            errs.extend(v.into_iter().map(|m| format!("ablation.model_sizes[{i}]: {m}")));
                        }
                    }
                }
                _ => {}
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Outputs written under temporary names and renamed into place together.
struct Staged {
    force: bool,
    files: Vec<(PathBuf, PathBuf)>,
}

impl Staged {
    fn new(force: bool) -> Self {
        Staged { force, files: Vec::new() }
    }

    /// Refuses existing outputs up front, before any work is done.
    fn check(&self, outputs: &[PathBuf]) -> Result<()> {
        if self.force {
            return Ok(());
        }
        match outputs.iter().find(|p| p.exists()) {
            Some(p) => Err(Error::OutputExists(p.clone())),
            None => Ok(()),
        }
    }

    /// A temporary path to write `dest` to.
    fn stage(&mut self, dest: &Path) -> Result<PathBuf> {
        if let Some(dir) = dest.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut name = dest.file_name().unwrap_or_default().to_os_string();
        name.push(".partial");
        let tmp = dest.with_file_name(name);
        self.files.push((tmp.clone(), dest.to_path_buf()));
        Ok(tmp)
    }

    fn write(&mut self, dest: &Path, contents: &str) -> Result<()> {
        let tmp = self.stage(dest)?;
        fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))
    }

    fn commit(mut self) -> Result<()> {
        for (tmp, dest) in std::mem::take(&mut self.files) {
            fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))?;
        }
        Ok(())
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        for (tmp, _) in &self.files {
            let _ = fs::remove_file(tmp);
        }
    }
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Provenance object: tool version, command, config hash, seed and the
/// content hashes of the inputs that were read.
fn provenance(cfg: &RunConfig, command: &str, inputs: &[(&str, &Path)]) -> Result<serde_json::Value> {
    let mut hashes = serde_json::Map::new();
    for (name, path) in inputs {
        hashes.insert(name.to_string(), json!(file_sha256(path)?));
    }
    Ok(json!({
        "tool": "domainsift",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config_hash": cfg.hash(),
        "seed": cfg.experiment.seed,
        "inputs": hashes,
    }))
}

fn header_line(prov: &serde_json::Value) -> String {
    json!({ PROVENANCE_KEY: prov }).to_string()
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut name = stem.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(ext);
    stem.with_file_name(name)
}

/// JSON body behind a provenance line; text and CSV behind a `#` comment.
fn stage_tables(
    staged: &mut Staged,
    stem: &Path,
    header: &str,
    json_body: &str,
    table: &str,
    csv: &str,
) -> Result<()> {
    staged.write(&with_ext(stem, "json"), &format!("{header}\n{json_body}\n"))?;
    staged.write(&with_ext(stem, "txt"), &format!("# {header}\n{table}"))?;
    staged.write(&with_ext(stem, "csv"), &format!("# {header}\n{csv}"))
}

fn pool_datasets(cfg: &RunConfig) -> Result<Datasets> {
    let p = &cfg.paths;
    let load_if = |path: &Path| if path.is_file() { load_corpus(path) } else { Ok(Vec::new()) };
    Ok(Datasets {
        pretrain: Vec::new(),
        pool: load_corpus(&p.pool)?,
        reference: load_if(&p.reference)?,
        heldout: load_if(&p.heldout)?,
    })
}

/// Runs one parsed command.
pub fn run(cli: &Cli) -> Result<()> {
    let common = cli.command.common();
    let mut cfg = RunConfig::load(&common.config)?;
    cfg.apply_overrides(common);
    cfg.validate(&cli.command)?;
    let name = cli.command.name();
    log::info!("{name}: config {}", common.config.display());
    let mut staged = Staged::new(common.force);
    let p = cfg.paths.clone();
    let exp = &cfg.experiment;

    match &cli.command {
        Command::GenData(_) => {
            let outs = [&p.pretrain, &p.pool, &p.reference, &p.heldout];
            staged.check(&outs.map(|x| x.clone()))?;
            let data = build_datasets(exp)?;
            let header = header_line(&provenance(&cfg, &name, &[])?);
            for (path, records) in outs.iter().zip([&data.pretrain, &data.pool, &data.reference, &data.heldout]) {
                let tmp = staged.stage(path)?;
                write_corpus_with_header(&tmp, Some(&header), records.iter())?;
            }
            staged.commit()?;
            println!(
                "{}",
                json!({"pretrain": data.pretrain.len(), "pool": data.pool.len(),
                       "reference": data.reference.len(), "heldout": data.heldout.len()})
            );
        }
        Command::TrainBase(_) => {
            staged.check(std::slice::from_ref(&p.base_checkpoint))?;
            let corpus = load_corpus(&p.pretrain)?;
            let init = init_params(&exp.lm)?;
            let (params, curve) = train_lm(&init, &corpus, &exp.base_train)?;
            let mut prov = provenance(&cfg, &name, &[("pretrain", &p.pretrain)])?;
            prov["train_loss"] = json!(curve);
            let tmp = staged.stage(&p.base_checkpoint)?;
            save_params(&tmp, &params, Some(prov))?;
            staged.commit()?;
            println!("{}", json!({"epochs": curve.len(), "final_loss": curve.last()}));
        }
        Command::TunePrefix(_) => {
            staged.check(&[p.prefix_checkpoint.clone(), p.tune_curve.clone()])?;
            let params = load_params(&p.base_checkpoint)?;
            let reference = load_corpus(&p.reference)?;
            let init = init_prefix(&params.config, exp.prefix_len, exp.prefix_seed())?;
            let (prefix, curve) = tune_prefix(&params, &init, &reference, &exp.tune)?;
            let prov = provenance(
                &cfg,
                &name,
                &[("base_checkpoint", &p.base_checkpoint), ("reference", &p.reference)],
            )?;
            let tmp = staged.stage(&p.prefix_checkpoint)?;
            save_prefix(&tmp, &prefix, &params.config, Some(prov.clone()))?;
            let mut lines = vec![header_line(&prov)];
            lines.extend(
                curve
                    .iter()
                    .enumerate()
                    .map(|(i, ll)| json!({"epoch": i + 1, "mean_ref_log_likelihood": ll}).to_string()),
            );
            staged.write(&p.tune_curve, &(lines.join("\n") + "\n"))?;
            staged.commit()?;
            println!("{}", json!({"prefix_len": prefix.len, "final_ref_log_likelihood": curve.last()}));
        }
        Command::Score(_) => {
            staged.check(std::slice::from_ref(&p.scores))?;
            let params = load_params(&p.base_checkpoint)?;
            let (prefix, _) = load_prefix(&p.prefix_checkpoint)?;
            let prov = provenance(
                &cfg,
                &name,
                &[
                    ("base_checkpoint", &p.base_checkpoint),
                    ("prefix_checkpoint", &p.prefix_checkpoint),
                    ("pool", &p.pool),
                ],
            )?;
            let tmp = staged.stage(&p.scores)?;
            let summary =
                score_stream_with_header(&params, &prefix, &p.pool, &tmp, &exp.selection, Some(&header_line(&prov)))?;
            staged.commit()?;
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
        }
        Command::Select(_) => {
            staged.check(std::slice::from_ref(&p.selected))?;
            let scores = read_scores(&p.scores)?;
            let selection = select_scores(&scores, &exp.selection);
            let pool = load_corpus(&p.pool)?;
            let keep: std::collections::HashSet<&str> = selection.ids.iter().map(String::as_str).collect();
            let chosen: Vec<&CorpusRecord> = pool.iter().filter(|r| keep.contains(r.id.as_str())).collect();
            let prov = provenance(&cfg, &name, &[("scores", &p.scores), ("pool", &p.pool)])?;
            let tmp = staged.stage(&p.selected)?;
            write_corpus_with_header(&tmp, Some(&header_line(&prov)), chosen)?;
            staged.commit()?;
            println!(
                "{}",
                json!({"total": selection.total, "selected": selection.ids.len(), "retention": selection.retention})
            );
        }
        Command::Baseline { method, .. } => {
            let method = Method::from(*method);
            let scores_out = p.baseline_dir.join(format!("{}.jsonl", method.name()));
            let selected_out = p.baseline_dir.join(format!("{}_selected.jsonl", method.name()));
            staged.check(&[scores_out.clone(), selected_out.clone()])?;
            let pool = load_corpus(&p.pool)?;
            let mut inputs: Vec<(&str, &Path)> = vec![("pool", &p.pool)];
            let params = match method {
                Method::Ppl => {
                    inputs.push(("base_checkpoint", &p.base_checkpoint));
                    Some(load_params(&p.base_checkpoint)?)
                }
                _ => None,
            };
            let reference = match method {
                Method::Dsir => {
                    inputs.push(("reference", &p.reference));
                    load_corpus(&p.reference)?
                }
                _ => Vec::new(),
            };
            let k = (method != Method::Full).then(|| exp.budget());
            let scores = run_baseline(
                method,
                &pool,
                k,
                &BaselineInputs {
                    params: params.as_ref(),
                    reference: &reference,
                    seed: exp.seed,
                    n: exp.dsir.n,
                    buckets: exp.dsir.buckets,
                    alpha: exp.dsir.alpha,
                },
            )?;
            let header = header_line(&provenance(&cfg, &name, &inputs)?);
            let tmp = staged.stage(&scores_out)?;
            write_baseline_scores(&tmp, Some(&header), &scores)?;
            let tmp = staged.stage(&selected_out)?;
            let chosen = pool.iter().zip(&scores).filter(|(_, s)| s.selected).map(|(r, _)| r);
            let n = write_corpus_with_header(&tmp, Some(&header), chosen)?;
            staged.commit()?;
            println!("{}", json!({"method": method.name(), "total": pool.len(), "selected": n}));
        }
        Command::Evaluate(_) => {
            let outs = ["json", "txt", "csv"].map(|e| with_ext(&p.report, e));
            staged.check(&outs)?;
            let params = load_params(&p.base_checkpoint)?;
            let (prefix, _) = load_prefix(&p.prefix_checkpoint)?;
            let data = pool_datasets(&cfg)?;
            let report = evaluate(exp, &params, &prefix, &data, DownstreamScope::All)?;
            let header = header_line(&provenance(
                &cfg,
                &name,
                &[
                    ("base_checkpoint", &p.base_checkpoint),
                    ("prefix_checkpoint", &p.prefix_checkpoint),
                    ("pool", &p.pool),
                    ("reference", &p.reference),
                    ("heldout", &p.heldout),
                ],
            )?);
            stage_tables(&mut staged, &p.report, &header, &report.to_json(), &report.to_table(), &report.to_csv())?;
            staged.commit()?;
            print!("{}", report.to_table());
        }
        Command::Ablate { which, .. } => {
            let stem = p.ablation_dir.join(which.name());
            let outs = ["json", "txt", "csv"].map(|e| with_ext(&stem, e));
            staged.check(&outs)?;
            let a = &cfg.ablation;
            let (table, inputs): (AblationTable, Vec<(&str, &Path)>) = match which {
                Ablation::Threshold => {
                    let params = load_params(&p.base_checkpoint)?;
                    let (prefix, _) = load_prefix(&p.prefix_checkpoint)?;
                    let pool = load_corpus(&p.pool)?;
                    let heldout = if a.downstream { load_corpus(&p.heldout)? } else { Vec::new() };
                    let downstream = a.downstream.then(|| DownstreamArgs {
                        heldout: &heldout,
                        hyper: &exp.downstream,
                    });
                    let rows = ablate_threshold(
                        &pool,
                        &params,
                        &prefix,
                        &a.taus,
                        &exp.selection,
                        exp.target.name(),
                        downstream,
                    )?;
                    (
                        AblationTable::Threshold(rows),
                        vec![
                            ("base_checkpoint", &p.base_checkpoint),
                            ("prefix_checkpoint", &p.prefix_checkpoint),
                            ("pool", &p.pool),
                        ],
                    )
                }
                Ablation::PrefixLength => {
                    let params = load_params(&p.base_checkpoint)?;
                    let reference = load_corpus(&p.reference)?;
                    let heldout = load_corpus(&p.heldout)?;
                    let rows = ablate_prefix_length(
                        &params,
                        &reference,
                        &heldout,
                        &a.prefix_lengths,
                        &exp.tune,
                        exp.prefix_seed(),
                    )?;
                    (
                        AblationTable::PrefixLength(rows),
                        vec![
                            ("base_checkpoint", &p.base_checkpoint),
                            ("reference", &p.reference),
                            ("heldout", &p.heldout),
                        ],
                    )
                }
                Ablation::ModelSize => (
                    AblationTable::ModelSize(ablate_model_size(&a.model_sizes, exp, a.downstream)?),
                    Vec::new(),
                ),
            };
            let header = header_line(&provenance(&cfg, &name, &inputs)?);
            stage_tables(&mut staged, &stem, &header, &table.to_json(), &table.to_table(), &table.to_csv())?;
            staged.commit()?;
            print!("{}", table.to_table());
        }
    }
    Ok(())
}

/// Reads a report written by `evaluate`, skipping its provenance line.
pub fn load_report(path: &Path) -> Result<crate::evaluation::EvalReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let body = match text.split_once('\n') {
        Some((first, rest)) if crate::corpus::is_provenance_line(first) => rest,
        _ => &text,
    };
    crate::evaluation::EvalReport::from_json(body).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })
}

/// Process exit code for an error category.
pub fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "config" | "argument" => 2,
        "io" => 3,
        "parse" | "framing" | "duplicate-id" => 4,
        "shape" | "checkpoint" => 5,
        "divergence" => 6,
        "output-exists" => 7,
        _ => 1,
    }
}

/// Log level from [`LOG_ENV`] (`error`, `warn`, `info`, `debug`); `warn`
/// when unset.
pub fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn"))
        .format_timestamp(None)
        .try_init();
}

pub fn main() -> ExitCode {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            // clap's message spans several lines; keep it to one.
            let text = e.to_string();
            let msg: Vec<&str> = text
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(|l| l.trim().trim_start_matches("error: "))
                .filter(|l| !l.is_empty())
                .collect();
            eprintln!("error[argument]: {}", msg.join(" "));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
