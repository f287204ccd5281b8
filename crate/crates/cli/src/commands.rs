use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand, ValueEnum};
use orthoprompt::fixtures::StoryFixture;
use orthoprompt::prompt::gather_tokens;
use orthoprompt::{
    entanglement_report, pooled_cosine, refine, refinement_report, slice, ConceptBases,
    EmbeddingMatrix, EncoderConfig, FramePartition, Granularity, Mode, ModeReport, Pooling,
    PromptLayout, RefinementConfig, ReportMode, TokenSequence, ToyEncoder, DEFAULT_RANK_TOL,
    DEFAULT_SEED,
};
use serde::Serialize;

use crate::emb;
use crate::error::{CliError, Context};
use crate::spec::{ConceptSource, PartitionSpec};

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Refine a prompt embedding for one frame.
    Refine(RefineArgs),
    /// Pairwise pooled cosine similarity between prompt segments.
    Analyze(AnalyzeArgs),
    /// Encode token ids with the toy causal encoder.
    Simulate(SimulateArgs),
    /// Refine over a grid of strengths and modes and tabulate the results.
    Sweep(SweepArgs),
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Refine(args) => run_refine(&args),
        Command::Analyze(args) => run_analyze(&args),
        Command::Simulate(args) => run_simulate(&args),
        Command::Sweep(args) => run_sweep(&args),
    }
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Full prompt embedding (EMB1).
    #[arg(long)]
    pub input: PathBuf,
    /// Express concept embedding, encoded on its own.
    #[arg(long, requires = "suppress")]
    pub express: Option<PathBuf>,
    /// Suppress concept embedding, encoded on its own.
    #[arg(long, requires = "express")]
    pub suppress: Option<PathBuf>,
    /// Partition file giving segment lengths and the frame to render.
    #[arg(long)]
    pub partition: Option<PathBuf>,
    /// Relative rank tolerance for the concept bases.
    #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
    pub tol: f64,
}

/// Everything a refinement needs, loaded and checked.
pub struct Problem {
    pub x: EmbeddingMatrix,
    pub partition: Option<FramePartition>,
    pub express: EmbeddingMatrix,
    pub suppress: Option<EmbeddingMatrix>,
    pub bases: ConceptBases,
}

impl InputArgs {
    pub fn load(&self) -> Result<Problem, CliError> {
        let x = emb::read(&self.input)?;
        let spec = match &self.partition {
            Some(path) => {
                let spec = PartitionSpec::read(path)?;
                let (layout, partition) = spec.partition(path)?;
                if layout.total_tokens() != x.rows() {
                    return Err(CliError::format(
                        path,
                        format!(
                            "segments cover {} tokens but {} has {} rows",
                            layout.total_tokens(),
                            self.input.display(),
                            x.rows()
                        ),
                    ));
                }
                Some((path, spec, partition))
            }
            None => None,
        };

        let (express, suppress) = match (&self.express, &self.suppress, &spec) {
            (Some(e), Some(s), _) => {
                let express = read_concept(e, &x)?;
                let suppress = read_concept(s, &x)?;
                (express, Some(suppress))
            }
            (_, _, Some((path, spec, partition))) => match spec.mode {
                ConceptSource::Slice => {
                    let express = slice(&x, &partition.express_spans).context("--partition")?;
                    let suppress = if partition.suppress_spans.is_empty() {
                        None
                    } else {
                        Some(slice(&x, &partition.suppress_spans).context("--partition")?)
                    };
                    (express, suppress)
                }
                ConceptSource::Reencode => {
                    return Err(CliError::usage(format!(
                        "{} uses reencode mode, which needs --express and --suppress",
                        path.display()
                    )))
                }
            },
            _ => return Err(CliError::usage(
                "concepts are missing: pass --express and --suppress, or --partition in slice mode",
            )),
        };

        let bases = ConceptBases::from_concepts(&express, suppress.as_ref(), self.tol)
            .context("building concept bases")?;
        Ok(Problem {
            x,
            partition: spec.map(|(_, _, p)| p),
            express,
            suppress,
            bases,
        })
    }
}

fn read_concept(path: &Path, x: &EmbeddingMatrix) -> Result<EmbeddingMatrix, CliError> {
    let m = emb::read(path)?;
    if m.cols() != x.cols() {
        return Err(CliError::format(
            path,
            format!(
                "dimension {} does not match the input dimension {}",
                m.cols(),
                x.cols()
            ),
        ));
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GranularityArg {
    PerToken,
    Flattened,
}

impl From<GranularityArg> for Granularity {
    fn from(g: GranularityArg) -> Self {
        match g {
            GranularityArg::PerToken => Granularity::PerToken,
            GranularityArg::Flattened => Granularity::Flattened,
        }
    }
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    /// Suppression strength in [0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// dual, single, dual-rescale or rescale-only.
    #[arg(long, default_value = "dual")]
    pub mode: Mode,
    #[arg(long, value_enum, default_value = "per-token")]
    pub granularity: GranularityArg,
    /// Rescale factor for the rescaling modes.
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    /// Refined embedding (EMB1; a .json path writes the text form).
    #[arg(long)]
    pub output: PathBuf,
    /// Energy report; .csv writes CSV, anything else JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn config(
    alpha: f64,
    mode: Mode,
    granularity: GranularityArg,
    beta: f64,
    tol: f64,
) -> Result<RefinementConfig, CliError> {
    let cfg = RefinementConfig {
        alpha,
        mode,
        granularity: granularity.into(),
        rescale_factor: beta,
        tol,
        ..RefinementConfig::default()
    };
    cfg.validate().context("invalid flags")?;
    Ok(cfg)
}

fn run_refine(args: &RefineArgs) -> Result<(), CliError> {
    let cfg = config(
        args.alpha,
        args.mode,
        args.granularity,
        args.beta,
        args.inputs.tol,
    )?;
    if cfg.mode.needs_spans() && args.inputs.partition.is_none() {
        return Err(CliError::usage(format!(
            "--mode {} needs --partition",
            cfg.mode
        )));
    }
    let problem = args.inputs.load()?;
    let part = problem.partition.as_ref();
    let out = refine(
        &problem.x,
        &problem.bases.express,
        &problem.bases.suppress,
        &cfg,
        part,
    )
    .context("refine")?;
    emb::write(&args.output, &out.x_refined)?;

    if let Some(path) = &args.report {
        let report = refinement_report(&problem.x, part, &problem.bases, &cfg, &[cfg.mode.into()])
            .context("report")?;
        write_rows(path, &report.rows)?;
    }
    eprintln!(
        "wrote {} ({}x{}), express rank {}, suppress rank {}",
        args.output.display(),
        out.x_refined.rows(),
        out.x_refined.cols(),
        problem.bases.express.rank(),
        problem.bases.suppress.rank()
    );
    Ok(())
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let is_csv = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let bytes = if is_csv {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in rows {
            w.serialize(row)
                .map_err(|e| CliError::format(path, e.to_string()))?;
        }
        w.into_inner()
            .map_err(|e| CliError::format(path, e.to_string()))?
    } else {
        let mut v =
            serde_json::to_vec_pretty(rows).map_err(|e| CliError::format(path, e.to_string()))?;
        v.push(b'\n');
        v
    };
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolingArg {
    Mean,
    LastToken,
}

impl From<PoolingArg> for Pooling {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::Mean => Pooling::Mean,
            PoolingArg::LastToken => Pooling::LastToken,
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Full prompt embedding (EMB1).
    #[arg(long)]
    pub input: PathBuf,
    /// Partition file giving segment lengths.
    #[arg(long)]
    pub partition: PathBuf,
    #[arg(long, value_enum, default_value = "mean")]
    pub pooling: PoolingArg,
    /// JSON report path; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Also write the similarity matrix as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn run_analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let x = emb::read(&args.input)?;
    let spec = PartitionSpec::read(&args.partition)?;
    let layout = spec.layout(&args.partition)?;
    if layout.total_tokens() != x.rows() {
        return Err(CliError::format(
            &args.partition,
            format!(
                "segments cover {} tokens but {} has {} rows",
                layout.total_tokens(),
                args.input.display(),
                x.rows()
            ),
        ));
    }
    let report = entanglement_report(&x, &layout, args.pooling.into()).context("analyze")?;
    let mut json = serde_json::to_vec_pretty(&report).expect("report serializes");
    json.push(b'\n');
    match &args.output {
        Some(path) => fs::write(path, json).map_err(|e| CliError::io(path, e))?,
        None => std::io::stdout()
            .write_all(&json)
            .map_err(|e| CliError::io(Path::new("<stdout>"), e))?,
    }

    if let Some(path) = &args.csv {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = std::iter::once("segment").chain(report.labels.iter().map(String::as_str));
        w.write_record(header)
            .map_err(|e| CliError::format(path, e.to_string()))?;
        for (label, row) in report.labels.iter().zip(&report.pairwise) {
            let cells = row
                .iter()
                .map(|c| c.map(|v| v.to_string()).unwrap_or_default());
            w.write_record(std::iter::once(label.clone()).chain(cells))
                .map_err(|e| CliError::format(path, e.to_string()))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| CliError::format(path, e.to_string()))?;
        fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Emit {
    Full,
    Express,
    Suppress,
    All,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 256)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 1024)]
    pub vocab: usize,
    /// Attention temperature; smaller is sharper.
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Comma or space separated token ids, or a fixture name such as dog-story.
    #[arg(long)]
    pub tokens: String,
    /// Partition file; fixtures bring their own layout.
    #[arg(long)]
    pub partition: Option<PathBuf>,
    /// Frame to render, overriding the partition file. Defaults to 1 for fixtures.
    #[arg(long)]
    pub frame: Option<usize>,
    #[arg(long, value_enum, default_value = "full")]
    pub emit: Emit,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also write the partition used, for later refine or analyze runs.
    #[arg(long)]
    pub save_partition: Option<PathBuf>,
}

fn parse_tokens(text: &str) -> Result<Vec<u32>, CliError> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<u32>().map_err(|_| {
                CliError::usage(format!(
                    "--tokens: {t:?} is neither a token id nor a fixture name"
                ))
            })
        })
        .collect()
}

fn run_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let fixture = StoryFixture::by_name(args.tokens.trim());
    let ids = match fixture {
        Some(f) => f.tokens().context("--tokens")?,
        None => parse_tokens(&args.tokens)?,
    };
    let tokens = TokenSequence::new(ids).context("--tokens")?;

    let mut plan: Option<(PromptLayout, usize, ConceptSource)> = match (&args.partition, fixture) {
        (Some(path), _) => {
            let spec = PartitionSpec::read(path)?;
            Some((spec.layout(path)?, spec.frame, spec.mode))
        }
        (None, Some(f)) => Some((f.layout().context("--tokens")?, 1, ConceptSource::Reencode)),
        (None, None) => None,
    };
    if let (Some(frame), Some(plan)) = (args.frame, plan.as_mut()) {
        plan.1 = frame;
    }
    if let Some((layout, _, _)) = &plan {
        if layout.total_tokens() != tokens.len() {
            return Err(CliError::usage(format!(
                "--tokens has {} ids but the partition covers {}",
                tokens.len(),
                layout.total_tokens()
            )));
        }
    }

    let cfg = EncoderConfig {
        vocab_size: args.vocab,
        dim: args.dim,
        n_layers: args.layers,
        n_heads: args.heads,
        seed: args.seed,
        temperature: args.temperature,
    };
    let encoder = ToyEncoder::new(cfg).context("encoder flags")?;
    let x = encoder.encode(&tokens).context("--tokens")?;

    fs::create_dir_all(&args.out_dir).map_err(|e| CliError::io(&args.out_dir, e))?;
    let want_full = matches!(args.emit, Emit::Full | Emit::All);
    let want_express = matches!(args.emit, Emit::Express | Emit::All);
    let want_suppress = matches!(args.emit, Emit::Suppress | Emit::All);
    if want_full {
        emb::write(&args.out_dir.join("full.emb"), &x)?;
    }

    if want_express || want_suppress || args.save_partition.is_some() {
        let Some((layout, frame, source)) = &plan else {
            return Err(CliError::usage(
                "--emit express/suppress and --save-partition need --partition or a fixture name in --tokens",
            ));
        };
        let partition = layout.partition(*frame).context("--frame")?;
        let concept = |spans: &[orthoprompt::Span]| -> Result<EmbeddingMatrix, CliError> {
            match source {
                ConceptSource::Slice => slice(&x, spans).context("slicing concepts"),
                ConceptSource::Reencode => {
                    let ids =
                        gather_tokens(tokens.ids(), spans).context("gathering concept tokens")?;
                    let seq = TokenSequence::new(ids).context("gathering concept tokens")?;
                    encoder.encode(&seq).context("encoding concepts")
                }
            }
        };
        if want_express {
            emb::write(
                &args.out_dir.join("express.emb"),
                &concept(&partition.express_spans)?,
            )?;
        }
        if want_suppress {
            if partition.suppress_spans.is_empty() {
                if args.emit == Emit::Suppress {
                    return Err(CliError::usage(
                        "a single-frame prompt has nothing to suppress",
                    ));
                }
            } else {
                emb::write(
                    &args.out_dir.join("suppress.emb"),
                    &concept(&partition.suppress_spans)?,
                )?;
            }
        }
        if let Some(path) = &args.save_partition {
            let spec = PartitionSpec::from_layout(layout, *frame, *source);
            let mut json = serde_json::to_vec_pretty(&spec).expect("partition serializes");
            json.push(b'\n');
            fs::write(path, json).map_err(|e| CliError::io(path, e))?;
        }
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    /// start:stop:step (inclusive) or a comma separated list.
    #[arg(long, default_value = "0:1:0.1")]
    pub alphas: String,
    /// Comma separated modes.
    #[arg(long, default_value = "dual,single")]
    pub modes: String,
    #[arg(long, value_enum, default_value = "per-token")]
    pub granularity: GranularityArg,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    #[arg(long, value_enum, default_value = "mean")]
    pub pooling: PoolingArg,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Parses `start:stop:step` into `start + i * step` for every value not past
/// `stop`, or a plain comma separated list.
pub fn parse_alphas(text: &str) -> Result<Vec<f64>, CliError> {
    let bad = |why: &str| CliError::usage(format!("--alphas {text:?}: {why}"));
    let number = |t: &str| t.trim().parse::<f64>().map_err(|_| bad("not a number"));
    let parts: Vec<&str> = text.split(':').collect();
    let values = match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (number(start)?, number(stop)?, number(step)?);
            let valid = step > 0.0 && start <= stop && start.is_finite() && stop.is_finite();
            if !valid {
                return Err(bad("expected start <= stop and step > 0"));
            }
            let slack = step * 1e-9;
            let mut out = Vec::new();
            let mut i = 0u32;
            loop {
                let v = start + f64::from(i) * step;
                if v > stop + slack {
                    break;
                }
                out.push(v.min(stop));
                i += 1;
            }
            out
        }
        [list] => list
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(number)
            .collect::<Result<_, _>>()?,
        _ => return Err(bad("expected start:stop:step")),
    };
    if values.is_empty() {
        return Err(bad("no values"));
    }
    Ok(values)
}

pub fn parse_modes(text: &str) -> Result<Vec<Mode>, CliError> {
    let modes = text
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<Mode>()
                .map_err(|e| CliError::usage(format!("--modes: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if modes.is_empty() {
        return Err(CliError::usage("--modes: at least one mode is required"));
    }
    Ok(modes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub mode: ReportMode,
    pub suppress_energy_before: f64,
    pub suppress_energy_after: f64,
    pub express_energy_before: f64,
    pub express_energy_after: f64,
    pub express_preserved: bool,
    pub orthogonality_max_residual: f64,
    /// Pooled cosine of the refined frame tokens with the express concept.
    pub cosine_express: Option<f64>,
    /// Pooled cosine of the refined frame tokens with the suppress concept.
    pub cosine_suppress: Option<f64>,
}

pub fn sweep(
    problem: &Problem,
    alphas: &[f64],
    modes: &[Mode],
    base: &RefinementConfig,
    pooling: Pooling,
) -> Result<Vec<SweepRow>, CliError> {
    let part = problem.partition.as_ref();
    let mut rows = Vec::with_capacity(alphas.len() * modes.len());
    for &alpha in alphas {
        for &mode in modes {
            let cfg = base.with_alpha(alpha).with_mode(mode);
            cfg.validate().context("--alphas")?;
            let report = refinement_report(&problem.x, part, &problem.bases, &cfg, &[mode.into()])
                .context(format!("mode {mode} at alpha {alpha}"))?;
            let refined = refine(
                &problem.x,
                &problem.bases.express,
                &problem.bases.suppress,
                &cfg,
                part,
            )
            .context(format!("mode {mode} at alpha {alpha}"))?
            .x_refined;
            let view = match part {
                Some(p) => slice(&refined, &[p.frame_span()]).context("frame tokens")?,
                None => refined,
            };
            let ModeReport {
                suppress_energy_before,
                suppress_energy_after,
                express_energy_before,
                express_energy_after,
                express_preserved,
                orthogonality_max_residual,
                ..
            } = report.rows[1].clone();
            rows.push(SweepRow {
                alpha,
                mode: mode.into(),
                suppress_energy_before,
                suppress_energy_after,
                express_energy_before,
                express_energy_after,
                express_preserved,
                orthogonality_max_residual,
                cosine_express: pooled_cosine(&view, &problem.express, pooling).ok(),
                cosine_suppress: problem
                    .suppress
                    .as_ref()
                    .and_then(|s| pooled_cosine(&view, s, pooling).ok()),
            });
        }
    }
    Ok(rows)
}

fn run_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let alphas = parse_alphas(&args.alphas)?;
    let modes = parse_modes(&args.modes)?;
    if args.inputs.partition.is_none() {
        if let Some(m) = modes.iter().find(|m| m.needs_spans()) {
            return Err(CliError::usage(format!("--modes {m} needs --partition")));
        }
    }
    let base = config(
        1.0,
        Mode::Dual,
        args.granularity,
        args.beta,
        args.inputs.tol,
    )?;
    let problem = args.inputs.load()?;
    let rows = sweep(&problem, &alphas, &modes, &base, args.pooling.into())?;
    match &args.output {
        Some(path) => write_rows(path, &rows),
        None => {
            let mut w = csv::Writer::from_writer(std::io::stdout());
            for row in &rows {
                w.serialize(row)
                    .map_err(|e| CliError::format(Path::new("<stdout>"), e.to_string()))?;
            }
            w.flush()
                .map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}
