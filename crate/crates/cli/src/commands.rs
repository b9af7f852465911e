//! The train, cluster, evaluate, synth, and stats commands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};

use cognet::align::{ldn, GapPenalties, DEFAULT_GAP};
use cognet::cluster::{cluster_wordlist, ClusterMethod, Partition};
use cognet::corpus::{
    extract_probable_cognates, form_to_string, generate_family, parse_wordlist, SynthConfig,
    Wordlist,
};
use cognet::eval::{
    dataset_stats, evaluate_clustering, report_json, report_tsv, wordlength_diff_profile,
    EvalReport,
};
use cognet::phmm::{self, PhmmModel};
use cognet::pmi::{self, InterpolationSpace, PmiModel};

use crate::util::{config_header, read_text, write_atomic, AppError, FileConfig};

pub const DEFAULT_M: usize = 512;
pub const DEFAULT_ALPHA: f64 = 0.55;
pub const DEFAULT_EPOCHS: usize = 5;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MAX_ITER: usize = 20;
pub const DEFAULT_TOL: f64 = 1e-4;
pub const DEFAULT_PSEUDOCOUNT: f64 = 1.0;

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Pmi,
    Phmm,
    Ldn,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Pmi => "pmi",
            ModelKind::Phmm => "phmm",
            ModelKind::Ldn => "ldn",
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Batch,
    Online,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Batch => "batch",
            Mode::Online => "online",
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Space {
    Scores,
    Counts,
}

impl std::fmt::Display for Space {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Space::Scores => "scores",
            Space::Counts => "counts",
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClusterKind {
    Infomap,
    Components,
}

impl std::fmt::Display for ClusterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClusterKind::Infomap => "infomap",
            ClusterKind::Components => "components",
        })
    }
}

impl From<ClusterKind> for ClusterMethod {
    fn from(k: ClusterKind) -> ClusterMethod {
        match k {
            ClusterKind::Infomap => ClusterMethod::Infomap,
            ClusterKind::Components => ClusterMethod::Components,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Tsv,
    Json,
}

/// Flag > config file > built-in default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Same precedence for enum-valued settings named by string in the file.
pub fn pick_enum<T: ValueEnum>(
    flag: Option<T>,
    file: Option<&String>,
    key: &str,
    default: T,
) -> Result<T, AppError> {
    if let Some(v) = flag {
        return Ok(v);
    }
    match file {
        Some(s) => T::from_str(s, true)
            .map_err(|_| AppError::Validation(format!("bad config value for {key}: {s}"))),
        None => Ok(default),
    }
}

pub fn resolve_gaps(
    open: Option<f64>,
    extend: Option<f64>,
    file: &FileConfig,
) -> Result<GapPenalties, AppError> {
    let d = GapPenalties::default();
    let open = pick(open, file.gap_open, d.open);
    let extend = pick(extend, file.gap_extend, d.extend);
    Ok(GapPenalties::new(open, extend)?)
}

pub fn load_wordlist(path: &Path) -> Result<Wordlist, AppError> {
    let text = read_text(path)?;
    parse_wordlist(&text).map_err(|e| AppError::Validation(format!("{}: {e}", path.display())))
}

#[derive(Args)]
pub struct TrainArgs {
    /// Wordlist TSV (doculect, concept, form).
    #[arg(long)]
    input: PathBuf,
    /// Where the model file goes.
    #[arg(long)]
    out: PathBuf,
    /// Model family to train (ldn has nothing to train).
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    mode: Option<Mode>,
    /// Minibatch size (online mode).
    #[arg(long)]
    m: Option<usize>,
    /// Stepsize decay exponent in [0.5, 1.0] (online mode).
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Length-normalized edit distance cutoff for training pairs.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    gap_open: Option<f64>,
    #[arg(long)]
    gap_extend: Option<f64>,
    #[arg(long)]
    pseudocount: Option<f64>,
    /// Batch-mode iteration cap.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Batch-mode convergence tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Interpolate online updates on scores or on count distributions.
    #[arg(long)]
    space: Option<Space>,
}

pub fn train(args: &TrainArgs, file: &FileConfig) -> Result<(), AppError> {
    let started = Instant::now();
    let model_kind = pick_enum(args.model, file.model.as_ref(), "model", ModelKind::Pmi)?;
    let mode = pick_enum(args.mode, file.mode.as_ref(), "mode", Mode::Online)?;
    let m = pick(args.m, file.m, DEFAULT_M);
    let alpha = pick(args.alpha, file.alpha, DEFAULT_ALPHA);
    let epochs = pick(args.epochs, file.epochs, DEFAULT_EPOCHS);
    let seed = pick(args.seed, file.seed, DEFAULT_SEED);
    let threshold = pick(args.threshold, file.threshold, DEFAULT_THRESHOLD);
    let pseudocount = pick(args.pseudocount, file.pseudocount, DEFAULT_PSEUDOCOUNT);
    let max_iter = pick(args.max_iter, file.max_iter, DEFAULT_MAX_ITER);
    let tol = pick(args.tol, file.tol, DEFAULT_TOL);
    let space = pick_enum(args.space, file.space.as_ref(), "space", Space::Scores)?;
    let gaps = resolve_gaps(args.gap_open, args.gap_extend, file)?;

    if model_kind == ModelKind::Ldn {
        return Err(AppError::Validation(
            "ldn is a fixed baseline with nothing to train".into(),
        ));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(AppError::Validation(format!(
            "threshold = {threshold} outside (0, 1]"
        )));
    }
    match mode {
        Mode::Batch => {
            if args.m.is_some() || args.alpha.is_some() {
                eprintln!("warning: batch mode ignores --m and --alpha");
            }
        }
        Mode::Online => {
            if m == 0 {
                return Err(AppError::Validation("m must be at least 1".into()));
            }
            if !(0.5..=1.0).contains(&alpha) {
                return Err(AppError::Validation(format!(
                    "alpha = {alpha} outside [0.5, 1.0]"
                )));
            }
            if epochs == 0 {
                return Err(AppError::Validation("epochs must be at least 1".into()));
            }
        }
    }

    let wl = load_wordlist(&args.input)?;
    let pairs = extract_probable_cognates(&wl, threshold);
    if pairs.is_empty() {
        return Err(AppError::Validation(format!(
            "no cross-doculect pairs fall below threshold {threshold}"
        )));
    }

    let mut entries = vec![
        ("model", model_kind.to_string()),
        ("mode", mode.to_string()),
        ("input", args.input.display().to_string()),
        ("threshold", threshold.to_string()),
        ("gap_open", gaps.open.to_string()),
        ("gap_extend", gaps.extend.to_string()),
        ("pseudocount", pseudocount.to_string()),
    ];
    match mode {
        Mode::Batch => {
            entries.push(("max_iter", max_iter.to_string()));
            entries.push(("tol", tol.to_string()));
        }
        Mode::Online => {
            entries.push(("m", m.to_string()));
            entries.push(("alpha", alpha.to_string()));
            entries.push(("epochs", epochs.to_string()));
            entries.push(("seed", seed.to_string()));
            if model_kind == ModelKind::Pmi {
                entries.push(("space", space.to_string()));
            }
        }
    }

    let (body, steps, metric, last) = match model_kind {
        ModelKind::Pmi => {
            let model = match mode {
                Mode::Batch => {
                    let cfg = pmi::BatchConfig {
                        max_iter,
                        tol,
                        pseudocount,
                        ..Default::default()
                    };
                    pmi::train_batch(&pairs, gaps, &cfg)?
                }
                Mode::Online => {
                    let cfg = pmi::OnlineConfig {
                        m,
                        alpha,
                        epochs,
                        seed,
                        space: match space {
                            Space::Scores => InterpolationSpace::Scores,
                            Space::Counts => InterpolationSpace::Counts,
                        },
                        pseudocount,
                        ..Default::default()
                    };
                    pmi::train_online(&pairs, gaps, &cfg)?
                }
            };
            let trace = &model.meta.trace;
            (
                pmi::write_model(&model),
                trace.len(),
                "mean similarity",
                trace.last().copied(),
            )
        }
        ModelKind::Phmm => {
            let init = phmm::init_params(&pairs, DEFAULT_GAP, pseudocount)?;
            let null = phmm::NullModel::from_pairs(&pairs, pseudocount)?;
            let fit = match mode {
                Mode::Batch => phmm::baum_welch_batch(&pairs, &init, max_iter, tol)?,
                Mode::Online => {
                    let cfg = phmm::OnlineConfig {
                        m,
                        alpha,
                        epochs,
                        seed,
                    };
                    phmm::baum_welch_online(&pairs, &init, &cfg)?
                }
            };
            let model = PhmmModel {
                params: fit.params,
                null,
            };
            (
                phmm::write_phmm(&model),
                fit.loglik.len(),
                "log-likelihood",
                fit.loglik.last().copied(),
            )
        }
        ModelKind::Ldn => unreachable!("rejected above"),
    };

    write_atomic(&args.out, &(config_header("train", &entries) + &body))?;
    println!(
        "trained {model_kind} ({mode}) on {} pairs from {}",
        pairs.len(),
        args.input.display()
    );
    match last {
        Some(v) => println!("{steps} updates, final {metric} {v:.6}"),
        None => println!("{steps} updates"),
    }
    println!("wall time {:.2}s", started.elapsed().as_secs_f64());
    println!("model written to {}", args.out.display());
    Ok(())
}

#[derive(Args)]
pub struct ClusterArgs {
    #[arg(long)]
    input: PathBuf,
    /// Cluster table destination.
    #[arg(long)]
    out: PathBuf,
    /// Distance source: a trained model kind, or the ldn baseline.
    #[arg(long)]
    model: Option<ModelKind>,
    /// Trained model file (required for pmi and phmm).
    #[arg(long)]
    model_file: Option<PathBuf>,
    /// Distances below this become graph edges.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Community detection or plain connected components.
    #[arg(long)]
    cluster: Option<ClusterKind>,
}

pub fn cluster(args: &ClusterArgs, file: &FileConfig) -> Result<(), AppError> {
    let model_kind = pick_enum(args.model, file.model.as_ref(), "model", ModelKind::Pmi)?;
    let threshold = pick(args.threshold, file.threshold, DEFAULT_THRESHOLD);
    let seed = pick(args.seed, file.seed, DEFAULT_SEED);
    let method: ClusterMethod = pick_enum(
        args.cluster,
        file.cluster.as_ref(),
        "cluster",
        ClusterKind::Infomap,
    )?
    .into();
    if !(0.0..=1.0).contains(&threshold) {
        return Err(AppError::Validation(format!(
            "threshold = {threshold} outside [0, 1]"
        )));
    }

    let wl = load_wordlist(&args.input)?;
    let parts = match model_kind {
        ModelKind::Ldn => {
            if args.model_file.is_some() {
                return Err(AppError::Validation(
                    "--model-file does not apply to the ldn baseline".into(),
                ));
            }
            cluster_wordlist(
                &wl,
                |a, b| ldn(&a.form, &b.form).map_err(AppError::from),
                threshold,
                seed,
                method,
            )?
        }
        ModelKind::Pmi => {
            let path = require_model_file(args.model_file.as_deref(), model_kind)?;
            let mut model: PmiModel = pmi::load_model(path)?;
            let added = model.scores.extend_alphabet(&wl.alphabet());
            if added > 0 {
                eprintln!("warning: {added} segments unseen in training get floor weights");
            }
            cluster_wordlist(
                &wl,
                |a, b| Ok::<_, AppError>(pmi::pmi_distance(&a.form, &b.form, &model)),
                threshold,
                seed,
                method,
            )?
        }
        ModelKind::Phmm => {
            let path = require_model_file(args.model_file.as_deref(), model_kind)?;
            let mut model = phmm::load_phmm(path)?;
            let added = model.extend_alphabet(&wl.alphabet());
            if added > 0 {
                eprintln!("warning: {added} segments unseen in training get floor probabilities");
            }
            cluster_wordlist(
                &wl,
                |a, b| {
                    phmm::phmm_distance(&a.form, &b.form, &model.params, &model.null)
                        .map_err(AppError::from)
                },
                threshold,
                seed,
                method,
            )?
        }
    };

    let mut entries = vec![("model", model_kind.to_string())];
    if let Some(p) = &args.model_file {
        entries.push(("model_file", p.display().to_string()));
    }
    entries.push(("input", args.input.display().to_string()));
    entries.push(("threshold", threshold.to_string()));
    entries.push(("seed", seed.to_string()));
    entries.push(("cluster", method.to_string()));

    let mut out = config_header("cluster", &entries);
    out.push_str("doculect\tconcept\tform\tcluster_id\n");
    let mut n_clusters = 0;
    for concept in wl.concepts() {
        let part = &parts[concept.as_str()];
        n_clusters += part.n_clusters();
        for (i, w) in wl.words_for_concept(concept).enumerate() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                w.doculect,
                concept,
                form_to_string(&w.form),
                part.cluster_of(i)
            ));
        }
    }
    write_atomic(&args.out, &out)?;
    println!(
        "clustered {} words into {n_clusters} clusters over {} concepts",
        wl.len(),
        wl.concepts().len()
    );
    println!("cluster table written to {}", args.out.display());
    Ok(())
}

fn require_model_file(path: Option<&Path>, kind: ModelKind) -> Result<&Path, AppError> {
    path.ok_or_else(|| AppError::Validation(format!("--model {kind} needs --model-file")))
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Cluster table produced by the cluster command.
    #[arg(long)]
    input: PathBuf,
    /// Wordlist with gold cognate classes.
    #[arg(long)]
    gold: PathBuf,
    /// Report destination (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Tsv)]
    format: ReportFormat,
}

/// Cluster-table rows keyed for matching against the gold wordlist.
/// Identical (doculect, form) rows within a concept queue up in file
/// order, mirroring the word order the cluster command wrote.
type ClusterRows = BTreeMap<String, BTreeMap<(String, String), Vec<usize>>>;

fn parse_cluster_table(text: &str, path: &Path) -> Result<ClusterRows, AppError> {
    let bad =
        |line: usize, msg: &str| AppError::Validation(format!("{}:{line}: {msg}", path.display()));
    let mut rows: ClusterRows = BTreeMap::new();
    let mut seen_header = false;
    for (i, raw) in text.lines().enumerate() {
        let l = raw.trim_end_matches('\r');
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != 4 {
            return Err(bad(i + 1, "expected 4 tab-separated fields"));
        }
        if !seen_header {
            if fields == ["doculect", "concept", "form", "cluster_id"] {
                seen_header = true;
                continue;
            }
            return Err(bad(
                i + 1,
                "missing doculect\\tconcept\\tform\\tcluster_id header",
            ));
        }
        let id: usize = fields[3]
            .parse()
            .map_err(|_| bad(i + 1, "cluster_id is not a nonnegative integer"))?;
        rows.entry(fields[1].to_string())
            .or_default()
            .entry((fields[0].to_string(), fields[2].to_string()))
            .or_default()
            .push(id);
    }
    if !seen_header {
        return Err(AppError::Validation(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Ok(rows)
}

/// Re-key the table into per-concept partitions in gold word order.
/// Any concept whose rows do not match the gold words one-to-one is a
/// coverage failure; all offenders are reported together.
fn partitions_from_rows(
    mut rows: ClusterRows,
    gold: &Wordlist,
) -> Result<BTreeMap<String, Partition>, AppError> {
    let mut parts = BTreeMap::new();
    let mut offending: Vec<String> = Vec::new();
    for concept in gold.concepts() {
        let Some(mut table) = rows.remove(concept.as_str()) else {
            offending.push(concept.clone());
            continue;
        };
        let mut raw = Vec::new();
        let mut complete = true;
        for w in gold.words_for_concept(concept) {
            let key = (w.doculect.clone(), form_to_string(&w.form));
            match table.get_mut(&key) {
                Some(ids) if !ids.is_empty() => raw.push(ids.remove(0)),
                _ => complete = false,
            }
        }
        let surplus: usize = table.values().map(Vec::len).sum();
        if !complete || surplus > 0 {
            offending.push(concept.clone());
        } else {
            parts.insert(concept.clone(), Partition::new(raw));
        }
    }
    offending.extend(rows.into_keys());
    if offending.is_empty() {
        Ok(parts)
    } else {
        Err(AppError::Validation(format!(
            "cluster table does not match the gold wordlist; offending concepts: {}",
            offending.join(", ")
        )))
    }
}

pub fn evaluate(args: &EvaluateArgs, _file: &FileConfig) -> Result<(), AppError> {
    let rows = parse_cluster_table(&read_text(&args.input)?, &args.input)?;
    let gold = load_wordlist(&args.gold)?;
    let parts = partitions_from_rows(rows, &gold)?;
    let report: EvalReport =
        evaluate_clustering(&gold, &parts).map_err(|e| AppError::Validation(e.to_string()))?;

    let text = match args.format {
        ReportFormat::Tsv => {
            let entries = [
                ("input", args.input.display().to_string()),
                ("gold", args.gold.display().to_string()),
            ];
            config_header("evaluate", &entries) + &report_tsv(&report)
        }
        ReportFormat::Json => report_json(&report),
    };
    if report.excluded_words > 0 {
        eprintln!(
            "warning: {} words without a gold class were left out",
            report.excluded_words
        );
    }
    match &args.out {
        Some(p) => {
            write_atomic(p, &text)?;
            println!("average F {:.6}", report.average.f_score);
            println!("report written to {}", p.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 10)]
    doculects: usize,
    #[arg(long, default_value_t = 100)]
    concepts: usize,
    #[arg(long, default_value_t = 0.15)]
    mutation_rate: f64,
    #[arg(long, default_value_t = 4)]
    split_depth: u32,
    #[arg(long, default_value_t = 0.1)]
    replacement_rate: f64,
}

pub fn synth(args: &SynthArgs, file: &FileConfig) -> Result<(), AppError> {
    let seed = pick(args.seed, file.seed, DEFAULT_SEED);
    let cfg = SynthConfig {
        seed,
        n_doculects: args.doculects,
        n_concepts: args.concepts,
        mutation_rate: args.mutation_rate,
        split_depth: args.split_depth,
        replacement_rate: args.replacement_rate,
    };
    let wl = generate_family(&cfg).map_err(|e| AppError::Validation(e.to_string()))?;
    let entries = [
        ("seed", seed.to_string()),
        ("doculects", cfg.n_doculects.to_string()),
        ("concepts", cfg.n_concepts.to_string()),
        ("mutation_rate", cfg.mutation_rate.to_string()),
        ("split_depth", cfg.split_depth.to_string()),
        ("replacement_rate", cfg.replacement_rate.to_string()),
    ];
    write_atomic(
        &args.out,
        &(config_header("synth", &entries) + &wl.to_tsv()),
    )?;
    println!(
        "generated {} words ({} doculects, {} concepts)",
        wl.len(),
        wl.doculects().len(),
        wl.concepts().len()
    );
    println!("wordlist written to {}", args.out.display());
    Ok(())
}

#[derive(Args)]
pub struct StatsArgs {
    #[arg(long)]
    input: PathBuf,
    /// Write the stats table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the per-concept word-length-difference profile.
    #[arg(long)]
    lengths: Option<PathBuf>,
}

pub fn stats(args: &StatsArgs, _file: &FileConfig) -> Result<(), AppError> {
    let wl = load_wordlist(&args.input)?;
    let entries = [("input", args.input.display().to_string())];
    let mut out = config_header("stats", &entries);
    out.push_str("stat\tvalue\n");
    out.push_str(&format!("meanings\t{}\n", wl.concepts().len()));
    out.push_str(&format!("doculects\t{}\n", wl.doculects().len()));
    out.push_str(&format!("words\t{}\n", wl.len()));
    if wl.has_gold() {
        let s = dataset_stats(&wl).map_err(|e| AppError::Validation(e.to_string()))?;
        out.push_str(&format!("labeled_words\t{}\n", s.n_labeled));
        out.push_str(&format!("cognate_classes\t{}\n", s.n_classes));
        out.push_str(&format!("classes_per_meaning\t{}\n", s.ave_cc));
        out.push_str(&format!("words_per_class\t{}\n", s.ave_wc));
    }
    match &args.out {
        Some(p) => {
            write_atomic(p, &out)?;
            println!("stats written to {}", p.display());
        }
        None => print!("{out}"),
    }
    if let Some(p) = &args.lengths {
        let profile = wordlength_diff_profile(&wl);
        let mut tsv = config_header("stats", &entries);
        tsv.push_str("concept\tmean_length_diff\n");
        for (concept, d) in &profile.per_concept {
            tsv.push_str(&format!("{concept}\t{d}\n"));
        }
        tsv.push_str(&format!("__MEAN__\t{}\n", profile.mean));
        write_atomic(p, &tsv)?;
        println!("length profile written to {}", p.display());
    }
    Ok(())
}
