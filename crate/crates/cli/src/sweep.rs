//! Grid search over minibatch size and stepsize decay, with a resume
//! ledger and an SVG heatmap of the scores.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use clap::Args;
use rayon::prelude::*;

use cognet::cluster::{cluster_wordlist, ClusterMethod};
use cognet::corpus::{extract_probable_cognates, TrainingPairSet, Wordlist};
use cognet::eval::evaluate_clustering;
use cognet::phmm;
use cognet::pmi;

use crate::commands::{
    load_wordlist, pick, pick_enum, resolve_gaps, ClusterKind, ModelKind, DEFAULT_EPOCHS,
    DEFAULT_PSEUDOCOUNT, DEFAULT_SEED, DEFAULT_THRESHOLD,
};
use crate::util::{config_header, read_text, write_atomic, AppError, FileConfig};

#[derive(Args)]
pub struct SweepArgs {
    /// Wordlist with gold classes; drives training and scoring.
    #[arg(long)]
    input: PathBuf,
    /// Result table path; the heatmap and resume ledger sit next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    model: Option<ModelKind>,
    /// Exponent range for m = 2^s, inclusive, as "lo..hi".
    #[arg(long, default_value = "5..15")]
    s: String,
    /// Alpha range in 0.05 steps, inclusive, as "lo..hi".
    #[arg(long, default_value = "0.5..1.0")]
    alpha: String,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    gap_open: Option<f64>,
    #[arg(long)]
    gap_extend: Option<f64>,
    #[arg(long)]
    pseudocount: Option<f64>,
    #[arg(long)]
    cluster: Option<ClusterKind>,
    /// Worker threads for sweep cells.
    #[arg(long)]
    jobs: Option<usize>,
}

/// Inclusive exponent range "lo..hi" for m = 2^s.
fn parse_s_range(text: &str) -> Result<Vec<u32>, AppError> {
    let bad = || AppError::Validation(format!("bad --s range: {text} (expected lo..hi)"));
    let (lo, hi) = text.split_once("..").ok_or_else(bad)?;
    let lo: u32 = lo.trim().parse().map_err(|_| bad())?;
    let hi: u32 = hi.trim().parse().map_err(|_| bad())?;
    if lo > hi || hi > 30 {
        return Err(AppError::Validation(format!(
            "bad --s range: {text} (need lo <= hi <= 30)"
        )));
    }
    Ok((lo..=hi).collect())
}

/// Inclusive alpha range "lo..hi"; both ends must sit on the 0.05 grid
/// inside [0.5, 1.0]. Cells are kept as integer hundredths.
fn parse_alpha_range(text: &str) -> Result<Vec<u32>, AppError> {
    let bad = || AppError::Validation(format!("bad --alpha range: {text} (expected lo..hi)"));
    let (lo, hi) = text.split_once("..").ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    let snap = |v: f64| -> Option<u32> {
        let k = (v * 100.0).round();
        if (v * 100.0 - k).abs() < 1e-6 && k % 5.0 == 0.0 && (50.0..=100.0).contains(&k) {
            Some(k as u32)
        } else {
            None
        }
    };
    let (klo, khi) = match (snap(lo), snap(hi)) {
        (Some(a), Some(b)) if a <= b => (a, b),
        _ => {
            return Err(AppError::Validation(format!(
                "bad --alpha range: {text} (need 0.05 steps inside [0.5, 1.0], lo <= hi)"
            )))
        }
    };
    Ok((klo..=khi).step_by(5).collect())
}

/// One grid point, identified by (s, hundredths of alpha).
type Cell = (u32, u32);

/// Seeds stay distinct across cells and runs of different master seeds.
fn cell_seed(master: u64, cell: Cell) -> u64 {
    master ^ ((cell.0 as u64) << 32) ^ cell.1 as u64
}

struct Grid {
    model: ModelKind,
    epochs: usize,
    master_seed: u64,
    threshold: f64,
    gaps: cognet::align::GapPenalties,
    pseudocount: f64,
    method: ClusterMethod,
}

impl Grid {
    /// train -> cluster -> evaluate at one grid point.
    fn run_cell(
        &self,
        pairs: &TrainingPairSet,
        wl: &Wordlist,
        cell: Cell,
    ) -> Result<f64, AppError> {
        let m = 1usize << cell.0;
        let alpha = cell.1 as f64 / 100.0;
        let seed = cell_seed(self.master_seed, cell);
        let parts = match self.model {
            ModelKind::Pmi => {
                let cfg = pmi::OnlineConfig {
                    m,
                    alpha,
                    epochs: self.epochs,
                    seed,
                    pseudocount: self.pseudocount,
                    ..Default::default()
                };
                let mut model = pmi::train_online(pairs, self.gaps, &cfg)?;
                model.scores.extend_alphabet(&wl.alphabet());
                cluster_wordlist(
                    wl,
                    |a, b| Ok::<_, AppError>(pmi::pmi_distance(&a.form, &b.form, &model)),
                    self.threshold,
                    seed,
                    self.method,
                )?
            }
            ModelKind::Phmm => {
                let init = phmm::init_params(pairs, cognet::align::DEFAULT_GAP, self.pseudocount)?;
                let null = phmm::NullModel::from_pairs(pairs, self.pseudocount)?;
                let cfg = phmm::OnlineConfig {
                    m,
                    alpha,
                    epochs: self.epochs,
                    seed,
                };
                let fit = phmm::baum_welch_online(pairs, &init, &cfg)?;
                let mut model = phmm::PhmmModel {
                    params: fit.params,
                    null,
                };
                model.extend_alphabet(&wl.alphabet());
                cluster_wordlist(
                    wl,
                    |a, b| {
                        phmm::phmm_distance(&a.form, &b.form, &model.params, &model.null)
                            .map_err(AppError::from)
                    },
                    self.threshold,
                    seed,
                    self.method,
                )?
            }
            ModelKind::Ldn => unreachable!("rejected before the grid starts"),
        };
        let report =
            evaluate_clustering(wl, &parts).map_err(|e| AppError::Validation(e.to_string()))?;
        Ok(report.average.f_score)
    }
}

fn fmt_f(f: f64) -> String {
    if f.is_nan() {
        "nan".to_string()
    } else {
        format!("{f:.6}")
    }
}

/// Completed cells from an interrupted run, keyed by (s, hundredths).
fn read_ledger(path: &Path) -> Result<BTreeMap<Cell, String>, AppError> {
    let mut done = BTreeMap::new();
    if !path.exists() {
        return Ok(done);
    }
    let text = read_text(path)?;
    for (i, raw) in text.lines().enumerate() {
        let l = raw.trim_end_matches('\r');
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = l.split('\t').collect();
        let parsed = (|| {
            if fields.len() != 3 {
                return None;
            }
            let s: u32 = fields[0].parse().ok()?;
            let k: u32 = fields[1].parse().ok()?;
            if fields[2] != "nan" {
                let _: f64 = fields[2].parse().ok()?;
            }
            Some(((s, k), fields[2].to_string()))
        })();
        match parsed {
            Some((cell, f)) => {
                done.insert(cell, f);
            }
            None => {
                return Err(AppError::Validation(format!(
                    "{}:{}: bad ledger line (delete the file to restart the sweep)",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(done)
}

pub fn run(args: &SweepArgs, file: &FileConfig) -> Result<(), AppError> {
    let started = Instant::now();
    let model = pick_enum(args.model, file.model.as_ref(), "model", ModelKind::Pmi)?;
    if model == ModelKind::Ldn {
        return Err(AppError::Validation(
            "ldn has no m or alpha to sweep over".into(),
        ));
    }
    let epochs = pick(args.epochs, file.epochs, DEFAULT_EPOCHS);
    let master_seed = pick(args.seed, file.seed, DEFAULT_SEED);
    let threshold = pick(args.threshold, file.threshold, DEFAULT_THRESHOLD);
    let pseudocount = pick(args.pseudocount, file.pseudocount, DEFAULT_PSEUDOCOUNT);
    let gaps = resolve_gaps(args.gap_open, args.gap_extend, file)?;
    let method: ClusterMethod = pick_enum(
        args.cluster,
        file.cluster.as_ref(),
        "cluster",
        ClusterKind::Infomap,
    )?
    .into();
    let jobs = pick(args.jobs, file.jobs, 1);
    if jobs == 0 {
        return Err(AppError::Validation("jobs must be at least 1".into()));
    }
    if epochs == 0 {
        return Err(AppError::Validation("epochs must be at least 1".into()));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(AppError::Validation(format!(
            "threshold = {threshold} outside (0, 1]"
        )));
    }
    let s_values = parse_s_range(&args.s)?;
    let k_values = parse_alpha_range(&args.alpha)?;

    let wl = load_wordlist(&args.input)?;
    if !wl.has_gold() {
        return Err(AppError::Validation(
            "sweep needs gold cognate classes to score cells".into(),
        ));
    }
    let pairs = extract_probable_cognates(&wl, threshold);
    if pairs.is_empty() {
        return Err(AppError::Validation(format!(
            "no cross-doculect pairs fall below threshold {threshold}"
        )));
    }

    let grid_cells: Vec<Cell> = s_values
        .iter()
        .flat_map(|&s| k_values.iter().map(move |&k| (s, k)))
        .collect();
    println!(
        "grid: {} x {} = {} cells ({jobs} jobs)",
        s_values.len(),
        k_values.len(),
        grid_cells.len()
    );

    let ledger_path = args.out.with_extension("ledger");
    let mut done = read_ledger(&ledger_path)?;
    done.retain(|cell, _| grid_cells.contains(cell));
    let todo: Vec<Cell> = grid_cells
        .iter()
        .copied()
        .filter(|c| !done.contains_key(c))
        .collect();
    let reused = done.len();
    if reused > 0 {
        println!(
            "resuming: {reused} cells already in {}",
            ledger_path.display()
        );
    }

    let grid = Grid {
        model,
        epochs,
        master_seed,
        threshold,
        gaps,
        pseudocount,
        method,
    };
    let ledger = Mutex::new(
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&ledger_path)
            .map_err(|e| AppError::Io(format!("cannot open {}: {e}", ledger_path.display())))?,
    );
    let record = |cell: Cell, f: &str| -> Result<(), AppError> {
        let mut file = ledger.lock().expect("ledger writer never panics");
        writeln!(file, "{}\t{}\t{}", cell.0, cell.1, f)
            .and_then(|_| file.flush())
            .map_err(|e| AppError::Io(format!("cannot append {}: {e}", ledger_path.display())))
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| AppError::Validation(format!("cannot start {jobs} jobs: {e}")))?;
    let fresh: Vec<(Cell, String)> = pool.install(|| {
        todo.par_iter()
            .map(|&cell| {
                let f = match grid.run_cell(&pairs, &wl, cell) {
                    Ok(f) => fmt_f(f),
                    Err(e) => {
                        eprintln!(
                            "warning: cell m=2^{} alpha={:.2} failed: {e}",
                            cell.0,
                            cell.1 as f64 / 100.0
                        );
                        "nan".to_string()
                    }
                };
                log::info!(
                    "cell m={} alpha={:.2}: f={f}",
                    1u64 << cell.0,
                    cell.1 as f64 / 100.0
                );
                record(cell, &f).map(|_| (cell, f))
            })
            .collect::<Result<_, AppError>>()
    })?;
    let failed = fresh.iter().filter(|(_, f)| f == "nan").count();
    done.extend(fresh);

    let mut entries = vec![
        ("model", model.to_string()),
        ("input", args.input.display().to_string()),
        ("s", args.s.clone()),
        ("alpha", args.alpha.clone()),
        ("epochs", epochs.to_string()),
        ("seed", master_seed.to_string()),
        ("threshold", threshold.to_string()),
        ("gap_open", gaps.open.to_string()),
        ("gap_extend", gaps.extend.to_string()),
        ("pseudocount", pseudocount.to_string()),
        ("cluster", method.to_string()),
    ];
    entries.push(("cells", grid_cells.len().to_string()));

    let mut table = config_header("sweep", &entries);
    table.push_str("m\talpha\tf\n");
    let mut best: Option<(Cell, f64)> = None;
    for &cell in &grid_cells {
        let f = &done[&cell];
        let _ = writeln!(
            table,
            "{}\t{:.2}\t{}",
            1u64 << cell.0,
            cell.1 as f64 / 100.0,
            f
        );
        if f != "nan" {
            let v: f64 = f.parse().expect("ledger values reparse");
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((cell, v));
            }
        }
    }
    write_atomic(&args.out, &table)?;

    let svg_path = args.out.with_extension("svg");
    write_atomic(&svg_path, &heatmap_svg(&s_values, &k_values, &done))?;

    println!(
        "ran {} cells ({failed} failed), reused {reused}",
        todo.len()
    );
    match best {
        Some(((s, k), f)) => println!(
            "best cell: m={} alpha={:.2} F={f:.6}",
            1u64 << s,
            k as f64 / 100.0
        ),
        None => println!("best cell: none (every cell failed)"),
    }
    println!("sweep table written to {}", args.out.display());
    println!("heatmap written to {}", svg_path.display());
    println!("wall time {:.2}s", started.elapsed().as_secs_f64());
    Ok(())
}

/// Self-contained heatmap: alpha across, m down, one rect per cell,
/// linear white-to-blue ramp between the observed score extremes.
fn heatmap_svg(s_values: &[u32], k_values: &[u32], done: &BTreeMap<Cell, String>) -> String {
    const CELL: f64 = 36.0;
    const LEFT: f64 = 72.0;
    const TOP: f64 = 48.0;
    const BOTTOM: f64 = 72.0;
    const RIGHT: f64 = 24.0;

    let scores: BTreeMap<Cell, f64> = done
        .iter()
        .filter(|(_, f)| f.as_str() != "nan")
        .map(|(&c, f)| (c, f.parse().expect("ledger values reparse")))
        .collect();
    let (lo, hi) = scores
        .values()
        .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if scores.is_empty() || hi - lo < 1e-12 {
        1.0
    } else {
        hi - lo
    };

    let w = LEFT + CELL * k_values.len() as f64 + RIGHT;
    let h = TOP + CELL * s_values.len() as f64 + BOTTOM;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">B-cubed F \
         over minibatch size and stepsize decay</text>",
        w / 2.0
    );
    for (row, &s) in s_values.iter().enumerate() {
        let y = TOP + CELL * row as f64;
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
            LEFT - 8.0,
            y + CELL / 2.0 + 4.0,
            1u64 << s
        );
        for (col, &k) in k_values.iter().enumerate() {
            let x = LEFT + CELL * col as f64;
            let fill = match scores.get(&(s, k)) {
                Some(&v) => {
                    let t = if scores.len() == 1 {
                        1.0
                    } else {
                        (v - lo) / span
                    };
                    let chan = (235.0 - 180.0 * t) as u8;
                    format!("rgb({chan},{chan},235)")
                }
                None => "rgb(160,160,160)".to_string(),
            };
            let _ = writeln!(
                svg,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" \
                 fill=\"{fill}\" stroke=\"white\"/>"
            );
        }
    }
    for (col, &k) in k_values.iter().enumerate() {
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{:.2}</text>",
            LEFT + CELL * col as f64 + CELL / 2.0,
            TOP + CELL * s_values.len() as f64 + 18.0,
            k as f64 / 100.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">alpha</text>",
        LEFT + CELL * k_values.len() as f64 / 2.0,
        h - 36.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">m</text>",
        TOP + CELL * s_values.len() as f64 / 2.0,
        TOP + CELL * s_values.len() as f64 / 2.0
    );
    if !scores.is_empty() {
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\">F range {:.4} to {:.4}; gray cells failed</text>",
            LEFT,
            h - 12.0,
            lo,
            hi
        );
    }
    svg.push_str("</svg>\n");
    svg
}
