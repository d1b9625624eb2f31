use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use flowacc::accumulate::{accumulate as run_accumulation, schedule, AccumulateOptions, Direction};
use flowacc::dataset::{
    flow_file, mask_file, read_sequence, sequence_id, sequence_seeds, write_sequence,
    DatasetManifest, SequenceEntry, SequenceManifest,
};
use flowacc::io::{load_flo, load_mask, save_flo};
use flowacc::metrics::{aggregate, epe, EpeReport, CSV_HEADER};
use flowacc::occlusion::{GroundTruthFill, OccDetector, OcclusionSolver};
use flowacc::synth::{generate, random_spec_with};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AccumulateConfig, ConfigFile, SolverChoice, SynthConfig};
use crate::stats::{Summary, SUMMARY_HEADER};
use crate::{AccumulateArgs, EvalArgs, OccStatsArgs, SynthArgs};

pub const RESULTS_MANIFEST: &str = "results.json";
pub const RESULT_FLOW: &str = "result.flo";
pub const OCC_SAMPLES: &str = "occ_samples.csv";
pub const OCC_SUMMARY: &str = "occ_summary.csv";
pub const EVAL_DELTA: &str = "eval_delta.csv";

pub fn eval_file(direction: Direction) -> String {
    format!("eval_{direction}.csv")
}

/// What `accumulate` produced, so `eval` can pair results with ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsManifest {
    pub dataset: PathBuf,
    pub directions: Vec<Direction>,
    pub detector: String,
    pub solver: String,
    pub sequences: Vec<String>,
}

impl ResultsManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(RESULTS_MANIFEST);
        let text = fs::read_to_string(&path)
            .with_context(|| format!("no results at {} (run `accumulate` first)", dir.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Refuses to write into a non-empty directory unless forced.
fn prepare_output(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        ensure!(
            dir.is_dir(),
            "{} exists and is not a directory",
            dir.display()
        );
        let occupied = fs::read_dir(dir)?.next().is_some();
        ensure!(
            force || !occupied,
            "{} is not empty; pass --force to write into it",
            dir.display()
        );
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_dataset(dir: &Path) -> Result<DatasetManifest> {
    let m =
        DatasetManifest::load(dir).with_context(|| format!("no dataset at {}", dir.display()))?;
    ensure!(
        !m.sequences.is_empty(),
        "dataset {} has no sequences",
        dir.display()
    );
    Ok(m)
}

pub fn resolve_synth(args: &SynthArgs) -> Result<SynthConfig> {
    let mut cfg = match &args.config {
        Some(p) => ConfigFile::load(p)?.synth.unwrap_or_default(),
        None => SynthConfig::default(),
    };
    if let Some(v) = args.n {
        cfg.n = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.difficulty {
        cfg.difficulty = v;
    }
    if let Some(v) = args.canvas {
        cfg.canvas = v;
    }
    if let Some(v) = args.frames {
        cfg.frames = v;
    }
    if let Some(v) = &args.split {
        cfg.split = v.clone();
    }
    cfg.real_valued |= args.real_valued;
    cfg.validate()?;
    Ok(cfg)
}

pub fn synth(root: &Path, args: &SynthArgs) -> Result<PathBuf> {
    let cfg = resolve_synth(args)?;
    let out = args.out.clone().unwrap_or_else(|| root.join("dataset"));
    prepare_output(&out, args.force)?;

    let scene_cfg = cfg.scene_config();
    let seeds = sequence_seeds(cfg.seed, &cfg.split, cfg.n);
    let sequences = seeds
        .par_iter()
        .enumerate()
        .map(|(index, &seed)| {
            let id = sequence_id(index);
            let seq = generate(&random_spec_with(seed, &scene_cfg))?;
            write_sequence(out.join(&id), &id, &cfg.split, &seq)?;
            Ok(SequenceEntry { id, seed })
        })
        .collect::<Result<Vec<_>>>()?;

    DatasetManifest {
        split: cfg.split.clone(),
        seed: cfg.seed,
        config: serde_json::to_value(&cfg)?,
        sequences,
    }
    .save(&out)?;
    ConfigFile {
        synth: Some(cfg),
        ..Default::default()
    }
    .save(&out)?;
    Ok(out)
}

pub fn resolve_accumulate(args: &AccumulateArgs) -> Result<AccumulateConfig> {
    let mut cfg = match &args.config {
        Some(p) => ConfigFile::load(p)?.accumulate.unwrap_or_default(),
        None => AccumulateConfig::default(),
    };
    if let Some(v) = args.direction {
        cfg.direction = v;
    }
    if let Some(v) = &args.detector {
        cfg.detector = v.clone();
    }
    if let Some(v) = args.tol_abs {
        cfg.tol_abs = v;
    }
    if let Some(v) = args.tol_rel {
        cfg.tol_rel = v;
    }
    if let Some(v) = &args.solver {
        cfg.solver = v.clone();
    }
    cfg.detector()?;
    cfg.solver()?;
    Ok(cfg)
}

/// Checks from the manifest alone that every input a run will read exists.
fn check_inputs(
    m: &SequenceManifest,
    directions: &[Direction],
    detector: &OccDetector,
    solver: SolverChoice,
) -> Result<()> {
    let n = m.frames;
    ensure!(n >= 3, "{}: {n} frames is too short to accumulate", m.id);
    for t in 1..n {
        ensure!(
            m.has_flow(t, t + 1),
            "{}: missing local flow F({t}, {})",
            m.id,
            t + 1
        );
    }
    if matches!(detector, OccDetector::Consistency { .. }) {
        for t in 1..n {
            ensure!(
                m.has_flow(t + 1, t),
                "{}: the consistency detector needs backward flows, but F({}, {t}) is missing",
                m.id,
                t + 1
            );
        }
    }
    for &d in directions {
        for (_, (i, k), (pi, pj)) in schedule(d, n) {
            if *detector == OccDetector::GroundTruth {
                ensure!(
                    m.has_mask(i, k),
                    "{}: the ground-truth detector needs mask O({i}, {k})",
                    m.id
                );
            }
            if solver == SolverChoice::GroundTruth {
                ensure!(
                    m.has_flow(pi, pj),
                    "{}: the ground-truth solver needs F({pi}, {pj})",
                    m.id
                );
            }
        }
    }
    Ok(())
}

pub fn accumulate(root: &Path, args: &AccumulateArgs) -> Result<PathBuf> {
    let cfg = resolve_accumulate(args)?;
    let detector = cfg.detector()?;
    let solver_choice = cfg.solver()?;
    let directions = cfg.direction.list();
    let dataset = args.dataset.clone().unwrap_or_else(|| root.join("dataset"));
    let manifest = load_dataset(&dataset)?;
    let dirs = manifest.sequence_dirs(&dataset);
    dirs.par_iter()
        .map(|d| {
            check_inputs(
                &SequenceManifest::load(d)?,
                &directions,
                &detector,
                solver_choice,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let out = args.out.clone().unwrap_or_else(|| root.join("results"));
    prepare_output(&out, args.force)?;
    manifest
        .sequences
        .par_iter()
        .zip(&dirs)
        .map(|(entry, dir)| {
            let loaded = read_sequence(dir)?;
            let seq = loaded.to_flow_sequence()?;
            let gt_fill;
            let solver: &dyn OcclusionSolver = match solver_choice {
                SolverChoice::Builtin(ref s) => s,
                SolverChoice::GroundTruth => {
                    gt_fill = GroundTruthFill::new(loaded.flows.clone());
                    &gt_fill
                }
            };
            for &d in &directions {
                let trace =
                    run_accumulation(d, &seq, &detector, solver, AccumulateOptions::default())
                        .with_context(|| format!("{}: {d} accumulation", entry.id))?;
                let target = out.join(&entry.id).join(d.name());
                trace.save(target.join("trace"))?;
                save_flo(target.join(RESULT_FLOW), &trace.final_flow)?;
            }
            Ok(())
        })
        .collect::<Result<Vec<_>>>()?;

    write_json(
        &out.join(RESULTS_MANIFEST),
        &ResultsManifest {
            dataset: dataset.clone(),
            directions,
            detector: detector.name().into(),
            solver: cfg.solver.clone(),
            sequences: manifest.sequences.iter().map(|s| s.id.clone()).collect(),
        },
    )?;
    ConfigFile {
        accumulate: Some(cfg),
        ..Default::default()
    }
    .save(&out)?;
    Ok(out)
}

fn csv_table(reports: &[EpeReport], agg: &EpeReport) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in reports.iter().chain([agg]) {
        s += &r.to_csv_row();
        s.push('\n');
    }
    s
}

fn delta_table(fwd: &[EpeReport], bwd: &[EpeReport]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let diff = |b: Option<f64>, f: Option<f64>| opt(b.zip(f).map(|(b, f)| b - f));
    let mut s = String::from(
        "id,fwd_epe_all,bwd_epe_all,delta_epe_all,fwd_epe_noc,bwd_epe_noc,delta_epe_noc,fwd_epe_occ,bwd_epe_occ,delta_epe_occ\n",
    );
    for (f, b) in fwd.iter().zip(bwd) {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            f.id,
            f.epe_all,
            b.epe_all,
            b.epe_all - f.epe_all,
            opt(f.epe_noc),
            opt(b.epe_noc),
            diff(b.epe_noc, f.epe_noc),
            opt(f.epe_occ),
            opt(b.epe_occ),
            diff(b.epe_occ, f.epe_occ),
        );
    }
    s
}

/// Per-direction EPE reports in dataset order, the last entry being the
/// aggregate.
pub fn evaluate(results: &Path, dataset: &Path) -> Result<Vec<(Direction, Vec<EpeReport>)>> {
    let rm = ResultsManifest::load(results)?;
    ensure!(
        !rm.sequences.is_empty(),
        "{} lists no results",
        results.display()
    );
    let dm = load_dataset(dataset)?;
    let known: BTreeSet<&str> = dm.sequences.iter().map(|s| s.id.as_str()).collect();
    for id in &rm.sequences {
        ensure!(
            known.contains(id.as_str()),
            "result {id} has no counterpart in dataset {}",
            dataset.display()
        );
    }
    rm.directions
        .iter()
        .map(|&d| {
            let mut reports = rm
                .sequences
                .par_iter()
                .map(|id| {
                    let seq_dir = dataset.join(id);
                    let n = SequenceManifest::load(&seq_dir)?.frames;
                    let gt = load_flo(seq_dir.join(flow_file(1, n)))?;
                    let occ = load_mask(seq_dir.join(mask_file(1, n)))?;
                    let path = results.join(id).join(d.name()).join(RESULT_FLOW);
                    let est =
                        load_flo(&path).with_context(|| format!("reading {}", path.display()))?;
                    let r = epe(&est, &gt, &occ)
                        .with_context(|| format!("{id}: result does not match ground truth"))?;
                    Ok(r.with_id(id.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            let agg = aggregate(&reports)?;
            reports.push(agg);
            Ok((d, reports))
        })
        .collect()
}

pub fn eval(root: &Path, args: &EvalArgs) -> Result<PathBuf> {
    let results = args.results.clone().unwrap_or_else(|| root.join("results"));
    let dataset = match &args.dataset {
        Some(d) => d.clone(),
        None => ResultsManifest::load(&results)?.dataset,
    };
    let tables = evaluate(&results, &dataset)?;

    let out = args.out.clone().unwrap_or_else(|| root.join("reports"));
    fs::create_dir_all(&out)?;
    for (d, reports) in &tables {
        let (agg, rows) = reports.split_last().expect("aggregate row");
        write_text(&out.join(eval_file(*d)), &csv_table(rows, agg))?;
    }
    let find = |d: Direction| tables.iter().find(|(x, _)| *x == d).map(|(_, r)| r);
    if let (Some(f), Some(b)) = (find(Direction::Forward), find(Direction::Backward)) {
        write_text(&out.join(EVAL_DELTA), &delta_table(f, b))?;
    }
    write_json(
        &out.join("eval_config.json"),
        &serde_json::json!({ "results": results, "dataset": dataset }),
    )?;
    Ok(out)
}

/// `(id, delta, alpha)` for `alpha` of the ground-truth mask `O(1, 1+delta)`.
pub fn occlusion_samples(dataset: &Path) -> Result<Vec<(String, usize, f64)>> {
    let dm = load_dataset(dataset)?;
    let per_seq = dm
        .sequences
        .par_iter()
        .map(|entry| {
            let dir = dataset.join(&entry.id);
            let n = SequenceManifest::load(&dir)?.frames;
            (1..n)
                .map(|delta| {
                    let m = load_mask(dir.join(mask_file(1, 1 + delta)))?;
                    Ok((
                        entry.id.clone(),
                        delta,
                        flowacc::flow::occlusion_proportion(&m),
                    ))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_seq.into_iter().flatten().collect())
}

pub fn occ_stats(root: &Path, args: &OccStatsArgs) -> Result<PathBuf> {
    let dataset = args.dataset.clone().unwrap_or_else(|| root.join("dataset"));
    let samples = occlusion_samples(&dataset)?;
    if samples.is_empty() {
        bail!("dataset {} has no occlusion masks", dataset.display());
    }

    let mut rows = String::from("id,delta,alpha\n");
    for (id, delta, alpha) in &samples {
        let _ = writeln!(rows, "{id},{delta},{alpha}");
    }
    let max_delta = samples.iter().map(|s| s.1).max().unwrap_or(0);
    let mut summary = format!("delta,{SUMMARY_HEADER}\n");
    for delta in 1..=max_delta {
        let values: Vec<f64> = samples
            .iter()
            .filter(|s| s.1 == delta)
            .map(|s| s.2)
            .collect();
        if !values.is_empty() {
            let _ = writeln!(summary, "{delta},{}", Summary::of(&values).to_csv());
        }
    }

    let out = args.out.clone().unwrap_or_else(|| root.join("reports"));
    fs::create_dir_all(&out)?;
    write_text(&out.join(OCC_SAMPLES), &rows)?;
    write_text(&out.join(OCC_SUMMARY), &summary)?;
    write_json(
        &out.join("occ_stats_config.json"),
        &serde_json::json!({ "dataset": dataset }),
    )?;
    Ok(out)
}
