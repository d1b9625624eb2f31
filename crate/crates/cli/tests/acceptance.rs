//! Acceptance suite. Prints one line per criterion:
//!
//! ```text
//! cargo test --release -p flowacc-cli --test acceptance -- --nocapture
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use flowacc::accumulate::{accumulate, AccumulateOptions, Direction};
use flowacc::flow::{occlusion_proportion, FlowField};
use flowacc::io::{read_flo, write_flo};
use flowacc::metrics::{aggregate, epe, EpeReport};
use flowacc::occlusion::{OccDetector, OccSolver, OcclusionSolver};
use flowacc::synth::{
    generate, random_spec, random_spec_with, Difficulty, RandomSceneConfig, SceneSequence,
    SceneSpec, Shape, Sprite, Trajectory,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

enum Outcome {
    Pass,
    Fail,
    NotReproducible,
}

struct Line {
    id: u32,
    name: &'static str,
    outcome: Outcome,
    detail: String,
}

fn judged(
    id: u32,
    name: &'static str,
    ok: bool,
    elapsed: Duration,
    budget: Option<Duration>,
    detail: String,
) -> Line {
    let in_time = budget.is_none_or(|b| elapsed <= b);
    let budget_note = budget
        .map(|b| format!(" / budget {}s", b.as_secs()))
        .unwrap_or_default();
    Line {
        id,
        name,
        outcome: if ok && in_time {
            Outcome::Pass
        } else {
            Outcome::Fail
        },
        detail: format!("{detail} [{:.2}s{budget_note}]", elapsed.as_secs_f64()),
    }
}

fn bar_scene(
    width: usize,
    height: usize,
    bar: (usize, usize),
    x0: usize,
    v: i64,
    frames: usize,
) -> SceneSpec {
    let mut spec = SceneSpec::empty(width, height, frames);
    spec.sprites.push(Sprite {
        shape: Shape::Rect {
            width: bar.0 as f64,
            height: bar.1 as f64,
        },
        origin: [x0 as f64, ((height - bar.1) / 2) as f64],
        trajectory: Trajectory::Constant {
            velocity: [v as f64, 0.0],
        },
        color: [220, 40, 40],
        texture: 0.0,
    });
    spec
}

/// Occluded-pixel count from the closed form `min(|v| d, bar_w) * bar_h`.
fn closed_form(v: i64, d: usize, bar: (usize, usize)) -> usize {
    (v.unsigned_abs() as usize * d).min(bar.0) * bar.1
}

fn criterion_1() -> Line {
    let start = Instant::now();
    let mut scenes = 0;
    let (mut intervals, mut saturated, mut exact) = (0usize, 0usize, 0usize);
    let mut worst = String::new();
    'outer: for &(w, h) in &[(100usize, 40usize), (96, 64)] {
        for &frames in &[5usize, 7] {
            for &(v, bar) in &[
                (1i64, (10usize, 40usize)),
                (2, (10, 20)),
                (3, (4, 11)),
                (-2, (16, 8)),
                (5, (7, 30)),
            ] {
                if scenes == 20 {
                    break 'outer;
                }
                let bar = (bar.0, bar.1.min(h));
                let travel = v.unsigned_abs() as usize * (frames - 1);
                // Keep the bar fully on the canvas in every frame.
                let x0 = if v > 0 { 3 } else { 3 + travel };
                assert!(x0 + bar.0 + if v > 0 { travel } else { 0 } <= w);
                let seq = generate(&bar_scene(w, h, bar, x0, v, frames)).expect("scene");
                for d in 1..frames {
                    let mask = seq.mask(1, 1 + d).expect("mask");
                    let count = mask.count();
                    let want = closed_form(v, d, bar);
                    intervals += 1;
                    saturated += usize::from(v.unsigned_abs() as usize * d > bar.0);
                    let alpha_formula = (v.unsigned_abs() as f64 * d as f64).min(bar.0 as f64)
                        * bar.1 as f64
                        / (w * h) as f64;
                    if count == want && occlusion_proportion(mask) == alpha_formula {
                        exact += 1;
                    } else if worst.is_empty() {
                        worst =
                            format!("; first mismatch v={v} bar={bar:?} d={d}: {count} vs {want}");
                    }
                }
                scenes += 1;
            }
        }
    }
    judged(
        1,
        "closed-form occlusion proportion",
        scenes == 20 && exact == intervals && saturated > 0,
        start.elapsed(),
        Some(Duration::from_secs(10)),
        format!("{scenes} scenes, {exact}/{intervals} intervals exact, {saturated} on the saturated branch{worst}"),
    )
}

struct PopulationStats {
    alpha: Vec<f64>,
    bwd_steps: Vec<f64>,
    fwd_steps: Vec<f64>,
    max_local: f64,
    alpha_first_to_penultimate: f64,
}

fn population_stats(seed: u64) -> PopulationStats {
    let seq = generate(&random_spec(seed, Difficulty::Easy)).expect("scene");
    let n = seq.num_frames();
    let fs = seq.to_flow_sequence().expect("sequence");
    let opts = || AccumulateOptions {
        keep_intermediates: false,
        blend: None,
    };
    let run = |d| {
        accumulate(d, &fs, &OccDetector::GroundTruth, &OccSolver::Zero, opts()).expect("accumulate")
    };
    let alphas = |d| run(d).steps.iter().map(|s| s.alpha).collect::<Vec<_>>();
    PopulationStats {
        alpha: seq.occlusion_from_first(),
        bwd_steps: alphas(Direction::Backward),
        fwd_steps: alphas(Direction::Forward),
        max_local: (1..n)
            .map(|t| occlusion_proportion(seq.mask(t, t + 1).unwrap()))
            .fold(0.0, f64::max),
        alpha_first_to_penultimate: occlusion_proportion(seq.mask(1, n - 1).unwrap()),
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn criteria_2_3() -> (Line, Line) {
    const N_SEQ: u64 = 5000;
    let start = Instant::now();
    let stats: Vec<PopulationStats> = (0..N_SEQ).into_par_iter().map(population_stats).collect();
    let elapsed = start.elapsed();

    let deltas = stats[0].alpha.len();
    let medians: Vec<f64> = (0..deltas)
        .map(|d| median(&mut stats.iter().map(|s| s.alpha[d]).collect::<Vec<_>>()))
        .collect();
    let medians_monotone = medians.windows(2).all(|w| w[1] >= w[0]);
    let monotone = stats
        .iter()
        .filter(|s| s.alpha.windows(2).all(|w| w[1] >= w[0]))
        .count();
    let frac = monotone as f64 / N_SEQ as f64;
    let c2 = judged(
        2,
        "occlusion proportion grows with the interval",
        medians_monotone && frac >= 0.90,
        elapsed,
        Some(Duration::from_secs(600)),
        format!(
            "{N_SEQ} sequences; median alpha by delta {:?}; {:.1}% individually monotone (need 90%)",
            medians.iter().map(|m| format!("{m:.4}")).collect::<Vec<_>>(),
            100.0 * frac
        ),
    );

    let bounded = stats
        .iter()
        .all(|s| s.bwd_steps.iter().all(|&a| a <= s.max_local));
    let forward_last = stats
        .iter()
        .all(|s| *s.fwd_steps.last().unwrap() == s.alpha_first_to_penultimate);
    let lighter = stats
        .iter()
        .filter(|s| s.bwd_steps.iter().sum::<f64>() <= s.fwd_steps.iter().sum::<f64>())
        .count();
    let lfrac = lighter as f64 / N_SEQ as f64;
    let mean = |f: fn(&PopulationStats) -> f64| stats.iter().map(f).sum::<f64>() / N_SEQ as f64;
    let c3 = judged(
        3,
        "backward driver occlusion burden",
        bounded && forward_last && lfrac >= 0.95,
        elapsed,
        None,
        format!(
            "per-step backward alpha within local max: {bounded}; forward last step = alpha(O(1,N-1)): {forward_last}; \
             sum backward <= sum forward in {:.1}% (need 95%); mean sums {:.4} vs {:.4}",
            100.0 * lfrac,
            mean(|s| s.bwd_steps.iter().sum()),
            mean(|s| s.fwd_steps.iter().sum()),
        ),
    );
    (c2, c3)
}

/// Per-direction reports of `F(1, N)` against ground truth.
fn paired_reports(
    seeds: impl IntoParallelIterator<Item = u64>,
    scene: impl Fn(u64) -> SceneSequence + Sync,
    solver: impl Fn(&SceneSequence) -> Box<dyn OcclusionSolver> + Sync,
) -> (Vec<EpeReport>, Vec<EpeReport>) {
    seeds
        .into_par_iter()
        .map(|seed| {
            let seq = scene(seed);
            let fs = seq.to_flow_sequence().expect("sequence");
            let s = solver(&seq);
            let n = seq.num_frames();
            let score = |d| {
                let trace = accumulate(
                    d,
                    &fs,
                    &OccDetector::GroundTruth,
                    s.as_ref(),
                    AccumulateOptions {
                        keep_intermediates: false,
                        blend: None,
                    },
                )
                .expect("accumulate");
                epe(
                    &trace.final_flow,
                    seq.oracle_long_range(),
                    seq.mask(1, n).unwrap(),
                )
                .expect("epe")
            };
            (score(Direction::Forward), score(Direction::Backward))
        })
        .unzip()
}

fn criterion_4() -> Line {
    const N_SEQ: u64 = 500;
    let start = Instant::now();
    // Even seeds easy, odd seeds hard.
    let difficulty = |seed: u64| {
        if seed.is_multiple_of(2) {
            Difficulty::Easy
        } else {
            Difficulty::Hard
        }
    };
    let (fwd, bwd) = paired_reports(
        0..N_SEQ,
        |seed| generate(&random_spec(seed, difficulty(seed))).unwrap(),
        |_| Box::new(OccSolver::Zero),
    );
    let (f, b) = (aggregate(&fwd).unwrap(), aggregate(&bwd).unwrap());
    let (fo, bo) = (f.epe_occ.unwrap_or(f64::NAN), b.epe_occ.unwrap_or(f64::NAN));
    judged(
        4,
        "backward beats forward with zero fill",
        bo < fo && b.epe_all <= f.epe_all,
        start.elapsed(),
        Some(Duration::from_secs(300)),
        format!(
            "{N_SEQ} sequences; OCC-EPE backward {bo:.4} vs forward {fo:.4}; ALL-EPE backward {:.4} vs forward {:.4}",
            b.epe_all, f.epe_all
        ),
    )
}

fn real_valued(seed: u64) -> SceneSequence {
    let cfg = RandomSceneConfig {
        difficulty: Difficulty::Easy,
        real_valued: true,
        ..Default::default()
    };
    generate(&random_spec_with(seed, &cfg)).unwrap()
}

fn max_epe_all(reports: &[EpeReport]) -> f64 {
    reports.iter().map(|r| r.epe_all).fold(0.0, f64::max)
}

fn criterion_5() -> Line {
    const N_SEQ: u64 = 100;
    let start = Instant::now();
    let gt_fill =
        |seq: &SceneSequence| Box::new(seq.ground_truth_fill()) as Box<dyn OcclusionSolver>;
    let (fi, bi) = paired_reports(
        0..N_SEQ,
        |seed| generate(&random_spec(seed, Difficulty::Hard)).unwrap(),
        gt_fill,
    );
    let (fr, br) = paired_reports(0..N_SEQ, real_valued, gt_fill);
    let int_exact = max_epe_all(&fi) == 0.0 && max_epe_all(&bi) == 0.0;
    let (rf, rb) = (
        aggregate(&fr).unwrap().epe_all,
        aggregate(&br).unwrap().epe_all,
    );
    judged(
        5,
        "chaining reproduces the ground-truth long-range flow",
        int_exact && rf <= 0.1 && rb <= 0.1,
        start.elapsed(),
        Some(Duration::from_secs(120)),
        format!(
            "{N_SEQ} integer scenes max EPE fwd {} bwd {}; {N_SEQ} real-valued scenes mean EPE fwd {rf:.4} bwd {rb:.4} (limit 0.1)",
            max_epe_all(&fi),
            max_epe_all(&bi)
        ),
    )
}

fn criterion_6() -> Line {
    const N_SEQ: u64 = 100;
    let start = Instant::now();
    let extrapolate =
        |_: &SceneSequence| Box::new(OccSolver::Extrapolate) as Box<dyn OcclusionSolver>;
    let (_, bi) = paired_reports(
        0..N_SEQ,
        |seed| generate(&random_spec(seed, Difficulty::Hard)).unwrap(),
        extrapolate,
    );
    let (_, br) = paired_reports(0..N_SEQ, real_valued, extrapolate);
    let occ = |r: &[EpeReport]| aggregate(r).unwrap().epe_occ.unwrap_or(0.0);
    let (oi, or) = (occ(&bi), occ(&br));
    judged(
        6,
        "extrapolation is exact for constant velocity",
        oi <= 0.1 && or <= 0.1,
        start.elapsed(),
        None,
        format!("backward OCC-EPE {oi:.4} on {N_SEQ} integer scenes, {or:.4} on {N_SEQ} real-valued scenes (limit 0.1)"),
    )
}

fn criterion_7() -> Line {
    let start = Instant::now();
    let golden: [u8; 20] = [
        0x50, 0x49, 0x45, 0x48, 0x01, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,
        0x3f, 0x00, 0x00, 0x00, 0xbf,
    ];
    let golden_ok =
        read_flo(&golden).is_ok_and(|f| f.get(0, 0) == [0.5, -0.5] && write_flo(&f) == golden);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let specials = [
        0.0f32,
        -0.0,
        1e4,
        -1e4,
        f32::MIN_POSITIVE,
        -f32::MIN_POSITIVE,
        1e-45,
        9999.999,
    ];
    let mut exact = 0;
    for _ in 0..1000 {
        let (w, h) = (rng.gen_range(1..48), rng.gen_range(1..48));
        let data: Vec<f32> = (0..w * h * 2)
            .map(|_| {
                if rng.gen_bool(0.05) {
                    specials[rng.gen_range(0..specials.len())]
                } else {
                    rng.gen_range(-1e4f32..=1e4)
                }
            })
            .collect();
        let field = FlowField::new(w, h, data.clone()).unwrap();
        let bytes = write_flo(&field);
        let back = read_flo(&bytes).unwrap();
        let bits_equal = back
            .as_slice()
            .iter()
            .zip(&data)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if bits_equal && write_flo(&back) == bytes && bytes.len() == 12 + 8 * w * h {
            exact += 1;
        }
    }
    judged(
        7,
        ".flo bit-exact round trip",
        golden_ok && exact == 1000,
        start.elapsed(),
        None,
        format!("golden 1x1 file ok: {golden_ok}; {exact}/1000 random fields bit-identical"),
    )
}

fn tree_digest(root: &Path) -> (usize, String) {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.insert(rel, Sha256::digest(std::fs::read(&path).unwrap()).to_vec());
            }
        }
    }
    let mut files = BTreeMap::new();
    walk(root, root, &mut files);
    let mut h = Sha256::new();
    for (name, digest) in &files {
        h.update(name.as_bytes());
        h.update([0]);
        h.update(digest);
    }
    let hex: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    (files.len(), hex)
}

fn criterion_8() -> Line {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let digests: Vec<(String, (usize, String))> = [("a", "1"), ("b", "1"), ("c", "4"), ("d", "0")]
        .iter()
        .map(|&(name, workers)| {
            let out = tmp.path().join(name);
            let status = Command::new(env!("CARGO_BIN_EXE_flowacc"))
                .args([
                    "synth",
                    "--n",
                    "10",
                    "--seed",
                    "1",
                    "--workers",
                    workers,
                    "--out",
                ])
                .arg(&out)
                .env_remove("FLOWACC_OUT")
                .output()
                .expect("run flowacc");
            assert!(
                status.status.success(),
                "{}",
                String::from_utf8_lossy(&status.stderr)
            );
            (format!("workers={workers}"), tree_digest(&out))
        })
        .collect();
    let identical = digests.windows(2).all(|w| w[0].1 == w[1].1);
    let (files, hex) = &digests[0].1;
    judged(
        8,
        "synth output is deterministic",
        identical && *files > 10,
        start.elapsed(),
        None,
        format!(
            "4 runs of `synth --n 10 --seed 1` ({}) -> {files} files, tree sha256 {} identical: {identical}",
            digests.iter().map(|d| d.0.as_str()).collect::<Vec<_>>().join(", "),
            &hex[..16]
        ),
    )
}

fn criterion_9() -> Line {
    Line {
        id: 9,
        name: "published benchmark numbers",
        outcome: Outcome::NotReproducible,
        detail: "absolute EPE tables, HS-Sintel results and learned-model comparisons need trained networks and \
                 external datasets; criteria 1-6 are the property-based substitutes"
            .into(),
    }
}

#[test]
fn acceptance() {
    let (c2, c3) = criteria_2_3();
    let lines = [
        criterion_1(),
        c2,
        c3,
        criterion_4(),
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(),
        criterion_9(),
    ];
    println!();
    let mut failed = Vec::new();
    for l in &lines {
        let tag = match l.outcome {
            Outcome::Pass => "PASS",
            Outcome::Fail => {
                failed.push(l.id);
                "FAIL"
            }
            Outcome::NotReproducible => "N/A ",
        };
        println!("[{tag}] criterion {}: {}: {}", l.id, l.name, l.detail);
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
