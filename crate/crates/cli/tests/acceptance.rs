//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.
//!
//! Criteria 7 and 8 run the full pendulum experiment (5 seeds x 20
//! episodes, OpAx and Random) with `configs/pendulum_gp_desk.toml`; expect
//! several hours on one core.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use opax::experiment::{run_active_learning, Baseline, RunConfig, RunHistory};
use opax::selftest::{self, Check};
use opax_cli::config::parse_config;
use rayon::prelude::*;

// Thresholds of criteria 7 and 8; the self-checks report their own.
const SEEDS: usize = 5;
const EPISODES: usize = 20;
const MIN_SEEDS_BEATING_RANDOM: usize = 4;
const MAX_DECAY_RATIO: f64 = 0.5;
const SWINGUP_REL_GAP: f64 = 0.25;
const KEEPDOWN_FLOOR: f64 = -20.0;
const RUNTIME_TARGET_MIN: f64 = 30.0;

struct Line {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
}

impl Line {
    fn from_checks(id: u32, name: &'static str, checks: &[Check]) -> Line {
        let detail = checks.iter().map(|c| format!("{}: {}", c.name, c.detail)).collect::<Vec<_>>().join("; ");
        Line { id, name, passed: checks.iter().all(|c| c.passed), detail }
    }

    fn print(&self) {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        println!("{tag} {:>2} {}: {}", self.id, self.name, self.detail);
    }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn determinism() -> Line {
    let cfg = root().join("configs/quick.toml");
    let tmp = tempfile::tempdir().expect("temp dir");
    let run = |name: &str| -> Result<Vec<u8>, String> {
        let out = tmp.path().join(name);
        let o = Command::new(env!("CARGO_BIN_EXE_opax"))
            .args(["explore", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "7"])
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(String::from_utf8_lossy(&o.stderr).into_owned());
        }
        fs::read(out.join("opax/seed_7/metrics.csv")).map_err(|e| e.to_string())
    };
    let (passed, detail) = match (run("a"), run("b")) {
        (Ok(a), Ok(b)) => {
            (a == b && !a.is_empty(), format!("two runs, {} and {} bytes, identical: {}", a.len(), b.len(), a == b))
        }
        (Err(e), _) | (_, Err(e)) => (false, format!("run failed: {e}")),
    };
    Line { id: 10, name: "determinism", passed, detail }
}

fn episode(h: &RunHistory, n: usize) -> &opax::experiment::EpisodeRecord {
    h.episodes.iter().find(|e| e.episode == n).expect("episode recorded")
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn downstream(h: &RunHistory, label: &str) -> f64 {
    let j = h.downstream_tasks.iter().position(|t| t == label).expect("task configured");
    episode(h, EPISODES).downstream[j].expect("evaluated at the last episode")
}

fn experiments() -> Vec<Line> {
    let mut cfg: RunConfig = parse_config(&root().join("configs/pendulum_gp_desk.toml")).expect("desk config");
    cfg.episodes = EPISODES;
    cfg.eval_every = EPISODES;
    cfg.seeds = (0..SEEDS as u64).collect();
    let mut jobs = Vec::new();
    for b in [Baseline::Opax, Baseline::Random] {
        let mut c = cfg.clone();
        b.apply(&mut c);
        if b == Baseline::Random {
            c.downstream.clear();
        }
        jobs.extend(c.seeds.clone().into_iter().map(|s| (b, s, c.clone())));
    }
    let t0 = Instant::now();
    let runs: Vec<(Baseline, RunHistory)> = jobs
        .par_iter()
        .map(|(b, s, c)| {
            let t = Instant::now();
            let h = run_active_learning(c, *s).expect("run completes");
            eprintln!("  {} seed {s}: {:.1} min", b.name(), t.elapsed().as_secs_f64() / 60.0);
            (*b, h)
        })
        .collect();
    let minutes = t0.elapsed().as_secs_f64() / 60.0;
    let of = |b: Baseline| -> Vec<&RunHistory> { runs.iter().filter(|r| r.0 == b).map(|r| &r.1).collect() };
    let (opax, random) = (of(Baseline::Opax), of(Baseline::Random));

    let last_opax: Vec<f64> = opax.iter().map(|h| episode(h, EPISODES).max_epistemic).collect();
    let last_random: Vec<f64> = random.iter().map(|h| episode(h, EPISODES).max_epistemic).collect();
    let first_opax: Vec<f64> = opax.iter().map(|h| episode(h, 1).max_epistemic).collect();
    let wins = last_opax.iter().zip(&last_random).filter(|(o, r)| o <= r).count();
    let ratio = mean(&last_opax) / mean(&first_opax);
    let c7 = Line {
        id: 7,
        name: "epistemic decay vs random",
        passed: wins >= MIN_SEEDS_BEATING_RANDOM && ratio <= MAX_DECAY_RATIO,
        detail: format!(
            "opax <= random at episode {EPISODES} in {wins}/{SEEDS} seeds (need {MIN_SEEDS_BEATING_RANDOM}); \
             opax {:.3?} vs random {:.3?}; mean max epistemic episode {EPISODES}/episode 1 = {ratio:.3} \
             (need <= {MAX_DECAY_RATIO}); runtime {minutes:.1} min (target {RUNTIME_TARGET_MIN})",
            last_opax, last_random
        ),
    };

    let model: Vec<f64> = opax.iter().map(|h| downstream(h, "pendulum_swingup")).collect();
    let oracle: Vec<f64> = opax.iter().map(|h| downstream(h, "pendulum_swingup_true_env")).collect();
    let keep: Vec<f64> = opax.iter().map(|h| downstream(h, "pendulum_keepdown")).collect();
    let gap = (mean(&model) - mean(&oracle)).abs() / mean(&oracle).abs();
    let keep_ok = keep.iter().all(|&k| k >= KEEPDOWN_FLOOR);
    let c8 = Line {
        id: 8,
        name: "zero-shot downstream",
        passed: gap <= SWINGUP_REL_GAP && keep_ok,
        detail: format!(
            "swing-up mean model {:.1} vs simulator planner {:.1}, relative gap {gap:.3} (need <= {SWINGUP_REL_GAP}); \
             per seed {:.1?} vs {:.1?}; keep-down {:.2?} (need >= {KEEPDOWN_FLOOR})",
            mean(&model),
            mean(&oracle),
            model,
            oracle,
            keep
        ),
    };
    vec![c7, c8]
}

fn main() -> ExitCode {
    let mut all_passed = true;
    let mut report = |line: Line| {
        line.print();
        all_passed &= line.passed;
    };
    report(Line::from_checks(1, "GP oracle equivalence", &[selftest::gp_oracle()]));
    report(Line::from_checks(2, "variance monotonicity", &[selftest::variance_monotonicity()]));
    report(Line::from_checks(3, "information gain bound", &[selftest::info_gain_bound()]));
    report(Line::from_checks(4, "calibration coverage", &[selftest::calibration()]));
    report(Line::from_checks(
        5,
        "planner correctness",
        &[selftest::planner_quadratic(), selftest::colored_noise_slopes()],
    ));
    report(Line::from_checks(6, "optimism", &[selftest::optimism()]));
    report(Line::from_checks(9, "ensemble gradients", &[selftest::gradients(), selftest::duplicated_members()]));
    report(determinism());
    for line in experiments() {
        report(line);
    }
    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
