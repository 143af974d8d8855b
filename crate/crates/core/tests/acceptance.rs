//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any criterion fails.
//! Lines starting with `X` report further checks on the trained models and do not
//! affect the exit status.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use truncdiff::anchors::{kmeans_cluster, AnchorSet};
use truncdiff::denoiser::{write_checkpoint, Checkpoint, DenoiserConfig, ModelKind};
use truncdiff::eval::benchmark::evaluate_paradigm;
use truncdiff::eval::metrics::{collision_free, drivable_compliant};
use truncdiff::eval::{diversity, run_benchmark, BenchmarkConfig, Paradigm, PlannerEntry};
use truncdiff::plan::{plan_checkpoint, read_plan, PlanConfig};
use truncdiff::scene::{generate_dataset, generate_scene, write_dataset, RouteIntent, Scene};
use truncdiff::schedule::NoiseSchedule;
use truncdiff::train::{train_model, TrainConfig};
use truncdiff::trajectory::Trajectory;

use common::{chain_error, gradient_configs, marginal_error, random_case, schedule_case};

const TRAIN_SCENES: usize = 400;
const TRAIN_DATA_SEED: u64 = 100;
const TEST_SCENES: usize = 100;
const TEST_DATA_SEED: u64 = 200;
const STRAIGHT_DATA_SEED: u64 = 300;
const DIFFICULTY: f64 = 0.5;
const N_ANCHORS: usize = 20;
const KMEANS_SEED: u64 = 1;
const TRUNCATED_EPOCHS: usize = 60;
const BASELINE_EPOCHS: usize = 300;
const BATCH_SIZE: usize = 8;
/// First seed is the reference model; all three give the run-to-run noise band.
const MODEL_SEEDS: [u64; 3] = [7, 8, 9];
/// Lane-change scenes inspected for a qualifying top-10 candidate.
const CURATED_LANE_CHANGES: [(RouteIntent, u64); 4] = [
    (RouteIntent::LaneChangeLeft, 0),
    (RouteIntent::LaneChangeLeft, 1),
    (RouteIntent::LaneChangeRight, 0),
    (RouteIntent::LaneChangeRight, 1),
];

#[derive(Default)]
struct Tally {
    failed: Vec<String>,
    reported: Vec<String>,
}

impl Tally {
    fn check(&mut self, id: &str, pass: bool, detail: String) {
        println!("{id} {} {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            if id.starts_with('X') { &mut self.reported } else { &mut self.failed }.push(id.to_string());
        }
    }
}

fn schedule_suite(t: &mut Tally) {
    let t0 = Instant::now();
    let sched = NoiseSchedule::default();
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let (clean, eps, i, j) = schedule_case(seed, &sched);
        worst = worst.max(marginal_error(&sched, &clean, &eps, i, j));
        worst = worst.max(chain_error(&sched, &clean, &eps, i, j));
    }
    let secs = t0.elapsed().as_secs_f64();
    t.check("C1", worst <= 1e-9 && secs < 5.0, format!("schedule invariants: max error {worst:.3e} over 100 cases in {secs:.2} s"));
}

fn gradient_suite(t: &mut Tally) {
    let t0 = Instant::now();
    let worst = gradient_configs()
        .into_iter()
        .map(|(seed, cfg, n, obstacles)| random_case(seed, cfg, n, obstacles))
        .fold(0.0f64, f64::max);
    let secs = t0.elapsed().as_secs_f64();
    t.check("C2", worst <= 1e-4 && secs < 60.0, format!("backward vs finite differences: max relative error {worst:.3e} in {secs:.2} s"));
}

fn line(y: f64, length: f64) -> Trajectory<f64> {
    Trajectory::new((1..=8).map(|k| [length * k as f64 / 8.0, y]).collect())
}

fn diversity_oracle(t: &mut Tally) {
    let single = diversity(&[line(0.0, 20.0)]).unwrap();
    let copies = diversity(&vec![line(1.0, 20.0); 5]).unwrap();
    let disjoint = diversity(&[line(0.0, 20.0), line(10.0, 20.0)]).unwrap();
    let err = single.abs().max(copies.abs()).max((disjoint - 0.5).abs());
    t.check("C3", err <= 0.02, format!("diversity oracle: N=1 {single:.4}, duplicates {copies:.4}, disjoint pair {disjoint:.4}"));
}

fn tdp(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tdp")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn pipeline(dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    tdp(&["gen-data", "--out", &p("data.tdpd"), "--count", "40", "--seed", "5"])?;
    tdp(&["cluster", "--dataset", &p("data.tdpd"), "--out", &p("anchors.txt"), "--k", "8", "--seed", "2"])?;
    tdp(&[
        "train", "--dataset", &p("data.tdpd"), "--anchors", &p("anchors.txt"), "--out", &p("model.ckpt"), "--epochs", "3", "--seed", "4",
    ])?;
    tdp(&["plan", "--checkpoint", &p("model.ckpt"), "--dataset", &p("data.tdpd"), "--index", "3", "--seed", "6", "--out", &p("plan.txt")])?;
    ["data.tdpd", "anchors.txt", "model.ckpt", "plan.txt"]
        .iter()
        .map(|f| std::fs::read(dir.join(f)).map_err(|e| e.to_string()))
        .collect()
}

fn determinism(t: &mut Tally) {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    match (pipeline(a.path()), pipeline(b.path())) {
        (Ok(x), Ok(y)) => {
            let same: Vec<bool> = x.iter().zip(&y).map(|(u, v)| u == v).collect();
            t.check(
                "C8",
                same.iter().all(|&s| s),
                format!("pipeline determinism: dataset/anchors/checkpoint/plan identical {same:?}"),
            );
        }
        (Err(e), _) | (_, Err(e)) => t.check("C8", false, format!("pipeline failed: {e}")),
    }
}

fn overfit(t: &mut Tally) {
    let t0 = Instant::now();
    let (scenes, _) = generate_dataset(8, DIFFICULTY, 11, None).unwrap();
    let demos: Vec<_> = scenes.iter().map(|s| s.gt_trajectory.clone()).collect();
    let anchors = kmeans_cluster(&demos, 5, 100, KMEANS_SEED).unwrap();
    let tc = TrainConfig { epochs: 300, batch_size: 1, seed: 3, ..TrainConfig::default() };
    let (_, hist) = train_model(&scenes, &[], Some(anchors), NoiseSchedule::default(), &DenoiserConfig::default(), &tc, |_| {}).unwrap();
    let ratio = hist.last().unwrap().loss / hist[0].loss;
    t.check(
        "C9",
        ratio < 0.1,
        format!("overfit: loss {:.4} -> {:.4} (ratio {ratio:.4}) in {:.1} s", hist[0].loss, hist.last().unwrap().loss, t0.elapsed().as_secs_f64()),
    );
}

struct Models {
    truncated: Vec<Checkpoint<f64>>,
    vanilla: Checkpoint<f64>,
    regression: Checkpoint<f64>,
}

fn train_one(train: &[Scene], anchors: &AnchorSet<f64>, kind: ModelKind, seed: u64) -> Checkpoint<f64> {
    let epochs = if kind == ModelKind::Truncated { TRUNCATED_EPOCHS } else { BASELINE_EPOCHS };
    let tc = TrainConfig { epochs, batch_size: BATCH_SIZE, seed, kind, ..TrainConfig::default() };
    let t0 = Instant::now();
    let anchors = (kind == ModelKind::Truncated).then(|| anchors.clone());
    let (ck, hist) = train_model(train, &[], anchors, NoiseSchedule::default(), &DenoiserConfig::default(), &tc, |_| {}).unwrap();
    eprintln!("trained {kind} seed {seed}: {epochs} epochs, loss {:.4} in {:.1} s", hist.last().unwrap().loss, t0.elapsed().as_secs_f64());
    ck
}

fn train_models(train: &[Scene]) -> Models {
    let demos: Vec<_> = train.iter().map(|s| s.gt_trajectory.clone()).collect();
    let anchors = kmeans_cluster(&demos, N_ANCHORS, 100, KMEANS_SEED).unwrap();
    Models {
        truncated: MODEL_SEEDS.iter().map(|&s| train_one(train, &anchors, ModelKind::Truncated, s)).collect(),
        vanilla: train_one(train, &anchors, ModelKind::Vanilla, MODEL_SEEDS[0]),
        regression: train_one(train, &anchors, ModelKind::Regression, MODEL_SEEDS[0]),
    }
}

fn paradigm_trends(t: &mut Tally, m: &Models, test: &[Scene]) {
    let planners = [
        PlannerEntry { paradigm: Paradigm::Truncated, checkpoint: Some(&m.truncated[0]) },
        PlannerEntry { paradigm: Paradigm::VanillaFullSchedule, checkpoint: Some(&m.vanilla) },
        PlannerEntry { paradigm: Paradigm::SingleModeRegression, checkpoint: Some(&m.regression) },
        PlannerEntry { paradigm: Paradigm::ExtrapolatedPrior, checkpoint: Some(&m.truncated[0]) },
    ];
    let report = run_benchmark(test, &planners, &BenchmarkConfig::default()).unwrap();
    print!("{}", report.to_table());
    let row = |p| report.row(p).unwrap();
    let (tr, va) = (row(Paradigm::Truncated), row(Paradigm::VanillaFullSchedule));
    let (rg, ex) = (row(Paradigm::SingleModeRegression), row(Paradigm::ExtrapolatedPrior));

    let ratio = tr.total_time_ms / va.total_time_ms;
    t.check(
        "C4",
        ratio <= 0.2,
        format!("plan time: truncated {} steps {:.3} ms, vanilla {} steps {:.3} ms, ratio {ratio:.3}", tr.steps, tr.total_time_ms, va.steps, va.total_time_ms),
    );
    let gap = tr.diversity - va.diversity;
    t.check("C5", gap >= 0.10, format!("diversity: truncated {:.4}, vanilla {:.4}, gap {gap:.4}", tr.diversity, va.diversity));
    t.check(
        "C6",
        tr.pdms_mini >= rg.pdms_mini && tr.pdms_mini >= ex.pdms_mini,
        format!("pdms_mini: truncated {:.4}, regression {:.4}, extrapolated prior {:.4}", tr.pdms_mini, rg.pdms_mini, ex.pdms_mini),
    );
}

fn spread(v: &[f64]) -> (f64, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let range = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min);
    (mean, range)
}

fn ablations(t: &mut Tally, m: &Models, test: &[Scene]) {
    let score = |ck: &Checkpoint<f64>, steps: usize, n: usize| {
        let cfg = BenchmarkConfig { truncated_steps: steps, n_infer: n, ..BenchmarkConfig::default() };
        evaluate_paradigm(Paradigm::Truncated, ck, test, &cfg).unwrap().0.pdms_mini
    };
    let one_step: Vec<f64> = m.truncated.iter().map(|ck| score(ck, 1, 20)).collect();
    let two_step: Vec<f64> = m.truncated.iter().map(|ck| score(ck, 2, 20)).collect();
    let ten: Vec<f64> = m.truncated.iter().map(|ck| score(ck, 2, 10)).collect();
    let mut directional = |what: &str, before: &[f64], after: &[f64]| -> String {
        let ((mb, rb), (ma, ra)) = (spread(before), spread(after));
        let band = rb.max(ra);
        let ok = ma >= mb - band;
        if !ok {
            t.failed.push(format!("C7 {what}"));
        }
        format!("{what} {mb:.4} -> {ma:.4} (band {band:.4}) {}", if ok { "ok" } else { "decreased" })
    };
    let steps = directional("steps 1->2", &one_step, &two_step);
    let samples = directional("n_infer 10->20", &ten, &two_step);
    let pass = !t.failed.iter().any(|f| f.starts_with("C7"));
    println!("C7 {} ablations over seeds {MODEL_SEEDS:?}: {steps}; {samples}", if pass { "PASS" } else { "FAIL" });
}

fn straight_accuracy(t: &mut Tally, m: &Models) {
    let (straight, _) = generate_dataset(TEST_SCENES, DIFFICULTY, STRAIGHT_DATA_SEED, Some(RouteIntent::Straight)).unwrap();
    let cfg = BenchmarkConfig::default();
    let tr = evaluate_paradigm(Paradigm::Truncated, &m.truncated[0], &straight, &cfg).unwrap().0.l2_final;
    let rg = evaluate_paradigm(Paradigm::SingleModeRegression, &m.regression, &straight, &cfg).unwrap().0.l2_final;
    t.check("X1", tr < rg, format!("straight scenes, top-1 L2 at horizon: truncated {tr:.3} m, regression {rg:.3} m"));
}

fn lane_change_modes(t: &mut Tally, m: &Models) {
    let mut found = Vec::new();
    for (intent, seed) in CURATED_LANE_CHANGES {
        let scene = generate_scene(intent, DIFFICULTY, seed).unwrap();
        let r = plan_checkpoint(&m.truncated[0], &scene, &PlanConfig::default()).unwrap();
        let hit = r.ranking().into_iter().take(10).find(|&i| {
            let c = &r.candidates[i].trajectory;
            c.last()[1].abs() > 3.5 && collision_free(&scene, c) && drivable_compliant(&scene, c)
        });
        found.push((format!("{intent}/{seed}"), hit.is_some()));
    }
    t.check("X2", found.iter().all(|f| f.1), format!("lane change within top-10 candidates: {found:?}"));
}

fn cli_plan_on_empty_road(t: &mut Tally, m: &Models) {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| -> PathBuf { dir.path().join(name) };
    let scene = generate_scene(RouteIntent::Straight, 0.0, 5).unwrap();
    write_dataset(&p("empty.tdpd"), std::slice::from_ref(&scene)).unwrap();
    write_checkpoint(&p("model.ckpt"), &m.truncated[0]).unwrap();
    let s = |q: PathBuf| q.to_str().unwrap().to_string();
    let run = tdp(&["plan", "--checkpoint", &s(p("model.ckpt")), "--dataset", &s(p("empty.tdpd")), "--out", &s(p("plan.txt"))]);
    let (pass, detail) = match run.and_then(|_| read_plan(&p("plan.txt")).map_err(|e| e.to_string())) {
        Ok(plan) => {
            let top = &plan.candidates[0].trajectory;
            let (nc, dac) = (collision_free(&scene, top), drivable_compliant(&scene, top));
            (nc && dac, format!("nc {nc} dac {dac}"))
        }
        Err(e) => (false, e),
    };
    t.check("X3", pass, format!("plan command on an empty straight road, top-1: {detail}"));
}

fn main() {
    let mut t = Tally::default();
    schedule_suite(&mut t);
    gradient_suite(&mut t);
    diversity_oracle(&mut t);

    let t0 = Instant::now();
    let (train, _) = generate_dataset(TRAIN_SCENES, DIFFICULTY, TRAIN_DATA_SEED, None).unwrap();
    let (test, _) = generate_dataset(TEST_SCENES, DIFFICULTY, TEST_DATA_SEED, None).unwrap();
    let models = train_models(&train);
    eprintln!("training finished in {:.1} s", t0.elapsed().as_secs_f64());
    paradigm_trends(&mut t, &models, &test);
    ablations(&mut t, &models, &test);

    determinism(&mut t);
    overfit(&mut t);

    straight_accuracy(&mut t, &models);
    lane_change_modes(&mut t, &models);
    cli_plan_on_empty_road(&mut t, &models);

    if !t.reported.is_empty() {
        println!("acceptance: supplementary checks failing {:?}", t.reported);
    }
    if t.failed.is_empty() {
        println!("acceptance: criteria 1-9 passed");
    } else {
        println!("acceptance: failed {:?}", t.failed);
        std::process::exit(1);
    }
}
