//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! The fast checks run first; the full collect → train → closed-loop pipeline
//! on the default 573-run corpus runs last and takes several minutes.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slalom_cli::{Experiment, ExperimentConfig, RunOptions};
use slalom_core::controller::{ConstantPolicy, PdGains, Pilot};
use slalom_core::features::{
    build_matrix, extract_frame, longitudinal_proximity, reference_cone, turn_state, Normalizer, PermutationTable,
    TurnState, FEATURE_COUNT,
};
use slalom_core::nn::{backward, elu, Architecture, CnnModel, Conv2d, RegressionMetrics, Tensor};
use slalom_core::sim::{build_course, kmh_to_ms, step, CourseConfig, StepInput, VehicleParams, VehicleState};

/// Fixed seed of the full pipeline run.
const PIPELINE_SEED: u64 = 1;
const BUDGET_SECONDS: f64 = 15.0 * 60.0;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn gradient_oracle() -> Outcome {
    let started = Instant::now();
    let arch = Architecture { conv_filters: vec![3, 4, 5], kernel: (2, 2), dense_widths: vec![6, 4] };
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let h = 1e-5;
    let (mut worst, mut checked) = (0.0f64, 0);
    for seed in 0..4 {
        let model = CnnModel::new(&arch, seed).unwrap();
        let size = rng.random_range(1..=4);
        let batch: Vec<(Vec<f64>, f64)> = (0..size)
            .map(|_| ((0..35).map(|_| rng.random_range(-1.5..1.5)).collect(), rng.random_range(-1.0..1.0)))
            .collect();
        let refs: Vec<(&[f64], f64)> = batch.iter().map(|(x, y)| (&x[..], *y)).collect();
        let (_, analytic) = backward(&model, &refs).unwrap();
        let loss = |m: &CnnModel| backward(m, &refs).unwrap().0;
        let mut probe = model.clone();
        let sizes: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
        for (t, &n) in sizes.iter().enumerate() {
            for i in 0..n {
                let orig = probe.param_slices()[t][i];
                probe.param_slices_mut()[t][i] = orig + h;
                let up = loss(&probe);
                probe.param_slices_mut()[t][i] = orig - h;
                let down = loss(&probe);
                probe.param_slices_mut()[t][i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic.0[t][i];
                let denom = a.abs().max(numeric.abs()).max(1e-7);
                worst = worst.max((a - numeric).abs() / denom);
                checked += 1;
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        worst < 1e-4 && secs < 30.0,
        format!("max relative error {worst:.2e} over {checked} parameters in {secs:.1} s (limits 1e-4, 30 s)"),
    )
}

fn conv_reference(input: &Tensor, layer: &Conv2d) -> Vec<f64> {
    let (oh, ow) = (input.h - layer.kernel_h + 1, input.w - layer.kernel_w + 1);
    let mut out = vec![0.0; oh * ow * layer.filters];
    for i in 0..oh {
        for j in 0..ow {
            for co in 0..layer.filters {
                let mut acc = layer.bias[co];
                for di in 0..layer.kernel_h {
                    for dj in 0..layer.kernel_w {
                        for ci in 0..layer.in_channels {
                            let w = layer.weights
                                [((di * layer.kernel_w + dj) * layer.in_channels + ci) * layer.filters + co];
                            acc += input.at(i + di, j + dj, ci) * w;
                        }
                    }
                }
                out[(i * ow + j) * layer.filters + co] = acc;
            }
        }
    }
    out
}

fn conv_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let layers = [
        Conv2d::he(2, 2, 1, 32, &mut rng),
        Conv2d::he(2, 2, 32, 64, &mut rng),
        Conv2d::he(2, 2, 64, 128, &mut rng),
    ];
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let data = (0..35).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut x = Tensor::from_vec(5, 7, 1, data).unwrap();
        for layer in &layers {
            let fast = layer.forward(&x).unwrap();
            for (a, b) in fast.data.iter().zip(conv_reference(&x, layer)) {
                worst = worst.max((a - b).abs());
            }
            x = fast;
            x.data.iter_mut().for_each(|v| *v = elu(*v));
        }
    }
    outcome(worst < 1e-12, format!("max abs difference {worst:.2e} on 100 inputs x 3 layers (limit 1e-12)"))
}

fn feature_invariants() -> Outcome {
    let course = build_course(&CourseConfig::default()).unwrap();
    let table = PermutationTable::cyclic();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let n = 20_000;
    let (mut f3_bad, mut turn_bad, mut rows_bad, mut worst_rt) = (0, 0, 0, 0.0f64);
    let random_state = |rng: &mut ChaCha8Rng| VehicleState {
        x: rng.random_range(0.0..course.x_finish),
        y: rng.random_range(-5.0..5.0),
        heading: std::f64::consts::FRAC_PI_2 + rng.random_range(-0.6..0.6),
        speed: kmh_to_ms(rng.random_range(15.0..60.0)),
        wheel_angle: rng.random_range(-3.0..3.0),
        wheel_rate: rng.random_range(-10.0..10.0),
    };
    for _ in 0..n {
        let s = random_state(&mut rng);
        let prev = random_state(&mut rng);
        let f3 = longitudinal_proximity(&s, &reference_cone(&s, &course)).unwrap();
        if !(f3 > 0.0 && f3 <= 1.0) {
            f3_bad += 1;
        }
        if course.cone_sets.iter().any(|set| set.contains_x(s.x)) && turn_state(&s, &course) != TurnState::Straight {
            turn_bad += 1;
        }
        let norm = Normalizer {
            mean: std::array::from_fn(|_| rng.random_range(-50.0..50.0)),
            std: std::array::from_fn(|_| rng.random_range(0.01..20.0)),
            samples: 1,
        };
        let frame = extract_frame(&s, Some(&prev), &course, 1.0 / 30.0).unwrap();
        let m = build_matrix(&frame, &norm, &table).unwrap();
        let key = |row: &[f64; FEATURE_COUNT]| {
            let mut r = row.map(f64::to_bits);
            r.sort_unstable();
            r
        };
        if m.values.iter().any(|row| key(row) != key(&m.values[0])) {
            rows_bad += 1;
        }
        let x: [f64; FEATURE_COUNT] = std::array::from_fn(|_| rng.random_range(-100.0..100.0));
        let back = norm.denormalize(&norm.normalize(&x));
        for k in 0..FEATURE_COUNT {
            worst_rt = worst_rt.max((back[k] - x[k]).abs());
        }
    }
    outcome(
        f3_bad == 0 && turn_bad == 0 && rows_bad == 0 && worst_rt < 1e-12,
        format!(
            "{n} states: f3 outside (0,1] {f3_bad}, abreast without turn state 3 {turn_bad}, \
             unequal matrix rows {rows_bad}, normalizer round trip {worst_rt:.1e}"
        ),
    )
}

fn plant_checks() -> Outcome {
    let p = VehicleParams::default();
    let dt = 1.0 / 30.0;
    // 10 m/s for exactly one second, no steering
    let s0 = VehicleState::aligned(0.0, -1.75, 10.0);
    let s1 = step(&s0, &StepInput { torque: 0.0, speed_command: 36.0 }, &p, 1.0).unwrap();
    let straight = s1.x == 10.0 && s1.y == -1.75 && s1.heading == s0.heading;

    let tire: f64 = 0.08;
    let radius = p.wheelbase / tire.tan();
    let mut s = VehicleState { wheel_angle: p.wheel_for_tire(tire), ..VehicleState::aligned(0.0, 0.0, 12.0) };
    let mut arc_err = 0.0f64;
    for k in 1..=100 {
        s = step(&s, &StepInput { torque: 0.0, speed_command: 43.2 }, &p, dt).unwrap();
        let turned = 12.0 * k as f64 * dt / radius;
        let (ex, ey) = (radius * turned.sin(), radius * (1.0 - turned.cos()));
        arc_err = arc_err.max((s.x - ex).hypot(s.y - ey));
    }

    let course = build_course(&CourseConfig::default()).unwrap();
    let mut worst_settle = 0.0f64;
    for v in [15.0, 37.5, 60.0] {
        let mut pilot = Pilot::new(ConstantPolicy(0.5), PdGains::default(), p).unwrap();
        let mut s = VehicleState::aligned(0.0, -1.75, kmh_to_ms(v));
        let mut settled_at = 0.0;
        for k in 0..150 {
            if (s.wheel_angle - 0.5).abs() > 0.01 {
                settled_at = (k + 1) as f64 * dt;
            }
            let out = pilot.step(&s, &course, v, dt).unwrap();
            s = step(&s, &out.input, &p, dt).unwrap();
        }
        worst_settle = worst_settle.max(settled_at);
    }
    outcome(
        straight && arc_err < 1e-6 && worst_settle < 1.0,
        format!(
            "straight line exact: {straight}; arc error {arc_err:.1e} m over 100 steps; \
             0.5 rad step settles within 2% after {worst_settle:.3} s (slowest of 15/37.5/60 km/h)"
        ),
    )
}

fn slalom(args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_slalom")).args(args).env("RUST_LOG", "warn").output().unwrap();
    let code = out.status.code().unwrap_or(-1);
    // 1 is a failed campaign, expected from the one-epoch smoke model
    if code != 0 && code != 1 {
        eprintln!("slalom {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    code
}

fn smoke_pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let d = |s: &str| dir.join(s).display().to_string();
    assert_eq!(slalom(&["collect", "--seed", "21", "--runs", "10", "--train", "8", "--out", &d("data")]), 0);
    assert_eq!(slalom(&["train", "--seed", "21", "--data", &d("data"), "--epochs", "1", "--out", &d("model")]), 0);
    let code = slalom(&["run-closedloop", "--seed", "21", "--model", &d("model/model.json"), "--trials", "3", "--out", &d("run")]);
    assert!(code == 0 || code == 1, "exit code {code}");
    let mut files = vec!["data/train.csv", "data/test.csv", "model/model.json", "model/fit_report.json"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    for k in 0..3 {
        files.push(format!("run/traces/trial_{k:02}.csv"));
    }
    files.into_iter().map(|f| (f.clone(), fs::read(dir.join(&f)).unwrap())).collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let a = smoke_pipeline(&tmp.path().join("a"));
    let b = smoke_pipeline(&tmp.path().join("b"));
    let differing: Vec<&str> =
        a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
    outcome(
        differing.is_empty(),
        format!("{} artifacts compared byte for byte, differing: {differing:?}", a.len()),
    )
}

struct Pipeline {
    seconds: f64,
    report: slalom_cli::MetricsReport,
    train: RegressionMetrics,
    test: Option<RegressionMetrics>,
}

fn full_pipeline(dir: &Path) -> Pipeline {
    let started = Instant::now();
    let exp = Experiment::new(ExperimentConfig::default(), Some(PIPELINE_SEED), Some(dir.to_path_buf())).unwrap();
    exp.collect().unwrap();
    let exp = Experiment { out: dir.join("model"), ..exp };
    let (_, fit) = exp.train(dir).unwrap();
    let exp = Experiment { out: dir.join("run"), ..exp };
    let run = exp
        .run_trials(&dir.join("model/model.json"), &RunOptions { compare_expert: true, ..RunOptions::default() })
        .unwrap();
    Pipeline {
        seconds: started.elapsed().as_secs_f64(),
        report: run.report,
        train: fit.train,
        test: fit.test,
    }
}

fn offline_fit(p: &Pipeline) -> Outcome {
    let train = p.train.r2.unwrap_or(f64::NAN);
    let (test, test_mse) = p.test.as_ref().map_or((f64::NAN, f64::NAN), |t| (t.r2.unwrap_or(f64::NAN), t.mse));
    outcome(
        test >= 0.80 && train >= test && p.seconds < BUDGET_SECONDS,
        format!(
            "R2 train {train:.4}, test {test:.4} (need test >= 0.80, train >= test); MSE train {:.4e}, test {test_mse:.4e}; pipeline {:.0} s (limit {BUDGET_SECONDS:.0} s)",
            p.train.mse, p.seconds
        ),
    )
}

fn closed_loop(p: &Pipeline) -> Outcome {
    let c = p.report.closed_loop.as_ref().unwrap();
    let worst = c.per_trial.iter().map(|t| t.min_clearance).fold(f64::INFINITY, f64::min);
    outcome(
        c.trials == 17 && c.passed(),
        format!(
            "{} trials, {} completed, {} collisions, closest cone approach {worst:.2} m",
            c.trials, c.completed, c.collisions
        ),
    )
}

fn smoothness(p: &Pipeline) -> Outcome {
    let c = p.report.comparison.as_ref().unwrap();
    let peaks: Vec<String> = c
        .lane_changes
        .iter()
        .map(|l| format!("#{} pilot {:.3} vs expert {:.3}", l.index + 1, l.pilot, l.expert))
        .collect();
    outcome(
        c.pilot_smaller_on_any,
        format!("peak |wheel angle| (rad) per lane change: {}", peaks.join(", ")),
    )
}

fn report(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let o = catch_unwind(AssertUnwindSafe(f))
        .unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
    println!("criterion {id} [{}] {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    o.passed
}

fn main() {
    // `cargo test -- --list` and name filters: this target has a single entry.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut ok = true;
    ok &= report(4, "gradient oracle", gradient_oracle);
    ok &= report(5, "convolution oracle", conv_oracle);
    ok &= report(6, "feature invariants", feature_invariants);
    ok &= report(7, "plant checks", plant_checks);
    ok &= report(8, "determinism", determinism);

    let tmp = tempfile::tempdir().unwrap();
    let pipeline = catch_unwind(AssertUnwindSafe(|| full_pipeline(tmp.path())));
    match &pipeline {
        Ok(p) => {
            ok &= report(1, "offline fit", || offline_fit(p));
            ok &= report(2, "closed-loop campaign", || closed_loop(p));
            ok &= report(3, "smoothness vs expert", || smoothness(p));
        }
        Err(_) => {
            for (id, name) in [(1, "offline fit"), (2, "closed-loop campaign"), (3, "smoothness vs expert")] {
                ok &= report(id, name, || outcome(false, "pipeline panicked".into()));
            }
        }
    }
    if ok {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: FAILED");
        std::process::exit(1);
    }
}
