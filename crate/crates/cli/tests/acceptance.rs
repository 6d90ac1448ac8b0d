//! Acceptance suite. Each test prints one PASS/FAIL line, then asserts.

#[path = "../../core/tests/support/mock_chat.rs"]
mod mock_chat;

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use apex_bench::avoid::{
    aggregate_avoid, evaluate_moves, narrow_corridor_fixture, run_avoid_episode, run_avoid_world, AvoidConfig, Difficulty,
};
use apex_bench::physqa::{
    aggregate_suite, answer_problem, generate_problems, grade_response, oracle_answer, AnswerKey, Problem, TaskType, Truth,
};
use apex_bench::tetris::{aggregate_tetris, run_tetris_episode, TetrisCaps};
use apex_cli::persist::strip_wallclock_jsonl;
use apex_cli::run_cli;
use apex_core::decision::{
    assemble_prompt, decide, make_backend, ActionPlan, BackendConfig, TemplateId, TetrisMove, API_KEY_ENV,
};
use apex_core::physics::{
    linear_closed_form, projectile_closed_form, resolve_elastic_componentwise, resolve_elastic_normal,
    predict_sphere_collision, SimConfig, STANDARD_GRAVITY,
};
use apex_core::rollout::Direction;
use apex_core::salience::{score_edges, select_top_k, SalienceConfig, SalienceScore};
use apex_core::scenegraph::{build_scene_graph, diff_graph, ObjectKind, ObjectState, WorldState};
use apex_core::Vec3;
use mock_chat::{Behavior, MockChat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{verdict} criterion {n}: {detail}");
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn key_number(key: &AnswerKey, name: &str) -> f64 {
    match key.get(name) {
        Some(Truth::Number(x)) => x,
        other => panic!("{name}: {other:?}"),
    }
}

#[test]
fn criterion_01_golden_oracle_values() {
    let start = Instant::now();
    let mut misses = Vec::new();
    let mut check = |label: &str, got: f64, want: f64| {
        if (got - want).abs() > 0.01 {
            misses.push(format!("{label} {got:.4} vs {want}"));
        }
    };

    let lin = linear_closed_form(Vec3::new(13.15, 1.48, 6.23), Vec3::new(-2.77, 2.36, 1.77), 9.03);
    for (name, want) in [
        ("velocity_x", -11.86),
        ("velocity_y", 22.79),
        ("velocity_z", 22.21),
        ("displacement_x", 5.81),
        ("displacement_y", 109.58),
        ("displacement_z", 128.42),
    ] {
        check(name, lin.get(name).unwrap(), want);
    }

    let proj = projectile_closed_form(Vec3::new(7.68, 18.83, 11.81), STANDARD_GRAVITY).unwrap();
    for (name, want) in [("flight_time", 2.41), ("maximum_height", 7.11), ("range_x", 18.49), ("range_y", 45.34)] {
        check(name, proj.get(name).unwrap(), want);
    }

    let multi = Problem::new(
        0,
        TaskType::Multi,
        params(&[
            ("A_vx", 11.41),
            ("A_vy", 1.01),
            ("A_vz", 6.45),
            ("A_ax", -0.7),
            ("A_ay", 0.8),
            ("A_az", 1.55),
            ("A_t", 5.18),
            ("B_r", 2.49),
            ("B_omega", 1.17),
            ("B_t", 5.26),
            ("C_vx", 21.47),
            ("C_vy", 12.09),
            ("C_vz", 21.6),
            ("C_t", 6.57),
        ]),
    )
    .unwrap();
    let key = oracle_answer(&multi, STANDARD_GRAVITY).unwrap();
    for (name, want) in [("x_A", 49.71), ("y_A", 15.96), ("z_A", 54.21), ("x_C", 141.06), ("y_C", 79.43)] {
        check(name, key_number(&key, name), want);
    }
    let z_c_any = key.get("z_C") == Some(Truth::Any);

    let (v1, v2) =
        resolve_elastic_componentwise(8.4, Vec3::new(1.999, 1.779, 2.108), 5.91, Vec3::new(-1.273, -1.133, -1.342));
    for (name, got, want) in [
        ("vel_1_x", v1.x, -0.70),
        ("vel_1_y", v1.y, -0.63),
        ("vel_1_z", v1.z, -0.74),
        ("vel_2_x", v2.x, 2.57),
        ("vel_2_y", v2.y, 2.29),
        ("vel_2_z", v2.z, 2.71),
    ] {
        check(name, got, want);
    }
    let collision = Problem::new(
        1,
        TaskType::Collision,
        params(&[
            ("m1", 8.4),
            ("m2", 5.91),
            ("p1x", -2.8817),
            ("p1y", -0.4259),
            ("p1z", -2.0413),
            ("p2x", -0.4778),
            ("p2y", 1.7133),
            ("p2z", 0.4933),
            ("v1x", 1.999),
            ("v1y", 1.779),
            ("v1z", 2.108),
            ("v2x", -1.273),
            ("v2y", -1.133),
            ("v2z", -1.342),
            ("radius", 0.5),
        ]),
    )
    .unwrap();
    let ck = oracle_answer(&collision, STANDARD_GRAVITY).unwrap();
    let collides = ck.get("will_collide") == Some(Truth::Bool(true));
    check("key vel_1_x", key_number(&ck, "vel_1_x"), -0.70);
    check("key vel_2_z", key_number(&ck, "vel_2_z"), 2.71);

    let elapsed = start.elapsed();
    let ok = misses.is_empty() && z_c_any && collides && elapsed < Duration::from_secs(1);
    report(1, ok, &format!("misses {misses:?}, z_C any {z_c_any}, collides {collides}, {elapsed:?}"));
    assert!(ok);
}

fn suite_accuracy(task: TaskType, dt: f64, seeds: &[u64]) -> f64 {
    let sim = SimConfig::default().with_dt(dt);
    let records: Vec<_> = seeds
        .iter()
        .flat_map(|&s| generate_problems(task, 25, s).unwrap())
        .map(|p| answer_problem(&p, &sim, None, 0.05).unwrap().record)
        .collect();
    aggregate_suite(&records).unwrap().accuracy
}

#[test]
fn criterion_02_dt_trend() {
    let start = Instant::now();
    let seeds = [0, 1, 2];
    let dts = [0.001, 0.005, 0.01];
    let mut acc: BTreeMap<(TaskType, usize), f64> = BTreeMap::new();
    for task in TaskType::ALL {
        for (i, &dt) in dts.iter().enumerate() {
            acc.insert((task, i), suite_accuracy(task, dt, &seeds));
        }
    }
    let a = |t: TaskType, i: usize| acc[&(t, i)];
    let mut failed = Vec::new();
    for i in 0..3 {
        for t in [TaskType::Linear, TaskType::Circular, TaskType::Collision] {
            if a(t, i) < 90.0 {
                failed.push(format!("{t} at dt={} is {:.2}% (< 90)", dts[i], a(t, i)));
            }
        }
    }
    if a(TaskType::Projectile, 0) < 85.0 {
        failed.push(format!("projectile at dt=0.001 is {:.2}% (< 85)", a(TaskType::Projectile, 0)));
    }
    if a(TaskType::Projectile, 2) > 60.0 {
        failed.push(format!("projectile at dt=0.01 is {:.2}% (> 60)", a(TaskType::Projectile, 2)));
    }
    for (i, target) in [97.33, 90.67, 80.00].into_iter().enumerate() {
        if (a(TaskType::Multi, i) - target).abs() > 10.0 {
            failed.push(format!("multi at dt={} is {:.2}% (target {target} +/- 10)", dts[i], a(TaskType::Multi, i)));
        }
    }
    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(120) {
        failed.push(format!("took {elapsed:?}"));
    }
    let table: Vec<String> = TaskType::ALL
        .iter()
        .map(|&t| format!("{t} {:.1}/{:.1}/{:.1}", a(t, 0), a(t, 1), a(t, 2)))
        .collect();
    let ok = failed.is_empty();
    report(2, ok, &format!("[{}] failing clauses: {failed:?}", table.join(", ")));
    assert!(ok, "{failed:?}");
}

#[test]
fn criterion_03_self_grading_identity() {
    let mut bad = Vec::new();
    for task in TaskType::ALL {
        for seed in [0, 1, 2] {
            let records: Vec<_> = generate_problems(task, 25, seed)
                .unwrap()
                .iter()
                .map(|p| {
                    let key = oracle_answer(p, STANDARD_GRAVITY).unwrap();
                    grade_response(&key.as_answer(), &key, 0.05)
                })
                .collect();
            let m = aggregate_suite(&records).unwrap();
            if m.accuracy != 100.0 || m.mse.unwrap_or(0.0) != 0.0 || m.numerical_validity != 100.0 {
                bad.push(format!("{task}/{seed}: {m:?}"));
            }
        }
    }
    let ok = bad.is_empty();
    report(3, ok, &format!("15 suites, deviations {bad:?}"));
    assert!(ok);
}

fn rand_vec(rng: &mut ChaCha8Rng, r: f64) -> Vec3<f64> {
    Vec3::new(rng.gen_range(-r..r), rng.gen_range(-r..r), rng.gen_range(-r..r))
}

#[test]
fn criterion_04_conservation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_p, mut worst_e) = (0.0f64, 0.0f64);
    let rel = |a: f64, b: f64, scale: f64| (a - b).abs() / scale.max(1e-12);
    for i in 0..10_000 {
        let m1 = rng.gen_range(0.1..10.0);
        let m2 = rng.gen_range(0.1..10.0);
        let v1 = rand_vec(&mut rng, 20.0);
        let v2 = rand_vec(&mut rng, 20.0);
        let (u1, u2) = if i % 2 == 0 {
            resolve_elastic_componentwise(m1, v1, m2, v2)
        } else {
            let n = rand_vec(&mut rng, 1.0).normalized().unwrap_or(Vec3::new(1.0, 0.0, 0.0));
            let a = ObjectState::at_rest("a", ObjectKind::Generic, Vec3::zero()).with_velocity(v1).with_mass(m1).with_radius(0.5);
            let b = ObjectState::at_rest("b", ObjectKind::Generic, n * 0.9).with_velocity(v2).with_mass(m2).with_radius(0.5);
            resolve_elastic_normal(&a, &b).unwrap()
        };
        let p0 = v1 * m1 + v2 * m2;
        let p1 = u1 * m1 + u2 * m2;
        let scale = (v1 * m1).norm() + (v2 * m2).norm();
        worst_p = worst_p.max(rel(p0.x, p1.x, scale)).max(rel(p0.y, p1.y, scale)).max(rel(p0.z, p1.z, scale));
        let e0 = 0.5 * m1 * v1.norm_squared() + 0.5 * m2 * v2.norm_squared();
        let e1 = 0.5 * m1 * u1.norm_squared() + 0.5 * m2 * u2.norm_squared();
        worst_e = worst_e.max(rel(e0, e1, e0));
    }
    let ok = worst_p <= 1e-9 && worst_e <= 1e-6;
    report(4, ok, &format!("10000 resolutions, worst momentum {worst_p:.2e}, worst energy {worst_e:.2e}"));
    assert!(ok);
}

/// First sample time on a 1e-4 s grid at which the spheres touch.
fn brute_contact(a: &ObjectState<f64>, b: &ObjectState<f64>, horizon: f64) -> Option<f64> {
    let reach = a.radius + b.radius;
    let steps = (horizon / 1e-4).round() as u64;
    (0..=steps).map(|k| k as f64 * 1e-4).find(|&t| {
        let pa = a.position + a.velocity * t;
        let pb = b.position + b.velocity * t;
        pa.distance(pb) <= reach
    })
}

#[test]
fn criterion_05_collision_predictor() {
    let start = Instant::now();
    let horizon = 10.0;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut agree, mut worst_toi, mut both) = (0usize, 0.0f64, 0usize);
    for i in 0..1000 {
        let pa = rand_vec(&mut rng, 5.0);
        let pb = rand_vec(&mut rng, 5.0);
        let va = rand_vec(&mut rng, 2.0);
        let vb = if i % 2 == 0 {
            rand_vec(&mut rng, 2.0)
        } else {
            va + (pa - pb) * rng.gen_range(0.1..1.0) + rand_vec(&mut rng, 0.3)
        };
        let r = rng.gen_range(0.2..1.0);
        let a = ObjectState::at_rest("a", ObjectKind::Generic, pa).with_velocity(va).with_radius(r);
        let b = ObjectState::at_rest("b", ObjectKind::Generic, pb).with_velocity(vb).with_radius(r);
        let report = predict_sphere_collision(&a, &b);
        let predicted = report.time_of_impact.filter(|t| report.will_collide && *t <= horizon);
        let brute = brute_contact(&a, &b, horizon);
        if predicted.is_some() == brute.is_some() {
            agree += 1;
        }
        if let (Some(p), Some(q)) = (predicted, brute) {
            both += 1;
            worst_toi = worst_toi.max((p - q).abs());
        }
    }
    let elapsed = start.elapsed();
    let rate = agree as f64 / 10.0;
    let ok = rate >= 99.0 && worst_toi <= 2e-4 && elapsed < Duration::from_secs(60);
    report(5, ok, &format!("agreement {rate:.1}%, {both} colliding, worst toi error {worst_toi:.2e} s, {elapsed:?}"));
    assert!(ok);
}

#[test]
fn criterion_06_tetris_scripted() {
    let caps = TetrisCaps::default();
    let run = |cfg: &BackendConfig| {
        let eps: Vec<_> = (0..5)
            .map(|s| {
                let mut b = make_backend(cfg).unwrap();
                run_tetris_episode(b.as_mut(), s, &caps, false)
            })
            .collect();
        let peak = eps.iter().map(|e| e.metrics.max_height).min().unwrap();
        (aggregate_tetris(&eps).unwrap(), peak)
    };
    let (apex, _) = run(&BackendConfig::scripted());
    let (down, down_min_peak) = run(&BackendConfig::fixed(r#"[{"move": "down", "times": 1}]"#));
    let ok = apex.final_score >= 100.0
        && apex.max_height <= 8.0
        && apex.holes <= 6.0
        && apex.bumpiness <= 10.0
        && down.final_score == 0.0
        && down_min_peak >= 12;
    report(
        6,
        ok,
        &format!(
            "scripted score {:.1} height {:.1} holes {:.1} bumpiness {:.1}; always-down score {:.1}, lowest peak {}",
            apex.final_score, apex.max_height, apex.holes, apex.bumpiness, down.final_score, down_min_peak
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_07_avoidance_scripted() {
    let cfg = AvoidConfig::default();
    let metrics = |d: Difficulty| {
        let recs: Vec<_> = (0..5)
            .map(|s| {
                let mut b = make_backend(&BackendConfig::scripted()).unwrap();
                run_avoid_episode(b.as_mut(), d, s, &cfg).unwrap()
            })
            .collect();
        aggregate_avoid(&recs).unwrap()
    };
    let simple = metrics(Difficulty::Simple);
    let medium = metrics(Difficulty::Medium);
    let hard = metrics(Difficulty::Hard);

    let fixture = narrow_corridor_fixture();
    let outcomes = evaluate_moves(&fixture, &cfg).unwrap();
    let west = outcomes.iter().find(|o| o.action.label() == "W").unwrap();
    let short = AvoidConfig { horizon: 1.0, ..cfg.clone() };
    let mut fs = make_backend(&BackendConfig::first_safe()).unwrap();
    let rec = run_avoid_world(fs.as_mut(), fixture, Difficulty::Simple, 0, &short).unwrap();
    let chosen = rec.log[0].chosen;

    let ok = simple.cfr == 100.0
        && (simple.ast - 10.0).abs() < 1e-9
        && hard.cfr >= 40.0
        && simple.iar == 0.0
        && medium.iar == 0.0
        && hard.iar == 0.0
        && chosen == Some(Direction::W)
        && (west.min_obstacle_distance - 0.54).abs() < 0.005;
    report(
        7,
        ok,
        &format!(
            "simple CFR {:.0}% AST {:.2}; medium CFR {:.0}%; hard CFR {:.0}%; IAR {:.1}/{:.1}/{:.1}; first_safe chose {:?} with clearance {:.3} m",
            simple.cfr, simple.ast, medium.cfr, hard.cfr, simple.iar, medium.iar, hard.iar, chosen, west.min_obstacle_distance
        ),
    );
    assert!(ok);
}

fn cli_run(args: &[&str]) -> i32 {
    run_cli(std::iter::once("apex").chain(args.iter().copied()))
}

#[test]
fn criterion_08_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let runs: [(&str, Vec<&str>); 6] = [
        ("physqa", vec!["physqa", "run", "--type", "all", "--n", "10", "--seed", "3", "--dt", "0.005"]),
        ("dt", vec!["ablate", "dt", "--type", "projectile", "multi", "--n", "5", "--dt", "0.001", "0.01"]),
        ("tetris", vec!["tetris", "run", "--seeds", "3"]),
        ("avoid", vec!["avoid", "run", "--difficulty", "all", "--seeds", "2"]),
        ("topk", vec!["ablate", "topk", "--k", "1", "2", "--difficulty", "hard", "--seeds", "2"]),
        ("avoid_csv", vec!["avoid", "run", "--seeds", "2", "--format", "csv"]),
    ];
    let mut mismatched = Vec::new();
    let mut codes = Vec::new();
    for (name, args) in &runs {
        let mut outputs = Vec::new();
        let path = dir.path().join(format!("{name}.out"));
        for _ in 0..2 {
            let mut full = args.clone();
            let p = path.to_str().unwrap().to_string();
            full.push("--out");
            full.push(&p);
            codes.push(cli_run(&full));
            outputs.push(std::fs::read_to_string(&path).unwrap_or_default());
        }
        if outputs[0].is_empty() || strip_wallclock_jsonl(&outputs[0]) != strip_wallclock_jsonl(&outputs[1]) {
            mismatched.push(*name);
        }
    }
    let ok = mismatched.is_empty() && codes.iter().all(|c| *c == 0);
    report(8, ok, &format!("{} configurations run twice, exit codes {codes:?}, mismatched {mismatched:?}", runs.len()));
    assert!(ok);
}

fn remote_config(server: &MockChat, timeout_s: f64) -> BackendConfig {
    let mut cfg = BackendConfig::remote(server.base_url.clone(), "mock-model");
    cfg.timeout_s = timeout_s;
    cfg.retries = 1;
    cfg.backoff_ms = 10;
    cfg
}

#[test]
fn criterion_09_remote_plumbing() {
    std::env::set_var(API_KEY_ENV, "acceptance-key");

    let echo = MockChat::start(Behavior::Reply(r#"[{"move": "left", "times": 2}, {"move": "down"}]"#.into()));
    let ctx: BTreeMap<String, String> = [("state".to_string(), "0 0\n0 0".to_string())].into_iter().collect();
    let bundle = assemble_prompt(TemplateId::Tetris, &ctx, "", "- r0 c0: lines cleared 0, holes 0, bumpiness 0, max height 2").unwrap();
    let mut b = make_backend(&remote_config(&echo, 2.0)).unwrap();
    let d = decide(b.as_mut(), &bundle, &[]);
    let round_trip = matches!(&d.plan, Ok(ActionPlan::Tetris(steps)) if steps.len() == 2 && steps[0].mv == TetrisMove::Left && steps[0].times == 2);

    let cfg = AvoidConfig { horizon: 2.0, ..AvoidConfig::default() };
    let episode = |behavior: Behavior, timeout_s: f64| {
        let server = MockChat::start(behavior);
        let mut b = make_backend(&remote_config(&server, timeout_s)).unwrap();
        let rec = run_avoid_world(b.as_mut(), narrow_corridor_fixture(), Difficulty::Simple, 0, &cfg).unwrap();
        let handled = rec.decisions == 2
            && rec.invalid_actions == 2
            && rec.log.iter().all(|d| d.error.is_some() && d.chosen.is_none() && !d.valid);
        (handled, server.hits())
    };
    let (timeout_ok, timeout_hits) = episode(Behavior::Hang, 0.2);
    let (exhaust_ok, exhaust_hits) = episode(Behavior::Drop, 2.0);

    let ok = round_trip && timeout_ok && exhaust_ok;
    report(
        9,
        ok,
        &format!(
            "round trip {round_trip}; timeout episode handled {timeout_ok} ({timeout_hits} requests); retry exhaustion handled {exhaust_ok} ({exhaust_hits} requests)"
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_10_salience_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut rescale_bad, mut full_bad) = (0usize, 0usize);
    for _ in 0..1000 {
        let n = rng.gen_range(2..8);
        let objs: Vec<_> = (0..n)
            .map(|i| {
                ObjectState::at_rest(format!("o{i}"), ObjectKind::Generic, rand_vec(&mut rng, 10.0))
                    .with_velocity(rand_vec(&mut rng, 3.0))
                    .with_radius(rng.gen_range(0.0..1.0))
            })
            .collect();
        let prev: Vec<_> = objs.iter().map(|o| ObjectState { position: o.position - o.velocity, ..o.clone() }).collect();
        let g0 = build_scene_graph(&prev, 0.0).unwrap();
        let g1 = build_scene_graph(&objs, 1.0).unwrap();
        let world = WorldState::new(1.0, objs);
        let scores = score_edges(&diff_graph(&g0, &g1).unwrap(), &world, &SalienceConfig::default());
        let c = rng.gen_range(0.01..100.0);
        let scaled: Vec<_> = scores.iter().map(|s| SalienceScore { edge: s.edge.clone(), score: s.score * c }).collect();
        let k = rng.gen_range(1..=scores.len());
        let pick = |s: &[SalienceScore<f64>], k: usize| -> Vec<_> {
            select_top_k(s, k).unwrap().edges.into_iter().map(|e| e.edge).collect()
        };
        if pick(&scores, k) != pick(&scaled, k) {
            rescale_bad += 1;
        }
        let mut all = pick(&scores, scores.len());
        all.sort();
        let mut expected: Vec<_> = g1.edges.iter().map(|e| e.key.clone()).collect();
        expected.sort();
        if all != expected {
            full_bad += 1;
        }
    }
    let ok = rescale_bad == 0 && full_bad == 0;
    report(10, ok, &format!("1000 graphs, rescaling changed {rescale_bad} selections, k=|E| dropped edges in {full_bad}"));
    assert!(ok);
}
