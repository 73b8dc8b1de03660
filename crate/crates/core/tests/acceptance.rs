//! Acceptance criteria 1 to 11. Runs as a plain binary so every criterion
//! prints exactly one PASS/FAIL line, whatever the outcome.

mod common;

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use crowd_core::checkpoint::{CheckpointChain, CheckpointPolicy, TaskState};
use crowd_core::config::{FleetSpec, ScenarioConfig};
use crowd_core::coordinator::{decision_trace, CoordinatorConfig, JobSpec, JobStatus};
use crowd_core::decision::{
    aras_scores, edas_scores, entropy_weights, mabac_scores, McdmMethod, Ranking, WeightVector,
};
use crowd_core::fleet::{default_fleet, sample_churn, DeviceProfile, TelemetryModel};
use crowd_core::harness::{standalone_time, Harness, RunRecord};
use crowd_core::rng::stream;
use crowd_core::scheduler::{builtin, StrategyKind, StrategyRegistry};
use crowd_core::sim::{simulate, SimSetup};
use crowd_core::tcp::{run_tcp, TcpOptions, TcpSetup};
use crowd_core::transport::{decode, encode};
use crowd_core::workloads::{SliceParams, WorkloadSpec};
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(started: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let took = started.elapsed();
    ensure(took < limit, || format!("{what} took {took:?}, limit {limit:?}"))
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

// ---------------------------------------------------------------------------
// Straight-line MCDM oracles over plain nested vectors.

fn oracle_entropy(x: &[Vec<f64>]) -> Vec<f64> {
    let m = x.len();
    let n = x[0].len();
    let k = 1.0 / (m as f64).ln();
    let mut d = vec![0.0; n];
    for j in 0..n {
        let constant = x.iter().all(|r| r[j] == x[0][j]);
        if constant {
            continue;
        }
        let mut col_sum = 0.0;
        for r in x {
            col_sum += r[j];
        }
        let mut e = 0.0;
        for r in x {
            let p = r[j] / col_sum;
            e -= k * p * p.ln();
        }
        d[j] = 1.0 - e;
    }
    let total: f64 = d.iter().sum();
    if total == 0.0 {
        return vec![1.0 / n as f64; n];
    }
    d.iter().map(|v| v / total).collect()
}

fn oracle_edas(x: &[Vec<f64>], benefit: &[bool], w: &[f64]) -> Vec<f64> {
    let m = x.len();
    let n = w.len();
    let mut av = vec![0.0; n];
    for j in 0..n {
        for r in x {
            av[j] += r[j];
        }
        av[j] /= m as f64;
    }
    let mut sp = vec![0.0; m];
    let mut sn = vec![0.0; m];
    for i in 0..m {
        for j in 0..n {
            let diff = if benefit[j] { x[i][j] - av[j] } else { av[j] - x[i][j] };
            if diff > 0.0 {
                sp[i] += w[j] * diff / av[j];
            } else {
                sn[i] += w[j] * -diff / av[j];
            }
        }
    }
    let max_sp = sp.iter().cloned().fold(0.0, f64::max);
    let max_sn = sn.iter().cloned().fold(0.0, f64::max);
    let mut out = Vec::new();
    for i in 0..m {
        let nsp = if max_sp == 0.0 { 1.0 } else { sp[i] / max_sp };
        let nsn = if max_sn == 0.0 { 1.0 } else { 1.0 - sn[i] / max_sn };
        out.push(0.5 * (nsp + nsn));
    }
    out
}

fn oracle_aras(x: &[Vec<f64>], benefit: &[bool], w: &[f64]) -> Vec<f64> {
    let n = w.len();
    let mut ext: Vec<Vec<f64>> = Vec::new();
    let mut best = vec![0.0; n];
    for j in 0..n {
        let col: Vec<f64> = x.iter().map(|r| r[j]).collect();
        best[j] = if benefit[j] {
            col.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        } else {
            col.iter().cloned().fold(f64::INFINITY, f64::min)
        };
    }
    ext.push(best);
    ext.extend(x.iter().cloned());
    for r in ext.iter_mut() {
        for j in 0..n {
            if !benefit[j] {
                r[j] = 1.0 / r[j];
            }
        }
    }
    let mut sums = vec![0.0; n];
    for r in &ext {
        for j in 0..n {
            sums[j] += r[j];
        }
    }
    let s: Vec<f64> = ext
        .iter()
        .map(|r| (0..n).map(|j| w[j] * r[j] / sums[j]).sum())
        .collect();
    s[1..].iter().map(|v| v / s[0]).collect()
}

fn oracle_mabac(x: &[Vec<f64>], benefit: &[bool], w: &[f64]) -> Vec<f64> {
    let m = x.len();
    let n = w.len();
    let mut q = vec![0.0; m];
    for j in 0..n {
        let lo = x.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
        let hi = x.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
        let v: Vec<f64> = x
            .iter()
            .map(|r| {
                let t = if hi == lo {
                    0.5
                } else if benefit[j] {
                    (r[j] - lo) / (hi - lo)
                } else {
                    (hi - r[j]) / (hi - lo)
                };
                w[j] * t + w[j]
            })
            .collect();
        let g = v.iter().product::<f64>().powf(1.0 / m as f64);
        for i in 0..m {
            q[i] += v[i] - g;
        }
    }
    q
}

fn oracle_order(scores: &[f64]) -> Vec<String> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        let tie = (scores[a] - scores[b]).abs() <= 1e-12 * scores[a].abs().max(scores[b].abs()).max(1.0);
        if tie {
            a.cmp(&b)
        } else {
            scores[b].partial_cmp(&scores[a]).unwrap()
        }
    });
    idx.into_iter().map(|i| format!("a{i}")).collect()
}

fn random_matrix(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<bool>) {
    let m = rng.random_range(2..=6);
    let n = rng.random_range(1..=6);
    let mut x: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..n).map(|_| rng.random_range(0.01..1000.0)).collect())
        .collect();
    // exercise the degenerate branches: constant columns and repeated rows
    if rng.random_bool(0.2) {
        let j = rng.random_range(0..n);
        let v = x[0][j];
        for r in x.iter_mut() {
            r[j] = v;
        }
    }
    if rng.random_bool(0.05) {
        for r in x.iter_mut() {
            for v in r.iter_mut() {
                *v = 3.0;
            }
        }
    }
    if rng.random_bool(0.2) {
        x[m - 1] = x[0].clone();
    }
    let benefit = (0..n).map(|_| rng.random_bool(0.5)).collect();
    (x, benefit)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn scores(r: &Ranking) -> Vec<f64> {
    r.scores.iter().map(|(_, s)| *s).collect()
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let (x, benefit) = random_matrix(&mut rng);
        let m = common::build(&x, &benefit);
        let w = entropy_weights(&m).map_err(|e| e.to_string())?;
        let ow = oracle_entropy(&x);
        ensure(close(w.as_slice(), &ow, 1e-9), || format!("case {case}: weights {:?} vs {ow:?}", w.as_slice()))?;

        // the scorers are checked with the entropy weights and with random ones
        let raw: Vec<f64> = (0..benefit.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let rw = WeightVector::new(raw.iter().map(|v| v / total).collect()).map_err(|e| e.to_string())?;
        for weights in [&w, &rw] {
            let wv = weights.as_slice();
            let checks = [
                ("edas", edas_scores(&m, weights), oracle_edas(&x, &benefit, wv)),
                ("aras", aras_scores(&m, weights), oracle_aras(&x, &benefit, wv)),
                ("mabac", mabac_scores(&m, weights), oracle_mabac(&x, &benefit, wv)),
            ];
            for (name, got, want) in checks {
                let got = got.map_err(|e| e.to_string())?;
                let s = scores(&got);
                for (a, b) in s.iter().zip(&want) {
                    worst = worst.max((a - b).abs());
                }
                ensure(close(&s, &want, 1e-9), || format!("case {case} {name}: {s:?} vs {want:?}"))?;
                ensure(got.order == oracle_order(&want), || format!("case {case} {name}: order {:?}", got.order))?;
            }
        }
    }
    within(started, Duration::from_secs(1), "100 oracle comparisons")?;
    Ok(format!("100 matrices, max |diff| {worst:.1e}, {:?}", started.elapsed()))
}

fn criterion_2() -> Outcome {
    let methods = [McdmMethod::Edas, McdmMethod::Aras, McdmMethod::Mabac];
    let dominance = (
        common::matrix_parts(),
        proptest::sample::select((0usize..6).collect::<Vec<_>>()),
        proptest::sample::select((0usize..6).collect::<Vec<_>>()),
        proptest::collection::vec(0.0f64..0.5, 6),
    );
    runner(1000)
        .run(&dominance, |((rows, benefit), pick, strict, gains)| {
            let b = pick % rows.len();
            let s = strict % benefit.len();
            let better: Vec<f64> = rows[b]
                .iter()
                .enumerate()
                .map(|(j, x)| {
                    let g = gains[j] + if j == s { 0.01 } else { 0.0 };
                    if benefit[j] { x * (1.0 + g) } else { x / (1.0 + g) }
                })
                .collect();
            let mut all = rows.clone();
            all.push(better);
            let m = common::build(&all, &benefit);
            let w = entropy_weights(&m).unwrap();
            for method in methods {
                let r = method.rank(&m, &w).unwrap();
                let (a, bb) = (common::position(&r, &format!("a{}", all.len() - 1)), common::position(&r, &format!("a{b}")));
                if a >= bb {
                    return Err(TestCaseError::fail(format!("{method:?} ranks dominated row first: {r:?}")));
                }
            }
            Ok(())
        })
        .map_err(|e| format!("dominance: {e}"))?;

    let scaling = (
        common::matrix_parts(),
        proptest::sample::select((0usize..6).collect::<Vec<_>>()),
        0.001f64..1000.0,
    );
    runner(1000)
        .run(&scaling, |((rows, benefit), col, c)| {
            let j = col % benefit.len();
            let scaled: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| r.iter().enumerate().map(|(k, x)| if k == j { x * c } else { *x }).collect())
                .collect();
            let (m, sm) = (common::build(&rows, &benefit), common::build(&scaled, &benefit));
            let (w, ws) = (entropy_weights(&m).unwrap(), entropy_weights(&sm).unwrap());
            if !close(w.as_slice(), ws.as_slice(), 1e-9) {
                return Err(TestCaseError::fail(format!("weights moved: {w:?} vs {ws:?}")));
            }
            for method in methods {
                if method.rank(&m, &w).unwrap().order != method.rank(&sm, &w).unwrap().order {
                    return Err(TestCaseError::fail(format!("{method:?} order changed under scaling")));
                }
            }
            Ok(())
        })
        .map_err(|e| format!("scale invariance: {e}"))?;
    Ok("1000 dominance cases, 1000 scaling cases".into())
}

fn criterion_3() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut max_visit = BTreeMap::new();
    for case in 0..500 {
        let k = [1u32, 5, 50][case % 3];
        let policy = CheckpointPolicy::every(1.0).with_threshold(k);
        let mut chain = CheckpointChain::new(case as u64, policy);
        let mut state = TaskState::default();
        let appends = rng.random_range(1..=200);
        for t in 0..appends {
            for _ in 0..rng.random_range(1..4) {
                let key = format!("v{}", rng.random_range(0..10));
                if rng.random_bool(0.15) {
                    state.vars.remove(&key);
                } else {
                    let len = rng.random_range(0..16);
                    state.vars.insert(key, (0..len).map(|_| rng.random()).collect());
                }
            }
            state.cursor += rng.random_range(0..100);
            chain.append(&state, t as f64).map_err(|e| e.to_string())?;
        }
        let (got, visited) = chain.recover_counted().map_err(|e| e.to_string())?;
        ensure(got == state, || format!("case {case}: recovered state differs"))?;
        ensure(visited <= k as usize + 1, || format!("case {case}: visited {visited} > k+1 = {}", k + 1))?;
        let mut compacted = chain.clone();
        compacted.compact(1e9).map_err(|e| e.to_string())?;
        ensure(compacted.recover().map_err(|e| e.to_string())? == state, || {
            format!("case {case}: compaction changed the state")
        })?;
        let e = max_visit.entry(k).or_insert(0);
        *e = (*e).max(visited);
    }
    within(started, Duration::from_secs(5), "500 checkpoint sequences")?;
    Ok(format!("500 sequences, max records visited per k {max_visit:?}, {:?}", started.elapsed()))
}

fn criterion_4() -> Outcome {
    let started = Instant::now();
    let workload = WorkloadSpec::monte_carlo(240_000);
    let mut clean_cache: BTreeMap<(usize, u64), Vec<u8>> = BTreeMap::new();
    let mut disconnects = 0;
    for scenario in 0..200u64 {
        let kind = StrategyKind::ALL[scenario as usize % 5];
        let seed = 1000 + scenario;
        let job = JobSpec {
            job_id: format!("churn-{scenario}"),
            workload: workload.clone(),
            task_count: 24,
            strategy: kind.name().into(),
            checkpoint: CheckpointPolicy::every(1.0),
            seed,
        };
        let mut fleet = default_fleet();
        let mut rng = stream(seed, 99);
        for p in &mut fleet {
            p.churn_rate_per_min = rng.random_range(0.5..3.0);
            p.reconnect_delay_s = (1.0, 15.0);
        }
        let churn = sample_churn(&fleet, 120.0, &mut stream(seed, 2)).map_err(|e| e.to_string())?;
        disconnects += churn.len() / 2;

        let mut setup = SimSetup::new(default_fleet(), job.clone(), builtin(kind));
        setup.churn = churn;
        let out = simulate(setup, seed).map_err(|e| e.to_string())?;
        ensure(out.status == JobStatus::Completed, || format!("scenario {scenario} ({kind}) ended {:?}", out.status))?;
        ensure(out.accepted_commits.iter().all(|&c| c == 1), || {
            format!("scenario {scenario}: accepted commits {:?}", out.accepted_commits)
        })?;
        let key = (scenario as usize % 5, seed);
        let clean = match clean_cache.get(&key) {
            Some(b) => b.clone(),
            None => {
                let out = simulate(SimSetup::new(default_fleet(), job, builtin(kind)), seed).map_err(|e| e.to_string())?;
                let b = out.result.ok_or("fault-free run failed")?.aggregate.to_bytes();
                clean_cache.insert(key, b.clone());
                b
            }
        };
        ensure(out.result.unwrap().aggregate.to_bytes() == clean, || {
            format!("scenario {scenario}: aggregate differs from the fault-free run")
        })?;
    }
    within(started, Duration::from_secs(30), "200 churn scenarios")?;
    Ok(format!("200 scenarios, {disconnects} disconnects, {:?}", started.elapsed()))
}

/// default6 with the heterogeneous background loads used for the large runs.
fn heterogeneous(trials: u64, tasks: u64, strategy: &str) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(WorkloadSpec::monte_carlo(trials), tasks, strategy);
    cfg.name = "heterogeneous".into();
    cfg.seed = 1;
    for (id, load) in [("A34", 0.05), ("A32", 0.2), ("A51", 0.3), ("E40", 0.6), ("S6 Lite", 0.1), ("A9+", 0.5)] {
        cfg.background_load.insert(id.into(), load);
    }
    cfg
}

fn once(cfg: &ScenarioConfig, strategy: &str) -> Result<RunRecord, String> {
    let h = Harness::new(cfg.clone()).map_err(|e| e.to_string())?;
    h.run_once(strategy, &cfg.checkpoint, cfg.seed, None).map_err(|e| e.to_string())
}

fn criterion_5() -> Outcome {
    let cfg = heterogeneous(1_000_000, 600, "wrr");
    let fifo = once(&cfg, "fifo")?.summary.makespan_s;
    let mut detail = format!("fifo {fifo:.1} s");
    for s in ["wrr", "edas", "aras", "mabac"] {
        let m = once(&cfg, s)?.summary.makespan_s;
        let red = (fifo - m) / fifo * 100.0;
        detail.push_str(&format!(", {s} {m:.1} s ({red:.1}%)"));
        if s == "wrr" {
            ensure((30.0..=70.0).contains(&red), || format!("wrr reduction {red:.1}% outside [30, 70]: {detail}"))?;
        } else {
            ensure(m < fifo, || format!("{s} does not beat fifo: {detail}"))?;
        }
    }
    Ok(detail)
}

fn criterion_6() -> Outcome {
    let mut speedups = Vec::new();
    for trials in [10_000u64, 100_000, 1_000_000] {
        let mut cfg = ScenarioConfig::new(WorkloadSpec::monte_carlo(trials), 60, "wrr");
        cfg.seed = 1;
        speedups.push(once(&cfg, "wrr")?.summary.speedup);
    }
    let text = format!("speedups {:.2} / {:.2} / {:.2}", speedups[0], speedups[1], speedups[2]);
    ensure(speedups.windows(2).all(|w| w[1] > w[0]), || format!("not increasing: {text}"))?;
    ensure(speedups[2] >= 3.0, || format!("largest below 3x: {text}"))?;
    Ok(text)
}

fn criterion_7() -> Outcome {
    let mut cfg = ScenarioConfig::new(WorkloadSpec::monte_carlo(10_000), 1, "fifo");
    cfg.fleet = FleetSpec::Profiles(vec![DeviceProfile::new("A34", 8, 2.0, 6.0)]);
    cfg.repetitions = 10;
    cfg.seed = 1;
    let report = Harness::new(cfg)
        .map_err(|e| e.to_string())?
        .sweep_checkpoint(&[5.0, 2.0, 0.5], None)
        .map_err(|e| e.to_string())?;
    let (o5, o2, o05) = (
        report.mean_overhead(5.0).unwrap(),
        report.mean_overhead(2.0).unwrap(),
        report.mean_overhead(0.5).unwrap(),
    );
    let ratio = o05 / o5;
    let text = format!("overhead 5 s {o5:.3}, 2 s {o2:.3}, 0.5 s {o05:.3}, ratio {ratio:.3}");
    ensure(o5 > 0.0 && ratio <= 1.5, || text.clone())?;
    Ok(text)
}

fn criterion_8() -> Outcome {
    let mut homo = ScenarioConfig::new(WorkloadSpec::monte_carlo(120_000), 60, "fifo");
    homo.fleet = FleetSpec::Profiles((0..6).map(|i| DeviceProfile::new(format!("d{i}"), 8, 2.0, 4.0)).collect());
    homo.seed = 1;
    let j_homo = once(&homo, "fifo")?.summary.fairness;
    ensure((j_homo - 1.0).abs() <= 1e-9, || format!("homogeneous fifo J = {j_homo}"))?;

    let het = heterogeneous(1_000_000, 600, "wrr");
    let rec = once(&het, "wrr")?;
    let j = rec.summary.fairness;
    let text = format!("homogeneous J {j_homo:.9}, heterogeneous wrr J {j:.3} (tasks {:?})", rec.result().completed_counts());
    ensure(j >= 0.85, || text.clone())?;
    Ok(text)
}

fn criterion_9() -> Outcome {
    let fleet: Vec<DeviceProfile> = default_fleet().into_iter().take(5).collect();
    let mut cfg = ScenarioConfig::new(WorkloadSpec::tile_map(200, 0.1), 200, "wrr");
    cfg.fleet = FleetSpec::Profiles(fleet.clone());
    cfg.seed = 1;
    let item_s = fleet
        .iter()
        .map(|p| standalone_time(p, &cfg) / 200.0)
        .fold(f64::INFINITY, f64::min);
    let dispatch = CoordinatorConfig::default().dispatch_overhead_s;
    ensure(item_s < dispatch, || format!("item time {item_s} is not below dispatch overhead {dispatch}"))?;
    let rec = once(&cfg, "wrr")?;
    let single = Harness::new(cfg).map_err(|e| e.to_string())?.baseline().map_err(|e| e.to_string())?;
    let text = format!(
        "item {:.1} ms < dispatch {:.0} ms; 5 workers {:.2} s vs single {} {:.2} s",
        item_s * 1e3,
        dispatch * 1e3,
        rec.summary.makespan_s,
        single.device,
        single.makespan_s
    );
    ensure(rec.summary.makespan_s > single.makespan_s, || text.clone())?;
    Ok(text)
}

fn criterion_10() -> Outcome {
    let mut cfg = ScenarioConfig::new(WorkloadSpec::monte_carlo(1_000_000), 60, "wrr");
    cfg.seed = 10;
    let a = once(&cfg, "wrr")?;
    let b = once(&cfg, "wrr")?;
    let est = a.result().aggregate.estimate().unwrap();
    ensure(a.result().aggregate == b.result().aggregate, || "estimate not seed-stable".into())?;
    let err = (est - std::f64::consts::E).abs();
    ensure(err < 0.01, || format!("estimate {est} is {err} from e"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let w = WorkloadSpec::monte_carlo(1);
    for cut in 0..50 {
        let len = rng.random_range(1..5000);
        let params = SliceParams::new("resume", rng.random(), rng.random_range(0..100), 0, len);
        let straight = w.run_to_end(&params).map_err(|e| e.to_string())?;
        let at = rng.random_range(0..=len);
        let (mid, _) = w.run_slice(&w.init(&params), at).map_err(|e| e.to_string())?;
        let restored: TaskState = serde_json::from_str(&serde_json::to_string(&mid).unwrap()).unwrap();
        let (end, _) = w.run_slice(&restored, u64::MAX).map_err(|e| e.to_string())?;
        ensure(w.finalize(&end).map_err(|e| e.to_string())? == straight, || format!("cut {cut} at {at}/{len} diverged"))?;
    }
    Ok(format!("e_hat {est:.5} (error {err:.5}), 50 resumption cuts identical"))
}

fn criterion_11() -> Outcome {
    runner(10_000)
        .run(&common::message(), |msg| {
            let back = decode(&encode(&msg)).map_err(|e| TestCaseError::fail(e.to_string()))?;
            if back != msg {
                return Err(TestCaseError::fail(format!("{msg:?} came back as {back:?}")));
            }
            Ok(())
        })
        .map_err(|e| format!("wire round trip: {e}"))?;

    let job = JobSpec {
        job_id: "parity".into(),
        workload: WorkloadSpec::monte_carlo(120_000),
        task_count: 24,
        strategy: "fifo".into(),
        checkpoint: CheckpointPolicy::disabled(),
        seed: 11,
    };
    let sim = simulate(SimSetup::new(default_fleet(), job.clone(), builtin(StrategyKind::Fifo)), 11)
        .map_err(|e| e.to_string())?;
    let setup = TcpSetup {
        profiles: default_fleet(),
        job,
        strategy: StrategyRegistry::default().create("fifo").unwrap(),
        coordinator: CoordinatorConfig::default(),
        telemetry: TelemetryModel::default(),
        unit_scale: 1.0,
    };
    let opts = TcpOptions { time_scale: 0.05, ..TcpOptions::default() };
    let tcp = run_tcp(setup, 11, &opts).map_err(|e| e.to_string())?;
    ensure(tcp.status == JobStatus::Completed, || format!("tcp run ended {:?}", tcp.status))?;
    let (a, b) = (decision_trace(&sim.trace), decision_trace(&tcp.trace));
    ensure(a == b, || format!("decision traces differ: sim {} entries, tcp {} entries", a.len(), b.len()))?;
    ensure(
        sim.result.unwrap().aggregate == tcp.result.unwrap().aggregate,
        || "aggregates differ".into(),
    )?;
    Ok(format!("10000 messages round-trip; sim and tcp traces agree on {} decisions", a.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("MCDM oracle equivalence", criterion_1),
        ("dominance and scale invariance", criterion_2),
        ("checkpoint round trip", criterion_3),
        ("exactly-once under churn", criterion_4),
        ("scheduling trend", criterion_5),
        ("speedup growth", criterion_6),
        ("checkpoint overhead bounded", criterion_7),
        ("fairness", criterion_8),
        ("coordination overhead caveat", criterion_9),
        ("Monte Carlo correctness", criterion_10),
        ("wire round trip and sim/tcp parity", criterion_11),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
