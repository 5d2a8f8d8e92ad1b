//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semsentry::commands::{cmd_eval, cmd_gen, cmd_monitor, CommonArgs, EvalArgs, GenArgs, MonitorArgs};
use semsentry_core::baselines::{calibrate, fit_gmm, fit_pca, GaussianMixtureModel, GmmFitOptions, ScoreKind};
use semsentry_core::describer::VocabularyCatalog;
use semsentry_core::episodes::{read_episodes, read_verdicts, write_episodes, write_verdicts};
use semsentry_core::eval::{interval_metrics, Column, Counts, IntervalMetrics, ReferenceTables};
use semsentry_core::monitor::{
    parse_verdict, summarize_probe, synthesize_verdict, Backend, Monitor, ParseError, PromptTemplate, RemoteBackend,
    RemoteConfig, ResponseStyle, RuleOracle, RuleOracleConfig, SamplerConfig,
};
use semsentry_core::{
    AnomalyKind, Classification, Detection, Episode, Frame, FrameVerdict, MonitorVerdict, ScenarioClass, TaskOutcome,
    VisibilityInterval,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// gen -> monitor(oracle) -> interval metrics over a generator fixture.
fn oracle_run(config: &str, dir: &Path) -> Result<(IntervalMetrics, Duration), String> {
    let start = Instant::now();
    let episodes = dir.join("episodes.jsonl");
    let verdicts = dir.join("verdicts.jsonl");
    cmd_gen(&GenArgs { config: fixture(config), out: episodes.clone(), seed: None }).map_err(s)?;
    cmd_monitor(&MonitorArgs {
        common: CommonArgs { config: None, episodes: Some(episodes.clone()) },
        backend: Default::default(),
        out: Some(verdicts.clone()),
        stride: None,
    })
    .map_err(s)?;
    let eps = read_episodes(&episodes).map_err(s)?;
    let vs = read_verdicts(&verdicts).map_err(s)?;
    let metrics = interval_metrics(&eps, &vs).map_err(s)?;
    Ok((metrics, start.elapsed()))
}

fn criterion_1() -> Outcome {
    let dir = tempfile::tempdir().map_err(s)?;
    let (m, elapsed) = oracle_run("table1_gen.toml", dir.path())?;
    let per_class: Vec<u64> = [ScenarioClass::AnomalousStop, ScenarioClass::AnomalousLight, ScenarioClass::StrangeObject]
        .iter()
        .map(|c| m.column(Column::Class(*c)).anomalies())
        .collect();
    let total = m.total();
    ensure(per_class == [16, 19, 15], || format!("anomalies per class {per_class:?}"))?;
    ensure(total.anomalies() == 50, || format!("{} anomalies", total.anomalies()))?;
    ensure(total.observations() == 1585, || format!("{} nominal observations", total.observations()))?;
    ensure(total.tpr() == Some(1.0) && total.fnr() == Some(0.0), || format!("TPR {:?} FNR {:?}", total.tpr(), total.fnr()))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("50 anomalies, 1585 observations, TPR 1.0, FNR 0.0 in {:.2}s", elapsed.as_secs_f64()))
}

fn criterion_2() -> Outcome {
    let clean_dir = tempfile::tempdir().map_err(s)?;
    let noisy_dir = tempfile::tempdir().map_err(s)?;
    let (clean, _) = oracle_run("table1_gen.toml", clean_dir.path())?;
    let (noisy, _) = oracle_run("table1_noisy_gen.toml", noisy_dir.path())?;
    let (c, n) = (clean.total(), noisy.total());
    let (ctpr, cfpr) = (c.tpr().ok_or("no clean TPR")?, c.fpr().ok_or("no clean FPR")?);
    let (ntpr, nfpr) = (n.tpr().ok_or("no noisy TPR")?, n.fpr().ok_or("no noisy FPR")?);
    ensure(ntpr < 1.0, || format!("noisy TPR {ntpr}"))?;
    ensure(nfpr > cfpr, || format!("noisy FPR {nfpr} vs clean {cfpr}"))?;
    Ok(format!("TPR {ctpr:.3} -> {ntpr:.3}, FPR {cfpr:.3} -> {nfpr:.3}"))
}

#[derive(Clone, Copy, PartialEq)]
enum J {
    N,
    A,
    W,
}

/// Per-timestep walk: membership from explicit interval sets.
fn brute_force(len: u64, intervals: &[(u64, u64)], verdicts: &BTreeMap<u64, J>) -> Counts {
    let mut c = Counts::default();
    let mut covered = BTreeSet::new();
    for &(a, b) in intervals {
        let mut hit = false;
        let mut parsed = false;
        for t in a..=b {
            covered.insert(t);
            match verdicts.get(&t) {
                Some(J::A) => {
                    hit = true;
                    parsed = true
                }
                Some(J::N) => parsed = true,
                Some(J::W) => c.unparseable_in_view += 1,
                None => {}
            }
        }
        if hit {
            c.tp += 1
        } else if parsed {
            c.fn_ += 1
        } else {
            c.skipped_intervals += 1
        }
    }
    for t in 0..len {
        if covered.contains(&t) {
            continue;
        }
        match verdicts.get(&t) {
            Some(J::A) => c.fp += 1,
            Some(J::N) => c.tn += 1,
            Some(J::W) => c.unparseable_out_of_view += 1,
            None => {}
        }
    }
    c
}

fn frame_verdict(id: &str, t: u64, j: J) -> FrameVerdict {
    match j {
        J::W => FrameVerdict::Unparseable { episode_id: id.into(), timestep: t, rationale: String::new(), reason: "x".into() },
        _ => FrameVerdict::Ok(MonitorVerdict {
            episode_id: id.into(),
            timestep: t,
            per_object: vec![],
            overall: if j == J::A { Classification::Anomaly } else { Classification::Normal },
            rationale: String::new(),
        }),
    }
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let instances = 1000;
    for case in 0..instances {
        let len = rng.gen_range(1..60u64);
        let mut intervals = Vec::new();
        let mut t = rng.gen_range(0..4u64);
        while t < len && intervals.len() < 4 {
            if rng.gen_bool(0.5) {
                let end = (t + rng.gen_range(0..8)).min(len - 1);
                intervals.push((t, end));
                t = end + 2;
            }
            t += rng.gen_range(1..10);
        }
        let mut verdicts = BTreeMap::new();
        for t in 0..len {
            match rng.gen_range(0..10) {
                0..=1 => {}
                2..=5 => drop(verdicts.insert(t, J::N)),
                6..=8 => drop(verdicts.insert(t, J::A)),
                _ => drop(verdicts.insert(t, J::W)),
            }
        }
        let class = if intervals.is_empty() { ScenarioClass::NominalStop } else { ScenarioClass::AnomalousStop };
        let id = format!("case-{case}");
        let episode = Episode::builder(&id, class)
            .frames((0..len).map(|t| Frame::at(t, vec![])).collect())
            .intervals(intervals.iter().map(|&(a, b)| VisibilityInterval::new(a, b, AnomalyKind::StopSign).unwrap()).collect())
            .build()
            .map_err(s)?;
        let vs: Vec<FrameVerdict> = verdicts.iter().map(|(t, j)| frame_verdict(&id, *t, *j)).collect();
        let got = interval_metrics(&[episode], &vs).map_err(s)?.total();
        let expected = brute_force(len, &intervals, &verdicts);
        ensure(got == expected, || format!("case {case}: {got:?} != {expected:?}"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("{instances} instances identical to the brute-force counter in {:.2}s", elapsed.as_secs_f64()))
}

fn criterion_4() -> Outcome {
    let d = calibrate(ScoreKind::GmmNll, &(1..=100).map(f64::from).collect::<Vec<_>>(), 0.95).map_err(s)?;
    ensure(d.threshold() == 95.0, || format!("threshold {}", d.threshold()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let lists = 200;
    let mut worst: f64 = 0.0;
    for _ in 0..lists {
        let n = rng.gen_range(1..400);
        // Coarse values force ties.
        let discrete = rng.gen_bool(0.5);
        let scores: Vec<f64> =
            (0..n).map(|_| if discrete { rng.gen_range(0..8) as f64 } else { rng.gen_range(-50.0..50.0) }).collect();
        let d = calibrate(ScoreKind::GmmNll, &scores, 0.95).map_err(s)?;
        let flagged = scores.iter().filter(|x| **x > d.threshold()).count() as f64 / n as f64;
        ensure(flagged <= 0.05 + 1e-12, || format!("n={n}: flagged {flagged}"))?;
        worst = worst.max(flagged);
    }
    Ok(format!("1..100 -> threshold 95; {lists} random lists, worst flagged fraction {worst:.4}"))
}

fn gaussian_cloud(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    use rand_distr_free::normal;
    (0..n).map(|_| (0..d).map(|j| (j as f64 + 1.0) * normal(rng) + j as f64).collect()).collect()
}

/// Box-Muller, so the test does not lean on the library's samplers.
mod rand_distr_free {
    use rand::Rng;
    pub fn normal<R: Rng>(rng: &mut R) -> f64 {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

fn moments(pts: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = pts.len() as f64;
    let d = pts[0].len();
    let mean: Vec<f64> = (0..d).map(|j| pts.iter().map(|p| p[j]).sum::<f64>() / n).collect();
    let cov = (0..d)
        .map(|a| (0..d).map(|b| pts.iter().map(|p| (p[a] - mean[a]) * (p[b] - mean[b])).sum::<f64>() / n).collect())
        .collect();
    (mean, cov)
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // K = 1 against sample moments; the fitted covariance carries the
    // documented ridge eps = 1e-6 * trace / d.
    let pts = gaussian_cloud(&mut rng, 300, 4);
    let model = fit_gmm(&pts, 1, GmmFitOptions::default()).map_err(s)?;
    let (mean, cov) = moments(&pts);
    let eps = 1e-6 * (0..4).map(|j| cov[j][j]).sum::<f64>() / 4.0;
    let mut max_err: f64 = 0.0;
    for a in 0..4 {
        max_err = max_err.max((model.means()[0][a] - mean[a]).abs());
        for b in 0..4 {
            let expected = cov[a][b] + if a == b { eps } else { 0.0 };
            max_err = max_err.max((model.covariances()[0][(a, b)] - expected).abs());
        }
    }
    ensure(model.weights() == [1.0], || format!("weights {:?}", model.weights()))?;
    ensure(max_err < 1e-8, || format!("K=1 deviation {max_err:e}"))?;

    // Monotone log-likelihood traces.
    let mut worst_drop: f64 = 0.0;
    for case in 0..50 {
        let d = rng.gen_range(1..5);
        let n = rng.gen_range(20..120);
        let k = rng.gen_range(1..5);
        let pts = gaussian_cloud(&mut rng, n, d);
        let m = fit_gmm(&pts, k, GmmFitOptions { seed: case, ..Default::default() }).map_err(s)?;
        for w in m.fit_log().windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
    }
    ensure(worst_drop <= 1e-9, || format!("log-likelihood dropped by {worst_drop:e}"))?;

    // Two clusters at (0,0) and (10,10).
    let mut pts = Vec::new();
    for c in [0.0, 10.0] {
        for _ in 0..100 {
            pts.push(vec![c + rand_distr_free::normal(&mut rng), c + rand_distr_free::normal(&mut rng)]);
        }
    }
    let m = fit_gmm(&pts, 2, GmmFitOptions { seed: 1, ..Default::default() }).map_err(s)?;
    for c in [0.0, 10.0] {
        let (j, dist) = (0..2)
            .map(|j| (j, ((m.means()[j][0] - c).powi(2) + (m.means()[j][1] - c).powi(2)).sqrt()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        ensure(dist < 0.5, || format!("center {c}: nearest mean {dist:.3} away"))?;
        ensure((m.weights()[j] - 0.5).abs() < 0.05, || format!("weight {}", m.weights()[j]))?;
    }
    Ok(format!("K=1 within {max_err:.1e}; 50 traces monotone (worst drop {worst_drop:.1e}); clusters recovered"))
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j].powi(2)).sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - sn * akq;
                    a[k][q] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - sn * aqk;
                    a[q][k] = sn * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

fn criterion_6() -> Outcome {
    let std_normal = GaussianMixtureModel::new(vec![1.0], vec![DVector::zeros(2)], vec![DMatrix::identity(2, 2)]).map_err(s)?;
    let nll = std_normal.score_nll(&[0.0, 0.0]).map_err(s)?;
    let expected = (2.0 * std::f64::consts::PI).ln();
    ensure((nll - expected).abs() < 1e-9, || format!("NLL {nll} vs {expected}"))?;
    let m = std_normal.score_mahalanobis_min(&[3.0, 4.0]).map_err(s)?;
    ensure((m - 5.0).abs() < 1e-12, || format!("Mahalanobis {m}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pts = gaussian_cloud(&mut rng, 400, 5);
    let pca = fit_pca(&pts, 2).map_err(s)?;
    let mean_err = pts.iter().map(|p| pca.recon_error(p)).sum::<Result<f64, _>>().map_err(s)? / pts.len() as f64;
    let (_, cov) = moments(&pts);
    let trailing: f64 = jacobi_eigenvalues(cov)[2..].iter().sum();
    ensure((mean_err - trailing).abs() < 1e-6, || format!("recon {mean_err} vs trailing {trailing}"))?;
    Ok(format!("NLL(0,0) = log 2pi, Mahalanobis(3,4) = 5, PCA recon {mean_err:.6} = trailing eigenvalues {trailing:.6}"))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let names = ["car", "stop sign", "traffic light", "pedestrian", "tree", "building", "truck", "elephant", "boat"];
    let class = |b: bool| if b { Classification::Anomaly } else { Classification::Normal };
    for case in 0..1000 {
        let k = rng.gen_range(0..5);
        let per_object: Vec<(String, Classification)> = (0..k)
            .map(|i| {
                let name = names[rng.gen_range(0..names.len())];
                let prefix = if rng.gen_bool(0.5) { "A" } else { "The" };
                (format!("{prefix} {name} {i}"), class(rng.gen_bool(0.3)))
            })
            .collect();
        let overall = class(per_object.iter().any(|(_, c)| c.is_anomaly()) || rng.gen_bool(0.1));
        let v = synthesize_verdict("ep", case, per_object, overall, ResponseStyle::PerObjectClassification);
        let parsed = parse_verdict(&v.rationale, "ep", case).map_err(|e| format!("case {case}: {e}"))?;
        ensure(parsed == v, || format!("case {case}: {parsed:?} != {v:?}"))?;
    }
    let cases: [(&str, fn(&ParseError) -> bool); 3] = [
        ("", |e| *e == ParseError::Empty),
        ("Everything on the road looks ordinary.\nNo concerns.", |e| matches!(e, ParseError::MissingOverall { .. })),
        ("Overall Scenario Classification: Maybe.", |e| matches!(e, ParseError::InvalidClassification { .. })),
    ];
    for (text, ok) in cases {
        match parse_verdict(text, "ep", 0) {
            Err(e) if ok(&e) => {}
            other => return Err(format!("{text:?} -> {other:?}")),
        }
    }
    Ok("1000 round trips exact; empty, missing-overall and invalid-value responses rejected".into())
}

/// Episodes and verdict files laid out from published confusion cells.
fn criterion_8() -> Outcome {
    let reference = ReferenceTables::bundled();
    let dir = tempfile::tempdir().map_err(s)?;
    let variants = [(ScenarioClass::ManipSemantic, "sem"), (ScenarioClass::ManipNeutral, "neu")];
    let mut episodes = Vec::new();
    let mut files: BTreeMap<&str, Vec<FrameVerdict>> = BTreeMap::new();
    for (variant, tag) in variants {
        let llm = reference.manipulation.confusion["llm"][&variant];
        let ae = reference.manipulation.confusion["autoencoder"][&variant];
        let successes = llm.detected_success + llm.missed_success;
        let failures = llm.detected_failure + llm.missed_failure;
        ensure(successes == ae.detected_success + ae.missed_success, || "success totals differ".into())?;
        let human_flags = reference.manipulation.detection_rate["human"][&variant] == 1.0;
        for (outcome, count, llm_hits, ae_hits) in [
            (TaskOutcome::Success, successes, llm.detected_success, ae.detected_success),
            (TaskOutcome::Failure, failures, llm.detected_failure, ae.detected_failure),
        ] {
            for i in 0..count {
                let id = format!("{tag}-{outcome:?}-{i:03}");
                episodes.push(
                    Episode::builder(&id, variant)
                        .frames(vec![Frame::at(0, vec![])])
                        .task_outcome(Some(outcome))
                        .task_spec(Some("put the red blocks in a green bowl".into()))
                        .build()
                        .map_err(s)?,
                );
                let j = |hit: bool| if hit { J::A } else { J::N };
                files.entry("llm").or_default().push(frame_verdict(&id, 0, j(i < llm_hits)));
                files.entry("autoencoder").or_default().push(frame_verdict(&id, 0, j(i < ae_hits)));
                files.entry("human").or_default().push(frame_verdict(&id, 0, j(human_flags)));
            }
        }
    }
    let ep_path = dir.path().join("episodes.jsonl");
    write_episodes(&episodes, &ep_path).map_err(s)?;
    let mut specs = Vec::new();
    for (label, verdicts) in &files {
        let p = dir.path().join(format!("{label}.jsonl"));
        write_verdicts(verdicts, &p).map_err(s)?;
        specs.push(format!("{label}={}", p.display()));
    }
    let csv = dir.path().join("report.csv");
    cmd_eval(&EvalArgs {
        common: CommonArgs { config: None, episodes: Some(ep_path) },
        verdicts: specs,
        compare: Some("bundled".into()),
        reference: vec![],
        out: Some(dir.path().join("report.txt")),
        csv: Some(csv.clone()),
    })
    .map_err(s)?;

    let text = std::fs::read_to_string(&csv).map_err(s)?;
    let (mut rates, mut cells) = (0, 0);
    let mut episodes_per_variant = BTreeMap::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (section, detector, column, metric, value, refv) = (f[0], f[1], f[2], f[3], f[4], f[5]);
        let value: f64 = value.parse().map_err(s)?;
        match (section, metric) {
            ("detection_rate", "rate") => {
                let r: f64 = refv.parse().map_err(|_| format!("no reference for {detector}/{column}"))?;
                ensure(format!("{value:.2}") == format!("{r:.2}"), || format!("{detector}/{column}: {value} vs {r}"))?;
                rates += 1;
            }
            ("detection_rate", "episodes") => {
                episodes_per_variant.insert(column.to_string(), value as u64);
            }
            // Only detectors with published confusion cells are compared.
            ("confusion", _) if reference.manipulation.confusion.contains_key(detector) => {
                let r: f64 = refv.parse().map_err(|_| format!("no reference for {detector}/{column}/{metric}"))?;
                ensure(value == r, || format!("{detector}/{column}/{metric}: {value} vs {r}"))?;
                cells += 1;
            }
            _ => {}
        }
    }
    ensure(rates == 6 && cells == 16, || format!("{rates} rates, {cells} cells compared"))?;
    ensure(episodes_per_variant.values().all(|n| *n == 250), || format!("{episodes_per_variant:?}"))?;
    Ok("6 detection rates and 16 confusion cells match; 250 episodes per variant".into())
}

fn criterion_9() -> Outcome {
    let episode = Episode::builder("probe", ScenarioClass::AnomalousLight)
        .frames(vec![Frame::at(
            0,
            vec![Detection::new("traffic light", "on a truck", 0.9).map_err(s)?, Detection::new("car", "on the road", 0.8).map_err(s)?],
        )])
        .intervals(vec![VisibilityInterval::new(0, 0, AnomalyKind::TrafficLight).map_err(s)?])
        .build()
        .map_err(s)?;
    let template = PromptTemplate::driving();
    let vocabulary = VocabularyCatalog::default();
    let oracle = RuleOracle::new(&RuleOracleConfig::driving()).map_err(s)?;
    let seeds: Vec<u64> = (0..16).collect();
    let monitor = Monitor::new(&template, &oracle, &vocabulary, SamplerConfig::default()).map_err(s)?;
    let records = monitor.probe_order(&episode, 0, &seeds).map_err(s)?;
    let orders: BTreeSet<Vec<String>> = records.iter().map(|r| r.lines.clone()).collect();
    let summary = summarize_probe(&records);
    ensure(orders.len() == 2, || format!("{} distinct orders", orders.len()))?;
    ensure(summary.consistent && summary.withheld == 0 && summary.anomaly_votes == seeds.len(), || format!("{summary:?}"))?;
    let mut detail = format!("oracle identical over both orders ({} permutations)", records.len());

    // Measured only: a configured remote backend's agreement rate.
    let remote = RemoteConfig::default().with_env();
    if !remote.url.is_empty() {
        match RemoteBackend::new(remote) {
            Ok(backend) => {
                let backend: &dyn Backend = &backend;
                let monitor = Monitor::new(&template, backend, &vocabulary, SamplerConfig::default()).map_err(s)?;
                let r = summarize_probe(&monitor.probe_order(&episode, 0, &seeds).map_err(s)?);
                detail.push_str(&format!("; remote: {}/{} anomaly votes, consistent = {}", r.anomaly_votes, r.permutations - r.withheld, r.consistent));
            }
            Err(e) => detail.push_str(&format!("; remote not measured: {e}")),
        }
    } else {
        detail.push_str("; remote not measured (no endpoint configured)");
    }
    Ok(detail)
}

fn criterion_10() -> Outcome {
    let run = |dir: &Path| -> Result<Vec<(String, Vec<u8>)>, String> {
        let ep = dir.join("episodes.jsonl");
        let v = dir.join("verdicts.jsonl");
        let report = dir.join("report.txt");
        let csv = dir.join("report.csv");
        cmd_gen(&GenArgs { config: fixture("table1_noisy_gen.toml"), out: ep.clone(), seed: Some(42) }).map_err(s)?;
        let common = CommonArgs { config: None, episodes: Some(ep.clone()) };
        cmd_monitor(&MonitorArgs { common: common.clone(), backend: Default::default(), out: Some(v.clone()), stride: None }).map_err(s)?;
        cmd_eval(&EvalArgs {
            common,
            verdicts: vec![format!("oracle={}", v.display())],
            compare: Some("bundled".into()),
            reference: vec![],
            out: Some(report.clone()),
            csv: Some(csv.clone()),
        })
        .map_err(s)?;
        [ep, v, report, csv]
            .iter()
            .map(|p| Ok((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(p).map_err(s)?)))
            .collect()
    };
    let (a, b) = (tempfile::tempdir().map_err(s)?, tempfile::tempdir().map_err(s)?);
    let (ra, rb) = (run(a.path())?, run(b.path())?);
    for ((name, x), (_, y)) in ra.iter().zip(&rb) {
        ensure(x == y, || format!("{name} differs between runs"))?;
        ensure(!x.is_empty(), || format!("{name} is empty"))?;
    }
    let sizes: Vec<String> = ra.iter().map(|(n, x)| format!("{n} {}B", x.len())).collect();
    Ok(format!("byte-identical: {}", sizes.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("noise-free oracle pipeline reaches TPR 1.0", criterion_1),
        ("detector noise lowers TPR and raises FPR", criterion_2),
        ("interval metrics match brute force", criterion_3),
        ("quantile calibration bounds FPR", criterion_4),
        ("EM fit correctness", criterion_5),
        ("scoring closed forms", criterion_6),
        ("verdict parser round trip", criterion_7),
        ("manipulation report fidelity", criterion_8),
        ("description order probe", criterion_9),
        ("pipeline determinism", criterion_10),
    ];
    // Keep panics from individual criteria out of the summary lines.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
