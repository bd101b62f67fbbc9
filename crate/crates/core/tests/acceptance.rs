//! Acceptance run over the ten criteria. Prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.
//!
//! `QMEM_ACCEPTANCE_CRITERIA=1,2,10` restricts the run to a subset; the
//! 7-qubit experiment behind criteria 5 to 7 and 9 dominates the runtime.
//! Reports are written under the cargo target tmpdir (`acceptance/`).

mod common;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use common::{ci_joint, exact_factors, max_abs_diff, random_ci_tables, random_rows, worst_gradient_error};
use qmem_core::ci::{train_ci, train_citl, TrainConfig};
use qmem_core::dataset::generate;
use qmem_core::harness::{emit_report, run_experiment, ExperimentConfig, Method, ReportFormat, RunReport};
use qmem_core::li::calibrate;
use qmem_core::metrics::{improvement_rate, infidelity, kld, mse, Metric};
use qmem_core::mlp::architecture;
use qmem_core::presets::Preset;
use qmem_core::probdist::recombine;
use qmem_core::rng;
use qmem_core::simulator::{apply_noise, ideal_dist, sample_angles, SimulatedDevice};
use qmem_core::{Mlp, Sample, Schedule};

struct Outcome {
    id: u8,
    pass: bool,
    detail: String,
    seconds: f64,
}

fn out_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn selected() -> BTreeSet<u8> {
    match std::env::var("QMEM_ACCEPTANCE_CRITERIA") {
        Ok(v) if !v.trim().is_empty() => v
            .split(',')
            .map(|s| s.trim().parse().expect("QMEM_ACCEPTANCE_CRITERIA lists criterion numbers"))
            .collect(),
        _ => (1..=10).collect(),
    }
}

fn run(id: u8, f: impl FnOnce() -> (bool, String)) -> Outcome {
    eprintln!("criterion {id}: running");
    let start = Instant::now();
    let (pass, detail) = f();
    let o = Outcome {
        id,
        pass,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    };
    println!("{}", line(&o));
    o
}

fn line(o: &Outcome) -> String {
    format!(
        "criterion {:>2}: {} ({:.1} s) {}",
        o.id,
        if o.pass { "PASS" } else { "FAIL" },
        o.seconds,
        o.detail
    )
}

/// Collects named sub-checks into one verdict and a readable detail string.
#[derive(Default)]
struct Checks {
    ok: bool,
    parts: Vec<String>,
}

impl Checks {
    fn new() -> Self {
        Self { ok: true, parts: Vec::new() }
    }

    fn check(&mut self, pass: bool, text: String) {
        self.ok &= pass;
        self.parts.push(format!("[{}] {text}", if pass { "ok" } else { "FAILED" }));
    }

    fn done(self) -> (bool, String) {
        (self.ok, self.parts.join("; "))
    }
}

fn criterion_1() -> (bool, String) {
    let start = Instant::now();
    let p = Preset::LinearOnly;
    let dev = SimulatedDevice::new(p.noise(), p.graph(), 0, "calibration").unwrap();
    let inv = calibrate(&dev, 7, 0).unwrap().factorize().unwrap();
    let mut r = rng::stream(1, "acceptance-1", 0);
    let worst = (0..100)
        .map(|_| {
            let ideal = ideal_dist(&sample_angles(7, &mut r));
            let (noisy, _) = apply_noise(&dev.model, &dev.graph, &ideal).unwrap();
            mse(&ideal, &inv.mitigate(&noisy).unwrap())
        })
        .fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let mut c = Checks::new();
    c.check(worst <= 1e-18, format!("worst per-sample MSE {worst:.3e} <= 1e-18"));
    c.check(secs < 10.0, format!("{secs:.2} s < 10 s"));
    c.done()
}

fn criterion_2() -> (bool, String) {
    let start = Instant::now();
    let spec = Preset::PaperLike7q.partition();
    let mut r = rng::stream(2, "acceptance-2", 0);
    let worst = (0..1000)
        .map(|_| {
            let p = ci_joint(&spec, &random_ci_tables(&spec, &mut r));
            let (leaves, cond) = exact_factors(&spec, &p);
            max_abs_diff(recombine(&spec, &leaves, &cond).unwrap().values(), p.values())
        })
        .fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let mut c = Checks::new();
    c.check(worst <= 1e-12, format!("worst elementwise error {worst:.3e} <= 1e-12 over 1000 joints"));
    c.check(secs < 30.0, format!("{secs:.2} s < 30 s"));
    c.done()
}

fn criterion_3() -> (bool, String) {
    let start = Instant::now();
    let mut r = rng::stream(3, "acceptance-3", 0);
    let mut worst = 0.0f64;
    for seed in 0..3 {
        let net = Mlp::init(&[8, 40, 40, 40, 40, 8], rng::derive_seed(3, "acceptance-3-net", seed)).unwrap();
        let (x, t) = (random_rows(4, 8, &mut r), random_rows(4, 8, &mut r));
        let pairs: Vec<(&[f64], &[f64])> = x.iter().zip(&t).map(|(a, b)| (a.as_slice(), b.as_slice())).collect();
        worst = worst.max(worst_gradient_error(&net, &pairs, 1e-5, 1e-8));
    }
    let secs = start.elapsed().as_secs_f64();
    let mut c = Checks::new();
    c.check(worst <= 1e-4, format!("worst relative error {worst:.3e} <= 1e-4 over 3 x 5608 coordinates"));
    c.check(secs < 60.0, format!("{secs:.2} s < 60 s"));
    c.done()
}

fn criterion_4() -> (bool, String) {
    let count = |dims: &[usize]| dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>();
    let leaf = architecture(8, 4, 5);
    let marginal = architecture(2, 4, 5);
    let (full, tail) = (count(&leaf), count(&leaf[3..]));

    let mut frozen = Mlp::init(&leaf, 0).unwrap();
    for l in 0..3 {
        frozen.set_frozen(l, true);
    }
    let p = Preset::PaperLike7q;
    let ds = generate(7, 20, 0, &p.noise(), &p.graph(), 4).unwrap();
    let samples: Vec<&Sample> = ds.samples.iter().collect();
    let config = TrainConfig {
        schedule: Schedule { epochs: 0, batch_size: 16 },
        ..TrainConfig::default()
    };
    let ci = train_ci(&samples, &p.partition(), &config, 0, 4).unwrap();
    let tl = train_citl(&samples, &p.partition(), &p.transfer(), &config, 0, 4).unwrap();

    let mut c = Checks::new();
    let leaf_count = Mlp::init(&leaf, 0).unwrap().trainable_param_count();
    c.check(leaf_count == 5608 && full == 5608, format!("[8,40,40,40,40,8] trainable {leaf_count} = 5608"));
    let tail_count = frozen.trainable_param_count();
    c.check(tail_count == 1968 && tail == 1968, format!("last hidden + output trainable {tail_count} = 1968"));
    let m = Mlp::init(&marginal, 0).unwrap().trainable_param_count();
    c.check(m == 382 && count(&marginal) == 382, format!("[2,10,10,10,10,2] trainable {m} = 382"));
    let ci_total = ci.trainable_param_count();
    c.check(ci_total == 4 * full + m && ci_total == 22_814, format!("7-qubit CI total {ci_total} = 22814"));
    let oracle = 2 * full + 2 * tail + m;
    let tl_total = tl.trainable_param_count();
    c.check(
        tl_total == oracle,
        format!("7-qubit CITL total {tl_total} = 2*5608 + 2*1968 + 382 = {oracle} (the rounded 15,550 quoted alongside this sum is an arithmetic slip)"),
    );
    c.done()
}

fn criterion_10() -> (bool, String) {
    let mut r = rng::stream(10, "acceptance-10", 0);
    let mut c = Checks::new();
    let mut zero = true;
    for w in 1..=7 {
        let p = common::random_dist(w, &mut r);
        zero &= mse(&p, &p) == 0.0 && kld(&p, &p) == 0.0 && infidelity(&p, &p) <= 1e-15;
    }
    c.check(zero, "all three distances vanish on identical distributions".into());
    let rate = improvement_rate(0.1, 0.02).unwrap();
    c.check((rate - 80.0).abs() <= 1e-12, format!("improvement_rate(0.1, 0.02) = {rate}"));
    let neg = improvement_rate(0.02, 0.05).unwrap();
    c.check(neg < 0.0, format!("a worse mitigation gives a negative rate ({neg})"));
    c.done()
}

fn seven_qubit_config() -> ExperimentConfig {
    ExperimentConfig {
        preset: Some(Preset::PaperLike7q.name().into()),
        samples: 7500,
        shots: 32000,
        train_fraction: 0.8,
        methods: Method::ALL.to_vec(),
        sweep: vec![500, 1000, 2000, 4000, 6000],
        sweep_methods: Some(vec![Method::Ci]),
        sweep_repetitions: Some(5),
        repetitions: 5,
        seed: 2024,
        output: Some(out_dir().join("7q")),
        ..ExperimentConfig::full_scale()
    }
}

fn thirteen_qubit_config() -> ExperimentConfig {
    ExperimentConfig {
        preset: Some(Preset::PaperLike13q.name().into()),
        samples: 6000,
        shots: 100_000,
        train_fraction: 5950.0 / 6000.0,
        methods: vec![Method::Unmitigated, Method::Ci],
        repetitions: 1,
        seed: 2024,
        output: Some(out_dir().join("13q")),
        ..ExperimentConfig::full_scale()
    }
}

fn run_and_emit(cfg: &ExperimentConfig) -> (RunReport, f64) {
    let start = Instant::now();
    let report = run_experiment(cfg).expect("experiment runs");
    let secs = start.elapsed().as_secs_f64();
    emit_report(&report, cfg.output.as_ref().unwrap(), &ReportFormat::ALL).expect("report written");
    (report, secs)
}

fn per_rep(report: &RunReport, method: Method) -> Vec<f64> {
    report.repetitions.iter().map(|r| r.get(method).unwrap().rates.mse).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(", ")
}

fn criterion_5(r: &RunReport) -> (bool, String) {
    let ci = mean(&per_rep(r, Method::Ci));
    let nn = mean(&per_rep(r, Method::Nn));
    let li = mean(&per_rep(r, Method::Li));
    let ci_seconds: f64 = r.repetitions.iter().map(|x| x.get(Method::Ci).unwrap().seconds).sum();
    let nn_seconds: f64 = r.repetitions.iter().map(|x| x.get(Method::Nn).unwrap().seconds).sum();
    let mut c = Checks::new();
    c.check(ci >= 80.0, format!("CI mean R_MSE {ci:.2}% >= 80 (per repetition {})", fmt_list(&per_rep(r, Method::Ci))));
    c.check(ci - nn >= 0.0, format!("CI - NN = {:.2} pp >= 0 (NN mean {nn:.2}%)", ci - nn));
    c.check(nn - li >= 5.0, format!("NN - LI = {:.2} pp >= 5 (LI mean {li:.2}%)", nn - li));
    c.check(ci - li >= 5.0, format!("CI - LI = {:.2} pp >= 5", ci - li));
    c.check(ci_seconds < 45.0 * 60.0, format!("CI training {:.1} min < 45 min", ci_seconds / 60.0));
    c.check(nn_seconds < 3.0 * 3600.0, format!("NN training {:.1} min < 180 min", nn_seconds / 60.0));
    c.done()
}

fn criterion_6(r: &RunReport) -> (bool, String) {
    let ci = mean(&per_rep(r, Method::Ci));
    let tl = mean(&per_rep(r, Method::Citl));
    let mut c = Checks::new();
    c.check((tl - ci).abs() <= 3.0, format!("|CITL - CI| = |{tl:.2} - {ci:.2}| = {:.2} pp <= 3", (tl - ci).abs()));
    let rep = &r.repetitions[0];
    let (ci_res, tl_res) = (rep.get(Method::Ci).unwrap(), rep.get(Method::Citl).unwrap());
    let (full, tuned) = (ci_res.target_leaf_params.unwrap(), tl_res.target_leaf_params.unwrap());
    c.check(
        tuned as f64 <= 0.4 * full as f64,
        format!("target-leaf trainable {tuned} = {:.1}% of {full} <= 40%", 100.0 * tuned as f64 / full as f64),
    );
    let ci_t: f64 = r.repetitions.iter().map(|x| x.get(Method::Ci).unwrap().target_leaf_seconds.unwrap()).sum();
    let tl_t: f64 = r.repetitions.iter().map(|x| x.get(Method::Citl).unwrap().target_leaf_seconds.unwrap()).sum();
    c.check(tl_t < ci_t, format!("target-leaf training {tl_t:.1} s < {ci_t:.1} s from scratch"));
    c.done()
}

fn criterion_7(r: &RunReport) -> (bool, String) {
    let sizes = [500, 1000, 2000, 4000, 6000];
    let curve: Vec<f64> = sizes
        .iter()
        .map(|&s| r.sweep_stats(Method::Ci, s, Metric::Mse).unwrap().0)
        .collect();
    let nn_6000 = r.summary(Method::Nn).unwrap().mean.mse;
    let mut c = Checks::new();
    c.check(
        curve[1] <= nn_6000,
        format!("CI MSE at 1000 = {:.4e} <= NN MSE at 6000 = {nn_6000:.4e}", curve[1]),
    );
    let inversions = curve.windows(2).filter(|w| w[1] > w[0]).count();
    c.check(
        inversions <= 1,
        format!(
            "CI curve {} has {inversions} inversion(s) <= 1",
            curve.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(" > ")
        ),
    );
    c.done()
}

fn criterion_8(r: &RunReport, secs: f64) -> (bool, String) {
    let res = r.repetitions[0].get(Method::Ci).unwrap();
    let mut c = Checks::new();
    c.check(res.networks == Some(19), format!("{} networks = 19", res.networks.unwrap()));
    c.check(r.train_size == 5950 && r.test_size == 50, format!("split {}/{}", r.train_size, r.test_size));
    c.check(res.rates.mse >= 75.0, format!("CI R_MSE {:.2}% >= 75", res.rates.mse));
    c.check(secs < 2.0 * 3600.0, format!("{:.1} min < 120 min", secs / 60.0));
    c.done()
}

/// Reruns with the same master seed and compares every reported number.
/// The 7-qubit rerun repeats LI, CI and CITL on all repetitions with the
/// first repetition of the sweep, and NN on the first repetition only.
fn criterion_9(first_7q: Option<&RunReport>, first_13q: Option<&RunReport>) -> (bool, String) {
    let mut c = Checks::new();
    if let Some(a) = first_13q {
        let (b, _) = run_and_emit(&ExperimentConfig {
            output: Some(out_dir().join("13q-rerun")),
            ..thirteen_qubit_config()
        });
        c.check(
            a.metrics_fingerprint() == b.metrics_fingerprint(),
            format!("13-qubit rerun fingerprint {}", &b.metrics_fingerprint()[..16]),
        );
    }
    if let Some(a) = first_7q {
        let base = seven_qubit_config();
        let (b, _) = run_and_emit(&ExperimentConfig {
            methods: vec![Method::Unmitigated, Method::Li, Method::Ci, Method::Citl],
            sweep_repetitions: Some(1),
            output: Some(out_dir().join("7q-rerun")),
            ..base.clone()
        });
        let (nn, _) = run_and_emit(&ExperimentConfig {
            methods: vec![Method::Nn],
            repetitions: 1,
            sweep: Vec::new(),
            output: Some(out_dir().join("7q-rerun-nn")),
            ..base
        });
        let mut same = true;
        let mut compared = 0;
        for (ra, rb) in a.repetitions.iter().zip(&b.repetitions) {
            same &= ra.unmitigated == rb.unmitigated;
            for m in &rb.results {
                let x = ra.get(m.method).unwrap();
                same &= x.distances == m.distances && x.rates == m.rates;
                compared += 1;
            }
        }
        for p in &b.sweep {
            let q = a
                .sweep
                .iter()
                .find(|q| q.method == p.method && q.train_size == p.train_size && q.repetition == p.repetition)
                .unwrap();
            same &= q.distances == p.distances;
            compared += 1;
        }
        let (x, y) = (a.repetitions[0].get(Method::Nn).unwrap(), nn.repetitions[0].get(Method::Nn).unwrap());
        same &= x.distances == y.distances && x.rates == y.rates;
        compared += 1;
        c.check(same, format!("7-qubit rerun: {compared} method results bit-identical"));
    }
    if c.parts.is_empty() {
        c.check(false, "nothing to compare: criteria 5 and 8 were not selected".into());
    }
    c.done()
}

fn main() {
    // `cargo test <filter>` forwards the filter; run only when it names us
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filters.is_empty() && !filters.iter().any(|f| "acceptance".contains(f.as_str())) {
        return;
    }
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    std::fs::create_dir_all(out_dir()).unwrap();
    let want = selected();
    let total = Instant::now();
    let mut outcomes = Vec::new();

    let quick: [(u8, fn() -> (bool, String)); 5] =
        [(1, criterion_1), (2, criterion_2), (3, criterion_3), (4, criterion_4), (10, criterion_10)];
    for (id, f) in quick {
        if want.contains(&id) {
            outcomes.push(run(id, f));
        }
    }

    let needs_13q = want.contains(&8) || want.contains(&9);
    let r13 = needs_13q.then(|| {
        eprintln!("13-qubit experiment: 19 networks, 300 epochs");
        run_and_emit(&thirteen_qubit_config())
    });
    if want.contains(&8) {
        let (r, secs) = r13.as_ref().unwrap();
        outcomes.push(run(8, || criterion_8(r, *secs)));
    }

    let needs_7q = [5, 6, 7, 9].iter().any(|i| want.contains(i));
    let r7 = needs_7q.then(|| {
        eprintln!("7-qubit experiment: 5 repetitions of LI, NN, CI, CITL and a CI sweep, 300 epochs");
        run_and_emit(&seven_qubit_config()).0
    });
    if let Some(r) = &r7 {
        for (id, f) in [(5u8, criterion_5 as fn(&RunReport) -> (bool, String)), (6, criterion_6), (7, criterion_7)] {
            if want.contains(&id) {
                outcomes.push(run(id, || f(r)));
            }
        }
    }
    if want.contains(&9) {
        outcomes.push(run(9, || criterion_9(r7.as_ref(), r13.as_ref().map(|(r, _)| r))));
    }

    outcomes.sort_by_key(|o| o.id);
    let mut text = String::new();
    for o in &outcomes {
        text.push_str(&line(o));
        text.push('\n');
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    text.push_str(&format!(
        "{} of {} criteria passed in {:.1} min\n",
        outcomes.len() - failed,
        outcomes.len(),
        total.elapsed().as_secs_f64() / 60.0
    ));
    std::fs::write(out_dir().join("summary.txt"), &text).unwrap();
    println!("\nacceptance summary\n{text}");
    if failed > 0 {
        std::process::exit(1);
    }
}
