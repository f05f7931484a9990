//! Acceptance report: one PASS/FAIL line per criterion, with the measured
//! quantities. Exits 0 either way; the lines are the result.

mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use covmotion::classify::{reports_to_records, EvalReport};
use covmotion::config::{Method, PipelineConfig};
use covmotion::covariance::{covariance_direct, covariance_integral};
use covmotion::features::{
    divergence_vorticity, kinematic_vector, strain_rotation, FeatureSetMask, FeatureStack, GradientTensor,
    SecondInvariant,
};
use covmotion::flow::{flow_derivatives, FlowField};
use covmotion::frame::Plane;
use covmotion::omp::{batch_omp, build_dictionary, OmpParams};
use covmotion::pipeline::{eval, extract, predictions_to_text, run_ablation, train};
use covmotion::spd::{logdet_divergence, matrix_exp, matrix_log, upper_triangle, OffDiagonalWeight, WhitenedAtom};
use covmotion::synth;
use covmotion::tsc::{maxdet_solve, TscParams};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn report(n: usize, title: &str, o: Outcome) -> bool {
    println!("{} {n}: {title}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    o.pass
}

fn kinematics() -> Outcome {
    let start = Instant::now();
    let (w, h) = (64, 48);
    // (gradient [ux, uy, vx, vy], divergence, vorticity)
    let cases = [
        ([0.0, -1.0, 1.0, 0.0], 0.0, 2.0),
        ([1.0, 0.0, 0.0, 1.0], 2.0, 0.0),
        ([0.0, 1.0, 0.0, 0.0], 0.0, -1.0),
        ([0.3, -0.2, 0.7, -0.5], -0.2, 0.9),
    ];
    let mut worst: f64 = 0.0;
    let mut rotation_ok = true;
    for (g, div, vort) in cases {
        let u = Plane::from_fn(w, h, |x, y| g[0] * x as f64 + g[1] * y as f64);
        let v = Plane::from_fn(w, h, |x, y| g[2] * x as f64 + g[3] * y as f64);
        let f = FlowField::new(u, v).unwrap();
        let d = flow_derivatives(&[f.clone(), f], 0).unwrap();
        let sym = nalgebra::Matrix2::new(g[0], 0.5 * (g[1] + g[2]), 0.5 * (g[1] + g[2]), g[3]);
        for y in 0..h {
            for x in 0..w {
                let t = GradientTensor::new(d.du_dx.get(x, y), d.du_dy.get(x, y), d.dv_dx.get(x, y), d.dv_dy.get(x, y));
                let (dv, vt) = divergence_vorticity(&t);
                let (s, r) = strain_rotation(&t);
                worst = worst.max((dv - div).abs()).max((vt - vort).abs());
                worst = worst.max((s - sym).abs().max()).max((s + r - t.0).abs().max());
                if g == [0.0, -1.0, 1.0, 0.0] {
                    let k = kinematic_vector(&t, SecondInvariant::Printed);
                    rotation_ok &= k[0].abs() < 1e-6 && (k[1] - 2.0).abs() < 1e-6 && s.norm() < 1e-6;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-6 && rotation_ok && elapsed < Duration::from_secs(1),
        format!("max error {worst:.1e}, rigid rotation Γ=2 ∇=0 S=0: {rotation_ok}, {:.3} s", elapsed.as_secs_f64()),
    )
}

fn sample_stack(seed: u64, offset: f64) -> (FeatureStack, DMatrix<f64>) {
    let mut r = rng(seed);
    let d = r.gen_range(2..=19);
    let n = r.gen_range(d + 2..400);
    let mix = random_matrix(&mut r, d, d);
    let scales: Vec<f64> = (0..d).map(|_| 10f64.powf(r.gen_range(-2.0..2.0))).collect();
    let raw = DMatrix::from_fn(n, d, |_, _| gaussian(&mut r)) * mix;
    let samples = DMatrix::from_fn(n, d, |i, j| raw[(i, j)] * scales[j] + offset);
    let flat = samples.row_iter().flat_map(|row| row.iter().copied().collect::<Vec<_>>()).collect();
    (FeatureStack::from_samples(d, flat).unwrap(), samples)
}

fn covariance() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let (stack, _) = sample_stack(seed, 0.0);
        let direct = covariance_direct(&stack).unwrap().matrix;
        let integral = covariance_integral(&stack).unwrap().matrix;
        worst = worst.max(rel_frobenius(&integral, &direct));
    }
    let mut offset_worst: f64 = 0.0;
    for seed in 0..20 {
        let (stack, samples) = sample_stack(1000 + seed, 1e4);
        let integral = covariance_integral(&stack).unwrap().matrix;
        offset_worst = offset_worst.max(rel_frobenius(&integral, &covariance_oracle(&samples)));
    }
    outcome(
        worst <= 1e-8 && offset_worst <= 1e-6,
        format!("100 stacks max rel {worst:.1e} (≤1e-8), +1e4 offset max rel {offset_worst:.1e} (≤1e-6)"),
    )
}

fn spd_suite() -> Outcome {
    let mut r = rng(11);
    let mut roundtrip: f64 = 0.0;
    for cond in [1.0, 1e2, 1e4, 1e6] {
        for d in [2, 5, 12, 19] {
            let c = spd_with_condition(&mut r, d, cond);
            let back = matrix_exp(&matrix_log(&c).unwrap()).unwrap();
            roundtrip = roundtrip.max(rel_frobenius(&back, &c));
        }
    }
    let mut self_div: f64 = 0.0;
    for d in [2, 7, 19] {
        let q = spd_with_condition(&mut r, d, 1e3);
        self_div = self_div.max(logdet_divergence(&q, &q).unwrap().abs());
    }
    let two = DMatrix::<f64>::identity(2, 2) * 2.0;
    let fixed = (logdet_divergence(&two, &DMatrix::identity(2, 2)).unwrap() - (2.0 - 2.0 * 2f64.ln())).abs();
    let mut iso: f64 = 0.0;
    for d in 1..=19 {
        let a = random_matrix(&mut r, d, d);
        let s = (&a + a.transpose()) * 0.5;
        let v = upper_triangle(&s, OffDiagonalWeight::Sqrt2);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        iso = iso.max((n - s.norm()).abs() / s.norm().max(1.0));
    }
    outcome(
        roundtrip <= 1e-8 && self_div <= 1e-10 && fixed <= 1e-12 && iso <= 1e-10,
        format!(
            "log/exp roundtrip {roundtrip:.1e} to cond 1e6, Φ(Q,Q) {self_div:.1e}, Φ(2I,I) error {fixed:.1e}, isometry {iso:.1e}"
        ),
    )
}

fn identity_dct(n: usize) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            e
        })
        .collect();
    for k in 0..n {
        let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        cols.push(
            (0..n)
                .map(|i| s * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n as f64).cos())
                .collect(),
        );
    }
    cols
}

fn monotone(history: &[f64]) -> bool {
    history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-12)
}

fn omp_suite() -> Outcome {
    let mut all_monotone = true;

    let n = 190;
    let cols = identity_dct(n);
    let descs: Vec<_> = cols.iter().map(|c| descriptor(c.clone(), "x")).collect();
    let dict = build_dictionary(&descs).unwrap();
    let mut r = rng(23);
    let mut pool: Vec<usize> = (0..2 * n).collect();
    let mut recovered = 0;
    let trials = 40;
    for _ in 0..trials {
        let k = r.gen_range(1..=5);
        pool.shuffle(&mut r);
        let mut support = pool[..k].to_vec();
        let mut y = vec![0.0; n];
        for &j in &support {
            let c = r.gen_range(0.5..2.0) * if r.gen_bool(0.5) { 1.0 } else { -1.0 };
            for i in 0..n {
                y[i] += c * cols[j][i];
            }
        }
        let code = &batch_omp(&dict, &[&y], &OmpParams { sparsity: 5, tolerance: 1e-9 }).unwrap()[0];
        all_monotone &= monotone(&code.residual_history);
        let mut got = code.support.clone();
        got.sort();
        support.sort();
        if got == support && code.residual_norm < 1e-8 {
            recovered += 1;
        }
    }

    let mut r = rng(21);
    let mut worst: f64 = 0.0;
    let mut same_support = true;
    for _ in 0..50 {
        let p = r.gen_range(5..40);
        let descs: Vec<_> = (0..p)
            .map(|j| descriptor((0..78).map(|_| gaussian(&mut r) * 3.0).collect(), ["a", "b"][j % 2]))
            .collect();
        let dict = build_dictionary(&descs).unwrap();
        let k = r.gen_range(1..=p.min(12));
        let y: Vec<f64> = (0..78).map(|_| gaussian(&mut r) * 5.0).collect();
        let code = &batch_omp(&dict, &[&y], &OmpParams { sparsity: k, tolerance: 1e-6 }).unwrap()[0];
        let yv = DVector::from_vec(y);
        let naive = naive_omp(dict.atoms(), &yv, k, 1e-6);
        all_monotone &= monotone(&code.residual_history);
        same_support &= code.support == naive.support;
        for (a, b) in code.coefficients.iter().zip(&naive.coefficients) {
            worst = worst.max((a - b).abs() / yv.norm());
        }
    }
    outcome(
        recovered == trials && same_support && worst <= 1e-8 && all_monotone,
        format!(
            "exact recovery {recovered}/{trials}, batch vs naive on 50: supports equal {same_support}, max coefficient gap {worst:.1e}, residuals monotone {all_monotone}"
        ),
    )
}

const SWEEP: [f64; 8] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1e3];

fn support_sweep(seed: u64, params: &TscParams) -> (Vec<usize>, bool) {
    let atoms = random_whitened_atoms(&mut rng(seed), 10, 3);
    let mut feasible = true;
    let sizes = SWEEP
        .iter()
        .map(|&delta| {
            let sol = maxdet_solve(&atoms, delta, params).unwrap();
            feasible &= sol.feasible();
            sol.support_size()
        })
        .collect();
    (sizes, feasible)
}

fn maxdet_suite() -> Outcome {
    let params = TscParams::default();
    let mut feasible = true;

    let mut single: f64 = 0.0;
    for d in 1..=4 {
        for delta in [0.0, 1e-3, 0.3, 2.0, 50.0] {
            let sol = maxdet_solve(&[WhitenedAtom::new(DMatrix::identity(d, d))], delta, &params).unwrap();
            feasible &= sol.feasible();
            single = single.max((sol.x[0] - d as f64 / (d as f64 + delta)).abs());
        }
    }

    let mut r = rng(31);
    let mut grid_gap = f64::NEG_INFINITY;
    let instances = 40;
    for i in 0..instances {
        let p = r.gen_range(1..=4);
        let d = r.gen_range(1..=3);
        let atoms = random_whitened_atoms(&mut r, p, d);
        let delta = [0.0, 1e-3, 0.1, 1.0][i % 4];
        let sol = maxdet_solve(&atoms, delta, &params).unwrap();
        feasible &= sol.feasible();
        let gap = maxdet_objective(&atoms, delta, &sol.x) - grid_minimum(&atoms, delta, 0.05);
        grid_gap = grid_gap.max(gap);
    }

    let (fixed, sweep_feasible) = support_sweep(0, &params);
    feasible &= sweep_feasible;
    let fixed_monotone = fixed.windows(2).all(|w| w[1] <= w[0]);
    let survey = 60;
    let monotone_count = (0..survey)
        .filter(|&s| support_sweep(s, &params).0.windows(2).all(|w| w[1] <= w[0]))
        .count();

    outcome(
        single <= 1e-4 && grid_gap <= 1e-4 && feasible && fixed_monotone,
        format!(
            "single atom max error {single:.1e}, worst objective minus grid on {instances} instances {grid_gap:.1e}, \
             feasible at every return {feasible}, support over δ∈{{1e-4..1e3}} on instance 0 = {fixed:?} \
             (monotone {fixed_monotone}; monotone on {monotone_count}/{survey} surveyed instances)"
        ),
    )
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

struct PipelineRun {
    store: Vec<(String, Vec<u8>)>,
    reports: Vec<EvalReport>,
    records: String,
    predictions: String,
    elapsed: Duration,
}

fn pipeline_run(root: &Path, config: &PipelineConfig) -> covmotion::Result<PipelineRun> {
    let start = Instant::now();
    let data = root.join("data");
    let store = root.join("store");
    synth::write_dataset(&config.synth, config.seed, &data)?;
    let manifest = covmotion::dataset::DatasetManifest::load(&data.join(synth::MANIFEST_FILE))?;
    extract(&manifest, config, &store, None)?;
    let split = manifest.split(&config.split, config.seed)?;
    let dict = train(&manifest, &split, &store)?;
    let out = eval(&manifest, &split, &dict, &store, &Method::ALL, config)?;
    Ok(PipelineRun {
        store: dir_bytes(&store),
        records: reports_to_records(&out.reports),
        predictions: predictions_to_text(&out.predictions),
        reports: out.reports,
        elapsed: start.elapsed(),
    })
}

fn accuracy(reports: &[EvalReport], method: &str, features: &str) -> f64 {
    reports
        .iter()
        .find(|r| r.method == method && r.feature_set == features)
        .map_or(f64::NAN, |r| r.accuracy)
}

fn end_to_end(run: &PipelineRun, ablation: &[EvalReport]) -> Outcome {
    let acc = |m| accuracy(&run.reports, m, "MF");
    let (omp, tsc, nn) = (acc("omp"), acc("tsc"), acc("nn"));
    let pass = omp >= 0.95 && tsc >= 0.95 && nn >= 0.80 && run.elapsed < Duration::from_secs(600);
    let amf = |m| accuracy(ablation, m, "AMF");
    outcome(
        pass,
        format!(
            "MF features: omp {omp:.3}, tsc {tsc:.3}, nn one-shot {nn:.3}; {:.1} s end to end \
             (AMF for reference: omp {:.3}, tsc {:.3}, nn {:.3})",
            run.elapsed.as_secs_f64(),
            amf("omp"),
            amf("tsc"),
            amf("nn")
        ),
    )
}

fn ablation_order(reports: &[EvalReport]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for m in ["omp", "tsc", "nn"] {
        let (af, mf, amf) = (accuracy(reports, m, "AF"), accuracy(reports, m, "MF"), accuracy(reports, m, "AMF"));
        pass &= mf >= af && amf >= af;
        parts.push(format!("{m} AF {af:.3} MF {mf:.3} AMF {amf:.3}"));
    }
    outcome(pass, parts.join("; "))
}

fn determinism(a: &PipelineRun, b: &PipelineRun) -> Outcome {
    let store = a.store == b.store;
    let reports = a.records == b.records && a.predictions == b.predictions;
    outcome(
        store && reports && !a.store.is_empty(),
        format!("{} store files identical {store}, reports and predictions identical {reports}", a.store.len()),
    )
}

fn main() {
    let mut passed = 0;
    passed += report(1, "kinematics on analytic flows", kinematics()) as usize;
    passed += report(2, "integral covariance", covariance()) as usize;
    passed += report(3, "SPD operations", spd_suite()) as usize;
    passed += report(4, "orthogonal matching pursuit", omp_suite()) as usize;
    passed += report(5, "MAXDET solver", maxdet_suite()) as usize;

    let config = PipelineConfig::with_overrides(&["features.mask=\"MF\"".into()]).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|n| {
            let dir = tmp.path().join(n);
            pipeline_run(&dir, &config)
        })
        .collect();
    let masks: Vec<(String, FeatureSetMask)> = ["AF", "MF", "AMF"]
        .iter()
        .map(|m| (m.to_string(), FeatureSetMask::preset(m).unwrap()))
        .collect();
    let ablation = covmotion::dataset::DatasetManifest::load(&tmp.path().join("a/data").join(synth::MANIFEST_FILE))
        .and_then(|m| run_ablation(&m, &config, &masks, &Method::ALL));

    match (&runs[0], &runs[1], &ablation) {
        (Ok(a), Ok(b), Ok(abl)) => {
            passed += report(6, "synthetic end-to-end recognition", end_to_end(a, abl)) as usize;
            passed += report(7, "feature-set ablation ordering", ablation_order(abl)) as usize;
            passed += report(8, "end-to-end determinism", determinism(a, b)) as usize;
        }
        _ => {
            let err = runs
                .iter()
                .filter_map(|r| r.as_ref().err().map(ToString::to_string))
                .chain(ablation.as_ref().err().map(ToString::to_string))
                .collect::<Vec<_>>()
                .join("; ");
            for (n, title) in [
                (6, "synthetic end-to-end recognition"),
                (7, "feature-set ablation ordering"),
                (8, "end-to-end determinism"),
            ] {
                report(n, title, outcome(false, format!("pipeline error: {err}")));
            }
        }
    }
    println!("{passed}/8 criteria passed");
}
