//! Acceptance criteria 1–9. Runs as a plain binary so that every criterion
//! reports a line even when an earlier one fails.

#![allow(clippy::field_reassign_with_default)]

mod common;

use std::f64::consts::{LN_2, PI};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use gatebench::cells::{count_params, param_budget_to_units, CellKind, CellParams, GruParams, GruVariant, LstmParams};
use gatebench::gradcheck::{check_model_gradients, DEFAULT_EPSILON};
use gatebench::harness::{
    emit_outputs, evaluate, prepare_data, read_curve_csv, run_experiment, ExperimentConfig,
    ExperimentOutcome, ModelSize, Task, RESULTS_FILE,
};
use gatebench::heads::{gmm_nll, GmmHead, HeadKind, MixtureParams, OutputHead};
use gatebench::model::{forward_nll, ModelShape, SequenceBatchItem, SequenceModel};
use gatebench::numerics::{RngStream, Vector};
use gatebench::optim::clip_global_norm;
use gatebench::params::Parameters;
use gatebench::Execution;

use common::{grad_combos, grad_instance, GRAD_SEEDS};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn parameter_counts() -> Outcome {
    let cases = [
        (CellKind::Lstm, 195, 20, 169_065),
        (CellKind::Gru, 227, 20, 168_888),
        (CellKind::Tanh, 400, 20, 168_400),
        (CellKind::Tanh, 100, 100, 20_100),
        (CellKind::Lstm, 36, 100, 19_836),
        (CellKind::Gru, 46, 100, 20_286),
    ];
    for (kind, n, d, want) in cases {
        let got = count_params(kind, n, d);
        ensure(got == want, || format!("{kind}({n}, d={d}) = {got}, expected {want}"))?;
    }
    // displayed table precision: 169.1 / 168.9 / 168.4 and 20.1 / 19.8 / 20.2 thousand
    let table = [(169_065, 169.1), (168_888, 168.9), (168_400, 168.4)];
    for (count, shown) in table {
        let k = (count as f64 / 100.0).round() / 10.0;
        ensure(k == shown, || format!("{count} displays as {k}, table shows {shown}"))?;
    }
    for (count, shown, tol) in [(20_100.0, 20_100.0, 0.0), (19_836.0, 19_800.0, 0.002), (20_286.0, 20_200.0, 0.005)] {
        let rel: f64 = (count - shown) / shown;
        ensure(rel.abs() <= tol, || format!("{count} vs {shown}: {rel:.4}"))?;
    }
    Ok("six counts exact".into())
}

fn budget_matcher() -> Outcome {
    for (kind, budget, want) in [
        (CellKind::Lstm, 169_100, 195),
        (CellKind::Gru, 168_900, 227),
        (CellKind::Tanh, 168_400, 400),
    ] {
        let n = param_budget_to_units(kind, 20, budget).map_err(|e| e.to_string())?;
        ensure(n == want, || format!("{kind} budget {budget} gave n = {n}, expected {want}"))?;
    }
    Ok("195 / 227 / 400 recovered".into())
}

fn gradient_certification() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut failing = 0;
    let mut total = 0;
    for (kind, head, variant) in grad_combos() {
        for seed in 0..GRAD_SEEDS {
            let (model, item) = grad_instance(kind, head, variant, seed);
            let report = check_model_gradients(&model, &item, DEFAULT_EPSILON).map_err(|e| e.to_string())?;
            total += 1;
            if !report.passes(1e-5) {
                failing += 1;
            }
            if report.max_rel_error > worst.0 {
                worst = (
                    report.max_rel_error,
                    format!(
                        "{kind}/{}/{} seed {seed} {}[{}] analytic {:.3e} numeric {:.3e}",
                        head.name(),
                        variant.as_str(),
                        report.worst_parameter.0,
                        report.worst_parameter.1,
                        report.worst_analytic,
                        report.worst_numeric
                    ),
                );
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let summary = format!(
        "{failing}/{total} instances >= 1e-5, worst {:.2e} ({}), {secs:.1}s",
        worst.0, worst.1
    );
    ensure(failing == 0 && secs < 120.0, || summary.clone())?;
    Ok(summary)
}

fn max_abs_diff(a: &Vector, b: &Vector) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn gate_saturation() -> Outcome {
    let mut rng = RngStream::new(4);
    let (n, d, steps) = (6, 3, 50);
    let xs: Vec<Vector> = (0..steps)
        .map(|_| (0..d).map(|_| rng.uniform_range(-2.0, 2.0)).collect())
        .collect();

    let mut gru = GruParams::zeros(n, d);
    gru.b_z.fill(-30.0);
    for j in 0..n {
        gru.b_r[j] = rng.uniform_range(-3.0, 3.0);
        gru.b[j] = rng.uniform_range(-3.0, 3.0);
    }
    let gru = CellParams::Gru(gru);
    for variant in GruVariant::ALL {
        let mut state = gatebench::cells::RecurrentState::Hidden((0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect());
        for x in &xs {
            let next = gru.step(&state, x, variant).map_err(|e| e.to_string())?.state();
            let drift = max_abs_diff(next.h(), state.h());
            ensure(drift < 1e-9, || format!("GRU ({}) h drift {drift:e}", variant.as_str()))?;
            state = next;
        }
    }

    let mut lstm = LstmParams::zeros(n, d);
    lstm.b_f.fill(30.0);
    lstm.b_i.fill(-30.0);
    for j in 0..n {
        lstm.b_o[j] = rng.uniform_range(-3.0, 3.0);
        lstm.b_c[j] = rng.uniform_range(-3.0, 3.0);
    }
    let lstm = CellParams::Lstm(lstm);
    let c0: Vector = (0..n).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
    let mut state = gatebench::cells::RecurrentState::Lstm(gatebench::cells::LstmState {
        h: Vector::zeros(n),
        c: c0,
    });
    for x in &xs {
        let next = lstm.step(&state, x, GruVariant::CandidateGated).map_err(|e| e.to_string())?.state();
        let (gatebench::cells::RecurrentState::Lstm(a), gatebench::cells::RecurrentState::Lstm(b)) = (&next, &state) else {
            return Err("LSTM state lost its memory cell".into());
        };
        let drift = max_abs_diff(&a.c, &b.c);
        ensure(drift < 1e-9, || format!("LSTM c drift {drift:e}"))?;
        state = next;
    }
    Ok(format!("{steps} steps, drift < 1e-9"))
}

fn random_gradient_tree(rng: &mut RngStream, i: usize) -> gatebench::model::Gradients {
    let kind = CellKind::ALL[i % 3];
    let head = if i.is_multiple_of(2) { HeadKind::Bernoulli } else { HeadKind::Gmm { components: 2 } };
    let shape = ModelShape {
        kind,
        head,
        hidden: 1 + rng.below(6),
        d_in: 1 + rng.below(4),
        d_out: 1 + rng.below(3),
        gru_variant: GruVariant::CandidateGated,
    };
    let mut g = SequenceModel::zeros(shape).zero_gradients();
    let scale = 10f64.powf(rng.uniform_range(-4.0, 4.0));
    for t in g.tensors_mut() {
        for v in t.values.iter_mut() {
            *v = scale * rng.standard_normal();
        }
    }
    g
}

fn clipping_contract() -> Outcome {
    let mut rng = RngStream::new(5);
    let mut untouched = 0;
    for i in 0..1000 {
        let g = random_gradient_tree(&mut rng, i);
        let clipped = clip_global_norm(&g, 1.0).map_err(|e| e.to_string())?;
        let norm = clipped.norm();
        ensure(norm <= 1.0 + 1e-12, || format!("tree {i}: clipped norm {norm}"))?;
        if g.norm() <= 1.0 {
            untouched += 1;
            let same = g.to_flat().iter().zip(clipped.to_flat()).all(|(a, b)| a.to_bits() == b.to_bits());
            ensure(same, || format!("tree {i}: norm {} <= 1 but values changed", g.norm()))?;
        }
        let twice = clip_global_norm(&clipped, 1.0).map_err(|e| e.to_string())?;
        let same = twice.to_flat().iter().zip(clipped.to_flat()).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same, || format!("tree {i}: clipping not idempotent"))?;
    }
    Ok(format!("1000 trees, {untouched} under threshold"))
}

fn likelihood_identities() -> Outcome {
    let mut rng = RngStream::new(6);
    for kind in CellKind::ALL {
        for head in [HeadKind::Bernoulli, HeadKind::Gmm { components: 4 }] {
            let shape = ModelShape {
                kind,
                head,
                hidden: 5,
                d_in: 3,
                d_out: 3,
                gru_variant: GruVariant::ProjectionGated,
            };
            let model = SequenceModel::new(shape, &mut rng, 1.0).map_err(|e| e.to_string())?;
            let inputs = (0..9).map(|_| (0..3).map(|_| rng.standard_normal()).collect()).collect();
            let targets = (0..9)
                .map(|_| match head {
                    HeadKind::Bernoulli => (0..3).map(|_| f64::from(u8::from(rng.bernoulli(0.3)))).collect(),
                    HeadKind::Gmm { .. } => (0..3).map(|_| rng.standard_normal()).collect(),
                })
                .collect();
            let item = SequenceBatchItem::new(inputs, targets).map_err(|e| e.to_string())?;
            let pass = forward_nll(&model, &item).map_err(|e| e.to_string())?;
            let sum: f64 = pass.per_step.iter().sum();
            let rel = (pass.total_nll - sum).abs() / sum.abs();
            ensure(rel <= 1e-9, || format!("{kind}/{}: total vs sum {rel:e}", head.name()))?;
        }
    }

    let d = 7;
    for kind in CellKind::ALL {
        let shape = ModelShape {
            kind,
            head: HeadKind::Bernoulli,
            hidden: 4,
            d_in: d,
            d_out: d,
            gru_variant: GruVariant::CandidateGated,
        };
        let zero = SequenceModel::zeros(shape);
        let inputs = (0..5).map(|_| (0..d).map(|_| rng.uniform()).collect()).collect();
        let targets = (0..5)
            .map(|_| (0..d).map(|_| f64::from(u8::from(rng.bernoulli(0.5)))).collect())
            .collect();
        let item = SequenceBatchItem::new(inputs, targets).map_err(|e| e.to_string())?;
        let pass = forward_nll(&zero, &item).map_err(|e| e.to_string())?;
        for step in &pass.per_step {
            let err = (step - d as f64 * LN_2).abs();
            ensure(err <= 1e-12, || format!("{kind}: uniform Bernoulli step off by {err:e}"))?;
        }
    }

    let half_ln_2pi = 0.5 * (2.0 * PI).ln();
    let target: Vector = (0..4).map(|_| rng.standard_normal()).collect();
    let mix = MixtureParams {
        weights: Vector::filled(1, 1.0),
        means: vec![target.clone()],
        stds: vec![Vector::filled(4, 1.0)],
    };
    let nll = gmm_nll(&mix, &target).map_err(|e| e.to_string())?;
    let err = (nll - 4.0 * half_ln_2pi).abs();
    ensure(err <= 1e-12, || format!("unit Gaussian at its mean off by {err:e}"))?;
    let mut head = GmmHead::zeros(1, 4, 3);
    head.b_mu = target.clone();
    let head = OutputHead::Gmm(head);
    let cache = head.forward(&Vector::filled(3, 0.4)).map_err(|e| e.to_string())?;
    let nll = head.nll(&cache, target.as_slice()).map_err(|e| e.to_string())?;
    let err = (nll - 4.0 * half_ln_2pi).abs();
    ensure(err <= 1e-12, || format!("head with zero log-std off by {err:e}"))?;

    let head = OutputHead::init(HeadKind::Gmm { components: 5 }, 1, 6, &mut rng, 1.0).map_err(|e| e.to_string())?;
    let h: Vector = (0..6).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let cache = head.forward(&h).map_err(|e| e.to_string())?;
    let steps = 80_000;
    let dx = 40.0 / steps as f64;
    let mut area = 0.0;
    for i in 0..=steps {
        let x = -20.0 + i as f64 * dx;
        let p = (-head.nll(&cache, &[x]).map_err(|e| e.to_string())?).exp();
        area += if i == 0 || i == steps { 0.5 * p } else { p };
    }
    area *= dx;
    ensure((area - 1.0).abs() <= 0.01, || format!("density integrates to {area}"))?;
    Ok(format!("density integrates to {area:.6}"))
}

fn lag_config(cell: CellKind, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.task = Task::Lag;
    c.lag = 20;
    c.dim = 1;
    c.num_seq = 200;
    c.seq_len = 100;
    c.size = ModelSize::Budget(5000);
    c.lr_candidates = 10;
    c.max_epochs = 200;
    c.cell = cell;
    c.seed = seed;
    c
}

fn qualitative_ranking(runs: &mut Vec<(ExperimentConfig, ExperimentOutcome)>) -> Outcome {
    let mut lines = Vec::new();
    let mut passing = 0;
    for seed in 1..=3 {
        let mut valid = Vec::new();
        for cell in [CellKind::Tanh, CellKind::Gru, CellKind::Lstm] {
            let config = lag_config(cell, seed);
            let start = Instant::now();
            let out = run_experiment(&config, Execution::default()).map_err(|e| e.to_string())?;
            let secs = start.elapsed().as_secs_f64();
            ensure(secs < 1800.0, || format!("{cell} seed {seed} took {secs:.0}s"))?;
            valid.push(out.row.valid_nll);
            runs.push((config, out));
        }
        let (tanh, gru, lstm) = (valid[0], valid[1], valid[2]);
        let ok = gru <= 0.5 * tanh && lstm <= 0.5 * tanh;
        passing += usize::from(ok);
        lines.push(format!(
            "seed {seed}: tanh {tanh:.4} gru {gru:.4} ({:.2}x) lstm {lstm:.4} ({:.2}x)",
            gru / tanh,
            lstm / tanh
        ));
    }
    let summary = format!("{passing}/3 seeds; {}", lines.join("; "));
    ensure(passing >= 2, || summary.clone())?;
    Ok(summary)
}

fn curve_emission(runs: &[(ExperimentConfig, ExperimentOutcome)]) -> Outcome {
    let mut own = Vec::new();
    let runs = if runs.is_empty() {
        let mut config = lag_config(CellKind::Lstm, 8);
        config.num_seq = 30;
        config.lr_candidates = 2;
        config.max_epochs = 6;
        let out = run_experiment(&config, Execution::default()).map_err(|e| e.to_string())?;
        own.push((config, out));
        &own[..]
    } else {
        runs
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut checked = 0;
    for (config, out) in runs {
        let path = dir.path().join(gatebench::harness::curve_file_name(&out.run));
        emit_outputs(std::slice::from_ref(&out.row), &[(out.run.clone(), out.curve.clone())], dir.path())
            .map_err(|e| e.to_string())?;
        let header = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
        let header = header.lines().next().unwrap_or_default();
        let cols: Vec<&str> = header.split(',').collect();
        ensure(cols.contains(&"updates") && cols.contains(&"wall_clock_s"), || {
            format!("{}: header {header}", out.run)
        })?;
        let curve = read_curve_csv(&path).map_err(|e| e.to_string())?;
        ensure(!curve.is_empty(), || format!("{}: empty curve", out.run))?;
        ensure(curve.windows(2).all(|w| w[1].epoch > w[0].epoch), || {
            format!("{}: epochs not strictly increasing", out.run)
        })?;
        let data = prepare_data(config).map_err(|e| e.to_string())?;
        let checkpoint = evaluate(&out.model, &data.valid, Execution::default()).map_err(|e| e.to_string())?;
        let min = out.curve.iter().map(|r| r.valid_nll).fold(f64::INFINITY, f64::min);
        ensure(checkpoint == min, || format!("{}: checkpoint {checkpoint} vs curve min {min}", out.run))?;
        let file_min = curve.iter().map(|r| r.valid_nll).fold(f64::INFINITY, f64::min);
        let shown: f64 = gatebench::harness::fmt_g6(checkpoint).parse().map_err(|_| "unparsable".to_string())?;
        ensure(file_min == shown, || format!("{}: file min {file_min} vs {shown}", out.run))?;
        checked += 1;
    }
    Ok(format!("{checked} runs checked"))
}

fn determinism() -> Outcome {
    let mut config = lag_config(CellKind::Gru, 9);
    config.num_seq = 30;
    config.seq_len = 40;
    config.lag = 5;
    config.size = ModelSize::Budget(600);
    config.lr_candidates = 3;
    config.max_epochs = 8;
    let mut files = Vec::new();
    for exec in [Execution::Parallel, Execution::Sequential] {
        let out = run_experiment(&config, exec).map_err(|e| e.to_string())?;
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        emit_outputs(&[out.row], &[], dir.path()).map_err(|e| e.to_string())?;
        files.push(std::fs::read(dir.path().join(RESULTS_FILE)).map_err(|e| e.to_string())?);
    }
    ensure(files[0] == files[1], || "results.csv differs between runs".into())?;
    Ok(format!("{} identical bytes", files[0].len()))
}

fn report(index: usize, name: &str, result: std::thread::Result<Outcome>) -> bool {
    let (ok, detail) = match result {
        Ok(Ok(d)) => (true, d),
        Ok(Err(d)) => (false, d),
        Err(p) => (
            false,
            p.downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()),
        ),
    };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {index} {name}: {} {detail}", if ok { "PASS" } else { "FAIL" });
    let _ = out.flush();
    ok
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut runs = Vec::new();
    let mut all = true;
    all &= report(1, "parameter counts", catch_unwind(parameter_counts));
    all &= report(2, "budget matcher", catch_unwind(budget_matcher));
    all &= report(3, "gradient certification", catch_unwind(gradient_certification));
    all &= report(4, "gate saturation", catch_unwind(gate_saturation));
    all &= report(5, "clipping contract", catch_unwind(clipping_contract));
    all &= report(6, "likelihood identities", catch_unwind(likelihood_identities));
    all &= report(
        7,
        "gated vs tanh on lag 20",
        catch_unwind(AssertUnwindSafe(|| qualitative_ranking(&mut runs))),
    );
    all &= report(8, "curve emission", catch_unwind(AssertUnwindSafe(|| curve_emission(&runs))));
    all &= report(9, "determinism", catch_unwind(determinism));
    if !all {
        std::process::exit(1);
    }
}
