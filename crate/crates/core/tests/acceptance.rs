//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use common::*;
use reze::debias::{debias_batch, reze_loss, reze_loss_grad};
use reze::eigenspace::{covariance, symmetric_evd};
use reze::fit::{fit, shrink_factors, FitConfig, SourceStats};
use reze::io::{decode_dump, decode_rzm, encode_dump, encode_rzm};
use reze::matrix::DenseMatrix;
use reze::metrics::{dispersion_report, isoscore, whitening_fit};
use reze::objectives::{concat_halves, info_nce, info_nce_grad, ObjectiveConfig};
use reze::relations::build_relations;
use reze::synth::{duplicate_as_sources, generate, SynthConfig};
use reze::train::{encoder_grad_check, train, Batch, LinearEncoder, TrainConfig};
use reze::{Aggregation, RezeError, ShrinkMode};

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

fn within(limit: Duration, start: Instant) -> (bool, String) {
    let t = start.elapsed();
    (t < limit, format!("{:.2}s/{}s", t.as_secs_f64(), limit.as_secs()))
}

fn signed() -> FitConfig {
    FitConfig {
        shrink_mode: ShrinkMode::Signed,
        ..FitConfig::default()
    }
}

fn ac1() -> Outcome {
    let start = Instant::now();
    let (mut recon, mut ortho, mut trace) = (0.0f64, 0.0f64, 0.0f64);
    for (i, &n) in [2usize, 3, 8, 17, 32, 64, 128].iter().enumerate() {
        let c = random_psd(n, n + 7, 100 + i as u64);
        let basis = symmetric_evd(&c).unwrap();
        let back = basis.recompose();
        recon = recon.max(c.sub(&back).unwrap().frobenius_norm() / c.frobenius_norm());
        ortho = ortho.max(basis.orthonormality_error());
        let sum: f64 = basis.values.iter().sum();
        trace = trace.max((sum - c.trace()).abs() / c.trace());
    }
    let (fast, time) = within(Duration::from_secs(5), start);
    outcome(
        recon < 1e-10 && ortho < 1e-8 && trace < 1e-8 && fast,
        format!("recon={recon:.2e} ortho={ortho:.2e} trace={trace:.2e} time={time}"),
    )
}

fn ac2() -> Outcome {
    let start = Instant::now();
    let base = SynthConfig {
        sources: 2,
        dim: 6,
        samples_per_source: 40,
        base_scales: scales(6),
        planted: vec![],
        pair_noise: 0.3,
        seed: 5,
    };
    let (a, p, _) = generate(&base).unwrap();
    let a5 = duplicate_as_sources(&a, 5, 0).unwrap();
    let p5 = duplicate_as_sources(&p, 5, 0).unwrap();
    let rel = build_relations::<f64>(&a5, &p5, true).unwrap();
    let rm = fit(&rel, &FitConfig::default()).unwrap();
    let all_one = rm.alphas.as_slice().iter().all(|&x| x == 1.0);
    let out = debias_batch(&rel, &rm).unwrap();
    let err = out.sub(&rel.relations).unwrap().max_abs();

    let (pa, pp) = planted(1);
    let prel = build_relations::<f64>(&pa, &pp, true).unwrap();
    let frozen = fit(&prel, &FitConfig { eta: 0.0, ..FitConfig::default() }).unwrap();
    let eta_one = frozen.alphas.as_slice().iter().all(|&x| x == 1.0);
    let eta_err = debias_batch(&prel, &frozen).unwrap().sub(&prel.relations).unwrap().max_abs();
    let (fast, time) = within(Duration::from_secs(1), start);
    outcome(
        all_one && err < 1e-9 && eta_one && eta_err < 1e-9 && fast,
        format!("homogeneous alpha==1:{all_one} err={err:.1e}; eta=0 alpha==1:{eta_one} err={eta_err:.1e}; time={time}"),
    )
}

/// Direct evaluation of the shrink rule from raw source means, with no
/// library code involved.
fn shrink_oracle(means: &[Vec<f64>], eta: f64, gamma: f64, eps: f64) -> Vec<Vec<f64>> {
    let s = means.len();
    let d = means[0].len();
    let med = |mut v: Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    };
    let m: Vec<f64> = (0..d).map(|j| med(means.iter().map(|r| r[j]).collect())).collect();
    let v: Vec<f64> = (0..d)
        .map(|j| means.iter().map(|r| (r[j] - m[j]).powi(2)).sum::<f64>() / s as f64)
        .collect();
    let v_med = med(v.clone());
    let mad = med(v.iter().map(|x| (x - v_med).abs()).collect());
    let tau = v_med + gamma * (mad + eps);
    let band: Vec<f64> = (0..d)
        .map(|j| gamma * means.iter().map(|r| (r[j] - m[j]).abs()).sum::<f64>() / s as f64)
        .collect();
    let mut alpha = vec![vec![1.0; d]; s];
    for j in 0..d {
        if v[j] <= tau {
            continue;
        }
        for src in 0..s {
            let mu = means[src][j];
            let delta = mu - m[j];
            if delta.abs() < band[j] {
                continue;
            }
            let edge = m[j] + delta.signum() * band[j];
            alpha[src][j] = (1.0 + eta * (edge - mu) / (mu.abs() + eps)).clamp(0.0, 2.0);
        }
    }
    alpha
}

fn ac3() -> Outcome {
    let start = Instant::now();
    // dimension 0 is the hand case; the others are quiet
    let rows = vec![
        vec![1.0, 0.0, 0.2, 0.0],
        vec![2.0, 0.1, 0.0, 0.0],
        vec![10.0, 0.0, 0.1, 0.05],
    ];
    let means = DenseMatrix::from_rows(&rows).unwrap();
    let cfg = FitConfig::default();
    let stats = SourceStats::compute(means, Aggregation::Median, cfg.gamma).unwrap();
    let tau = reze::fit::global_threshold(&stats.scores, 4, cfg.gamma, cfg.epsilon).unwrap();
    let lib = shrink_factors(&stats, 4, tau, &cfg);
    let oracle = shrink_oracle(&rows, cfg.eta, cfg.gamma, cfg.epsilon);
    let expected = [1.0, 1.0, 0.65];
    let lib_err = (0..3).map(|s| (lib[(s, 0)] - expected[s]).abs()).fold(0.0, f64::max);
    let oracle_err = (0..3).map(|s| (oracle[s][0] - expected[s]).abs()).fold(0.0, f64::max);
    let stats_ok = stats.reference[0] == 2.0 && stats.bands[0] == 3.0;
    let (fast, time) = within(Duration::from_secs(1), start);
    outcome(
        lib_err < 1e-9 && oracle_err < 1e-9 && stats_ok && fast,
        format!(
            "alpha=({:.4},{:.4},{:.4}) lib_err={lib_err:.1e} oracle_err={oracle_err:.1e} time={time}",
            lib[(0, 0)],
            lib[(1, 0)],
            lib[(2, 0)]
        ),
    )
}

fn planted_reduction(seed: u64, config: &FitConfig) -> (bool, f64) {
    let (a, p) = planted(seed);
    let rel = build_relations::<f64>(&a, &p, true).unwrap();
    let rm = fit(&rel, config).unwrap();
    let flagged = rm.flagged_dims().unwrap_or_default();
    let aligned = flagged.iter().any(|&j| rm.basis.vectors[(0, j)].abs() > 0.5);
    let after = debias_batch(&rel, &rm).unwrap();
    let report = dispersion_report(&rel, &after, &rm).unwrap();
    (aligned, report.flagged_reduction())
}

fn ac4() -> (Outcome, String) {
    let start = Instant::now();
    let mut ok = 0;
    let mut reductions = Vec::new();
    for seed in 0..5 {
        let (aligned, red) = planted_reduction(seed, &signed());
        if aligned && red >= 0.5 {
            ok += 1;
        }
        reductions.push(format!("{red:.2}"));
    }
    let (fast, time) = within(Duration::from_secs(10), start);
    let literal: Vec<String> = (0..5)
        .map(|seed| format!("{:.2}", planted_reduction(seed, &FitConfig::default()).1))
        .collect();
    (
        outcome(
            ok == 5 && fast,
            format!("shrink_mode=signed {ok}/5 seeds; reductions=[{}] time={time}", reductions.join(",")),
        ),
        format!(
            "shrink_mode=literal reductions=[{}] (informational, see README)",
            literal.join(",")
        ),
    )
}

fn ac5() -> Outcome {
    let start = Instant::now();
    let step = 1e-5;
    let (b, d) = (8, 16);
    let anchors = gaussian(b, d, 1);
    let positives = gaussian(b, d, 2);
    let relations = concat_halves(&anchors, &positives).unwrap();
    let targets = gaussian(b, 2 * d, 3);

    let analytic = reze_loss_grad(&relations, &targets).unwrap();
    let numeric = numeric_grad(&relations, step, |r| reze_loss(r, &targets).unwrap());
    let e_reze = max_rel_error(&analytic, &numeric);

    let tau = 0.05;
    let (ga, gp) = info_nce_grad(&anchors, &positives, tau).unwrap();
    let na = numeric_grad(&anchors, step, |a| info_nce(a, &positives, tau).unwrap());
    let np = numeric_grad(&positives, step, |p| info_nce(&anchors, p, tau).unwrap());
    let e_main = max_rel_error(&ga, &na).max(max_rel_error(&gp, &np));

    let (a, p) = planted(3);
    let rel = build_relations::<f64>(&a, &p, true).unwrap();
    let rm = fit(&rel, &signed()).unwrap();
    let rows: Vec<usize> = (0..b).map(|i| i * 250).collect();
    let batch = Batch::from_dumps(&a, &p, &rows).unwrap();
    let enc = LinearEncoder::perturbed_identity(d, 0.2, 4);
    let e_combined = encoder_grad_check(&enc, &batch, &rm, &ObjectiveConfig::default(), step).unwrap();
    let pft = ObjectiveConfig {
        reg_weight: 0.0,
        ..ObjectiveConfig::default()
    };
    let e_pft = encoder_grad_check(&enc, &batch, &rm, &pft, step).unwrap();
    let worst = e_reze.max(e_main).max(e_combined).max(e_pft);
    let (fast, time) = within(Duration::from_secs(5), start);
    outcome(
        worst < 1e-4 && fast,
        format!(
            "reze={e_reze:.1e} main={e_main:.1e} combined={e_combined:.1e} main_only={e_pft:.1e} (B={b}, d={d}) time={time}"
        ),
    )
}

fn ac6() -> Outcome {
    let m = |rows: &[[f64; 2]]| DenseMatrix::from_rows(rows).unwrap();
    let one = info_nce(&m(&[[0.3, -1.0]]), &m(&[[2.0, 0.5]]), 0.05).unwrap();
    let uniform = info_nce(&m(&[[1.0, 0.0], [1.0, 0.0]]), &m(&[[1.0, 1.0], [1.0, 1.0]]), 0.05).unwrap();
    let e = m(&[[1.0, 0.0], [0.0, 1.0]]);
    let separated = info_nce(&e, &e, 0.05).unwrap();
    let closed = (-20.0f64).exp().ln_1p();
    let e_uniform = (uniform - std::f64::consts::LN_2).abs();
    let e_sep = (separated - closed).abs();
    outcome(
        one == 0.0 && e_uniform < 1e-9 && e_sep < 1e-12,
        format!("B=1 -> {one}; uniform err={e_uniform:.1e}; separated err={e_sep:.1e}"),
    )
}

struct TrainOutcome {
    iso: [f64; 2],
    displacement: [f64; 2],
}

fn train_pair(seed: u64) -> TrainOutcome {
    let (a, p) = planted(seed);
    let rel = build_relations::<f64>(&a, &p, true).unwrap();
    let rm = fit(&rel, &signed()).unwrap();
    let id = LinearEncoder::identity(PLANTED_DIM);
    let mut out = TrainOutcome {
        iso: [0.0; 2],
        displacement: [0.0; 2],
    };
    for (slot, w) in [0.0, 1.0].into_iter().enumerate() {
        let config = TrainConfig {
            steps: 500,
            batch: 32,
            learning_rate: 0.05,
            objective: ObjectiveConfig {
                temperature: 0.05,
                reg_weight: w,
            },
            shuffle_seed: seed,
            mixed_batches: true,
        };
        let h = train(&a, &p, &rm, &id, &id, &config).unwrap();
        out.iso[slot] = h.after.isoscore;
        out.displacement[slot] = h.after.displacement;
    }
    out
}

fn ac7_ac8() -> (Outcome, Outcome) {
    let start = Instant::now();
    let runs: Vec<TrainOutcome> = (0..5).map(train_pair).collect();
    let (fast, time) = within(Duration::from_secs(60), start);
    let iso_wins = runs.iter().filter(|r| r.iso[1] > r.iso[0]).count();
    let disp_wins = runs.iter().filter(|r| r.displacement[1] < r.displacement[0]).count();
    let iso: Vec<String> = runs.iter().map(|r| format!("{:.3}/{:.3}", r.iso[0], r.iso[1])).collect();
    let disp: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.3}/{:.3}", r.displacement[0], r.displacement[1]))
        .collect();
    (
        outcome(
            iso_wins >= 4 && fast,
            format!("{iso_wins}/5 seeds; isoscore w=0/w=1 [{}] time={time}", iso.join(" ")),
        ),
        outcome(
            disp_wins == 5,
            format!("{disp_wins}/5 seeds; displacement w=0/w=1 [{}]", disp.join(" ")),
        ),
    )
}

fn ac9() -> Outcome {
    let start = Instant::now();
    let mut ok = 0;
    let mut notes = Vec::new();
    for seed in 0..5 {
        let (a, p, _) = generate(&outlier_config(seed)).unwrap();
        let rel = build_relations::<f64>(&a, &p, true).unwrap();
        let normal: Vec<usize> = (0..4).collect();
        let mut counts = [0usize; 2];
        let mut scatter = [0.0; 2];
        for (slot, aggregation) in [Aggregation::Median, Aggregation::Mean].into_iter().enumerate() {
            let rm = fit(&rel, &FitConfig { aggregation, ..signed() }).unwrap();
            counts[slot] = normal
                .iter()
                .map(|&s| rm.alpha_row(s).unwrap().iter().filter(|&&x| x != 1.0).count())
                .sum();
            let after = debias_batch(&rel, &rm).unwrap();
            scatter[slot] = between_source_scatter(&after, &rel.source_ids, &normal);
        }
        if counts[0] < counts[1] && scatter[0] < scatter[1] {
            ok += 1;
        }
        notes.push(format!("{}/{} {:.4}/{:.4}", counts[0], counts[1], scatter[0], scatter[1]));
    }
    let (fast, time) = within(Duration::from_secs(10), start);
    outcome(
        ok == 5 && fast,
        format!("{ok}/5 seeds; median/mean shrunk entries, scatter [{}] time={time}", notes.join(" | ")),
    )
}

fn ac10() -> Outcome {
    // correlated, anisotropic fitting set
    let raw = gaussian(4000, 8, 21);
    let mut mix = gaussian(8, 8, 22);
    for i in 0..8 {
        mix[(i, i)] += 3.0;
    }
    let x = raw.matmul(&mix).unwrap();
    let w = whitening_fit(&x).unwrap();
    let white = w.apply_rows(&x).unwrap();
    let mean = white.column_means();
    let mut centered = white.clone();
    for i in 0..centered.rows() {
        centered.row_mut(i).iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
    }
    let cov = covariance(&centered).unwrap();
    let cov_err = cov.sub(&DenseMatrix::identity(8)).unwrap().max_abs();
    let iso_white = isoscore(&white).unwrap().score;
    let line = DenseMatrix::from_vec(50, 4, (0..200).map(|i| if i % 4 == 2 { (i / 4) as f64 } else { 0.0 }).collect())
        .unwrap();
    let iso_line = isoscore(&line).unwrap().score;
    outcome(
        cov_err < 1e-8 && iso_white > 0.95 && iso_line.abs() < 1e-9,
        format!("cov err={cov_err:.1e} isoscore(white)={iso_white:.4} isoscore(1-D)={iso_line:.1e}"),
    )
}

fn ac11() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (a, p) = planted(7);
    let ap = dir.path().join("a.rzd");
    let pp = dir.path().join("p.rzd");
    reze::io::write_dump(&a, &ap).unwrap();
    reze::io::write_dump(&p, &pp).unwrap();
    let bin = env!("CARGO_BIN_EXE_reze");
    let run_fit = |out: &str| {
        Command::new(bin)
            .args(["fit", "--anchors"])
            .arg(&ap)
            .arg("--positives")
            .arg(&pp)
            .arg("--out")
            .arg(dir.path().join(out))
            .output()
            .unwrap()
            .status
            .success()
    };
    let fits_ok = run_fit("one.rzm") && run_fit("two.rzm");
    let one = std::fs::read(dir.path().join("one.rzm")).unwrap_or_default();
    let two = std::fs::read(dir.path().join("two.rzm")).unwrap_or_default();
    let rerun_identical = fits_ok && !one.is_empty() && one == two;

    let dump_bytes = std::fs::read(&ap).unwrap();
    let dump_rt = encode_dump(&decode_dump(&dump_bytes).unwrap()).unwrap() == dump_bytes;
    let rzm_rt = decode_rzm(&one).and_then(|rm| encode_rzm(&rm)).map(|b| b == one).unwrap_or(false);

    let mut offsets_ok = true;
    for bytes in [&dump_bytes, &one] {
        for cut in [0, 3, 4, 9, 17, bytes.len() / 2, bytes.len() - 1] {
            let truncated = &bytes[..cut];
            let err = if bytes[..4] == *b"REZD" {
                decode_dump(truncated).err()
            } else {
                decode_rzm(truncated).err()
            };
            let want = cut as u64;
            offsets_ok &= matches!(err, Some(RezeError::Format { offset, .. }) if offset == want);
        }
    }
    let cut_path = dir.path().join("cut.rzd");
    std::fs::write(&cut_path, &dump_bytes[..dump_bytes.len() - 5]).unwrap();
    let cli = Command::new(bin).arg("isoscore").arg("--input").arg(&cut_path).output().unwrap();
    let stderr = String::from_utf8_lossy(&cli.stderr);
    let cli_ok = cli.status.code() == Some(2) && stderr.contains(&format!("offset {}", dump_bytes.len() - 5));
    outcome(
        rerun_identical && dump_rt && rzm_rt && offsets_ok && cli_ok,
        format!(
            "fit rerun identical:{rerun_identical} dump round trip:{dump_rt} rzm round trip:{rzm_rt} truncation offsets:{offsets_ok} cli exit 2:{cli_ok}"
        ),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, &str, Outcome)> = Vec::new();
    results.push(("AC-1", "EVD fidelity", ac1()));
    results.push(("AC-2", "identity/no-op chain", ac2()));
    results.push(("AC-3", "hand-computed shrink", ac3()));
    let (four, literal_note) = ac4();
    results.push(("AC-4", "planted-bias suppression", four));
    results.push(("AC-5", "gradient fidelity", ac5()));
    results.push(("AC-6", "closed-form losses", ac6()));
    let (seven, eight) = ac7_ac8();
    results.push(("AC-7", "isotropy direction", seven));
    results.push(("AC-8", "shift control direction", eight));
    results.push(("AC-9", "median-vs-mean robustness", ac9()));
    results.push(("AC-10", "whitening baseline", ac10()));
    results.push(("AC-11", "format determinism", ac11()));

    let mut failed = 0;
    for (id, name, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{id} {tag} {name}: {}", o.detail);
        if *id == "AC-4" {
            println!("      note: {literal_note}");
        }
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {}/{} passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
