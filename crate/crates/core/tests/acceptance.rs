//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::fmt::Write as _;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use bbr_loss_lab::numcheck::sample_pairs;
use bbr_loss_lab::{
    aspect_penalty_grad, ciou_internals, gradient_sweep, loss, niou_metric, regression_sim,
    run_gradcheck, BBox, FdConfig, LossKind, SimConfig, SweepConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BIN: &str = env!("CARGO_BIN_EXE_bbr-loss-lab");
const N: f64 = 9.0;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn timed(budget: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    let _ = write!(
        o.detail,
        "; {:.2} s (budget {} s)",
        took.as_secs_f64(),
        budget.as_secs()
    );
    if took > budget {
        o.passed = false;
    }
    o
}

fn gradient_oracle() -> Outcome {
    timed(Duration::from_secs(10), || {
        let cfg = FdConfig::default();
        let r = run_gradcheck(&LossKind::all(N), 10_000, 42, &cfg).unwrap();
        let skip = r.skip_fraction();
        let mut detail = format!(
            "max rel err {:.3e} (tol {:e}, abs floor {:e}), skipped {}/{} = {:.2}%",
            r.max_rel_err,
            cfg.tol_rel,
            cfg.tol_abs,
            r.pairs_skipped,
            r.pairs_generated(),
            100.0 * skip
        );
        if let Some(w) = &r.worst_case {
            let _ = write!(detail, ", worst {} component {}", w.kind, w.component);
        }
        outcome(r.passed && r.max_rel_err <= 1e-6 && skip < 0.02, detail)
    })
}

fn see_saw() -> Outcome {
    timed(Duration::from_secs(1), || {
        let mut worst = 0.0f64;
        for (pred, gt) in sample_pairs(1000, 2) {
            let (dw, dh) = aspect_penalty_grad(&pred, &gt);
            let lhs = (pred.w() * dw + pred.h() * dh).abs();
            worst = worst.max(lhs / (1e-12 * (pred.w() * dw).abs().max(1.0)));
        }
        outcome(
            worst <= 1.0,
            format!("worst |w dv/dw + h dv/dh| at {:.3} of its bound", worst),
        )
    })
}

fn ciou_scale_blindness() -> Outcome {
    // gt sides on a 1/64 grid, so 0.5x, 2x and 3x are exact
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut gts = vec![
        BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
        BBox::new(0.25, -0.5, 2.0, 0.5).unwrap(),
    ];
    for _ in 0..200 {
        let q = |k: u32| f64::from(k) / 64.0;
        gts.push(
            BBox::new(
                q(rng.random_range(0..256)),
                q(rng.random_range(0..256)),
                q(rng.random_range(4..256)),
                q(rng.random_range(4..256)),
            )
            .unwrap(),
        );
    }
    let mut bad = Vec::new();
    let mut checked = 0;
    for gt in &gts {
        for k in [0.5, 2.0, 3.0] {
            let pred = BBox::new(gt.cx(), gt.cy(), k * gt.w(), k * gt.h()).unwrap();
            let v = ciou_internals(&pred, gt).v;
            let eiou = loss(LossKind::Eiou, &pred, gt).unwrap().terms.aspect;
            let neiou = loss(LossKind::Neiou { n: N }, &pred, gt)
                .unwrap()
                .terms
                .aspect;
            let ciou = loss(LossKind::Ciou, &pred, gt).unwrap().terms.aspect;
            if !(v == 0.0 && ciou == 0.0 && eiou > 0.0 && neiou > 0.0) {
                bad.push(format!(
                    "gt {gt} k {k}: v {v:e} eiou {eiou:e} neiou {neiou:e}"
                ));
            }
            checked += 1;
        }
    }
    outcome(
        bad.is_empty(),
        format!(
            "{checked} cases, {} violations {}",
            bad.len(),
            bad.first().cloned().unwrap_or_default()
        ),
    )
}

fn niou_value() -> Outcome {
    let pred = BBox::new(0.5, 0.5, 1.0, 1.0).unwrap();
    let gt = BBox::new(1.0, 0.5, 1.0, 1.0).unwrap();
    let v = loss(LossKind::Niou { n: N }, &pred, &gt).unwrap().value;
    let err = (v - 1.0 / 6.0).abs();
    outcome(
        err <= 1e-12,
        format!("loss {v:?}, |loss - 1/6| = {err:.3e}"),
    )
}

fn focusing_contrast() -> Outcome {
    timed(Duration::from_secs(1), || {
        let kinds = vec![
            LossKind::Iou,
            LossKind::Ciou,
            LossKind::Niou { n: N },
            LossKind::Neiou { n: N },
        ];
        let cfg = SweepConfig::new(kinds);
        let r = gradient_sweep(&cfg).unwrap();
        let norms = |k| {
            r.rows_for(k)
                .map(|row| (row.iou, row.grad_norm))
                .collect::<Vec<_>>()
        };
        let (iou, ciou) = (norms(LossKind::Iou), norms(LossKind::Ciou));
        let (niou, neiou) = (
            norms(LossKind::Niou { n: N }),
            norms(LossKind::Neiou { n: N }),
        );
        let mut in_band = 0;
        let mut fails = Vec::new();
        for i in 0..iou.len() {
            let x = iou[i].0;
            if !(0.1..=0.4).contains(&x) {
                continue;
            }
            in_band += 1;
            if !(neiou[i].1 > ciou[i].1 && niou[i].1 > iou[i].1) {
                fails.push((x, neiou[i].1, ciou[i].1, niou[i].1, iou[i].1));
            }
        }
        let mut detail = format!(
            "{} of {in_band} samples with IoU in [0.1, 0.4] violate",
            fails.len()
        );
        // the sweep runs toward falling IoU, so the last violation is the lowest
        if let (Some(first), Some(last)) = (fails.first(), fails.last()) {
            let _ = write!(
                detail,
                "; violations span IoU {:.4}..{:.4}; at IoU {:.4}: |g| neiou {:.4} vs ciou {:.4}, niou {:.4} vs iou {:.4}; \
                 N-IoU/IoU gain (1+n)/(1+n x)^2 falls below 1 above x = {:.4}",
                last.0.min(first.0),
                last.0.max(first.0),
                last.0,
                last.1,
                last.2,
                last.3,
                last.4,
                ((1.0 + N).sqrt() - 1.0) / N
            );
        }
        outcome(in_band > 0 && fails.is_empty(), detail)
    })
}

fn simulation_convergence() -> Outcome {
    timed(Duration::from_secs(60), || {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let cfg = SimConfig::new(vec![LossKind::Ciou, LossKind::Neiou { n: N }]);
        let r = pool.install(|| regression_sim(&cfg)).unwrap();
        let ciou = r.series_for(LossKind::Ciou).unwrap();
        let neiou = r.series_for(LossKind::Neiou { n: N }).unwrap();
        let ratio = |s: &bbr_loss_lab::simulation::KindSeries| s.final_total() / s.initial();
        let passed =
            neiou.final_total() <= ciou.final_total() && ratio(ciou) < 0.5 && ratio(neiou) < 0.5;
        outcome(
            passed,
            format!(
                "{} triples, final error neiou {:.2} vs ciou {:.2}, final/initial neiou {:.4} ciou {:.4}",
                r.triples_per_kind,
                neiou.final_total(),
                ciou.final_total(),
                ratio(neiou),
                ratio(ciou)
            ),
        )
    })
}

fn identity_and_sign() -> Outcome {
    let kinds = LossKind::all(N);
    let mut negatives = 0;
    for (pred, gt) in sample_pairs(10_000, 7) {
        for &k in &kinds {
            let v = loss(k, &pred, &gt).unwrap().value;
            if v.is_nan() || v < 0.0 {
                negatives += 1;
            }
        }
    }
    let (mut worst_value, mut worst_grad) = (0.0f64, 0.0f64);
    for (b, _) in sample_pairs(1000, 8) {
        for &k in &kinds {
            let r = loss(k, &b, &b).unwrap();
            worst_value = worst_value.max(r.value.abs());
            worst_grad = r.grad.iter().fold(worst_grad, |m, g| m.max(g.abs()));
        }
    }
    outcome(
        negatives == 0 && worst_value <= 1e-12 && worst_grad <= 1e-12,
        format!("{negatives} negative values; at identity max |loss| {worst_value:e}, max |grad| {worst_grad:e}"),
    )
}

fn decomposition() -> Outcome {
    let mut worst = 0.0f64;
    for (pred, gt) in sample_pairs(1000, 9) {
        let neiou = loss(LossKind::Neiou { n: N }, &pred, &gt).unwrap().value;
        let niou = loss(LossKind::Niou { n: N }, &pred, &gt).unwrap().value;
        let eiou = loss(LossKind::Eiou, &pred, &gt).unwrap().terms;
        worst = worst.max((neiou - (niou + eiou.penalty + eiou.aspect)).abs());
    }
    outcome(
        worst <= 1e-12,
        format!("max |neiou - (niou + dist + asp)| = {worst:.3e}"),
    )
}

fn run_cli(args: &[&str], out: &Path, threads: Option<&str>) -> Result<(), String> {
    let mut cmd = Command::new(BIN);
    cmd.args(args)
        .arg("--out-dir")
        .arg(out)
        .env_remove("BBR_LOSS_LAB_OUT");
    match threads {
        Some(t) => cmd.env("RAYON_NUM_THREADS", t),
        None => cmd.env_remove("RAYON_NUM_THREADS"),
    };
    let o = cmd.output().map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{args:?} exited {:?}: {}",
            o.status.code(),
            String::from_utf8_lossy(&o.stderr)
        ))
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let runs: [(&[&str], &str); 3] = [
        (&["sweep", "--format", "csv"], "sweep_translate.csv"),
        (
            &["simulate", "--format", "csv", "--per-anchor"],
            "sim_error.csv",
        ),
        (
            &["gradcheck", "--pairs", "10000", "--seed", "42"],
            "gradcheck.csv",
        ),
    ];
    let mut compared = 0;
    let mut diffs = Vec::new();
    for (args, file) in runs {
        let mut contents = Vec::new();
        for (i, threads) in [None, Some("4"), Some("1")].into_iter().enumerate() {
            let out = dir.path().join(format!("{}-{i}", args[0]));
            if let Err(e) = run_cli(args, &out, threads) {
                return outcome(false, e);
            }
            let mut files = vec![std::fs::read(out.join(file)).unwrap()];
            if args[0] == "simulate" {
                files.push(std::fs::read(out.join("sim_final.csv")).unwrap());
            }
            contents.push(files);
        }
        compared += contents[0].len();
        if contents.iter().any(|c| *c != contents[0]) {
            diffs.push(args[0]);
        }
    }
    outcome(
        diffs.is_empty(),
        format!(
            "{compared} CSV files x 3 runs (default, 4 threads, 1 thread); differing: {diffs:?}"
        ),
    )
}

fn niou_closed_form() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for i in 0..10_000 {
        let u: f64 = 10f64.powf(rng.random_range(-3.0..3.0));
        let inter = match i {
            0 => 0.0,
            1 => u,
            _ => u * rng.random_range(0.0..=1.0),
        };
        let x = inter / u;
        let expected = 10.0 * x / (1.0 + 9.0 * x);
        let got = niou_metric(inter, u, 9.0);
        worst = worst.max((got - expected).abs() / expected.max(1.0));
    }
    outcome(worst <= 1e-12, format!("max deviation {worst:.3e}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("gradient oracle, 10000 pairs, seed 42", gradient_oracle),
        ("see-saw identity", see_saw),
        ("CIoU scale blindness", ciou_scale_blindness),
        ("N-IoU offset-square value", niou_value),
        ("focusing contrast in IoU [0.1, 0.4]", focusing_contrast),
        ("simulation convergence", simulation_convergence),
        ("zero at identity, non-negative", identity_and_sign),
        ("N-EIoU decomposition", decomposition),
        ("byte-identical CLI outputs", determinism),
        ("N-IoU closed form", niou_closed_form),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("{tag} [{:>2}] {name}: {}", i + 1, o.detail);
        failed += usize::from(!o.passed);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
