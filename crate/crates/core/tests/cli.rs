use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bbr_loss_lab::report::read_csv;

const BIN: &str = env!("CARGO_BIN_EXE_bbr-loss-lab");

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("BBR_LOSS_LAB_OUT")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn value_of(out: &str, kind: &str) -> f64 {
    let line = out
        .lines()
        .find(|l| l.split_whitespace().next() == Some(kind))
        .unwrap();
    line.split_whitespace().nth(1).unwrap().parse().unwrap()
}

#[test]
fn eval_prints_loss_values() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "eval",
            "--pred",
            "0.5,0.5,1,1",
            "--gt",
            "1,0.5,1,1",
            "--kinds",
            "iou,niou",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!((value_of(&out, "iou") - 2.0 / 3.0).abs() < 1e-12);
    assert!((value_of(&out, "niou") - 1.0 / 6.0).abs() < 1e-12);

    let o = run(
        &["eval", "--pred", "0,0,1,1", "--gt", "0,0,1,1"],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    for kind in ["iou", "giou", "diou", "ciou", "eiou", "niou", "neiou"] {
        assert_eq!(value_of(&out, kind), 0.0, "{kind}");
    }
}

#[test]
fn eval_corner_form_matches_center_form() {
    let dir = tempfile::tempdir().unwrap();
    let center = run(
        &["eval", "--pred", "0.5,0.5,1,1", "--gt", "1,0.5,1,1"],
        dir.path(),
    );
    let corner = run(
        &[
            "eval",
            "--corners",
            "--pred",
            "0,0,1,1",
            "--gt",
            "0.5,0,1.5,1",
        ],
        dir.path(),
    );
    assert_eq!(code(&corner), 0, "{}", stderr(&corner));
    assert_eq!(stdout(&center), stdout(&corner));
}

#[test]
fn eval_writes_csv_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "eval",
            "--pred",
            "0,0,2,1",
            "--gt",
            "0.3,0,1,1",
            "--kinds",
            "ciou",
            "--csv",
            "e.csv",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let t = read_csv(&dir.path().join("e.csv")).unwrap();
    assert_eq!(t.column("kind").unwrap(), ["ciou"]);
    assert_eq!(t.meta("command"), Some("eval"));
}

#[test]
fn invalid_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[&[&str]] = &[
        &["eval", "--pred", "0,0,0,1", "--gt", "0,0,1,1"],
        &["eval", "--pred", "0,0,1", "--gt", "0,0,1,1"],
        &["eval", "--corners", "--pred", "1,0,0,1", "--gt", "0,0,1,1"],
        &[
            "eval", "--pred", "0,0,1,1", "--gt", "0,0,1,1", "--kinds", "fooiou",
        ],
        &["eval", "--pred", "0,0,1,1", "--gt", "0,0,1,1", "--n", "-1"],
        &["sweep", "--samples", "1"],
        &["sweep", "--mode", "rotate"],
        &["simulate", "--step-size", "0"],
        &["gradcheck", "--pairs", "0"],
        &["frobnicate"],
    ];
    for args in cases {
        let o = run(args, dir.path());
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
        assert!(!stderr(&o).is_empty());
    }
    assert!(stderr(&run(cases[0], dir.path())).contains("non-positive width"));
}

#[test]
fn gradcheck_passes_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["gradcheck", "--pairs", "500", "--seed", "4"], dir.path());
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    let t = read_csv(&dir.path().join("gradcheck.csv")).unwrap();
    assert_eq!(t.rows.len(), 8);
    assert_eq!(t.column("passed").unwrap(), vec!["true"; 8]);
    assert_eq!(t.meta("seed"), Some("4"));

    let o = run(
        &["gradcheck", "--kinds", "neiou", "--pairs", "100"],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
}

#[test]
fn gradcheck_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "gradcheck",
            "--pairs",
            "1",
            "--seed",
            "7",
            "--tol-rel",
            "1e-15",
            "--tol-abs",
            "1e-18",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 1, "{}", stdout(&o));
    let t = read_csv(&dir.path().join("gradcheck.csv")).unwrap();
    assert_eq!(t.column("passed").unwrap().last(), Some(&"false"));
}

#[test]
fn sweep_writes_table_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sweep", "--seed", "1"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let t = read_csv(&dir.path().join("sweep_translate.csv")).unwrap();
    assert_eq!(t.rows.len(), 200 * 7);
    let svg = fs::read_to_string(dir.path().join("sweep_translate.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 7);

    let o = run(
        &[
            "sweep",
            "--samples",
            "2",
            "--kinds",
            "iou",
            "--format",
            "csv",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    assert_eq!(
        read_csv(&dir.path().join("sweep_translate.csv"))
            .unwrap()
            .rows
            .len(),
        2
    );

    let o = run(
        &[
            "sweep",
            "--mode",
            "scale",
            "--samples",
            "20",
            "--format",
            "svg",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("sweep_scale.svg").exists());
    assert!(!dir.path().join("sweep_scale.csv").exists());
}

#[test]
fn simulate_without_iterations_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--iterations", "0"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let t = read_csv(&dir.path().join("sim_error.csv")).unwrap();
    assert_eq!(t.rows.len(), 1);
    let first: Vec<&String> = t.rows[0][1..].iter().collect();
    assert_eq!(first.len(), 7);
    assert!(first.iter().all(|v| *v == first[0]));
    assert!(!dir.path().join("sim_error.svg").exists());
}

#[test]
fn simulate_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "simulate",
        "--iterations",
        "20",
        "--radii",
        "0.5,1.5",
        "--ring-points",
        "6",
        "--jitter",
        "0.05",
        "--seed",
        "3",
        "--per-anchor",
    ];
    let mut files = Vec::new();
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        let mut full: Vec<&str> = args.to_vec();
        let out_s = out.to_str().unwrap().to_string();
        full.extend(["--out-dir", &out_s]);
        let o = run(&full, dir.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        files.push(
            ["sim_error.csv", "sim_error.svg", "sim_final.csv"]
                .map(|f| fs::read(out.join(f)).unwrap()),
        );
    }
    assert_eq!(files[0], files[1]);
    let fin = read_csv(&dir.path().join("a/sim_final.csv")).unwrap();
    assert_eq!(fin.rows.len(), 7 * 2 * 6 * 49);
}

#[test]
fn help_documents_defaults() {
    let dir = tempfile::tempdir().unwrap();
    for (sub, needle) in [
        ("eval", "--corners"),
        ("gradcheck", "[default: 10000]"),
        ("sweep", "[default: 200]"),
        ("simulate", "[default: 0.1]"),
    ] {
        let o = run(&[sub, "--help"], dir.path());
        assert_eq!(code(&o), 0);
        let text = stdout(&o);
        assert!(text.contains(needle), "{sub}: {text}");
        assert!(text.contains("[default: 9]"), "{sub}");
    }
    assert_eq!(code(&run(&["--help"], dir.path())), 0);
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("env_out");
    let o = Command::new(BIN)
        .args(["sweep", "--samples", "5", "--format", "csv"])
        .current_dir(dir.path())
        .env("BBR_LOSS_LAB_OUT", &target)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(target.join("sweep_translate.csv").exists());

    // a flag beats the environment
    let flag = dir.path().join("flag_out");
    let o = Command::new(BIN)
        .args(["sweep", "--samples", "5", "--format", "csv", "--out-dir"])
        .arg(&flag)
        .current_dir(dir.path())
        .env("BBR_LOSS_LAB_OUT", &target)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(flag.join("sweep_translate.csv").exists());
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("lab.conf"),
        "# sweep settings\nsamples = 7\nkinds = iou,ciou\nformat = csv\n",
    )
    .unwrap();
    let o = run(&["sweep", "--config", "lab.conf"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let t = read_csv(&dir.path().join("sweep_translate.csv")).unwrap();
    assert_eq!(t.rows.len(), 14);
    assert!(!dir.path().join("sweep_translate.svg").exists());
    assert!(t.meta("config").unwrap().contains("kinds=iou,ciou"));

    let o = run(
        &["sweep", "--config", "lab.conf", "--samples", "3"],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    assert_eq!(
        read_csv(&dir.path().join("sweep_translate.csv"))
            .unwrap()
            .rows
            .len(),
        6
    );

    fs::write(dir.path().join("bad.conf"), "sampels = 7\n").unwrap();
    assert_eq!(
        code(&run(&["sweep", "--config", "bad.conf"], dir.path())),
        2
    );
}

#[test]
fn unwritable_output_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = run(
        &["sweep", "--samples", "3", "--out-dir", "file/sub"],
        dir.path(),
    );
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}
