//! Command-line front end: `eval`, `gradcheck`, `sweep` and `simulate`.
//!
//! Settings resolve as flag > `--config` file (`key = value` lines, keys
//! named like the long flags) > built-in default. The effective settings are
//! echoed into the metadata block of every CSV written.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::losses::{loss, parse_kinds, LossKind, DEFAULT_N};
use crate::numcheck::{run_gradcheck, FdConfig};
use crate::report::{
    describe_sim, eval_table, fmt_num, gradcheck_table, render_svg, sim_final_table, sim_table,
    svg_document, sweep_table, write_atomic, write_csv, AxisSpec, CsvTable, PlotSpec, SeriesLayout,
};
use crate::simulation::{
    gradient_sweep, regression_sim, AnchorLayout, SimConfig, SweepConfig, SweepMode,
};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "BBR_LOSS_LAB_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "bbr-loss-lab",
    version,
    about = "IoU-family bounding-box regression losses: evaluation, gradient checks, sweeps and simulations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate every selected loss and its gradient for one box pair
    Eval(EvalArgs),
    /// Compare analytic gradients with central finite differences on random pairs
    Gradcheck(GradcheckArgs),
    /// Sweep gradient magnitude along a family of predicted boxes
    Sweep(SweepArgs),
    /// Run the anchor-regression simulation
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Svg,
    Both,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        <Format as ValueEnum>::from_str(s, true).map_err(Error::Config)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Comma-separated loss kinds: iou, giou, diou, ciou, eiou, niou, neiou [default: all seven]
    #[arg(long)]
    pub kinds: Option<String>,
    /// Focusing constant n of niou/neiou, dimensionless, > 0 [default: 9]
    #[arg(long)]
    pub n: Option<f64>,
    /// Output directory [default: $BBR_LOSS_LAB_OUT, else the current directory]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Which artifacts to write [default: both]
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Settings file of `key = value` lines using the long flag names
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Predicted box `cx,cy,w,h` (or `x1,y1,x2,y2` with --corners), length units
    #[arg(long, allow_hyphen_values = true)]
    pub pred: String,
    /// Ground-truth box, same form as --pred
    #[arg(long, allow_hyphen_values = true)]
    pub gt: String,
    /// Read boxes as corners `x1,y1,x2,y2` instead of `cx,cy,w,h`
    #[arg(long)]
    pub corners: bool,
    /// Also write the table to this CSV file [default: none]
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// Number of random box pairs [default: 10000]
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Finite-difference step relative to max(|coordinate|, 1) [default: 1e-5]
    #[arg(long)]
    pub step_rel: Option<f64>,
    /// Relative tolerance per gradient component [default: 1e-6]
    #[arg(long)]
    pub tol_rel: Option<f64>,
    /// Absolute tolerance floor per gradient component [default: 1e-9]
    #[arg(long)]
    pub tol_abs: Option<f64>,
    /// Skip pairs whose edges lie within this distance of each other, length units [default: 1e-4]
    #[arg(long)]
    pub margin: Option<f64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// translate (shift along +x by t), scale (co-centered, sides times k in [0.2, 2]) or translate_diagonal (shift by (t, t)) [default: translate]
    #[arg(long)]
    pub mode: Option<String>,
    /// Number of offsets sampled, >= 2 [default: 200]
    #[arg(long)]
    pub samples: Option<usize>,
    /// Target box `cx,cy,w,h`, length units [default: 0,0,1,1]
    #[arg(long, allow_hyphen_values = true)]
    pub target: Option<String>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Gradient-descent iterations [default: 200]
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Descent step size [default: 0.1]
    #[arg(long)]
    pub step_size: Option<f64>,
    /// Per-iteration multiplier on the step size, in (0, 1] [default: 1]
    #[arg(long)]
    pub step_decay: Option<f64>,
    /// Comma-separated ring radii around each target, length units [default: 0.3,0.6,1,1.5,2,2.5,3]
    #[arg(long)]
    pub radii: Option<String>,
    /// Anchor centers per ring [default: 16]
    #[arg(long)]
    pub ring_points: Option<usize>,
    /// Comma-separated anchor areas relative to the target area [default: 0.5,0.67,0.75,1,1.33,1.5,2]
    #[arg(long)]
    pub scales: Option<String>,
    /// Comma-separated anchor aspect ratios w/h [default: 0.25,0.333..,0.5,1,2,3,4]
    #[arg(long)]
    pub aspects: Option<String>,
    /// Half-width of uniform jitter on ring points, length units; uses --seed [default: 0]
    #[arg(long)]
    pub jitter: Option<f64>,
    /// Also write sim_final.csv with the final error of every anchor-target pair
    #[arg(long)]
    pub per_anchor: bool,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Exit status plus its cause.
#[derive(Debug)]
enum Failure {
    /// Invalid input or configuration: exit 2.
    Usage(Error),
    /// I/O or a failed check: exit 1.
    Run(Error),
    /// Check failed, message already printed.
    Check,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } => Failure::Run(e),
            other => Failure::Usage(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// `key = value` settings from `--config`.
#[derive(Debug, Default)]
struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    fn load(path: Option<&Path>, allowed: &[&str]) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Failure::Run(Error::io(path, e)))?;
        let mut values = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{}:{}: expected key = value",
                    path.display(),
                    lineno + 1
                ))
                .into());
            };
            let key = key.trim().replace('_', "-");
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "{}:{}: unknown key `{key}`",
                    path.display(),
                    lineno + 1
                ))
                .into());
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(raw) => raw.parse().map_err(|_| {
                Error::Config(format!("config value `{raw}` for `{key}` is invalid")).into()
            }),
            None => Ok(default),
        }
    }
}

const COMMON_KEYS: [&str; 5] = ["kinds", "n", "out-dir", "seed", "format"];

/// Settings shared by every subcommand after resolution.
struct Common {
    kinds: Vec<LossKind>,
    out_dir: PathBuf,
    seed: u64,
    format: Format,
    echo: Vec<(String, String)>,
}

impl Common {
    fn resolve(args: &CommonArgs, file: &ConfigFile) -> CliResult<Self> {
        let n = file.pick(args.n, "n", DEFAULT_N)?;
        let kinds_raw = file.pick(args.kinds.clone(), "kinds", String::new())?;
        let kinds = parse_kinds(&kinds_raw, n)?;
        let default_out = std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."));
        let out_dir = file.pick(args.out_dir.clone(), "out-dir", default_out)?;
        let seed = file.pick(args.seed, "seed", 0)?;
        let format = file.pick(args.format, "format", Format::Both)?;
        let echo = vec![
            (
                "kinds".to_string(),
                kinds
                    .iter()
                    .map(LossKind::name)
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("n".to_string(), fmt_num(n)),
            ("seed".to_string(), seed.to_string()),
        ];
        Ok(Common {
            kinds,
            out_dir,
            seed,
            format,
            echo,
        })
    }

    fn csv(&self) -> bool {
        matches!(self.format, Format::Csv | Format::Both)
    }

    fn svg(&self) -> bool {
        matches!(self.format, Format::Svg | Format::Both)
    }

    fn prepare_out_dir(&self) -> CliResult<()> {
        fs::create_dir_all(&self.out_dir).map_err(|e| Failure::Run(Error::io(&self.out_dir, e)))
    }

    fn stamp(&self, table: &mut CsvTable, subcommand: &str, extra: &[(String, String)]) {
        let config = self
            .echo
            .iter()
            .chain(extra)
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ");
        table
            .metadata
            .insert(1, ("command".into(), subcommand.into()));
        table.metadata.insert(2, ("config".into(), config));
        table
            .metadata
            .insert(3, ("seed".into(), self.seed.to_string()));
    }
}

fn parse_list(raw: &str, what: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("invalid number `{}` in {what}", s.trim())))
        })
        .collect()
}

/// Parses `a,b,c,d` as a box in center-size or corner form.
pub fn parse_box(raw: &str, corners: bool) -> Result<BBox> {
    let v = parse_list(raw, "box")?;
    let [a, b, c, d] = v[..] else {
        return Err(Error::Config(format!(
            "a box needs four comma-separated numbers, got `{raw}`"
        )));
    };
    Ok(if corners {
        BBox::from_corners(a, b, c, d)?
    } else {
        BBox::new(a, b, c, d)?
    })
}

/// Parses `argv` (program name first) and runs the subcommand. Returns the
/// process exit code: 0 success, 1 I/O failure or failed check, 2 invalid
/// input.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                2
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    let result = match &cli.command {
        Command::Eval(a) => eval(a, out),
        Command::Gradcheck(a) => gradcheck(a, out, err),
        Command::Sweep(a) => sweep(a, out),
        Command::Simulate(a) => simulate(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
        Err(Failure::Run(e)) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
        Err(Failure::Check) => 1,
    }
}

fn eval(args: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let file = ConfigFile::load(args.common.config.as_deref(), &COMMON_KEYS)?;
    let common = Common::resolve(&args.common, &file)?;
    let pred = parse_box(&args.pred, args.corners)?;
    let gt = parse_box(&args.gt, args.corners)?;

    let results = common
        .kinds
        .iter()
        .map(|&k| Ok((k, loss(k, &pred, &gt)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut table = eval_table(&pred, &gt, &results)?;
    common.stamp(&mut table, "eval", &[]);

    let widths: Vec<usize> = table
        .header
        .iter()
        .enumerate()
        .map(|(i, h)| {
            table
                .rows
                .iter()
                .map(|r| r[i].len())
                .chain([h.len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    let io = |e| Failure::Run(Error::io("<stdout>", e));
    writeln!(out, "{}", line(&table.header)).map_err(io)?;
    for row in &table.rows {
        writeln!(out, "{}", line(row)).map_err(io)?;
    }

    if let Some(path) = &args.csv {
        write_csv(&table, path).map_err(Failure::Run)?;
    }
    Ok(())
}

fn gradcheck(args: &GradcheckArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let mut keys = COMMON_KEYS.to_vec();
    keys.extend(["pairs", "step-rel", "tol-rel", "tol-abs", "margin"]);
    let file = ConfigFile::load(args.common.config.as_deref(), &keys)?;
    let common = Common::resolve(&args.common, &file)?;
    let d = FdConfig::default();
    let cfg = FdConfig {
        step_rel: file.pick(args.step_rel, "step-rel", d.step_rel)?,
        tol_rel: file.pick(args.tol_rel, "tol-rel", d.tol_rel)?,
        tol_abs: file.pick(args.tol_abs, "tol-abs", d.tol_abs)?,
        exclusion_margin: file.pick(args.margin, "margin", d.exclusion_margin)?,
    };
    let pairs = file.pick(args.pairs, "pairs", 10_000)?;

    let report = run_gradcheck(&common.kinds, pairs, common.seed, &cfg)?;
    let io = |e| Failure::Run(Error::io("<stdout>", e));
    writeln!(
        out,
        "pairs tested {}, skipped {} ({:.3}%), max relative error {:e} (tolerance {:e}, floor {:e})",
        report.pairs_tested,
        report.pairs_skipped,
        100.0 * report.skip_fraction(),
        report.max_rel_err,
        cfg.tol_rel,
        cfg.tol_abs
    )
    .map_err(io)?;
    for k in &report.per_kind {
        writeln!(
            out,
            "  {:<6} max relative error {:e}",
            k.kind.name(),
            k.max_rel_err
        )
        .map_err(io)?;
    }
    if let Some(w) = &report.worst_case {
        writeln!(
            out,
            "worst: {} d/d{} pred={} gt={} analytic={:e} numeric={:e}",
            w.kind.name(),
            ["cx", "cy", "w", "h"][w.component],
            w.pred,
            w.gt,
            w.analytic,
            w.numeric
        )
        .map_err(io)?;
    }

    if common.csv() {
        common.prepare_out_dir()?;
        let mut table = gradcheck_table(&report, &cfg)?;
        common.stamp(
            &mut table,
            "gradcheck",
            &[("pairs".into(), pairs.to_string())],
        );
        write_csv(&table, &common.out_dir.join("gradcheck.csv")).map_err(Failure::Run)?;
    }

    if report.passed {
        writeln!(out, "PASSED").map_err(io)?;
        Ok(())
    } else {
        let _ = writeln!(
            err,
            "FAILED: max relative error {:e} exceeds {:e}",
            report.max_rel_err, cfg.tol_rel
        );
        Err(Failure::Check)
    }
}

fn sweep(args: &SweepArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut keys = COMMON_KEYS.to_vec();
    keys.extend(["mode", "samples", "target"]);
    let file = ConfigFile::load(args.common.config.as_deref(), &keys)?;
    let common = Common::resolve(&args.common, &file)?;
    let mode: SweepMode = file
        .pick(args.mode.clone(), "mode", "translate".to_string())?
        .parse()?;
    let samples = file.pick(args.samples, "samples", 200)?;
    let target = parse_box(
        &file.pick(args.target.clone(), "target", "0,0,1,1".to_string())?,
        false,
    )?;

    let cfg = SweepConfig {
        target,
        mode,
        samples,
        kinds: common.kinds.clone(),
    };
    let report = gradient_sweep(&cfg)?;
    let mut table = sweep_table(&report)?;
    common.stamp(
        &mut table,
        "sweep",
        &[
            ("mode".into(), mode.name().into()),
            ("samples".into(), samples.to_string()),
            (
                "target".into(),
                args.target.clone().unwrap_or_else(|| "0,0,1,1".into()),
            ),
        ],
    );

    common.prepare_out_dir()?;
    let stem = format!("sweep_{}", mode.name());
    let spec = PlotSpec {
        title: format!("Gradient magnitude vs IoU ({} sweep)", mode.name()),
        x: AxisSpec {
            column: "iou".into(),
            label: "IoU".into(),
        },
        y_label: "gradient magnitude ||dL/d(cx,cy,w,h)||".into(),
        series: SeriesLayout::GroupBy {
            kind_column: "kind".into(),
            y_column: "grad_norm".into(),
        },
        log_y: false,
    };
    write_outputs(&common, &table, &spec, &stem, out)
}

fn write_outputs(
    common: &Common,
    table: &CsvTable,
    spec: &PlotSpec,
    stem: &str,
    out: &mut dyn Write,
) -> CliResult<()> {
    if common.svg() {
        // fail before touching the filesystem if the table cannot be plotted
        svg_document(table, spec)?;
    }
    let mut written = Vec::new();
    if common.csv() {
        let path = common.out_dir.join(format!("{stem}.csv"));
        write_csv(table, &path).map_err(Failure::Run)?;
        written.push(path);
    }
    if common.svg() {
        let path = common.out_dir.join(format!("{stem}.svg"));
        render_svg(table, spec, &path).map_err(Failure::Run)?;
        written.push(path);
    }
    for path in written {
        writeln!(out, "wrote {}", path.display())
            .map_err(|e| Failure::Run(Error::io("<stdout>", e)))?;
    }
    Ok(())
}

fn simulate(args: &SimulateArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut keys = COMMON_KEYS.to_vec();
    keys.extend([
        "iterations",
        "step-size",
        "step-decay",
        "radii",
        "ring-points",
        "scales",
        "aspects",
        "jitter",
    ]);
    let file = ConfigFile::load(args.common.config.as_deref(), &keys)?;
    let common = Common::resolve(&args.common, &file)?;
    let d = SimConfig::new(common.kinds.clone());
    let list = |flag: &Option<String>, key: &str, default: &[f64]| -> CliResult<Vec<f64>> {
        match file.pick(flag.clone(), key, String::new())? {
            s if s.is_empty() => Ok(default.to_vec()),
            s => Ok(parse_list(&s, key)?),
        }
    };
    let cfg = SimConfig {
        layout: AnchorLayout {
            ring_radii: list(&args.radii, "radii", &d.layout.ring_radii)?,
            points_per_ring: file.pick(
                args.ring_points,
                "ring-points",
                d.layout.points_per_ring,
            )?,
            scales: list(&args.scales, "scales", &d.layout.scales)?,
            aspect_ratios: list(&args.aspects, "aspects", &d.layout.aspect_ratios)?,
            jitter: file.pick(args.jitter, "jitter", d.layout.jitter)?,
        },
        iterations: file.pick(args.iterations, "iterations", d.iterations)?,
        step_size: file.pick(args.step_size, "step-size", d.step_size)?,
        step_decay: file.pick(args.step_decay, "step-decay", d.step_decay)?,
        seed: common.seed,
        ..d
    };

    let report = regression_sim(&cfg)?;
    let mut table = sim_table(&report)?;
    describe_sim(&mut table, &cfg);
    common.stamp(&mut table, "simulate", &[]);

    common.prepare_out_dir()?;
    let spec = PlotSpec {
        title: "Anchor regression: total corner error".into(),
        x: AxisSpec {
            column: "iteration".into(),
            label: "iteration".into(),
        },
        y_label: "total L1 corner error".into(),
        series: SeriesLayout::KindColumns,
        log_y: true,
    };
    if cfg.iterations == 0 && common.svg() {
        // a single row cannot be drawn; keep the CSV
        let csv_only = Common {
            format: Format::Csv,
            ..common
        };
        write_outputs(&csv_only, &table, &spec, "sim_error", out)?;
        return Ok(());
    }
    write_outputs(&common, &table, &spec, "sim_error", out)?;

    if args.per_anchor {
        let mut finals = sim_final_table(&report, &cfg.pairs()?)?;
        common.stamp(&mut finals, "simulate", &[]);
        let path = common.out_dir.join("sim_final.csv");
        write_atomic(&path, &finals.to_bytes()?).map_err(Failure::Run)?;
        writeln!(out, "wrote {}", path.display())
            .map_err(|e| Failure::Run(Error::io("<stdout>", e)))?;
    }
    for s in &report.series {
        writeln!(
            out,
            "{:<6} initial {:.6e} final {:.6e} ({:.2}% remaining)",
            s.kind.name(),
            s.initial(),
            s.final_total(),
            100.0 * s.final_total() / s.initial().max(f64::MIN_POSITIVE)
        )
        .map_err(|e| Failure::Run(Error::io("<stdout>", e)))?;
    }
    Ok(())
}
