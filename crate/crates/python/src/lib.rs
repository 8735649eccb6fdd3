//! Python bindings for the `bbr-loss-lab` core crate, importable as `bbrloss`.

use bbr_loss_lab::losses::parse_kinds;
use bbr_loss_lab::numcheck::FdConfig;
use bbr_loss_lab::simulation::{SweepMode, SweepRow};
use bbr_loss_lab::{BBox, Error, LossKind, LossResult, SimConfig, SweepConfig};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn kind(name: &str, n: f64) -> PyResult<LossKind> {
    let k = LossKind::parse_with_n(name, n).map_err(to_py)?;
    k.validate().map_err(to_py)?;
    Ok(k)
}

/// `None` selects all seven kinds.
fn kinds(names: Option<Vec<String>>, n: f64) -> PyResult<Vec<LossKind>> {
    parse_kinds(&names.unwrap_or_default().join(","), n).map_err(to_py)
}

/// Axis-aligned box in center-size form.
#[pyclass(name = "Box", frozen, eq, from_py_object, module = "bbrloss")]
#[derive(Clone, Copy, PartialEq)]
struct PyBox {
    inner: BBox,
}

#[pymethods]
impl PyBox {
    #[new]
    fn new(cx: f64, cy: f64, w: f64, h: f64) -> PyResult<Self> {
        Ok(PyBox {
            inner: BBox::new(cx, cy, w, h).map_err(|e| to_py(e.into()))?,
        })
    }

    #[staticmethod]
    fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> PyResult<Self> {
        Ok(PyBox {
            inner: BBox::from_corners(x1, y1, x2, y2).map_err(|e| to_py(e.into()))?,
        })
    }

    #[getter]
    fn cx(&self) -> f64 {
        self.inner.cx()
    }

    #[getter]
    fn cy(&self) -> f64 {
        self.inner.cy()
    }

    #[getter]
    fn w(&self) -> f64 {
        self.inner.w()
    }

    #[getter]
    fn h(&self) -> f64 {
        self.inner.h()
    }

    fn area(&self) -> f64 {
        self.inner.area()
    }

    /// `(x1, y1, x2, y2)`.
    fn corners(&self) -> (f64, f64, f64, f64) {
        let [a, b, c, d] = self.inner.corners();
        (a, b, c, d)
    }

    /// `(cx, cy, w, h)`.
    fn params(&self) -> (f64, f64, f64, f64) {
        let [a, b, c, d] = self.inner.params();
        (a, b, c, d)
    }

    fn __repr__(&self) -> String {
        let b = &self.inner;
        format!(
            "Box(cx={:?}, cy={:?}, w={:?}, h={:?})",
            b.cx(),
            b.cy(),
            b.w(),
            b.h()
        )
    }
}

fn grad_tuple(g: [f64; 4]) -> (f64, f64, f64, f64) {
    (g[0], g[1], g[2], g[3])
}

fn result_dict<'py>(py: Python<'py>, r: &LossResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("value", r.value)?;
    d.set_item("grad", grad_tuple(r.grad))?;
    d.set_item("overlap", r.terms.overlap)?;
    d.set_item("penalty", r.terms.penalty)?;
    d.set_item("aspect", r.terms.aspect)?;
    Ok(d)
}

/// Loss value, gradient `(d/dcx, d/dcy, d/dw, d/dh)` and its three terms.
#[pyfunction]
#[pyo3(signature = (kind_name, pred, gt, n = 9.0))]
fn loss<'py>(
    py: Python<'py>,
    kind_name: &str,
    pred: &PyBox,
    gt: &PyBox,
    n: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let r = bbr_loss_lab::loss(kind(kind_name, n)?, &pred.inner, &gt.inner).map_err(to_py)?;
    result_dict(py, &r)
}

#[pyfunction]
fn iou(pred: &PyBox, gt: &PyBox) -> f64 {
    bbr_loss_lab::iou(&pred.inner, &gt.inner)
}

#[pyfunction]
fn pair_geometry<'py>(py: Python<'py>, pred: &PyBox, gt: &PyBox) -> PyResult<Bound<'py, PyDict>> {
    let g = bbr_loss_lab::pair_geometry(&pred.inner, &gt.inner);
    let d = PyDict::new(py);
    for (k, v) in [
        ("inter", g.inter),
        ("union", g.union_area),
        ("iou", g.iou),
        ("enc_w", g.enc_w),
        ("enc_h", g.enc_h),
        ("enc_diag_sq", g.enc_diag_sq),
        ("enc_area", g.enc_area),
        ("center_dist_sq", g.center_dist_sq),
    ] {
        d.set_item(k, v)?;
    }
    Ok(d)
}

/// `(v, alpha)` of the CIoU aspect penalty.
#[pyfunction]
fn ciou_internals(pred: &PyBox, gt: &PyBox) -> (f64, f64) {
    let c = bbr_loss_lab::ciou_internals(&pred.inner, &gt.inner);
    (c.v, c.alpha)
}

/// `(dv/dw, dv/dh)` of the CIoU aspect penalty.
#[pyfunction]
fn aspect_penalty_grad(pred: &PyBox, gt: &PyBox) -> (f64, f64) {
    bbr_loss_lab::aspect_penalty_grad(&pred.inner, &gt.inner)
}

#[pyfunction]
#[pyo3(signature = (inter, union, n = 9.0))]
fn niou_metric(inter: f64, union: f64, n: f64) -> f64 {
    bbr_loss_lab::niou_metric(inter, union, n)
}

fn fd_config(step_rel: f64, tol_rel: f64, tol_abs: f64, margin: f64) -> PyResult<FdConfig> {
    let cfg = FdConfig {
        step_rel,
        tol_rel,
        tol_abs,
        exclusion_margin: margin,
    };
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// Central-difference gradient of the loss at `pred`.
#[pyfunction]
#[pyo3(signature = (kind_name, pred, gt, n = 9.0, step_rel = 1e-5))]
fn fd_gradient(
    kind_name: &str,
    pred: &PyBox,
    gt: &PyBox,
    n: f64,
    step_rel: f64,
) -> PyResult<(f64, f64, f64, f64)> {
    let cfg = FdConfig {
        step_rel,
        ..FdConfig::default()
    };
    let g = bbr_loss_lab::fd_gradient(kind(kind_name, n)?, &pred.inner, &gt.inner, &cfg)
        .map_err(to_py)?;
    Ok(grad_tuple(g))
}

/// Analytic-vs-numeric gradient comparison on random pairs.
#[pyfunction]
#[pyo3(signature = (kinds = None, pairs = 10_000, seed = 0, n = 9.0, step_rel = 1e-5, tol_rel = 1e-6, tol_abs = 1e-9, margin = 1e-4))]
#[allow(clippy::too_many_arguments)]
fn run_gradcheck<'py>(
    py: Python<'py>,
    kinds: Option<Vec<String>>,
    pairs: usize,
    seed: u64,
    n: f64,
    step_rel: f64,
    tol_rel: f64,
    tol_abs: f64,
    margin: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let ks = self::kinds(kinds, n)?;
    let cfg = fd_config(step_rel, tol_rel, tol_abs, margin)?;
    let r = py
        .detach(|| bbr_loss_lab::run_gradcheck(&ks, pairs, seed, &cfg))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("passed", r.passed)?;
    d.set_item("max_rel_err", r.max_rel_err)?;
    d.set_item("pairs_tested", r.pairs_tested)?;
    d.set_item("pairs_skipped", r.pairs_skipped)?;
    let per_kind = PyDict::new(py);
    for k in &r.per_kind {
        per_kind.set_item(k.kind.name(), k.max_rel_err)?;
    }
    d.set_item("per_kind", per_kind)?;
    if let Some(w) = &r.worst_case {
        let worst = PyDict::new(py);
        worst.set_item("kind", w.kind.name())?;
        worst.set_item("pred", PyBox { inner: w.pred })?;
        worst.set_item("gt", PyBox { inner: w.gt })?;
        worst.set_item("component", w.component)?;
        worst.set_item("analytic", w.analytic)?;
        worst.set_item("numeric", w.numeric)?;
        d.set_item("worst_case", worst)?;
    }
    Ok(d)
}

fn row_dict<'py>(py: Python<'py>, r: &SweepRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("kind", r.kind.name())?;
    d.set_item("offset", r.offset)?;
    d.set_item("iou", r.iou)?;
    d.set_item("value", r.value)?;
    d.set_item("grad", grad_tuple(r.grad))?;
    d.set_item("grad_norm", r.grad_norm)?;
    Ok(d)
}

/// Loss and gradient along a one-parameter family of predicted boxes.
/// Returns one dict per (kind, offset), kinds in canonical order.
#[pyfunction]
#[pyo3(signature = (kinds = None, mode = "translate", samples = 200, target = None, n = 9.0))]
fn gradient_sweep<'py>(
    py: Python<'py>,
    kinds: Option<Vec<String>>,
    mode: &str,
    samples: usize,
    target: Option<PyBox>,
    n: f64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut cfg = SweepConfig::new(self::kinds(kinds, n)?);
    cfg.mode = mode.parse::<SweepMode>().map_err(to_py)?;
    cfg.samples = samples;
    if let Some(t) = target {
        cfg.target = t.inner;
    }
    let r = bbr_loss_lab::gradient_sweep(&cfg).map_err(to_py)?;
    r.rows.iter().map(|row| row_dict(py, row)).collect()
}

/// Default anchor-regression simulation. Returns `{kind: [total corner
/// error per iteration]}`.
#[pyfunction]
#[pyo3(signature = (kinds = None, iterations = 200, step_size = 0.1, n = 9.0))]
fn regression_sim<'py>(
    py: Python<'py>,
    kinds: Option<Vec<String>>,
    iterations: usize,
    step_size: f64,
    n: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = SimConfig::new(self::kinds(kinds, n)?);
    cfg.iterations = iterations;
    cfg.step_size = step_size;
    let r = py
        .detach(|| bbr_loss_lab::regression_sim(&cfg))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    for s in &r.series {
        d.set_item(s.kind.name(), s.total_error.clone())?;
    }
    Ok(d)
}

#[pymodule]
fn bbrloss(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBox>()?;
    m.add("KINDS", LossKind::NAMES.to_vec())?;
    m.add_function(wrap_pyfunction!(loss, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(pair_geometry, m)?)?;
    m.add_function(wrap_pyfunction!(ciou_internals, m)?)?;
    m.add_function(wrap_pyfunction!(aspect_penalty_grad, m)?)?;
    m.add_function(wrap_pyfunction!(niou_metric, m)?)?;
    m.add_function(wrap_pyfunction!(fd_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(run_gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(regression_sim, m)?)?;
    Ok(())
}
