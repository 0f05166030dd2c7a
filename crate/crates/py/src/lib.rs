//! Python bindings: annotation parsing, size grouping, evaluation, and the
//! adversarial objective functions.

// the pyo3 0.22 macros expand to PyErr -> PyErr conversions
#![allow(clippy::useless_conversion)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use smallobj_core::augment::{self, PlacementPolicy, Pools, StrategyConfig};
use smallobj_core::eval::{self, ApProtocol, CrossSizeMode, EvalConfig, MatchLabel};
use smallobj_core::gan;
use smallobj_core::patch::{build_voc_pool, load_generated_pool};
use smallobj_core::rng;
use smallobj_core::voc;

fn to_py_err(e: smallobj_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "BoundingBox")]
#[derive(Clone)]
struct PyBoundingBox {
    inner: voc::BoundingBox,
}

#[pymethods]
impl PyBoundingBox {
    #[new]
    fn new(xmin: i64, ymin: i64, xmax: i64, ymax: i64) -> PyResult<Self> {
        Ok(PyBoundingBox {
            inner: voc::BoundingBox::new(xmin, ymin, xmax, ymax).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn xmin(&self) -> i64 {
        self.inner.xmin
    }

    #[getter]
    fn ymin(&self) -> i64 {
        self.inner.ymin
    }

    #[getter]
    fn xmax(&self) -> i64 {
        self.inner.xmax
    }

    #[getter]
    fn ymax(&self) -> i64 {
        self.inner.ymax
    }

    #[getter]
    fn width(&self) -> i64 {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> i64 {
        self.inner.height()
    }

    #[getter]
    fn area(&self) -> i64 {
        self.inner.area()
    }

    /// Size group by area: "small", "medium", or "big".
    fn size_class(&self) -> &'static str {
        voc::size_class(&self.inner).name()
    }

    fn iou(&self, other: &PyBoundingBox) -> f64 {
        eval::iou(&self.inner, &other.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "BoundingBox({}, {}, {}, {})",
            self.inner.xmin, self.inner.ymin, self.inner.xmax, self.inner.ymax
        )
    }
}

#[pyclass(name = "AnnotatedObject")]
#[derive(Clone)]
struct PyAnnotatedObject {
    inner: voc::AnnotatedObject,
}

#[pymethods]
impl PyAnnotatedObject {
    #[new]
    #[pyo3(signature = (class_name, bbox, difficult=false, truncated=false))]
    fn new(
        class_name: &str,
        bbox: PyBoundingBox,
        difficult: bool,
        truncated: bool,
    ) -> PyResult<Self> {
        let mut obj = voc::AnnotatedObject::new(class_name, bbox.inner).map_err(to_py_err)?;
        obj.difficult = difficult;
        obj.truncated = truncated;
        Ok(PyAnnotatedObject { inner: obj })
    }

    #[getter]
    fn class_name(&self) -> &str {
        &self.inner.class_name
    }

    #[getter]
    fn bbox(&self) -> PyBoundingBox {
        PyBoundingBox {
            inner: self.inner.bbox,
        }
    }

    #[getter]
    fn difficult(&self) -> bool {
        self.inner.difficult
    }

    #[getter]
    fn truncated(&self) -> bool {
        self.inner.truncated
    }

    #[getter]
    fn synthetic(&self) -> bool {
        self.inner.synthetic
    }

    fn size_class(&self) -> &'static str {
        self.inner.size_class().name()
    }
}

#[pyclass(name = "ImageAnnotation")]
#[derive(Clone)]
struct PyImageAnnotation {
    inner: voc::ImageAnnotation,
}

#[pymethods]
impl PyImageAnnotation {
    #[getter]
    fn image_id(&self) -> &str {
        &self.inner.image_id
    }

    #[getter]
    fn width(&self) -> u32 {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> u32 {
        self.inner.height
    }

    #[getter]
    fn depth(&self) -> u32 {
        self.inner.depth
    }

    #[getter]
    fn objects(&self) -> Vec<PyAnnotatedObject> {
        self.inner
            .objects
            .iter()
            .map(|o| PyAnnotatedObject { inner: o.clone() })
            .collect()
    }

    fn to_xml(&self) -> PyResult<String> {
        voc::write_annotation(&self.inner).map_err(to_py_err)
    }
}

/// Parse one VOC XML annotation document.
#[pyfunction]
fn parse_annotation(xml_text: &str) -> PyResult<PyImageAnnotation> {
    Ok(PyImageAnnotation {
        inner: voc::parse_annotation(xml_text).map_err(to_py_err)?,
    })
}

/// CSV object-count statistics for a directory of VOC XML annotations.
#[pyfunction]
fn dataset_stats_csv(annotations_dir: PathBuf) -> PyResult<String> {
    let annotations = voc::load_annotation_dir(&annotations_dir).map_err(to_py_err)?;
    Ok(voc::dataset_stats(&annotations).to_csv())
}

/// Canonical VOC class name for a possibly aliased spelling.
#[pyfunction]
fn canonical_class(name: &str) -> PyResult<&'static str> {
    voc::canonical_class(name).map_err(to_py_err)
}

#[pyfunction]
fn iou(a: &PyBoundingBox, b: &PyBoundingBox) -> f64 {
    eval::iou(&a.inner, &b.inner)
}

/// Average precision from a label sequence of "tp" / "fp" / "ignored".
/// Returns None when n_positive is zero.
#[pyfunction]
#[pyo3(signature = (labels, n_positive, protocol="11point"))]
fn average_precision(
    labels: Vec<String>,
    n_positive: u64,
    protocol: &str,
) -> PyResult<Option<f64>> {
    let protocol = parse_protocol(protocol)?;
    let labels: Vec<MatchLabel> = labels
        .iter()
        .map(|l| match l.as_str() {
            "tp" => Ok(MatchLabel::Tp),
            "fp" => Ok(MatchLabel::Fp),
            "ignored" => Ok(MatchLabel::Ignored),
            other => Err(PyValueError::new_err(format!(
                "unknown label `{other}`, expected tp|fp|ignored"
            ))),
        })
        .collect::<PyResult<_>>()?;
    Ok(eval::average_precision(&labels, n_positive, protocol))
}

fn parse_protocol(s: &str) -> PyResult<ApProtocol> {
    match s {
        "11point" => Ok(ApProtocol::ElevenPoint),
        "allpoints" => Ok(ApProtocol::AllPoints),
        other => Err(PyValueError::new_err(format!(
            "unknown protocol `{other}`, expected 11point|allpoints"
        ))),
    }
}

/// Evaluate per-class detection files against a VOC annotation directory.
/// Returns (per_class_ap_percent, map_percent, excluded_classes).
#[pyfunction]
#[pyo3(signature = (annotations_dir, detections_dir, size=None, iou_threshold=0.5, protocol="11point", strict_cross_size=false))]
fn evaluate_detections(
    annotations_dir: PathBuf,
    detections_dir: PathBuf,
    size: Option<&str>,
    iou_threshold: f64,
    protocol: &str,
    strict_cross_size: bool,
) -> PyResult<(BTreeMap<String, f64>, f64, Vec<String>)> {
    let config = EvalConfig {
        iou_threshold,
        ap_protocol: parse_protocol(protocol)?,
        size_filter: size
            .map(voc::SizeClass::parse)
            .transpose()
            .map_err(to_py_err)?,
        cross_size_mode: if strict_cross_size {
            CrossSizeMode::Strict
        } else {
            CrossSizeMode::Ignore
        },
    };
    let ground_truth = voc::load_annotation_dir(&annotations_dir).map_err(to_py_err)?;
    let detections = eval::load_detection_dir(&detections_dir).map_err(to_py_err)?;
    let report = eval::evaluate(&detections, &ground_truth, &config).map_err(to_py_err)?;
    let per_class = report
        .per_class
        .iter()
        .map(|(k, v)| (k.clone(), v.ap_percent))
        .collect();
    Ok((per_class, report.map_percent, report.excluded_classes))
}

/// Run a copy-paste oversampling strategy over a dataset on disk.
/// Returns (per_class_pasted, total_pasted, total_failed).
#[pyfunction]
#[pyo3(signature = (annotations_dir, images_dir, out_dir, strategy=1, seed=0, generated_pool=None))]
fn run_strategy(
    annotations_dir: PathBuf,
    images_dir: PathBuf,
    out_dir: PathBuf,
    strategy: u32,
    seed: u64,
    generated_pool: Option<PathBuf>,
) -> PyResult<(BTreeMap<String, u64>, u64, u64)> {
    let config = StrategyConfig::preset(strategy).map_err(to_py_err)?;
    let annotations = voc::load_annotation_dir(&annotations_dir).map_err(to_py_err)?;
    let needs_voc =
        config.patch_source != augment::PatchSourceKind::OriginalObject || config.class_switch;
    let voc_pool = if needs_voc {
        Some(build_voc_pool(&annotations, &images_dir, None).map_err(to_py_err)?)
    } else {
        None
    };
    let gen_pool = generated_pool
        .map(|dir| load_generated_pool(&dir))
        .transpose()
        .map_err(to_py_err)?;
    let pools = Pools {
        voc: voc_pool.as_ref(),
        generated: gen_pool.as_ref(),
    };
    let manifest = augment::run_strategy(
        &annotations,
        &images_dir,
        &config,
        &pools,
        &PlacementPolicy::default(),
        seed,
        &out_dir,
    )
    .map_err(to_py_err)?;
    let per_class = manifest
        .per_class
        .iter()
        .map(|(k, (p, _))| (k.clone(), *p))
        .collect();
    Ok((per_class, manifest.total_pasted(), manifest.total_failed()))
}

#[pyfunction]
fn minimax_value(d_real: Vec<f64>, d_fake: Vec<f64>) -> PyResult<f64> {
    gan::minimax_value(&d_real, &d_fake).map_err(to_py_err)
}

#[pyfunction]
fn residual_gan_value(d_large: Vec<f64>, d_small_plus_residual: Vec<f64>) -> PyResult<f64> {
    gan::residual_gan_value(&d_large, &d_small_plus_residual).map_err(to_py_err)
}

#[pyfunction]
#[pyo3(signature = (d_large, d_fake, mode="default"))]
fn discriminator_loss_la(d_large: f64, d_fake: f64, mode: &str) -> PyResult<f64> {
    let mode = match mode {
        "default" => gan::LaMode::Default,
        "sign-flipped" => gan::LaMode::SignFlipped,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown mode `{other}`, expected default|sign-flipped"
            )))
        }
    };
    gan::discriminator_loss_la(d_large, d_fake, mode).map_err(to_py_err)
}

#[pyfunction]
fn generator_loss(d_fake: f64) -> PyResult<f64> {
    gan::generator_loss(d_fake).map_err(to_py_err)
}

/// Uniform soft/noisy labels: [0.8, 1.0] for "real", [0.0, 0.2] for "fake".
#[pyfunction]
fn soft_noisy_labels(kind: &str, n: usize, seed: u64) -> PyResult<Vec<f64>> {
    let kind = match kind {
        "real" => gan::LabelKind::Real,
        "fake" => gan::LabelKind::Fake,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown kind `{other}`, expected real|fake"
            )))
        }
    };
    let mut rng = rng::from_seed(seed);
    Ok(gan::soft_noisy_labels(kind, n, &mut rng))
}

#[pymodule]
fn smallobj(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBoundingBox>()?;
    m.add_class::<PyAnnotatedObject>()?;
    m.add_class::<PyImageAnnotation>()?;
    m.add_function(wrap_pyfunction!(parse_annotation, m)?)?;
    m.add_function(wrap_pyfunction!(dataset_stats_csv, m)?)?;
    m.add_function(wrap_pyfunction!(canonical_class, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_detections, m)?)?;
    m.add_function(wrap_pyfunction!(run_strategy, m)?)?;
    m.add_function(wrap_pyfunction!(minimax_value, m)?)?;
    m.add_function(wrap_pyfunction!(residual_gan_value, m)?)?;
    m.add_function(wrap_pyfunction!(discriminator_loss_la, m)?)?;
    m.add_function(wrap_pyfunction!(generator_loss, m)?)?;
    m.add_function(wrap_pyfunction!(soft_noisy_labels, m)?)?;
    m.add("VOC_CLASSES", voc::VOC_CLASSES.to_vec())?;
    Ok(())
}
