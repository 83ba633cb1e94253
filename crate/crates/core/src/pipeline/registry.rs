//! Named operators with parameter schemas.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::Serialize;

use super::ParamValue;
use crate::edges::{self, GradientKind};
use crate::error::{bad_param, OpResult};
use crate::filters::{self, Conductance, DiffusionParams, ShrinkMode, WaveletParams};
use crate::image::{ImageBuffer, Kind, FG};
use crate::morphology::{self, MorphOp, SeShape, StructuringElement};
use crate::point::{self, PointOp};
use crate::regions::{self, BlobParams, LabelMap, MserParams};
use crate::synth;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ParamKind {
    Number {
        min: Option<f64>,
        max: Option<f64>,
        integer: bool,
        odd: bool,
    },
    Choice {
        options: &'static [&'static str],
    },
    Coords {
        min_len: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSpec {
    pub key: &'static str,
    #[serde(flatten)]
    pub kind: ParamKind,
    pub default: Option<ParamValue>,
}

pub type OpFn = fn(&ImageBuffer, &Params) -> OpResult<ImageBuffer>;

#[derive(Clone, Serialize)]
pub struct OperatorDef {
    pub name: &'static str,
    pub group: &'static str,
    pub params: Vec<ParamSpec>,
    #[serde(skip)]
    pub run: OpFn,
}

impl std::fmt::Debug for OperatorDef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OperatorDef")
            .field("name", &self.name)
            .field("group", &self.group)
            .field("params", &self.params)
            .finish()
    }
}

/// Parameters after defaults are filled in and types checked.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Params(pub BTreeMap<String, ParamValue>);

impl Params {
    pub fn num(&self, key: &str) -> f64 {
        match self.0.get(key) {
            Some(ParamValue::Number(v)) => *v,
            other => panic!("param {key} resolved to {other:?}"),
        }
    }

    pub fn int(&self, key: &str) -> usize {
        self.num(key) as usize
    }

    pub fn text(&self, key: &str) -> &str {
        match self.0.get(key) {
            Some(ParamValue::Text(v)) => v,
            other => panic!("param {key} resolved to {other:?}"),
        }
    }

    pub fn coords(&self, key: &str) -> &[[f64; 2]] {
        match self.0.get(key) {
            Some(ParamValue::Coords(v)) => v,
            other => panic!("param {key} resolved to {other:?}"),
        }
    }

    /// Canonical JSON (sorted keys) used for cache keys.
    pub fn canonical(&self) -> String {
        serde_json::to_string(&self.0).expect("params serialize")
    }
}

impl OperatorDef {
    /// Type-checks `given` against the schema and fills defaults. Errors carry
    /// the offending key and a reason.
    pub fn resolve(&self, given: &BTreeMap<String, ParamValue>) -> Result<Params, (String, String)> {
        for key in given.keys() {
            if !self.params.iter().any(|p| p.key == key) {
                return Err((key.clone(), format!("{} takes no parameter {key:?}", self.name)));
            }
        }
        let mut out = BTreeMap::new();
        for spec in &self.params {
            let value = match given.get(spec.key).or(spec.default.as_ref()) {
                Some(v) => v.clone(),
                None => return Err((spec.key.to_string(), "required parameter missing".into())),
            };
            check(spec, &value).map_err(|r| (spec.key.to_string(), r))?;
            out.insert(spec.key.to_string(), value);
        }
        Ok(Params(out))
    }
}

fn check(spec: &ParamSpec, value: &ParamValue) -> Result<(), String> {
    match (&spec.kind, value) {
        (ParamKind::Number { min, max, integer, odd }, ParamValue::Number(v)) => {
            if !v.is_finite() {
                return Err("must be finite".into());
            }
            if let Some(lo) = min {
                if v < lo {
                    return Err(format!("{v} is below the minimum {lo}"));
                }
            }
            if let Some(hi) = max {
                if v > hi {
                    return Err(format!("{v} exceeds the maximum {hi}"));
                }
            }
            if (*integer || *odd) && v.fract() != 0.0 {
                return Err(format!("{v} must be an integer"));
            }
            if *odd && (*v as i64) % 2 == 0 {
                return Err(format!("{v} must be odd"));
            }
            Ok(())
        }
        (ParamKind::Choice { options }, ParamValue::Text(s)) => {
            if options.contains(&s.as_str()) {
                Ok(())
            } else {
                Err(format!("{s:?} is not one of {options:?}"))
            }
        }
        (ParamKind::Coords { min_len }, ParamValue::Coords(c)) => {
            if c.len() < *min_len {
                return Err(format!("needs at least {min_len} coordinates"));
            }
            if c.iter().any(|p| !(p[0] >= 0.0 && p[1] >= 0.0) || p[0].fract() != 0.0 || p[1].fract() != 0.0) {
                return Err("coordinates must be non-negative integers".into());
            }
            Ok(())
        }
        (kind, v) => {
            let expected = match kind {
                ParamKind::Number { .. } => "number",
                ParamKind::Choice { .. } => "string",
                ParamKind::Coords { .. } => "coordinate list",
            };
            Err(format!("expected a {expected}, got a {}", v.type_name()))
        }
    }
}

pub struct Registry {
    ops: BTreeMap<&'static str, OperatorDef>,
}

impl Registry {
    pub fn get(&self, name: &str) -> Option<&OperatorDef> {
        self.ops.get(name)
    }

    pub fn ops(&self) -> impl Iterator<Item = &OperatorDef> {
        self.ops.values()
    }
}

pub fn registry() -> &'static Registry {
    static REG: OnceLock<Registry> = OnceLock::new();
    REG.get_or_init(build)
}

fn num(key: &'static str, min: Option<f64>, max: Option<f64>, default: Option<f64>) -> ParamSpec {
    ParamSpec {
        key,
        kind: ParamKind::Number {
            min,
            max,
            integer: false,
            odd: false,
        },
        default: default.map(ParamValue::Number),
    }
}

fn int(key: &'static str, min: f64, max: Option<f64>, default: Option<f64>) -> ParamSpec {
    ParamSpec {
        key,
        kind: ParamKind::Number {
            min: Some(min),
            max,
            integer: true,
            odd: false,
        },
        default: default.map(ParamValue::Number),
    }
}

fn odd(key: &'static str, min: f64, default: f64) -> ParamSpec {
    ParamSpec {
        key,
        kind: ParamKind::Number {
            min: Some(min),
            max: None,
            integer: true,
            odd: true,
        },
        default: Some(ParamValue::Number(default)),
    }
}

fn choice(key: &'static str, options: &'static [&'static str], default: &'static str) -> ParamSpec {
    ParamSpec {
        key,
        kind: ParamKind::Choice { options },
        default: Some(ParamValue::Text(default.to_string())),
    }
}

fn coords(key: &'static str, min_len: usize) -> ParamSpec {
    ParamSpec {
        key,
        kind: ParamKind::Coords { min_len },
        default: None,
    }
}

const SE_SHAPES: &[&str] = &["rect", "cross", "ellipse"];

fn se_params() -> Vec<ParamSpec> {
    vec![
        choice("shape", SE_SHAPES, "rect"),
        odd("w", 1.0, 3.0),
        odd("h", 1.0, 3.0),
        int("iterations", 1.0, None, Some(1.0)),
    ]
}

fn se_of(p: &Params) -> OpResult<StructuringElement> {
    let shape = match p.text("shape") {
        "rect" => SeShape::Rect,
        "cross" => SeShape::Cross,
        _ => SeShape::Ellipse,
    };
    StructuringElement::new(shape, p.int("w"), p.int("h"))
}

fn morph_op(img: &ImageBuffer, p: &Params, op: MorphOp) -> OpResult<ImageBuffer> {
    morphology::morph(img, op, &se_of(p)?, p.int("iterations"))
}

fn draw_circle(mask: &mut ImageBuffer, center: (f64, f64), r: f64) {
    let ring = synth::circle_outline(
        mask.width(),
        mask.height(),
        (center.0.round() as isize, center.1.round() as isize),
        r.round().max(1.0) as isize,
    );
    for (o, &v) in mask.data_mut().iter_mut().zip(ring.data()) {
        if v == FG {
            *o = FG;
        }
    }
}

fn seeds_of(img: &ImageBuffer, p: &Params) -> OpResult<LabelMap> {
    let seeds: Vec<(usize, usize)> = p.coords("seeds").iter().map(|c| (c[0] as usize, c[1] as usize)).collect();
    LabelMap::from_seeds(img.width(), img.height(), &seeds)
}

fn build() -> Registry {
    let mut ops = BTreeMap::new();
    let mut add = |name: &'static str, group: &'static str, params: Vec<ParamSpec>, run: OpFn| {
        ops.insert(name, OperatorDef { name, group, params, run });
    };

    add(
        "window",
        "point",
        vec![num("width", Some(1e-9), None, Some(400.0)), num("level", None, None, Some(40.0))],
        |img, p| {
            if img.kind() != Kind::Hu {
                return Err(bad_param("window expects an HU buffer"));
            }
            img.window_level(p.num("width"), p.num("level"))
        },
    );
    add("brightness", "point", vec![num("delta", None, None, Some(0.0))], |img, p| {
        point::point_op(img, PointOp::Brightness(p.num("delta")))
    });
    add("contrast", "point", vec![num("factor", Some(0.0), None, Some(1.0))], |img, p| {
        point::point_op(img, PointOp::Contrast(p.num("factor")))
    });
    add("gamma", "point", vec![num("g", Some(1e-9), None, Some(1.0))], |img, p| {
        point::point_op(img, PointOp::Gamma(p.num("g")))
    });
    add("invert", "point", vec![], |img, _| point::point_op(img, PointOp::Invert));
    add("hist_eq", "point", vec![], |img, _| point::histogram_equalize(img));
    add("thresh_simple", "point", vec![num("t", None, None, Some(128.0))], |img, p| {
        Ok(point::threshold_simple(img, p.num("t")))
    });
    add(
        "thresh_adaptive",
        "point",
        vec![odd("window", 3.0, 15.0), num("c", None, None, Some(0.0))],
        |img, p| point::threshold_adaptive(img, p.int("window"), p.num("c")),
    );
    add("thresh_otsu", "point", vec![], |img, _| Ok(point::threshold_otsu(img)?.1));

    add(
        "aniso",
        "filter",
        vec![
            int("iterations", 0.0, None, Some(10.0)),
            num("kappa", Some(1e-9), None, Some(30.0)),
            num("lambda", Some(1e-9), Some(0.25), Some(0.25)),
            choice("conductance", &["exponential", "rational"], "exponential"),
        ],
        |img, p| {
            let conductance = if p.text("conductance") == "rational" {
                Conductance::Rational
            } else {
                Conductance::Exponential
            };
            let params = DiffusionParams {
                iterations: p.int("iterations"),
                kappa: p.num("kappa"),
                lambda: p.num("lambda"),
                conductance,
            };
            filters::anisotropic_diffusion(img, &params)
        },
    );
    add(
        "kmeans",
        "filter",
        vec![
            int("k", 1.0, Some(255.0), Some(3.0)),
            int("seed", 0.0, None, Some(0.0)),
            int("max_iter", 1.0, None, Some(50.0)),
        ],
        |img, p| {
            let r = filters::kmeans_intensity(img, p.int("k"), p.num("seed") as u64, p.int("max_iter"))?;
            let kind = if img.kind() == Kind::Binary { Kind::Unit } else { img.kind() };
            Ok(r.labels.map(kind, |l| r.centroids[l as usize]))
        },
    );
    add(
        "meanshift",
        "filter",
        vec![
            num("spatial_radius", Some(1e-9), None, Some(3.0)),
            num("range_radius", Some(1e-9), None, Some(20.0)),
            int("max_iter", 1.0, None, Some(10.0)),
        ],
        |img, p| filters::mean_shift_filter(img, p.num("spatial_radius"), p.num("range_radius"), p.int("max_iter")),
    );
    add(
        "wavelet_denoise",
        "wavelet",
        vec![
            int("levels", 1.0, Some(16.0), Some(1.0)),
            num("threshold", Some(0.0), None, Some(10.0)),
            choice("mode", &["soft", "hard"], "soft"),
        ],
        |img, p| {
            let mode = if p.text("mode") == "hard" { ShrinkMode::Hard } else { ShrinkMode::Soft };
            filters::wavelet_denoise(
                img,
                &WaveletParams {
                    levels: p.int("levels"),
                    threshold: p.num("threshold"),
                    mode,
                },
            )
        },
    );

    add("sobel", "edge", vec![], |img, _| edges::gradient_edges(img, GradientKind::Sobel));
    add("prewitt", "edge", vec![], |img, _| edges::gradient_edges(img, GradientKind::Prewitt));
    add("laplace", "edge", vec![], |img, _| edges::gradient_edges(img, GradientKind::Laplace));
    add(
        "canny",
        "edge",
        vec![
            num("sigma", Some(1e-9), None, Some(1.0)),
            num("low", Some(0.0), None, Some(50.0)),
            num("high", Some(0.0), None, Some(150.0)),
        ],
        |img, p| edges::canny(img, p.num("sigma"), p.num("low"), p.num("high")),
    );
    add(
        "hough_circles",
        "edge",
        vec![
            int("r_min", 1.0, None, Some(5.0)),
            int("r_max", 1.0, None, Some(30.0)),
            int("vote_threshold", 1.0, None, Some(20.0)),
        ],
        |img, p| {
            let hits = edges::hough_circles(img, p.int("r_min"), p.int("r_max"), p.num("vote_threshold") as u32)?;
            let mut out = ImageBuffer::empty_mask(img.width(), img.height());
            for h in hits {
                draw_circle(&mut out, (h.center.0 as f64, h.center.1 as f64), h.radius as f64);
            }
            Ok(out)
        },
    );
    add(
        "unsharp",
        "sharpness",
        vec![num("sigma", Some(1e-9), None, Some(1.0)), num("amount", Some(0.0), None, Some(1.0))],
        |img, p| edges::unsharp_mask(img, p.num("sigma"), p.num("amount")),
    );

    add("dilate", "morphology", se_params(), |i, p| morph_op(i, p, MorphOp::Dilate));
    add("erode", "morphology", se_params(), |i, p| morph_op(i, p, MorphOp::Erode));
    add("open", "morphology", se_params(), |i, p| morph_op(i, p, MorphOp::Open));
    add("close", "morphology", se_params(), |i, p| morph_op(i, p, MorphOp::Close));
    add("mgradient", "morphology", se_params(), |i, p| morph_op(i, p, MorphOp::Gradient));
    add("tophat", "morphology", se_params(), |i, p| morph_op(i, p, MorphOp::Tophat));
    add("blackhat", "morphology", se_params(), |i, p| morph_op(i, p, MorphOp::Blackhat));
    add("thin", "morphology", vec![], |img, _| morphology::thinning(img));

    add(
        "cc",
        "segmentation",
        vec![ParamSpec {
            key: "connectivity",
            kind: ParamKind::Number {
                min: Some(4.0),
                max: Some(8.0),
                integer: true,
                odd: false,
            },
            default: Some(ParamValue::Number(8.0)),
        }],
        |img, p| {
            let c = p.int("connectivity");
            if c != 4 && c != 8 {
                return Err(bad_param("connectivity must be 4 or 8"));
            }
            Ok(regions::connected_components(img, c as u8)?.to_image())
        },
    );
    add(
        "floodfill",
        "segmentation",
        vec![
            int("x", 0.0, None, None),
            int("y", 0.0, None, None),
            num("value", None, None, Some(255.0)),
            num("tolerance", Some(0.0), None, Some(0.0)),
        ],
        |img, p| regions::flood_fill(img, (p.int("x") as isize, p.int("y") as isize), p.num("value"), p.num("tolerance")),
    );
    add("contours", "segmentation", vec![], |img, _| {
        let mut out = ImageBuffer::empty_mask(img.width(), img.height());
        for c in regions::find_contours(img)? {
            for &(x, y) in &c.points {
                out.set(x as usize, y as usize, FG);
            }
        }
        Ok(out)
    });
    add(
        "blob",
        "blob",
        vec![
            num("min_threshold", None, None, Some(10.0)),
            num("max_threshold", None, None, Some(220.0)),
            num("threshold_step", Some(1e-9), None, Some(10.0)),
            int("min_repeatability", 1.0, None, Some(2.0)),
            num("min_dist", Some(0.0), None, Some(10.0)),
            choice("polarity", &["bright", "dark"], "bright"),
            num("min_circularity", Some(0.0), None, Some(0.0)),
        ],
        |img, p| {
            let params = BlobParams {
                min_threshold: p.num("min_threshold"),
                max_threshold: p.num("max_threshold"),
                threshold_step: p.num("threshold_step"),
                min_repeatability: p.int("min_repeatability"),
                min_dist: p.num("min_dist"),
                dark: p.text("polarity") == "dark",
                circularity: Some((p.num("min_circularity"), f64::INFINITY)),
                ..BlobParams::default()
            };
            let blobs = regions::blob_detect(img, &params)?;
            let mut out = ImageBuffer::empty_mask(img.width(), img.height());
            for b in blobs {
                draw_circle(&mut out, b.center, (b.area / std::f64::consts::PI).sqrt());
            }
            Ok(out)
        },
    );
    add(
        "mser",
        "blob",
        vec![
            int("delta", 1.0, Some(255.0), Some(5.0)),
            int("min_area", 1.0, None, Some(30.0)),
            int("max_area", 1.0, None, Some(14400.0)),
            num("max_variation", Some(0.0), None, Some(0.25)),
        ],
        |img, p| {
            let params = MserParams {
                delta: p.int("delta") as u8,
                min_area: p.int("min_area"),
                max_area: p.int("max_area"),
                max_variation: p.num("max_variation"),
            };
            let mut out = ImageBuffer::empty_mask(img.width(), img.height());
            for r in regions::mser(img, &params)? {
                for i in r.pixels {
                    out.data_mut()[i] = FG;
                }
            }
            Ok(out)
        },
    );
    add("watershed", "segmentation", vec![coords("seeds", 1)], |img, p| {
        let markers = seeds_of(img, p)?;
        Ok(regions::watershed(img, &markers)?.to_image())
    });
    add("distance", "segmentation", vec![], |img, _| {
        img.require_binary()?;
        Ok(regions::distance_transform(img))
    });
    add("remove_couch", "auxiliary", vec![num("air_hu", None, None, Some(-500.0))], |img, p| {
        crate::femur::remove_couch_with(img, p.num("air_hu")).map_err(|e| bad_param(e.to_string()))
    });
    add(
        "isolate_bone",
        "auxiliary",
        vec![num("bone_hu", Some(-999.0), None, Some(200.0))],
        |img, p| Ok(crate::femur::isolate_bone(img, p.num("bone_hu"))),
    );

    Registry { ops }
}
