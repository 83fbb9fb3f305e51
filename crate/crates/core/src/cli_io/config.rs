//! INI-style run configuration.
//!
//! ```text
//! [barrier]
//! kind = plane
//! [initial]
//! case = HEMI_PLANE
//! ```
//!
//! Sections are `barrier`, `initial`, `flow`, `diagnostics` and `output`.
//! Lines starting with `#` or `;` are comments. Unknown sections or keys and
//! repeated keys are parse errors.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::barrier::BarrierKind;
use crate::diagnostics::DiagnosticsConfig;
use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::oracles::CaseName;
use crate::par::Execution;

const SECTIONS: [(&str, &[&str]); 5] = [
    ("barrier", &["kind", "params", "orientation_sign", "tubular_width"]),
    ("initial", &["case", "obj", "subdivision", "amplitude", "radius", "seed"]),
    (
        "flow",
        &[
            "dt_safety",
            "dt_curvature",
            "dt_floor",
            "max_steps",
            "stop_max_a",
            "stop_min_area",
            "projection_tol",
            "t_end",
            "face_area_floor",
            "angle_floor",
            "tangential_smoothing",
            "barrier_samples",
            "execution",
            "record_every",
        ],
    ),
    ("diagnostics", &["sigma", "eta", "epsilon_pinch", "D", "a", "b", "c", "C_grad", "boundary_residuals"]),
    ("output", &["directory", "frame_format", "record_every", "frame_every"]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierSection {
    pub kind: BarrierKind,
    pub params: Option<Vec<f64>>,
    pub orientation_sign: Option<f64>,
    pub tubular_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSource {
    Case(CaseName),
    Obj(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialSection {
    pub source: InitialSource,
    pub subdivision: Option<usize>,
    pub amplitude: Option<f64>,
    pub radius: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameFormat {
    Obj,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub frame_format: FrameFormat,
    /// Steps between records.
    pub record_every: usize,
    /// Records between written frames.
    pub frame_every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub barrier: BarrierSection,
    pub initial: InitialSection,
    pub flow: FlowConfig,
    pub execution: Execution,
    pub diagnostics: DiagnosticsConfig,
    pub output: OutputSection,
    lines: HashMap<String, usize>,
}

impl RunConfig {
    /// Line on which `section.key` was set, if it was.
    pub fn line_of(&self, section: &str, key: &str) -> Option<usize> {
        self.lines.get(&format!("{section}.{key}")).copied()
    }

    /// A validation error attributed to `section.key`.
    pub fn invalid(&self, section: &str, key: &str, msg: impl Into<String>) -> Error {
        Error::Validation { key: format!("{section}.{key}"), line: self.line_of(section, key).unwrap_or(0), msg: msg.into() }
    }
}

struct Entry {
    value: String,
    line: usize,
}

struct Raw {
    entries: HashMap<(String, String), Entry>,
}

impl Raw {
    fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.entries.get(&(section.to_string(), key.to_string()))
    }

    fn parse<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(Some).map_err(|_| Error::Validation {
                key: format!("{section}.{key}"),
                line: e.line,
                msg: format!("cannot parse `{}`", e.value),
            }),
        }
    }

    fn check<T: Copy + std::fmt::Display>(
        &self,
        section: &str,
        key: &str,
        value: Option<T>,
        ok: impl Fn(T) -> bool,
        range: &str,
    ) -> Result<Option<T>> {
        if let Some(v) = value {
            if !ok(v) {
                let line = self.get(section, key).map_or(0, |e| e.line);
                return Err(Error::Validation { key: format!("{section}.{key}"), line, msg: format!("{key} = {v} outside {range}") });
            }
        }
        Ok(value)
    }
}

fn tokenize(text: &str) -> Result<Raw> {
    let mut entries = HashMap::new();
    let mut section: Option<&'static str> = None;
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw_line.trim();
        if s.is_empty() || s.starts_with('#') || s.starts_with(';') {
            continue;
        }
        if let Some(rest) = s.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| Error::Parse { line, msg: format!("malformed section header `{s}`") })?.trim();
            section = Some(
                SECTIONS
                    .iter()
                    .find(|(n, _)| *n == name)
                    .map(|(n, _)| *n)
                    .ok_or_else(|| Error::Parse { line, msg: format!("unknown section `{name}`") })?,
            );
            continue;
        }
        let (key, value) = s.split_once('=').ok_or_else(|| Error::Parse { line, msg: format!("expected `key = value`, got `{s}`") })?;
        let (key, value) = (key.trim(), value.trim());
        let sec = section.ok_or_else(|| Error::Parse { line, msg: format!("key `{key}` outside any section") })?;
        let known = SECTIONS.iter().find(|(n, _)| *n == sec).map(|(_, k)| *k).unwrap_or(&[]);
        if !known.contains(&key) {
            return Err(Error::Parse { line, msg: format!("unknown key `{key}` in section [{sec}]") });
        }
        let slot = (sec.to_string(), key.to_string());
        if let Some(prev) = entries.get(&slot) {
            let prev: &Entry = prev;
            return Err(Error::Parse { line, msg: format!("`{key}` already set on line {}", prev.line) });
        }
        entries.insert(slot, Entry { value: value.to_string(), line });
    }
    Ok(Raw { entries })
}

fn parse_list(raw: &Raw, section: &str, key: &str) -> Result<Option<Vec<f64>>> {
    let Some(e) = raw.get(section, key) else { return Ok(None) };
    e.value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::Validation {
                key: format!("{section}.{key}"),
                line: e.line,
                msg: format!("cannot parse `{t}` as a number"),
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let raw = tokenize(text)?;
    let missing =
        |section: &str, key: &str| Error::Validation { key: format!("{section}.{key}"), line: 0, msg: "required key is missing".into() };
    let positive = |v: f64| v > 0.0 && v.is_finite();

    let kind_entry = raw.get("barrier", "kind").ok_or_else(|| missing("barrier", "kind"))?;
    let kind = kind_entry.value.parse::<BarrierKind>().map_err(|e| Error::Validation {
        key: "barrier.kind".into(),
        line: kind_entry.line,
        msg: e.to_string(),
    })?;
    let barrier = BarrierSection {
        kind,
        params: parse_list(&raw, "barrier", "params")?,
        orientation_sign: raw.check(
            "barrier",
            "orientation_sign",
            raw.parse("barrier", "orientation_sign")?,
            |v: f64| v == 1.0 || v == -1.0,
            "{-1, +1}",
        )?,
        tubular_width: raw.check("barrier", "tubular_width", raw.parse("barrier", "tubular_width")?, positive, "(0, inf)")?,
    };

    let source = match (raw.get("initial", "case"), raw.get("initial", "obj")) {
        (Some(c), None) => InitialSource::Case(c.value.parse().map_err(|e: Error| Error::Validation {
            key: "initial.case".into(),
            line: c.line,
            msg: e.to_string(),
        })?),
        (None, Some(o)) => InitialSource::Obj(PathBuf::from(&o.value)),
        (Some(_), Some(o)) => {
            return Err(Error::Validation { key: "initial.obj".into(), line: o.line, msg: "set either `case` or `obj`, not both".into() })
        }
        (None, None) => return Err(missing("initial", "case")),
    };
    let initial = InitialSection {
        source,
        subdivision: raw.check(
            "initial",
            "subdivision",
            raw.parse("initial", "subdivision")?,
            |n: usize| (1..=256).contains(&n),
            "[1, 256]",
        )?,
        amplitude: raw.check("initial", "amplitude", raw.parse("initial", "amplitude")?, |a: f64| (0.0..1.0).contains(&a), "[0, 1)")?,
        radius: raw.check("initial", "radius", raw.parse("initial", "radius")?, positive, "(0, inf)")?,
        seed: raw.parse("initial", "seed")?.unwrap_or(0),
    };

    let mut flow = FlowConfig { seed: initial.seed, ..FlowConfig::default() };
    macro_rules! flow_field {
        ($key:literal, $field:ident, $ok:expr, $range:literal) => {
            if let Some(v) = raw.check("flow", $key, raw.parse("flow", $key)?, $ok, $range)? {
                flow.$field = v;
            }
        };
    }
    flow_field!("dt_safety", dt_safety, positive, "(0, inf)");
    flow_field!("dt_curvature", dt_curvature, positive, "(0, inf)");
    flow_field!("dt_floor", dt_floor, positive, "(0, inf)");
    flow_field!("max_steps", max_steps, |n: usize| n > 0, "[1, inf)");
    flow_field!("stop_max_a", stop_max_a, positive, "(0, inf)");
    flow_field!("stop_min_area", stop_min_area, |v: f64| v > 0.0 && v < 1.0, "(0, 1)");
    flow_field!("projection_tol", projection_tol, positive, "(0, inf)");
    flow_field!("face_area_floor", face_area_floor, positive, "(0, inf)");
    flow_field!("angle_floor", angle_floor, |v: f64| (0.0..60.0).contains(&v), "[0, 60)");
    flow_field!("tangential_smoothing", tangential_smoothing, |v: f64| (0.0..1.0).contains(&v), "[0, 1)");
    flow_field!("barrier_samples", barrier_samples, |n: usize| n >= 2, "[2, inf)");
    flow_field!("record_every", record_every, |n: usize| n > 0, "[1, inf)");
    if let (Some(_), Some(o)) = (raw.get("flow", "record_every"), raw.get("output", "record_every")) {
        return Err(Error::Validation {
            key: "output.record_every".into(),
            line: o.line,
            msg: "set `record_every` in either [flow] or [output], not both".into(),
        });
    }
    flow.t_end = raw.check("flow", "t_end", raw.parse("flow", "t_end")?, positive, "(0, inf)")?;
    let execution = match raw.get("flow", "execution") {
        None => Execution::default(),
        Some(e) => match e.value.to_ascii_lowercase().as_str() {
            "parallel" => Execution::Parallel,
            "sequential" => Execution::Sequential,
            other => {
                return Err(Error::Validation {
                    key: "flow.execution".into(),
                    line: e.line,
                    msg: format!("expected `parallel` or `sequential`, got `{other}`"),
                })
            }
        },
    };

    let mut diagnostics = DiagnosticsConfig::default();
    macro_rules! diag_field {
        ($key:literal, $field:ident, $ok:expr, $range:literal) => {
            if let Some(v) = raw.check("diagnostics", $key, raw.parse("diagnostics", $key)?, $ok, $range)? {
                diagnostics.$field = v;
            }
        };
    }
    let finite = |v: f64| v.is_finite();
    diag_field!("sigma", sigma, |v: f64| v > 0.0 && v < 0.5, "(0, 0.5)");
    diag_field!("eta", eta, |v: f64| v > 0.0 && v < 1.0, "(0, 1)");
    diag_field!("epsilon_pinch", epsilon_pinch, positive, "(0, inf)");
    diag_field!("D", d_convexity, |v: f64| v >= 0.0 && v.is_finite(), "[0, inf)");
    diag_field!("a", a, finite, "finite values");
    diag_field!("b", b, finite, "finite values");
    diag_field!("c", c, finite, "finite values");
    diag_field!("boundary_residuals", boundary_residuals, |_: bool| true, "{true, false}");
    diagnostics.c_grad =
        raw.check("diagnostics", "C_grad", raw.parse("diagnostics", "C_grad")?, |v: f64| v >= 0.0 && v.is_finite(), "[0, inf)")?;

    let frame_format = match raw.get("output", "frame_format") {
        None => FrameFormat::Obj,
        Some(e) => match e.value.to_ascii_lowercase().as_str() {
            "obj" => FrameFormat::Obj,
            "none" => FrameFormat::None,
            other => {
                return Err(Error::Validation {
                    key: "output.frame_format".into(),
                    line: e.line,
                    msg: format!("expected `obj` or `none`, got `{other}`"),
                })
            }
        },
    };
    let output = OutputSection {
        directory: raw.get("output", "directory").map_or_else(|| PathBuf::from("output"), |e| PathBuf::from(&e.value)),
        frame_format,
        record_every: raw
            .check("output", "record_every", raw.parse("output", "record_every")?, |n: usize| n > 0, "[1, inf)")?
            .unwrap_or(flow.record_every),
        frame_every: raw.check("output", "frame_every", raw.parse("output", "frame_every")?, |n: usize| n > 0, "[1, inf)")?.unwrap_or(1),
    };
    flow.record_every = output.record_every;

    let lines = raw.entries.iter().map(|((s, k), e)| (format!("{s}.{k}"), e.line)).collect();
    Ok(RunConfig { barrier, initial, flow, execution, diagnostics, output, lines })
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}
