//! Job specifications, the command runner and file formats.
//!
//! A job is a JSON document naming a command, a geometry and optional drive
//! and tolerance settings. Every run writes `summary.json` into the output
//! directory, whatever the outcome.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::builders::{
    build_type1, build_type1_mirror, build_type2, build_type3_flat, BuildError, Line3, Plane3, Type3Construction,
};
use crate::flexion::{flex_dimension, flex_path, DriveSpec, FlexError, FlexionPath};
use crate::octa_model::{
    classify_edge_lengths, edge_lengths, validate, EdgeKey, Facet, OctaEdgeLengths, OctaError, OctaRealization,
    VertexLabel, DEFAULT_LENGTH_TOL,
};
use crate::spherical_linkage::{classify, planar_fourbar_coeffs, DEFAULT_CLASSIFY_TOL};
use crate::verifiers::{
    all_line_fits, hexagon_traces, mannheim_point, opposite_dihedral_trace, BaseFacet, VerifyError,
};
use crate::{Vec2, Vec3};

pub const SUMMARY_SCHEMA: u32 = 1;
pub const SUMMARY_FILE: &str = "summary.json";
pub const PATH_CSV: &str = "path.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    BuildType1,
    BuildType1Mirror,
    BuildType2,
    BuildType3,
    Classify,
    Flex,
    Verify,
    Fourbar,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::BuildType1,
        Command::BuildType1Mirror,
        Command::BuildType2,
        Command::BuildType3,
        Command::Classify,
        Command::Flex,
        Command::Verify,
        Command::Fourbar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::BuildType1 => "build-type1",
            Command::BuildType1Mirror => "build-type1-mirror",
            Command::BuildType2 => "build-type2",
            Command::BuildType3 => "build-type3",
            Command::Classify => "classify",
            Command::Flex => "flex",
            Command::Verify => "verify",
            Command::Fourbar => "fourbar",
        }
    }

    /// The builder a `build-*` command requires.
    fn builder(self) -> Option<&'static str> {
        match self {
            Command::BuildType1 => Some("type1"),
            Command::BuildType1Mirror => Some("type1-mirror"),
            Command::BuildType2 => Some("type2"),
            Command::BuildType3 => Some("type3"),
            _ => None,
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Command::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            let names: Vec<_> = Command::ALL.iter().map(|c| c.name()).collect();
            format!("unknown command `{s}` (expected one of {})", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    point: [f64; 3],
    direction: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlane {
    point: [f64; 3],
    normal: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "builder", rename_all = "kebab-case", deny_unknown_fields)]
enum RawGeometry {
    Type1 { a: [f64; 3], b: [f64; 3], f: [f64; 3], axis: Option<RawLine> },
    Type1Mirror { a: [f64; 3], b: [f64; 3], f: [f64; 3], axis: Option<RawLine> },
    Type2 { c: [f64; 3], f: [f64; 3], a: [f64; 3], e: [f64; 3], plane: Option<RawPlane> },
    Type3 { triangle: [[f64; 2]; 3], p: Option<[f64; 2]> },
    Explicit { positions: Option<BTreeMap<String, [f64; 3]>>, edge_lengths: Option<BTreeMap<String, f64>> },
}

impl RawGeometry {
    fn builder(&self) -> &'static str {
        match self {
            RawGeometry::Type1 { .. } => "type1",
            RawGeometry::Type1Mirror { .. } => "type1-mirror",
            RawGeometry::Type2 { .. } => "type2",
            RawGeometry::Type3 { .. } => "type3",
            RawGeometry::Explicit { .. } => "explicit",
        }
    }
}

/// Tolerances for the length and angle classifications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Edge equalities, relative to the mean edge.
    pub length: f64,
    /// Vanishing tetrahedral coefficients, relative to the largest.
    pub linkage: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { length: DEFAULT_LENGTH_TOL, linkage: DEFAULT_CLASSIFY_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    command: Option<String>,
    geometry: Option<RawGeometry>,
    #[serde(default)]
    drive: DriveSpec,
    #[serde(default)]
    tolerances: Tolerances,
    out: Option<PathBuf>,
    sides: Option<[f64; 4]>,
    path_dir: Option<PathBuf>,
    #[serde(default)]
    sweep: Vec<RawGeometry>,
}

/// Validated geometry input.
#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    Type1 { a: Vec3, b: Vec3, f: Vec3, axis: Line3, mirror: bool },
    Type2 { c: Vec3, f: Vec3, a: Vec3, e: Vec3, plane: Plane3 },
    Type3 { triangle: [Vec2; 3], p: Vec2 },
    Explicit { positions: Option<OctaRealization>, edge_lengths: Option<OctaEdgeLengths> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobSpec {
    pub command: Command,
    pub geometry: Option<Geometry>,
    pub drive: DriveSpec,
    pub tolerances: Tolerances,
    pub out: PathBuf,
    pub sides: Option<[f64; 4]>,
    pub path_dir: Option<PathBuf>,
    pub sweep: Vec<Geometry>,
    pub warnings: Vec<String>,
}

pub const DEFAULT_OUT: &str = "flexoct-out";

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> SpecError {
    SpecError::Validation { field: field.into(), message: message.into() }
}

fn finite3(field: &str, p: [f64; 3]) -> Result<Vec3, SpecError> {
    if p.iter().all(|x| x.is_finite()) {
        Ok(Vec3::from(p))
    } else {
        Err(invalid(field, "coordinates must be finite"))
    }
}

fn finite2(field: &str, p: [f64; 2]) -> Result<Vec2, SpecError> {
    if p.iter().all(|x| x.is_finite()) {
        Ok(Vec2::from(p))
    } else {
        Err(invalid(field, "coordinates must be finite"))
    }
}

fn nonzero(field: &str, v: Vec3) -> Result<Vec3, SpecError> {
    if v.norm() > 0.0 {
        Ok(v)
    } else {
        Err(invalid(field, "must be a nonzero vector"))
    }
}

fn convert_geometry(raw: RawGeometry, prefix: &str, warnings: &mut Vec<String>) -> Result<Geometry, SpecError> {
    let at = |name: &str| format!("{prefix}.{name}");
    let line = |axis: Option<RawLine>| -> Result<Line3, SpecError> {
        match axis {
            None => Ok(Line3::z_axis()),
            Some(l) => Ok(Line3::new(
                finite3(&at("axis.point"), l.point)?,
                nonzero(&at("axis.direction"), finite3(&at("axis.direction"), l.direction)?)?,
            )),
        }
    };
    let type1 = |a, b, f, axis, mirror| -> Result<Geometry, SpecError> {
        Ok(Geometry::Type1 {
            a: finite3(&at("a"), a)?,
            b: finite3(&at("b"), b)?,
            f: finite3(&at("f"), f)?,
            axis: line(axis)?,
            mirror,
        })
    };
    match raw {
        RawGeometry::Type1 { a, b, f, axis } => type1(a, b, f, axis, false),
        RawGeometry::Type1Mirror { a, b, f, axis } => type1(a, b, f, axis, true),
        RawGeometry::Type2 { c, f, a, e, plane } => {
            let plane = match plane {
                None => Plane3::new(Vec3::zeros(), Vec3::y()),
                Some(p) => Plane3::new(
                    finite3(&at("plane.point"), p.point)?,
                    nonzero(&at("plane.normal"), finite3(&at("plane.normal"), p.normal)?)?,
                ),
            };
            Ok(Geometry::Type2 {
                c: finite3(&at("c"), c)?,
                f: finite3(&at("f"), f)?,
                a: finite3(&at("a"), a)?,
                e: finite3(&at("e"), e)?,
                plane,
            })
        }
        RawGeometry::Type3 { triangle, p } => {
            let t = [
                finite2(&at("triangle[0]"), triangle[0])?,
                finite2(&at("triangle[1]"), triangle[1])?,
                finite2(&at("triangle[2]"), triangle[2])?,
            ];
            let p = match p {
                Some(p) => finite2(&at("p"), p)?,
                None => (t[0] + t[1] + t[2]) / 3.0,
            };
            Ok(Geometry::Type3 { triangle: t, p })
        }
        RawGeometry::Explicit { positions, edge_lengths: lengths } => {
            let positions = positions.map(|m| convert_positions(&m, &at("positions"))).transpose()?;
            let lengths = lengths.map(|m| convert_lengths(&m, &at("edge_lengths"))).transpose()?;
            if positions.is_none() && lengths.is_none() {
                return Err(invalid(prefix, "explicit geometry needs positions or edge_lengths"));
            }
            if positions.is_some() && lengths.is_some() {
                let msg =
                    format!("{prefix}: both positions and edge_lengths given; edge lengths are taken from positions");
                warn!("{msg}");
                warnings.push(msg);
            }
            Ok(Geometry::Explicit { positions, edge_lengths: lengths })
        }
    }
}

fn convert_positions(m: &BTreeMap<String, [f64; 3]>, field: &str) -> Result<OctaRealization, SpecError> {
    let mut pts = [None; 6];
    for (k, p) in m {
        let v = single_label(k).ok_or_else(|| invalid(format!("{field}.{k}"), "not a vertex label A-F"))?;
        pts[v.index()] = Some(finite3(&format!("{field}.{k}"), *p)?);
    }
    let mut out = [Vec3::zeros(); 6];
    for v in VertexLabel::ALL {
        out[v.index()] = pts[v.index()].ok_or_else(|| invalid(format!("{field}.{v}"), "missing vertex"))?;
    }
    Ok(OctaRealization::new(out))
}

fn single_label(k: &str) -> Option<VertexLabel> {
    let mut it = k.chars();
    match (it.next(), it.next()) {
        (Some(c), None) => VertexLabel::from_char(c),
        _ => None,
    }
}

fn convert_lengths(m: &BTreeMap<String, f64>, field: &str) -> Result<OctaEdgeLengths, SpecError> {
    let mut vals = [None; 12];
    for (k, &x) in m {
        let name = format!("{field}.{k}");
        let e: EdgeKey = k.parse().map_err(|_| invalid(&name, "not an edge of the octahedron"))?;
        if !(x > 0.0 && x.is_finite()) {
            return Err(invalid(&name, format!("edge length must be positive and finite, got {x}")));
        }
        if vals[e.index()].replace(x).is_some() {
            return Err(invalid(&name, "edge given twice"));
        }
    }
    let mut out = [0.0; 12];
    for e in EdgeKey::ALL {
        out[e.index()] = vals[e.index()].ok_or_else(|| invalid(format!("{field}.{e}"), "missing edge"))?;
    }
    OctaEdgeLengths::new(out).map_err(|err| invalid(field, err.to_string()))
}

/// Parses and validates a job. `command` overrides a missing `command` key
/// and must agree with a present one.
pub fn parse_spec(text: &str, command: Option<Command>) -> Result<JobSpec, SpecError> {
    let raw: RawSpec = serde_json::from_str(text).map_err(|e| {
        let (line, column) = (e.line(), e.column());
        let full = e.to_string();
        let suffix = format!(" at line {line} column {column}");
        let message = full.strip_suffix(&suffix).unwrap_or(&full).to_string();
        SpecError::Parse { line, column, message }
    })?;
    let file_cmd =
        raw.command.as_deref().map(|s| s.parse::<Command>().map_err(|m| invalid("command", m))).transpose()?;
    let command = match (file_cmd, command) {
        (Some(a), Some(b)) if a != b => {
            return Err(invalid("command", format!("spec says `{a}` but `{b}` was requested")));
        }
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => return Err(invalid("command", "no command given")),
    };
    raw.drive.validate().map_err(|msg| {
        let field = msg.split_whitespace().next().unwrap_or("drive").to_string();
        invalid(field, msg)
    })?;
    for (name, v) in [("tolerances.length", raw.tolerances.length), ("tolerances.linkage", raw.tolerances.linkage)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(name, format!("must be positive, got {v}")));
        }
    }
    let mut warnings = Vec::new();
    if let (Some(b), Some(g)) = (command.builder(), raw.geometry.as_ref()) {
        if g.builder() != b {
            return Err(invalid("geometry.builder", format!("`{command}` needs builder `{b}`, got `{}`", g.builder())));
        }
    }
    for (i, g) in raw.sweep.iter().enumerate() {
        if let Some(b) = command.builder() {
            if g.builder() != b {
                return Err(invalid(format!("sweep[{i}].builder"), format!("`{command}` needs builder `{b}`")));
            }
        }
    }
    let geometry = raw.geometry.map(|g| convert_geometry(g, "geometry", &mut warnings)).transpose()?;
    let sweep = raw
        .sweep
        .into_iter()
        .enumerate()
        .map(|(i, g)| convert_geometry(g, &format!("sweep[{i}]"), &mut warnings))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(s) = raw.sides {
        for (i, x) in s.iter().enumerate() {
            if !(*x > 0.0 && x.is_finite()) {
                return Err(invalid(format!("sides[{i}]"), format!("must be positive, got {x}")));
            }
        }
    }
    match command {
        Command::Fourbar if raw.sides.is_none() => return Err(invalid("sides", "fourbar needs four side lengths")),
        Command::Fourbar => {}
        Command::Verify if raw.path_dir.is_some() => {}
        _ if geometry.is_none() && sweep.is_empty() => return Err(invalid("geometry", "missing")),
        _ => {}
    }
    Ok(JobSpec {
        command,
        geometry,
        drive: raw.drive,
        tolerances: raw.tolerances,
        out: raw.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        sides: raw.sides,
        path_dir: raw.path_dir,
        sweep,
        warnings,
    })
}

pub fn load_spec(path: &Path) -> Result<JobSpec, SpecError> {
    load_spec_as(path, None)
}

pub fn load_spec_as(path: &Path, command: Option<Command>) -> Result<JobSpec, SpecError> {
    let text = fs::read_to_string(path).map_err(|source| SpecError::Io { path: path.to_owned(), source })?;
    parse_spec(&text, command)
}

/// Overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub steps: Option<usize>,
    /// Corrector tolerance.
    pub tol: Option<f64>,
}

impl JobSpec {
    pub fn apply(&mut self, o: &Overrides) -> Result<(), SpecError> {
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(n) = o.steps {
            if n == 0 {
                return Err(invalid("--steps", "must be positive"));
            }
            self.drive.max_steps = n;
        }
        if let Some(t) = o.tol {
            if !(t > 0.0 && t.is_finite()) {
                return Err(invalid("--tol", format!("must be positive, got {t}")));
            }
            self.drive.corrector_tol = t;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- formats

/// Wavefront OBJ text of one frame: the six vertices in label order and the
/// eight facets with outward winding.
pub fn obj_string(r: &OctaRealization, comment: Option<&str>) -> String {
    let mut s = String::new();
    if let Some(c) = comment {
        for line in c.lines() {
            s.push_str(&format!("# {line}\n"));
        }
    }
    for v in VertexLabel::ALL {
        let p = r.get(v);
        s.push_str(&format!("v {} {} {}\n", p.x, p.y, p.z));
    }
    for f in Facet::ALL {
        let [a, b, c] = f.0.map(|v| v.index() + 1);
        s.push_str(&format!("f {a} {b} {c}\n"));
    }
    s
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {message}")]
pub struct ObjError {
    pub line: usize,
    pub message: String,
}

fn obj_err(line: usize, message: impl Into<String>) -> ObjError {
    ObjError { line, message: message.into() }
}

/// Reads a frame written by [`obj_string`]. The face list must be the
/// octahedron's, in any order, each face wound as written.
pub fn parse_obj(text: &str) -> Result<OctaRealization, ObjError> {
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let xs: Vec<f64> = tok
                    .map(|t| t.parse::<f64>().map_err(|_| obj_err(n, format!("bad coordinate `{t}`"))))
                    .collect::<Result<_, _>>()?;
                if xs.len() != 3 {
                    return Err(obj_err(n, "vertex needs three coordinates"));
                }
                if !xs.iter().all(|x| x.is_finite()) {
                    return Err(obj_err(n, "non-finite coordinate"));
                }
                verts.push(Vec3::new(xs[0], xs[1], xs[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = tok
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        head.parse::<usize>()
                            .ok()
                            .filter(|&k| k >= 1)
                            .ok_or_else(|| obj_err(n, format!("bad index `{t}`")))
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() != 3 {
                    return Err(obj_err(n, "only triangular faces are supported"));
                }
                faces.push((n, [idx[0], idx[1], idx[2]]));
            }
            Some("o" | "g" | "s" | "vn" | "vt" | "usemtl" | "mtllib") => {}
            Some(other) => return Err(obj_err(n, format!("unsupported statement `{other}`"))),
            None => {}
        }
    }
    if verts.len() != 6 {
        return Err(obj_err(0, format!("expected 6 vertices, found {}", verts.len())));
    }
    if faces.len() != 8 {
        return Err(obj_err(0, format!("expected 8 faces, found {}", faces.len())));
    }
    let mut seen = [false; 8];
    for (n, f) in faces {
        if f.iter().any(|&k| k > 6) {
            return Err(obj_err(n, "face index out of range"));
        }
        let labels = f.map(|k| VertexLabel::ALL[k - 1]);
        let hit = Facet::ALL.iter().position(|g| (0..3).any(|s| (0..3).all(|j| g.0[j] == labels[(j + s) % 3])));
        match hit {
            Some(k) if !seen[k] => seen[k] = true,
            Some(_) => return Err(obj_err(n, "duplicate face")),
            None => return Err(obj_err(n, "face is not an octahedron facet with outward winding")),
        }
    }
    Ok(OctaRealization::new([verts[0], verts[1], verts[2], verts[3], verts[4], verts[5]]))
}

/// Column names of `path.csv`.
pub fn path_csv_header() -> Vec<String> {
    let mut h = vec!["frame".to_string(), "arclength".to_string()];
    h.extend(EdgeKey::ALL.iter().map(|e| format!("dihedral_{e}")));
    h.push("max_edge_deviation".into());
    h.push("flat_flag".into());
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRow {
    pub frame: usize,
    pub arclength: f64,
    pub dihedrals: [f64; 12],
    pub max_edge_deviation: f64,
    pub flat: bool,
}

pub fn path_csv_string(path: &FlexionPath) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(path_csv_header()).expect("in-memory write");
    for (i, f) in path.frames.iter().enumerate() {
        let mut rec = vec![i.to_string(), f.arclength.to_string()];
        rec.extend(f.dihedrals.iter().map(|d| d.to_string()));
        rec.push(f.max_edge_deviation.to_string());
        rec.push(u8::from(f.flat).to_string());
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("path.csv row {row}: {message}")]
pub struct CsvError {
    pub row: usize,
    pub message: String,
}

pub fn parse_path_csv(text: &str) -> Result<Vec<PathRow>, CsvError> {
    let err = |row: usize, m: String| CsvError { row, message: m };
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| err(0, e.to_string()))?.clone();
    if header.iter().ne(path_csv_header().iter().map(String::as_str)) {
        return Err(err(0, "unexpected header".into()));
    }
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| err(row, e.to_string()))?;
        let num = |k: usize| -> Result<f64, CsvError> {
            rec[k].parse::<f64>().map_err(|_| err(row, format!("bad number `{}` in column {}", &rec[k], k + 1)))
        };
        let frame = rec[0].parse::<usize>().map_err(|_| err(row, format!("bad frame index `{}`", &rec[0])))?;
        let mut dihedrals = [0.0; 12];
        for (k, d) in dihedrals.iter_mut().enumerate() {
            *d = num(2 + k)?;
        }
        let flat = match &rec[15] {
            "0" => false,
            "1" => true,
            other => return Err(err(row, format!("bad flat flag `{other}`"))),
        };
        out.push(PathRow { frame, arclength: num(1)?, dihedrals, max_edge_deviation: num(14)?, flat });
    }
    Ok(out)
}

pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i:04}.obj")
}

/// Writes `frame_%04d.obj` for every frame and `path.csv`.
pub fn export_frames(path: &FlexionPath, dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(path.frames.len() + 1);
    for (i, f) in path.frames.iter().enumerate() {
        let p = dir.join(frame_file_name(i));
        let comment = format!("frame {i}\narclength {}", f.arclength);
        fs::write(&p, obj_string(&f.realization, Some(&comment)))?;
        files.push(p);
    }
    let csv = dir.join(PATH_CSV);
    fs::write(&csv, path_csv_string(path))?;
    files.push(csv);
    Ok(files)
}

#[derive(Debug, Error)]
pub enum ImportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{file}: {source}")]
    Obj { file: PathBuf, source: ObjError },
    #[error("no frame files in {0}")]
    Empty(PathBuf),
}

/// Reads `frame_*.obj` files of a directory in name order.
pub fn import_frames(dir: &Path) -> Result<Vec<OctaRealization>, ImportError> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("frame_") && n.ends_with(".obj"))
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(ImportError::Empty(dir.to_owned()));
    }
    names
        .into_iter()
        .map(|p| {
            let text = fs::read_to_string(&p)?;
            parse_obj(&text).map_err(|source| ImportError::Obj { file: p, source })
        })
        .collect()
}

// ---------------------------------------------------------------- runner

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    InputError,
    NotFlexible,
    ContinuationStall,
    BranchAmbiguity,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::InputError => 1,
            Status::NotFlexible | Status::ContinuationStall | Status::BranchAmbiguity => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorInfo {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub schema: u32,
    pub command: Option<String>,
    pub status: Status,
    pub exit_code: i32,
    pub error: Option<ErrorInfo>,
    pub warnings: Vec<String>,
    /// Files written, relative to the output directory.
    pub artifacts: Vec<String>,
    pub results: Value,
    pub cases: Vec<Summary>,
}

impl Summary {
    fn new(command: Option<Command>) -> Self {
        Self {
            schema: SUMMARY_SCHEMA,
            command: command.map(|c| c.name().to_string()),
            status: Status::Ok,
            exit_code: 0,
            error: None,
            warnings: Vec::new(),
            artifacts: Vec::new(),
            results: Value::Null,
            cases: Vec::new(),
        }
    }

    fn fail(&mut self, status: Status, kind: &str, message: String) {
        self.status = status;
        self.exit_code = status.exit_code();
        self.error = Some(ErrorInfo { kind: kind.into(), message });
    }

    /// Summary for a job that never got past loading.
    pub fn for_spec_error(err: &SpecError) -> Self {
        let mut s = Summary::new(None);
        let kind = match err {
            SpecError::Io { .. } => "IoError",
            SpecError::Parse { .. } => "ParseError",
            SpecError::Validation { .. } => "ValidationError",
        };
        s.fail(Status::InputError, kind, err.to_string());
        if let SpecError::Parse { line, column, .. } = err {
            s.results = json!({ "line": line, "column": column });
        }
        if let SpecError::Validation { field, .. } = err {
            s.results = json!({ "field": field });
        }
        s
    }
}

pub fn write_summary(dir: &Path, s: &Summary) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let p = dir.join(SUMMARY_FILE);
    fs::write(&p, serde_json::to_string_pretty(s).expect("summary serializes") + "\n")?;
    Ok(p)
}

#[derive(Debug, Error)]
enum RunError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Geometry(#[from] OctaError),
    #[error(transparent)]
    Flex(#[from] FlexError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Import(#[from] ImportError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl RunError {
    fn classify(&self) -> (Status, &'static str) {
        match self {
            RunError::Flex(FlexError::NotFlexible { .. }) => (Status::NotFlexible, "NotFlexible"),
            RunError::Flex(FlexError::ContinuationStall { .. }) => (Status::ContinuationStall, "ContinuationStall"),
            RunError::Flex(FlexError::BranchAmbiguity { .. }) => (Status::BranchAmbiguity, "BranchAmbiguity"),
            RunError::Flex(FlexError::InvalidInput(_)) => (Status::InputError, "InvalidInput"),
            RunError::Flex(FlexError::Geometry(_)) | RunError::Geometry(_) => (Status::InputError, "GeometryError"),
            RunError::Input(_) => (Status::InputError, "InputError"),
            RunError::Build(_) => (Status::InputError, "BuildError"),
            RunError::Verify(_) => (Status::InputError, "VerifyError"),
            RunError::Import(_) => (Status::InputError, "ImportError"),
            RunError::Io(_) => (Status::InputError, "IoError"),
        }
    }
}

struct Realized {
    realization: Option<OctaRealization>,
    edge_lengths: OctaEdgeLengths,
    construction: Option<Type3Construction>,
}

fn realize(g: &Geometry) -> Result<Realized, RunError> {
    let full = |r: OctaRealization, construction| -> Result<Realized, RunError> {
        Ok(Realized { edge_lengths: edge_lengths(&r)?, realization: Some(r), construction })
    };
    match g {
        Geometry::Type1 { a, b, f, axis, mirror: false } => full(build_type1(*a, *b, *f, axis)?, None),
        Geometry::Type1 { a, b, f, axis, mirror: true } => full(build_type1_mirror(*a, *b, *f, axis)?, None),
        Geometry::Type2 { c, f, a, e, plane } => full(build_type2(*c, *f, *a, *e, plane)?, None),
        Geometry::Type3 { triangle: [a, b, c], p } => {
            let (con, r) = build_type3_flat(*a, *b, *c, *p)?;
            full(r, Some(con))
        }
        Geometry::Explicit { positions: Some(r), .. } => full(*r, None),
        Geometry::Explicit { positions: None, edge_lengths: Some(el), .. } => {
            Ok(Realized { realization: None, edge_lengths: *el, construction: None })
        }
        Geometry::Explicit { positions: None, edge_lengths: None } => Err(RunError::Input("empty geometry".into())),
    }
}

struct Ctx<'a> {
    spec: &'a JobSpec,
    out: &'a Path,
    summary: &'a mut Summary,
}

impl Ctx<'_> {
    fn write(&mut self, name: &str, contents: &str) -> io::Result<()> {
        fs::create_dir_all(self.out)?;
        fs::write(self.out.join(name), contents)?;
        self.summary.artifacts.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> io::Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
        self.write(name, &(text + "\n"))
    }

    fn export(&mut self, path: &FlexionPath) -> io::Result<()> {
        let files = export_frames(path, self.out)?;
        for f in files {
            if let Some(n) = f.file_name().and_then(|n| n.to_str()) {
                self.summary.artifacts.push(n.to_string());
            }
        }
        self.write_json("events.json", &path.events)
    }
}

fn vertex_classes(r: &OctaRealization, tol: f64) -> Result<Vec<Value>, OctaError> {
    let mut out = Vec::new();
    for v in VertexLabel::ALL {
        let ring = crate::octa_model::neighbors_cyclic(v);
        let e = |i: usize| EdgeKey::new(v, ring[i]).expect("edge");
        let fa = crate::octa_model::vertex_face_angles(r, v, (e(0), e(1)))?;
        out.push(json!({ "vertex": v, "face_angles": fa, "class": classify(&fa, tol) }));
    }
    Ok(out)
}

fn describe(ctx: &mut Ctx<'_>, re: &Realized) -> Result<Value, RunError> {
    let tol = ctx.spec.tolerances;
    let mut res = json!({
        "edge_lengths": re.edge_lengths,
        "flex_type": classify_edge_lengths(&re.edge_lengths, re.realization.as_ref(), tol.length),
        "triangle_violations": validate(&re.edge_lengths),
    });
    if let Some(r) = &re.realization {
        let rep = flex_dimension(r, &re.edge_lengths, ctx.spec.drive.rank_tol);
        res["realization"] = json!(r);
        res["rigidity"] = json!(rep);
        res["vertices"] = json!(vertex_classes(r, tol.linkage)?);
    }
    if let Some(c) = &re.construction {
        res["construction"] = json!(c);
    }
    Ok(res)
}

fn needs_positions(re: &Realized) -> Result<OctaRealization, RunError> {
    re.realization.ok_or_else(|| RunError::Input("this command needs vertex positions".into()))
}

fn path_results(path: &FlexionPath) -> Value {
    json!({
        "frames": path.frames.len(),
        "termination": path.termination,
        "flat_events": path.flat_events(),
        "max_edge_deviation": path.max_edge_deviation(),
        "final_arclength": path.frames.last().map(|f| f.arclength),
    })
}

fn compute_path(ctx: &mut Ctx<'_>, g: &Geometry) -> Result<FlexionPath, RunError> {
    let re = realize(g)?;
    let r = needs_positions(&re)?;
    match flex_path(&r, &re.edge_lengths, &ctx.spec.drive) {
        Ok(p) => {
            ctx.export(&p)?;
            Ok(p)
        }
        Err(e) => {
            if let Some(p) = e.partial_path() {
                ctx.export(p)?;
                ctx.summary.results = path_results(p);
            }
            Err(e.into())
        }
    }
}

/// Runs every verifier over a path.
pub fn verify_report(path: &FlexionPath) -> Result<Value, VerifyError> {
    let mut mannheim = Vec::new();
    let mut worst = BTreeMap::new();
    let mut skipped = 0usize;
    for (i, f) in path.frames.iter().enumerate() {
        for base in [BaseFacet::ABC, BaseFacet::DEF] {
            let key = format!("{base:?}");
            match mannheim_point(&f.realization, base) {
                Ok(c) => {
                    let w = worst.entry(key).or_insert(0.0_f64);
                    *w = w.max(c.residual);
                    mannheim.push(json!({ "frame": i, "base": base, "residual": c.residual, "spread": c.spread }));
                }
                Err(VerifyError::NearParallelPlanes(cond)) => {
                    skipped += 1;
                    mannheim.push(
                        json!({ "frame": i, "base": base, "skipped": "near_parallel_planes", "conditioning": cond }),
                    );
                }
                Err(e) => return Err(e),
            }
        }
    }
    let pairs = opposite_dihedral_trace(path)?;
    let hexagons = hexagon_traces(path)?;
    let fits = if path.frames.len() >= 3 { all_line_fits(path)? } else { Vec::new() };
    Ok(json!({
        "frames": path.frames.len(),
        "mannheim_max_residual": worst,
        "mannheim_skipped": skipped,
        "mannheim": mannheim,
        "opposite_pairs": pairs,
        "hexagons": hexagons,
        "line_fits": fits,
    }))
}

fn run_case(ctx: &mut Ctx<'_>, geometry: Option<&Geometry>) -> Result<(), RunError> {
    let spec = ctx.spec;
    let geometry = || geometry.ok_or_else(|| RunError::Input("missing geometry".into()));
    match spec.command {
        Command::BuildType1 | Command::BuildType1Mirror | Command::BuildType2 | Command::BuildType3 => {
            let re = realize(geometry()?)?;
            let r = needs_positions(&re)?;
            ctx.write("frame_0000.obj", &obj_string(&r, Some(spec.command.name())))?;
            ctx.write_json("realization.json", &r)?;
            ctx.summary.results = describe(ctx, &re)?;
        }
        Command::Classify => {
            let re = realize(geometry()?)?;
            ctx.summary.results = describe(ctx, &re)?;
        }
        Command::Flex => {
            let path = compute_path(ctx, geometry()?)?;
            ctx.summary.results = path_results(&path);
        }
        Command::Verify => {
            let path = match &spec.path_dir {
                Some(dir) => {
                    let frames = import_frames(dir)?;
                    let el = edge_lengths(&frames[0])?;
                    FlexionPath::from_realizations(frames, &el, spec.drive.flat_tol)?
                }
                None => compute_path(ctx, geometry()?)?,
            };
            let report = verify_report(&path)?;
            ctx.write_json("verify.json", &report)?;
            let mut res = path_results(&path);
            for k in ["mannheim_max_residual", "mannheim_skipped"] {
                res[k] = report[k].clone();
            }
            let pairs = opposite_dihedral_trace(&path)?;
            res["opposite_pairs_max_deviation"] = json!(pairs.iter().map(|p| p.deviation()).fold(0.0, f64::max));
            ctx.summary.results = res;
        }
        Command::Fourbar => {
            let [a, b, c, d] = spec.sides.ok_or_else(|| RunError::Input("missing sides".into()))?;
            let k = planar_fourbar_coeffs(a, b, c, d).map_err(|e| RunError::Input(e.to_string()))?;
            println!("{} {} {} {} {}", k.a, k.b, k.c, k.d, k.e);
            ctx.summary.results =
                json!({ "coefficients": [k.a, k.b, k.c, k.d, k.e], "discriminant": k.discriminant() });
        }
    }
    Ok(())
}

fn run_one(spec: &JobSpec, geometry: Option<&Geometry>, out: &Path) -> Summary {
    let mut summary = Summary::new(Some(spec.command));
    summary.warnings = spec.warnings.clone();
    let mut ctx = Ctx { spec, out, summary: &mut summary };
    if let Err(e) = run_case(&mut ctx, geometry) {
        let (status, kind) = e.classify();
        info!("{kind}: {e}");
        summary.fail(status, kind, e.to_string());
    }
    summary
}

/// Runs a job and writes its artifacts and `summary.json` under `spec.out`.
///
/// With a sweep, each case runs in `case_%04d/` on up to `jobs` threads and
/// the top-level exit code is the worst case's.
pub fn run(spec: &JobSpec, jobs: usize) -> Summary {
    let mut summary = if spec.sweep.is_empty() {
        run_one(spec, spec.geometry.as_ref(), &spec.out)
    } else {
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Summary>>> = Mutex::new(vec![None; spec.sweep.len()]);
        std::thread::scope(|s| {
            for _ in 0..jobs.clamp(1, spec.sweep.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(g) = spec.sweep.get(i) else { break };
                    let dir = spec.out.join(format!("case_{i:04}"));
                    let mut case = run_one(spec, Some(g), &dir);
                    if let Err(e) = write_summary(&dir, &case) {
                        case.fail(Status::InputError, "IoError", e.to_string());
                    }
                    info!("case {i}: {:?}", case.status);
                    results.lock().expect("lock")[i] = Some(case);
                });
            }
        });
        let cases: Vec<Summary> =
            results.into_inner().expect("lock").into_iter().map(|c| c.expect("case ran")).collect();
        let mut top = Summary::new(Some(spec.command));
        top.warnings = spec.warnings.clone();
        if let Some(worst) = cases.iter().max_by_key(|c| c.exit_code) {
            if worst.exit_code != 0 {
                top.status = worst.status;
                top.exit_code = worst.exit_code;
                top.error = Some(ErrorInfo {
                    kind: "SweepCaseFailed".into(),
                    message: format!("{} case(s) failed", cases.iter().filter(|c| c.exit_code != 0).count()),
                });
            }
        }
        top.results = json!({ "cases": cases.len() });
        top.artifacts = (0..cases.len()).map(|i| format!("case_{i:04}/{SUMMARY_FILE}")).collect();
        top.cases = cases;
        top
    };
    if let Err(e) = write_summary(&spec.out, &summary) {
        summary.fail(Status::InputError, "IoError", e.to_string());
    }
    summary
}
