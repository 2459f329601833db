//! On-disk formats for motion clips, conditioning features, edit
//! constraints and dataset manifests.
//!
//! Binary files start with a short text header: a `KIND v1` line, then
//! `key value` lines, then `end`. The payload that follows is
//! little-endian `f32`, row-major.

use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use thiserror::Error;

use crate::diffusion::EditConstraint;
use crate::kinematics::{MotionClip, PoseLayout};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
}

impl FormatError {
    fn malformed(path: &Path, message: impl Into<String>) -> Self {
        FormatError::Malformed { path: path.to_path_buf(), message: message.into() }
    }
}

/// Ordered `key value` pairs of a file header.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Header {
    pub kind: String,
    pub fields: Vec<(String, String)>,
}

impl Header {
    pub fn new(kind: &str) -> Self {
        Self { kind: kind.to_string(), fields: Vec::new() }
    }

    pub fn push(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.fields.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Fields whose key begins with `prefix`, with the prefix stripped.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.fields.iter().filter_map(move |(k, v)| k.strip_prefix(prefix).map(|k| (k, v.as_str())))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, path: &Path) -> Result<T, FormatError> {
        let raw = self.get(key).ok_or_else(|| FormatError::malformed(path, format!("missing header field `{key}`")))?;
        raw.parse().map_err(|_| FormatError::malformed(path, format!("bad value for `{key}`: {raw}")))
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "{} v1", self.kind)?;
        for (k, v) in &self.fields {
            writeln!(w, "{k} {}", v.replace('\n', " "))?;
        }
        writeln!(w, "end")
    }

    pub fn read_from(r: &mut impl BufRead, kind: &str, path: &Path) -> Result<Self, FormatError> {
        let io_err = |source| FormatError::Io { path: path.to_path_buf(), source };
        let mut line = String::new();
        r.read_line(&mut line).map_err(io_err)?;
        if line.trim_end() != format!("{kind} v1") {
            return Err(FormatError::malformed(path, format!("expected a `{kind} v1` file, found `{}`", line.trim_end())));
        }
        let mut header = Header::new(kind);
        loop {
            line.clear();
            if r.read_line(&mut line).map_err(io_err)? == 0 {
                return Err(FormatError::malformed(path, "header is not terminated by `end`"));
            }
            let text = line.trim_end_matches(['\n', '\r']);
            if text == "end" {
                return Ok(header);
            }
            let (k, v) = text.split_once(' ').unwrap_or((text, ""));
            header.fields.push((k.to_string(), v.to_string()));
        }
    }
}

fn write_f32s(w: &mut impl Write, values: impl IntoIterator<Item = f64>) -> io::Result<()> {
    let mut buf = Vec::new();
    for v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_f32s(r: &mut impl Read, count: usize, path: &Path) -> Result<Vec<f64>, FormatError> {
    let mut buf = vec![0u8; count * 4];
    r.read_exact(&mut buf)
        .map_err(|_| FormatError::malformed(path, format!("payload shorter than {count} values")))?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })?;
    if !rest.is_empty() {
        return Err(FormatError::malformed(path, format!("{} trailing bytes after payload", rest.len())));
    }
    let values: Vec<f64> = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::malformed(path, format!("non-finite value at index {i}")));
    }
    Ok(values)
}

fn create(path: &Path) -> Result<io::BufWriter<fs::File>, FormatError> {
    fs::File::create(path)
        .map(io::BufWriter::new)
        .map_err(|source| FormatError::Io { path: path.to_path_buf(), source })
}

fn open(path: &Path) -> Result<BufReader<fs::File>, FormatError> {
    fs::File::open(path).map(BufReader::new).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })
}

fn finish(w: io::BufWriter<fs::File>, path: &Path) -> Result<(), FormatError> {
    w.into_inner()
        .map_err(|e| e.into_error())
        .and_then(|f| f.sync_all())
        .map_err(|source| FormatError::Io { path: path.to_path_buf(), source })
}

/// A motion clip plus free-form provenance metadata (`meta.*` header keys).
#[derive(Clone, Debug, PartialEq)]
pub struct MotionFile {
    pub clip: MotionClip,
    pub meta: Vec<(String, String)>,
}

impl MotionFile {
    pub fn new(clip: MotionClip) -> Self {
        Self { clip, meta: Vec::new() }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        let mut h = Header::new("MOTION");
        h.push("frames", self.clip.frames()).push("fps", self.clip.fps()).push("layout", self.clip.layout().tag());
        for (k, v) in &self.meta {
            h.push(&format!("meta.{k}"), v);
        }
        let mut w = create(path)?;
        let io_err = |source| FormatError::Io { path: path.to_path_buf(), source };
        h.write_to(&mut w).map_err(io_err)?;
        write_f32s(&mut w, self.clip.data().iter().copied()).map_err(io_err)?;
        finish(w, path)
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        let mut r = open(path)?;
        let h = Header::read_from(&mut r, "MOTION", path)?;
        let frames: usize = h.parse("frames", path)?;
        let fps: f64 = h.parse("fps", path)?;
        let tag = h.get("layout").unwrap_or_default();
        let layout =
            PoseLayout::from_tag(tag).ok_or_else(|| FormatError::malformed(path, format!("unknown layout `{tag}`")))?;
        let values = read_f32s(&mut r, frames * layout.dim(), path)?;
        let data = Array2::from_shape_vec((frames, layout.dim()), values).expect("length checked");
        let clip = MotionClip::new(data, fps, layout).map_err(|e| FormatError::malformed(path, e.to_string()))?;
        let meta = h.with_prefix("meta.").map(|(k, v)| (k.to_string(), v.to_string())).collect();
        Ok(Self { clip, meta })
    }
}

/// A per-frame conditioning sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    pub features: Array2<f64>,
    pub fps: f64,
    /// Free-form note on how the features were produced.
    pub source: String,
}

impl FeatureFile {
    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        let mut h = Header::new("FEATURES");
        h.push("frames", self.features.nrows())
            .push("dim", self.features.ncols())
            .push("fps", self.fps)
            .push("source", &self.source);
        let mut w = create(path)?;
        let io_err = |source| FormatError::Io { path: path.to_path_buf(), source };
        h.write_to(&mut w).map_err(io_err)?;
        write_f32s(&mut w, self.features.iter().copied()).map_err(io_err)?;
        finish(w, path)
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        let mut r = open(path)?;
        let h = Header::read_from(&mut r, "FEATURES", path)?;
        let frames: usize = h.parse("frames", path)?;
        let dim: usize = h.parse("dim", path)?;
        let fps: f64 = h.parse("fps", path)?;
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(FormatError::malformed(path, format!("fps must be positive, got {fps}")));
        }
        let values = read_f32s(&mut r, frames * dim, path)?;
        let features = Array2::from_shape_vec((frames, dim), values).expect("length checked");
        Ok(Self { features, fps, source: h.get("source").unwrap_or_default().to_string() })
    }
}

/// Writes an edit constraint: the mask as an LSB-first bitset, then the
/// known values.
pub fn write_constraint(path: &Path, c: &EditConstraint) -> Result<(), FormatError> {
    let (frames, dim) = c.dim();
    let mut h = Header::new("CONSTRAINT");
    h.push("frames", frames).push("dim", dim).push("mask", "bitset-lsb");
    let mut bits = vec![0u8; (frames * dim).div_ceil(8)];
    for (i, _) in c.mask().iter().enumerate().filter(|(_, &m)| m) {
        bits[i / 8] |= 1 << (i % 8);
    }
    let mut w = create(path)?;
    let io_err = |source| FormatError::Io { path: path.to_path_buf(), source };
    h.write_to(&mut w).map_err(io_err)?;
    w.write_all(&bits).map_err(io_err)?;
    write_f32s(&mut w, c.known().iter().copied()).map_err(io_err)?;
    finish(w, path)
}

pub fn read_constraint(path: &Path) -> Result<EditConstraint, FormatError> {
    let mut r = open(path)?;
    let h = Header::read_from(&mut r, "CONSTRAINT", path)?;
    let frames: usize = h.parse("frames", path)?;
    let dim: usize = h.parse("dim", path)?;
    if h.get("mask") != Some("bitset-lsb") {
        return Err(FormatError::malformed(path, "unsupported mask encoding"));
    }
    let mut bits = vec![0u8; (frames * dim).div_ceil(8)];
    r.read_exact(&mut bits).map_err(|_| FormatError::malformed(path, "truncated mask"))?;
    let mask = Array2::from_shape_fn((frames, dim), |(i, j)| {
        let k = i * dim + j;
        bits[k / 8] >> (k % 8) & 1 == 1
    });
    let values = read_f32s(&mut r, frames * dim, path)?;
    let known = Array2::from_shape_vec((frames, dim), values).expect("length checked");
    EditConstraint::new(known, mask).map_err(|e| FormatError::malformed(path, e.to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub motion: PathBuf,
    pub features: PathBuf,
    pub split: Split,
}

/// Paired motion/feature files. Text format: `fps F`, `frames N`, then one
/// `motion features split` line per pair; paths are relative to the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub fps: f64,
    pub frames: usize,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = format!("fps {}\nframes {}\n", self.fps, self.frames);
        for e in &self.entries {
            s.push_str(&format!("{} {} {}\n", e.motion.display(), e.features.display(), e.split.as_str()));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        fs::write(path, self.to_text()).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })
    }

    /// Reads a manifest, resolving entry paths against its directory and
    /// checking that every referenced file exists.
    pub fn read(path: &Path) -> Result<Self, FormatError> {
        let text = fs::read_to_string(path).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let (mut fps, mut frames, mut entries) = (None, None, Vec::new());
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || FormatError::malformed(path, format!("line {}: `{line}`", n + 1));
            match parts.as_slice() {
                ["fps", v] => fps = Some(v.parse::<f64>().map_err(|_| bad())?),
                ["frames", v] => frames = Some(v.parse::<usize>().map_err(|_| bad())?),
                [m, f, split] => {
                    let split = match *split {
                        "train" => Split::Train,
                        "test" => Split::Test,
                        _ => return Err(bad()),
                    };
                    let (motion, features) = (base.join(m), base.join(f));
                    for p in [&motion, &features] {
                        if !p.is_file() {
                            return Err(FormatError::malformed(path, format!("missing file {}", p.display())));
                        }
                    }
                    entries.push(ManifestEntry { motion, features, split });
                }
                _ => return Err(bad()),
            }
        }
        let fps = fps.ok_or_else(|| FormatError::malformed(path, "missing `fps`"))?;
        let frames = frames.ok_or_else(|| FormatError::malformed(path, "missing `frames`"))?;
        Ok(Self { fps, frames, entries })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}
