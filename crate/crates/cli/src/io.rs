//! On-disk formats: MOTChallenge text lines, the embedding sidecar, the
//! feature-map binary and the text checkpoint.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use trajcon::embed::{EmbeddingModel, FeatureMap, OffsetHead, ProjectionDims, ProjectionHead, SamplingPattern};
use trajcon::BoundingBox;

/// Malformed input, located by 1-based line and field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub field: Option<usize>,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.field {
            Some(field) => write!(f, "line {}, field {}: {}", self.line, field, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

impl std::error::Error for ParseError {}

/// One row of a MOTChallenge gt, det or result file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotLine {
    pub frame: u32,
    /// Track or identity id; `-1` for raw detections.
    pub id: i64,
    pub bb_left: f64,
    pub bb_top: f64,
    pub bb_width: f64,
    pub bb_height: f64,
    pub conf: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl MotLine {
    pub fn new(frame: u32, id: i64, bbox: &BoundingBox<f64>, conf: f64) -> Self {
        Self {
            frame,
            id,
            bb_left: bbox.left,
            bb_top: bbox.top,
            bb_width: bbox.width,
            bb_height: bbox.height,
            conf,
            x: -1.0,
            y: -1.0,
            z: -1.0,
        }
    }

    pub fn bbox(&self) -> BoundingBox<f64> {
        BoundingBox::new(self.bb_left, self.bb_top, self.bb_width, self.bb_height)
    }
}

// `{}` on f64 prints the shortest string that parses back to the same bits.
impl fmt::Display for MotLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{},{},{},{}",
            self.frame,
            self.id,
            self.bb_left,
            self.bb_top,
            self.bb_width,
            self.bb_height,
            self.conf,
            self.x,
            self.y,
            self.z
        )
    }
}

fn field<T: std::str::FromStr>(raw: &str, line: usize, index: usize, what: &str) -> Result<T, ParseError> {
    raw.trim().parse().map_err(|_| ParseError {
        line,
        field: Some(index + 1),
        message: format!("expected {what}, found `{}`", raw.trim()),
    })
}

/// Parses one comma-separated line; `line` only labels errors.
pub fn parse_mot_line_at(text: &str, line: usize) -> Result<MotLine, ParseError> {
    let parts: Vec<&str> = text.trim().split(',').collect();
    if parts.len() != 10 {
        return Err(ParseError {
            line,
            field: None,
            message: format!("expected 10 comma-separated fields, found {}", parts.len()),
        });
    }
    let frame: u32 = field(parts[0], line, 0, "a frame number")?;
    if frame < 1 {
        return Err(ParseError {
            line,
            field: Some(1),
            message: "frame numbers start at 1".into(),
        });
    }
    let id: i64 = field(parts[1], line, 1, "an integer id")?;
    if id < 1 && id != -1 {
        return Err(ParseError {
            line,
            field: Some(2),
            message: "id must be positive or -1".into(),
        });
    }
    let mut v = [0.0f64; 8];
    for (i, slot) in v.iter_mut().enumerate() {
        *slot = field(parts[i + 2], line, i + 2, "a number")?;
    }
    if v[2] < 0.0 || v[3] < 0.0 {
        return Err(ParseError {
            line,
            field: Some(if v[2] < 0.0 { 5 } else { 6 }),
            message: "box size must be non-negative".into(),
        });
    }
    Ok(MotLine {
        frame,
        id,
        bb_left: v[0],
        bb_top: v[1],
        bb_width: v[2],
        bb_height: v[3],
        conf: v[4],
        x: v[5],
        y: v[6],
        z: v[7],
    })
}

pub fn parse_mot_line(text: &str) -> Result<MotLine, ParseError> {
    parse_mot_line_at(text, 1)
}

pub fn write_mot_line(line: &MotLine) -> String {
    line.to_string()
}

/// Blank lines are skipped.
pub fn parse_mot(text: &str) -> Result<Vec<MotLine>, ParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_mot_line_at(l, i + 1))
        .collect()
}

pub fn read_mot(path: &Path) -> Result<Vec<MotLine>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_mot(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_mot(path: &Path, lines: &[MotLine]) -> Result<()> {
    let mut w = create(path)?;
    for l in lines {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

/// Lines grouped by frame, keeping file order inside each frame.
pub fn group_by_frame(lines: &[MotLine]) -> BTreeMap<u32, Vec<MotLine>> {
    let mut out: BTreeMap<u32, Vec<MotLine>> = BTreeMap::new();
    for l in lines {
        out.entry(l.frame).or_default().push(*l);
    }
    out
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// One sidecar row: the `index`-th detection of `frame` and its embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct SidecarRow {
    pub frame: u32,
    pub index: usize,
    pub values: Vec<f64>,
}

/// Header `D=<dim>`, then `frame,index,v1,…,vD` with 17 significant digits.
pub fn write_sidecar(path: &Path, dim: usize, rows: &[SidecarRow]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "D={dim}")?;
    for r in rows {
        if r.values.len() != dim {
            bail!("sidecar row for frame {} has {} values, expected {dim}", r.frame, r.values.len());
        }
        write!(w, "{},{}", r.frame, r.index)?;
        for v in &r.values {
            write!(w, ",{v:.16e}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_sidecar(text: &str) -> Result<(usize, Vec<SidecarRow>), ParseError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let dim = match lines.next() {
        Some((_, h)) => h
            .trim()
            .strip_prefix("D=")
            .and_then(|d| d.parse::<usize>().ok())
            .ok_or(ParseError {
                line: 1,
                field: None,
                message: "expected header `D=<dim>`".into(),
            })?,
        None => {
            return Err(ParseError {
                line: 1,
                field: None,
                message: "empty sidecar".into(),
            })
        }
    };
    let mut rows = Vec::new();
    for (i, l) in lines {
        let line = i + 1;
        let parts: Vec<&str> = l.trim().split(',').collect();
        if parts.len() != dim + 2 {
            return Err(ParseError {
                line,
                field: None,
                message: format!("expected {} fields, found {}", dim + 2, parts.len()),
            });
        }
        let frame = field(parts[0], line, 0, "a frame number")?;
        let index = field(parts[1], line, 1, "a detection index")?;
        let values = parts[2..]
            .iter()
            .enumerate()
            .map(|(k, p)| field(p, line, k + 2, "a number"))
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(SidecarRow { frame, index, values });
    }
    Ok((dim, rows))
}

pub fn read_sidecar(path: &Path) -> Result<(usize, Vec<SidecarRow>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_sidecar(&text).with_context(|| format!("parsing {}", path.display()))
}

pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";
pub const FMAP_VERSION: u32 = 1;

/// `FMAP`, version, frame count; per frame: frame number, H, W, C (u32) and
/// `H·W·C` f64 values in row-major `(y, x, c)` order. Little-endian throughout.
pub fn write_fmaps(path: &Path, maps: &[(u32, FeatureMap<f64>)]) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(FMAP_MAGIC)?;
    w.write_all(&FMAP_VERSION.to_le_bytes())?;
    w.write_all(&(maps.len() as u32).to_le_bytes())?;
    for (frame, m) in maps {
        for v in [*frame, m.height() as u32, m.width() as u32, m.channels() as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in m.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_fmaps(path: &Path) -> Result<Vec<(u32, FeatureMap<f64>)>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(pos..pos + n)
            .ok_or_else(|| anyhow!("{}: truncated at byte {pos}", path.display()))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != FMAP_MAGIC {
        bail!("{}: not a feature-map file", path.display());
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));
    let version = u32_at(take(4)?);
    if version != FMAP_VERSION {
        bail!("{}: unsupported version {version}", path.display());
    }
    let n = u32_at(take(4)?) as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let frame = u32_at(take(4)?);
        let h = u32_at(take(4)?) as usize;
        let wd = u32_at(take(4)?) as usize;
        let c = u32_at(take(4)?) as usize;
        let raw = take(8 * h * wd * c)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        out.push((frame, FeatureMap::from_vec(h, wd, c, data)?));
    }
    Ok(out)
}

pub const CHECKPOINT_HEADER: &str = "trajcon-checkpoint v1";

/// Model parameters plus free-form `key=value` metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: Vec<(String, String)>,
    pub model: EmbeddingModel<f64>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn pattern_name(p: SamplingPattern) -> &'static str {
    match p {
        SamplingPattern::Grid => "grid",
        SamplingPattern::Zero => "zero",
    }
}

pub fn parse_pattern(s: &str) -> Result<SamplingPattern> {
    match s {
        "grid" => Ok(SamplingPattern::Grid),
        "zero" => Ok(SamplingPattern::Zero),
        other => bail!("unknown sampling pattern `{other}`"),
    }
}

/// Header, `key=value` lines, a `---` separator, then for each parameter a
/// `name count` line followed by its values on one comma-separated line.
/// Shape keys (`n_k`, `channels`, layer widths, `pattern`) are always written.
pub fn write_checkpoint(
    path: &Path,
    model: &EmbeddingModel<f64>,
    pattern: SamplingPattern,
    metadata: &[(String, String)],
) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{CHECKPOINT_HEADER}")?;
    let d = model.projection.dims();
    let shape = [
        ("n_k", model.offsets.n_k().to_string()),
        ("channels", model.offsets.channels().to_string()),
        ("hidden1", d.hidden1.to_string()),
        ("hidden2", d.hidden2.to_string()),
        ("pre_dim", d.pre.to_string()),
        ("output_dim", d.output.to_string()),
        ("pattern", pattern_name(pattern).to_string()),
    ];
    for (k, v) in shape.iter().map(|(k, v)| (k.to_string(), v.clone())).chain(
        metadata
            .iter()
            .filter(|(k, _)| !shape.iter().any(|(s, _)| s == k))
            .cloned(),
    ) {
        writeln!(w, "{k}={v}")?;
    }
    writeln!(w, "---")?;
    for (name, values) in EmbeddingModel::<f64>::parameter_names().iter().zip(model.parameters()) {
        writeln!(w, "{name} {}", values.len())?;
        let row: Vec<String> = values.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_checkpoint(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn parse_checkpoint(text: &str) -> Result<Checkpoint> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CHECKPOINT_HEADER => {}
        _ => bail!("missing `{CHECKPOINT_HEADER}` header"),
    }
    let mut metadata = Vec::new();
    loop {
        let Some((i, l)) = lines.next() else {
            bail!("missing `---` separator");
        };
        if l.trim() == "---" {
            break;
        }
        let (k, v) = l
            .split_once('=')
            .ok_or_else(|| ParseError {
                line: i + 1,
                field: None,
                message: "expected key=value".into(),
            })?;
        metadata.push((k.trim().to_string(), v.trim().to_string()));
    }
    let get = |key: &str| -> Result<usize> {
        metadata
            .iter()
            .find(|(k, _)| k == key)
            .ok_or_else(|| anyhow!("checkpoint lacks `{key}`"))?
            .1
            .parse()
            .with_context(|| format!("checkpoint `{key}`"))
    };
    let (n_k, channels) = (get("n_k")?, get("channels")?);
    let dims = ProjectionDims {
        input: channels,
        hidden1: get("hidden1")?,
        hidden2: get("hidden2")?,
        pre: get("pre_dim")?,
        output: get("output_dim")?,
    };
    let pattern = parse_pattern(
        metadata
            .iter()
            .find(|(k, _)| k == "pattern")
            .map(|(_, v)| v.as_str())
            .unwrap_or("grid"),
    )?;
    let mut model = EmbeddingModel {
        offsets: OffsetHead::zeros(n_k, channels, pattern)?,
        projection: ProjectionHead::zeros(dims),
    };
    for (name, slot) in EmbeddingModel::<f64>::parameter_names().iter().zip(model.parameters_mut()) {
        let Some((i, head)) = lines.next() else {
            bail!("checkpoint ends before `{name}`");
        };
        let (got, count) = head
            .trim()
            .split_once(' ')
            .ok_or_else(|| anyhow!("line {}: expected `name count`", i + 1))?;
        if got != *name {
            bail!("line {}: expected parameter `{name}`, found `{got}`", i + 1);
        }
        let count: usize = count.parse().with_context(|| format!("line {}", i + 1))?;
        if count != slot.len() {
            bail!("line {}: `{name}` has {count} values, shape needs {}", i + 1, slot.len());
        }
        let (j, body) = lines.next().ok_or_else(|| anyhow!("checkpoint ends inside `{name}`"))?;
        let values: Vec<f64> = if count == 0 {
            Vec::new()
        } else {
            body.split(',')
                .enumerate()
                .map(|(k, v)| field(v, j + 1, k, "a number"))
                .collect::<Result<_, _>>()?
        };
        if values.len() != count {
            bail!("line {}: `{name}` lists {} values, header says {count}", j + 1, values.len());
        }
        slot.copy_from_slice(&values);
    }
    Ok(Checkpoint { metadata, model })
}
