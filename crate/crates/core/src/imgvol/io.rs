//! raw+json and NRRD containers.
//!
//! raw+json: `<name>.json` holds `{shape, spacing_mm, dtype: "f32", byte_order:
//! "little", frame_duration_ms?}` and `<name>.raw` holds the samples as
//! little-endian 32-bit floats in C order of `shape`.
//!
//! NRRD: 4D `float`, encoding `raw` or `gzip`, kinds `list domain domain
//! domain` (time is the fastest axis). Anything else is rejected.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use ndarray::Array4;
use serde::{Deserialize, Serialize};

use super::{Volume4D, VolumeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeFormat {
    Nrrd,
    RawJson,
}

impl VolumeFormat {
    /// `.nrrd`/`.nhdr` files are NRRD, everything else raw+json.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("nrrd") | Some("nhdr") => VolumeFormat::Nrrd,
            _ => VolumeFormat::RawJson,
        }
    }
}

impl FromStr for VolumeFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nrrd" => Ok(VolumeFormat::Nrrd),
            "raw+json" | "raw" | "json" => Ok(VolumeFormat::RawJson),
            other => Err(format!("unknown volume format `{other}` (expected nrrd or raw+json)")),
        }
    }
}

/// JSON header of the raw+json container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    pub shape: Vec<usize>,
    pub spacing_mm: Vec<f64>,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_duration_ms: Option<f64>,
    pub byte_order: String,
}

impl RawHeader {
    pub fn new(shape: Vec<usize>, spacing_mm: Vec<f64>) -> Self {
        Self {
            shape,
            spacing_mm,
            dtype: "f32".into(),
            frame_duration_ms: None,
            byte_order: "little".into(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> VolumeError + '_ {
    move |source| VolumeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn raw_data_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

/// Loads any raw+json array; returns its header and samples widened to `f64`.
pub fn load_array(path: &Path) -> Result<(RawHeader, Vec<f64>), VolumeError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let header: RawHeader = serde_json::from_str(&text)
        .map_err(|e| VolumeError::header(path, "json", e.to_string()))?;
    if header.dtype != "f32" {
        return Err(VolumeError::header(
            path,
            "dtype",
            format!("unsupported dtype `{}` (expected f32)", header.dtype),
        ));
    }
    if header.byte_order != "little" {
        return Err(VolumeError::header(
            path,
            "byte_order",
            format!("unsupported byte order `{}` (expected little)", header.byte_order),
        ));
    }
    let data_path = raw_data_path(path);
    let bytes = fs::read(&data_path).map_err(io_err(&data_path))?;
    let count: usize = header.shape.iter().product();
    if bytes.len() != count * 4 {
        return Err(VolumeError::header(
            path,
            "shape",
            format!(
                "shape {:?} needs {} bytes but `{}` has {}",
                header.shape,
                count * 4,
                data_path.display(),
                bytes.len()
            ),
        ));
    }
    let data = decode_f32(&bytes, false)?;
    Ok((header, data))
}

/// Writes a raw+json array, narrowing samples to `f32`.
pub fn save_array(path: &Path, header: &RawHeader, data: &[f64]) -> Result<(), VolumeError> {
    let count: usize = header.shape.iter().product();
    if count != data.len() {
        return Err(VolumeError::Invalid(format!(
            "shape {:?} does not match {} samples",
            header.shape,
            data.len()
        )));
    }
    let json = serde_json::to_string_pretty(header).expect("header serializes");
    fs::write(path, json + "\n").map_err(io_err(path))?;
    let data_path = raw_data_path(path);
    fs::write(&data_path, encode_f32(data)).map_err(io_err(&data_path))
}

fn decode_f32(bytes: &[u8], big_endian: bool) -> Result<Vec<f64>, VolumeError> {
    let mut out = Vec::with_capacity(bytes.len() / 4);
    for (index, chunk) in bytes.chunks_exact(4).enumerate() {
        let arr = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if big_endian {
            f32::from_be_bytes(arr)
        } else {
            f32::from_le_bytes(arr)
        };
        if !v.is_finite() {
            return Err(VolumeError::NonFinite { index });
        }
        out.push(v as f64);
    }
    Ok(out)
}

fn encode_f32(data: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * 4);
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Loads a 4D sequence and normalizes its axis order to `(t, z, y, x)`.
pub fn load_volume4d(path: &Path, format: VolumeFormat) -> Result<Volume4D, VolumeError> {
    match format {
        VolumeFormat::RawJson => {
            let (header, data) = load_array(path)?;
            if header.shape.len() != 4 {
                return Err(VolumeError::header(
                    path,
                    "shape",
                    format!("expected 4 dimensions, found {}", header.shape.len()),
                ));
            }
            if header.spacing_mm.len() != 3 {
                return Err(VolumeError::header(
                    path,
                    "spacing_mm",
                    format!("expected 3 components, found {}", header.spacing_mm.len()),
                ));
            }
            let s = &header.shape;
            let arr = Array4::from_shape_vec((s[0], s[1], s[2], s[3]), data)
                .map_err(|e| VolumeError::header(path, "shape", e.to_string()))?;
            let spacing = [header.spacing_mm[0], header.spacing_mm[1], header.spacing_mm[2]];
            Volume4D::new(arr, spacing, header.frame_duration_ms)
        }
        VolumeFormat::Nrrd => load_nrrd(path),
    }
}

pub fn save_volume4d(vol: &Volume4D, path: &Path, format: VolumeFormat) -> Result<(), VolumeError> {
    match format {
        VolumeFormat::RawJson => {
            let (t, z, y, x) = vol.shape();
            let mut header = RawHeader::new(vec![t, z, y, x], vol.spacing().to_vec());
            header.frame_duration_ms = vol.frame_duration_ms();
            save_array(path, &header, vol.data().as_slice().expect("standard layout"))
        }
        VolumeFormat::Nrrd => save_nrrd(vol, path, false),
    }
}

/// Writes an attached-data NRRD with time as the fastest (`list`) axis.
pub fn save_nrrd(vol: &Volume4D, path: &Path, gzip: bool) -> Result<(), VolumeError> {
    let (t, z, y, x) = vol.shape();
    let [sz, sy, sx] = vol.spacing();
    let mut head = String::new();
    head.push_str("NRRD0004\n");
    head.push_str("type: float\n");
    head.push_str("dimension: 4\n");
    head.push_str("space dimension: 3\n");
    head.push_str(&format!("sizes: {t} {x} {y} {z}\n"));
    head.push_str(&format!(
        "space directions: none ({sx},0,0) (0,{sy},0) (0,0,{sz})\n"
    ));
    head.push_str("kinds: list domain domain domain\n");
    head.push_str("endian: little\n");
    head.push_str(&format!("encoding: {}\n", if gzip { "gzip" } else { "raw" }));
    if let Some(ms) = vol.frame_duration_ms() {
        head.push_str(&format!("frame_duration_ms:={ms}\n"));
    }
    head.push('\n');

    let mut interleaved = Vec::with_capacity(t * z * y * x);
    for zi in 0..z {
        for yi in 0..y {
            for xi in 0..x {
                for ti in 0..t {
                    interleaved.push(vol.data()[[ti, zi, yi, xi]]);
                }
            }
        }
    }
    let raw = encode_f32(&interleaved);
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(head.as_bytes()).map_err(io_err(path))?;
    if gzip {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(&raw).map_err(io_err(path))?;
        enc.finish().map_err(io_err(path))?;
    } else {
        file.write_all(&raw).map_err(io_err(path))?;
    }
    Ok(())
}

fn parse_vector(s: &str) -> Option<Vec<f64>> {
    let inner = s.trim().strip_prefix('(')?.strip_suffix(')')?;
    inner.split(',').map(|c| c.trim().parse().ok()).collect()
}

/// Splits "(a,b,c) (d,e,f)" style lists, respecting parentheses.
fn split_vectors(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut depth = 0;
    for ch in s.chars() {
        match ch {
            '(' => {
                depth += 1;
                cur.push(ch);
            }
            ')' => {
                depth -= 1;
                cur.push(ch);
            }
            c if c.is_whitespace() && depth == 0 => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn load_nrrd(path: &Path) -> Result<Volume4D, VolumeError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    let mut keyvals: BTreeMap<String, String> = BTreeMap::new();
    let mut pos = 0;
    let mut first = true;
    loop {
        let end = match bytes[pos..].iter().position(|&b| b == b'\n') {
            Some(e) => pos + e,
            None if first => {
                return Err(VolumeError::header(path, "magic", "missing NRRD header"))
            }
            None => bytes.len(),
        };
        let line = std::str::from_utf8(&bytes[pos..end])
            .map_err(|_| VolumeError::header(path, "header", "non-UTF-8 header line"))?
            .trim_end_matches('\r');
        pos = (end + 1).min(bytes.len());
        if first {
            if !line.starts_with("NRRD") {
                return Err(VolumeError::header(path, "magic", "file does not start with NRRD"));
            }
            first = false;
            continue;
        }
        if line.is_empty() {
            break;
        }
        if line.starts_with('#') {
            continue;
        }
        if let Some((k, v)) = line.split_once(":=") {
            keyvals.insert(k.trim().to_string(), v.trim().to_string());
        } else if let Some((k, v)) = line.split_once(':') {
            fields.insert(k.trim().to_lowercase(), v.trim().to_string());
        }
        if pos >= bytes.len() {
            break;
        }
    }

    let get = |k: &str| {
        fields
            .get(k)
            .map(String::as_str)
            .ok_or_else(|| VolumeError::header(path, k, "missing required field"))
    };

    let ty = get("type")?;
    if !matches!(ty, "float" | "float32") {
        return Err(VolumeError::header(
            path,
            "type",
            format!("unsupported type `{ty}` (expected float)"),
        ));
    }
    let dim: usize = get("dimension")?
        .parse()
        .map_err(|_| VolumeError::header(path, "dimension", "not an integer"))?;
    if dim != 4 {
        return Err(VolumeError::header(
            path,
            "dimension",
            format!("expected 4 dimensions, found {dim}"),
        ));
    }
    let sizes: Vec<usize> = get("sizes")?
        .split_whitespace()
        .map(|s| s.parse())
        .collect::<Result<_, _>>()
        .map_err(|_| VolumeError::header(path, "sizes", "not a list of integers"))?;
    if sizes.len() != 4 {
        return Err(VolumeError::header(
            path,
            "sizes",
            format!("expected 4 dimensions, found {}", sizes.len()),
        ));
    }
    let kinds: Vec<&str> = get("kinds")?.split_whitespace().collect();
    if kinds != ["list", "domain", "domain", "domain"] {
        return Err(VolumeError::header(
            path,
            "kinds",
            format!("expected `list domain domain domain`, found `{}`", kinds.join(" ")),
        ));
    }
    let encoding = get("encoding")?;
    let gzip = match encoding {
        "raw" => false,
        "gzip" | "gz" => true,
        other => {
            return Err(VolumeError::header(
                path,
                "encoding",
                format!("unsupported encoding `{other}` (expected raw or gzip)"),
            ))
        }
    };
    let big_endian = match fields.get("endian").map(String::as_str) {
        None | Some("little") => false,
        Some("big") => true,
        Some(other) => {
            return Err(VolumeError::header(path, "endian", format!("unknown endianness `{other}`")))
        }
    };
    for unsupported in ["line skip", "byte skip"] {
        if let Some(v) = fields.get(unsupported) {
            if v != "0" {
                return Err(VolumeError::header(path, unsupported, "skips are not supported"));
            }
        }
    }

    // spacing of axes 1..3 = (x, y, z)
    let axis_spacing: Vec<f64> = if let Some(dirs) = fields.get("space directions") {
        let parts = split_vectors(dirs);
        if parts.len() != 4 || parts[0] != "none" {
            return Err(VolumeError::header(
                path,
                "space directions",
                "expected `none` followed by three vectors",
            ));
        }
        parts[1..]
            .iter()
            .map(|p| {
                parse_vector(p)
                    .map(|v| v.iter().map(|c| c * c).sum::<f64>().sqrt())
                    .ok_or_else(|| VolumeError::header(path, "space directions", format!("bad vector `{p}`")))
            })
            .collect::<Result<_, _>>()?
    } else if let Some(sp) = fields.get("spacings") {
        let parts: Vec<&str> = sp.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(VolumeError::header(path, "spacings", "expected 4 entries"));
        }
        parts[1..]
            .iter()
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| VolumeError::header(path, "spacings", format!("bad spacing `{p}`")))
            })
            .collect::<Result<_, _>>()?
    } else {
        return Err(VolumeError::header(
            path,
            "space directions",
            "missing spacing (`space directions` or `spacings`)",
        ));
    };
    let spacing = [axis_spacing[2], axis_spacing[1], axis_spacing[0]];

    let payload: Vec<u8> = if let Some(df) = fields.get("data file").or_else(|| fields.get("datafile")) {
        let dpath = path.parent().unwrap_or(Path::new(".")).join(df);
        fs::read(&dpath).map_err(io_err(&dpath))?
    } else {
        bytes[pos..].to_vec()
    };
    let raw = if gzip {
        let mut out = Vec::new();
        MultiGzDecoder::new(payload.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| VolumeError::header(path, "encoding", format!("gzip stream: {e}")))?;
        out
    } else {
        payload
    };
    let count: usize = sizes.iter().product();
    if raw.len() < count * 4 {
        return Err(VolumeError::header(
            path,
            "sizes",
            format!("sizes need {} bytes of data, found {}", count * 4, raw.len()),
        ));
    }
    let values = decode_f32(&raw[raw.len() - count * 4..], big_endian)?;
    let (t, x, y, z) = (sizes[0], sizes[1], sizes[2], sizes[3]);
    let data = Array4::from_shape_fn((t, z, y, x), |(ti, zi, yi, xi)| {
        values[((zi * y + yi) * x + xi) * t + ti]
    });
    let frame_duration_ms = keyvals.get("frame_duration_ms").and_then(|v| v.parse().ok());
    Volume4D::new(data, spacing, frame_duration_ms)
}
