//! NPY v1.0 reader/writer for little-endian, C-order arrays of rank 1 or 2.

use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl NpyData {
    pub fn len(&self) -> usize {
        match self {
            NpyData::F32(v) => v.len(),
            NpyData::F64(v) => v.len(),
            NpyData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn descr(&self) -> &'static str {
        match self {
            NpyData::F32(_) => "<f4",
            NpyData::F64(_) => "<f8",
            NpyData::I64(_) => "<i8",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

impl NpyArray {
    pub fn new(shape: Vec<usize>, data: NpyData) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 {
            return Err(Error::InvalidArgument(format!(
                "only rank 1 and 2 arrays are supported, got rank {}",
                shape.len()
            )));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::DimensionMismatch {
                context: "npy array shape",
                expected: shape.iter().product(),
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn f32_matrix(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(vec![rows, cols], NpyData::F32(data))
    }

    pub fn f32_vector(data: Vec<f32>) -> Self {
        Self {
            shape: vec![data.len()],
            data: NpyData::F32(data),
        }
    }

    pub fn f64_vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data: NpyData::F64(data),
        }
    }

    pub fn i64_vector(data: Vec<i64>) -> Self {
        Self {
            shape: vec![data.len()],
            data: NpyData::I64(data),
        }
    }

    /// Values as `f64`, whatever the stored float type.
    pub fn to_f64(&self) -> Option<Vec<f64>> {
        match &self.data {
            NpyData::F32(v) => Some(v.iter().map(|&x| x as f64).collect()),
            NpyData::F64(v) => Some(v.clone()),
            NpyData::I64(_) => None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let shape = match self.shape.as_slice() {
            [n] => format!("({n},)"),
            dims => format!(
                "({})",
                dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
            ),
        };
        let mut header = format!(
            "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
            self.data.descr(),
            shape
        );
        let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
        header.push_str(&" ".repeat(unpadded.next_multiple_of(ALIGN) - unpadded));
        header.push('\n');

        let mut out = Vec::with_capacity(MAGIC.len() + 4 + header.len() + self.data.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        match &self.data {
            NpyData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            NpyData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            NpyData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    /// Parse an in-memory NPY file; `origin` only labels errors.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let err = |m: String| Error::npy(origin, m);
        if bytes.len() < 10 || &bytes[..6] != MAGIC {
            return Err(err("bad magic, not an NPY file".into()));
        }
        if bytes[6] != 1 || bytes[7] != 0 {
            return Err(err(format!(
                "unsupported NPY version {}.{}",
                bytes[6], bytes[7]
            )));
        }
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        let body = 10 + header_len;
        if bytes.len() < body {
            return Err(err("truncated header".into()));
        }
        let header = std::str::from_utf8(&bytes[10..body])
            .map_err(|_| err("header is not ASCII".into()))?;
        let header = Header::parse(header).map_err(err)?;
        if header.fortran_order {
            return Err(err("Fortran-order arrays are not supported".into()));
        }
        if header.shape.is_empty() || header.shape.len() > 2 {
            return Err(err(format!(
                "only rank 1 and 2 arrays are supported, got shape {:?}",
                header.shape
            )));
        }
        let count: usize = header.shape.iter().product();
        let payload = &bytes[body..];
        let item = match header.descr.as_str() {
            "<f4" | "<i4" => 4,
            "<f8" | "<i8" => 8,
            other => return Err(err(format!("unsupported dtype '{other}'"))),
        };
        if payload.len() != count * item {
            return Err(err(format!(
                "payload has {} bytes but shape {:?} of '{}' needs {}",
                payload.len(),
                header.shape,
                header.descr,
                count * item
            )));
        }
        let data = match header.descr.as_str() {
            "<f4" => NpyData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            "<f8" => NpyData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            "<i4" => NpyData::I64(
                payload
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as i64)
                    .collect(),
            ),
            _ => NpyData::I64(
                payload
                    .chunks_exact(8)
                    .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Ok(Self {
            shape: header.shape,
            data,
        })
    }
}

struct Header {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

impl Header {
    fn parse(text: &str) -> Result<Self, String> {
        let text = text.trim_end_matches(['\n', ' ', '\0']).trim();
        let inner = text
            .strip_prefix('{')
            .and_then(|t| t.strip_suffix('}'))
            .ok_or_else(|| format!("malformed header {text:?}"))?;

        let value_after = |key: &str| -> Result<&str, String> {
            let pos = ["'", "\""]
                .iter()
                .find_map(|q| inner.find(&format!("{q}{key}{q}")).map(|p| p + key.len() + 2))
                .ok_or_else(|| format!("header is missing '{key}'"))?;
            let rest = inner[pos..].trim_start();
            rest.strip_prefix(':')
                .map(str::trim_start)
                .ok_or_else(|| format!("malformed value for '{key}'"))
        };

        let descr_raw = value_after("descr")?;
        let quote = descr_raw
            .chars()
            .next()
            .filter(|c| *c == '\'' || *c == '"')
            .ok_or("descr is not a string")?;
        let descr_end = descr_raw[1..].find(quote).ok_or("unterminated descr")?;
        let descr = descr_raw[1..1 + descr_end].to_string();

        let fo = value_after("fortran_order")?;
        let fortran_order = if fo.starts_with("True") {
            true
        } else if fo.starts_with("False") {
            false
        } else {
            return Err("fortran_order is not a boolean".into());
        };

        let sh = value_after("shape")?;
        let sh = sh.strip_prefix('(').ok_or("shape is not a tuple")?;
        let close = sh.find(')').ok_or("unterminated shape tuple")?;
        let shape = sh[..close]
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<usize>().map_err(|_| format!("bad shape entry '{s}'")))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            descr,
            fortran_order,
            shape,
        })
    }
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<NpyArray> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    NpyArray::from_bytes(&bytes, path)
}

pub fn write_npy(path: impl AsRef<Path>, array: &NpyArray) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, array.to_bytes()).map_err(|e| Error::io(path, e))
}
