//! Minimal NPY v1.0 reader and writer.
//!
//! Only little-endian `float32` (`<f4`) and `int64` (`<i8`) payloads in C
//! order are accepted. Headers are padded so that the payload starts on a
//! 64-byte boundary, which is what numpy itself emits.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayD, IxDyn};

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE_LEN: usize = 10;
const ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    Float32,
    Int64,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::Float32 => "<f4",
            Dtype::Int64 => "<i8",
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::Float32 => 4,
            Dtype::Int64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    Float32(Vec<f32>),
    Int64(Vec<i64>),
}

impl TensorData {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::Float32(_) => Dtype::Float32,
            TensorData::Int64(_) => Dtype::Int64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::Float32(v) => v.len(),
            TensorData::Int64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A dense C-order tensor as stored in one `.npy` file.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl TensorFile {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InconsistentShapes(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    /// Stores an `f64` matrix as `float32`.
    pub fn from_matrix(m: &Array2<f64>) -> Self {
        Self {
            shape: m.shape().to_vec(),
            data: TensorData::Float32(m.iter().map(|&v| v as f32).collect()),
        }
    }

    pub fn from_vector(v: &[f64]) -> Self {
        Self {
            shape: vec![v.len()],
            data: TensorData::Float32(v.iter().map(|&x| x as f32).collect()),
        }
    }

    pub fn from_indices(v: &[i64]) -> Self {
        Self {
            shape: vec![v.len()],
            data: TensorData::Int64(v.to_vec()),
        }
    }

    pub fn to_f64_array(&self) -> Result<ArrayD<f64>> {
        let values: Vec<f64> = match &self.data {
            TensorData::Float32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorData::Int64(_) => {
                return Err(Error::UnsupportedDtype(
                    "<i8 where float values were expected".into(),
                ))
            }
        };
        ArrayD::from_shape_vec(IxDyn(&self.shape), values)
            .map_err(|e| Error::InconsistentShapes(e.to_string()))
    }

    pub fn to_matrix(&self) -> Result<Array2<f64>> {
        if self.shape.len() != 2 {
            return Err(Error::InconsistentShapes(format!(
                "expected a matrix, found shape {:?}",
                self.shape
            )));
        }
        self.to_f64_array()?
            .into_dimensionality()
            .map_err(|e| Error::InconsistentShapes(e.to_string()))
    }

    pub fn to_vector(&self) -> Result<Array1<f64>> {
        if self.shape.len() != 1 {
            return Err(Error::InconsistentShapes(format!(
                "expected a vector, found shape {:?}",
                self.shape
            )));
        }
        self.to_f64_array()?
            .into_dimensionality()
            .map_err(|e| Error::InconsistentShapes(e.to_string()))
    }

    pub fn to_indices(&self) -> Result<Vec<i64>> {
        match &self.data {
            TensorData::Int64(v) => Ok(v.clone()),
            TensorData::Float32(_) => Err(Error::UnsupportedDtype(
                "<f4 where integer indices were expected".into(),
            )),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let shape = match self.shape.len() {
            0 => "()".to_string(),
            1 => format!("({},)", self.shape[0]),
            _ => {
                let dims: Vec<String> = self.shape.iter().map(|d| d.to_string()).collect();
                format!("({})", dims.join(", "))
            }
        };
        let mut header = format!(
            "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
            self.dtype().descr(),
            shape
        );
        // one byte is reserved for the terminating newline
        let unpadded = PREAMBLE_LEN + header.len() + 1;
        let padding = (ALIGN - unpadded % ALIGN) % ALIGN;
        header.extend(std::iter::repeat_n(' ', padding));
        header.push('\n');

        let payload_len = self.data.len() * self.dtype().size();
        let mut out = Vec::with_capacity(PREAMBLE_LEN + header.len() + payload_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        match &self.data {
            TensorData::Float32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::Int64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREAMBLE_LEN || &bytes[..6] != MAGIC {
            return Err(Error::MalformedHeader("missing \\x93NUMPY magic".into()));
        }
        if bytes[6] != 1 || bytes[7] != 0 {
            return Err(Error::MalformedHeader(format!(
                "unsupported format version {}.{}",
                bytes[6], bytes[7]
            )));
        }
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        let payload_start = PREAMBLE_LEN + header_len;
        if bytes.len() < payload_start {
            return Err(Error::MalformedHeader("header extends past end of file".into()));
        }
        let header = std::str::from_utf8(&bytes[PREAMBLE_LEN..payload_start])
            .map_err(|_| Error::MalformedHeader("header is not valid text".into()))?;
        let parsed = parse_header(header)?;
        if parsed.fortran_order {
            return Err(Error::FortranOrder);
        }
        let dtype = match parsed.descr.as_str() {
            "<f4" => Dtype::Float32,
            "<i8" => Dtype::Int64,
            other => return Err(Error::UnsupportedDtype(other.to_string())),
        };
        let count = parsed
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::MalformedHeader("shape product overflows".into()))?;
        let expected = count * dtype.size();
        let payload = &bytes[payload_start..];
        if payload.len() < expected {
            return Err(Error::TruncatedPayload {
                expected,
                found: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(Error::TrailingData {
                expected,
                found: payload.len(),
            });
        }
        let data = match dtype {
            Dtype::Float32 => TensorData::Float32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            Dtype::Int64 => TensorData::Int64(
                payload
                    .chunks_exact(8)
                    .map(|c| i64::from_le_bytes(c.try_into().expect("chunk of 8")))
                    .collect(),
            ),
        };
        Ok(Self {
            shape: parsed.shape,
            data,
        })
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    TensorFile::from_bytes(&bytes)
}

pub fn write_tensor(tensor: &TensorFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&tensor.to_bytes())
        .map_err(|e| Error::io(path, e))
}

#[derive(Debug)]
struct Header {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Parses the Python dict literal numpy writes, e.g.
/// `{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3), }`.
fn parse_header(text: &str) -> Result<Header> {
    let bad = |msg: &str| Error::MalformedHeader(msg.to_string());
    let body = text
        .trim_end_matches(['\n', ' ', '\0'])
        .trim()
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or_else(|| bad("header is not a dict literal"))?;

    let mut cursor = Cursor { rest: body };
    let mut descr = None;
    let mut fortran_order = None;
    let mut shape = None;
    loop {
        cursor.skip_ws();
        if cursor.rest.is_empty() {
            break;
        }
        let key = cursor.quoted().ok_or_else(|| bad("expected quoted key"))?;
        cursor.skip_ws();
        if !cursor.eat(':') {
            return Err(bad("expected ':' after key"));
        }
        cursor.skip_ws();
        match key.as_str() {
            "descr" => descr = Some(cursor.quoted().ok_or_else(|| bad("descr must be a string"))?),
            "fortran_order" => {
                fortran_order = Some(if cursor.eat_word("True") {
                    true
                } else if cursor.eat_word("False") {
                    false
                } else {
                    return Err(bad("fortran_order must be True or False"));
                })
            }
            "shape" => shape = Some(cursor.tuple().ok_or_else(|| bad("shape must be a tuple of integers"))?),
            other => return Err(bad(&format!("unexpected key '{other}'"))),
        }
        cursor.skip_ws();
        if !cursor.eat(',') {
            cursor.skip_ws();
            if !cursor.rest.is_empty() {
                return Err(bad("expected ',' between entries"));
            }
        }
    }
    Ok(Header {
        descr: descr.ok_or_else(|| bad("missing 'descr'"))?,
        fortran_order: fortran_order.ok_or_else(|| bad("missing 'fortran_order'"))?,
        shape: shape.ok_or_else(|| bad("missing 'shape'"))?,
    })
}

struct Cursor<'a> {
    rest: &'a str,
}

impl Cursor<'_> {
    fn skip_ws(&mut self) {
        self.rest = self.rest.trim_start();
    }

    fn eat(&mut self, c: char) -> bool {
        match self.rest.strip_prefix(c) {
            Some(r) => {
                self.rest = r;
                true
            }
            None => false,
        }
    }

    fn eat_word(&mut self, w: &str) -> bool {
        match self.rest.strip_prefix(w) {
            Some(r) => {
                self.rest = r;
                true
            }
            None => false,
        }
    }

    fn quoted(&mut self) -> Option<String> {
        let quote = self.rest.chars().next().filter(|c| *c == '\'' || *c == '"')?;
        let inner = &self.rest[1..];
        let end = inner.find(quote)?;
        let value = inner[..end].to_string();
        self.rest = &inner[end + 1..];
        Some(value)
    }

    fn tuple(&mut self) -> Option<Vec<usize>> {
        if !self.eat('(') {
            return None;
        }
        let end = self.rest.find(')')?;
        let inner = &self.rest[..end];
        self.rest = &self.rest[end + 1..];
        inner
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.trim_end_matches('L').parse::<usize>().ok())
            .collect()
    }
}
