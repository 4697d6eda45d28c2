//! Binary tensor container, label images and volume metadata.
//!
//! Tensor files use a fixed little-endian layout:
//!
//! ```text
//! offset  size         field
//! 0       4            magic "PLT1"
//! 4       1            rank (2..=4)
//! 5       4 * rank     dims, u32 little-endian, outermost first
//! 5+4r    1            dtype (0 = f32, 1 = u8, 2 = u16, 3 = u32)
//! 6+4r    n * size     row-major payload, little-endian
//! ```
//!
//! Label images are 8-bit single-channel PGM (`P5`) or PNG files whose
//! pixel value is the class code.

use std::fs;
use std::io::{BufReader, Cursor};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::enhancement::ProbMap;
use crate::error::{Error, Result};
use crate::hierarchy::{RegionLabeling, Slice};
use crate::spreading::{LabelMap, DEFAULT_UNLABELED};

pub const MAGIC: [u8; 4] = *b"PLT1";
const MIN_RANK: usize = 2;
const MAX_RANK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    U8 = 1,
    U16 = 2,
    U32 = 3,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::U32 => 4,
            DType::U8 => 1,
            DType::U16 => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => DType::F32,
            1 => DType::U8,
            2 => DType::U16,
            3 => DType::U32,
            other => return Err(Error::UnknownDtype(other)),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
    U16(Vec<u16>),
    U32(Vec<u32>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::U16(v) => v.len(),
            TensorData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::U8(_) => DType::U8,
            TensorData::U16(_) => DType::U16,
            TensorData::U32(_) => DType::U32,
        }
    }
}

/// An n-dimensional array as stored in a tensor file.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    /// Pairs `dims` with a payload. Rank limits are checked when encoding.
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let expected = dims.iter().product::<usize>();
        if expected != data.len() {
            return Err(Error::PayloadLength {
                dims,
                expected,
                found: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    /// Values widened to `f64`, whatever the stored dtype.
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::U8(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::U16(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::U32(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        if !(MIN_RANK..=MAX_RANK).contains(&self.rank()) {
            return Err(Error::RankOutOfRange(self.rank()));
        }
        for &d in &self.dims {
            if u32::try_from(d).is_err() {
                return Err(Error::DimsOverflow(d));
            }
        }
        let dtype = self.dtype();
        let mut out = Vec::with_capacity(6 + 4 * self.rank() + self.data.len() * dtype.size());
        out.extend_from_slice(&MAGIC);
        out.push(self.rank() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(dtype as u8);
        match &self.data {
            TensorData::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
            TensorData::U16(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let header = |need: usize| {
            if bytes.len() < need {
                Err(Error::Truncated {
                    expected: need,
                    found: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        header(5)?;
        let magic: [u8; 4] = bytes[..4].try_into().expect("4-byte slice");
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let rank = bytes[4] as usize;
        if !(MIN_RANK..=MAX_RANK).contains(&rank) {
            return Err(Error::RankOutOfRange(rank));
        }
        let dtype_at = 5 + 4 * rank;
        header(dtype_at + 1)?;
        let dims: Vec<usize> = bytes[5..dtype_at]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")) as usize)
            .collect();
        let dtype = DType::from_code(bytes[dtype_at])?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(Error::DimsOverflow(usize::MAX))?;
        let body = &bytes[dtype_at + 1..];
        let expected = count
            .checked_mul(dtype.size())
            .ok_or(Error::DimsOverflow(count))?;
        if body.len() < expected {
            return Err(Error::Truncated {
                expected: dtype_at + 1 + expected,
                found: bytes.len(),
            });
        }
        if body.len() > expected {
            return Err(Error::TrailingData(body.len() - expected));
        }
        let data = match dtype {
            DType::F32 => TensorData::F32(
                body.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                    .collect(),
            ),
            DType::U8 => TensorData::U8(body.to_vec()),
            DType::U16 => TensorData::U16(
                body.chunks_exact(2)
                    .map(|c| u16::from_le_bytes(c.try_into().expect("2-byte chunk")))
                    .collect(),
            ),
            DType::U32 => TensorData::U32(
                body.chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                    .collect(),
            ),
        };
        Ok(Self { dims, data })
    }
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let bytes = tensor.encode()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::decode(&bytes)
}

fn default_unlabeled() -> u8 {
    DEFAULT_UNLABELED
}

/// Physical spacing and class palette for a volume.
///
/// Serialized as `{"spacing_mm":[sx,sy,sz],"classes":[...],"unlabeled":255}`.
/// Class `i` in `class_names` has code `i`; code 0 is background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeMeta {
    pub spacing_mm: [f64; 3],
    #[serde(rename = "classes")]
    pub class_names: Vec<String>,
    #[serde(rename = "unlabeled", default = "default_unlabeled")]
    pub unlabeled_code: u8,
}

impl Default for VolumeMeta {
    /// The four-class cardiac palette with unit spacing.
    fn default() -> Self {
        Self {
            spacing_mm: [1.0, 1.0, 1.0],
            class_names: ["BG", "RV", "MYO", "LV"].map(String::from).to_vec(),
            unlabeled_code: DEFAULT_UNLABELED,
        }
    }
}

impl VolumeMeta {
    pub fn validate(&self) -> Result<()> {
        if self.spacing_mm.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid(format!(
                "spacing_mm must be positive, got {:?}",
                self.spacing_mm
            )));
        }
        if self.class_names.is_empty() {
            return Err(Error::invalid("at least one class is required"));
        }
        if (self.unlabeled_code as usize) < self.class_names.len() {
            return Err(Error::invalid(format!(
                "unlabeled code {} collides with a class code",
                self.unlabeled_code
            )));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> u8 {
        self.class_names.len() as u8
    }

    /// In-plane spacing as (x, y).
    pub fn slice_spacing(&self) -> [f64; 2] {
        [self.spacing_mm[0], self.spacing_mm[1]]
    }

    /// Spacing per array axis for volumes stored as `[depth, height, width]`.
    pub fn axis_spacing(&self) -> [f64; 3] {
        [self.spacing_mm[2], self.spacing_mm[1], self.spacing_mm[0]]
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let meta: Self = serde_json::from_str(s)?;
        meta.validate()?;
        Ok(meta)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Reads an 8-bit single-channel PGM or PNG label image and validates every
/// pixel against the palette in `meta`.
pub fn read_labelmap_image(path: impl AsRef<Path>, meta: &VolumeMeta) -> Result<LabelMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_labelmap_image(&bytes, meta)
}

pub fn decode_labelmap_image(bytes: &[u8], meta: &VolumeMeta) -> Result<LabelMap> {
    meta.validate()?;
    let (height, width, pixels) = if bytes.starts_with(b"P5") {
        decode_pgm(bytes)?
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(bytes)?
    } else {
        return Err(Error::Image("neither PGM (P5) nor PNG".into()));
    };
    LabelMap::from_codes(
        height,
        width,
        pixels,
        meta.num_classes(),
        meta.unlabeled_code,
    )
}

/// Writes a label map as binary PGM with maxval 255.
pub fn write_pgm(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(labels)).map_err(|e| Error::io(path, e))
}

pub fn encode_pgm(labels: &LabelMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", labels.width(), labels.height()).into_bytes();
    out.extend_from_slice(labels.codes());
    out
}

fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments between header tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Image("malformed PGM header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Image("malformed PGM header".into()))?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Image(format!("PGM maxval {maxval} is not 8-bit")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Image("malformed PGM header".into()));
    }
    pos += 1;
    let n = width * height;
    let body = &bytes[pos..];
    if body.len() < n {
        return Err(Error::Truncated {
            expected: pos + n,
            found: bytes.len(),
        });
    }
    if width == 0 || height == 0 {
        return Err(Error::Image("empty PGM".into()));
    }
    Ok((height, width, body[..n].to_vec()))
}

fn decode_png(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let decoder = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Image(e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Image(format!(
            "expected 8-bit grayscale PNG, got {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let mut buf = vec![0; width * height];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Image(e.to_string()))?;
    if frame.line_size != width {
        return Err(Error::Image("unexpected PNG row stride".into()));
    }
    Ok((height, width, buf))
}

// ---------------------------------------------------------------------------
// Conversions between tensors and domain types.

/// Splits a rank-2 `[H, W]` or rank-3 `[D, H, W]` tensor into raw slices.
pub fn raw_slices(tensor: &Tensor) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    let values = tensor.to_f64();
    let (h, w) = plane_dims(tensor)?;
    let slices = values.chunks_exact(h * w).map(<[f64]>::to_vec).collect();
    Ok((h, w, slices))
}

fn plane_dims(tensor: &Tensor) -> Result<(usize, usize)> {
    match *tensor.dims() {
        [h, w] | [_, h, w] if h > 0 && w > 0 => Ok((h, w)),
        _ => Err(Error::invalid(format!(
            "expected [H, W] or [D, H, W] tensor, got dims {:?}",
            tensor.dims()
        ))),
    }
}

/// Reads a rank-2 or rank-3 u8 tensor as a stack of label maps.
pub fn labelmaps_from_tensor(
    tensor: &Tensor,
    num_classes: u8,
    unlabeled: u8,
) -> Result<Vec<LabelMap>> {
    let TensorData::U8(codes) = tensor.data() else {
        return Err(Error::invalid("label tensors must be uint8"));
    };
    let (h, w) = plane_dims(tensor)?;
    codes
        .chunks_exact(h * w)
        .map(|c| LabelMap::from_codes(h, w, c.to_vec(), num_classes, unlabeled))
        .collect()
}

/// Stacks label maps into a `[H, W]` tensor (one map) or `[D, H, W]`.
pub fn labelmaps_to_tensor(maps: &[LabelMap]) -> Result<Tensor> {
    let first = maps
        .first()
        .ok_or_else(|| Error::invalid("no label maps to write"))?;
    let (h, w) = (first.height(), first.width());
    if maps.iter().any(|m| m.height() != h || m.width() != w) {
        return Err(Error::dims("label maps in a stack differ in size"));
    }
    let codes: Vec<u8> = maps
        .iter()
        .flat_map(|m| m.codes().iter().copied())
        .collect();
    let dims = if maps.len() == 1 {
        vec![h, w]
    } else {
        vec![maps.len(), h, w]
    };
    Tensor::new(dims, TensorData::U8(codes))
}

pub fn slices_to_tensor(slices: &[Slice]) -> Result<Tensor> {
    let first = slices
        .first()
        .ok_or_else(|| Error::invalid("no slices to write"))?;
    let (h, w) = (first.height(), first.width());
    let values: Vec<f32> = slices
        .iter()
        .flat_map(|s| s.values().iter().map(|&v| v as f32))
        .collect();
    let dims = if slices.len() == 1 {
        vec![h, w]
    } else {
        vec![slices.len(), h, w]
    };
    Tensor::new(dims, TensorData::F32(values))
}

/// Reads a rank-3 `[C, H, W]` or rank-4 `[D, C, H, W]` f32 tensor.
pub fn probmaps_from_tensor(tensor: &Tensor) -> Result<Vec<ProbMap>> {
    let (c, h, w) = match *tensor.dims() {
        [c, h, w] | [_, c, h, w] => (c, h, w),
        _ => {
            return Err(Error::invalid(format!(
                "expected [C, H, W] or [D, C, H, W] probability tensor, got {:?}",
                tensor.dims()
            )))
        }
    };
    if !matches!(tensor.data(), TensorData::F32(_)) {
        return Err(Error::invalid("probability tensors must be float32"));
    }
    if c * h * w == 0 {
        return Err(Error::invalid("empty probability tensor"));
    }
    tensor
        .to_f64()
        .chunks_exact(c * h * w)
        .map(|chunk| ProbMap::new(c, h, w, chunk.to_vec()))
        .collect()
}

pub fn probmaps_to_tensor(maps: &[ProbMap]) -> Result<Tensor> {
    let first = maps
        .first()
        .ok_or_else(|| Error::invalid("no probability maps to write"))?;
    let (c, h, w) = (first.num_classes(), first.height(), first.width());
    let values: Vec<f32> = maps
        .iter()
        .flat_map(|m| m.values().iter().map(|&v| v as f32))
        .collect();
    let dims = if maps.len() == 1 {
        vec![c, h, w]
    } else {
        vec![maps.len(), c, h, w]
    };
    Tensor::new(dims, TensorData::F32(values))
}

/// Region ids as u16 when they fit, u32 otherwise.
pub fn regions_to_tensor(labeling: &RegionLabeling) -> Result<Tensor> {
    let dims = vec![labeling.height(), labeling.width()];
    let data = if labeling.region_count() <= u16::MAX as usize + 1 {
        TensorData::U16(labeling.ids().iter().map(|&id| id as u16).collect())
    } else {
        TensorData::U32(labeling.ids().to_vec())
    };
    Tensor::new(dims, data)
}

pub fn regions_from_tensor(tensor: &Tensor) -> Result<RegionLabeling> {
    let [h, w] = *tensor.dims() else {
        return Err(Error::invalid("region labelings are rank-2"));
    };
    let ids = match tensor.data() {
        TensorData::U16(v) => v.iter().map(|&x| x as u32).collect(),
        TensorData::U32(v) => v.clone(),
        _ => return Err(Error::invalid("region labelings must be uint16 or uint32")),
    };
    RegionLabeling::new(h, w, ids)
}
