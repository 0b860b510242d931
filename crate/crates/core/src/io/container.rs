//! `C2C1` binary tensor records.
//!
//! ```text
//! magic   4 bytes  "C2C1"
//! version u16      1
//! element u8       0 = f32, 1 = complex (f32 re, f32 im), 2 = bool byte
//! rank    u8
//! dims    u32 x rank
//! payload row-major, little-endian
//! ```

use std::fs;
use std::path::Path;

use num_complex::{Complex32, Complex64};

use crate::error::{Error, Result};
use crate::imaging::{ChannelStack, ComplexImage, Image, Mask, RealImage};

pub const MAGIC: &[u8; 4] = b"C2C1";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    Real(Vec<f32>),
    Complex(Vec<Complex32>),
    Bool(Vec<bool>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::Real(v) => v.len(),
            TensorData::Complex(v) => v.len(),
            TensorData::Bool(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn code(&self) -> u8 {
        match self {
            TensorData::Real(_) => 0,
            TensorData::Complex(_) => 1,
            TensorData::Bool(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            TensorData::Real(_) => "real",
            TensorData::Complex(_) => "complex",
            TensorData::Bool(_) => "bool",
        }
    }
}

/// A typed, shaped tensor as stored on disk. Values are single precision.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    dims: Vec<usize>,
    data: TensorData,
}

fn element_count(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

impl StoredTensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        if dims.len() > u8::MAX as usize {
            return Err(Error::Format(format!("rank {} exceeds 255", dims.len())));
        }
        if let Some(&d) = dims.iter().find(|&&d| d > u32::MAX as usize) {
            return Err(Error::Format(format!("dimension {d} exceeds u32")));
        }
        let n = element_count(&dims)
            .ok_or_else(|| Error::Format("dimension product overflows".into()))?;
        if n != data.len() {
            return Err(Error::dims(n, data.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn from_reals(dims: Vec<usize>, values: &[f64]) -> Result<Self> {
        Self::new(
            dims,
            TensorData::Real(values.iter().map(|&v| v as f32).collect()),
        )
    }

    pub fn from_real_image(image: &RealImage) -> Self {
        let (h, w) = image.dims();
        Self::from_reals(vec![h, w], image.data()).expect("image shape is consistent")
    }

    /// Stacks equally sized real images into `[n, h, w]`.
    pub fn from_real_images(images: &[RealImage]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidArgument("no images".into()))?;
        let mut values = Vec::with_capacity(images.len() * first.len());
        for img in images {
            first.ensure_same_dims(img)?;
            values.extend(img.data().iter().map(|&v| v as f32));
        }
        Self::new(
            vec![images.len(), first.height(), first.width()],
            TensorData::Real(values),
        )
    }

    pub fn from_complex_images(images: &[ComplexImage]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidArgument("no images".into()))?;
        let mut values = Vec::with_capacity(images.len() * first.len());
        for img in images {
            first.ensure_same_dims(img)?;
            values.extend(
                img.data()
                    .iter()
                    .map(|c| Complex32::new(c.re as f32, c.im as f32)),
            );
        }
        Self::new(
            vec![images.len(), first.height(), first.width()],
            TensorData::Complex(values),
        )
    }

    pub fn from_masks(masks: &[Mask]) -> Result<Self> {
        let first = masks
            .first()
            .ok_or_else(|| Error::InvalidArgument("no masks".into()))?;
        let mut values = Vec::with_capacity(masks.len() * first.count());
        for m in masks {
            if m.dims() != first.dims() {
                return Err(Error::dims(first.dims(), m.dims()));
            }
            values.extend_from_slice(m.data());
        }
        let (h, w) = first.dims();
        Self::new(vec![masks.len(), h, w], TensorData::Bool(values))
    }

    /// `[n, m, h, w]` from `n` stacks of `m` channels.
    pub fn from_stacks(stacks: &[ChannelStack]) -> Result<Self> {
        let first = stacks
            .first()
            .ok_or_else(|| Error::InvalidArgument("no stacks".into()))?;
        let (m, (h, w)) = (first.channel_count(), first.dims());
        let mut images = Vec::with_capacity(stacks.len() * m);
        for s in stacks {
            if (s.channel_count(), s.dims()) != (m, (h, w)) {
                return Err(Error::dims((m, h, w), (s.channel_count(), s.dims())));
            }
            images.extend(s.channels().iter().cloned());
        }
        let mut t = Self::from_complex_images(&images)?;
        t.dims = vec![stacks.len(), m, h, w];
        Ok(t)
    }

    fn wrong_kind(&self, want: &str) -> Error {
        Error::Format(format!(
            "expected a {want} tensor, found {}",
            self.data.kind()
        ))
    }

    /// Trailing two dims as image size, leading dims flattened.
    fn planes(&self) -> Result<(usize, usize, usize)> {
        if self.dims.len() < 2 {
            return Err(Error::Format(format!(
                "rank {} tensor has no image planes",
                self.dims.len()
            )));
        }
        let (h, w) = (
            self.dims[self.dims.len() - 2],
            self.dims[self.dims.len() - 1],
        );
        let n = self.dims[..self.dims.len() - 2].iter().product();
        Ok((n, h, w))
    }

    pub fn reals(&self) -> Result<Vec<f64>> {
        match &self.data {
            TensorData::Real(v) => Ok(v.iter().map(|&x| x as f64).collect()),
            _ => Err(self.wrong_kind("real")),
        }
    }

    pub fn to_real_images(&self) -> Result<Vec<RealImage>> {
        let (_, h, w) = self.planes()?;
        let values = self.reals()?;
        if h * w == 0 {
            return Ok(Vec::new());
        }
        values
            .chunks(h * w)
            .map(|p| Image::from_vec(h, w, p.to_vec()))
            .collect()
    }

    pub fn to_complex_images(&self) -> Result<Vec<ComplexImage>> {
        let (_, h, w) = self.planes()?;
        let TensorData::Complex(v) = &self.data else {
            return Err(self.wrong_kind("complex"));
        };
        if h * w == 0 {
            return Ok(Vec::new());
        }
        v.chunks(h * w)
            .map(|p| {
                Image::from_vec(
                    h,
                    w,
                    p.iter()
                        .map(|c| Complex64::new(c.re as f64, c.im as f64))
                        .collect(),
                )
            })
            .collect()
    }

    pub fn to_masks(&self) -> Result<Vec<Mask>> {
        let (_, h, w) = self.planes()?;
        let TensorData::Bool(v) = &self.data else {
            return Err(self.wrong_kind("bool"));
        };
        if h * w == 0 {
            return Ok(Vec::new());
        }
        v.chunks(h * w)
            .map(|p| Mask::from_vec(h, w, p.to_vec()))
            .collect()
    }

    pub fn to_stacks(&self) -> Result<Vec<ChannelStack>> {
        if self.dims.len() != 4 {
            return Err(Error::Format(format!(
                "expected [n, m, h, w], found dims {:?}",
                self.dims
            )));
        }
        let m = self.dims[1];
        let images = self.to_complex_images()?;
        images
            .chunks(m.max(1))
            .map(|c| ChannelStack::new(c.to_vec()))
            .collect()
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.data.code());
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            TensorData::Real(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::Complex(v) => v.iter().for_each(|c| {
                out.extend_from_slice(&c.re.to_le_bytes());
                out.extend_from_slice(&c.im.to_le_bytes());
            }),
            TensorData::Bool(v) => out.extend(v.iter().map(|&b| u8::from(b))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode(&mut out);
        out
    }

    /// Parses one record from the front of `bytes`, returning it and the bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let code = r.take(1)?[0];
        let rank = r.take(1)?[0] as usize;
        let dims = (0..rank)
            .map(|_| Ok(u32::from_le_bytes(r.array()?) as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = element_count(&dims)
            .ok_or_else(|| Error::Format("dimension product overflows".into()))?;
        let width = match code {
            0 => 4,
            1 => 8,
            2 => 1,
            other => return Err(Error::Format(format!("unknown element code {other}"))),
        };
        let len = n
            .checked_mul(width)
            .ok_or_else(|| Error::Format("payload size overflows".into()))?;
        let payload = r.take(len)?;
        let data = match code {
            0 => TensorData::Real(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            1 => TensorData::Complex(
                payload
                    .chunks_exact(8)
                    .map(|c| {
                        Complex32::new(
                            f32::from_le_bytes(c[..4].try_into().unwrap()),
                            f32::from_le_bytes(c[4..].try_into().unwrap()),
                        )
                    })
                    .collect(),
            ),
            _ => TensorData::Bool(
                payload
                    .iter()
                    .map(|&b| match b {
                        0 => Ok(false),
                        1 => Ok(true),
                        other => Err(Error::Format(format!("invalid bool byte {other}"))),
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        Ok((Self { dims, data }, r.pos))
    }

    /// Parses exactly one record; trailing bytes are an error.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (t, used) = Self::decode(bytes)?;
        if used != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                bytes.len() - used
            )));
        }
        Ok(t)
    }
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated: needed {n} bytes at offset {}",
                    self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &StoredTensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<StoredTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    StoredTensor::from_bytes(&bytes)
}
