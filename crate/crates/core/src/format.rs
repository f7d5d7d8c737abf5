//! Binary model (`MSDC`) and measurement packet (`MSDM`) files.
//!
//! All integers and floats are little-endian. Both formats end with a CRC32
//! (IEEE) of every preceding byte; the checksum is verified before any field
//! is interpreted.
//!
//! Model file:
//!
//! ```text
//! "MSDC"  u16 version=1
//! u32 block_size  u32 measurements  f32 subrate  u32 phase
//! u32 enhance1_depth  u32 enhance1_width
//! u32 mwcnn_levels  u32 × levels widths  u32 mwcnn_convs_per_level
//! u64 seed
//! u32 param_count
//!   per parameter: u32 name_len, name (UTF-8), u32 rank, u32 × rank dims,
//!                  f32 × prod(dims) values
//! u32 crc32
//! ```
//!
//! Measurement file:
//!
//! ```text
//! "MSDM"  u16 version=1
//! u32 height  u32 width                      (original image)
//! u32 crop_top  u32 crop_left  u32 crop_height  u32 crop_width
//! u32 block_size  u32 measurements  u32 model_checksum
//! f32 × measurements·(crop_height/2n_B)·(crop_width/2n_B)
//!     ordered by grid row, grid column, measurement channel
//! u32 crc32
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{init_params, ModelParams, NetConfig, Phase, SamplingConfig};
use crate::tensor::{Shape, Tensor};

pub const MODEL_MAGIC: &[u8; 4] = b"MSDC";
pub const MEASUREMENT_MAGIC: &[u8; 4] = b"MSDM";
pub const FORMAT_VERSION: u16 = 1;

/// Upper bound on tensor elements accepted from a file header.
const MAX_ELEMENTS: usize = 1 << 30;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(magic: &[u8; 4]) -> Self {
        let mut buf = magic.to_vec();
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        Writer { buf }
    }

    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("header field fits in u32");
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f32s(&mut self, vs: &[f32]) {
        self.buf.reserve(vs.len() * 4);
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

struct Reader<'a> {
    what: &'static str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Verifies length, trailing CRC, magic and version.
    fn open(what: &'static str, bytes: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if bytes.len() < 10 {
            return Err(Error::Malformed {
                what,
                offset: bytes.len(),
                msg: "file too short".into(),
            });
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { what, stored, computed });
        }
        let mut r = Reader {
            what,
            bytes: body,
            pos: 0,
        };
        if r.take(4)? != magic {
            return Err(r.malformed_at(0, format!("bad magic, expected {:?}", String::from_utf8_lossy(magic))));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
        if version != FORMAT_VERSION {
            return Err(r.malformed_at(4, format!("unsupported version {version}")));
        }
        Ok(r)
    }

    fn malformed_at(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Malformed {
            what: self.what,
            offset,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.malformed_at(self.pos, format!("unexpected end of data reading {n} bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| self.malformed_at(self.pos, "length overflow"))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.malformed_at(self.pos, "trailing bytes before checksum"));
        }
        Ok(())
    }
}

pub fn encode_model(model: &ModelParams) -> Vec<u8> {
    let mut w = Writer::new(MODEL_MAGIC);
    let s = &model.sampling;
    w.u32(s.block_size);
    w.u32(s.measurements);
    w.f32(s.subrate);
    w.u32(model.phase.number() as usize);
    let n = &model.net;
    w.u32(n.enhance1_depth);
    w.u32(n.enhance1_width);
    w.u32(n.mwcnn_levels);
    for &width in &n.mwcnn_widths {
        w.u32(width);
    }
    w.u32(n.mwcnn_convs_per_level);
    w.u64(model.seed);
    // Subnets beyond the stamped phase are never used and not stored.
    let params = model.active_params(model.phase);
    w.u32(params.len());
    for p in params {
        w.u32(p.name.len());
        w.buf.extend_from_slice(p.name.as_bytes());
        let dims = p.shape().dims();
        w.u32(dims.len());
        for d in dims {
            w.u32(d);
        }
        w.f32s(p.value.data());
    }
    w.finish()
}

/// CRC32 trailer of the encoded model; binds measurement packets to it.
pub fn model_checksum(model: &ModelParams) -> u32 {
    let bytes = encode_model(model);
    u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"))
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader::open("model file", bytes, MODEL_MAGIC)?;
    let at = r.pos;
    let block_size = r.u32()?;
    let measurements = r.u32()?;
    let subrate = r.f32()?;
    let sampling = SamplingConfig {
        block_size,
        subrate,
        measurements,
    };
    sampling.validate().map_err(|e| r.malformed_at(at, e.to_string()))?;
    let at = r.pos;
    let phase = Phase::from_number(r.u32()? as u32).map_err(|e| r.malformed_at(at, e.to_string()))?;
    let at = r.pos;
    let enhance1_depth = r.u32()?;
    let enhance1_width = r.u32()?;
    let mwcnn_levels = r.u32()?;
    if mwcnn_levels > 16 {
        return Err(r.malformed_at(r.pos - 4, format!("implausible mwcnn level count {mwcnn_levels}")));
    }
    let mwcnn_widths = (0..mwcnn_levels).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let mwcnn_convs_per_level = r.u32()?;
    let net = NetConfig {
        enhance1_depth,
        enhance1_width,
        mwcnn_levels,
        mwcnn_widths,
        mwcnn_convs_per_level,
    };
    net.validate().map_err(|e| r.malformed_at(at, e.to_string()))?;
    let seed = r.u64()?;

    let mut model = init_params(sampling, net, seed)?;
    model.truncate_to(phase);
    let expected = model.params().len();
    let count_at = r.pos;
    let count = r.u32()?;
    if count != expected {
        return Err(r.malformed_at(
            count_at,
            format!("phase-{phase} model needs {expected} parameters, file lists {count}"),
        ));
    }
    let mut seen = vec![false; expected];
    for _ in 0..count {
        let at = r.pos;
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| r.malformed_at(at + 4, "parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u32()?;
        if !(1..=4).contains(&rank) {
            return Err(r.malformed_at(r.pos - 4, format!("parameter {name}: rank {rank} unsupported")));
        }
        let mut dims = [1usize; 4];
        for d in dims[4 - rank..].iter_mut() {
            *d = r.u32()?;
        }
        let shape = Shape::from(dims);
        if shape.len() > MAX_ELEMENTS {
            return Err(r.malformed_at(at, format!("parameter {name}: too many elements")));
        }
        let values = r.f32s(shape.len())?;
        let mut params = model.active_params_mut(Phase::Multiscale);
        let Some(idx) = params.iter().position(|p| p.name == name) else {
            return Err(r.malformed_at(at, format!("unknown parameter {name}")));
        };
        if params[idx].shape() != shape {
            return Err(r.malformed_at(
                at,
                format!(
                    "parameter {name}: shape {shape}, architecture needs {}",
                    params[idx].shape()
                ),
            ));
        }
        if std::mem::replace(&mut seen[idx], true) {
            return Err(r.malformed_at(at, format!("duplicate parameter {name}")));
        }
        params[idx].value = Tensor::from_vec(shape, values)?;
    }
    r.finish()?;
    Ok(model)
}

pub fn save_model(model: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    decode_model(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// CS measurements of one (centrally cropped) image.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementPacket {
    pub height: usize,
    pub width: usize,
    pub crop_top: usize,
    pub crop_left: usize,
    pub crop_height: usize,
    pub crop_width: usize,
    pub block_size: usize,
    pub measurements: usize,
    pub model_checksum: u32,
    /// `(1, m, crop_height / 2n_B, crop_width / 2n_B)`.
    pub data: Tensor,
}

impl MeasurementPacket {
    pub fn grid(&self) -> (usize, usize) {
        let tile = 2 * self.block_size;
        (self.crop_height / tile, self.crop_width / tile)
    }

    pub fn payload_len(&self) -> usize {
        let (gh, gw) = self.grid();
        self.measurements * gh * gw
    }
}

pub fn encode_packet(p: &MeasurementPacket) -> Vec<u8> {
    let mut w = Writer::new(MEASUREMENT_MAGIC);
    for v in [
        p.height,
        p.width,
        p.crop_top,
        p.crop_left,
        p.crop_height,
        p.crop_width,
        p.block_size,
        p.measurements,
    ] {
        w.u32(v);
    }
    w.buf.extend_from_slice(&p.model_checksum.to_le_bytes());
    let s = p.data.shape();
    let mut payload = Vec::with_capacity(s.len());
    for gy in 0..s.h {
        for gx in 0..s.w {
            for k in 0..s.c {
                payload.push(p.data.get(0, k, gy, gx));
            }
        }
    }
    w.f32s(&payload);
    w.finish()
}

pub fn decode_packet(bytes: &[u8]) -> Result<MeasurementPacket> {
    let mut r = Reader::open("measurement file", bytes, MEASUREMENT_MAGIC)?;
    let header_at = r.pos;
    let mut f = [0usize; 8];
    for v in f.iter_mut() {
        *v = r.u32()?;
    }
    let [height, width, crop_top, crop_left, crop_height, crop_width, block_size, measurements] = f;
    let model_checksum = r.u32()? as u32;
    if block_size == 0 || measurements == 0 || measurements > 4 * block_size * block_size {
        return Err(r.malformed_at(header_at + 24, "invalid block size or measurement count"));
    }
    let tile = 2 * block_size;
    if crop_height == 0
        || crop_width == 0
        || crop_height % tile != 0
        || crop_width % tile != 0
        || crop_top + crop_height > height
        || crop_left + crop_width > width
    {
        return Err(r.malformed_at(header_at, "inconsistent image / crop dimensions"));
    }
    let (gh, gw) = (crop_height / tile, crop_width / tile);
    let len = measurements
        .checked_mul(gh)
        .and_then(|v| v.checked_mul(gw))
        .filter(|&v| v <= MAX_ELEMENTS)
        .ok_or_else(|| r.malformed_at(header_at, "payload too large"))?;
    let payload = r.f32s(len)?;
    r.finish()?;
    let mut data = Tensor::zeros([1, measurements, gh, gw]);
    let mut it = payload.into_iter();
    for gy in 0..gh {
        for gx in 0..gw {
            for k in 0..measurements {
                let i = data.index(0, k, gy, gx);
                data.data_mut()[i] = it.next().expect("length checked");
            }
        }
    }
    Ok(MeasurementPacket {
        height,
        width,
        crop_top,
        crop_left,
        crop_height,
        crop_width,
        block_size,
        measurements,
        model_checksum,
        data,
    })
}

pub fn save_packet(p: &MeasurementPacket, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_packet(p)).map_err(|e| Error::io(path, e))
}

pub fn load_packet(path: impl AsRef<Path>) -> Result<MeasurementPacket> {
    let path = path.as_ref();
    decode_packet(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
