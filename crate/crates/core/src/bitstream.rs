//! Bit-exact serialization of CBR and VBR encodings.
//!
//! Header (little-endian):
//!
//! ```text
//! "VRVQ" | version u8 | mode u8 (0 CBR, 1 VBR) | N_q u8 | code_bits u8 | D u16
//! | T u32 | rate num u32 | rate den u32 | model fingerprint u64 | [CBR: n_q u8]
//! ```
//!
//! The payload is MSB-first and padded with zero bits only at its end. A VBR
//! frame is a `ceil(log2 N_q)`-bit field holding `n_q - 1` followed by
//! `n_q` indices of `code_bits` each; a CBR frame is just its `n_q` indices.
//! Indices above a frame's depth are never written.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{FeatureSequence, FrameRate};
use crate::io::{self, ByteReader};
use crate::rvq::RvqModel;
use crate::vrvq::{EncodingMode, VrvqEncoding};

const MAGIC: &[u8; 4] = b"VRVQ";
pub const VERSION: u8 = 1;

/// Bits of the per-frame depth field, `ceil(log2 n_q)`.
pub fn depth_bits(n_q: usize) -> u32 {
    assert!(n_q >= 1);
    usize::BITS - (n_q - 1).leading_zeros()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamMode {
    Cbr { depth: u8 },
    Vbr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamHeader {
    pub version: u8,
    pub mode: StreamMode,
    pub stages: u8,
    pub code_bits: u8,
    pub dim: u16,
    pub frames: u32,
    pub frame_rate: FrameRate,
    pub model_fingerprint: u64,
}

impl StreamHeader {
    fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::CorruptStream("N_q must be at least 1".into()));
        }
        if !(1..=16).contains(&self.code_bits) {
            return Err(Error::CorruptStream(format!("code_bits {} outside [1, 16]", self.code_bits)));
        }
        if self.frame_rate.num == 0 || self.frame_rate.den == 0 {
            return Err(Error::CorruptStream("frame rate must be positive".into()));
        }
        if self.frames == 0 {
            return Err(Error::CorruptStream("stream has no frames".into()));
        }
        if let StreamMode::Cbr { depth } = self.mode {
            if depth == 0 || depth > self.stages {
                return Err(Error::CorruptStream(format!("CBR depth {depth} outside [1, {}]", self.stages)));
            }
        }
        Ok(())
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.push(self.version);
        out.push(match self.mode {
            StreamMode::Cbr { .. } => 0,
            StreamMode::Vbr => 1,
        });
        out.push(self.stages);
        out.push(self.code_bits);
        out.extend_from_slice(&self.dim.to_le_bytes());
        out.extend_from_slice(&self.frames.to_le_bytes());
        out.extend_from_slice(&self.frame_rate.num.to_le_bytes());
        out.extend_from_slice(&self.frame_rate.den.to_le_bytes());
        out.extend_from_slice(&self.model_fingerprint.to_le_bytes());
        if let StreamMode::Cbr { depth } = self.mode {
            out.push(depth);
        }
    }

    fn read(r: &mut ByteReader<'_>) -> Result<Self> {
        r.magic(MAGIC)?;
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let mode = r.u8()?;
        let stages = r.u8()?;
        let code_bits = r.u8()?;
        let dim = r.u16()?;
        let frames = r.u32()?;
        let frame_rate = FrameRate {
            num: r.u32()?,
            den: r.u32()?,
        };
        let model_fingerprint = r.u64()?;
        let mode = match mode {
            0 => StreamMode::Cbr { depth: r.u8()? },
            1 => StreamMode::Vbr,
            m => return Err(Error::CorruptStream(format!("unknown mode {m}"))),
        };
        let header = Self {
            version,
            mode,
            stages,
            code_bits,
            dim,
            frames,
            frame_rate,
            model_fingerprint,
        };
        header.validate()?;
        Ok(header)
    }

    pub fn side_info_bits(&self) -> u32 {
        match self.mode {
            StreamMode::Cbr { .. } => 0,
            StreamMode::Vbr => depth_bits(usize::from(self.stages)),
        }
    }
}

/// Everything the header needs besides what the encoding itself carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamParams {
    pub stages: u8,
    pub code_bits: u8,
    pub dim: u16,
    pub frame_rate: FrameRate,
    pub model_fingerprint: u64,
}

impl StreamParams {
    pub fn for_model(model: &RvqModel, frame_rate: FrameRate) -> Self {
        Self {
            stages: model.stages() as u8,
            code_bits: model.code_bits(),
            dim: model.dim() as u16,
            frame_rate,
            model_fingerprint: model.fingerprint(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedStream {
    pub header: StreamHeader,
    pub payload: Vec<u8>,
    /// Payload length before the final padding.
    pub payload_bits: u64,
}

impl EncodedStream {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(31 + self.payload.len());
        self.header.write(&mut out);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_file(path.as_ref(), &self.to_bytes())
    }
}

struct BitWriter {
    bytes: Vec<u8>,
    bits: u64,
}

impl BitWriter {
    fn new() -> Self {
        Self { bytes: Vec::new(), bits: 0 }
    }

    fn put(&mut self, value: u32, width: u32) {
        for shift in (0..width).rev() {
            let bit = (value >> shift) & 1;
            let offset = (self.bits % 8) as u32;
            if offset == 0 {
                self.bytes.push(0);
            }
            if bit == 1 {
                *self.bytes.last_mut().unwrap() |= 0x80 >> offset;
            }
            self.bits += 1;
        }
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    bits: u64,
}

impl<'a> BitReader<'a> {
    fn get(&mut self, width: u32) -> Result<u32> {
        let end = self.bits + u64::from(width);
        if end > self.bytes.len() as u64 * 8 {
            return Err(Error::TruncatedPayload {
                needed: end.div_ceil(8) as usize,
                available: self.bytes.len(),
            });
        }
        let mut value = 0u32;
        for _ in 0..width {
            let byte = self.bytes[(self.bits / 8) as usize];
            let bit = (byte >> (7 - self.bits % 8)) & 1;
            value = (value << 1) | u32::from(bit);
            self.bits += 1;
        }
        Ok(value)
    }
}

/// Serializes the in-use part of `encoding`.
pub fn pack(encoding: &VrvqEncoding, params: &StreamParams) -> Result<EncodedStream> {
    let stages = usize::from(params.stages);
    if encoding.codes.stages() != stages {
        return Err(Error::DimensionMismatch {
            expected: stages,
            got: encoding.codes.stages(),
        });
    }
    let frames = encoding.depths.len();
    let mode = match encoding.mode {
        EncodingMode::Cbr { depth } => StreamMode::Cbr {
            depth: u8::try_from(depth).map_err(|_| Error::DepthOutOfRange { depth, max: stages })?,
        },
        EncodingMode::Vbr { .. } => StreamMode::Vbr,
    };
    let header = StreamHeader {
        version: VERSION,
        mode,
        stages: params.stages,
        code_bits: params.code_bits,
        dim: params.dim,
        frames: u32::try_from(frames).map_err(|_| Error::config("too many frames"))?,
        frame_rate: params.frame_rate,
        model_fingerprint: params.model_fingerprint,
    };
    header.validate()?;

    let limit = 1u64 << params.code_bits;
    let dbits = header.side_info_bits();
    let mut w = BitWriter::new();
    for (t, &depth) in encoding.depths.iter().enumerate() {
        if depth == 0 || depth > stages {
            return Err(Error::DepthOutOfRange { depth, max: stages });
        }
        match mode {
            StreamMode::Vbr => w.put((depth - 1) as u32, dbits),
            StreamMode::Cbr { depth: fixed } if usize::from(fixed) != depth => {
                return Err(Error::config(format!("frame {t} has depth {depth} in a CBR-{fixed} encoding")));
            }
            StreamMode::Cbr { .. } => {}
        }
        for &idx in &encoding.codes.frame(t)[..depth] {
            if u64::from(idx) >= limit {
                return Err(Error::IndexOutOfRange {
                    index: idx as usize,
                    size: limit as usize,
                });
            }
            w.put(idx, u32::from(params.code_bits));
        }
    }
    Ok(EncodedStream {
        header,
        payload_bits: w.bits,
        payload: w.bytes,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnpackedStream {
    pub header: StreamHeader,
    pub depths: Vec<usize>,
    /// In-use indices per frame; `codes[t].len() == depths[t]`.
    pub codes: Vec<Vec<u32>>,
    pub payload_bits: u64,
}

impl UnpackedStream {
    /// Reconstructs the features, refusing a model other than the one the
    /// stream was encoded with.
    pub fn decode(&self, model: &RvqModel) -> Result<FeatureSequence> {
        let h = &self.header;
        if h.model_fingerprint != model.fingerprint()
            || usize::from(h.stages) != model.stages()
            || h.code_bits != model.code_bits()
            || usize::from(h.dim) != model.dim()
        {
            return Err(Error::CorruptStream(format!(
                "stream expects model {:016x} (N_q {}, b {}, D {}), got {:016x}",
                h.model_fingerprint,
                h.stages,
                h.code_bits,
                h.dim,
                model.fingerprint()
            )));
        }
        crate::rvq::decode_in_use(model, &self.codes, h.frame_rate)
    }

    pub fn stream(&self, payload: Vec<u8>) -> EncodedStream {
        EncodedStream {
            header: self.header.clone(),
            payload,
            payload_bits: self.payload_bits,
        }
    }
}

pub fn unpack(bytes: &[u8]) -> Result<UnpackedStream> {
    let mut r = ByteReader::new(bytes);
    let header = StreamHeader::read(&mut r)?;
    let payload = r.remaining();
    let stages = usize::from(header.stages);
    let dbits = header.side_info_bits();
    let mut br = BitReader { bytes: payload, bits: 0 };
    let frames = header.frames as usize;
    let mut depths = Vec::with_capacity(frames);
    let mut codes = Vec::with_capacity(frames);
    for t in 0..frames {
        let depth = match header.mode {
            StreamMode::Vbr => {
                let field = br.get(dbits)? as usize;
                if field + 1 > stages {
                    return Err(Error::CorruptStream(format!(
                        "frame {t}: depth field {field} exceeds N_q = {stages}"
                    )));
                }
                field + 1
            }
            StreamMode::Cbr { depth } => usize::from(depth),
        };
        let frame = (0..depth)
            .map(|_| br.get(u32::from(header.code_bits)))
            .collect::<Result<Vec<_>>>()?;
        depths.push(depth);
        codes.push(frame);
    }
    let used = br.bits.div_ceil(8) as usize;
    if payload.len() > used {
        return Err(Error::CorruptStream(format!("{} trailing bytes", payload.len() - used)));
    }
    let pad = (8 - br.bits % 8) % 8;
    if pad > 0 && br.get(pad as u32)? != 0 {
        return Err(Error::CorruptStream("non-zero padding bits".into()));
    }
    Ok(UnpackedStream {
        payload_bits: br.bits - pad,
        header,
        depths,
        codes,
    })
}

pub fn read_stream(path: impl AsRef<Path>) -> Result<(UnpackedStream, EncodedStream)> {
    let bytes = io::read_file(path.as_ref())?;
    let unpacked = unpack(&bytes)?;
    let header_len = bytes.len() - unpacked.payload_bits.div_ceil(8) as usize;
    let stream = unpacked.stream(bytes[header_len..].to_vec());
    Ok((unpacked, stream))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bitrate {
    pub total_kbps: f64,
    pub side_info_kbps: f64,
}

pub fn measure_bitrate(stream: &EncodedStream) -> Bitrate {
    bitrate_of(&stream.header, stream.payload_bits)
}

pub(crate) fn bitrate_of(header: &StreamHeader, payload_bits: u64) -> Bitrate {
    let rate = header.frame_rate.hz();
    Bitrate {
        total_kbps: payload_bits as f64 * rate / f64::from(header.frames) / 1000.0,
        side_info_kbps: f64::from(header.side_info_bits()) * rate / 1000.0,
    }
}
