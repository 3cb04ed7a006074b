//! Channel-knowledge grids, pixel codecs and the native tensor file format.
//!
//! Tensors hold physical units: gains in dB, angles in degrees, masks in
//! `{0, 1}`. The codecs map gains and angles linearly onto the `[0, 1]` pixel
//! range used by the dataset images and by the network. Buildings carry a
//! sentinel in both maps: −250 dB (pixel 0) for gain and −200° (pixel 0) for
//! angle.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{CkmError, Result};
use crate::kv::KvDoc;

pub const GAIN_MIN_DB: f64 = -250.0;
pub const GAIN_MAX_DB: f64 = -50.0;
pub const ANGLE_MIN_DEG: f64 = -200.0;
pub const ANGLE_MAX_DEG: f64 = 180.0;
pub const GAIN_SENTINEL_DB: f64 = GAIN_MIN_DB;
pub const ANGLE_SENTINEL_DEG: f64 = ANGLE_MIN_DEG;
/// Marks pixels without a similarity score (buildings, uncovered pixels).
pub const COSINE_SENTINEL: f64 = -1.0;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const MAGIC: &[u8; 4] = b"CKMT";
const FORMAT_VERSION: u16 = 1;
const HEADER_FIXED: usize = 4 + 2 + 4 + 4 + 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelKind {
    GainDb,
    AngleDeg,
    LosMask,
    BuildingMask,
    BsEncoding,
    /// Per-pixel similarity score in `[0, 1]`, or [`COSINE_SENTINEL`].
    Cosine,
}

impl ChannelKind {
    pub const ALL: [ChannelKind; 6] = [
        ChannelKind::GainDb,
        ChannelKind::AngleDeg,
        ChannelKind::LosMask,
        ChannelKind::BuildingMask,
        ChannelKind::BsEncoding,
        ChannelKind::Cosine,
    ];

    pub fn code(self) -> u8 {
        match self {
            ChannelKind::GainDb => 0,
            ChannelKind::AngleDeg => 1,
            ChannelKind::LosMask => 2,
            ChannelKind::BuildingMask => 3,
            ChannelKind::BsEncoding => 4,
            ChannelKind::Cosine => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelKind::GainDb => "gain_db",
            ChannelKind::AngleDeg => "angle_deg",
            ChannelKind::LosMask => "los",
            ChannelKind::BuildingMask => "building",
            ChannelKind::BsEncoding => "bs",
            ChannelKind::Cosine => "cosine",
        }
    }

    pub fn is_mask(self) -> bool {
        matches!(self, ChannelKind::LosMask | ChannelKind::BuildingMask)
    }

    /// Physical units per pixel unit; 1 for masks and the BS map.
    pub fn codec_slope(self) -> f64 {
        match self {
            ChannelKind::GainDb => GAIN_MAX_DB - GAIN_MIN_DB,
            ChannelKind::AngleDeg => ANGLE_MAX_DEG - ANGLE_MIN_DEG,
            _ => 1.0,
        }
    }

    fn check_value(self, v: f32) -> bool {
        let v = v as f64;
        match self {
            ChannelKind::GainDb => (GAIN_MIN_DB..=GAIN_MAX_DB).contains(&v),
            ChannelKind::AngleDeg => (ANGLE_MIN_DEG..=ANGLE_MAX_DEG).contains(&v),
            ChannelKind::LosMask | ChannelKind::BuildingMask => v == 0.0 || v == 1.0,
            ChannelKind::BsEncoding => (0.0..=1.0).contains(&v),
            ChannelKind::Cosine => v == COSINE_SENTINEL || (0.0..=1.0 + 1e-6).contains(&v),
        }
    }

    /// Physical value to `[0, 1]` pixel value, clamping out-of-range inputs.
    pub fn encode(self, v: f64) -> f64 {
        match self {
            ChannelKind::GainDb => clamp_unit((v - GAIN_MIN_DB) / (GAIN_MAX_DB - GAIN_MIN_DB)),
            ChannelKind::AngleDeg => {
                clamp_unit((v - ANGLE_MIN_DEG) / (ANGLE_MAX_DEG - ANGLE_MIN_DEG))
            }
            _ => clamp_unit(v),
        }
    }

    /// Pixel value to physical value. Pixels are clamped to `[0, 1]` first and
    /// masks are rounded to the nearer of 0 and 1.
    pub fn decode(self, p: f64) -> f64 {
        let p = clamp_unit(p);
        match self {
            ChannelKind::GainDb => (GAIN_MAX_DB - GAIN_MIN_DB) * p + GAIN_MIN_DB,
            ChannelKind::AngleDeg => (ANGLE_MAX_DEG - ANGLE_MIN_DEG) * p + ANGLE_MIN_DEG,
            ChannelKind::LosMask | ChannelKind::BuildingMask => {
                if p >= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
            ChannelKind::BsEncoding | ChannelKind::Cosine => p,
        }
    }
}

fn clamp_unit(p: f64) -> f64 {
    p.clamp(0.0, 1.0)
}

/// `(gain_db + 250) / 200`, clamped to the dataset range.
pub fn encode_gain(gain_db: f64) -> Result<f64> {
    if gain_db.is_nan() {
        return Err(CkmError::invalid("cannot encode a NaN gain"));
    }
    Ok(ChannelKind::GainDb.encode(gain_db))
}

/// Encodes a batch, returning the pixels and how many inputs were clamped.
pub fn encode_gain_batch(gains_db: &[f64]) -> Result<(Vec<f64>, usize)> {
    let mut clamped = 0;
    let pixels = gains_db
        .iter()
        .map(|&g| {
            if !(GAIN_MIN_DB..=GAIN_MAX_DB).contains(&g) {
                clamped += 1;
            }
            encode_gain(g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((pixels, clamped))
}

pub fn decode_gain(pixel: f64) -> Result<f64> {
    check_pixel(pixel)?;
    Ok(ChannelKind::GainDb.decode(pixel))
}

/// `(angle_deg + 200) / 380`.
pub fn encode_angle(angle_deg: f64) -> Result<f64> {
    if angle_deg.is_nan() {
        return Err(CkmError::invalid("cannot encode a NaN angle"));
    }
    Ok(ChannelKind::AngleDeg.encode(angle_deg))
}

pub fn decode_angle(pixel: f64) -> Result<f64> {
    check_pixel(pixel)?;
    Ok(ChannelKind::AngleDeg.decode(pixel))
}

fn check_pixel(pixel: f64) -> Result<()> {
    if (0.0..=1.0).contains(&pixel) {
        Ok(())
    } else {
        Err(CkmError::invalid(format!(
            "pixel value {pixel} outside [0, 1]"
        )))
    }
}

/// Decoded angles below −180° cannot be physical arrivals; they sit between
/// the building sentinel and the valid range and are treated as sentinel.
pub fn is_angle_sentinel(angle_deg: f64) -> bool {
    angle_deg < -180.0
}

pub fn is_gain_sentinel(gain_db: f64) -> bool {
    gain_db <= GAIN_SENTINEL_DB
}

/// `W × H × C` grid, row-major, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct CkmTensor {
    width: usize,
    height: usize,
    channels: Vec<ChannelKind>,
    data: Vec<f32>,
    pixel_spacing_m: f64,
}

impl CkmTensor {
    pub fn new(
        width: usize,
        height: usize,
        channels: Vec<ChannelKind>,
        data: Vec<f32>,
        pixel_spacing_m: f64,
    ) -> Result<Self> {
        if width == 0 || height == 0 || channels.is_empty() {
            return Err(CkmError::invalid(format!(
                "empty tensor {width}x{height}x{}",
                channels.len()
            )));
        }
        if data.len() != width * height * channels.len() {
            return Err(CkmError::invalid(format!(
                "tensor {width}x{height}x{} needs {} values, got {}",
                channels.len(),
                width * height * channels.len(),
                data.len()
            )));
        }
        if !(pixel_spacing_m > 0.0 && pixel_spacing_m.is_finite()) {
            return Err(CkmError::invalid(format!(
                "pixel spacing must be positive, got {pixel_spacing_m}"
            )));
        }
        let c = channels.len();
        for (i, v) in data.iter().enumerate() {
            let kind = channels[i % c];
            if !kind.check_value(*v) {
                return Err(CkmError::invalid(format!(
                    "value {v} out of range for channel {} ({}) at pixel {}",
                    i % c,
                    kind.name(),
                    i / c
                )));
            }
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
            pixel_spacing_m,
        })
    }

    /// Builds a tensor from one `height × width` plane per channel.
    pub fn from_planes(
        width: usize,
        height: usize,
        planes: Vec<(ChannelKind, Vec<f32>)>,
        pixel_spacing_m: f64,
    ) -> Result<Self> {
        let n = width * height;
        if let Some((k, p)) = planes.iter().find(|(_, p)| p.len() != n) {
            return Err(CkmError::invalid(format!(
                "{} plane has {} values, expected {n}",
                k.name(),
                p.len()
            )));
        }
        let c = planes.len();
        let mut data = vec![0f32; n * c];
        for (ci, (_, plane)) in planes.iter().enumerate() {
            for (i, v) in plane.iter().enumerate() {
                data[i * c + ci] = *v;
            }
        }
        let kinds = planes.into_iter().map(|(k, _)| k).collect();
        Self::new(width, height, kinds, data, pixel_spacing_m)
    }

    /// Single-channel tensor.
    pub fn single(
        width: usize,
        height: usize,
        kind: ChannelKind,
        plane: Vec<f32>,
        pixel_spacing_m: f64,
    ) -> Result<Self> {
        Self::new(width, height, vec![kind], plane, pixel_spacing_m)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> &[ChannelKind] {
        &self.channels
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel_spacing_m(&self) -> f64 {
        self.pixel_spacing_m
    }

    pub fn same_grid(&self, other: &CkmTensor) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels.len() + ch]
    }

    /// Index of the first channel of `kind`.
    pub fn find(&self, kind: ChannelKind) -> Option<usize> {
        self.channels.iter().position(|&k| k == kind)
    }

    pub fn require(&self, kind: ChannelKind) -> Result<usize> {
        self.find(kind)
            .ok_or_else(|| CkmError::invalid(format!("tensor has no {} channel", kind.name())))
    }

    pub fn plane(&self, ch: usize) -> Vec<f32> {
        let c = self.channels.len();
        self.data.iter().skip(ch).step_by(c).copied().collect()
    }

    pub fn planes(&self) -> Vec<(ChannelKind, Vec<f32>)> {
        (0..self.n_channels())
            .map(|c| (self.channels[c], self.plane(c)))
            .collect()
    }

    /// Channel `ch` mapped into pixel space.
    pub fn encoded_plane(&self, ch: usize) -> Vec<f64> {
        let kind = self.channels[ch];
        self.plane(ch)
            .into_iter()
            .map(|v| kind.encode(v as f64))
            .collect()
    }

    /// Single-channel tensor holding channel `ch`.
    pub fn channel_tensor(&self, ch: usize) -> CkmTensor {
        CkmTensor {
            width: self.width,
            height: self.height,
            channels: vec![self.channels[ch]],
            data: self.plane(ch),
            pixel_spacing_m: self.pixel_spacing_m,
        }
    }

    /// Channels of `self` followed by the channels of `other`.
    pub fn concat(&self, other: &CkmTensor) -> Result<CkmTensor> {
        if !self.same_grid(other) {
            return Err(CkmError::invalid(format!(
                "cannot stack {}x{} with {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let mut planes = self.planes();
        planes.extend(other.planes());
        Self::from_planes(self.width, self.height, planes, self.pixel_spacing_m)
    }

    pub fn with_spacing(mut self, pixel_spacing_m: f64) -> Result<Self> {
        if !(pixel_spacing_m > 0.0 && pixel_spacing_m.is_finite()) {
            return Err(CkmError::invalid("pixel spacing must be positive"));
        }
        self.pixel_spacing_m = pixel_spacing_m;
        Ok(self)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = self.channels.len();
        let mut out = Vec::with_capacity(HEADER_FIXED + c + 8 + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(c as u16).to_le_bytes());
        out.extend(self.channels.iter().map(|k| k.code()));
        out.extend_from_slice(&self.pixel_spacing_m.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_FIXED {
            return Err(CkmError::Truncated {
                expected: HEADER_FIXED as u64,
                actual: bytes.len() as u64,
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(CkmError::format(0, "bad magic, expected `CKMT`"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(CkmError::format(
                4,
                format!("unsupported version {version}"),
            ));
        }
        let width = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
        let c = u16::from_le_bytes([bytes[14], bytes[15]]) as usize;
        let header = HEADER_FIXED + c + 8;
        let expected = header as u64 + (width * height * c) as u64 * 4;
        if bytes.len() as u64 != expected {
            return Err(CkmError::Truncated {
                expected,
                actual: bytes.len() as u64,
            });
        }
        let mut kinds = Vec::with_capacity(c);
        for i in 0..c {
            let off = HEADER_FIXED + i;
            kinds.push(ChannelKind::from_code(bytes[off]).ok_or_else(|| {
                CkmError::format(
                    off as u64,
                    format!("unknown channel kind code {}", bytes[off]),
                )
            })?);
        }
        let sp_off = HEADER_FIXED + c;
        let spacing = f64::from_le_bytes(bytes[sp_off..sp_off + 8].try_into().unwrap());
        let data = bytes[header..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::new(width, height, kinds, data, spacing)
            .map_err(|e| CkmError::format(header as u64, e.to_string()))
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<CkmTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CkmError::io(path, e))?;
    CkmTensor::from_bytes(&bytes)
}

pub fn write_tensor(tensor: &CkmTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.to_bytes()).map_err(|e| CkmError::io(path, e))
}

/// Scene parameters needed to interpret a gain map physically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneMeta {
    pub bs_height_m: f64,
    pub ue_height_m: f64,
    pub carrier_hz: f64,
    /// Known BS location `(row, col)`, if any.
    pub bs_pixel: Option<(usize, usize)>,
}

impl SceneMeta {
    pub fn new(bs_height_m: f64, ue_height_m: f64, carrier_hz: f64) -> Result<Self> {
        let meta = Self {
            bs_height_m,
            ue_height_m,
            carrier_hz,
            bs_pixel: None,
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_hz > 0.0 && self.carrier_hz.is_finite()) {
            return Err(CkmError::invalid(format!(
                "carrier frequency must be positive, got {}",
                self.carrier_hz
            )));
        }
        if !(self.bs_height_m >= 0.0 && self.ue_height_m >= 0.0) {
            return Err(CkmError::invalid(format!(
                "heights must be non-negative (bs {}, ue {})",
                self.bs_height_m, self.ue_height_m
            )));
        }
        Ok(())
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::default();
        doc.set("bs_height", self.bs_height_m);
        doc.set("ue_height", self.ue_height_m);
        doc.set("carrier_hz", self.carrier_hz);
        if let Some((r, c)) = self.bs_pixel {
            doc.set("bs_row", r);
            doc.set("bs_col", c);
        }
        doc
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let mut meta = Self {
            bs_height_m: doc.require("bs_height")?,
            ue_height_m: doc.require("ue_height")?,
            carrier_hz: doc.require("carrier_hz")?,
            bs_pixel: None,
        };
        match (
            doc.parse_value::<usize>("bs_row")?,
            doc.parse_value::<usize>("bs_col")?,
        ) {
            (Some(r), Some(c)) => meta.bs_pixel = Some((r, c)),
            (None, None) => {}
            _ => {
                return Err(CkmError::Metadata {
                    line: 0,
                    message: "bs_row and bs_col must be given together".into(),
                })
            }
        }
        meta.validate()?;
        Ok(meta)
    }
}

/// Grayscale image with values normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub bit_depth: u8,
    pub values: Vec<f64>,
}

/// Reads an 8- or 16-bit grayscale PNG; pixel `v` becomes `v / (2^depth − 1)`.
pub fn read_png_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| CkmError::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| CkmError::format(0, format!("{}: {e}", path.display())))?;
    let (color, depth) = reader.output_color_type();
    if color != png::ColorType::Grayscale {
        return Err(CkmError::format(
            0,
            format!(
                "{}: expected grayscale PNG, found {color:?}",
                path.display()
            ),
        ));
    }
    let bits: u8 = match depth {
        png::BitDepth::Eight => 8,
        png::BitDepth::Sixteen => 16,
        other => {
            return Err(CkmError::format(
                0,
                format!("{}: unsupported bit depth {other:?}", path.display()),
            ))
        }
    };
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| CkmError::format(0, format!("{}: {e}", path.display())))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let bytes = &buf[..info.buffer_size()];
    let values = if bits == 8 {
        bytes.iter().map(|&v| v as f64 / 255.0).collect()
    } else {
        bytes
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0)
            .collect()
    };
    Ok(GrayImage {
        width: w,
        height: h,
        bit_depth: bits,
        values,
    })
}

/// Imports a grayscale PNG as a single-channel tensor, decoding pixels through
/// the channel codec (pixel 1.0 in a gain image is −50 dB).
pub fn import_png_gray(
    path: impl AsRef<Path>,
    kind: ChannelKind,
    bit_depth: u8,
    pixel_spacing_m: f64,
) -> Result<CkmTensor> {
    if bit_depth != 8 && bit_depth != 16 {
        return Err(CkmError::format(
            0,
            format!("unsupported bit depth {bit_depth}"),
        ));
    }
    let img = read_png_gray(&path)?;
    if img.bit_depth != bit_depth {
        return Err(CkmError::format(
            0,
            format!(
                "{}: expected {bit_depth}-bit image, found {}-bit",
                path.as_ref().display(),
                img.bit_depth
            ),
        ));
    }
    let plane = img.values.iter().map(|&p| kind.decode(p) as f32).collect();
    CkmTensor::single(img.width, img.height, kind, plane, pixel_spacing_m)
}

/// Quantizes `[0, 1]` values to an 8- or 16-bit grayscale PNG.
pub fn write_png_gray(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    values: &[f64],
    bit_depth: u8,
) -> Result<()> {
    let path = path.as_ref();
    if values.len() != width * height {
        return Err(CkmError::invalid("image size does not match value count"));
    }
    let (depth, bytes) = match bit_depth {
        8 => (
            png::BitDepth::Eight,
            values
                .iter()
                .map(|&v| quantize(v, 255.0) as u8)
                .collect::<Vec<_>>(),
        ),
        16 => (
            png::BitDepth::Sixteen,
            values
                .iter()
                .flat_map(|&v| (quantize(v, 65535.0) as u16).to_be_bytes())
                .collect(),
        ),
        d => return Err(CkmError::invalid(format!("unsupported bit depth {d}"))),
    };
    write_png(
        path,
        width,
        height,
        png::ColorType::Grayscale,
        depth,
        &bytes,
    )
}

pub fn write_png_rgb(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    rgb: &[u8],
) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(CkmError::invalid(
            "rgb buffer size does not match image size",
        ));
    }
    write_png(
        path.as_ref(),
        width,
        height,
        png::ColorType::Rgb,
        png::BitDepth::Eight,
        rgb,
    )
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    bytes: &[u8],
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| CkmError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let to_io = |e: png::EncodingError| CkmError::io(path, std::io::Error::other(e));
    let mut writer = enc.write_header().map_err(to_io)?;
    writer.write_image_data(bytes).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

fn quantize(v: f64, full: f64) -> f64 {
    (v.clamp(0.0, 1.0) * full).round()
}
