//! Lossless wire format for scene maps.
//!
//! A transmitted map is a length-prefixed metadata record followed by a
//! grayscale PNG whose pixel values are the compacted labels (0 =
//! unexplored). Maps with more than 255 palette entries use 16-bit samples.
//!
//! Metadata record, all integers little-endian:
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | `u32` body length `L` (bytes after this) |
//! | 4      | 4    | magic `b"SMAP"`                        |
//! | 8      | 1    | version, currently `1`                 |
//! | 9      | 1    | sample depth in bits, `8` or `16`      |
//! | 10     | 8    | `i64` origin `i`                       |
//! | 18     | 8    | `i64` origin `j`                       |
//! | 26     | 4    | `u32` width                            |
//! | 30     | 4    | `u32` height                           |
//! | 34     | 8    | `f64` cell size along `i` (meters)     |
//! | 42     | 8    | `f64` cell size along `j` (meters)     |
//! | 50     | 4    | `u32` palette length `P`               |
//! | 54     | 4·P  | `u32` topic id of pixel value `1..=P`  |
//!
//! An empty (0×0) map carries no PNG at all.

use std::io::Cursor;

use png::{BitDepth, ColorType, DeflateCompression, Filter, Transformations};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SceneMap;
use crate::model::TopicId;

pub const META_MAGIC: &[u8; 4] = b"SMAP";
pub const META_VERSION: u8 = 1;
const META_FIXED_LEN: usize = 54;

/// Encoder settings, pinned so byte counts are reproducible.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecConfig {
    /// zlib level, 1..=9.
    pub deflate_level: u8,
    pub filter: RowFilter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowFilter {
    None,
    Sub,
    Up,
    Paeth,
    Adaptive,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            deflate_level: 9,
            filter: RowFilter::Adaptive,
        }
    }
}

impl RowFilter {
    fn to_png(self) -> Filter {
        match self {
            RowFilter::None => Filter::NoFilter,
            RowFilter::Sub => Filter::Sub,
            RowFilter::Up => Filter::Up,
            RowFilter::Paeth => Filter::Paeth,
            RowFilter::Adaptive => Filter::Adaptive,
        }
    }
}

/// Georeferencing sidecar of an encoded map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapMeta {
    pub origin: [i64; 2],
    pub width: u32,
    pub height: u32,
    pub cell_size: [f64; 2],
    pub palette: Vec<TopicId>,
    /// 8, or 16 when the palette outgrows 8-bit samples.
    pub bit_depth: u8,
}

impl MapMeta {
    pub fn to_bytes(&self) -> Vec<u8> {
        let body_len = META_FIXED_LEN - 4 + 4 * self.palette.len();
        let mut out = Vec::with_capacity(body_len + 4);
        out.extend_from_slice(&(body_len as u32).to_le_bytes());
        out.extend_from_slice(META_MAGIC);
        out.push(META_VERSION);
        out.push(self.bit_depth);
        out.extend_from_slice(&self.origin[0].to_le_bytes());
        out.extend_from_slice(&self.origin[1].to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.cell_size[0].to_le_bytes());
        out.extend_from_slice(&self.cell_size[1].to_le_bytes());
        out.extend_from_slice(&(self.palette.len() as u32).to_le_bytes());
        for &t in &self.palette {
            out.extend_from_slice(&t.to_le_bytes());
        }
        out
    }

    /// Parses a record from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(MapMeta, usize)> {
        let mut r = ByteReader { bytes, pos: 0 };
        let body_len = r.u32()? as usize;
        let end = 4usize
            .checked_add(body_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| decode_err(bytes.len(), format!("record declares {body_len} bytes, input ends first")))?;
        let magic = r.take(4)?;
        if magic != META_MAGIC {
            return Err(decode_err(4, "bad magic, not a scene map record"));
        }
        let version = r.u8()?;
        if version != META_VERSION {
            return Err(decode_err(8, format!("unsupported version {version}")));
        }
        let bit_depth = r.u8()?;
        if bit_depth != 8 && bit_depth != 16 {
            return Err(decode_err(9, format!("unsupported sample depth {bit_depth}")));
        }
        let origin = [r.i64()?, r.i64()?];
        let width = r.u32()?;
        let height = r.u32()?;
        let cell_size = [r.f64()?, r.f64()?];
        let palette_at = r.pos;
        let palette_len = r.u32()? as usize;
        if META_FIXED_LEN + 4 * palette_len != end {
            return Err(decode_err(
                palette_at,
                format!("palette of {palette_len} entries does not fit a {body_len}-byte record"),
            ));
        }
        let palette = (0..palette_len).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        Ok((
            MapMeta {
                origin,
                width,
                height,
                cell_size,
                palette,
                bit_depth,
            },
            end,
        ))
    }
}

fn decode_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Decode {
        offset,
        message: message.into(),
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(decode_err(
                self.bytes.len(),
                format!("truncated: needed {n} bytes at offset {}", self.pos),
            ));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedMap {
    /// PNG stream; empty for a 0×0 map.
    pub png: Vec<u8>,
    pub meta: MapMeta,
}

impl EncodedMap {
    /// Total bytes on the wire: metadata record plus image.
    pub fn len(&self) -> usize {
        self.meta.to_bytes().len() + self.png.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The transmitted byte string: metadata record, then the PNG.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.meta.to_bytes();
        out.extend_from_slice(&self.png);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, used) = MapMeta::from_bytes(bytes)?;
        Ok(EncodedMap {
            png: bytes[used..].to_vec(),
            meta,
        })
    }
}

pub fn encode_map(map: &SceneMap) -> Result<EncodedMap> {
    encode_map_with(map, &CodecConfig::default())
}

pub fn encode_map_with(map: &SceneMap, cfg: &CodecConfig) -> Result<EncodedMap> {
    map.validate()?;
    let p = map.palette.len();
    if p > u16::MAX as usize {
        return Err(Error::TooManyLabels(p));
    }
    let bit_depth = if p > u8::MAX as usize { 16 } else { 8 };
    let too_big = |v: usize| u32::try_from(v).map_err(|_| Error::invalid("map dimension exceeds u32"));
    let meta = MapMeta {
        origin: map.origin,
        width: too_big(map.width)?,
        height: too_big(map.height)?,
        cell_size: map.cell_size,
        palette: map.palette.clone(),
        bit_depth,
    };
    if map.is_empty() {
        return Ok(EncodedMap { png: Vec::new(), meta });
    }
    let data: Vec<u8> = if bit_depth == 8 {
        map.labels.iter().map(|&l| l as u8).collect()
    } else {
        map.labels.iter().flat_map(|&l| (l as u16).to_be_bytes()).collect()
    };
    let mut png_bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut png_bytes, meta.width, meta.height);
        enc.set_color(ColorType::Grayscale);
        enc.set_depth(if bit_depth == 8 {
            BitDepth::Eight
        } else {
            BitDepth::Sixteen
        });
        enc.set_deflate_compression(DeflateCompression::Level(cfg.deflate_level.clamp(1, 9)));
        enc.set_filter(cfg.filter.to_png());
        let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
        writer
            .write_image_data(&data)
            .map_err(|e| Error::Png(e.to_string()))?;
        writer.finish().map_err(|e| Error::Png(e.to_string()))?;
    }
    Ok(EncodedMap { png: png_bytes, meta })
}

pub fn decode_map(enc: &EncodedMap) -> Result<SceneMap> {
    let meta = &enc.meta;
    let offset = meta.to_bytes().len();
    let width = meta.width as usize;
    let height = meta.height as usize;
    let labels: Vec<u32> = if width == 0 || height == 0 {
        if !enc.png.is_empty() {
            return Err(decode_err(offset, "empty map carries image data"));
        }
        Vec::new()
    } else {
        let mut decoder = png::Decoder::new(Cursor::new(&enc.png[..]));
        decoder.set_transformations(Transformations::IDENTITY);
        let mut reader = decoder
            .read_info()
            .map_err(|e| decode_err(offset, format!("png header: {e}")))?;
        let info = reader.info();
        if (info.width as usize, info.height as usize) != (width, height) {
            return Err(decode_err(
                offset,
                format!(
                    "image is {}x{}, record says {width}x{height}",
                    info.width, info.height
                ),
            ));
        }
        let expected_depth = if meta.bit_depth == 8 {
            BitDepth::Eight
        } else {
            BitDepth::Sixteen
        };
        if info.color_type != ColorType::Grayscale || info.bit_depth != expected_depth {
            return Err(decode_err(
                offset,
                format!(
                    "expected {}-bit grayscale, found {:?} {:?}",
                    meta.bit_depth, info.color_type, info.bit_depth
                ),
            ));
        }
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| decode_err(offset, "image too large"))?;
        let mut buf = vec![0u8; size];
        let out = reader
            .next_frame(&mut buf)
            .map_err(|e| decode_err(offset, format!("png data: {e}")))?;
        reader
            .finish()
            .map_err(|e| decode_err(offset, format!("png trailer: {e}")))?;
        let buf = &buf[..out.buffer_size()];
        if meta.bit_depth == 8 {
            buf.iter().map(|&b| b as u32).collect()
        } else {
            buf.chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
                .collect()
        }
    };
    if let Some(&bad) = labels.iter().find(|&&l| l as usize > meta.palette.len()) {
        return Err(Error::MissingPalette(bad));
    }
    let map = SceneMap {
        origin: meta.origin,
        width,
        height,
        cell_size: meta.cell_size,
        labels,
        palette: meta.palette.clone(),
    };
    map.validate()?;
    Ok(map)
}

/// Decodes a transmitted byte string.
pub fn decode_bytes(bytes: &[u8]) -> Result<SceneMap> {
    decode_map(&EncodedMap::from_bytes(bytes)?)
}

/// Bytes needed to transmit `map`, metadata included.
pub fn encoded_size(map: &SceneMap) -> Result<usize> {
    Ok(encode_map(map)?.len())
}
