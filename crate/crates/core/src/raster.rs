//! Multi-band raster representation, bit-exact file I/O, and band selection.
//!
//! Two on-disk formats are supported:
//!
//! - standard 8-bit PNG with 1..=4 channels, for interchange;
//! - a planar `.bsq` container for 16-bit / multispectral data: raw samples
//!   in band-sequential order (band 0 all rows, then band 1, ...), each band
//!   row-major, little-endian, with a `<name>.bsq.json` sidecar describing
//!   the layout.
//!
//! Samples are never rescaled or otherwise modified by anything in this
//! module; 16-bit data passes through untouched.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_BANDS: usize = 4;

/// Sample storage. The variant fixes the bit depth: `U8` is 8-bit,
/// `U16` is 16-bit, so the "every sample < 2^bit_depth" invariant is
/// carried by the type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Samples {
    U8(Vec<u8>),
    U16(Vec<u16>),
}

impl Samples {
    pub fn len(&self) -> usize {
        match self {
            Samples::U8(v) => v.len(),
            Samples::U16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bit_depth(&self) -> u8 {
        match self {
            Samples::U8(_) => 8,
            Samples::U16(_) => 16,
        }
    }

    fn get(&self, idx: usize) -> u16 {
        match self {
            Samples::U8(v) => u16::from(v[idx]),
            Samples::U16(v) => v[idx],
        }
    }
}

/// A multi-band 2-D pixel grid. Samples are row-major and
/// band-interleaved-by-pixel: index = (y * width + x) * bands + band.
///
/// Immutable after construction; safe to share read-only across workers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    bands: u8,
    samples: Samples,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, bands: u8, samples: Samples) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParams(format!(
                "raster dimensions must be >= 1, got {width}x{height}"
            )));
        }
        if bands == 0 || bands as usize > MAX_BANDS {
            return Err(Error::InvalidParams(format!(
                "band count must be 1..={MAX_BANDS}, got {bands}"
            )));
        }
        let expected = width as usize * height as usize * bands as usize;
        if samples.len() != expected {
            return Err(Error::InvalidParams(format!(
                "sample count {} does not match {}x{}x{} = {}",
                samples.len(),
                width,
                height,
                bands,
                expected
            )));
        }
        Ok(RasterImage {
            width,
            height,
            bands,
            samples,
        })
    }

    pub fn new_u8(width: u32, height: u32, bands: u8, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, bands, Samples::U8(data))
    }

    pub fn new_u16(width: u32, height: u32, bands: u8, data: Vec<u16>) -> Result<Self> {
        Self::new(width, height, bands, Samples::U16(data))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bands(&self) -> u8 {
        self.bands
    }

    pub fn bit_depth(&self) -> u8 {
        self.samples.bit_depth()
    }

    pub fn samples(&self) -> &Samples {
        &self.samples
    }

    /// Sample at (x, y) in the given band, widened to u16.
    pub fn sample(&self, x: u32, y: u32, band: u8) -> u16 {
        debug_assert!(x < self.width && y < self.height && band < self.bands);
        let idx = (y as usize * self.width as usize + x as usize) * self.bands as usize
            + band as usize;
        self.samples.get(idx)
    }
}

/// Which source bands to keep, in output order.
///
/// Four-band inputs are fixed as B,G,R,NIR, so `Rgb` maps to source indices
/// (2,1,0) and `NirGB` to (3,1,0).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandCombo {
    Rgb,
    NirGB,
    Custom(Vec<usize>),
}

impl BandCombo {
    /// Resolve to source band indices, validating against the source count.
    pub fn indices(&self, source_bands: u8) -> Result<Vec<usize>> {
        let idx = match self {
            BandCombo::Rgb => vec![2, 1, 0],
            BandCombo::NirGB => vec![3, 1, 0],
            BandCombo::Custom(v) => v.clone(),
        };
        if idx.is_empty() || idx.len() > MAX_BANDS {
            return Err(Error::InvalidParams(format!(
                "band selection must name 1..={MAX_BANDS} bands, got {}",
                idx.len()
            )));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= source_bands as usize) {
            return Err(Error::InvalidParams(format!(
                "band index {bad} out of range for a {source_bands}-band raster"
            )));
        }
        Ok(idx)
    }
}

/// Project/permute bands: output sample (x, y, i) = input sample (x, y, combo[i]).
pub fn select_bands(image: &RasterImage, combo: &BandCombo) -> Result<RasterImage> {
    let idx = combo.indices(image.bands)?;
    let n_px = image.width as usize * image.height as usize;
    let in_bands = image.bands as usize;
    let out_bands = idx.len();

    let samples = match &image.samples {
        Samples::U8(src) => {
            let mut out = Vec::with_capacity(n_px * out_bands);
            for px in 0..n_px {
                let base = px * in_bands;
                for &b in &idx {
                    out.push(src[base + b]);
                }
            }
            Samples::U8(out)
        }
        Samples::U16(src) => {
            let mut out = Vec::with_capacity(n_px * out_bands);
            for px in 0..n_px {
                let base = px * in_bands;
                for &b in &idx {
                    out.push(src[base + b]);
                }
            }
            Samples::U16(out)
        }
    };
    RasterImage::new(image.width, image.height, out_bands as u8, samples)
}

#[derive(Debug, Serialize, Deserialize)]
struct BsqHeader {
    width: u32,
    height: u32,
    bands: u8,
    bit_depth: u8,
    band_names: Vec<String>,
}

fn default_band_names(bands: u8) -> Vec<String> {
    match bands {
        4 => ["blue", "green", "red", "nir"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        n => (0..n).map(|i| format!("band_{i}")).collect(),
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    std::path::PathBuf::from(s)
}

/// Load a raster from `.png` or `.bsq` (+ `.bsq.json` sidecar).
pub fn load_raster(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    match extension(path) {
        Some("png") => load_png(path),
        Some("bsq") => load_bsq(path),
        _ => Err(Error::decode(
            path,
            "unsupported raster format (expected .png or .bsq)",
        )),
    }
}

/// Save a raster to `.png` (8-bit only) or `.bsq` (+ sidecar).
pub fn save_raster(image: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match extension(path) {
        Some("png") => save_png(image, path),
        Some("bsq") => save_bsq(image, path),
        _ => Err(Error::decode(
            path,
            "unsupported raster format (expected .png or .bsq)",
        )),
    }
}

fn extension(path: &Path) -> Option<&str> {
    path.extension().and_then(|e| e.to_str())
}

fn load_png(path: &Path) -> Result<RasterImage> {
    let dynimg = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::decode(path, format!("png decode failed: {e}")))?;
    let (w, h) = (dynimg.width(), dynimg.height());
    let (bands, data): (u8, Vec<u8>) = match dynimg {
        image::DynamicImage::ImageLuma8(b) => (1, b.into_raw()),
        image::DynamicImage::ImageLumaA8(b) => (2, b.into_raw()),
        image::DynamicImage::ImageRgb8(b) => (3, b.into_raw()),
        image::DynamicImage::ImageRgba8(b) => (4, b.into_raw()),
        other => {
            return Err(Error::decode(
                path,
                format!(
                    "unsupported png sample layout {:?} (only 8-bit, 1-4 channels)",
                    other.color()
                ),
            ))
        }
    };
    RasterImage::new_u8(w, h, bands, data)
}

fn save_png(image: &RasterImage, path: &Path) -> Result<()> {
    let data = match &image.samples {
        Samples::U8(v) => v.clone(),
        Samples::U16(_) => {
            return Err(Error::InvalidParams(
                "png output is 8-bit only; save 16-bit rasters as .bsq".into(),
            ))
        }
    };
    let (w, h) = (image.width, image.height);
    let err = |e: image::ImageError| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::decode(path, format!("png encode failed: {other}")),
    };
    match image.bands {
        1 => image::GrayImage::from_raw(w, h, data)
            .expect("sample count checked at construction")
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(err),
        2 => image::GrayAlphaImage::from_raw(w, h, data)
            .expect("sample count checked at construction")
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(err),
        3 => image::RgbImage::from_raw(w, h, data)
            .expect("sample count checked at construction")
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(err),
        4 => image::RgbaImage::from_raw(w, h, data)
            .expect("sample count checked at construction")
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(err),
        _ => unreachable!("band count checked at construction"),
    }
}

fn load_bsq(path: &Path) -> Result<RasterImage> {
    let sidecar = sidecar_path(path);
    let header_json = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let header: BsqHeader = serde_json::from_str(&header_json)
        .map_err(|e| Error::decode(&sidecar, format!("bad sidecar: {e}")))?;

    if header.bit_depth != 8 && header.bit_depth != 16 {
        return Err(Error::decode(
            path,
            format!("unsupported bit depth {}", header.bit_depth),
        ));
    }
    if header.bands == 0 || header.bands as usize > MAX_BANDS {
        return Err(Error::decode(
            path,
            format!("unsupported band count {}", header.bands),
        ));
    }
    if !header.band_names.is_empty() && header.band_names.len() != header.bands as usize {
        return Err(Error::decode(
            &sidecar,
            format!(
                "band_names lists {} names for {} bands",
                header.band_names.len(),
                header.bands
            ),
        ));
    }

    let payload = fs::read(path).map_err(|e| Error::io(path, e))?;
    let n = header.width as usize * header.height as usize * header.bands as usize;
    let bytes_per_sample = (header.bit_depth / 8) as usize;
    if payload.len() != n * bytes_per_sample {
        return Err(Error::decode(
            path,
            format!(
                "payload length mismatch: header implies {} bytes, file has {}",
                n * bytes_per_sample,
                payload.len()
            ),
        ));
    }

    // Planar (band-sequential) -> band-interleaved-by-pixel.
    let n_px = header.width as usize * header.height as usize;
    let bands = header.bands as usize;
    let samples = if header.bit_depth == 8 {
        let mut out = vec![0u8; n];
        for b in 0..bands {
            let plane = &payload[b * n_px..(b + 1) * n_px];
            for (px, &v) in plane.iter().enumerate() {
                out[px * bands + b] = v;
            }
        }
        Samples::U8(out)
    } else {
        let mut out = vec![0u16; n];
        for b in 0..bands {
            for px in 0..n_px {
                let off = (b * n_px + px) * 2;
                out[px * bands + b] = u16::from_le_bytes([payload[off], payload[off + 1]]);
            }
        }
        Samples::U16(out)
    };
    RasterImage::new(header.width, header.height, header.bands, samples)
}

fn save_bsq(image: &RasterImage, path: &Path) -> Result<()> {
    let n_px = image.width as usize * image.height as usize;
    let bands = image.bands as usize;

    let payload = match &image.samples {
        Samples::U8(src) => {
            let mut out = vec![0u8; n_px * bands];
            for b in 0..bands {
                for px in 0..n_px {
                    out[b * n_px + px] = src[px * bands + b];
                }
            }
            out
        }
        Samples::U16(src) => {
            let mut out = vec![0u8; n_px * bands * 2];
            for b in 0..bands {
                for px in 0..n_px {
                    let [lo, hi] = src[px * bands + b].to_le_bytes();
                    let off = (b * n_px + px) * 2;
                    out[off] = lo;
                    out[off + 1] = hi;
                }
            }
            out
        }
    };

    let header = BsqHeader {
        width: image.width,
        height: image.height,
        bands: image.bands,
        bit_depth: image.bit_depth(),
        band_names: default_band_names(image.bands),
    };
    let sidecar = sidecar_path(path);
    fs::write(path, payload).map_err(|e| Error::io(path, e))?;
    fs::write(
        &sidecar,
        serde_json::to_string_pretty(&header).expect("header serializes"),
    )
    .map_err(|e| Error::io(&sidecar, e))?;
    Ok(())
}
