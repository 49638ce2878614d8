//! Multiband image container and its portable on-disk format.
//!
//! An image is stored as a header/data file pair: `<stem>.json` holds the
//! [`ImageHeader`] and `<stem>.bsq` holds raw little-endian `f32` samples in
//! band-sequential order (all of band 0 row-major, then band 1, and so on).
//! Samples are widened to `f64` in memory; writing narrows back to `f32`, so
//! a write/read round trip is bit-exact for any image that came off disk.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed dtype tag accepted by the header.
pub const DTYPE_TAG: &str = "f32";
/// Fixed layout tag accepted by the header.
pub const LAYOUT_TAG: &str = "bsq";
/// Fixed byte-order tag accepted by the header.
pub const BYTE_ORDER_TAG: &str = "little";

/// A width x height x bands grid of finite samples, band-sequential,
/// row-major within each band. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiBandImage {
    width: usize,
    height: usize,
    bands: usize,
    samples: Vec<f64>,
}

impl MultiBandImage {
    /// Builds an image from a band-sequential sample vector, validating the
    /// shape and that every sample is finite.
    pub fn new(width: usize, height: usize, bands: usize, samples: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || bands == 0 {
            return Err(Error::InvalidInput(format!(
                "image dimensions must be positive, got {width}x{height}x{bands}"
            )));
        }
        let expect = width * height * bands;
        if samples.len() != expect {
            return Err(Error::ShapeMismatch(format!(
                "expected {expect} samples for {width}x{height}x{bands}, got {}",
                samples.len()
            )));
        }
        if let Some(pos) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite sample at linear index {pos}"
            )));
        }
        Ok(Self { width, height, bands, samples })
    }

    /// All-zero image of the given shape.
    pub fn zeros(width: usize, height: usize, bands: usize) -> Self {
        Self { width, height, bands, samples: vec![0.0; width * height * bands] }
    }

    /// Constant-valued image of the given shape.
    pub fn constant(width: usize, height: usize, bands: usize, value: f64) -> Self {
        Self { width, height, bands, samples: vec![value; width * height * bands] }
    }

    /// Builds an image by evaluating `f(band, row, col)` at every sample.
    pub fn from_fn<F: FnMut(usize, usize, usize) -> f64>(
        width: usize,
        height: usize,
        bands: usize,
        mut f: F,
    ) -> Self {
        let mut samples = Vec::with_capacity(width * height * bands);
        for b in 0..bands {
            for r in 0..height {
                for c in 0..width {
                    samples.push(f(b, r, c));
                }
            }
        }
        Self { width, height, bands, samples }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Pixels per band.
    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub(crate) fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    /// Row-major samples of one band.
    pub fn band(&self, b: usize) -> &[f64] {
        let n = self.plane_len();
        &self.samples[b * n..(b + 1) * n]
    }

    pub(crate) fn band_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.samples[b * n..(b + 1) * n]
    }

    #[inline]
    pub fn get(&self, b: usize, row: usize, col: usize) -> f64 {
        self.samples[b * self.plane_len() + row * self.width + col]
    }

    /// True when the two images have identical width, height and band count.
    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.bands == other.bands
    }

    /// New image holding only the selected band.
    pub fn single_band(&self, b: usize) -> Self {
        Self {
            width: self.width,
            height: self.height,
            bands: 1,
            samples: self.band(b).to_vec(),
        }
    }

    /// Stacks single-band planes (all with equal dimensions) into one image.
    pub fn from_planes(planes: &[Self]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidInput("cannot stack zero planes".into()))?;
        let mut samples = Vec::with_capacity(first.plane_len() * planes.len());
        for p in planes {
            if p.width != first.width || p.height != first.height || p.bands != 1 {
                return Err(Error::ShapeMismatch(
                    "from_planes expects equal-sized single-band images".into(),
                ));
            }
            samples.extend_from_slice(&p.samples);
        }
        Ok(Self {
            width: first.width,
            height: first.height,
            bands: planes.len(),
            samples,
        })
    }

    /// Elementwise clamp into `[lo, hi]`.
    pub fn clamped(&self, lo: f64, hi: f64) -> Self {
        let mut out = self.clone();
        for s in out.samples.iter_mut() {
            *s = s.clamp(lo, hi);
        }
        out
    }
}

/// Human-readable companion of the raw `.bsq` sample file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ImageHeader {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub dtype: String,
    pub layout: String,
    pub byte_order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_names: Option<Vec<String>>,
}

impl ImageHeader {
    pub fn for_image(image: &MultiBandImage) -> Self {
        Self {
            width: image.width,
            height: image.height,
            bands: image.bands,
            dtype: DTYPE_TAG.to_string(),
            layout: LAYOUT_TAG.to_string(),
            byte_order: BYTE_ORDER_TAG.to_string(),
            band_names: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dtype != DTYPE_TAG {
            return Err(Error::Header(format!("unsupported dtype {:?}", self.dtype)));
        }
        if self.layout != LAYOUT_TAG {
            return Err(Error::Header(format!("unsupported layout {:?}", self.layout)));
        }
        if self.byte_order != BYTE_ORDER_TAG {
            return Err(Error::Header(format!(
                "unsupported byte order {:?}",
                self.byte_order
            )));
        }
        if self.width == 0 || self.height == 0 || self.bands == 0 {
            return Err(Error::Header(format!(
                "dimensions must be positive, got {}x{}x{}",
                self.width, self.height, self.bands
            )));
        }
        if let Some(names) = &self.band_names {
            if names.len() != self.bands {
                return Err(Error::Header(format!(
                    "{} band names for {} bands",
                    names.len(),
                    self.bands
                )));
            }
        }
        Ok(())
    }
}

/// Reads a header/data file pair into an image.
pub fn read_image(header_path: &Path, data_path: &Path) -> Result<MultiBandImage> {
    let header_text = fs::read_to_string(header_path)?;
    let header: ImageHeader =
        serde_json::from_str(&header_text).map_err(|e| Error::Header(e.to_string()))?;
    header.validate()?;

    let bytes = fs::read(data_path)?;
    let expect = 4 * header.width * header.height * header.bands;
    if bytes.len() != expect {
        return Err(Error::Header(format!(
            "data file holds {} bytes, header implies {expect}",
            bytes.len()
        )));
    }

    let mut samples = Vec::with_capacity(expect / 4);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite sample at linear index {i} in {}",
                data_path.display()
            )));
        }
        samples.push(f64::from(v));
    }
    MultiBandImage::new(header.width, header.height, header.bands, samples)
}

/// Writes an image as a header/data file pair readable by [`read_image`].
/// Samples are narrowed to `f32`; values outside the `f32` range are rejected.
pub fn write_image(image: &MultiBandImage, header_path: &Path, data_path: &Path) -> Result<()> {
    let header = ImageHeader::for_image(image);
    let mut bytes = Vec::with_capacity(4 * image.samples.len());
    for (i, &s) in image.samples.iter().enumerate() {
        let v = s as f32;
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!(
                "sample at linear index {i} does not fit in f32"
            )));
        }
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(header_path, serde_json::to_string_pretty(&header)?)?;
    fs::write(data_path, bytes)?;
    Ok(())
}

/// Header and data paths for a raster addressed by stem. A trailing `.json`
/// or `.bsq` extension on `path` is ignored, so any of `scene`,
/// `scene.json`, and `scene.bsq` name the same pair.
pub fn image_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bsq") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut header = stem.clone().into_os_string();
    header.push(".json");
    let mut data = stem.into_os_string();
    data.push(".bsq");
    (PathBuf::from(header), PathBuf::from(data))
}

/// Reads the header/data pair named by a stem; see [`image_paths`].
pub fn read_image_stem(path: &Path) -> Result<MultiBandImage> {
    let (header, data) = image_paths(path);
    read_image(&header, &data)
}

/// Writes the header/data pair named by a stem; see [`image_paths`].
pub fn write_image_stem(image: &MultiBandImage, path: &Path) -> Result<()> {
    let (header, data) = image_paths(path);
    write_image(image, &header, &data)
}

/// Affine min-max rescale into `[0, 1]`, globally or per band. A constant
/// image (or band, when `per_band`) maps to all zeros.
pub fn normalize(image: &MultiBandImage, per_band: bool) -> MultiBandImage {
    let mut out = image.clone();
    if per_band {
        for b in 0..image.bands() {
            rescale_unit(out.band_mut(b));
        }
    } else {
        rescale_unit(out.samples_mut());
    }
    out
}

fn rescale_unit(samples: &mut [f64]) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &s in samples.iter() {
        lo = lo.min(s);
        hi = hi.max(s);
    }
    let range = hi - lo;
    if range == 0.0 {
        samples.fill(0.0);
    } else {
        for s in samples.iter_mut() {
            *s = (*s - lo) / range;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Pseudorandom image whose samples are exactly f32-representable.
    pub(crate) fn seeded_image(width: usize, height: usize, bands: usize, seed: u64) -> MultiBandImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..width * height * bands)
            .map(|_| f64::from(rng.gen::<f32>()))
            .collect();
        MultiBandImage::new(width, height, bands, samples).unwrap()
    }

    #[test]
    fn decode_2x2_single_band() {
        let dir = tempfile::tempdir().unwrap();
        let header = dir.path().join("a.json");
        let data = dir.path().join("a.bsq");
        let img = MultiBandImage::new(2, 2, 1, vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        write_image(&img, &header, &data).unwrap();
        let back = read_image(&header, &data).unwrap();
        assert_eq!(back.samples(), &[0.0, 0.25, 0.5, 1.0]);
    }

    #[test]
    fn length_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let header = dir.path().join("b.json");
        let data = dir.path().join("b.bsq");
        let img = seeded_image(4, 4, 4, 2);
        write_image(&img, &header, &data).unwrap();
        // Drop the last 4 bytes.
        let bytes = fs::read(&data).unwrap();
        fs::write(&data, &bytes[..bytes.len() - 4]).unwrap();
        let err = read_image(&header, &data).unwrap_err();
        assert!(matches!(err, Error::Header(_)), "got {err:?}");
    }

    #[test]
    fn round_trip_seed7_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let header = dir.path().join("c.json");
        let data = dir.path().join("c.bsq");
        let img = seeded_image(16, 16, 8, 7);
        write_image(&img, &header, &data).unwrap();
        let back = read_image(&header, &data).unwrap();
        assert_eq!(img, back);
        // Byte-compare oracle: a second write of the read image is identical.
        let header2 = dir.path().join("c2.json");
        let data2 = dir.path().join("c2.bsq");
        write_image(&back, &header2, &data2).unwrap();
        assert_eq!(fs::read(&data).unwrap(), fs::read(&data2).unwrap());
        assert_eq!(
            fs::read_to_string(&header).unwrap(),
            fs::read_to_string(&header2).unwrap()
        );
    }

    #[test]
    fn round_trip_250x250x4() {
        let dir = tempfile::tempdir().unwrap();
        let header = dir.path().join("d.json");
        let data = dir.path().join("d.bsq");
        let img = seeded_image(250, 250, 4, 1);
        write_image(&img, &header, &data).unwrap();
        assert_eq!(read_image(&header, &data).unwrap(), img);
    }

    #[test]
    fn single_sample_encoding() {
        let dir = tempfile::tempdir().unwrap();
        let header = dir.path().join("e.json");
        let data = dir.path().join("e.bsq");
        let img = MultiBandImage::new(1, 1, 1, vec![0.5]).unwrap();
        write_image(&img, &header, &data).unwrap();
        assert_eq!(fs::read(&data).unwrap(), vec![0x00, 0x00, 0x00, 0x3f]);
    }

    #[test]
    fn bsq_layout_band_plane_first() {
        let dir = tempfile::tempdir().unwrap();
        let header = dir.path().join("f.json");
        let data = dir.path().join("f.bsq");
        let img = MultiBandImage::from_fn(2, 2, 2, |b, r, c| (b * 4 + r * 2 + c) as f64);
        write_image(&img, &header, &data).unwrap();
        let bytes = fs::read(&data).unwrap();
        assert_eq!(bytes.len(), 32);
        // First plane = band 0 values 0..4, second plane = band 1 values 4..8.
        for (i, chunk) in bytes.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            assert_eq!(v, i as f32);
        }
    }

    #[test]
    fn non_finite_rejected() {
        assert!(MultiBandImage::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(MultiBandImage::new(1, 2, 1, vec![0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn normalize_rescales() {
        let img = MultiBandImage::new(3, 1, 1, vec![0.0, 511.0, 1023.0]).unwrap();
        let out = normalize(&img, false);
        assert_eq!(out.samples()[0], 0.0);
        assert!((out.samples()[1] - 511.0 / 1023.0).abs() < 1e-15);
        assert_eq!(out.samples()[2], 1.0);
    }

    #[test]
    fn normalize_constant_maps_to_zero() {
        let img = MultiBandImage::constant(4, 4, 2, 0.7);
        assert!(normalize(&img, false).samples().iter().all(|&s| s == 0.0));
        assert!(normalize(&img, true).samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn normalize_identity_when_already_unit_range() {
        let img = MultiBandImage::new(2, 2, 1, vec![0.0, 0.25, 0.75, 1.0]).unwrap();
        assert_eq!(normalize(&img, false), img);
        assert_eq!(normalize(&img, true), img);
    }

    #[test]
    fn normalize_per_band_independent() {
        let img = MultiBandImage::from_fn(2, 1, 2, |b, _, c| if b == 0 { c as f64 } else { 2.0 + 2.0 * c as f64 });
        let out = normalize(&img, true);
        assert_eq!(out.band(0), &[0.0, 1.0]);
        assert_eq!(out.band(1), &[0.0, 1.0]);
        let global = normalize(&img, false);
        assert_eq!(global.band(0), &[0.0, 0.25]);
        assert_eq!(global.band(1), &[0.5, 1.0]);
    }

    #[test]
    fn header_rejects_wrong_tags() {
        let dir = tempfile::tempdir().unwrap();
        let header = dir.path().join("g.json");
        let data = dir.path().join("g.bsq");
        let img = MultiBandImage::new(1, 1, 1, vec![0.5]).unwrap();
        write_image(&img, &header, &data).unwrap();
        let mut h: ImageHeader =
            serde_json::from_str(&fs::read_to_string(&header).unwrap()).unwrap();
        h.dtype = "f64".into();
        fs::write(&header, serde_json::to_string(&h).unwrap()).unwrap();
        assert!(matches!(read_image(&header, &data), Err(Error::Header(_))));
    }
}
