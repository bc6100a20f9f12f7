use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major float image, 1 (scalar map) or 3 (color) channels.
///
/// Color data lives in [0, 1]; scalar maps (alpha, depth, blend weights) are
/// unrestricted. Pixel (0, 0) is the top-left corner; `u` runs along columns
/// and `v` down rows, with texel centers at (i + 0.5) / size.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    channels: u32,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, channels: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::shape(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::shape(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            data: vec![0.0; width as usize * height as usize * channels as usize],
        })
    }

    pub fn from_data(width: u32, height: u32, channels: u32, data: Vec<f64>) -> Result<Self> {
        let mut img = ImageBuffer::new(width, height, channels)?;
        if data.len() != img.data.len() {
            return Err(Error::shape(format!(
                "expected {} samples for {width}x{height}x{channels}, got {}",
                img.data.len(),
                data.len()
            )));
        }
        img.data = data;
        Ok(img)
    }

    /// Constant-color image.
    pub fn filled(width: u32, height: u32, rgb: [f64; 3]) -> Result<Self> {
        let mut img = ImageBuffer::new(width, height, 3)?;
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        Ok(img)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u32 {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn index(&self, col: u32, row: u32) -> usize {
        (row as usize * self.width as usize + col as usize) * self.channels as usize
    }

    pub fn check_bounds(&self, col: u32, row: u32) -> Result<()> {
        if col >= self.width || row >= self.height {
            return Err(Error::PixelOutOfRange {
                col,
                row,
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    /// Channel slice for one pixel.
    pub fn pixel(&self, col: u32, row: u32) -> Result<&[f64]> {
        self.check_bounds(col, row)?;
        let i = self.index(col, row);
        Ok(&self.data[i..i + self.channels as usize])
    }

    pub fn pixel_mut(&mut self, col: u32, row: u32) -> Result<&mut [f64]> {
        self.check_bounds(col, row)?;
        let i = self.index(col, row);
        let c = self.channels as usize;
        Ok(&mut self.data[i..i + c])
    }

    pub fn scalar(&self, col: u32, row: u32) -> Result<f64> {
        Ok(self.pixel(col, row)?[0])
    }

    /// Bilinear sample at texture coordinates; `uv` outside [0, 1]^2 clamps
    /// to the border. Output slice length must equal the channel count.
    pub fn bilinear(&self, u: f64, v: f64, out: &mut [f64]) {
        assert_eq!(out.len(), self.channels as usize);
        bilinear_grid(
            &self.data,
            self.width as usize,
            self.height as usize,
            self.channels as usize,
            u,
            v,
            out,
        );
    }

    pub fn bilinear_rgb(&self, u: f64, v: f64) -> [f64; 3] {
        let mut out = [0.0; 3];
        self.bilinear(u, v, &mut out);
        out
    }

    pub fn bilinear_scalar(&self, u: f64, v: f64) -> f64 {
        let mut out = [0.0];
        self.bilinear(u, v, &mut out);
        out[0]
    }

    /// Writes an 8-bit PNG; color images as RGB, scalar maps as grayscale.
    /// Values are clamped to [0, 1] and rounded half-up.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let quantize = |v: f64| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8;
        let ctx = || format!("writing {}", path.display());
        match self.channels {
            3 => {
                let mut img = image::RgbImage::new(self.width, self.height);
                for (row, chunk) in self.data.chunks_exact(self.width as usize * 3).enumerate() {
                    for (col, px) in chunk.chunks_exact(3).enumerate() {
                        img.put_pixel(
                            col as u32,
                            row as u32,
                            image::Rgb([quantize(px[0]), quantize(px[1]), quantize(px[2])]),
                        );
                    }
                }
                img.save(path).map_err(|e| match e {
                    image::ImageError::IoError(io) => Error::io(ctx(), io),
                    other => Error::Codec(other.to_string()),
                })
            }
            _ => {
                let mut img = image::GrayImage::new(self.width, self.height);
                for (row, chunk) in self.data.chunks_exact(self.width as usize).enumerate() {
                    for (col, px) in chunk.iter().enumerate() {
                        img.put_pixel(col as u32, row as u32, image::Luma([quantize(*px)]));
                    }
                }
                img.save(path).map_err(|e| match e {
                    image::ImageError::IoError(io) => Error::io(ctx(), io),
                    other => Error::Codec(other.to_string()),
                })
            }
        }
    }

    /// Loads an 8-bit PNG as a color image with values in [0, 1].
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(format!("reading {}", path.display()), io),
                other => Error::Codec(other.to_string()),
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img
            .pixels()
            .flat_map(|p| p.0.iter().map(|&v| v as f64 / 255.0))
            .collect();
        ImageBuffer::from_data(w, h, 3, data)
    }

    /// Raw float image format: `W u32, H u32, C u32` then `W*H*C` f32 samples,
    /// all little-endian, row-major, channel-interleaved.
    pub fn save_f32(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(12 + self.data.len() * 4);
        bytes.extend_from_slice(&self.width.to_le_bytes());
        bytes.extend_from_slice(&self.height.to_le_bytes());
        bytes.extend_from_slice(&self.channels.to_le_bytes());
        for &v in &self.data {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load_f32(path: &Path) -> Result<Self> {
        let bytes =
            fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let fmt_err = |offset: u64, message: String| Error::Format {
            path: path.to_path_buf(),
            offset,
            message,
        };
        if bytes.len() < 12 {
            return Err(fmt_err(
                bytes.len() as u64,
                format!("truncated header: {} of 12 bytes", bytes.len()),
            ));
        }
        let read_u32 =
            |at: usize| u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
        let (w, h, c) = (read_u32(0), read_u32(4), read_u32(8));
        if c != 1 && c != 3 {
            return Err(fmt_err(8, format!("channel count must be 1 or 3, got {c}")));
        }
        let expected = w as usize * h as usize * c as usize;
        let payload = &bytes[12..];
        if payload.len() != expected * 4 {
            return Err(fmt_err(
                12,
                format!(
                    "payload holds {} samples, header promises {expected}",
                    payload.len() / 4
                ),
            ));
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        ImageBuffer::from_data(w, h, c, data)
    }
}

/// Bilinear interpolation over a row-major, channel-interleaved grid with
/// texel centers at (i + 0.5) / size and border clamping. Shared by image
/// sampling and tri-plane feature lookup.
pub fn bilinear_grid<T: Copy + Into<f64>>(
    data: &[T],
    width: usize,
    height: usize,
    channels: usize,
    u: f64,
    v: f64,
    out: &mut [f64],
) {
    let x = u.clamp(0.0, 1.0) * width as f64 - 0.5;
    let y = v.clamp(0.0, 1.0) * height as f64 - 0.5;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let clamp_i = |i: f64, n: usize| (i.max(0.0) as usize).min(n - 1);
    let (c0, c1) = (clamp_i(x0, width), clamp_i(x0 + 1.0, width));
    let (r0, r1) = (clamp_i(y0, height), clamp_i(y0 + 1.0, height));
    let at = |row: usize, col: usize| (row * width + col) * channels;
    let (i00, i10, i01, i11) = (at(r0, c0), at(r0, c1), at(r1, c0), at(r1, c1));
    let (w00, w10, w01, w11) = (
        (1.0 - fx) * (1.0 - fy),
        fx * (1.0 - fy),
        (1.0 - fx) * fy,
        fx * fy,
    );
    for ch in 0..channels {
        out[ch] = w00 * data[i00 + ch].into()
            + w10 * data[i10 + ch].into()
            + w01 * data[i01 + ch].into()
            + w11 * data[i11 + ch].into();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(ImageBuffer::new(0, 4, 3).is_err());
        assert!(ImageBuffer::new(4, 4, 2).is_err());
        assert!(ImageBuffer::from_data(2, 2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn pixel_out_of_range_is_reported() {
        let img = ImageBuffer::new(4, 3, 1).unwrap();
        let err = img.pixel(4, 0).unwrap_err();
        assert!(matches!(
            err,
            Error::PixelOutOfRange {
                col: 4,
                width: 4,
                ..
            }
        ));
    }

    #[test]
    fn bilinear_midpoint_of_two_texels() {
        // 2x1 image holding [0, 1]: u = 0.5 lands exactly between centers.
        let img = ImageBuffer::from_data(2, 1, 1, vec![0.0, 1.0]).unwrap();
        assert_relative_eq!(img.bilinear_scalar(0.5, 0.5), 0.5);
        // Texel centers reproduce stored values.
        assert_relative_eq!(img.bilinear_scalar(0.25, 0.5), 0.0);
        assert_relative_eq!(img.bilinear_scalar(0.75, 0.5), 1.0);
    }

    #[test]
    fn bilinear_clamps_to_border() {
        let img = ImageBuffer::from_data(2, 1, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(
            img.bilinear_scalar(-0.2, 0.5),
            img.bilinear_scalar(0.0, 0.5)
        );
        assert_eq!(img.bilinear_scalar(1.4, 0.5), img.bilinear_scalar(1.0, 0.5));
        assert_eq!(
            img.bilinear_scalar(0.3, -2.0),
            img.bilinear_scalar(0.3, 0.0)
        );
    }

    #[test]
    fn f32_round_trip_preserves_f32_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.f32img");
        let data: Vec<f64> = (0..24).map(|i| (i as f32 * 0.125) as f64).collect();
        let img = ImageBuffer::from_data(4, 2, 3, data).unwrap();
        img.save_f32(&path).unwrap();
        let back = ImageBuffer::load_f32(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn f32_truncation_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.f32img");
        std::fs::write(&path, [1, 0, 0, 0, 1, 0, 0, 0]).unwrap();
        match ImageBuffer::load_f32(&path).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 8),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn png_round_trip_is_exact_on_8bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let data: Vec<f64> = (0..27).map(|i| (i * 9 % 256) as f64 / 255.0).collect();
        let img = ImageBuffer::from_data(3, 3, 3, data).unwrap();
        img.save_png(&path).unwrap();
        let back = ImageBuffer::load_png(&path).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn png_quantization_rounds_half_up() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("round.png");
        // 128.5/255 should round to 129, not truncate to 128.
        let img = ImageBuffer::from_data(1, 1, 3, vec![128.5 / 255.0; 3]).unwrap();
        img.save_png(&path).unwrap();
        let back = image::open(&path).unwrap().to_rgb8();
        assert_eq!(back.get_pixel(0, 0).0, [129, 129, 129]);
    }

    proptest! {
        // Bilinear sampling is linear in the stored samples and therefore
        // bounded by their extremes; border clamping keeps that true for
        // out-of-range coordinates.
        #[test]
        fn bilinear_stays_within_sample_hull(
            vals in proptest::collection::vec(-10.0f64..10.0, 12),
            u in -0.5f64..1.5,
            v in -0.5f64..1.5,
        ) {
            let img = ImageBuffer::from_data(4, 3, 1, vals.clone()).unwrap();
            let s = img.bilinear_scalar(u, v);
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(s >= lo - 1e-12 && s <= hi + 1e-12);
        }

        #[test]
        fn bilinear_is_linear_in_samples(
            a in proptest::collection::vec(-1.0f64..1.0, 6),
            b in proptest::collection::vec(-1.0f64..1.0, 6),
            u in 0.0f64..1.0,
            v in 0.0f64..1.0,
            alpha in -2.0f64..2.0,
        ) {
            let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + alpha * y).collect();
            let ia = ImageBuffer::from_data(3, 2, 1, a).unwrap();
            let ib = ImageBuffer::from_data(3, 2, 1, b).unwrap();
            let im = ImageBuffer::from_data(3, 2, 1, mix).unwrap();
            let lhs = im.bilinear_scalar(u, v);
            let rhs = ia.bilinear_scalar(u, v) + alpha * ib.bilinear_scalar(u, v);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
