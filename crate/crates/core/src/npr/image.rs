use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};

/// Height × width × channels image with channel-last `f32` samples.
///
/// Values are finite and within `[0, 1]`; channels is 1 or 3.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Config(format!(
                "images must have 1 or 3 channels, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty image {height}x{width}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image from `f(y, x, c)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Rectangular window starting at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "crop {height}x{width}+{top}+{left} outside {}x{} image",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(height * width * c);
        for y in top..top + height {
            let row = (y * self.width + left) * c;
            data.extend_from_slice(&self.data[row..row + width * c]);
        }
        Ok(Self {
            height,
            width,
            channels: c,
            data,
        })
    }

    /// Central window; odd leftovers are dropped on the bottom/right side.
    pub fn center_crop(&self, height: usize, width: usize) -> Result<Self> {
        if height > self.height || width > self.width {
            return Err(Error::Shape(format!(
                "cannot center-crop {}x{} image to {height}x{width}",
                self.height, self.width
            )));
        }
        self.crop(
            (self.height - height) / 2,
            (self.width - width) / 2,
            height,
            width,
        )
    }

    /// Grayscale images are replicated into three identical channels.
    pub fn to_rgb(&self) -> Self {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Self {
            height: self.height,
            width: self.width,
            channels: 3,
            data,
        }
    }

    /// Single channel `c` as a grayscale image.
    pub fn channel(&self, c: usize) -> Result<Self> {
        if c >= self.channels {
            return Err(Error::Config(format!(
                "channel {c} out of range for {}-channel image",
                self.channels
            )));
        }
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Ok(Self {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        })
    }

    /// Nearest-neighbor enlargement by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> Self {
        let (h, w, c) = (self.height * factor, self.width * factor, self.channels);
        let mut data = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                let base = ((y / factor) * self.width + x / factor) * c;
                data.extend_from_slice(&self.data[base..base + c]);
            }
        }
        Self {
            height: h,
            width: w,
            channels: c,
            data,
        }
    }

    /// Transposes channel-last storage into planar `C × H × W` order.
    pub fn to_planar(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * self.channels];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + i] = v;
            }
        }
        out
    }

    pub fn from_dynamic(img: &DynamicImage) -> Result<Self> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let has_color = img.color().has_color();
        if has_color {
            let rgb = img.to_rgb32f();
            Self::new(h, w, 3, rgb.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
        } else {
            let luma = img.to_luma32f();
            Self::new(h, w, 1, luma.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(source) => {
                Error::io(format!("reading {}", path.display()), source)
            }
            other => Error::Decode {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })?;
        Self::from_dynamic(&img)
    }

    /// Quantizes to 8 bits (`round(v · 255)`) and encodes as PNG.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| quantize(v)).collect();
        let (w, h) = (self.width as u32, self.height as u32);
        let img = if self.channels == 3 {
            DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("buffer sized"))
        } else {
            DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("buffer sized"))
        };
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| Error::Format(format!("PNG encoding failed: {e}")))?;
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_png_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

#[inline]
pub(crate) fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_inputs() {
        assert!(ImageTensor::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(ImageTensor::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(ImageTensor::new(1, 1, 1, vec![1.5]).is_err());
        assert!(ImageTensor::new(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(ImageTensor::new(0, 1, 1, vec![]).is_err());
    }

    #[test]
    fn center_crop_geometry() {
        let img = ImageTensor::from_fn(6, 5, 1, |y, x, _| (y * 5 + x) as f32 / 30.0).unwrap();
        let c = img.center_crop(4, 3).unwrap();
        assert_eq!(c.get(0, 0, 0), img.get(1, 1, 0));
        assert_eq!(c.get(3, 2, 0), img.get(4, 3, 0));
    }

    #[test]
    fn png_round_trip_of_quantized_values() {
        let img = ImageTensor::from_fn(4, 3, 3, |y, x, c| ((y * 3 + x) * 3 + c) as f32 / 255.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        let back = ImageTensor::load(&p).unwrap();
        assert_eq!(back.channels(), 3);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn gray_promotes_to_rgb() {
        let img = ImageTensor::from_fn(2, 2, 1, |y, x, _| (y + x) as f32 / 2.0).unwrap();
        let rgb = img.to_rgb();
        assert_eq!(rgb.channels(), 3);
        assert_eq!(rgb.get(1, 1, 0), 1.0);
        assert_eq!(rgb.get(1, 1, 2), 1.0);
        assert_eq!(rgb.get(0, 1, 1), 0.5);
    }
}
