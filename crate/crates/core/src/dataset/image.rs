use std::path::Path;

use image::imageops::FilterType;

use crate::autonn::Tensor;
use crate::geometry::circular_shift_panorama;
use crate::{Error, Result};

/// Interleaved `H x W x 3` RGB raster with values in `[-1, 1]`
/// (`v = 2 * byte / 255 - 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageBuffer {
    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        ImageBuffer {
            height: img.height() as usize,
            width: img.width() as usize,
            data: img.as_raw().iter().map(|&b| byte_to_value(b)).collect(),
        }
    }

    /// Column shift with wrap-around, see [`circular_shift_panorama`].
    pub fn shifted(&self, shift: i64) -> Self {
        ImageBuffer {
            height: self.height,
            width: self.width,
            data: circular_shift_panorama(&self.data, self.height, self.width, 3, shift),
        }
    }

    /// Appends this image's channel-planar values to `out`.
    pub fn write_chw(&self, out: &mut Vec<f64>) {
        let hw = self.height * self.width;
        out.reserve(3 * hw);
        for c in 0..3 {
            out.extend(self.data[c..].iter().step_by(3).take(hw).map(|&v| v as f64));
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        let mut data = Vec::new();
        self.write_chw(&mut data);
        Tensor::new(vec![1, 3, self.height, self.width], data).expect("sized from image")
    }
}

#[inline]
pub fn byte_to_value(b: u8) -> f32 {
    (2.0 * b as f64 / 255.0 - 1.0) as f32
}

/// Stacks images of equal size into a `[n, 3, h, w]` tensor.
pub fn stack_images<'a>(images: impl IntoIterator<Item = &'a ImageBuffer>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut dims = None;
    let mut n = 0;
    for img in images {
        match dims {
            None => dims = Some((img.height, img.width)),
            Some(d) if d != (img.height, img.width) => {
                return Err(Error::invalid("cannot stack images of different sizes"))
            }
            _ => {}
        }
        img.write_chw(&mut data);
        n += 1;
    }
    let (h, w) = dims.ok_or_else(|| Error::invalid("cannot stack zero images"))?;
    Tensor::new(vec![n, 3, h, w], data)
}

/// Decodes a PNG/JPEG, bilinearly resizes to `target_h x target_w` when the
/// size differs, and maps bytes to `[-1, 1]`.
pub fn load_image(path: &Path, target_h: usize, target_w: usize) -> Result<ImageBuffer> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::invalid("image target size must be positive"));
    }
    let img = image::open(path)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })?
        .to_rgb8();
    let img = if (img.height() as usize, img.width() as usize) == (target_h, target_w) {
        img
    } else {
        image::imageops::resize(&img, target_w as u32, target_h as u32, FilterType::Triangle)
    };
    Ok(ImageBuffer::from_rgb8(&img))
}
