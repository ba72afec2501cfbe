//! Orientation maps for both views and the azimuth helpers built on them.
//!
//! Shared convention: azimuth 0 is north, positive clockwise seen from above
//! (east = +π/2). For the panorama the centre column looks north; for the
//! overhead tile north is up.
//!
//! Maps store raw normalized values: `u = θ/π` in `[-1, 1)` and `v` either
//! the altitude `φ/(π/2)` (ground) or the range `r/r_max` (satellite).

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum View {
    Ground,
    Satellite,
}

impl View {
    pub fn name(self) -> &'static str {
        match self {
            View::Ground => "ground",
            View::Satellite => "satellite",
        }
    }
}

impl std::str::FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ground" => Ok(View::Ground),
            "satellite" => Ok(View::Satellite),
            other => Err(Error::invalid(format!("unknown view `{other}`"))),
        }
    }
}

/// Two-channel per-pixel orientation raster, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientationMap {
    pub view: View,
    pub height: usize,
    pub width: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl OrientationMap {
    #[inline]
    pub fn u_at(&self, y: usize, x: usize) -> f64 {
        self.u[y * self.width + x]
    }

    #[inline]
    pub fn v_at(&self, y: usize, x: usize) -> f64 {
        self.v[y * self.width + x]
    }

    /// Channel-planar copy `[u-plane, v-plane]`, the layout the encoder consumes.
    pub fn planar(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.u.len());
        out.extend_from_slice(&self.u);
        out.extend_from_slice(&self.v);
        out
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!(
            "orientation map dims must be positive, got {width}x{height}"
        )));
    }
    Ok(())
}

/// Azimuth/altitude map of an equirectangular panorama.
pub fn ground_orientation_map(width: usize, height: usize) -> Result<OrientationMap> {
    check_dims(width, height)?;
    let mut u = Vec::with_capacity(width * height);
    let mut v = Vec::with_capacity(width * height);
    for y in 0..height {
        let phi = PI / 2.0 - PI * (y as f64 + 0.5) / height as f64;
        let vy = phi / (PI / 2.0);
        for x in 0..width {
            let theta = 2.0 * PI * (x as f64 + 0.5) / width as f64 - PI;
            u.push(theta / PI);
            v.push(vy);
        }
    }
    Ok(OrientationMap {
        view: View::Ground,
        height,
        width,
        u,
        v,
    })
}

/// Polar azimuth/range map of a north-up overhead tile.
///
/// `θ = atan2(dx, dy)` with `dy` pointing north, so east is `+π/2`. At the
/// exact centre θ is taken as 0. Range is normalized by the centre-to-corner
/// distance.
pub fn satellite_orientation_map(width: usize, height: usize) -> Result<OrientationMap> {
    check_dims(width, height)?;
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let r_max = (cx * cx + cy * cy).sqrt();
    let mut u = Vec::with_capacity(width * height);
    let mut v = Vec::with_capacity(width * height);
    for y in 0..height {
        let dy = cy - y as f64;
        for x in 0..width {
            let dx = x as f64 - cx;
            let r = (dx * dx + dy * dy).sqrt();
            let theta = if r == 0.0 { 0.0 } else { dx.atan2(dy) };
            // atan2 returns (-π, π]; fold π onto -π to stay in [-1, 1).
            let mut un = theta / PI;
            if un >= 1.0 {
                un -= 2.0;
            }
            u.push(un);
            v.push(if r_max > 0.0 { r / r_max } else { 0.0 });
        }
    }
    Ok(OrientationMap {
        view: View::Satellite,
        height,
        width,
        u,
        v,
    })
}

/// Output extent of one ceil-halving applied `log2(factor)` times.
#[inline]
pub fn ceil_div(n: usize, factor: usize) -> usize {
    n.div_ceil(factor)
}

/// Nearest-neighbour subsampling keeping the top-left sample of every
/// `factor x factor` cell. Averaging is avoided because azimuth wraps at ±π.
pub fn downsample_uv(map: &OrientationMap, factor: usize) -> Result<OrientationMap> {
    if factor == 0 {
        return Err(Error::invalid("downsample factor must be positive"));
    }
    if !factor.is_power_of_two() {
        return Err(Error::invalid(format!(
            "downsample factor must be a power of two, got {factor}"
        )));
    }
    let height = ceil_div(map.height, factor);
    let width = ceil_div(map.width, factor);
    let mut u = Vec::with_capacity(width * height);
    let mut v = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let idx = (y * factor) * map.width + x * factor;
            u.push(map.u[idx]);
            v.push(map.v[idx]);
        }
    }
    Ok(OrientationMap {
        view: map.view,
        height,
        width,
        u,
        v,
    })
}

/// Circularly shifts an interleaved `H x W x C` raster along its columns:
/// output column `x` takes input column `(x - shift) mod W`.
pub fn circular_shift_panorama<T: Copy>(
    data: &[T],
    height: usize,
    width: usize,
    channels: usize,
    shift: i64,
) -> Vec<T> {
    assert_eq!(data.len(), height * width * channels, "raster size mismatch");
    if width == 0 {
        return data.to_vec();
    }
    let s = shift.rem_euclid(width as i64) as usize;
    let row_len = width * channels;
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks_exact(row_len) {
        // out[x] = in[(x - s) mod W]: the last `s` columns move to the front.
        let split = (width - s) * channels;
        out.extend_from_slice(&row[split..]);
        out.extend_from_slice(&row[..split]);
    }
    out
}

/// Converts a heading error in degrees to a whole-column panorama shift.
pub fn degrees_to_columns(angle_deg: f64, width: usize) -> i64 {
    (angle_deg / 360.0 * width as f64).round() as i64
}

#[inline]
fn to_byte(x: f64) -> u8 {
    (((x.clamp(-1.0, 1.0) + 1.0) / 2.0) * 255.0).round() as u8
}

/// Inverse of the export byte mapping.
#[inline]
pub fn byte_to_unit(b: u8) -> f64 {
    2.0 * b as f64 / 255.0 - 1.0
}

/// Writes the map as an 8-bit PNG. With `color` the channels are
/// `(R, G, B) = (u, v, 0)`, otherwise a two-channel gray+alpha image holding
/// `(u, v)`. Values map linearly from `[-1, 1]` to `[0, 255]`.
pub fn export_uv_png(map: &OrientationMap, path: &Path, color: bool) -> Result<()> {
    let (w, h) = (map.width as u32, map.height as u32);
    let res = if color {
        let mut buf = Vec::with_capacity(map.u.len() * 3);
        for (&u, &v) in map.u.iter().zip(&map.v) {
            buf.extend_from_slice(&[to_byte(u), to_byte(v), 0]);
        }
        image::RgbImage::from_raw(w, h, buf)
            .expect("buffer sized from map")
            .save(path)
    } else {
        let mut buf = Vec::with_capacity(map.u.len() * 2);
        for (&u, &v) in map.u.iter().zip(&map.v) {
            buf.extend_from_slice(&[to_byte(u), to_byte(v)]);
        }
        image::GrayAlphaImage::from_raw(w, h, buf)
            .expect("buffer sized from map")
            .save(path)
    };
    res.map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads back a map written by [`export_uv_png`] (either layout).
pub fn import_uv_png(path: &Path, view: View) -> Result<OrientationMap> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let (u, v) = match img {
        image::DynamicImage::ImageLumaA8(buf) => buf
            .pixels()
            .map(|p| (byte_to_unit(p[0]), byte_to_unit(p[1])))
            .unzip(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| (byte_to_unit(p[0]), byte_to_unit(p[1])))
            .unzip(),
    };
    Ok(OrientationMap {
        view,
        height,
        width,
        u,
        v,
    })
}
