//! Procedural cross-view world.
//!
//! Each location is a handful of landmarks around the camera, given by
//! bearing (north = 0, clockwise), ground range, colour and physical size.
//! The overhead tile draws each landmark as a disk at its polar offset from
//! the tile centre (north up); the panorama draws it as an upright rectangle
//! centred on the column whose azimuth equals the bearing, spanning the
//! altitudes subtended by the landmark's base and top. Both renderings use
//! the azimuth convention of [`crate::geometry`], so a pair is consistent by
//! construction.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{write_manifest, PairRecord, Split};
use crate::{Error, Result};

pub const MIN_LANDMARK_RANGE_M: f64 = 5.0;
pub const CAMERA_HEIGHT_M: f64 = 1.5;
/// Spacing of the synthetic lat/lon grid.
pub const GRID_SPACING_M: f64 = 25.0;
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;
const ORIGIN: (f64, f64) = (40.0, -105.0);

pub const PALETTE: [[u8; 3]; 8] = [
    [220, 40, 40],
    [40, 70, 220],
    [240, 220, 40],
    [250, 250, 250],
    [200, 40, 200],
    [30, 200, 200],
    [20, 20, 20],
    [240, 130, 20],
];

const SKY: [u8; 3] = [128, 132, 140];
const GROUND: [u8; 3] = [124, 127, 120];
const OVERHEAD: [u8; 3] = [126, 128, 124];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorldConfig {
    pub n_locations: usize,
    /// Trailing locations assigned to the test split.
    pub n_test: usize,
    pub landmarks_per_location: usize,
    /// Number of palette colours landmarks draw from.
    pub palette_size: usize,
    pub pano_width: usize,
    pub pano_height: usize,
    pub overhead_width: usize,
    pub overhead_height: usize,
    pub meters_per_pixel: f64,
    pub max_landmark_range: f64,
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        SyntheticWorldConfig {
            n_locations: 600,
            n_test: 200,
            landmarks_per_location: 4,
            palette_size: 4,
            pano_width: 128,
            pano_height: 64,
            overhead_width: 112,
            overhead_height: 112,
            meters_per_pixel: 0.12,
            max_landmark_range: 6.0,
            noise_level: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::validation(m));
        if self.pano_width == 0
            || self.pano_height == 0
            || self.overhead_width == 0
            || self.overhead_height == 0
        {
            return bad("image dims must be positive".into());
        }
        if self.n_test > self.n_locations {
            return bad(format!(
                "n_test {} exceeds n_locations {}",
                self.n_test, self.n_locations
            ));
        }
        if self.palette_size == 0 || self.palette_size > PALETTE.len() {
            return bad(format!("palette_size must be in 1..={}", PALETTE.len()));
        }
        if !(self.meters_per_pixel > 0.0) {
            return bad("meters_per_pixel must be positive".into());
        }
        let half_extent =
            self.overhead_width.min(self.overhead_height) as f64 / 2.0 * self.meters_per_pixel;
        if !(self.max_landmark_range > MIN_LANDMARK_RANGE_M)
            || self.max_landmark_range > half_extent
        {
            return bad(format!(
                "max_landmark_range must be in ({MIN_LANDMARK_RANGE_M}, {half_extent}] m"
            ));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return bad("noise_level must be in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    /// Radians in `[0, 2π)`, north = 0, clockwise.
    pub bearing: f64,
    /// Metres from the camera.
    pub range: f64,
    pub color: [u8; 3],
    /// Footprint diameter / facade width in metres.
    pub size: f64,
    /// Metres above ground.
    pub height: f64,
}

impl Landmark {
    /// Overhead disk centre in pixel coordinates `(x, y)`.
    pub fn overhead_center(&self, cfg: &SyntheticWorldConfig) -> (f64, f64) {
        let cx = (cfg.overhead_width as f64 - 1.0) / 2.0;
        let cy = (cfg.overhead_height as f64 - 1.0) / 2.0;
        let r = self.range / cfg.meters_per_pixel;
        (cx + r * self.bearing.sin(), cy - r * self.bearing.cos())
    }

    /// Panorama column (fractional) whose azimuth equals the bearing.
    pub fn panorama_column(&self, width: usize) -> f64 {
        let theta = wrap_pi(self.bearing);
        (theta + PI) * width as f64 / (2.0 * PI) - 0.5
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_pi(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub split: SplitTag,
    pub landmarks: Vec<Landmark>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitTag {
    Train,
    Test,
}

impl From<SplitTag> for Split {
    fn from(s: SplitTag) -> Split {
        match s {
            SplitTag::Train => Split::Train,
            SplitTag::Test => Split::Test,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticWorld {
    pub config: SyntheticWorldConfig,
    pub locations: Vec<Location>,
}

impl SyntheticWorld {
    /// Draws every location's landmarks and position; nothing is rendered.
    pub fn sample(config: SyntheticWorldConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let cols = (config.n_locations as f64).sqrt().ceil().max(1.0) as usize;
        let lat0 = ORIGIN.0.to_radians();
        let locations = (0..config.n_locations)
            .map(|i| {
                let landmarks = (0..config.landmarks_per_location)
                    .map(|_| Landmark {
                        bearing: rng.random_range(0.0..2.0 * PI),
                        range: rng.random_range(MIN_LANDMARK_RANGE_M..config.max_landmark_range),
                        color: PALETTE[rng.random_range(0..config.palette_size)],
                        size: rng.random_range(0.8..1.6),
                        height: rng.random_range(2.0..5.0),
                    })
                    .collect();
                let (row, col) = (i / cols, i % cols);
                let north = row as f64 * GRID_SPACING_M;
                let east = col as f64 * GRID_SPACING_M;
                Location {
                    id: format!("loc{i:05}"),
                    lat: ORIGIN.0 + (north / EARTH_RADIUS_M).to_degrees(),
                    lon: ORIGIN.1 + (east / (EARTH_RADIUS_M * lat0.cos())).to_degrees(),
                    split: if i >= config.n_locations - config.n_test {
                        SplitTag::Test
                    } else {
                        SplitTag::Train
                    },
                    landmarks,
                }
            })
            .collect();
        Ok(SyntheticWorld { config, locations })
    }

    fn noise_rng(&self, index: usize, view: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(2 * index as u64 + view + 1);
        rng
    }

    fn add_noise(&self, img: &mut image::RgbImage, rng: &mut ChaCha8Rng) {
        let amp = (self.config.noise_level * 64.0).round() as i32;
        if amp == 0 {
            return;
        }
        for b in img.iter_mut() {
            let n = rng.random_range(-amp..=amp);
            *b = (*b as i32 + n).clamp(0, 255) as u8;
        }
    }

    /// North-up overhead tile.
    pub fn render_overhead(&self, index: usize, noise: bool) -> image::RgbImage {
        let cfg = &self.config;
        let (w, h) = (cfg.overhead_width as u32, cfg.overhead_height as u32);
        let mut img = image::RgbImage::from_pixel(w, h, image::Rgb(OVERHEAD));
        for lm in &self.locations[index].landmarks {
            let (cx, cy) = lm.overhead_center(cfg);
            let rad = lm.size / 2.0 / cfg.meters_per_pixel;
            let y0 = (cy - rad).floor().max(0.0) as u32;
            let y1 = ((cy + rad).ceil().max(0.0) as u32).min(h - 1);
            let x0 = (cx - rad).floor().max(0.0) as u32;
            let x1 = ((cx + rad).ceil().max(0.0) as u32).min(w - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                    if dx * dx + dy * dy <= rad * rad {
                        img.put_pixel(x, y, image::Rgb(lm.color));
                    }
                }
            }
        }
        if noise {
            self.add_noise(&mut img, &mut self.noise_rng(index, 1));
        }
        img
    }

    /// Equirectangular panorama whose centre column looks north.
    pub fn render_panorama(&self, index: usize, noise: bool) -> image::RgbImage {
        let cfg = &self.config;
        let (w, h) = (cfg.pano_width, cfg.pano_height);
        let altitude = |y: usize| PI / 2.0 - PI * (y as f64 + 0.5) / h as f64;
        let azimuth = |x: usize| 2.0 * PI * (x as f64 + 0.5) / w as f64 - PI;
        let mut img = image::RgbImage::from_fn(w as u32, h as u32, |_, y| {
            image::Rgb(if altitude(y as usize) > 0.0 { SKY } else { GROUND })
        });
        // far to near so nearer landmarks occlude
        let mut order: Vec<&Landmark> = self.locations[index].landmarks.iter().collect();
        order.sort_by(|a, b| b.range.total_cmp(&a.range));
        for lm in order {
            let half_width = (lm.size / 2.0 / lm.range).atan();
            let top = ((lm.height - CAMERA_HEIGHT_M) / lm.range).atan();
            let bottom = -(CAMERA_HEIGHT_M / lm.range).atan();
            for x in 0..w {
                if wrap_pi(azimuth(x) - lm.bearing).abs() > half_width {
                    continue;
                }
                for y in 0..h {
                    let a = altitude(y);
                    if a >= bottom && a <= top {
                        img.put_pixel(x as u32, y as u32, image::Rgb(lm.color));
                    }
                }
            }
        }
        if noise {
            self.add_noise(&mut img, &mut self.noise_rng(index, 0));
        }
        img
    }

    /// Manifest records with paths relative to the dataset directory.
    pub fn records(&self) -> Vec<PairRecord> {
        self.locations
            .iter()
            .map(|loc| PairRecord {
                id: loc.id.clone(),
                ground: PathBuf::from(format!("ground/{}.png", loc.id)),
                satellite: PathBuf::from(format!("satellite/{}.png", loc.id)),
                lat: Some(loc.lat),
                lon: Some(loc.lon),
                split: loc.split.into(),
            })
            .collect()
    }
}

fn save_png(img: &image::RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

/// Samples and renders a world into `out_dir`: `ground/*.png`,
/// `satellite/*.png`, `manifest.csv` and `world.json` (landmark bookkeeping).
pub fn generate_synthetic_world(
    config: &SyntheticWorldConfig,
    out_dir: &Path,
) -> Result<SyntheticWorld> {
    let world = SyntheticWorld::sample(config.clone())?;
    for sub in ["ground", "satellite"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    for (i, loc) in world.locations.iter().enumerate() {
        let noise = config.noise_level > 0.0;
        save_png(
            &world.render_panorama(i, noise),
            &out_dir.join("ground").join(format!("{}.png", loc.id)),
        )?;
        save_png(
            &world.render_overhead(i, noise),
            &out_dir.join("satellite").join(format!("{}.png", loc.id)),
        )?;
    }
    write_manifest(&world.records(), &out_dir.join("manifest.csv"))?;
    let json_path = out_dir.join("world.json");
    let json = serde_json::to_string_pretty(&serde_json::json!({
        "config": config,
        "locations": world.locations,
    }))
    .expect("serializable world");
    std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    Ok(world)
}
