//! Driver-view rasterizer: pinhole camera over a flat-shaded ground plane.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::road::{MarkingStyle, RoadSpec};
use crate::env::vehicle::VehicleState;
use crate::env::CameraConfig;
use crate::error::{Error, Result};

const SHOULDER: f64 = 0.3;
const LINE_WIDTH: f64 = 0.15;
const DASH_PERIOD: f64 = 3.0;
const DASH_ON: f64 = 1.5;

/// 8-bit grayscale image, row-major, row 0 at the top.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn value(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x] as f32 / 255.0
    }

    /// Pixel intensities scaled to `[0, 1]`.
    pub fn to_unit(&self) -> Vec<f32> {
        self.pixels.iter().map(|&p| p as f32 / 255.0).collect()
    }

    /// Nearest-neighbour resize so neither side exceeds `max_side`.
    pub fn thumbnail(&self, max_side: usize) -> Frame {
        let scale = (self.width.max(self.height) as f64 / max_side as f64).max(1.0);
        let w = ((self.width as f64 / scale).round() as usize).max(1);
        let h = ((self.height as f64 / scale).round() as usize).max(1);
        let mut pixels = Vec::with_capacity(w * h);
        for y in 0..h {
            let sy = (y * self.height / h).min(self.height - 1);
            for x in 0..w {
                let sx = (x * self.width / w).min(self.width - 1);
                pixels.push(self.pixels[sy * self.width + sx]);
            }
        }
        Frame { width: w, height: h, pixels }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().map_err(|e| Error::codec(e.to_string()))?;
            writer.write_image_data(&self.pixels).map_err(|e| Error::codec(e.to_string()))?;
        }
        Ok(out)
    }

    pub fn write_png(&self, path: &std::path::Path) -> Result<()> {
        let bytes = self.encode_png()?;
        std::fs::File::create(path)?.write_all(&bytes)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Palette {
    sky: f64,
    grass: f64,
    road: f64,
    line: f64,
    grain: f64,
}

impl Palette {
    fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            sky: rng.random_range(0.70..0.90),
            grass: rng.random_range(0.06..0.22),
            road: rng.random_range(0.32..0.50),
            line: rng.random_range(0.82..1.00),
            grain: rng.random_range(0.01..0.05),
        }
    }
}

fn hash3(seed: u64, a: i64, b: i64) -> f64 {
    let mut z = seed ^ (a as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (b as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Shade of a ground point given its projection. Depends only on `(s, |offset|)`
/// so a centred view of a straight road is mirror-symmetric.
fn ground_shade(road: &RoadSpec, pal: &Palette, offset: f64, s: f64) -> f64 {
    let a = offset.abs();
    let hw = road.lane_half_width;
    let grain = |cell_s: f64, cell_a: f64| {
        hash3(road.texture_seed, (s / cell_s).floor() as i64, (a / cell_a).floor() as i64) * pal.grain
    };
    if a > hw + SHOULDER {
        return (pal.grass + 2.0 * grain(1.0, 0.5)).clamp(0.0, 1.0);
    }
    if (a - hw).abs() <= 0.5 * LINE_WIDTH {
        return pal.line;
    }
    if a <= 0.5 * LINE_WIDTH {
        let dashed_on = s.rem_euclid(DASH_PERIOD) < DASH_ON;
        match road.marking_style {
            MarkingStyle::DashedCenter if dashed_on => return pal.line,
            MarkingStyle::SolidCenter => return pal.line,
            _ => {}
        }
    }
    (pal.road + grain(0.5, 0.25)).clamp(0.0, 1.0)
}

/// Precomputed per-sample ground offsets for a fixed camera.
#[derive(Clone, Debug)]
pub struct Renderer {
    cfg: CameraConfig,
    /// Per output pixel, `samples²` entries of vehicle-frame ground offsets
    /// (forward, left) relative to the camera, or `None` above the far plane.
    rays: Vec<Option<[f64; 2]>>,
}

impl Renderer {
    pub fn new(cfg: &CameraConfig) -> Self {
        let (w, h, ss) = (cfg.width, cfg.height, cfg.supersample.max(1));
        let f = 0.5 * w as f64 / (0.5 * cfg.hfov_deg.to_radians()).tan();
        let (sp, cp) = cfg.pitch_deg.to_radians().sin_cos();
        let mut rays = Vec::with_capacity(w * h * ss * ss);
        for v in 0..h {
            for u in 0..w {
                for sv in 0..ss {
                    for su in 0..ss {
                        let xs = u as f64 + (su as f64 + 0.5) / ss as f64;
                        let ys = v as f64 + (sv as f64 + 0.5) / ss as f64;
                        let xc = (xs - 0.5 * w as f64) / f;
                        let yc = (ys - 0.5 * h as f64) / f;
                        // Ray = forward + xc·right + yc·down, camera pitched down.
                        let fwd = cp - yc * sp;
                        let down = sp + yc * cp;
                        let ray = if down > 1e-9 {
                            let t = cfg.height_m / down;
                            let (gx, gy) = (t * fwd, -t * xc);
                            (gx * gx + gy * gy <= cfg.far_m * cfg.far_m).then_some([gx, gy])
                        } else {
                            None
                        };
                        rays.push(ray);
                    }
                }
            }
        }
        Self { cfg: cfg.clone(), rays }
    }

    pub fn render(&self, road: &RoadSpec, state: &VehicleState) -> Frame {
        let pal = Palette::from_seed(road.texture_seed);
        let ss = self.cfg.supersample.max(1);
        let per = ss * ss;
        let (sh, ch) = state.heading.sin_cos();
        let cam = [
            state.position[0] + self.cfg.forward_m * ch,
            state.position[1] + self.cfg.forward_m * sh,
        ];
        let mut pixels = Vec::with_capacity(self.cfg.width * self.cfg.height);
        let mut shades = vec![0.0f64; per];
        for samples in self.rays.chunks(per) {
            for (shade, ray) in shades.iter_mut().zip(samples) {
                *shade = match ray {
                    None => pal.sky,
                    Some([gx, gy]) => {
                        let p = [cam[0] + gx * ch - gy * sh, cam[1] + gx * sh + gy * ch];
                        match road.project_near(p) {
                            Some(proj) => ground_shade(road, &pal, proj.offset, proj.s),
                            None => pal.grass,
                        }
                    }
                };
            }
            // Order-independent sum keeps mirrored pixels bit-identical.
            shades.sort_unstable_by(f64::total_cmp);
            let acc: f64 = shades.iter().sum();
            pixels.push((acc / per as f64 * 255.0).round().clamp(0.0, 255.0) as u8);
        }
        Frame { width: self.cfg.width, height: self.cfg.height, pixels }
    }
}
