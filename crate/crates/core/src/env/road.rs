//! Procedural single-lane roads: centerline synthesis and nearest-segment queries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::RoadConfig;
use crate::error::{Error, Result};

/// Lane marking layout, varied per road alongside the surface palette.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkingStyle {
    /// Solid edge lines and a dashed center line.
    DashedCenter,
    /// Solid edge lines only.
    EdgesOnly,
    /// Solid edge lines and a solid center line.
    SolidCenter,
}

/// Projection of a point onto the centerline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Signed perpendicular distance, positive to the left of travel.
    pub offset: f64,
    /// Arc length of the foot point.
    pub s: f64,
    pub segment: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadSpec {
    pub seed: u64,
    pub centerline: Vec<[f64; 2]>,
    pub lane_half_width: f64,
    pub route_length: f64,
    pub texture_seed: u64,
    pub marking_style: MarkingStyle,
    #[serde(skip)]
    cum_s: Vec<f64>,
    #[serde(skip)]
    index: Option<GridIndex>,
}

/// Uniform grid over the road's bounding box. Each cell lists (in ascending
/// order) every segment that could be nearest for a point of the cell lying
/// within `band` of the centerline.
#[derive(Clone, Debug, PartialEq)]
struct GridIndex {
    origin: [f64; 2],
    cell: f64,
    nx: usize,
    ny: usize,
    band: f64,
    starts: Vec<u32>,
    segments: Vec<u32>,
}

/// Distance from `p` to segment `a→b`, returning `(squared distance, t, cross)`.
#[inline]
fn segment_query(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (f64, f64, f64) {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let (px, py) = (p[0] - a[0], p[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { ((px * dx + py * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (qx, qy) = (px - t * dx, py - t * dy);
    (qx * qx + qy * qy, t, dx * py - dy * px)
}

impl RoadSpec {
    /// Builds a road from an explicit centerline (at least two points).
    pub fn from_centerline(
        centerline: Vec<[f64; 2]>,
        lane_half_width: f64,
        route_length: f64,
        band: f64,
    ) -> Result<Self> {
        if centerline.len() < 2 {
            return Err(Error::config("road centerline needs at least two points"));
        }
        if !(lane_half_width > 0.0) {
            return Err(Error::config("lane_half_width must be positive"));
        }
        let mut road = Self {
            seed: 0,
            centerline,
            lane_half_width,
            route_length,
            texture_seed: 0,
            marking_style: MarkingStyle::DashedCenter,
            cum_s: Vec::new(),
            index: None,
        };
        road.rebuild(band);
        Ok(road)
    }

    /// Straight road along +x from the origin.
    pub fn straight(length: f64, spacing: f64, lane_half_width: f64, band: f64) -> Result<Self> {
        let n = (length / spacing).ceil() as usize;
        let pts = (0..=n).map(|i| [i as f64 * spacing, 0.0]).collect();
        Self::from_centerline(pts, lane_half_width, length, band)
    }

    /// Recomputes arc lengths and the spatial index (after deserialization).
    pub fn rebuild(&mut self, band: f64) {
        let mut cum = Vec::with_capacity(self.centerline.len());
        let mut s = 0.0;
        cum.push(0.0);
        for w in self.centerline.windows(2) {
            s += ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            cum.push(s);
        }
        self.cum_s = cum;
        self.index = Some(GridIndex::build(&self.centerline, band));
    }

    pub fn length(&self) -> f64 {
        self.cum_s.last().copied().unwrap_or(0.0)
    }

    pub fn start_pose(&self) -> ([f64; 2], f64) {
        let (a, b) = (self.centerline[0], self.centerline[1]);
        (a, (b[1] - a[1]).atan2(b[0] - a[0]))
    }

    fn project_segment(&self, p: [f64; 2], i: usize) -> (f64, Projection) {
        let (a, b) = (self.centerline[i], self.centerline[i + 1]);
        let (d2, t, cross) = segment_query(p, a, b);
        let dist = d2.sqrt();
        let offset = if cross < 0.0 { -dist } else { dist };
        let s = self.cum_s[i] + t * (self.cum_s[i + 1] - self.cum_s[i]);
        (d2, Projection { offset, s, segment: i })
    }

    /// Nearest-segment projection by exhaustive scan (lowest index wins ties).
    pub fn project_brute(&self, p: [f64; 2]) -> Projection {
        let mut best = self.project_segment(p, 0);
        for i in 1..self.centerline.len() - 1 {
            let cand = self.project_segment(p, i);
            if cand.0 < best.0 {
                best = cand;
            }
        }
        best.1
    }

    /// Projection if `p` lies within the indexed band of the centerline.
    pub fn project_near(&self, p: [f64; 2]) -> Option<Projection> {
        let idx = self.index.as_ref()?;
        let cands = idx.candidates(p)?;
        let mut best: Option<(f64, Projection)> = None;
        for &i in cands {
            let cand = self.project_segment(p, i as usize);
            if best.is_none_or(|b| cand.0 < b.0) {
                best = Some(cand);
            }
        }
        let (d2, proj) = best?;
        (d2 <= idx.band * idx.band).then_some(proj)
    }

    /// Exact nearest-segment projection, using the index when it applies.
    pub fn project(&self, p: [f64; 2]) -> Projection {
        self.project_near(p).unwrap_or_else(|| self.project_brute(p))
    }

    /// Signed lateral offset of `p` from the centerline (left positive).
    pub fn lane_offset(&self, p: [f64; 2]) -> f64 {
        self.project(p).offset
    }

    /// Largest discrete curvature over consecutive vertex triples (1 / circumradius).
    pub fn max_curvature(&self) -> f64 {
        self.centerline
            .windows(3)
            .map(|w| {
                let (a, b, c) = (w[0], w[1], w[2]);
                let ab = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
                let bc = ((c[0] - b[0]).powi(2) + (c[1] - b[1]).powi(2)).sqrt();
                let ca = ((a[0] - c[0]).powi(2) + (a[1] - c[1]).powi(2)).sqrt();
                let area2 = ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs();
                2.0 * area2 / (ab * bc * ca)
            })
            .fold(0.0, f64::max)
    }
}

impl GridIndex {
    fn build(pts: &[[f64; 2]], band: f64) -> Self {
        let cell = band.max(0.5);
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in pts {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let origin = [lo[0] - band - cell, lo[1] - band - cell];
        let nx = ((hi[0] - origin[0] + band + cell) / cell).ceil() as usize + 1;
        let ny = ((hi[1] - origin[1] + band + cell) / cell).ceil() as usize + 1;
        let mut cells: Vec<Vec<u32>> = vec![Vec::new(); nx * ny];
        for (i, w) in pts.windows(2).enumerate() {
            // Every cell touched by the segment's box grown by `band` (a superset
            // of the cells containing points within `band` of the segment).
            let x0 = ((w[0][0].min(w[1][0]) - band - origin[0]) / cell).floor().max(0.0) as usize;
            let x1 = (((w[0][0].max(w[1][0]) + band - origin[0]) / cell).floor() as usize).min(nx - 1);
            let y0 = ((w[0][1].min(w[1][1]) - band - origin[1]) / cell).floor().max(0.0) as usize;
            let y1 = (((w[0][1].max(w[1][1]) + band - origin[1]) / cell).floor() as usize).min(ny - 1);
            for cy in y0..=y1 {
                for cx in x0..=x1 {
                    cells[cy * nx + cx].push(i as u32);
                }
            }
        }
        let mut starts = Vec::with_capacity(nx * ny + 1);
        let mut segments = Vec::new();
        starts.push(0);
        for c in cells {
            segments.extend(c);
            starts.push(segments.len() as u32);
        }
        Self { origin, cell, nx, ny, band, starts, segments }
    }

    #[inline]
    fn candidates(&self, p: [f64; 2]) -> Option<&[u32]> {
        let fx = (p[0] - self.origin[0]) / self.cell;
        let fy = (p[1] - self.origin[1]) / self.cell;
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (cx, cy) = (fx as usize, fy as usize);
        if cx >= self.nx || cy >= self.ny {
            return None;
        }
        let c = cy * self.nx + cx;
        let list = &self.segments[self.starts[c] as usize..self.starts[c + 1] as usize];
        (!list.is_empty()).then_some(list)
    }
}

/// Generates a road deterministically from `(seed, cfg)`.
///
/// Curvature is piecewise constant with linear ramps between pieces, bounded by
/// `1 / min_radius`; heading is steered back toward the initial direction once it
/// drifts past `max_heading_deg`, which rules out self-intersection.
pub fn generate_road(seed: u64, cfg: &RoadConfig) -> Result<RoadSpec> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k_max = 1.0 / cfg.min_radius;
    let ds = cfg.spacing;
    let total = cfg.route_length + cfg.lookahead;
    let n = (total / ds).ceil() as usize;
    let lead_in = (cfg.lead_in / ds).round() as usize;
    let heading_limit = cfg.max_heading_deg.to_radians();

    // Per-chord curvature profile.
    let mut kappa = Vec::with_capacity(n);
    kappa.resize(lead_in.min(n), 0.0);
    let mut current = 0.0f64;
    let mut heading = 0.0f64;
    while kappa.len() < n {
        let piece_len = rng.random_range(cfg.piece_length[0]..=cfg.piece_length[1]);
        let mut target = if rng.random_bool(cfg.straight_probability) {
            0.0
        } else {
            rng.random_range(-1.0..=1.0) * k_max
        };
        if heading.abs() > heading_limit {
            target = -heading.signum() * target.abs().max(0.5 * k_max);
        }
        let ramp = ((cfg.ramp_length / ds).round() as usize).max(1);
        let steps = ((piece_len / ds).round() as usize).max(ramp);
        let start = current;
        for j in 0..steps {
            if kappa.len() >= n {
                break;
            }
            let k = if j < ramp { start + (target - start) * (j + 1) as f64 / ramp as f64 } else { target };
            current = k.clamp(-k_max, k_max);
            heading += current * ds;
            kappa.push(current);
            if heading.abs() > heading_limit && current * heading > 0.0 {
                break;
            }
        }
    }

    // Chords of length `ds`; consecutive chords turn by the mean of their
    // curvatures times `ds`, which keeps every vertex circumradius ≥ min_radius.
    let mut pts = Vec::with_capacity(n + 1);
    let mut p = [0.0f64, 0.0];
    let mut theta = 0.0f64;
    pts.push(p);
    for i in 0..n {
        if i > 0 {
            theta += 0.5 * (kappa[i - 1] + kappa[i]) * ds;
        }
        p = [p[0] + ds * theta.cos(), p[1] + ds * theta.sin()];
        pts.push(p);
    }

    let styles = [MarkingStyle::DashedCenter, MarkingStyle::EdgesOnly, MarkingStyle::SolidCenter];
    let mut road = RoadSpec::from_centerline(pts, cfg.lane_half_width, cfg.route_length, cfg.band())?;
    road.seed = seed;
    road.texture_seed = rng.random();
    road.marking_style = styles[rng.random_range(0..styles.len())];
    Ok(road)
}
