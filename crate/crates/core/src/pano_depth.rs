//! Fusion of the local map with the clipped prior and spherical projection
//! into a min-range panoramic depth image.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use indexmap::IndexMap;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::cloud::{CloudPoint, PointClass, WeightedCloud};
use crate::error::{Error, Result};
use crate::geometry::PoseSE3;

/// Points closer than this to the viewpoint are dropped.
pub const MIN_RANGE: f64 = 0.05;

/// Relative range jump beyond which a neighbouring pixel is treated as a
/// different surface during normal estimation.
const DEPTH_JUMP: f64 = 0.2;

/// Pixels searched in each direction for a neighbour during normal
/// estimation; bridges the gaps a voxelized cloud leaves in the image.
const NEIGHBOUR_REACH: isize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanoBounds {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for PanoBounds {
    fn default() -> Self {
        Self {
            alpha_min: -PI,
            alpha_max: PI,
            beta_min: -30f64.to_radians(),
            beta_max: 30f64.to_radians(),
        }
    }
}

impl PanoBounds {
    pub fn full() -> Self {
        Self {
            alpha_min: -PI,
            alpha_max: PI,
            beta_min: -FRAC_PI_2,
            beta_max: FRAC_PI_2,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.alpha_min < self.alpha_max
            && self.alpha_min >= -PI
            && self.alpha_max <= PI
            && self.beta_min < self.beta_max
            && self.beta_min >= -FRAC_PI_2
            && self.beta_max <= FRAC_PI_2;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid panorama bounds {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanoConfig {
    pub width: usize,
    pub height: usize,
    pub bounds: PanoBounds,
    /// Downsampling voxel edge (m).
    pub voxel: f64,
}

impl Default for PanoConfig {
    fn default() -> Self {
        Self {
            width: 360,
            height: 90,
            bounds: PanoBounds::default(),
            voxel: 0.3,
        }
    }
}

/// Retained sample of one pixel. Empty pixels have infinite range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanoPixel {
    pub range: f64,
    pub class: PointClass,
    pub weight: f64,
}

impl PanoPixel {
    const EMPTY: PanoPixel = PanoPixel {
        range: f64::INFINITY,
        class: PointClass::Local,
        weight: 0.0,
    };

    pub fn is_valid(&self) -> bool {
        self.range.is_finite()
    }

    fn precedes(&self, other: &PanoPixel) -> bool {
        (self.range, self.class, self.weight).partial_cmp(&(other.range, other.class, other.weight))
            == Some(std::cmp::Ordering::Less)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanoDepthImage {
    pub width: usize,
    pub height: usize,
    pub bounds: PanoBounds,
    /// Row-major, `v * width + u`.
    pub pixels: Vec<PanoPixel>,
}

impl PanoDepthImage {
    pub fn pixel(&self, u: usize, v: usize) -> &PanoPixel {
        &self.pixels[v * self.width + u]
    }

    pub fn valid_count(&self) -> usize {
        self.pixels.iter().filter(|p| p.is_valid()).count()
    }

    fn alpha_step(&self) -> f64 {
        (self.bounds.alpha_max - self.bounds.alpha_min) / (self.width - 1) as f64
    }

    fn beta_step(&self) -> f64 {
        (self.bounds.beta_max - self.bounds.beta_min) / (self.height - 1) as f64
    }

    /// Azimuth of the center of column `u`.
    pub fn column_azimuth(&self, u: usize) -> f64 {
        self.bounds.alpha_min + (u as f64 + 0.5) * self.alpha_step()
    }

    /// Unit ray through the center of pixel `(u, v)`.
    pub fn pixel_direction(&self, u: usize, v: usize) -> Vector3<f64> {
        let a = self.column_azimuth(u);
        let b = self.bounds.beta_min + (v as f64 + 0.5) * self.beta_step();
        Vector3::new(b.cos() * a.cos(), b.cos() * a.sin(), b.sin())
    }

    /// Writes a binary graymap of inverse range (1 m and closer is white,
    /// empty pixels black), highest elevation row first.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let mut row = vec![0u8; self.width];
        for v in (0..self.height).rev() {
            for (u, px) in row.iter_mut().enumerate() {
                let r = self.pixel(u, v).range;
                *px = if r.is_finite() {
                    (255.0 * (1.0 / r).min(1.0)).round() as u8
                } else {
                    0
                };
            }
            out.write_all(&row)?;
        }
        Ok(())
    }
}

/// `F = M_loc ∪ M_prior`, keeping each point's class and weight.
pub fn fuse_clouds(local: &WeightedCloud, prior_fov: &WeightedCloud) -> WeightedCloud {
    local.iter().chain(prior_fov.iter()).copied().collect()
}

fn voxel_key(p: &Vector3<f64>, voxel: f64) -> [i64; 3] {
    [
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    ]
}

/// One point per occupied voxel: the member nearest the members' centroid,
/// carrying the largest weight in the voxel. Output follows first occupancy.
pub fn voxel_downsample(cloud: &WeightedCloud, voxel: f64) -> Result<WeightedCloud> {
    if !(voxel > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "voxel size {voxel} must be positive"
        )));
    }
    let mut cells: IndexMap<[i64; 3], Vec<usize>> = IndexMap::new();
    for (i, p) in cloud.iter().enumerate() {
        cells
            .entry(voxel_key(&p.position, voxel))
            .or_default()
            .push(i);
    }
    let pts = &cloud.points;
    Ok(cells
        .values()
        .map(|members| {
            let centroid = members
                .iter()
                .map(|&i| pts[i].position)
                .sum::<Vector3<f64>>()
                / members.len() as f64;
            let rep = members
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    (pts[a].position - centroid)
                        .norm_squared()
                        .total_cmp(&(pts[b].position - centroid).norm_squared())
                })
                .expect("voxel has members");
            let weight = members
                .iter()
                .map(|&i| pts[i].weight)
                .fold(f64::NEG_INFINITY, f64::max);
            CloudPoint { weight, ..pts[rep] }
        })
        .collect())
}

/// Pixel of a point given relative to the viewpoint, or `None` when it is
/// too close or outside the bounds.
pub fn pixel_of(
    p: &Vector3<f64>,
    width: usize,
    height: usize,
    bounds: &PanoBounds,
) -> Option<(usize, usize, f64)> {
    let r = p.norm();
    if !(r >= MIN_RANGE) {
        return None;
    }
    let alpha = p.y.atan2(p.x);
    let beta = (p.z / r).clamp(-1.0, 1.0).asin();
    if alpha < bounds.alpha_min
        || alpha > bounds.alpha_max
        || beta < bounds.beta_min
        || beta > bounds.beta_max
    {
        return None;
    }
    let u = ((alpha - bounds.alpha_min) / (bounds.alpha_max - bounds.alpha_min)
        * (width - 1) as f64)
        .floor() as usize;
    let v = ((beta - bounds.beta_min) / (bounds.beta_max - bounds.beta_min) * (height - 1) as f64)
        .floor() as usize;
    Some((u.min(width - 1), v.min(height - 1), r))
}

/// Spherical projection about `viewpoint`, keeping the nearest sample per
/// pixel.
pub fn project_pano(
    cloud: &WeightedCloud,
    viewpoint: &PoseSE3,
    width: usize,
    height: usize,
    bounds: &PanoBounds,
) -> Result<PanoDepthImage> {
    if width < 2 || height < 2 {
        return Err(Error::InvalidArgument(format!(
            "panorama {width}x{height} must be at least 2x2"
        )));
    }
    bounds.validate()?;
    let to_view = viewpoint.inverse();
    let mut pixels = vec![PanoPixel::EMPTY; width * height];
    for p in cloud {
        let rel = to_view.transform_point(&p.position);
        if let Some((u, v, r)) = pixel_of(&rel, width, height, bounds) {
            let cand = PanoPixel {
                range: r,
                class: p.class,
                weight: p.weight,
            };
            let slot = &mut pixels[v * width + u];
            if cand.precedes(slot) {
                *slot = cand;
            }
        }
    }
    Ok(PanoDepthImage {
        width,
        height,
        bounds: *bounds,
        pixels,
    })
}

/// Reconstructed pixel sample in the viewpoint frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanoPoint {
    pub position: Vector3<f64>,
    pub normal: Vector3<f64>,
    /// True when the normal fell back to the reversed viewing ray.
    pub radial_normal: bool,
}

/// Point at the pixel center ray and a normal from central differences of
/// neighbouring pixels, oriented toward the viewpoint.
pub fn unproject_pixel(img: &PanoDepthImage, u: usize, v: usize) -> Option<PanoPoint> {
    let px = img.pixel(u, v);
    if !px.is_valid() {
        return None;
    }
    let dir = img.pixel_direction(u, v);
    let position = dir * px.range;
    // Nearest occupied pixel along a step direction; it must lie on the
    // same surface.
    let neighbour = |du: isize, dv: isize| -> Option<Vector3<f64>> {
        (1..=NEIGHBOUR_REACH)
            .find_map(|s| {
                let (uu, vv) = (u as isize + s * du, v as isize + s * dv);
                if uu < 0 || vv < 0 || uu as usize >= img.width || vv as usize >= img.height {
                    return None;
                }
                let q = img.pixel(uu as usize, vv as usize);
                q.is_valid().then_some((uu as usize, vv as usize, q.range))
            })
            .filter(|&(_, _, r)| (r - px.range).abs() <= DEPTH_JUMP * px.range)
            .map(|(uu, vv, r)| img.pixel_direction(uu, vv) * r)
    };
    let diff = |a: Option<Vector3<f64>>, b: Option<Vector3<f64>>| match (a, b) {
        (Some(a), Some(b)) => Some(a - b),
        (Some(a), None) => Some(a - position),
        (None, Some(b)) => Some(position - b),
        (None, None) => None,
    };
    let du = diff(neighbour(1, 0), neighbour(-1, 0));
    let dv = diff(neighbour(0, 1), neighbour(0, -1));
    let estimate = match (du, dv) {
        (Some(a), Some(b)) => {
            let n = a.cross(&b);
            let len = n.norm();
            (len > 1e-12 * a.norm() * b.norm()).then(|| n / len)
        }
        _ => None,
    };
    Some(match estimate {
        Some(n) => PanoPoint {
            position,
            normal: if n.dot(&dir) > 0.0 { -n } else { n },
            radial_normal: false,
        },
        None => PanoPoint {
            position,
            normal: -dir,
            radial_normal: true,
        },
    })
}
