//! Synthetic ground-truth scenes and a raycast model of a motorized,
//! limited-FoV LiDAR.

mod builtin;
mod bvh;

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use builtin::{builtin_scene, campus, corridor, open_square, BuiltinScene, BUILTIN_SCENES};

use crate::cloud::{CloudPoint, WeightedCloud};
use crate::error::{Error, Result};
use crate::geometry::{LidarMount, PoseSE3};
use crate::osm_prior::{write_osm, GeoOrigin, OsmFootprint};
use bvh::Bvh;

/// Facets smaller than this are rejected.
pub const MIN_FACET_AREA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub c: Vector3<f64>,
}

impl Triangle {
    pub fn new(a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>) -> Self {
        Self { a, b, c }
    }

    pub fn area(&self) -> f64 {
        0.5 * (self.b - self.a).cross(&(self.c - self.a)).norm()
    }

    /// Unit normal following the vertex winding.
    pub fn normal(&self) -> Vector3<f64> {
        (self.b - self.a).cross(&(self.c - self.a)).normalize()
    }

    /// Moller-Trumbore intersection distance along a unit ray.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        const EPS: f64 = 1e-12;
        let e1 = self.b - self.a;
        let e2 = self.c - self.a;
        let p = dir.cross(&e2);
        let det = e1.dot(&p);
        if det.abs() < EPS * e1.norm() * e2.norm() {
            return None;
        }
        let inv = 1.0 / det;
        let s = origin - self.a;
        let u = s.dot(&p) * inv;
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        let q = s.cross(&e1);
        let v = dir.dot(&q) * inv;
        if v < 0.0 || u + v > 1.0 {
            return None;
        }
        let t = e2.dot(&q) * inv;
        (t > 1e-9).then_some(t)
    }
}

/// Ray hit with the facet normal turned to face the ray origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub range: f64,
    pub normal: Vector3<f64>,
    pub triangle: usize,
}

/// Static triangle scene together with the building footprints it was
/// extruded from.
#[derive(Debug, Clone)]
pub struct Scene {
    triangles: Vec<Triangle>,
    footprints: Vec<OsmFootprint>,
    bvh: Bvh,
}

impl Scene {
    pub fn new(triangles: Vec<Triangle>, footprints: Vec<OsmFootprint>) -> Result<Self> {
        if let Some((i, t)) = triangles
            .iter()
            .enumerate()
            .find(|(_, t)| !(t.area() > MIN_FACET_AREA))
        {
            return Err(Error::InvalidArgument(format!(
                "facet {i} is degenerate (area {:e})",
                t.area()
            )));
        }
        let bvh = Bvh::build(&triangles);
        Ok(Self {
            triangles,
            footprints,
            bvh,
        })
    }

    pub fn empty() -> Self {
        Self {
            triangles: Vec::new(),
            footprints: Vec::new(),
            bvh: Bvh::default(),
        }
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn footprints(&self) -> &[OsmFootprint] {
        &self.footprints
    }

    /// Writes one facet per line: nine coordinates, three vertices.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for t in &self.triangles {
            let v = [t.a, t.b, t.c];
            let line: Vec<String> = v
                .iter()
                .flat_map(|p| p.iter().map(|x| x.to_string()))
                .collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    /// Reads facets written by [`Scene::write_text`]. Footprints are not
    /// part of the file.
    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut tris = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v = line
                .split_whitespace()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Format(format!("scene line {}: bad number", lineno + 1)))?;
            if v.len() != 9 {
                return Err(Error::Format(format!(
                    "scene line {}: expected 9 values",
                    lineno + 1
                )));
            }
            tris.push(Triangle::new(
                Vector3::new(v[0], v[1], v[2]),
                Vector3::new(v[3], v[4], v[5]),
                Vector3::new(v[6], v[7], v[8]),
            ));
        }
        Self::new(tris, Vec::new())
    }
}

/// Nearest facet hit along a unit ray, within `max_range`.
pub fn raycast(
    scene: &Scene,
    origin: &Vector3<f64>,
    direction: &Vector3<f64>,
    max_range: f64,
) -> Option<Hit> {
    let (range, idx) = scene
        .bvh
        .intersect(&scene.triangles, origin, direction, max_range)?;
    let mut normal = scene.triangles[idx].normal();
    if normal.dot(direction) > 0.0 {
        normal = -normal;
    }
    Some(Hit {
        range,
        normal,
        triangle: idx,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarModel {
    /// Horizontal field of view (rad), strictly below a full turn.
    pub h_fov: f64,
    /// Vertical field of view (rad), centered on the horizon.
    pub v_fov: f64,
    pub rays_per_frame: usize,
    pub max_range: f64,
    /// Standard deviation of the additive range noise (m).
    pub range_sigma: f64,
    pub frame_rate: f64,
    /// Sensor placement on the motor stage.
    #[serde(skip)]
    pub mount: LidarMount,
}

impl Default for LidarModel {
    fn default() -> Self {
        Self {
            h_fov: 70f64.to_radians(),
            v_fov: 30f64.to_radians(),
            rays_per_frame: 2000,
            max_range: 40.0,
            range_sigma: 0.02,
            frame_rate: 10.0,
            mount: LidarMount::default(),
        }
    }
}

impl LidarModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.h_fov > 0.0
            && self.h_fov < std::f64::consts::TAU
            && self.v_fov > 0.0
            && self.v_fov <= std::f64::consts::PI
            && self.rays_per_frame > 0
            && self.max_range > 0.0
            && self.range_sigma >= 0.0
            && self.frame_rate > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid LiDAR model {self:?}"
            )))
        }
    }

    pub fn frame_period(&self) -> f64 {
        1.0 / self.frame_rate
    }

    /// Ray directions in the sensor frame, uniform over the FoV patch of the
    /// unit sphere. The first `n` rays of a seed do not depend on the total.
    pub fn ray_directions(&self, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (z_lo, z_hi) = ((-0.5 * self.v_fov).sin(), (0.5 * self.v_fov).sin());
        (0..self.rays_per_frame)
            .map(|_| {
                let az = rng.random_range(-0.5 * self.h_fov..=0.5 * self.h_fov);
                let z: f64 = rng.random_range(z_lo..=z_hi);
                let c = (1.0 - z * z).max(0.0).sqrt();
                Vector3::new(c * az.cos(), c * az.sin(), z)
            })
            .collect()
    }
}

/// Simulates one frame at motor angle `theta`: returns hit points and
/// facet normals in the LiDAR frame with Gaussian range noise.
pub fn simulate_frame(
    scene: &Scene,
    model: &LidarModel,
    base: &PoseSE3,
    theta: f64,
    seed: u64,
) -> Result<WeightedCloud> {
    model.validate()?;
    let sensor = base * &model.mount.sensor_in_base(theta);
    let noise =
        Normal::new(0.0, model.range_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut cloud = WeightedCloud::new();
    for d in model.ray_directions(seed) {
        let dir_w = sensor.rotation * d;
        let Some(hit) = raycast(scene, &sensor.translation, &dir_w, model.max_range) else {
            continue;
        };
        let r = hit.range + noise.sample(&mut noise_rng);
        if r <= 0.0 {
            continue;
        }
        let n_l = sensor.rotation.inverse() * hit.normal;
        cloud.push(CloudPoint::local(d * r, Some(n_l)));
    }
    Ok(cloud)
}

/// Emits the scene's footprints as OSM XML after removing a seeded random
/// `dropout` fraction of them (rounded to the nearest count).
pub fn scene_to_osm(scene: &Scene, dropout: f64, seed: u64, origin: &GeoOrigin) -> Result<Vec<u8>> {
    let kept = dropout_footprints(scene.footprints(), dropout, seed)?;
    Ok(write_osm(&kept, origin).into_bytes())
}

/// Footprints surviving a seeded dropout, in their original order.
pub fn dropout_footprints(
    footprints: &[OsmFootprint],
    dropout: f64,
    seed: u64,
) -> Result<Vec<OsmFootprint>> {
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::InvalidArgument(format!(
            "dropout {dropout} outside [0, 1)"
        )));
    }
    let n_drop = (dropout * footprints.len() as f64).round() as usize;
    let mut idx: Vec<usize> = (0..footprints.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let dropped: BTreeSet<usize> = idx.into_iter().take(n_drop).collect();
    Ok(footprints
        .iter()
        .enumerate()
        .filter(|(i, _)| !dropped.contains(i))
        .map(|(_, f)| f.clone())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub time: f64,
    pub pose: PoseSE3,
}

/// Writes `t x y z qx qy qz qw` lines.
pub fn write_trajectory<W: Write>(samples: &[TrajectorySample], mut out: W) -> std::io::Result<()> {
    for s in samples {
        let t = s.pose.translation;
        let q = s.pose.quaternion();
        writeln!(
            out,
            "{:.6} {:.9} {:.9} {:.9} {:.12} {:.12} {:.12} {:.12}",
            s.time, t.x, t.y, t.z, q[0], q[1], q[2], q[3]
        )?;
    }
    Ok(())
}

pub fn read_trajectory<R: BufRead>(input: R) -> Result<Vec<TrajectorySample>> {
    let mut out: Vec<TrajectorySample> = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v = line
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Format(format!("trajectory line {}: bad number", lineno + 1)))?;
        if v.len() != 8 {
            return Err(Error::Format(format!(
                "trajectory line {}: expected 8 values",
                lineno + 1
            )));
        }
        if let Some(prev) = out.last() {
            if !(v[0] > prev.time) {
                return Err(Error::Format(format!(
                    "trajectory line {}: time not increasing",
                    lineno + 1
                )));
            }
        }
        out.push(TrajectorySample {
            time: v[0],
            pose: PoseSE3::from_quaternion(Vector3::new(v[1], v[2], v[3]), v[4], v[5], v[6], v[7]),
        });
    }
    Ok(out)
}
