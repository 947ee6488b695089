//! Extrusion of footprints onto the terrain and sampling of the prior cloud.

use std::collections::BTreeSet;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::dem::{sample_dem, DemGrid};
use super::osm::{signed_area, OsmFootprint};
use crate::cloud::{CloudPoint, PointClass, WeightedCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    /// Wall sampling step, horizontal and vertical (m).
    pub facade_spacing: f64,
    /// Terrain sampling step (m).
    pub ground_spacing: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            facade_spacing: 0.5,
            ground_spacing: 2.0,
        }
    }
}

fn steps(length: f64, spacing: f64) -> usize {
    ((length / spacing) - 1e-9).ceil().max(1.0) as usize
}

/// Wall samples of one footprint: a regular grid on every extruded edge,
/// based on the terrain under each column, with outward horizontal normals.
pub fn facade_points(
    footprint: &OsmFootprint,
    dem: &DemGrid,
    spacing: f64,
) -> Result<Vec<CloudPoint>> {
    let mut verts: Vec<Vector2<f64>> = footprint.vertices().to_vec();
    if signed_area(&verts) < 0.0 {
        verts.reverse();
    }
    let n_v = steps(footprint.height, spacing);
    let mut out = Vec::new();
    for i in 0..verts.len() {
        let (a, b) = (verts[i], verts[(i + 1) % verts.len()]);
        let edge = b - a;
        let len = edge.norm();
        if len == 0.0 {
            continue;
        }
        let normal = Vector3::new(edge.y, -edge.x, 0.0) / len;
        let n_h = steps(len, spacing);
        for j in 0..n_h {
            let xy = a + edge * (j as f64 / n_h as f64);
            let base = sample_dem(dem, &xy)?;
            for k in 0..=n_v {
                let z = base + footprint.height * (k as f64 / n_v as f64);
                out.push(CloudPoint::new(
                    Vector3::new(xy.x, xy.y, z),
                    Some(normal),
                    footprint.reliability,
                    PointClass::Facade,
                ));
            }
        }
    }
    Ok(out)
}

/// Terrain samples on a regular grid over the elevation model's extent.
/// Cells without data are skipped.
pub fn ground_points(dem: &DemGrid, spacing: f64) -> Vec<CloudPoint> {
    let hull = dem.hull();
    let nx = ((hull.max.x - hull.min.x) / spacing + 1e-9).floor() as usize;
    let ny = ((hull.max.y - hull.min.y) / spacing + 1e-9).floor() as usize;
    let mut out = Vec::new();
    for iy in 0..=ny {
        for ix in 0..=nx {
            let xy = hull.min + Vector2::new(ix as f64 * spacing, iy as f64 * spacing);
            if let Ok(z) = sample_dem(dem, &xy) {
                out.push(CloudPoint::new(
                    Vector3::new(xy.x, xy.y, z),
                    Some(Vector3::z()),
                    1.0,
                    PointClass::Ground,
                ));
            }
        }
    }
    out
}

/// Builds the weighted prior: dense facades from the footprints, sparse
/// ground from the elevation model.
pub fn build_prior(
    footprints: &[OsmFootprint],
    dem: &DemGrid,
    facade_spacing: f64,
    ground_spacing: f64,
) -> Result<WeightedCloud> {
    if !(facade_spacing > 0.0 && ground_spacing > 0.0) {
        return Err(Error::InvalidArgument(
            "sampling steps must be positive".into(),
        ));
    }
    if facade_spacing >= ground_spacing {
        return Err(Error::InvalidArgument(format!(
            "facade spacing {facade_spacing} must be finer than ground spacing {ground_spacing}"
        )));
    }
    let mut cloud = WeightedCloud::new();
    for fp in footprints {
        cloud.extend(facade_points(fp, dem, facade_spacing)?);
    }
    let ground = ground_points(dem, ground_spacing);
    if footprints.is_empty() && ground.is_empty() {
        return Err(Error::EmptyPrior);
    }
    cloud.extend(ground);
    Ok(cloud)
}

/// Points within `radius` of `center` in the horizontal plane.
pub fn clip_prior(prior: &WeightedCloud, center: &Vector3<f64>, radius: f64) -> WeightedCloud {
    let r2 = radius * radius;
    prior
        .iter()
        .filter(|p| (p.position.xy() - center.xy()).norm_squared() <= r2)
        .copied()
        .collect()
}

/// Drops footprints by way id. Every id must exist.
pub fn remove_footprints(
    footprints: &[OsmFootprint],
    removal_ids: &BTreeSet<i64>,
) -> Result<Vec<OsmFootprint>> {
    let known: BTreeSet<i64> = footprints.iter().map(|f| f.id).collect();
    if let Some(unknown) = removal_ids.iter().find(|id| !known.contains(id)) {
        return Err(Error::InvalidArgument(format!(
            "no footprint with id {unknown}"
        )));
    }
    Ok(footprints
        .iter()
        .filter(|f| !removal_ids.contains(&f.id))
        .cloned()
        .collect())
}
