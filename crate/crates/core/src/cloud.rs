//! Weighted point clouds shared by the prior builder, the simulator, the
//! odometry and the observability scorer.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::PoseSE3;

/// Origin of a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PointClass {
    /// Extruded building wall from the map prior.
    Facade,
    /// Terrain sample from the elevation model.
    Ground,
    /// Measured by the sensor (scan or odometry local map).
    Local,
}

impl PointClass {
    pub fn is_prior(self) -> bool {
        matches!(self, PointClass::Facade | PointClass::Ground)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PointClass::Facade => "facade",
            PointClass::Ground => "ground",
            PointClass::Local => "local",
        }
    }
}

impl fmt::Display for PointClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PointClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "facade" => Ok(PointClass::Facade),
            "ground" => Ok(PointClass::Ground),
            "local" => Ok(PointClass::Local),
            other => Err(Error::Format(format!("unknown point class `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub position: Vector3<f64>,
    /// Unit normal, when one is known.
    pub normal: Option<Vector3<f64>>,
    /// Reliability in `(0, 1]`.
    pub weight: f64,
    pub class: PointClass,
}

impl CloudPoint {
    pub fn new(
        position: Vector3<f64>,
        normal: Option<Vector3<f64>>,
        weight: f64,
        class: PointClass,
    ) -> Self {
        Self {
            position,
            normal,
            weight,
            class,
        }
    }

    pub fn local(position: Vector3<f64>, normal: Option<Vector3<f64>>) -> Self {
        Self::new(position, normal, 1.0, PointClass::Local)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightedCloud {
    pub points: Vec<CloudPoint>,
}

impl WeightedCloud {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_points(points: Vec<CloudPoint>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: CloudPoint) {
        self.points.push(p);
    }

    pub fn iter(&self) -> std::slice::Iter<'_, CloudPoint> {
        self.points.iter()
    }

    /// Applies `pose` to positions and normals.
    pub fn transformed(&self, pose: &PoseSE3) -> WeightedCloud {
        let points = self
            .points
            .iter()
            .map(|p| CloudPoint {
                position: pose.transform_point(&p.position),
                normal: p.normal.map(|n| pose.transform_vector(&n)),
                ..*p
            })
            .collect();
        WeightedCloud { points }
    }

    pub fn count_class(&self, class: PointClass) -> usize {
        self.points.iter().filter(|p| p.class == class).count()
    }

    /// Writes `x y z nx ny nz w class`, one point per line with nine
    /// significant digits. A missing normal is written as `0 0 0`.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for p in &self.points {
            let n = p.normal.unwrap_or_else(Vector3::zeros);
            writeln!(
                out,
                "{:.8e} {:.8e} {:.8e} {:.8e} {:.8e} {:.8e} {:.8e} {}",
                p.position.x, p.position.y, p.position.z, n.x, n.y, n.z, p.weight, p.class
            )?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<WeightedCloud> {
        let mut points = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 8 {
                return Err(Error::Format(format!(
                    "cloud line {}: expected 8 fields",
                    lineno + 1
                )));
            }
            let mut v = [0.0; 7];
            for (slot, f) in v.iter_mut().zip(&fields[..7]) {
                *slot = f.parse().map_err(|_| {
                    Error::Format(format!("cloud line {}: bad number `{f}`", lineno + 1))
                })?;
            }
            let n = Vector3::new(v[3], v[4], v[5]);
            points.push(CloudPoint {
                position: Vector3::new(v[0], v[1], v[2]),
                normal: (n.norm_squared() > 0.0).then(|| n.normalize()),
                weight: v[6],
                class: fields[7].parse()?,
            });
        }
        Ok(WeightedCloud { points })
    }
}

impl FromIterator<CloudPoint> for WeightedCloud {
    fn from_iter<I: IntoIterator<Item = CloudPoint>>(iter: I) -> Self {
        Self {
            points: iter.into_iter().collect(),
        }
    }
}

impl Extend<CloudPoint> for WeightedCloud {
    fn extend<I: IntoIterator<Item = CloudPoint>>(&mut self, iter: I) {
        self.points.extend(iter)
    }
}

impl<'a> IntoIterator for &'a WeightedCloud {
    type Item = &'a CloudPoint;
    type IntoIter = std::slice::Iter<'a, CloudPoint>;
    fn into_iter(self) -> Self::IntoIter {
        self.points.iter()
    }
}
