//! Builtin desk-scale scenes: a street corridor with recesses, a campus
//! block loop, and an open square.

use std::f64::consts::TAU;

use nalgebra::{Vector2, Vector3};

use super::{Scene, TrajectorySample, Triangle};
use crate::error::{Error, Result};
use crate::geometry::PoseSE3;
use crate::osm_prior::{DemGrid, HeightSource, OsmFootprint};

pub const BUILTIN_SCENES: [&str; 3] = ["campus", "corridor", "open_square"];

const GROUND_TILE: f64 = 10.0;
const DEM_CELL: f64 = 2.0;
const BASE_HEIGHT: f64 = 1.2;
const FRAME_RATE: f64 = 10.0;

/// Scene geometry plus the ground-truth trajectory driven through it and a
/// terrain grid covering it.
#[derive(Debug, Clone)]
pub struct BuiltinScene {
    pub name: &'static str,
    pub scene: Scene,
    pub trajectory: Vec<TrajectorySample>,
    pub dem: DemGrid,
}

pub fn builtin_scene(name: &str) -> Result<BuiltinScene> {
    match name {
        "campus" => Ok(campus()),
        "corridor" => Ok(corridor()),
        "open_square" => Ok(open_square()),
        other => Err(Error::InvalidArgument(format!(
            "unknown scene `{other}` (expected one of {})",
            BUILTIN_SCENES.join(", ")
        ))),
    }
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Vector2<f64>> {
    vec![
        Vector2::new(x0, y0),
        Vector2::new(x1, y0),
        Vector2::new(x1, y1),
        Vector2::new(x0, y1),
    ]
}

/// Speed profile oscillating between `lo` and `hi` m/s.
#[derive(Debug, Clone, Copy)]
struct Speed {
    lo: f64,
    hi: f64,
    period: f64,
}

/// Standstill at the start (s), then a smooth ramp up to the profile (s).
const REST: f64 = 1.0;
const RAMP: f64 = 2.0;

impl Speed {
    fn at(&self, t: f64) -> f64 {
        let mid = 0.5 * (self.lo + self.hi);
        let amp = 0.5 * (self.hi - self.lo);
        let x = ((t - REST) / RAMP).clamp(0.0, 1.0);
        x * x * (3.0 - 2.0 * x) * (mid + amp * (TAU * t / self.period).sin())
    }
}

struct SceneBuilder {
    triangles: Vec<Triangle>,
    footprints: Vec<OsmFootprint>,
    min: Vector2<f64>,
    max: Vector2<f64>,
}

impl SceneBuilder {
    fn new(min: Vector2<f64>, max: Vector2<f64>) -> Self {
        Self {
            triangles: Vec::new(),
            footprints: Vec::new(),
            min,
            max,
        }
    }

    /// Extruded walls of a footprint on flat ground at z = 0.
    fn building(&mut self, id: i64, vertices: Vec<Vector2<f64>>, height: f64) {
        let fp = OsmFootprint::new(id, vertices, height, HeightSource::ExplicitHeight)
            .expect("builtin footprint is valid");
        let v = fp.vertices();
        for i in 0..v.len() {
            let (a, b) = (v[i], v[(i + 1) % v.len()]);
            let a0 = Vector3::new(a.x, a.y, 0.0);
            let b0 = Vector3::new(b.x, b.y, 0.0);
            let a1 = Vector3::new(a.x, a.y, height);
            let b1 = Vector3::new(b.x, b.y, height);
            self.triangles.push(Triangle::new(a0, b0, b1));
            self.triangles.push(Triangle::new(a0, b1, a1));
        }
        self.footprints.push(fp);
    }

    fn finish(mut self, trajectory: Vec<TrajectorySample>, name: &'static str) -> BuiltinScene {
        let nx = ((self.max.x - self.min.x) / GROUND_TILE).ceil() as usize;
        let ny = ((self.max.y - self.min.y) / GROUND_TILE).ceil() as usize;
        for iy in 0..ny {
            for ix in 0..nx {
                let x0 = self.min.x + ix as f64 * GROUND_TILE;
                let y0 = self.min.y + iy as f64 * GROUND_TILE;
                let p = |x: f64, y: f64| Vector3::new(x, y, 0.0);
                let (x1, y1) = (x0 + GROUND_TILE, y0 + GROUND_TILE);
                self.triangles
                    .push(Triangle::new(p(x0, y0), p(x1, y0), p(x1, y1)));
                self.triangles
                    .push(Triangle::new(p(x0, y0), p(x1, y1), p(x0, y1)));
            }
        }
        let extent = Vector2::new(nx as f64, ny as f64) * GROUND_TILE;
        let dem = DemGrid::flat(
            self.min,
            DEM_CELL,
            (extent.y / DEM_CELL).round() as usize,
            (extent.x / DEM_CELL).round() as usize,
            0.0,
        );
        let scene = Scene::new(self.triangles, self.footprints).expect("builtin facets are valid");
        BuiltinScene {
            name,
            scene,
            trajectory,
            dem,
        }
    }
}

/// Dense polyline through `corners` with circular fillets of `radius`.
fn filleted_path(corners: &[Vector2<f64>], closed: bool, radius: f64) -> Vec<Vector2<f64>> {
    const STEP: f64 = 0.05;
    let n = corners.len();
    let mut out: Vec<Vector2<f64>> = Vec::new();
    let push_segment = |out: &mut Vec<Vector2<f64>>, a: Vector2<f64>, b: Vector2<f64>| {
        let len = (b - a).norm();
        let k = (len / STEP).ceil().max(1.0) as usize;
        for j in 0..k {
            out.push(a + (b - a) * (j as f64 / k as f64));
        }
    };
    let corner_range: Vec<usize> = if closed {
        (0..n).collect()
    } else {
        (1..n - 1).collect()
    };
    let mut arcs = Vec::new();
    for &i in &corner_range {
        let p = corners[i];
        let prev = corners[(i + n - 1) % n];
        let next = corners[(i + 1) % n];
        let a = (p - prev).normalize();
        let b = (next - p).normalize();
        let turn = (a.x * b.y - a.y * b.x).atan2(a.dot(&b));
        let d = radius * (turn.abs() / 2.0).tan();
        let start = p - a * d;
        let end = p + b * d;
        let left = Vector2::new(-a.y, a.x) * turn.signum();
        let center = start + left * radius;
        arcs.push((start, end, center, turn));
    }
    let arc_points = |start: Vector2<f64>, center: Vector2<f64>, turn: f64| -> Vec<Vector2<f64>> {
        let k = ((turn.abs() * radius) / STEP).ceil().max(1.0) as usize;
        let r0 = start - center;
        (0..k)
            .map(|j| {
                let ang = turn * j as f64 / k as f64;
                let (s, c) = ang.sin_cos();
                center + Vector2::new(c * r0.x - s * r0.y, s * r0.x + c * r0.y)
            })
            .collect()
    };
    if closed {
        for i in 0..n {
            let (_, end, _, _) = arcs[i];
            let (next_start, _, next_center, next_turn) = arcs[(i + 1) % n];
            push_segment(&mut out, end, next_start);
            out.extend(arc_points(next_start, next_center, next_turn));
        }
        let first = out[0];
        out.push(first);
    } else {
        let mut cursor = corners[0];
        for &(start, end, center, turn) in &arcs {
            push_segment(&mut out, cursor, start);
            out.extend(arc_points(start, center, turn));
            cursor = end;
        }
        push_segment(&mut out, cursor, corners[n - 1]);
        out.push(corners[n - 1]);
    }
    out
}

/// Drives the path at the given speed profile, sampling at the frame rate,
/// until the end of the path.
fn drive(path: &[Vector2<f64>], speed: Speed, height: f64) -> Vec<TrajectorySample> {
    let mut cum = vec![0.0];
    for w in path.windows(2) {
        cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
    }
    let total = *cum.last().unwrap();
    let at = |s: f64| -> Vector2<f64> {
        let s = s.clamp(0.0, total);
        let i = cum.partition_point(|&c| c <= s).clamp(1, cum.len() - 1);
        let seg = cum[i] - cum[i - 1];
        let t = if seg > 0.0 {
            (s - cum[i - 1]) / seg
        } else {
            0.0
        };
        path[i - 1] + (path[i] - path[i - 1]) * t
    };
    let dt = 1.0 / FRAME_RATE;
    let mut out = Vec::new();
    let mut s = 0.0;
    let mut k = 0usize;
    while s <= total {
        let t = k as f64 * dt;
        let p = at(s);
        let ahead = at(s + 0.5);
        let behind = at(s - 0.5);
        let dir = ahead - behind;
        let yaw = dir.y.atan2(dir.x);
        out.push(TrajectorySample {
            time: t,
            pose: PoseSE3::from_yaw(yaw, Vector3::new(p.x, p.y, height)),
        });
        s += speed.at(t) * dt;
        k += 1;
    }
    out
}

/// Width and depth of the door recesses cut into street faces (m).
const RECESS_WIDTH: f64 = 1.5;
const RECESS_DEPTH: f64 = 2.5;

/// Street axis through `origin` along `along`; `out` points from the axis
/// toward the side being built.
#[derive(Debug, Clone, Copy)]
struct Street {
    origin: Vector2<f64>,
    along: Vector2<f64>,
    out: Vector2<f64>,
}

impl Street {
    fn at(&self, s: f64, d: f64) -> Vector2<f64> {
        self.origin + self.along * s + self.out * d
    }

    /// Footprint of a block fronting the street over `s0..s1`, its face
    /// `face` m from the axis and `depth` m deep, with door recesses
    /// centred at `recesses`.
    fn frontage(
        &self,
        s0: f64,
        s1: f64,
        face: f64,
        depth: f64,
        recesses: &[f64],
    ) -> Vec<Vector2<f64>> {
        let mut v = vec![self.at(s0, face)];
        for &c in recesses {
            let (a, b) = (c - 0.5 * RECESS_WIDTH, c + 0.5 * RECESS_WIDTH);
            assert!(a > s0 && b < s1, "recess outside its block");
            v.push(self.at(a, face));
            v.push(self.at(a, face + RECESS_DEPTH));
            v.push(self.at(b, face + RECESS_DEPTH));
            v.push(self.at(b, face));
        }
        v.push(self.at(s1, face));
        v.push(self.at(s1, face + depth));
        v.push(self.at(s0, face + depth));
        v
    }
}

/// A loop of roughly 300 m: a street lined on both sides by buildings with
/// recessed entrances, then streets built up on one side with only a few
/// kiosks on the other.
pub fn campus() -> BuiltinScene {
    let mut b = SceneBuilder::new(Vector2::new(-40.0, -40.0), Vector2::new(140.0, 90.0));
    let v = Vector2::new;
    let south = Street {
        origin: v(0.0, 0.0),
        along: v(1.0, 0.0),
        out: v(0.0, -1.0),
    };
    let north = Street {
        origin: v(0.0, 50.0),
        along: v(1.0, 0.0),
        out: v(0.0, 1.0),
    };
    let east = Street {
        origin: v(100.0, 0.0),
        along: v(0.0, 1.0),
        out: v(1.0, 0.0),
    };
    let west = Street {
        origin: v(0.0, 0.0),
        along: v(0.0, 1.0),
        out: v(-1.0, 0.0),
    };
    let flip = |s: Street| Street { out: -s.out, ..s };
    // (street, s0, s1, face, depth, height, recesses)
    let blocks: Vec<(Street, f64, f64, f64, f64, f64, Vec<f64>)> = vec![
        // south street: built up on both sides
        (south, -12.0, 38.0, 6.0, 14.0, 12.0, vec![3.0, 16.0, 29.0]),
        (
            south,
            46.0,
            96.0,
            6.5,
            12.0,
            9.0,
            vec![55.0, 63.0, 78.0, 90.0],
        ),
        (flip(south), 7.0, 44.0, 6.0, 11.0, 14.0, vec![14.0, 31.0]),
        (
            flip(south),
            53.0,
            93.0,
            6.5,
            10.0,
            10.0,
            vec![62.0, 75.0, 86.0],
        ),
        // the other streets: one built-up side, kiosks on the open side
        (flip(east), 22.0, 44.0, 6.0, 10.0, 12.0, vec![28.0, 37.0]),
        (east, 8.0, 12.0, 10.0, 4.0, 3.0, vec![]),
        (east, 34.0, 38.0, 10.0, 4.0, 3.0, vec![]),
        (north, 4.0, 40.0, 6.0, 12.0, 11.0, vec![12.0, 27.0]),
        (
            north,
            48.0,
            112.0,
            6.5,
            14.0,
            8.0,
            vec![58.0, 71.0, 84.0, 99.0],
        ),
        (flip(north), 28.0, 32.0, 8.0, 4.0, 3.0, vec![]),
        (flip(north), 68.0, 72.0, 8.0, 4.0, 3.0, vec![]),
        (west, 4.0, 22.0, 6.0, 14.0, 9.0, vec![13.0]),
        (west, 30.0, 62.0, 6.0, 12.0, 13.0, vec![37.0, 51.0]),
        (flip(west), 23.0, 27.0, 8.0, 4.0, 3.0, vec![]),
    ];
    for (i, (street, s0, s1, face, depth, h, rec)) in blocks.iter().enumerate() {
        b.building(
            100 + i as i64,
            street.frontage(*s0, *s1, *face, *depth, rec),
            *h,
        );
    }
    let corners = [v(0.0, 0.0), v(100.0, 0.0), v(100.0, 50.0), v(0.0, 50.0)];
    let path = filleted_path(&corners, true, 8.0);
    let traj = drive(
        &path,
        Speed {
            lo: 2.0,
            hi: 4.0,
            period: 9.0,
        },
        BASE_HEIGHT,
    );
    b.finish(traj, "campus")
}

/// A straight street canyon along +x: two long wall blocks with narrow,
/// deep recesses at irregular spacing.
pub fn corridor() -> BuiltinScene {
    const HALF_WIDTH: f64 = 3.0;
    const DEPTH: f64 = 3.0;
    const NOTCH: f64 = 1.0;
    const X_MIN: f64 = -20.0;
    const X_MAX: f64 = 220.0;
    let mut b = SceneBuilder::new(Vector2::new(-40.0, -30.0), Vector2::new(240.0, 30.0));
    let south_notches = [
        6.0, 17.0, 31.0, 40.0, 55.0, 67.0, 76.0, 92.0, 103.0, 118.0, 127.0, 141.0, 156.0, 164.0,
        179.0, 191.0, 204.0,
    ];
    let north_notches = [
        11.0, 24.0, 35.0, 49.0, 61.0, 83.0, 97.0, 110.0, 123.0, 135.0, 149.0, 170.0, 185.0, 198.0,
        211.0,
    ];

    // south block, counter-clockwise: bottom edge east, then back west
    // along the street face with the notches.
    let mut south = vec![
        Vector2::new(X_MIN, -HALF_WIDTH - 10.0),
        Vector2::new(X_MAX, -HALF_WIDTH - 10.0),
        Vector2::new(X_MAX, -HALF_WIDTH),
    ];
    for &c in south_notches.iter().rev() {
        south.push(Vector2::new(c + 0.5 * NOTCH, -HALF_WIDTH));
        south.push(Vector2::new(c + 0.5 * NOTCH, -HALF_WIDTH - DEPTH));
        south.push(Vector2::new(c - 0.5 * NOTCH, -HALF_WIDTH - DEPTH));
        south.push(Vector2::new(c - 0.5 * NOTCH, -HALF_WIDTH));
    }
    south.push(Vector2::new(X_MIN, -HALF_WIDTH));
    b.building(200, south, 8.0);

    let mut north = vec![Vector2::new(X_MIN, HALF_WIDTH)];
    for &c in &north_notches {
        north.push(Vector2::new(c - 0.5 * NOTCH, HALF_WIDTH));
        north.push(Vector2::new(c - 0.5 * NOTCH, HALF_WIDTH + DEPTH));
        north.push(Vector2::new(c + 0.5 * NOTCH, HALF_WIDTH + DEPTH));
        north.push(Vector2::new(c + 0.5 * NOTCH, HALF_WIDTH));
    }
    north.push(Vector2::new(X_MAX, HALF_WIDTH));
    north.push(Vector2::new(X_MAX, HALF_WIDTH + 10.0));
    north.push(Vector2::new(X_MIN, HALF_WIDTH + 10.0));
    b.building(201, north, 8.0);

    let path = filleted_path(
        &[Vector2::new(0.0, 0.0), Vector2::new(200.0, 0.0)],
        false,
        1.0,
    );
    let traj = drive(
        &path,
        Speed {
            lo: 2.0,
            hi: 4.0,
            period: 7.0,
        },
        BASE_HEIGHT,
    );
    b.finish(traj, "corridor")
}

/// A wide square bordered by a few scattered buildings, crossed diagonally
/// and then around its edge.
pub fn open_square() -> BuiltinScene {
    let mut b = SceneBuilder::new(Vector2::new(-50.0, -50.0), Vector2::new(50.0, 50.0));
    let blocks: [(f64, f64, f64, f64, f64); 5] = [
        (-40.0, -40.0, -28.0, -30.0, 8.0),
        (26.0, -38.0, 38.0, -26.0, 12.0),
        (30.0, 20.0, 40.0, 40.0, 6.0),
        (-38.0, 24.0, -20.0, 34.0, 9.0),
        (-3.0, -3.0, 3.0, 3.0, 3.0),
    ];
    for (i, &(x0, y0, x1, y1, h)) in blocks.iter().enumerate() {
        b.building(300 + i as i64, rect(x0, y0, x1, y1), h);
    }
    let corners = [
        Vector2::new(-20.0, -20.0),
        Vector2::new(20.0, -20.0),
        Vector2::new(20.0, 15.0),
        Vector2::new(-20.0, 15.0),
    ];
    let path = filleted_path(&corners, true, 6.0);
    let traj = drive(
        &path,
        Speed {
            lo: 1.5,
            hi: 3.0,
            period: 10.0,
        },
        BASE_HEIGHT,
    );
    b.finish(traj, "open_square")
}
