//! OSM XML ingestion: closed `building=*` ways become footprints in a local
//! east/north frame.

use std::collections::HashMap;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean equatorial radius used by the local projection.
pub const EARTH_RADIUS: f64 = 6_378_137.0;
/// Height of one storey.
pub const FLOOR_HEIGHT: f64 = 3.0;

/// Tangent point of the equirectangular projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoOrigin {
    pub lat: f64,
    pub lon: f64,
}

impl Default for GeoOrigin {
    fn default() -> Self {
        Self {
            lat: 48.137,
            lon: 11.575,
        }
    }
}

impl GeoOrigin {
    /// Degrees to local meters (x east, y north).
    pub fn project(&self, lat: f64, lon: f64) -> Vector2<f64> {
        let x = EARTH_RADIUS * self.lat.to_radians().cos() * (lon - self.lon).to_radians();
        let y = EARTH_RADIUS * (lat - self.lat).to_radians();
        Vector2::new(x, y)
    }

    /// Inverse of [`GeoOrigin::project`], returns `(lat, lon)`.
    pub fn unproject(&self, xy: &Vector2<f64>) -> (f64, f64) {
        let lat = self.lat + (xy.y / EARTH_RADIUS).to_degrees();
        let lon = self.lon + (xy.x / (EARTH_RADIUS * self.lat.to_radians().cos())).to_degrees();
        (lat, lon)
    }
}

/// Which tag produced a footprint's height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeightSource {
    ExplicitHeight,
    Levels,
    Default,
}

impl HeightSource {
    /// Reliability assigned to prior points extruded from this footprint.
    pub fn reliability(self) -> f64 {
        match self {
            HeightSource::ExplicitHeight => 1.0,
            HeightSource::Levels => 0.8,
            HeightSource::Default => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OsmFootprint {
    /// OSM way id.
    pub id: i64,
    /// Closed ring (`ring[0] == ring[last]`) in local meters.
    pub ring: Vec<Vector2<f64>>,
    pub height: f64,
    pub source: HeightSource,
    pub reliability: f64,
}

impl OsmFootprint {
    /// Builds a footprint from an open or closed vertex list; validates the
    /// ring and closes it.
    pub fn new(
        id: i64,
        vertices: Vec<Vector2<f64>>,
        height: f64,
        source: HeightSource,
    ) -> Result<Self> {
        if !(height > 0.0 && height.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "footprint {id}: height must be positive"
            )));
        }
        let mut ring = vertices;
        if ring.first() != ring.last() || ring.len() == 1 {
            if let Some(&first) = ring.first() {
                ring.push(first);
            }
        }
        validate_ring(&ring)
            .map_err(|msg| Error::InvalidArgument(format!("footprint {id}: {msg}")))?;
        Ok(Self {
            id,
            ring,
            height,
            source,
            reliability: source.reliability(),
        })
    }

    /// Ring vertices without the closing duplicate.
    pub fn vertices(&self) -> &[Vector2<f64>] {
        &self.ring[..self.ring.len() - 1]
    }

    /// Shoelace area, positive for counter-clockwise rings.
    pub fn signed_area(&self) -> f64 {
        signed_area(self.vertices())
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        let v = self.vertices();
        let mut inside = false;
        let mut j = v.len() - 1;
        for i in 0..v.len() {
            let (a, b) = (v[i], v[j]);
            if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
                inside = !inside;
            }
            j = i;
        }
        inside
    }
}

pub(crate) fn signed_area(v: &[Vector2<f64>]) -> f64 {
    let n = v.len();
    (0..n)
        .map(|i| {
            let (a, b) = (v[i], v[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        * 0.5
}

fn cross2(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

fn segments_intersect(
    p1: &Vector2<f64>,
    p2: &Vector2<f64>,
    q1: &Vector2<f64>,
    q2: &Vector2<f64>,
) -> bool {
    let d1 = cross2(&(q2 - q1), &(p1 - q1));
    let d2 = cross2(&(q2 - q1), &(p2 - q1));
    let d3 = cross2(&(p2 - p1), &(q1 - p1));
    let d4 = cross2(&(p2 - p1), &(q2 - p1));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on_segment = |a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>, d: f64| {
        d == 0.0
            && p.x >= a.x.min(b.x)
            && p.x <= a.x.max(b.x)
            && p.y >= a.y.min(b.y)
            && p.y <= a.y.max(b.y)
    };
    on_segment(q1, q2, p1, d1)
        || on_segment(q1, q2, p2, d2)
        || on_segment(p1, p2, q1, d3)
        || on_segment(p1, p2, q2, d4)
}

/// Checks closure, vertex count and simplicity of a closed ring.
fn validate_ring(ring: &[Vector2<f64>]) -> std::result::Result<(), &'static str> {
    if ring.len() < 4 || ring.first() != ring.last() {
        return Err("ring needs at least 3 distinct vertices");
    }
    let v = &ring[..ring.len() - 1];
    for i in 0..v.len() {
        for j in 0..i {
            if v[i] == v[j] {
                return Err("ring repeats a vertex");
            }
        }
    }
    if signed_area(v).abs() < 1e-12 {
        return Err("ring has zero area");
    }
    let n = v.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(&v[i], &v[(i + 1) % n], &v[j], &v[(j + 1) % n]) {
                return Err("ring self-intersects");
            }
        }
    }
    Ok(())
}

/// Ways that were dropped while parsing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SkipCounts {
    pub missing_node: usize,
    pub open_way: usize,
    pub invalid_ring: usize,
}

impl SkipCounts {
    pub fn total(&self) -> usize {
        self.missing_node + self.open_way + self.invalid_ring
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedOsm {
    pub footprints: Vec<OsmFootprint>,
    pub skipped: SkipCounts,
}

/// Parses a numeric tag value, accepting a trailing `m` unit.
fn parse_meters(v: &str) -> Option<f64> {
    let t = v.trim();
    let t = t.strip_suffix('m').unwrap_or(t).trim();
    t.parse::<f64>().ok().filter(|x| x.is_finite() && *x > 0.0)
}

/// `height` tag, then `building:levels` x 3 m, then a single 3 m storey.
pub fn resolve_height(height: Option<&str>, levels: Option<&str>) -> (f64, HeightSource) {
    if let Some(h) = height.and_then(parse_meters) {
        return (h, HeightSource::ExplicitHeight);
    }
    if let Some(l) = levels
        .and_then(|l| l.trim().parse::<f64>().ok())
        .filter(|l| l.is_finite() && *l > 0.0)
    {
        return (l * FLOOR_HEIGHT, HeightSource::Levels);
    }
    (FLOOR_HEIGHT, HeightSource::Default)
}

/// Extracts building footprints from an OSM XML document.
pub fn parse_osm(xml_bytes: &[u8], origin: &GeoOrigin) -> Result<ParsedOsm> {
    let text = std::str::from_utf8(xml_bytes).map_err(|e| Error::Xml(e.to_string()))?;
    let doc = roxmltree::Document::parse(text).map_err(|e| Error::Xml(e.to_string()))?;

    let mut nodes: HashMap<i64, Vector2<f64>> = HashMap::new();
    for node in doc.descendants().filter(|n| n.has_tag_name("node")) {
        let id = attr_num::<i64>(&node, "id")?;
        let lat = attr_num::<f64>(&node, "lat")?;
        let lon = attr_num::<f64>(&node, "lon")?;
        nodes.insert(id, origin.project(lat, lon));
    }

    let mut footprints = Vec::new();
    let mut skipped = SkipCounts::default();
    for way in doc.descendants().filter(|n| n.has_tag_name("way")) {
        let mut building = false;
        let mut height = None;
        let mut levels = None;
        let mut refs = Vec::new();
        for child in way.children().filter(|c| c.is_element()) {
            match child.tag_name().name() {
                "nd" => refs.push(attr_num::<i64>(&child, "ref")?),
                "tag" => match (child.attribute("k"), child.attribute("v")) {
                    (Some("building"), Some(v)) => building = v != "no",
                    (Some("height"), Some(v)) => height = Some(v),
                    (Some("building:levels"), Some(v)) => levels = Some(v),
                    _ => {}
                },
                _ => {}
            }
        }
        if !building {
            continue;
        }
        let id = attr_num::<i64>(&way, "id")?;
        if refs.len() < 2 || refs.first() != refs.last() {
            skipped.open_way += 1;
            continue;
        }
        let Some(ring) = refs
            .iter()
            .map(|r| nodes.get(r).copied())
            .collect::<Option<Vec<_>>>()
        else {
            skipped.missing_node += 1;
            continue;
        };
        let (h, source) = resolve_height(height, levels);
        match OsmFootprint::new(id, ring, h, source) {
            Ok(fp) => footprints.push(fp),
            Err(_) => skipped.invalid_ring += 1,
        }
    }
    Ok(ParsedOsm {
        footprints,
        skipped,
    })
}

fn attr_num<T: std::str::FromStr>(node: &roxmltree::Node<'_, '_>, name: &str) -> Result<T> {
    let raw = node
        .attribute(name)
        .ok_or_else(|| Error::Xml(format!("<{}> missing `{name}`", node.tag_name().name())))?;
    raw.parse().map_err(|_| {
        Error::Xml(format!(
            "<{}> has non-numeric `{name}`: {raw}",
            node.tag_name().name()
        ))
    })
}

/// Serializes footprints as OSM XML, each with an explicit `height` tag.
pub fn write_osm(footprints: &[OsmFootprint], origin: &GeoOrigin) -> String {
    let mut out = String::from(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<osm version=\"0.6\" generator=\"osmscan\">\n",
    );
    let mut next_node = 1i64;
    let mut ways = String::new();
    for fp in footprints {
        let first = next_node;
        for v in fp.vertices() {
            let (lat, lon) = origin.unproject(v);
            out.push_str(&format!(
                "  <node id=\"{next_node}\" lat=\"{lat:.12}\" lon=\"{lon:.12}\"/>\n"
            ));
            next_node += 1;
        }
        ways.push_str(&format!("  <way id=\"{}\">\n", fp.id));
        for r in first..next_node {
            ways.push_str(&format!("    <nd ref=\"{r}\"/>\n"));
        }
        ways.push_str(&format!("    <nd ref=\"{first}\"/>\n"));
        ways.push_str("    <tag k=\"building\" v=\"yes\"/>\n");
        ways.push_str(&format!("    <tag k=\"height\" v=\"{}\"/>\n", fp.height));
        ways.push_str("  </way>\n");
    }
    out.push_str(&ways);
    out.push_str("</osm>\n");
    out
}
