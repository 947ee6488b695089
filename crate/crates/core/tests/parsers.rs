use std::collections::BTreeSet;

use nalgebra::{Vector2, Vector3};
use osmscan::osm_prior::{
    build_prior, clip_prior, facade_points, load_dem, parse_osm, remove_footprints, sample_dem,
    DemGrid, GeoOrigin, HeightSource, OsmFootprint,
};
use osmscan::scene_sim::{campus, scene_to_osm};
use osmscan::PointClass;
use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CRAFTED: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<osm version="0.6">
  <node id="1" lat="48.13700" lon="11.57500"/>
  <node id="2" lat="48.13700" lon="11.57520"/>
  <node id="3" lat="48.13715" lon="11.57520"/>
  <node id="4" lat="48.13715" lon="11.57500"/>
  <node id="5" lat="48.13730" lon="11.57500"/>
  <node id="6" lat="48.13730" lon="11.57520"/>
  <node id="7" lat="48.13745" lon="11.57520"/>
  <node id="8" lat="48.13745" lon="11.57500"/>
  <node id="9" lat="48.13760" lon="11.57500"/>
  <node id="10" lat="48.13760" lon="11.57520"/>
  <node id="11" lat="48.13775" lon="11.57520"/>
  <node id="12" lat="48.13775" lon="11.57500"/>
  <way id="101">
    <nd ref="1"/><nd ref="2"/><nd ref="3"/><nd ref="4"/><nd ref="1"/>
    <tag k="building" v="yes"/>
    <tag k="height" v="10.5"/>
    <tag k="building:levels" v="2"/>
  </way>
  <way id="102">
    <nd ref="5"/><nd ref="6"/><nd ref="7"/><nd ref="8"/><nd ref="5"/>
    <tag k="building" v="residential"/>
    <tag k="building:levels" v="2"/>
  </way>
  <way id="103">
    <nd ref="9"/><nd ref="10"/><nd ref="11"/><nd ref="12"/><nd ref="9"/>
    <tag k="building" v="yes"/>
  </way>
  <way id="104">
    <nd ref="1"/><nd ref="2"/><nd ref="3"/>
    <tag k="building" v="yes"/>
  </way>
  <way id="105">
    <nd ref="1"/><nd ref="2"/><nd ref="3"/><nd ref="1"/>
    <tag k="highway" v="residential"/>
  </way>
</osm>
"#;

#[test]
fn crafted_file_exercises_every_height_rule() {
    let parsed = parse_osm(
        CRAFTED.as_bytes(),
        &GeoOrigin {
            lat: 48.137,
            lon: 11.575,
        },
    )
    .unwrap();
    let heights: Vec<(i64, f64, HeightSource)> = parsed
        .footprints
        .iter()
        .map(|f| (f.id, f.height, f.source))
        .collect();
    assert_eq!(
        heights,
        vec![
            (101, 10.5, HeightSource::ExplicitHeight),
            (102, 6.0, HeightSource::Levels),
            (103, 3.0, HeightSource::Default)
        ]
    );
    assert_eq!(parsed.skipped.open_way, 1);
    assert_eq!(parsed.skipped.total(), 1);
    let w = |i: usize| parsed.footprints[i].reliability;
    assert!(w(0) > w(1) && w(1) > w(2) && w(2) > 0.0 && w(0) <= 1.0);
}

#[test]
fn projection_origin_maps_to_zero() {
    let origin = GeoOrigin {
        lat: 48.137,
        lon: 11.575,
    };
    let parsed = parse_osm(CRAFTED.as_bytes(), &origin).unwrap();
    let first = parsed.footprints[0].vertices()[0];
    assert!(first.norm() < 1e-9);
    let east = parsed.footprints[0].vertices()[1];
    assert!(east.x > 14.0 && east.x < 15.5 && east.y.abs() < 1e-9);
}

/// Sum of cell values weighted by separable tent functions around each cell
/// center: exactly the bilinear interpolant inside the hull.
fn tent_oracle(dem: &DemGrid, xy: &Vector2<f64>) -> f64 {
    let cs = dem.cell_size;
    let mut z = 0.0;
    for row in 0..dem.n_rows {
        let cy = dem.origin.y + (dem.n_rows - row) as f64 * cs - 0.5 * cs;
        let wy = (1.0 - (xy.y - cy).abs() / cs).max(0.0);
        if wy == 0.0 {
            continue;
        }
        for col in 0..dem.n_cols {
            let cx = dem.origin.x + (col as f64 + 0.5) * cs;
            let wx = (1.0 - (xy.x - cx).abs() / cs).max(0.0);
            z += dem.heights[row * dem.n_cols + col] * wx * wy;
        }
    }
    z
}

fn random_dem(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DemGrid {
    DemGrid {
        origin: Vector2::new(
            rng.random_range(-100.0..100.0),
            rng.random_range(-100.0..100.0),
        ),
        cell_size: rng.random_range(0.5..5.0),
        n_rows: rows,
        n_cols: cols,
        heights: (0..rows * cols)
            .map(|_| rng.random_range(-20.0..80.0))
            .collect(),
        nodata: -9999.0,
    }
}

#[test]
fn dem_bilinear_matches_tent_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let dem = random_dem(&mut rng, 10, 10);
        let hull = dem.hull();
        for _ in 0..100 {
            let xy = Vector2::new(
                rng.random_range(hull.min.x..hull.max.x),
                rng.random_range(hull.min.y..hull.max.y),
            );
            let got = sample_dem(&dem, &xy).unwrap();
            let want = tent_oracle(&dem, &xy);
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }
}

#[test]
fn dem_midpoint_between_two_cells() {
    let mut dem = DemGrid::flat(Vector2::zeros(), 1.0, 1, 2, 0.0);
    dem.heights = vec![0.0, 10.0];
    assert_eq!(sample_dem(&dem, &Vector2::new(1.0, 0.5)).unwrap(), 5.0);
}

#[test]
fn dem_ascii_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let dem = random_dem(&mut rng, 10, 10);
    let back = load_dem(dem.to_ascii_grid().as_bytes()).unwrap();
    assert_eq!(back.n_rows, 10);
    assert_eq!(back.n_cols, 10);
    assert!((back.origin - dem.origin).norm() < 1e-9);
    assert!((back.cell_size - dem.cell_size).abs() < 1e-12);
    for (a, b) in back.heights.iter().zip(&dem.heights) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn dem_queries_outside_the_hull_fail() {
    let dem = DemGrid::flat(Vector2::zeros(), 1.0, 4, 4, 2.0);
    assert!(sample_dem(&dem, &Vector2::new(-1.0, 2.0)).is_err());
    assert!(sample_dem(&dem, &Vector2::new(2.0, 3.9)).is_err());
    assert_eq!(sample_dem(&dem, &Vector2::new(2.0, 2.0)).unwrap(), 2.0);
}

#[test]
fn scene_osm_round_trip_preserves_rings() {
    let origin = GeoOrigin::default();
    let scene = campus().scene;
    let xml = scene_to_osm(&scene, 0.0, 7, &origin).unwrap();
    let parsed = parse_osm(&xml, &origin).unwrap();
    assert_eq!(parsed.footprints.len(), scene.footprints().len());
    for (a, b) in parsed.footprints.iter().zip(scene.footprints()) {
        assert_eq!(a.id, b.id);
        assert!((a.height - b.height).abs() < 1e-9);
        assert_eq!(a.ring.len(), b.ring.len());
        for (p, q) in a.ring.iter().zip(&b.ring) {
            assert!((p - q).norm() < 1e-6, "{p:?} vs {q:?}");
        }
    }
}

#[test]
fn half_dropout_keeps_half_the_ways() {
    let origin = GeoOrigin::default();
    let scene = campus().scene;
    let n = scene.footprints().len();
    let xml = scene_to_osm(&scene, 0.5, 3, &origin).unwrap();
    let parsed = parse_osm(&xml, &origin).unwrap();
    assert_eq!(
        parsed.footprints.len(),
        n - (0.5 * n as f64).round() as usize
    );
}

fn square(id: i64, x: f64, y: f64, side: f64, height: f64) -> OsmFootprint {
    let v = vec![
        Vector2::new(x, y),
        Vector2::new(x + side, y),
        Vector2::new(x + side, y + side),
        Vector2::new(x, y + side),
    ];
    OsmFootprint::new(id, v, height, HeightSource::ExplicitHeight).unwrap()
}

#[test]
fn square_facades_face_outward() {
    let dem = DemGrid::flat(Vector2::new(-20.0, -20.0), 1.0, 40, 40, 1.0);
    let pts = facade_points(&square(1, 0.0, 0.0, 4.0, 6.0), &dem, 0.5).unwrap();
    let east: Vec<_> = pts
        .iter()
        .filter(|p| (p.position.x - 4.0).abs() < 1e-12 && p.position.y > 0.0 && p.position.y < 4.0)
        .collect();
    assert!(!east.is_empty());
    for p in east {
        assert!((p.normal.unwrap() - Vector3::x()).norm() < 1e-12);
        assert!(p.position.z >= 1.0 - 1e-12 && p.position.z <= 7.0 + 1e-12);
    }
}

#[test]
fn clipping_keeps_points_within_radius() {
    let dem = DemGrid::flat(Vector2::new(-50.0, -50.0), 2.0, 50, 50, 0.0);
    let prior = build_prior(
        &[
            square(1, 0.0, 0.0, 10.0, 8.0),
            square(2, 30.0, 30.0, 5.0, 4.0),
        ],
        &dem,
        0.5,
        2.0,
    )
    .unwrap();
    let c = Vector3::new(5.0, 5.0, 1.0);
    let clipped = clip_prior(&prior, &c, 12.0);
    let inside = prior
        .iter()
        .filter(|p| (p.position.xy() - c.xy()).norm() <= 12.0)
        .count();
    assert_eq!(clipped.len(), inside);
    assert!(clipped
        .iter()
        .all(|p| (p.position.xy() - c.xy()).norm() <= 12.0));
}

#[test]
fn removing_half_of_the_footprints() {
    let fps: Vec<_> = (0..10)
        .map(|i| square(i, 20.0 * i as f64, 0.0, 8.0, 5.0))
        .collect();
    let ids: BTreeSet<i64> = (0..10).step_by(2).collect();
    let kept = remove_footprints(&fps, &ids).unwrap();
    assert_eq!(kept.len(), 5);
    assert!(kept.iter().all(|f| f.id % 2 == 1));
    assert!(remove_footprints(&fps, &BTreeSet::from([42])).is_err());
}

proptest! {
    #[test]
    fn prior_points_satisfy_cloud_invariants(
        x in -30.0f64..30.0, y in -30.0f64..30.0, side in 1.0f64..15.0, height in 2.0f64..30.0,
        spacing in 0.3f64..1.5,
    ) {
        let dem = DemGrid::flat(Vector2::new(-60.0, -60.0), 4.0, 30, 30, 3.0);
        let fp = square(9, x, y, side, height);
        let prior = build_prior(std::slice::from_ref(&fp), &dem, spacing, 4.0).unwrap();
        for p in &prior {
            let n = p.normal.unwrap();
            prop_assert!((n.norm() - 1.0).abs() < 1e-6);
            prop_assert!(p.weight > 0.0 && p.weight <= 1.0);
            match p.class {
                PointClass::Facade => {
                    prop_assert!(n.z.abs() < 1e-12);
                    prop_assert!(p.position.z >= 3.0 - 1e-9 && p.position.z <= 3.0 + height + 1e-9);
                    let on_x = (p.position.x - x).abs() < 1e-9 || (p.position.x - x - side).abs() < 1e-9;
                    let on_y = (p.position.y - y).abs() < 1e-9 || (p.position.y - y - side).abs() < 1e-9;
                    prop_assert!(on_x || on_y);
                    // Outward: stepping along the normal leaves the footprint.
                    let out = p.position.xy() + n.xy() * 0.01;
                    prop_assert!(!fp.contains(&out));
                }
                PointClass::Ground => {
                    prop_assert!((n - Vector3::z()).norm() < 1e-12);
                    prop_assert_eq!(p.weight, 1.0);
                }
                PointClass::Local => prop_assert!(false, "prior holds no local points"),
            }
        }
    }
}
