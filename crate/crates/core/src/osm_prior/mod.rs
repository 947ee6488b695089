//! Prior map construction from OSM building footprints and a terrain model.

mod dem;
mod osm;
mod prior;

pub use dem::{load_dem, sample_dem, DemGrid, GridHull};
pub use osm::{
    parse_osm, resolve_height, write_osm, GeoOrigin, HeightSource, OsmFootprint, ParsedOsm,
    SkipCounts, EARTH_RADIUS, FLOOR_HEIGHT,
};
pub use prior::{
    build_prior, clip_prior, facade_points, ground_points, remove_footprints, PriorConfig,
};
