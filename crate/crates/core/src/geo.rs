//! Geodesic primitives on a spherical Earth.
//!
//! Everything here is a pure function over immutable values. Distances use the
//! haversine formula with the IUGG mean radius; containment projects the
//! polygon onto a local equirectangular plane, which is accurate enough at
//! city-block scale.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// IUGG mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Tolerance (projected degrees) under which a point counts as lying on a polygon edge.
const BOUNDARY_EPS: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    InvalidLatitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    InvalidLongitude(f64),
    #[error("bearing is undefined between coincident points")]
    DegenerateBearing,
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon has identical consecutive vertices at index {0}")]
    RepeatedVertex(usize),
    #[error("polygon spans the antimeridian or a pole")]
    UnsupportedRegion,
}

/// A WGS-84 style latitude/longitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint", into = "RawPoint")]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawPoint> for GeoPoint {
    type Error = GeoError;
    fn try_from(raw: RawPoint) -> Result<Self, GeoError> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl From<GeoPoint> for RawPoint {
    fn from(p: GeoPoint) -> Self {
        RawPoint { lat: p.lat, lon: p.lon }
    }
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::InvalidLatitude(lat));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::InvalidLongitude(lon));
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Offsets this point by local east/north meters (flat-earth approximation).
    ///
    /// Used to lay out synthetic cities; results are clamped to the valid range.
    pub fn offset_m(&self, east_m: f64, north_m: f64) -> GeoPoint {
        let m_per_deg = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        let lat = (self.lat + north_m / m_per_deg).clamp(-90.0, 90.0);
        let lon = (self.lon + east_m / (m_per_deg * self.lat.to_radians().cos())).clamp(-180.0, 180.0);
        GeoPoint { lat, lon }
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.6}, {:.6})", self.lat, self.lon)
    }
}

/// Great-circle distance in meters.
pub fn haversine_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi * 0.5).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda * 0.5).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Initial great-circle bearing from `a` to `b`, in degrees clockwise from north, in `[0, 360)`.
pub fn initial_bearing(a: GeoPoint, b: GeoPoint) -> Result<f64, GeoError> {
    if haversine_distance(a, b) == 0.0 {
        return Err(GeoError::DegenerateBearing);
    }
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlambda = (b.lon - a.lon).to_radians();
    let y = dlambda.sin() * phi2.cos();
    let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlambda.cos();
    Ok(normalize_heading(y.atan2(x).to_degrees()))
}

/// Maps any angle in degrees into `[0, 360)`.
pub fn normalize_heading(deg: f64) -> f64 {
    let h = deg.rem_euclid(360.0);
    // rem_euclid can return 360.0 for tiny negative inputs.
    if h >= 360.0 {
        0.0
    } else {
        h
    }
}

/// Smallest absolute difference between two headings, in `[0, 180]`.
pub fn angular_difference(a: f64, b: f64) -> f64 {
    let d = normalize_heading(a - b);
    if d > 180.0 {
        360.0 - d
    } else {
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Compass {
    North,
    East,
    South,
    West,
}

impl fmt::Display for Compass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Compass::North => "North",
            Compass::East => "East",
            Compass::South => "South",
            Compass::West => "West",
        };
        f.write_str(s)
    }
}

/// Nearest cardinal direction. Sector boundaries (45, 135, 225, 315) resolve clockwise.
pub fn compass_label(heading: f64) -> Compass {
    let h = normalize_heading(heading);
    if !(45.0..315.0).contains(&h) {
        Compass::North
    } else if h < 135.0 {
        Compass::East
    } else if h < 225.0 {
        Compass::South
    } else {
        Compass::West
    }
}

/// A closed destination boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct GeoPolygon {
    vertices: Vec<GeoPoint>,
}

impl TryFrom<Vec<[f64; 2]>> for GeoPolygon {
    type Error = GeoError;
    fn try_from(raw: Vec<[f64; 2]>) -> Result<Self, GeoError> {
        let vertices = raw.into_iter().map(|[lat, lon]| GeoPoint::new(lat, lon)).collect::<Result<Vec<_>, _>>()?;
        GeoPolygon::new(vertices)
    }
}

impl From<GeoPolygon> for Vec<[f64; 2]> {
    fn from(p: GeoPolygon) -> Self {
        p.vertices.iter().map(|v| [v.lat, v.lon]).collect()
    }
}

impl GeoPolygon {
    /// Builds a polygon. A closing vertex equal to the first one is dropped.
    pub fn new(mut vertices: Vec<GeoPoint>) -> Result<Self, GeoError> {
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(GeoError::TooFewVertices(vertices.len()));
        }
        for i in 0..vertices.len() {
            if vertices[i] == vertices[(i + 1) % vertices.len()] {
                return Err(GeoError::RepeatedVertex(i));
            }
        }
        Ok(Self { vertices })
    }

    /// Axis-aligned square of half-size `half_m` meters around `center`.
    pub fn square_around(center: GeoPoint, half_m: f64) -> Result<Self, GeoError> {
        Self::new(vec![
            center.offset_m(-half_m, -half_m),
            center.offset_m(-half_m, half_m),
            center.offset_m(half_m, half_m),
            center.offset_m(half_m, -half_m),
        ])
    }

    pub fn vertices(&self) -> &[GeoPoint] {
        &self.vertices
    }

    /// Arithmetic mean of the vertices.
    pub fn centroid(&self) -> GeoPoint {
        let n = self.vertices.len() as f64;
        let lat = self.vertices.iter().map(|v| v.lat).sum::<f64>() / n;
        let lon = self.vertices.iter().map(|v| v.lon).sum::<f64>() / n;
        GeoPoint { lat, lon }
    }

    fn check_supported(&self) -> Result<(), GeoError> {
        let n = self.vertices.len();
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
            if (a.lon - b.lon).abs() > 180.0 || a.lat.abs() == 90.0 {
                return Err(GeoError::UnsupportedRegion);
            }
        }
        Ok(())
    }
}

/// Boundary-inclusive containment test.
pub fn point_in_polygon(p: GeoPoint, poly: &GeoPolygon) -> Result<bool, GeoError> {
    poly.check_supported()?;
    let c = poly.centroid();
    let k = c.lat.to_radians().cos();
    let project = |q: GeoPoint| ((q.lon - c.lon) * k, q.lat - c.lat);
    let (px, py) = project(p);
    let verts: Vec<(f64, f64)> = poly.vertices.iter().map(|&v| project(v)).collect();
    let n = verts.len();

    for i in 0..n {
        if on_segment((px, py), verts[i], verts[(i + 1) % n]) {
            return Ok(true);
        }
    }

    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = verts[i];
        let (xj, yj) = verts[j];
        if (yi > py) != (yj > py) {
            let x_cross = xi + (py - yi) * (xj - xi) / (yj - yi);
            if px < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    Ok(inside)
}

fn on_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> bool {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len = (dx * dx + dy * dy).sqrt();
    if len == 0.0 {
        return (p.0 - a.0).hypot(p.1 - a.1) <= BOUNDARY_EPS;
    }
    let cross = (p.0 - a.0) * dy - (p.1 - a.1) * dx;
    if cross.abs() / len > BOUNDARY_EPS {
        return false;
    }
    let t = ((p.0 - a.0) * dx + (p.1 - a.1) * dy) / (len * len);
    (-BOUNDARY_EPS..=1.0 + BOUNDARY_EPS).contains(&t)
}
