//! Planar geometry and the local lat/lon projection used on ingestion.

use serde::{Deserialize, Serialize};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min: Point,
    pub max: Point,
}

impl BBox {
    /// Tight bounding box of a point set. Returns a degenerate box at the
    /// origin for an empty iterator.
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point>) -> Self {
        let mut min = Point::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut any = false;
        for p in points {
            any = true;
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        if !any {
            return Self {
                min: Point::default(),
                max: Point::default(),
            };
        }
        Self { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn center(&self) -> Point {
        Point::new(
            0.5 * (self.min.x + self.max.x),
            0.5 * (self.min.y + self.max.y),
        )
    }

    /// Position scaled to [0,1] per axis; a zero-extent axis maps to 0.5.
    pub fn unit_coords(&self, p: &Point) -> (f64, f64) {
        let scale = |v: f64, lo: f64, span: f64| {
            if span > 0.0 {
                ((v - lo) / span).clamp(0.0, 1.0)
            } else {
                0.5
            }
        };
        (
            scale(p.x, self.min.x, self.width()),
            scale(p.y, self.min.y, self.height()),
        )
    }
}

/// Geographic anchor of the planar frame: the point (0, 0) in meters sits at
/// this latitude/longitude. Projection is local equirectangular.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoAnchor {
    pub lat: f64,
    pub lon: f64,
}

impl GeoAnchor {
    pub const fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn project(&self, lat: f64, lon: f64) -> Point {
        let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        Point::new(
            k * (lon - self.lon) * self.lat.to_radians().cos(),
            k * (lat - self.lat),
        )
    }

    /// Inverse of [`GeoAnchor::project`]; returns `(lat, lon)`.
    pub fn unproject(&self, p: &Point) -> (f64, f64) {
        let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        let lat = self.lat + p.y / k;
        let lon = self.lon + p.x / (k * self.lat.to_radians().cos());
        (lat, lon)
    }

    /// Anchor at the centre of the lat/lon bounds of a set of coordinates.
    pub fn centroid_of(coords: impl IntoIterator<Item = (f64, f64)>) -> Option<Self> {
        let mut lat_lo = f64::INFINITY;
        let mut lat_hi = f64::NEG_INFINITY;
        let mut lon_lo = f64::INFINITY;
        let mut lon_hi = f64::NEG_INFINITY;
        let mut any = false;
        for (lat, lon) in coords {
            any = true;
            lat_lo = lat_lo.min(lat);
            lat_hi = lat_hi.max(lat);
            lon_lo = lon_lo.min(lon);
            lon_hi = lon_hi.max(lon);
        }
        any.then(|| Self::new(0.5 * (lat_lo + lat_hi), 0.5 * (lon_lo + lon_hi)))
    }
}
