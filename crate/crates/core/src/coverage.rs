//! RSRP grid for sectorized sites: log-distance pathloss, parabolic antenna
//! pattern, best server per cell.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::Point;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadioConfig {
    pub tx_power_dbm: f64,
    pub max_gain_dbi: f64,
    pub azimuths_deg: Vec<f64>,
    pub downtilt_deg: f64,
    pub antenna_height_m: f64,
    pub h_beamwidth_deg: f64,
    pub v_beamwidth_deg: f64,
    pub max_attenuation_db: f64,
    pub pathloss_ref_db: f64,
    pub ref_distance_m: f64,
    pub pathloss_exponent: f64,
    /// Constant added to every RSRP value.
    pub rsrp_offset_db: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            // 50 W
            tx_power_dbm: 10.0 * 50_000f64.log10(),
            max_gain_dbi: 15.0,
            azimuths_deg: vec![0.0, 120.0, 240.0],
            downtilt_deg: 10.0,
            antenna_height_m: 30.0,
            h_beamwidth_deg: 65.0,
            v_beamwidth_deg: 10.0,
            max_attenuation_db: 30.0,
            pathloss_ref_db: 60.0,
            ref_distance_m: 10.0,
            pathloss_exponent: 3.5,
            rsrp_offset_db: 0.0,
        }
    }
}

pub const COVERAGE_THRESHOLD_DBM: f64 = -80.0;
pub const STRONG_THRESHOLD_DBM: f64 = -60.0;

/// `PL_ref + 10·n·log10(max(d, d_ref)/d_ref)`.
pub fn pathloss(distance_m: f64, config: &RadioConfig) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::Precondition(format!("pathloss distance must be positive, got {distance_m}")));
    }
    let d = distance_m.max(config.ref_distance_m);
    Ok(config.pathloss_ref_db + 10.0 * config.pathloss_exponent * (d / config.ref_distance_m).log10())
}

/// Gain in dBi at horizontal offset `phi` and vertical offset `psi` (degrees)
/// from boresight.
pub fn antenna_gain(phi_deg: f64, psi_deg: f64, config: &RadioConfig) -> f64 {
    let h = 12.0 * (phi_deg / config.h_beamwidth_deg).powi(2);
    let v = 12.0 * (psi_deg / config.v_beamwidth_deg).powi(2);
    config.max_gain_dbi - (h + v).min(config.max_attenuation_db)
}

/// Wraps an angle into [-180, 180).
fn wrap_deg(a: f64) -> f64 {
    (a + 180.0).rem_euclid(360.0) - 180.0
}

/// Best-sector RSRP at `point` from one site.
pub fn site_rsrp(site: &Point, point: &Point, config: &RadioConfig) -> f64 {
    let dx = point.x - site.x;
    let dy = point.y - site.y;
    let horizontal = dx.hypot(dy);
    let slant = horizontal.hypot(config.antenna_height_m).max(f64::MIN_POSITIVE);
    // clockwise from north
    let bearing = dx.atan2(dy).to_degrees();
    let depression = config.antenna_height_m.atan2(horizontal).to_degrees();
    let psi = depression - config.downtilt_deg;
    let pl = pathloss(slant, config).expect("positive slant distance");
    config
        .azimuths_deg
        .iter()
        .map(|az| {
            let phi = wrap_deg(bearing - az);
            config.tx_power_dbm + antenna_gain(phi, psi, config) - pl + config.rsrp_offset_db
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Cell-centred raster in local metres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// South-west corner.
    pub origin: Point,
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn cell_center(&self, ix: usize, iy: usize) -> Point {
        Point {
            x: self.origin.x + (ix as f64 + 0.5) * self.cell_size,
            y: self.origin.y + (iy as f64 + 0.5) * self.cell_size,
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid covering `points` plus `margin` on each side.
    pub fn covering(points: &[Point], margin: f64, cell_size: f64) -> Result<Self> {
        if points.is_empty() || !(cell_size > 0.0) {
            return Err(Error::Precondition("grid needs points and a positive cell size".into()));
        }
        let bbox = crate::geo::BBox::from_points(points);
        let nx = ((bbox.width() + 2.0 * margin) / cell_size).ceil().max(1.0) as usize;
        let ny = ((bbox.height() + 2.0 * margin) / cell_size).ceil().max(1.0) as usize;
        Ok(Self {
            origin: Point {
                x: bbox.min.x - margin,
                y: bbox.min.y - margin,
            },
            cell_size,
            nx,
            ny,
        })
    }
}

/// Row-major values: cell `(ix, iy)` at `iy·nx + ix`.
#[derive(Clone, Debug, PartialEq)]
pub struct RsrpGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl RsrpGrid {
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.spec.nx + ix]
    }
}

pub fn rsrp_grid(sites: &[Point], spec: &GridSpec, config: &RadioConfig) -> Result<RsrpGrid> {
    if sites.is_empty() {
        return Err(Error::Precondition("coverage needs at least one site".into()));
    }
    if !(spec.cell_size > 0.0) || spec.is_empty() {
        return Err(Error::Precondition("grid needs a positive cell size and at least one cell".into()));
    }
    let mut values = vec![0.0; spec.len()];
    values
        .par_chunks_mut(spec.nx)
        .enumerate()
        .for_each(|(iy, row)| {
            for (ix, v) in row.iter_mut().enumerate() {
                let p = spec.cell_center(ix, iy);
                *v = sites
                    .iter()
                    .map(|s| site_rsrp(s, &p, config))
                    .fold(f64::NEG_INFINITY, f64::max);
            }
        });
    Ok(RsrpGrid {
        spec: spec.clone(),
        values,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub frac_above_80: f64,
    pub frac_above_60: f64,
    pub min_dbm: f64,
    pub mean_dbm: f64,
}

pub fn coverage_stats(values: &[f64]) -> Result<CoverageStats> {
    if values.is_empty() {
        return Err(Error::Precondition("coverage statistics of an empty grid".into()));
    }
    let n = values.len() as f64;
    let above = |t: f64| values.iter().filter(|&&v| v > t).count() as f64 / n;
    Ok(CoverageStats {
        frac_above_80: above(COVERAGE_THRESHOLD_DBM),
        frac_above_60: above(STRONG_THRESHOLD_DBM),
        min_dbm: values.iter().copied().fold(f64::INFINITY, f64::min),
        mean_dbm: values.iter().sum::<f64>() / n,
    })
}

/// `x,y,rsrp_dbm` per cell centre, rows south to north.
pub fn grid_to_csv(grid: &RsrpGrid) -> String {
    let mut out = String::from("x,y,rsrp_dbm\n");
    for iy in 0..grid.spec.ny {
        for ix in 0..grid.spec.nx {
            let p = grid.spec.cell_center(ix, iy);
            out.push_str(&format!("{},{},{}\n", p.x, p.y, grid.at(ix, iy)));
        }
    }
    out
}

pub const RASTER_MAGIC: &[u8; 8] = b"TPRSRP01";

#[derive(Serialize, Deserialize)]
struct RasterHeader {
    origin_x: f64,
    origin_y: f64,
    cell_size: f64,
    nx: usize,
    ny: usize,
    dtype: String,
    order: String,
}

/// Magic, u32 LE header length, JSON header, then `nx·ny` f64 LE values in
/// row-major order.
pub fn grid_to_raster(grid: &RsrpGrid) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&RasterHeader {
        origin_x: grid.spec.origin.x,
        origin_y: grid.spec.origin.y,
        cell_size: grid.spec.cell_size,
        nx: grid.spec.nx,
        ny: grid.spec.ny,
        dtype: "f64le".into(),
        order: "row-major".into(),
    })?;
    let mut out = Vec::with_capacity(12 + header.len() + 8 * grid.values.len());
    out.extend_from_slice(RASTER_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in &grid.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn raster_to_grid(bytes: &[u8]) -> Result<RsrpGrid> {
    let bad = |m: &str| Error::Schema(format!("raster: {m}"));
    if bytes.len() < 12 || &bytes[..8] != RASTER_MAGIC {
        return Err(bad("bad magic"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: RasterHeader = serde_json::from_slice(body)?;
    if header.dtype != "f64le" {
        return Err(bad("unsupported dtype"));
    }
    let data = &bytes[12 + hlen..];
    if data.len() != 8 * header.nx * header.ny {
        return Err(bad("value count does not match dimensions"));
    }
    let values = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(RsrpGrid {
        spec: GridSpec {
            origin: Point {
                x: header.origin_x,
                y: header.origin_y,
            },
            cell_size: header.cell_size,
            nx: header.nx,
            ny: header.ny,
        },
        values,
    })
}

/// Writes `<stem>.csv` and `<stem>.bin`.
pub fn write_grid(grid: &RsrpGrid, dir: &Path, stem: &str) -> Result<()> {
    let csv_path = dir.join(format!("{stem}.csv"));
    fs::write(&csv_path, grid_to_csv(grid)).map_err(|e| Error::io(&csv_path, e))?;
    let bin_path = dir.join(format!("{stem}.bin"));
    let mut f = fs::File::create(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    f.write_all(&grid_to_raster(grid)?).map_err(|e| Error::io(&bin_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RadioConfig {
        RadioConfig::default()
    }

    #[test]
    fn defaults_match_fifty_watts_and_sector_layout() {
        let c = cfg();
        assert!((c.tx_power_dbm - 46.9897).abs() < 0.01);
        assert_eq!(c.azimuths_deg, vec![0.0, 120.0, 240.0]);
        assert_eq!(c.downtilt_deg, 10.0);
    }

    #[test]
    fn pathloss_examples() {
        let c = cfg();
        assert_eq!(pathloss(10.0, &c).unwrap(), 60.0);
        assert!((pathloss(100.0, &c).unwrap() - 95.0).abs() < 1e-12);
        assert_eq!(pathloss(2.0, &c).unwrap(), 60.0);
        assert!(pathloss(0.0, &c).is_err());
        assert!(pathloss(-1.0, &c).is_err());
    }

    #[test]
    fn gain_examples() {
        let c = cfg();
        assert_eq!(antenna_gain(0.0, 0.0, &c), 15.0);
        assert!((antenna_gain(65.0, 0.0, &c) - 3.0).abs() < 1e-12);
        assert_eq!(antenna_gain(180.0, 0.0, &c), -15.0);
    }

    #[test]
    fn single_link_matches_hand_calculation() {
        let c = cfg();
        let site = Point { x: 0.0, y: 0.0 };
        // 10 m due north, on the 0° sector boresight
        let v = site_rsrp(&site, &Point { x: 0.0, y: 10.0 }, &c);
        let slant = (100.0f64 + 900.0).sqrt();
        let psi = (30.0f64 / 10.0).atan().to_degrees() - 10.0;
        let gain = 15.0 - (12.0 * (psi / 10.0).powi(2)).min(30.0);
        let expected = 46.98970004336019 + gain - (60.0 + 35.0 * (slant / 10.0).log10());
        assert!((v - expected).abs() < 0.01, "{v} vs {expected}");
    }

    #[test]
    fn rsrp_non_increasing_along_boresight() {
        let c = cfg();
        let site = Point { x: 0.0, y: 0.0 };
        // beyond the distance where the beam centre meets the ground
        let start = 30.0 / 10f64.to_radians().tan();
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let d = start + 5.0 * i as f64;
            let v = site_rsrp(&site, &Point { x: 0.0, y: d }, &c);
            assert!(v <= prev + 1e-12);
            prev = v;
        }
    }

    #[test]
    fn stats_examples() {
        let s = coverage_stats(&[-50.0, -70.0, -90.0]).unwrap();
        assert!((s.frac_above_80 - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.frac_above_60 - 1.0 / 3.0).abs() < 1e-15);
        let s = coverage_stats(&[-59.0; 4]).unwrap();
        assert_eq!((s.frac_above_80, s.frac_above_60), (1.0, 1.0));
        assert!(coverage_stats(&[]).is_err());
    }

    #[test]
    fn raster_round_trip() {
        let spec = GridSpec {
            origin: Point { x: -10.0, y: 5.0 },
            cell_size: 20.0,
            nx: 4,
            ny: 3,
        };
        let g = rsrp_grid(&[Point { x: 0.0, y: 0.0 }], &spec, &cfg()).unwrap();
        let back = raster_to_grid(&grid_to_raster(&g).unwrap()).unwrap();
        assert_eq!(back, g);
        let csv = grid_to_csv(&g);
        assert_eq!(csv.lines().count(), 13);
        assert!(csv.starts_with("x,y,rsrp_dbm\n0,15,"));
    }

    #[test]
    fn empty_sites_rejected() {
        let spec = GridSpec {
            origin: Point { x: 0.0, y: 0.0 },
            cell_size: 10.0,
            nx: 2,
            ny: 2,
        };
        assert!(rsrp_grid(&[], &spec, &cfg()).is_err());
    }
}
