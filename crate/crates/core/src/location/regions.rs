//! Discretisation of coordinates into nearest-site (Voronoi) regions.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SsteError};
use crate::geo::LatLon;
use crate::ingestion::{data_rows, read_file, write_file};

pub const SITES_HEADER: &str = "site_id,lat,lon";

pub type SiteId = u32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Site {
    pub id: SiteId,
    pub coords: LatLon,
}

/// Region lookup by nearest site. Sites are kept in ascending id order.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMap {
    sites: Vec<Site>,
}

impl RegionMap {
    pub fn new(mut sites: Vec<Site>) -> Result<Self> {
        if sites.is_empty() {
            return Err(SsteError::invalid("sites", "at least one site is required"));
        }
        sites.sort_by_key(|s| s.id);
        if sites.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(SsteError::invalid("sites", "site ids must be unique"));
        }
        if let Some(s) = sites.iter().find(|s| !s.coords.is_valid()) {
            return Err(SsteError::invalid(
                "sites",
                format!("site {} has invalid coordinates", s.id),
            ));
        }
        Ok(RegionMap { sites })
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Id of the nearest site; equal distances resolve to the lowest id.
    pub fn assign(&self, coords: &LatLon) -> SiteId {
        let mut best = (f64::INFINITY, self.sites[0].id);
        for s in &self.sites {
            let d = s.coords.distance_m(coords);
            if d < best.0 {
                best = (d, s.id);
            }
        }
        best.1
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = format!("{SITES_HEADER}\n");
        for s in &self.sites {
            out.push_str(&format!("{},{},{}\n", s.id, s.coords.lat, s.coords.lon));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_csv_string())
    }
}

pub fn assign_region(coords: &LatLon, map: &RegionMap) -> SiteId {
    map.assign(coords)
}

pub fn parse_sites(path: &Path) -> Result<RegionMap> {
    parse_sites_str(&read_file(path)?, path)
}

pub fn parse_sites_str(text: &str, path: &Path) -> Result<RegionMap> {
    let err = |line: usize, message: String| SsteError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut sites = Vec::new();
    let mut seen = BTreeSet::new();
    for (line_no, record) in data_rows(text, SITES_HEADER, path)? {
        let fields: Vec<&str> = record.iter().collect();
        if fields.len() != 3 {
            return Err(err(
                line_no,
                format!("expected 3 fields, found {}", fields.len()),
            ));
        }
        let id: SiteId = fields[0]
            .parse()
            .map_err(|_| err(line_no, format!("invalid site id {:?}", fields[0])))?;
        let num = |s: &str, what: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(line_no, format!("invalid {what} {s:?}")))
        };
        let coords = LatLon::new(num(fields[1], "latitude")?, num(fields[2], "longitude")?);
        if !coords.is_valid() {
            return Err(err(line_no, "coordinates out of range".into()));
        }
        if !seen.insert(id) {
            return Err(err(line_no, format!("duplicate site id {id}")));
        }
        sites.push(Site { id, coords });
    }
    if sites.is_empty() {
        return Err(err(1, "no sites".into()));
    }
    RegionMap::new(sites)
}

/// Sites from k-means over `points` (k-means++ seeding, Lloyd iterations with
/// great-circle assignment). `k` is capped at the number of distinct points.
pub fn kmeans_sites(points: &[LatLon], k: usize, seed: u64, max_iter: usize) -> Result<RegionMap> {
    if k == 0 {
        return Err(SsteError::invalid("n_sites", "must be >= 1"));
    }
    let mut distinct: Vec<LatLon> = Vec::new();
    {
        let mut keys = BTreeSet::new();
        for p in points {
            if keys.insert((p.lat.to_bits(), p.lon.to_bits())) {
                distinct.push(*p);
            }
        }
    }
    if distinct.is_empty() {
        return Err(SsteError::invalid("sites", "no points to cluster"));
    }
    let k = k.min(distinct.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centers = vec![distinct[rng.random_range(0..distinct.len())]];
    let mut nearest: Vec<f64> = distinct
        .iter()
        .map(|p| p.distance_m(&centers[0]).powi(2))
        .collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = distinct.len() - 1;
            for (i, w) in nearest.iter().enumerate() {
                if target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            break;
        };
        centers.push(distinct[next]);
        for (i, p) in distinct.iter().enumerate() {
            nearest[i] = nearest[i].min(p.distance_m(&distinct[next]).powi(2));
        }
    }

    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (c, center) in centers.iter().enumerate() {
                let d = p.distance_m(center);
                if d < best.0 {
                    best = (d, c);
                }
            }
            if labels[i] != best.1 {
                labels[i] = best.1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members = points
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == c)
                .map(|(p, _)| p);
            if let Some(m) = LatLon::centroid(members) {
                *center = m;
            }
        }
    }
    RegionMap::new(
        centers
            .into_iter()
            .enumerate()
            .map(|(i, coords)| Site {
                id: i as SiteId,
                coords,
            })
            .collect(),
    )
}
