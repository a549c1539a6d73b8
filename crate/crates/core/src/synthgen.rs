//! Synthetic data: ARMA interval streams and check-in datasets with planted
//! periodic and social structure.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::arma::{is_stationary, max_inverse_root_modulus};
use crate::detection::{write_events, Sste};
use crate::error::{Result, SsteError};
use crate::geo::{LatLon, EARTH_RADIUS_M};
use crate::ingestion::{Checkin, CheckinSequence, FriendshipGraph, UserId};
use crate::location::{RegionMap, Site, SECONDS_PER_DAY};

pub const BURN_IN: usize = 100;

/// Replaces the AR coefficients from emitted sample `step` onwards.
#[derive(Debug, Clone, PartialEq)]
pub struct Drift {
    pub step: usize,
    pub phi: Vec<f64>,
}

/// Runs `x_t = Σ φ_i x_{t-i} + ε_t - Σ θ_j ε_{t-j}` forward from a zero
/// state with Gaussian noise, discarding the first [`BURN_IN`] samples.
pub fn generate_arma_stream(
    phi: &[f64],
    theta: &[f64],
    sigma2: f64,
    n: usize,
    seed: u64,
    drift: &[Drift],
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(SsteError::invalid("n", "must be >= 1"));
    }
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(SsteError::invalid("sigma2", "must be finite and >= 0"));
    }
    for coeffs in std::iter::once(phi).chain(drift.iter().map(|d| d.phi.as_slice())) {
        if !is_stationary(coeffs) {
            return Err(SsteError::UnstableAr {
                modulus: max_inverse_root_modulus(coeffs),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise =
        Normal::new(0.0, sigma2.sqrt()).map_err(|e| SsteError::invalid("sigma2", e.to_string()))?;
    let mut schedule: Vec<&Drift> = drift.iter().collect();
    schedule.sort_by_key(|d| d.step);

    let total = n + BURN_IN;
    let mut x = Vec::with_capacity(total);
    let mut eps = Vec::with_capacity(total);
    let mut current = phi.to_vec();
    let mut next_drift = 0;
    for t in 0..total {
        while next_drift < schedule.len() && schedule[next_drift].step + BURN_IN <= t {
            current = schedule[next_drift].phi.clone();
            next_drift += 1;
        }
        let e = if sigma2 > 0.0 {
            noise.sample(&mut rng)
        } else {
            0.0
        };
        let mut v = e;
        for (i, c) in current.iter().enumerate() {
            if t > i {
                v += c * x[t - 1 - i];
            }
        }
        for (j, c) in theta.iter().enumerate() {
            if t > j {
                v -= c * eps[t - 1 - j];
            }
        }
        x.push(v);
        eps.push(e);
    }
    Ok(x.split_off(BURN_IN))
}

/// Monday 2024-01-01 00:00:00 UTC.
pub const DEFAULT_START: i64 = 1_704_067_200;
const WEEK: i64 = 7 * SECONDS_PER_DAY;
/// Copied locations must be at least this old so the friend's own check-in
/// cannot be grouped with the meetup.
const COPY_LOOKBACK: i64 = 3 * 3600;

/// Parameters of the planted check-in dataset.
///
/// Users are partitioned into friend groups that meet at fixed weekly
/// hour-of-week slots. Each slot has a home region; a meetup lands there with
/// probability `schedule_concentration`, otherwise at one of the group's
/// alternate regions. With probability `beta` the meetup instead goes to the
/// most recent location of a member's friend from another group.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub n_users: usize,
    pub group_size: usize,
    /// Probability of a friendship edge between users of different groups.
    pub edge_prob: f64,
    pub n_regions: usize,
    pub center: LatLon,
    /// Half-width of the square site layout in meters.
    pub extent_m: f64,
    pub weeks: usize,
    pub slots_per_group: usize,
    pub alt_regions: usize,
    pub schedule_concentration: f64,
    pub beta: f64,
    pub attend_prob: f64,
    /// AR coefficient of the per-slot meeting-time offset process.
    pub offset_phi: f64,
    /// Innovation standard deviation of the offset process, seconds.
    pub offset_sd: f64,
    /// Offsets are clipped to this many seconds either side of the slot's half hour.
    pub offset_clip: f64,
    /// Per-member check-in time jitter bound, seconds.
    pub member_time_jitter: i64,
    /// Per-member check-in position jitter bound, meters.
    pub member_dist_jitter: f64,
    pub noise_per_week: f64,
    /// Offset-process drift: from week `step` on, the AR coefficient becomes `phi[0]`.
    pub drift: Vec<Drift>,
    pub start: i64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_users: 60,
            group_size: 4,
            edge_prob: 0.05,
            n_regions: 50,
            center: LatLon::new(41.85, -87.65),
            extent_m: 10_000.0,
            weeks: 104,
            slots_per_group: 1,
            alt_regions: 2,
            schedule_concentration: 0.85,
            beta: 0.3,
            attend_prob: 1.0,
            offset_phi: 0.6,
            offset_sd: 2700.0,
            offset_clip: 10_800.0,
            member_time_jitter: 600,
            member_dist_jitter: 50.0,
            noise_per_week: 2.0,
            drift: Vec::new(),
            start: DEFAULT_START,
            seed: 42,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(SsteError::invalid(name, "must be in [0, 1]"))
            }
        };
        prob("edge_prob", self.edge_prob)?;
        prob("schedule_concentration", self.schedule_concentration)?;
        prob("beta", self.beta)?;
        prob("attend_prob", self.attend_prob)?;
        if self.n_users == 0 {
            return Err(SsteError::invalid("n_users", "must be >= 1"));
        }
        if self.group_size < 2 {
            return Err(SsteError::invalid("group_size", "must be >= 2"));
        }
        if self.n_regions == 0 {
            return Err(SsteError::invalid("n_regions", "must be >= 1"));
        }
        if self.weeks == 0 || self.slots_per_group == 0 {
            return Err(SsteError::invalid(
                "weeks",
                "weeks and slots_per_group must be >= 1",
            ));
        }
        if self.slots_per_group > 168 {
            return Err(SsteError::invalid(
                "slots_per_group",
                "at most 168 weekly slots",
            ));
        }
        if !self.center.is_valid() {
            return Err(SsteError::invalid("center", "invalid coordinates"));
        }
        for (name, v) in [
            ("extent_m", self.extent_m),
            ("offset_sd", self.offset_sd),
            ("offset_clip", self.offset_clip),
            ("member_dist_jitter", self.member_dist_jitter),
            ("noise_per_week", self.noise_per_week),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SsteError::invalid(name, "must be finite and >= 0"));
            }
        }
        if self.member_time_jitter < 0 {
            return Err(SsteError::invalid("member_time_jitter", "must be >= 0"));
        }
        for c in std::iter::once(&[self.offset_phi][..])
            .chain(self.drift.iter().map(|d| d.phi.as_slice()))
        {
            if c.len() != 1 || !is_stationary(c) {
                return Err(SsteError::invalid(
                    "offset_phi",
                    "must be a single coefficient with |phi| < 1",
                ));
            }
        }
        Ok(())
    }
}

/// A generated dataset together with its planted events.
#[derive(Debug, Clone, PartialEq)]
pub struct SocialDataset {
    pub checkins: CheckinSequence,
    pub graph: FriendshipGraph,
    pub sites: RegionMap,
    /// Planted meetups; `member_checkins` index into `checkins`.
    pub events: Vec<Sste>,
}

impl SocialDataset {
    /// Writes `checkins.csv`, `friends.csv`, `sites.csv` and `ground_truth_events.jsonl`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|source| SsteError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        self.checkins.write_csv(&dir.join("checkins.csv"))?;
        self.graph.write_csv(&dir.join("friends.csv"))?;
        self.sites.write_csv(&dir.join("sites.csv"))?;
        write_events(&dir.join("ground_truth_events.jsonl"), &self.events)
    }
}

struct Slot {
    bucket: i64,
    home: usize,
}

struct Group {
    members: Vec<usize>,
    slots: Vec<Slot>,
    alternates: Vec<usize>,
}

/// Offsets `(east, north)` in meters to a coordinate.
fn displace(p: &LatLon, east: f64, north: f64) -> LatLon {
    let dlat = (north / EARTH_RADIUS_M).to_degrees();
    let dlon = (east / (EARTH_RADIUS_M * p.lat.to_radians().cos())).to_degrees();
    LatLon::new(p.lat + dlat, p.lon + dlon)
}

fn jitter_in_disc(rng: &mut ChaCha8Rng, p: &LatLon, radius: f64) -> LatLon {
    if radius <= 0.0 {
        return *p;
    }
    // uniform in the disc; the 0.49 factor keeps two members within one radius
    let r = radius * 0.49 * rng.random::<f64>().sqrt();
    let a = rng.random::<f64>() * std::f64::consts::TAU;
    displace(p, r * a.cos(), r * a.sin())
}

pub fn generate_social_dataset(cfg: &GeneratorConfig) -> Result<SocialDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let width = (cfg.n_users - 1).to_string().len();
    let names: Vec<UserId> = (0..cfg.n_users)
        .map(|i| UserId::new(format!("u{i:0width$}")))
        .collect();

    let sites: Vec<Site> = (0..cfg.n_regions)
        .map(|i| {
            let east = (rng.random::<f64>() * 2.0 - 1.0) * cfg.extent_m;
            let north = (rng.random::<f64>() * 2.0 - 1.0) * cfg.extent_m;
            Site {
                id: i as u32,
                coords: displace(&cfg.center, east, north),
            }
        })
        .collect();

    // groups and their weekly slots; buckets are globally distinct while possible
    let mut order: Vec<usize> = (0..cfg.n_users).collect();
    order.shuffle(&mut rng);
    let mut free_buckets: Vec<i64> = (0..168).collect();
    free_buckets.shuffle(&mut rng);
    // slots of one group must not overlap even at maximal offsets
    let min_gap = (2.0 * cfg.offset_clip / 3600.0).ceil() as i64 + 2;
    let mut groups = Vec::new();
    for chunk in order.chunks(cfg.group_size) {
        let mut slots = Vec::new();
        for _ in 0..cfg.slots_per_group {
            if free_buckets.is_empty() {
                free_buckets = (0..168).collect();
                free_buckets.shuffle(&mut rng);
            }
            let spaced = |b: i64| {
                slots.iter().all(|s: &Slot| {
                    (b - s.bucket)
                        .rem_euclid(168)
                        .min((s.bucket - b).rem_euclid(168))
                        >= min_gap
                })
            };
            let pick = free_buckets
                .iter()
                .rposition(|&b| spaced(b))
                .unwrap_or(free_buckets.len() - 1);
            slots.push(Slot {
                bucket: free_buckets.remove(pick),
                home: rng.random_range(0..cfg.n_regions),
            });
        }
        slots.sort_by_key(|s| s.bucket);
        let alternates = (0..cfg.alt_regions)
            .map(|_| rng.random_range(0..cfg.n_regions))
            .collect();
        groups.push(Group {
            members: chunk.to_vec(),
            slots,
            alternates,
        });
    }
    let mut group_of = vec![0; cfg.n_users];
    for (g, group) in groups.iter().enumerate() {
        for &m in &group.members {
            group_of[m] = g;
        }
    }

    let mut graph = FriendshipGraph::new();
    for name in &names {
        graph.add_person(name.clone());
    }
    for group in &groups {
        for (i, &a) in group.members.iter().enumerate() {
            for &b in &group.members[i + 1..] {
                graph.add_edge(names[a].clone(), names[b].clone())?;
            }
        }
    }
    for a in 0..cfg.n_users {
        for b in a + 1..cfg.n_users {
            if group_of[a] != group_of[b] && rng.random::<f64>() < cfg.edge_prob {
                graph.add_edge(names[a].clone(), names[b].clone())?;
            }
        }
    }
    let cross_friends: Vec<Vec<usize>> = (0..cfg.n_users)
        .map(|a| {
            (0..cfg.n_users)
                .filter(|&b| group_of[b] != group_of[a] && graph.are_friends(&names[a], &names[b]))
                .collect()
        })
        .collect();

    // background check-ins, uniform in space and time
    let span = cfg.weeks as i64 * WEEK;
    let mut trails: Vec<Vec<(i64, LatLon)>> = vec![Vec::new(); cfg.n_users];
    let mut records: Vec<Checkin> = Vec::new();
    if cfg.noise_per_week > 0.0 {
        let poisson = Poisson::new(cfg.noise_per_week * cfg.weeks as f64)
            .map_err(|e| SsteError::invalid("noise_per_week", e.to_string()))?;
        for (u, trail) in trails.iter_mut().enumerate() {
            let k = poisson.sample(&mut rng) as usize;
            for _ in 0..k {
                let t = cfg.start + rng.random_range(0..span);
                let east = (rng.random::<f64>() * 2.0 - 1.0) * cfg.extent_m;
                let north = (rng.random::<f64>() * 2.0 - 1.0) * cfg.extent_m;
                let p = displace(&cfg.center, east, north);
                trail.push((t, p));
                records.push(Checkin::new(names[u].clone(), t, p.lat, p.lon));
            }
            trail.sort_by_key(|(t, _)| *t);
        }
    }

    // slot time offsets: AR(1) per (group, slot) with optional drift by week
    let offset_noise = Normal::new(0.0, cfg.offset_sd)
        .map_err(|e| SsteError::invalid("offset_sd", e.to_string()))?;
    let mut meetups: Vec<(i64, usize, usize)> = Vec::new();
    for (g, group) in groups.iter().enumerate() {
        for (s, slot) in group.slots.iter().enumerate() {
            let mut offset = 0.0;
            for w in 0..cfg.weeks {
                let phi = cfg
                    .drift
                    .iter()
                    .filter(|d| d.step <= w)
                    .max_by_key(|d| d.step)
                    .map_or(cfg.offset_phi, |d| d.phi[0]);
                offset = phi * offset
                    + if cfg.offset_sd > 0.0 {
                        offset_noise.sample(&mut rng)
                    } else {
                        0.0
                    };
                let clipped = offset.clamp(-cfg.offset_clip, cfg.offset_clip);
                let t = cfg.start
                    + w as i64 * WEEK
                    + slot.bucket * 3600
                    + 1800
                    + clipped.round() as i64;
                meetups.push((t, g, s));
            }
        }
    }
    meetups.sort();

    let mut meetup_trails: Vec<Vec<(i64, LatLon)>> = vec![Vec::new(); cfg.n_users];
    let last_location =
        |u: usize, t: i64, meet: &Vec<Vec<(i64, LatLon)>>| -> Option<(i64, LatLon)> {
            let noise = &trails[u];
            let n = noise.partition_point(|(nt, _)| *nt < t);
            let a = (n > 0).then(|| noise[n - 1]);
            let b = meet[u].iter().rev().find(|(mt, _)| *mt < t).copied();
            match (a, b) {
                (Some(x), Some(y)) => Some(if y.0 >= x.0 { y } else { x }),
                (x, y) => x.or(y),
            }
        };

    let mut planted: Vec<(i64, LatLon, Vec<usize>)> = Vec::new();
    let mut planted_members: Vec<Vec<usize>> = Vec::new();
    for (t, g, s) in meetups {
        let group = &groups[g];
        let attending: Vec<usize> = group
            .members
            .iter()
            .copied()
            .filter(|_| rng.random::<f64>() < cfg.attend_prob)
            .collect();
        if attending.len() < 2 {
            continue;
        }
        let scheduled =
            if rng.random::<f64>() < cfg.schedule_concentration || group.alternates.is_empty() {
                group.slots[s].home
            } else {
                *group.alternates.choose(&mut rng).expect("non-empty")
            };
        let mut place = sites[scheduled].coords;
        if rng.random::<f64>() < cfg.beta {
            let m = *attending.choose(&mut rng).expect("non-empty");
            if let Some(&f) = cross_friends[m].choose(&mut rng) {
                if let Some((_, loc)) = last_location(f, t - COPY_LOOKBACK, &meetup_trails) {
                    place = loc;
                }
            }
        }
        let mut ids = Vec::new();
        for &m in &attending {
            let jt = if cfg.member_time_jitter > 0 {
                rng.random_range(-cfg.member_time_jitter..=cfg.member_time_jitter)
            } else {
                0
            };
            let p = jitter_in_disc(&mut rng, &place, cfg.member_dist_jitter);
            ids.push(records.len());
            records.push(Checkin::new(names[m].clone(), t + jt, p.lat, p.lon));
            meetup_trails[m].push((t + jt, p));
        }
        for &m in &attending {
            meetup_trails[m].sort_by_key(|(mt, _)| *mt);
        }
        planted.push((t, place, ids));
        planted_members.push(attending);
    }

    let checkins = CheckinSequence::from_records(records)?;
    let mut position = vec![0; checkins.len()];
    for id in 0..checkins.len() {
        position[checkins.input_row(id)] = id;
    }
    let mut events: Vec<Sste> = planted
        .into_iter()
        .zip(planted_members)
        .map(|((t, place, ids), members)| {
            let mut member_checkins: Vec<usize> = ids.iter().map(|&i| position[i]).collect();
            member_checkins.sort_unstable();
            Sste {
                id: 0,
                participants: members
                    .iter()
                    .map(|&m| names[m].clone())
                    .collect::<BTreeSet<_>>(),
                member_checkins,
                time: t,
                coords: place,
            }
        })
        .collect();
    events.sort_by_key(|e| (e.time, e.member_checkins.clone()));
    for (i, e) in events.iter_mut().enumerate() {
        e.id = i;
    }
    let n_planted: BTreeMap<usize, usize> = events.iter().fold(BTreeMap::new(), |mut m, e| {
        *m.entry(e.participants.len()).or_default() += 1;
        m
    });
    tracing::debug!(
        checkins = checkins.len(),
        events = events.len(),
        ?n_planted,
        "synthetic dataset generated"
    );
    Ok(SocialDataset {
        checkins,
        graph,
        sites: RegionMap::new(sites)?,
        events,
    })
}
