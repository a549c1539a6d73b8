//! Candidate regions and the blended temporal/social ranking score.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::regions::{RegionMap, SiteId};
use crate::detection::{decayed_weight, Sste};
use crate::error::{Result, SsteError};
use crate::ingestion::{friends_of, CheckinSequence, FriendshipGraph, UserId};

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const DEFAULT_HALF_LIFE: f64 = 7.0 * SECONDS_PER_DAY as f64;

/// Hour of the week in UTC, Monday 00:00 = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HourOfWeekBucket(u8);

impl HourOfWeekBucket {
    pub fn from_epoch(t: i64) -> Self {
        let day = t.div_euclid(SECONDS_PER_DAY);
        // 1970-01-01 was a Thursday.
        let dow = (day + 3).rem_euclid(7);
        let hour = t.rem_euclid(SECONDS_PER_DAY) / 3600;
        HourOfWeekBucket((dow * 24 + hour) as u8)
    }

    pub fn new(value: u8) -> Result<Self> {
        if value >= 168 {
            return Err(SsteError::invalid("bucket", "must be in 0..168"));
        }
        Ok(HourOfWeekBucket(value))
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

/// A conditional probability that may be undefined (empty conditioning set).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalScore {
    pub value: f64,
    pub defined: bool,
}

/// Per-bucket region counts of a user's past events.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TemporalCounts {
    by_bucket: BTreeMap<HourOfWeekBucket, BTreeMap<SiteId, usize>>,
    n_events: usize,
}

impl TemporalCounts {
    pub fn from_events<'a>(events: impl IntoIterator<Item = &'a Sste>, map: &RegionMap) -> Self {
        let mut counts = TemporalCounts::default();
        for e in events {
            let cell = counts
                .by_bucket
                .entry(HourOfWeekBucket::from_epoch(e.time))
                .or_default();
            *cell.entry(map.assign(&e.coords)).or_default() += 1;
            counts.n_events += 1;
        }
        counts
    }

    pub fn n_events(&self) -> usize {
        self.n_events
    }

    pub fn count(&self, bucket: HourOfWeekBucket) -> usize {
        self.by_bucket.get(&bucket).map_or(0, |m| m.values().sum())
    }

    pub fn count_in(&self, region: SiteId, bucket: HourOfWeekBucket) -> usize {
        self.by_bucket
            .get(&bucket)
            .and_then(|m| m.get(&region))
            .copied()
            .unwrap_or(0)
    }

    /// `(count(λ, b) + α) / (count(b) + α·n_candidates)`.
    pub fn score(
        &self,
        region: SiteId,
        bucket: HourOfWeekBucket,
        alpha: f64,
        n_candidates: usize,
    ) -> TemporalScore {
        let den = self.count(bucket) as f64 + alpha * n_candidates as f64;
        if den <= 0.0 {
            return TemporalScore {
                value: 0.0,
                defined: false,
            };
        }
        TemporalScore {
            value: (self.count_in(region, bucket) as f64 + alpha) / den,
            defined: true,
        }
    }
}

pub fn temporal_score(
    u_history: &[Sste],
    region: SiteId,
    bucket: HourOfWeekBucket,
    map: &RegionMap,
    alpha: f64,
    n_candidates: usize,
) -> TemporalScore {
    TemporalCounts::from_events(u_history, map).score(region, bucket, alpha, n_candidates)
}

/// Recency-weighted region mass of a user's friends' check-ins before a cutoff.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SocialWeights {
    by_region: BTreeMap<SiteId, f64>,
    total: f64,
}

impl SocialWeights {
    /// Friend check-ins strictly before `cutoff`, weighted relative to `tau_hat`.
    /// `region_of` maps a check-in id to its region.
    #[allow(clippy::too_many_arguments)]
    fn collect(
        checkins: &CheckinSequence,
        graph: &FriendshipGraph,
        u: &UserId,
        tau_hat: i64,
        cutoff: i64,
        half_life: f64,
        region_of: impl Fn(usize) -> SiteId,
    ) -> Result<Self> {
        let cutoff = cutoff.min(tau_hat);
        let mut w = SocialWeights::default();
        for f in friends_of(graph, u) {
            for (id, r) in checkins.user_checkins_before(f, cutoff) {
                let weight = decayed_weight(r, tau_hat, half_life)?;
                *w.by_region.entry(region_of(id)).or_default() += weight;
                w.total += weight;
            }
        }
        Ok(w)
    }

    pub fn new(
        checkins: &CheckinSequence,
        graph: &FriendshipGraph,
        u: &UserId,
        tau_hat: i64,
        map: &RegionMap,
        half_life: f64,
    ) -> Result<Self> {
        Self::collect(checkins, graph, u, tau_hat, tau_hat, half_life, |id| {
            map.assign(&checkins.records()[id].coords)
        })
    }

    pub fn score(&self, region: SiteId) -> f64 {
        if self.total > 0.0 {
            (self.by_region.get(&region).copied().unwrap_or(0.0) / self.total).min(1.0)
        } else {
            0.0
        }
    }
}

pub fn social_score(
    checkins: &CheckinSequence,
    graph: &FriendshipGraph,
    u: &UserId,
    region: SiteId,
    tau_hat: i64,
    map: &RegionMap,
    half_life: f64,
) -> Result<f64> {
    Ok(SocialWeights::new(checkins, graph, u, tau_hat, map, half_life)?.score(region))
}

fn collect_candidates(
    checkins: &CheckinSequence,
    graph: &FriendshipGraph,
    u: &UserId,
    u_history: &[Sste],
    cutoff: i64,
    map: &RegionMap,
    region_of: impl Fn(usize) -> SiteId,
) -> Result<BTreeSet<SiteId>> {
    let mut out: BTreeSet<SiteId> = u_history
        .iter()
        .filter(|e| e.time < cutoff)
        .map(|e| map.assign(&e.coords))
        .collect();
    for person in std::iter::once(u).chain(friends_of(graph, u)) {
        out.extend(
            checkins
                .user_checkins_before(person, cutoff)
                .map(|(id, _)| region_of(id)),
        );
    }
    if out.is_empty() {
        return Err(SsteError::NoCandidates {
            user: u.to_string(),
        });
    }
    Ok(out)
}

/// Regions of `u`'s and `u`'s friends' check-ins strictly before `cutoff`,
/// plus the regions of `u`'s past events.
pub fn candidate_regions(
    checkins: &CheckinSequence,
    graph: &FriendshipGraph,
    u: &UserId,
    u_history: &[Sste],
    cutoff: i64,
    map: &RegionMap,
) -> Result<BTreeSet<SiteId>> {
    collect_candidates(checkins, graph, u, u_history, cutoff, map, |id| {
        map.assign(&checkins.records()[id].coords)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedRegion {
    pub region: SiteId,
    pub g: f64,
    pub g_temporal: f64,
    pub g_social: f64,
}

/// Scoring inputs shared by every query against one dataset, with the
/// region of every check-in resolved once.
#[derive(Debug, Clone)]
pub struct LocationContext<'a> {
    checkins: &'a CheckinSequence,
    graph: &'a FriendshipGraph,
    map: &'a RegionMap,
    alpha: f64,
    half_life: f64,
    regions: Vec<SiteId>,
}

/// Temporal and social scores of every candidate region for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScores {
    /// `(region, g_temporal, g_social)` in ascending region order.
    pub scores: Vec<(SiteId, f64, f64)>,
    pub temporal_defined: bool,
}

impl<'a> LocationContext<'a> {
    pub fn new(
        checkins: &'a CheckinSequence,
        graph: &'a FriendshipGraph,
        map: &'a RegionMap,
        alpha: f64,
        half_life: f64,
    ) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(SsteError::invalid("alpha", "must be finite and >= 0"));
        }
        if !(half_life > 0.0) {
            return Err(SsteError::invalid("half_life", "must be > 0"));
        }
        let regions = checkins
            .records()
            .iter()
            .map(|r| map.assign(&r.coords))
            .collect();
        Ok(LocationContext {
            checkins,
            graph,
            map,
            alpha,
            half_life,
            regions,
        })
    }

    pub fn map(&self) -> &RegionMap {
        self.map
    }

    /// Scores all candidates for `u` at `tau_hat`. `history` holds the
    /// user's past events; only data strictly before `cutoff` (clamped to
    /// `tau_hat`) feeds the candidate set, the temporal counts and the
    /// social score.
    pub fn score_candidates(
        &self,
        u: &UserId,
        history: &[Sste],
        tau_hat: i64,
        cutoff: i64,
    ) -> Result<CandidateScores> {
        let cutoff = cutoff.min(tau_hat);
        let region_of = |id: usize| self.regions[id];
        let candidates = collect_candidates(
            self.checkins,
            self.graph,
            u,
            history,
            cutoff,
            self.map,
            region_of,
        )?;
        let counts =
            TemporalCounts::from_events(history.iter().filter(|e| e.time < cutoff), self.map);
        let social = SocialWeights::collect(
            self.checkins,
            self.graph,
            u,
            tau_hat,
            cutoff,
            self.half_life,
            region_of,
        )?;
        let bucket = HourOfWeekBucket::from_epoch(tau_hat);
        let mut temporal_defined = true;
        let scores = candidates
            .iter()
            .map(|&r| {
                let t = counts.score(r, bucket, self.alpha, candidates.len());
                temporal_defined &= t.defined;
                (r, t.value, social.score(r))
            })
            .collect();
        Ok(CandidateScores {
            scores,
            temporal_defined,
        })
    }

    pub fn rank_locations(
        &self,
        u: &UserId,
        history: &[Sste],
        tau_hat: i64,
        xi: f64,
        top_n: usize,
    ) -> Result<Vec<RankedRegion>> {
        rank(
            &self.score_candidates(u, history, tau_hat, tau_hat)?,
            xi,
            top_n,
        )
    }
}

/// Blends scores with weight `xi` and returns the best `top_n`, ordered by
/// `g` descending then region id ascending.
pub fn rank(candidates: &CandidateScores, xi: f64, top_n: usize) -> Result<Vec<RankedRegion>> {
    if !(0.0..=1.0).contains(&xi) {
        return Err(SsteError::invalid("xi", "must be in [0, 1]"));
    }
    if top_n == 0 {
        return Err(SsteError::invalid("top_n", "must be >= 1"));
    }
    let mut ranked: Vec<RankedRegion> = candidates
        .scores
        .iter()
        .map(|&(region, g_temporal, g_social)| RankedRegion {
            region,
            g: xi * g_temporal + (1.0 - xi) * g_social,
            g_temporal,
            g_social,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.g.partial_cmp(&a.g)
            .unwrap_or(Ordering::Equal)
            .then(a.region.cmp(&b.region))
    });
    ranked.truncate(top_n);
    Ok(ranked)
}

/// One line of the prediction JSONL output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationPrediction {
    pub user: UserId,
    /// Predicted next interval in seconds, before the floor is applied.
    pub interval_hat: f64,
    pub clamped: bool,
    pub tau_hat: i64,
    pub predictions: Vec<RankedRegion>,
}
