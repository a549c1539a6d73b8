//! Social spatial-temporal event detection.
//!
//! A group is feasible when its check-ins are pairwise within `epsilon_time`
//! and `epsilon_dist`, its distinct users induce a connected subgraph of the
//! friendship graph, and it has at least `min_participants` distinct users.
//! Check-ins are scanned in global time order; the earliest unclaimed
//! check-in that belongs to any feasible group anchors the next event, which
//! is the largest feasible group whose earliest member is that anchor (ties
//! go to the lexicographically smallest member-id list). Members are then
//! claimed and cannot join a later event.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SsteError};
use crate::geo::LatLon;
use crate::ingestion::{
    friends_of, read_file, write_file, Checkin, CheckinSequence, FriendshipGraph, UserId,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionParams {
    /// Maximum pairwise time gap in seconds.
    pub epsilon_time: i64,
    /// Maximum pairwise great-circle distance in meters.
    pub epsilon_dist: f64,
    pub min_participants: usize,
}

impl Default for DetectionParams {
    fn default() -> Self {
        DetectionParams {
            epsilon_time: 3600,
            epsilon_dist: 200.0,
            min_participants: 2,
        }
    }
}

impl DetectionParams {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon_time <= 0 {
            return Err(SsteError::invalid("epsilon_time", "must be > 0"));
        }
        if !(self.epsilon_dist > 0.0) || !self.epsilon_dist.is_finite() {
            return Err(SsteError::invalid(
                "epsilon_dist",
                "must be a finite value > 0",
            ));
        }
        if self.min_participants < 2 {
            return Err(SsteError::invalid("min_participants", "must be >= 2"));
        }
        Ok(())
    }
}

/// A detected social event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sste {
    pub id: usize,
    pub participants: BTreeSet<UserId>,
    /// Ascending check-in ids (positions in the [`CheckinSequence`]).
    pub member_checkins: Vec<usize>,
    /// Median member time, epoch seconds.
    pub time: i64,
    /// Centroid of member coordinates.
    pub coords: LatLon,
}

/// Time-ordered events of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSequence {
    pub user: UserId,
    pub events: Vec<Sste>,
}

impl EventSequence {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = i64> + '_ {
        self.events.iter().map(|e| e.time)
    }
}

/// Gaps in seconds between consecutive events of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSeries {
    pub user: UserId,
    pub values: Vec<f64>,
}

/// Checks whether `members` (check-in ids) satisfy all four detection conditions.
pub fn is_feasible_group(
    checkins: &CheckinSequence,
    graph: &FriendshipGraph,
    params: &DetectionParams,
    members: &[usize],
) -> bool {
    let recs: Vec<&Checkin> = members.iter().map(|&i| &checkins.records()[i]).collect();
    for (a, ra) in recs.iter().enumerate() {
        for rb in &recs[a + 1..] {
            if (ra.time - rb.time).abs() > params.epsilon_time
                || ra.coords.distance_m(&rb.coords) > params.epsilon_dist
            {
                return false;
            }
        }
    }
    let users: BTreeSet<&UserId> = recs.iter().map(|r| &r.user).collect();
    users.len() >= params.min_participants && is_connected(graph, &users)
}

fn is_connected(graph: &FriendshipGraph, users: &BTreeSet<&UserId>) -> bool {
    let Some(&start) = users.iter().next() else {
        return false;
    };
    let reached = component(graph, start, users);
    reached.len() == users.len()
}

/// Users of `within` reachable from `start` over friendship edges inside `within`.
fn component<'a>(
    graph: &FriendshipGraph,
    start: &'a UserId,
    within: &BTreeSet<&'a UserId>,
) -> BTreeSet<&'a UserId> {
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        for &v in within {
            if !seen.contains(v) && graph.are_friends(u, v) {
                seen.insert(v);
                queue.push_back(v);
            }
        }
    }
    seen
}

pub fn detect_sstes(
    checkins: &CheckinSequence,
    graph: &FriendshipGraph,
    params: &DetectionParams,
) -> Result<Vec<Sste>> {
    params.validate()?;
    let recs = checkins.records();
    let mut claimed = vec![false; recs.len()];
    let mut events = Vec::new();

    for anchor in 0..recs.len() {
        if claimed[anchor] || friends_of(graph, &recs[anchor].user).is_empty() {
            continue;
        }
        let window: Vec<usize> = (anchor + 1..recs.len())
            .take_while(|&j| recs[j].time - recs[anchor].time <= params.epsilon_time)
            .filter(|&j| {
                !claimed[j]
                    && recs[anchor].coords.distance_m(&recs[j].coords) <= params.epsilon_dist
            })
            .collect();
        if window.is_empty() {
            continue;
        }
        if let Some(members) = best_group(checkins, graph, params, anchor, &window) {
            for &m in &members {
                claimed[m] = true;
            }
            events.push(build_event(events.len(), recs, members));
        }
    }
    tracing::debug!(
        events = events.len(),
        checkins = recs.len(),
        "detection finished"
    );
    Ok(events)
}

/// Largest feasible group anchored at `anchor`, drawn from `window`.
fn best_group(
    checkins: &CheckinSequence,
    graph: &FriendshipGraph,
    params: &DetectionParams,
    anchor: usize,
    window: &[usize],
) -> Option<Vec<usize>> {
    let recs = checkins.records();
    let n = window.len();
    let compatible: Vec<Vec<bool>> = (0..n)
        .map(|a| {
            (0..n)
                .map(|b| {
                    a != b
                        && recs[window[a]].coords.distance_m(&recs[window[b]].coords)
                            <= params.epsilon_dist
                })
                .collect()
        })
        .collect();

    let mut cliques = Vec::new();
    bron_kerbosch(
        &compatible,
        &mut Vec::new(),
        (0..n).collect(),
        Vec::new(),
        &mut cliques,
    );

    let mut best: Option<Vec<usize>> = None;
    for clique in cliques {
        let mut members: Vec<usize> = std::iter::once(anchor)
            .chain(clique.iter().map(|&k| window[k]))
            .collect();
        members.sort_unstable();
        let users: BTreeSet<&UserId> = members.iter().map(|&m| &recs[m].user).collect();
        let comp = component(graph, &recs[anchor].user, &users);
        if comp.len() < params.min_participants {
            continue;
        }
        members.retain(|&m| comp.contains(&recs[m].user));
        let better = match &best {
            None => true,
            Some(b) => members.len() > b.len() || (members.len() == b.len() && members < *b),
        };
        if better {
            best = Some(members);
        }
    }
    best
}

/// Maximal cliques of the graph given by `adj`, with pivoting.
fn bron_kerbosch(
    adj: &[Vec<bool>],
    r: &mut Vec<usize>,
    p: Vec<usize>,
    x: Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if p.is_empty() {
        if x.is_empty() {
            out.push(r.clone());
        }
        return;
    }
    let pivot = p
        .iter()
        .chain(x.iter())
        .copied()
        .max_by_key(|&u| p.iter().filter(|&&v| adj[u][v]).count())
        .expect("p is non-empty");
    let mut p = p;
    let mut x = x;
    let candidates: Vec<usize> = p.iter().copied().filter(|&v| !adj[pivot][v]).collect();
    for v in candidates {
        r.push(v);
        let np = p.iter().copied().filter(|&w| adj[v][w]).collect();
        let nx = x.iter().copied().filter(|&w| adj[v][w]).collect();
        bron_kerbosch(adj, r, np, nx, out);
        r.pop();
        p.retain(|&w| w != v);
        x.push(v);
    }
}

fn build_event(id: usize, recs: &[Checkin], members: Vec<usize>) -> Sste {
    let mut times: Vec<i64> = members.iter().map(|&m| recs[m].time).collect();
    times.sort_unstable();
    let mid = times.len() / 2;
    let time = if times.len() % 2 == 1 {
        times[mid]
    } else {
        (times[mid - 1] + times[mid]) / 2
    };
    let coords =
        LatLon::centroid(members.iter().map(|&m| &recs[m].coords)).expect("non-empty group");
    Sste {
        id,
        participants: members.iter().map(|&m| recs[m].user.clone()).collect(),
        member_checkins: members,
        time,
        coords,
    }
}

/// Events involving `u`, ordered by time. Events sharing a timestamp with an
/// earlier one are dropped so that times are strictly increasing.
pub fn event_sequence(events: &[Sste], u: &UserId) -> EventSequence {
    let mut mine: Vec<Sste> = events
        .iter()
        .filter(|e| e.participants.contains(u))
        .cloned()
        .collect();
    mine.sort_by_key(|e| (e.time, e.id));
    mine.dedup_by_key(|e| e.time);
    EventSequence {
        user: u.clone(),
        events: mine,
    }
}

/// Event sequences for every participant appearing in `events`.
pub fn event_sequences(events: &[Sste]) -> BTreeMap<UserId, EventSequence> {
    let users: BTreeSet<&UserId> = events.iter().flat_map(|e| e.participants.iter()).collect();
    users
        .into_iter()
        .map(|u| (u.clone(), event_sequence(events, u)))
        .collect()
}

pub fn interval_series(seq: &EventSequence) -> Result<IntervalSeries> {
    if seq.events.len() < 2 {
        return Err(SsteError::InsufficientHistory {
            needed: 2,
            got: seq.events.len(),
        });
    }
    let values = seq
        .events
        .windows(2)
        .map(|w| (w[1].time - w[0].time) as f64)
        .collect();
    Ok(IntervalSeries {
        user: seq.user.clone(),
        values,
    })
}

/// Recency weight `2^(-(now - r.time) / half_life)`.
pub fn decayed_weight(r: &Checkin, now: i64, half_life: f64) -> Result<f64> {
    if !(half_life > 0.0) {
        return Err(SsteError::invalid("half_life", "must be > 0"));
    }
    if now < r.weight_anchor() {
        return Err(SsteError::FutureCheckin {
            checkin_time: r.weight_anchor(),
            now,
        });
    }
    Ok((-((now - r.weight_anchor()) as f64) / half_life).exp2())
}

/// One line of the events JSONL export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_id: usize,
    pub time: i64,
    pub lat: f64,
    pub lon: f64,
    pub participants: Vec<UserId>,
    pub checkin_ids: Vec<usize>,
}

impl From<&Sste> for EventRecord {
    fn from(e: &Sste) -> Self {
        EventRecord {
            event_id: e.id,
            time: e.time,
            lat: e.coords.lat,
            lon: e.coords.lon,
            participants: e.participants.iter().cloned().collect(),
            checkin_ids: e.member_checkins.clone(),
        }
    }
}

impl From<EventRecord> for Sste {
    fn from(r: EventRecord) -> Self {
        Sste {
            id: r.event_id,
            participants: r.participants.into_iter().collect(),
            member_checkins: r.checkin_ids,
            time: r.time,
            coords: LatLon::new(r.lat, r.lon),
        }
    }
}

pub fn events_to_jsonl(events: &[Sste]) -> Result<String> {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(&EventRecord::from(e))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_events(path: &Path, events: &[Sste]) -> Result<()> {
    write_file(path, &events_to_jsonl(events)?)
}

pub fn read_events(path: &Path) -> Result<Vec<Sste>> {
    let text = read_file(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<EventRecord>(l)
                .map(Sste::from)
                .map_err(|e| SsteError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::CheckinSequence;

    fn graph(edges: &[(&str, &str)]) -> FriendshipGraph {
        let mut g = FriendshipGraph::new();
        for (a, b) in edges {
            g.add_edge((*a).into(), (*b).into()).unwrap();
        }
        g
    }

    fn seq(rows: &[(&str, i64, f64, f64)]) -> CheckinSequence {
        CheckinSequence::from_records(
            rows.iter()
                .map(|&(u, t, la, lo)| Checkin::new(u, t, la, lo))
                .collect(),
        )
        .unwrap()
    }

    // ~10 m north of the base point
    const BASE: (f64, f64) = (41.8800, -87.6300);
    const NEAR: (f64, f64) = (41.88009, -87.6300);

    #[test]
    fn two_friends_form_one_event() {
        let c = seq(&[("a", 1000, BASE.0, BASE.1), ("b", 1060, NEAR.0, NEAR.1)]);
        let ev = detect_sstes(&c, &graph(&[("a", "b")]), &DetectionParams::default()).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].participants.len(), 2);
        assert_eq!(ev[0].time, 1030);
    }

    #[test]
    fn strangers_form_no_event() {
        let c = seq(&[("a", 1000, BASE.0, BASE.1), ("b", 1060, NEAR.0, NEAR.1)]);
        let mut g = graph(&[("a", "x"), ("b", "y")]);
        g.add_person("a".into());
        assert!(detect_sstes(&c, &g, &DetectionParams::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn connected_path_is_enough() {
        let c = seq(&[
            ("a", 1000, BASE.0, BASE.1),
            ("b", 1010, NEAR.0, NEAR.1),
            ("c", 1020, BASE.0, BASE.1),
        ]);
        let ev = detect_sstes(
            &c,
            &graph(&[("a", "b"), ("b", "c")]),
            &DetectionParams::default(),
        )
        .unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].participants.len(), 3);
        assert_eq!(ev[0].member_checkins, vec![0, 1, 2]);
    }

    #[test]
    fn bridging_member_arriving_last_still_joins() {
        // a and c are not friends; b connects them but checks in last.
        let c = seq(&[
            ("a", 1000, BASE.0, BASE.1),
            ("c", 1010, NEAR.0, NEAR.1),
            ("b", 1020, BASE.0, BASE.1),
        ]);
        let ev = detect_sstes(
            &c,
            &graph(&[("a", "b"), ("b", "c")]),
            &DetectionParams::default(),
        )
        .unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].participants.len(), 3);
    }

    #[test]
    fn too_far_or_too_late() {
        let g = graph(&[("a", "b")]);
        let far = seq(&[
            ("a", 1000, BASE.0, BASE.1),
            ("b", 1000, BASE.0 + 0.01, BASE.1),
        ]);
        assert!(detect_sstes(&far, &g, &DetectionParams::default())
            .unwrap()
            .is_empty());
        let late = seq(&[("a", 1000, BASE.0, BASE.1), ("b", 4601, BASE.0, BASE.1)]);
        assert!(detect_sstes(&late, &g, &DetectionParams::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn rejects_bad_params() {
        let c = seq(&[]);
        let g = graph(&[]);
        let bad = DetectionParams {
            epsilon_time: 0,
            ..Default::default()
        };
        assert!(detect_sstes(&c, &g, &bad).unwrap_err().is_usage());
        let bad = DetectionParams {
            min_participants: 1,
            ..Default::default()
        };
        assert!(detect_sstes(&c, &g, &bad).is_err());
    }

    fn ev(id: usize, users: &[&str], time: i64) -> Sste {
        Sste {
            id,
            participants: users.iter().map(|&u| u.into()).collect(),
            member_checkins: vec![],
            time,
            coords: LatLon::new(0.0, 0.0),
        }
    }

    #[test]
    fn event_sequence_examples() {
        let events = vec![ev(0, &["a", "b"], 100), ev(1, &["b", "c"], 200)];
        assert_eq!(event_sequence(&events, &"b".into()).len(), 2);
        assert_eq!(event_sequence(&events, &"a".into()).len(), 1);
        assert!(event_sequence(&[], &"a".into()).is_empty());
    }

    #[test]
    fn interval_series_examples() {
        let s = EventSequence {
            user: "a".into(),
            events: vec![ev(0, &["a"], 100), ev(1, &["a"], 400), ev(2, &["a"], 900)],
        };
        assert_eq!(interval_series(&s).unwrap().values, vec![300.0, 500.0]);
        let s = EventSequence {
            user: "a".into(),
            events: vec![ev(0, &["a"], 0), ev(1, &["a"], 86400)],
        };
        assert_eq!(interval_series(&s).unwrap().values, vec![86400.0]);
        let s = EventSequence {
            user: "a".into(),
            events: vec![ev(0, &["a"], 0)],
        };
        assert!(matches!(
            interval_series(&s),
            Err(SsteError::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn decayed_weight_examples() {
        let r = Checkin::new("a", 1000, 0.0, 0.0);
        let h = 7.0 * 86400.0;
        assert_eq!(decayed_weight(&r, 1000, h).unwrap(), 1.0);
        assert!((decayed_weight(&r, 1000 + 604_800, h).unwrap() - 0.5).abs() < 1e-15);
        assert!((decayed_weight(&r, 1000 + 2 * 604_800, h).unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(
            decayed_weight(&r, 999, h),
            Err(SsteError::FutureCheckin { .. })
        ));
    }

    #[test]
    fn jsonl_round_trip() {
        let events = vec![ev(0, &["a", "b"], 100)];
        let text = events_to_jsonl(&events).unwrap();
        assert!(text.starts_with("{\"event_id\":0,\"time\":100,"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        write_events(&path, &events).unwrap();
        assert_eq!(read_events(&path).unwrap(), events);
    }
}
