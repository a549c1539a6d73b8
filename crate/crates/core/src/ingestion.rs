//! Check-in and friendship-graph loading.
//!
//! Both inputs are comma-separated text with an optional one-line header:
//! `user_id,timestamp,lat,lon` for check-ins and `user_id_a,user_id_b` for
//! friendships. Reported line numbers are physical (1-based) file lines.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SsteError};
use crate::geo::LatLon;

pub const CHECKINS_HEADER: &str = "user_id,timestamp,lat,lon";
pub const FRIENDS_HEADER: &str = "user_id_a,user_id_b";

/// Person identifier as it appears in the input files.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(String);

impl UserId {
    pub fn new(id: impl Into<String>) -> Self {
        UserId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for UserId {
    fn from(s: &str) -> Self {
        UserId(s.to_string())
    }
}

/// One timestamped, geolocated record of a person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkin {
    pub user: UserId,
    /// Epoch seconds.
    pub time: i64,
    pub coords: LatLon,
}

impl Checkin {
    pub fn new(user: impl Into<UserId>, time: i64, lat: f64, lon: f64) -> Self {
        Checkin {
            user: user.into(),
            time,
            coords: LatLon::new(lat, lon),
        }
    }

    /// Time from which the recency weight of this check-in decays.
    pub fn weight_anchor(&self) -> i64 {
        self.time
    }
}

/// Globally time-sorted check-ins with a per-user position index.
///
/// Positions into [`CheckinSequence::records`] double as stable check-in ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckinSequence {
    records: Vec<Checkin>,
    input_rows: Vec<usize>,
    user_index: BTreeMap<UserId, Vec<usize>>,
}

impl CheckinSequence {
    /// Builds a sequence from records in input order. Ties on time are broken
    /// by user id, then by input position.
    pub fn from_records(records: Vec<Checkin>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if !r.coords.is_valid() {
                return Err(SsteError::invalid(
                    "coords",
                    format!(
                        "record {i} has out-of-range coordinates ({}, {})",
                        r.coords.lat, r.coords.lon
                    ),
                ));
            }
            if r.time < 0 {
                return Err(SsteError::invalid(
                    "time",
                    format!("record {i} has a negative timestamp"),
                ));
            }
        }
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (&records[a], &records[b]);
            ra.time
                .cmp(&rb.time)
                .then_with(|| ra.user.cmp(&rb.user))
                .then(a.cmp(&b))
        });
        let mut slots: Vec<Option<Checkin>> = records.into_iter().map(Some).collect();
        let mut sorted = Vec::with_capacity(slots.len());
        let mut user_index: BTreeMap<UserId, Vec<usize>> = BTreeMap::new();
        for (pos, &row) in order.iter().enumerate() {
            let r = slots[row].take().expect("each row taken once");
            user_index.entry(r.user.clone()).or_default().push(pos);
            sorted.push(r);
        }
        Ok(CheckinSequence {
            records: sorted,
            input_rows: order,
            user_index,
        })
    }

    pub fn records(&self) -> &[Checkin] {
        &self.records
    }

    pub fn get(&self, id: usize) -> Option<&Checkin> {
        self.records.get(id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Original input row (0-based, data rows only) of the record at `id`.
    pub fn input_row(&self, id: usize) -> usize {
        self.input_rows[id]
    }

    pub fn n_users(&self) -> usize {
        self.user_index.len()
    }

    pub fn users(&self) -> impl Iterator<Item = &UserId> {
        self.user_index.keys()
    }

    /// Ascending-time positions of `user`'s check-ins.
    pub fn positions_of(&self, user: &UserId) -> &[usize] {
        self.user_index.get(user).map(Vec::as_slice).unwrap_or(&[])
    }

    /// `user`'s check-ins with time strictly before `before`.
    pub fn user_checkins_before<'a>(
        &'a self,
        user: &UserId,
        before: i64,
    ) -> impl Iterator<Item = (usize, &'a Checkin)> + 'a {
        let pos = self.positions_of(user);
        let end = pos.partition_point(|&i| self.records[i].time < before);
        pos[..end].iter().map(move |&i| (i, &self.records[i]))
    }

    pub fn to_csv_string(&self) -> String {
        let rows = self.records.iter().map(|r| {
            [
                r.user.to_string(),
                r.time.to_string(),
                r.coords.lat.to_string(),
                r.coords.lon.to_string(),
            ]
        });
        csv_string(CHECKINS_HEADER, rows)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_csv_string())
    }
}

/// Undirected friendship graph.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FriendshipGraph {
    adjacency: BTreeMap<UserId, BTreeSet<UserId>>,
    n_edges: usize,
}

impl FriendshipGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_person(&mut self, u: UserId) {
        self.adjacency.entry(u).or_default();
    }

    /// Adds an undirected edge; returns false when it already existed.
    pub fn add_edge(&mut self, a: UserId, b: UserId) -> Result<bool> {
        if a == b {
            return Err(SsteError::invalid("edge", format!("self-loop on {a}")));
        }
        let inserted = self
            .adjacency
            .entry(a.clone())
            .or_default()
            .insert(b.clone());
        self.adjacency.entry(b).or_default().insert(a);
        if inserted {
            self.n_edges += 1;
        }
        Ok(inserted)
    }

    pub fn persons(&self) -> impl Iterator<Item = &UserId> {
        self.adjacency.keys()
    }

    pub fn contains(&self, u: &UserId) -> bool {
        self.adjacency.contains_key(u)
    }

    pub fn n_persons(&self) -> usize {
        self.adjacency.len()
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn are_friends(&self, a: &UserId, b: &UserId) -> bool {
        self.adjacency.get(a).is_some_and(|n| n.contains(b))
    }

    /// Edges as ordered pairs `(a, b)` with `a < b`.
    pub fn edges(&self) -> impl Iterator<Item = (&UserId, &UserId)> {
        self.adjacency
            .iter()
            .flat_map(|(a, ns)| ns.iter().filter(move |b| a < *b).map(move |b| (a, b)))
    }

    pub fn to_csv_string(&self) -> String {
        csv_string(
            FRIENDS_HEADER,
            self.edges().map(|(a, b)| [a.as_str(), b.as_str()]),
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_csv_string())
    }
}

/// Neighbor set of `u`; empty when `u` is unknown or isolated.
pub fn friends_of<'a>(graph: &'a FriendshipGraph, u: &UserId) -> &'a BTreeSet<UserId> {
    static EMPTY: BTreeSet<UserId> = BTreeSet::new();
    graph.adjacency.get(u).unwrap_or(&EMPTY)
}

pub fn parse_checkins(path: &Path) -> Result<CheckinSequence> {
    parse_checkins_str(&read_file(path)?, path)
}

pub fn parse_checkins_str(text: &str, path: &Path) -> Result<CheckinSequence> {
    let err = |line: usize, message: String| SsteError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut records = Vec::new();
    for (line_no, record) in data_rows(text, CHECKINS_HEADER, path)? {
        let fields: Vec<&str> = record.iter().collect();
        if fields.len() != 4 {
            return Err(err(
                line_no,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let user = fields[0];
        if user.is_empty() {
            return Err(err(line_no, "empty user id".into()));
        }
        let time: i64 = fields[1]
            .parse()
            .map_err(|_| err(line_no, format!("non-numeric timestamp `{}`", fields[1])))?;
        if time < 0 {
            return Err(err(line_no, format!("negative timestamp {time}")));
        }
        let lat: f64 = fields[2]
            .parse()
            .map_err(|_| err(line_no, format!("non-numeric latitude `{}`", fields[2])))?;
        let lon: f64 = fields[3]
            .parse()
            .map_err(|_| err(line_no, format!("non-numeric longitude `{}`", fields[3])))?;
        let coords = LatLon::new(lat, lon);
        if !coords.is_valid() {
            return Err(err(
                line_no,
                format!("coordinates out of range ({lat}, {lon})"),
            ));
        }
        records.push(Checkin {
            user: UserId::new(user),
            time,
            coords,
        });
    }
    CheckinSequence::from_records(records)
}

pub fn parse_friendship(path: &Path) -> Result<FriendshipGraph> {
    parse_friendship_str(&read_file(path)?, path)
}

pub fn parse_friendship_str(text: &str, path: &Path) -> Result<FriendshipGraph> {
    let err = |line: usize, message: String| SsteError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut graph = FriendshipGraph::new();
    for (line_no, record) in data_rows(text, FRIENDS_HEADER, path)? {
        let fields: Vec<&str> = record.iter().collect();
        if fields.len() != 2 {
            return Err(err(
                line_no,
                format!("expected 2 fields, found {}", fields.len()),
            ));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(err(line_no, "empty user id".into()));
        }
        if fields[0] == fields[1] {
            return Err(err(line_no, format!("self-loop on `{}`", fields[0])));
        }
        graph.add_edge(UserId::new(fields[0]), UserId::new(fields[1]))?;
    }
    Ok(graph)
}

/// Non-blank rows split on commas, skipping a leading header line.
/// Data rows of a comma-separated file with their 1-based line numbers. A
/// first line equal to `header` is skipped, as are blank lines.
pub(crate) fn data_rows(
    text: &str,
    header: &str,
    path: &Path,
) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let line_of = |pos: Option<&csv::Position>| pos.map_or(0, |p| p.line() as usize);
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| SsteError::Parse {
            path: path.to_path_buf(),
            line: line_of(e.position()),
            message: e.to_string(),
        })?;
        let line = line_of(record.position());
        let blank = record.len() == 1 && record[0].is_empty();
        let is_header = line == 1 && record.iter().eq(header.split(','));
        if !blank && !is_header {
            rows.push((line, record));
        }
    }
    Ok(rows)
}

/// Serialises rows with quoting where a field needs it.
pub(crate) fn csv_string<I, R>(header: &str, rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(header.split(','))
        .and_then(|()| rows.into_iter().try_for_each(|r| writer.write_record(r)))
        .expect("writing to memory cannot fail");
    let bytes = writer.into_inner().expect("writing to memory cannot fail");
    String::from_utf8(bytes).expect("fields are UTF-8")
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| SsteError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| SsteError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("mem.csv")
    }

    #[test]
    fn sorts_by_time() {
        let seq = parse_checkins_str(
            "user_id,timestamp,lat,lon\nu1,100,10.0,20.0\nu2,50,11.0,21.0\n",
            p(),
        )
        .unwrap();
        let users: Vec<_> = seq
            .records()
            .iter()
            .map(|r| (r.user.as_str(), r.time))
            .collect();
        assert_eq!(users, vec![("u2", 50), ("u1", 100)]);
        assert_eq!(seq.input_row(0), 1);
        assert_eq!(seq.n_users(), 2);
    }

    #[test]
    fn empty_file_is_empty_sequence() {
        let seq = parse_checkins_str("", p()).unwrap();
        assert!(seq.is_empty());
        assert_eq!(seq.n_users(), 0);
        let seq = parse_checkins_str("user_id,timestamp,lat,lon\n", p()).unwrap();
        assert!(seq.is_empty());
    }

    #[test]
    fn bad_timestamp_names_line() {
        let e = parse_checkins_str("u1,abc,10,20\n", p()).unwrap_err();
        match e {
            SsteError::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        let e = parse_checkins_str("user_id,timestamp,lat,lon\nu1,abc,10,20\n", p()).unwrap_err();
        assert!(e.to_string().contains(":2:"), "{e}");
    }

    #[test]
    fn coordinates_out_of_range() {
        assert!(parse_checkins_str("u1,1,91.0,0\n", p()).is_err());
        assert!(parse_checkins_str("u1,1,0,-180.5\n", p()).is_err());
        assert!(parse_checkins_str("u1,1,10\n", p()).is_err());
    }

    #[test]
    fn ties_broken_by_user_then_row() {
        let seq = parse_checkins_str("b,5,0,0\na,5,1,1\nb,5,2,2\n", p()).unwrap();
        let rows: Vec<_> = (0..3).map(|i| seq.input_row(i)).collect();
        assert_eq!(rows, vec![1, 0, 2]);
        assert_eq!(seq.positions_of(&"b".into()), &[1, 2]);
    }

    #[test]
    fn quoted_ids_round_trip() {
        let text = "user_id,timestamp,lat,lon\n\"Smith, J\",7,1.5,2.5\n\nplain,8,0,0\n";
        let seq = parse_checkins_str(text, p()).unwrap();
        assert_eq!(seq.records()[0].user.as_str(), "Smith, J");
        assert_eq!(seq.to_csv_string(), text.replace("\n\n", "\n"));
        let again = parse_checkins_str(&seq.to_csv_string(), p()).unwrap();
        assert_eq!(again, seq);
    }

    #[test]
    fn friendship_dedups_reversed_edges() {
        let g = parse_friendship_str("user_id_a,user_id_b\na,b\nb,a\n", p()).unwrap();
        assert_eq!(g.n_edges(), 1);
    }

    #[test]
    fn friendship_adjacency() {
        let g = parse_friendship_str("a,b\nb,c\n", p()).unwrap();
        let fb: Vec<_> = friends_of(&g, &"b".into())
            .iter()
            .map(UserId::as_str)
            .collect();
        assert_eq!(fb, vec!["a", "c"]);
    }

    #[test]
    fn friendship_rejects_self_loop() {
        let e = parse_friendship_str("a,b\na,a\n", p()).unwrap_err();
        match e {
            SsteError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn friends_of_examples() {
        let g = parse_friendship_str("a,b\n", p()).unwrap();
        assert_eq!(friends_of(&g, &"a".into()).len(), 1);
        assert!(friends_of(&g, &"c".into()).is_empty());
        let g = parse_friendship_str("a,b\na,c\n", p()).unwrap();
        let fa: Vec<_> = friends_of(&g, &"a".into())
            .iter()
            .map(UserId::as_str)
            .collect();
        assert_eq!(fa, vec!["b", "c"]);
    }

    fn arb_checkin() -> impl Strategy<Value = Checkin> {
        ("[a-e]", 0i64..10_000, -90.0f64..=90.0, -180.0f64..=180.0)
            .prop_map(|(u, t, lat, lon)| Checkin::new(UserId::new(u), t, lat, lon))
    }

    proptest! {
        #[test]
        fn csv_round_trip(records in prop::collection::vec(arb_checkin(), 0..40)) {
            let seq = CheckinSequence::from_records(records.clone()).unwrap();
            let again = parse_checkins_str(&seq.to_csv_string(), p()).unwrap();
            prop_assert_eq!(seq.records(), again.records());
            let distinct: BTreeSet<_> = records.iter().map(|r| r.user.clone()).collect();
            prop_assert_eq!(seq.n_users(), distinct.len());
            prop_assert!(seq.records().windows(2).all(|w| w[0].time <= w[1].time));
        }

        #[test]
        fn adjacency_is_symmetric(pairs in prop::collection::vec(("[a-f]", "[a-f]"), 0..30)) {
            let mut g = FriendshipGraph::new();
            for (a, b) in &pairs {
                if a != b {
                    g.add_edge(UserId::new(a.as_str()), UserId::new(b.as_str())).unwrap();
                }
            }
            for u in g.persons() {
                for v in friends_of(&g, u) {
                    prop_assert!(friends_of(&g, v).contains(u));
                }
            }
        }
    }
}
