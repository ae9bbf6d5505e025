//! Session logs and their aggregation into (query, document, position) click triples.
//!
//! A session is one impression of a ranked result list for a query together with
//! the per-position click flags. Aggregating sessions gives, for every
//! `(query, doc, position)`, the number of impressions `m` and clicks `a`; the
//! click-through rate is `a / m`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Problems with a single session line or record.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("expected 3 tab-separated fields, found {0}")]
    FieldCount(usize),
    #[error("empty query id")]
    EmptyQuery,
    #[error("session has no documents")]
    NoDocuments,
    #[error("empty document id")]
    EmptyDocument,
    #[error("click flag {0:?} is not 0 or 1")]
    BadClickFlag(String),
    #[error("document {0:?} appears twice in one session")]
    DuplicateDocument(String),
    #[error("{docs} documents but {clicks} click flags")]
    LengthMismatch { docs: usize, clicks: usize },
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {source}")]
    Session {
        line: usize,
        #[source]
        source: RecordError,
    },
    #[error("line {line}: {message}")]
    Triple { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SplitError {
    #[error("test fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
}

/// One query impression: the ranked documents and which of them were clicked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub query_id: String,
    pub ranked_docs: Vec<String>,
    pub clicks: Vec<bool>,
}

impl SessionRecord {
    pub fn new(
        query_id: impl Into<String>,
        ranked_docs: Vec<String>,
        clicks: Vec<bool>,
    ) -> Result<Self, RecordError> {
        let record = Self {
            query_id: query_id.into(),
            ranked_docs,
            clicks,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        if self.query_id.is_empty() {
            return Err(RecordError::EmptyQuery);
        }
        if self.ranked_docs.is_empty() {
            return Err(RecordError::NoDocuments);
        }
        if self.ranked_docs.len() != self.clicks.len() {
            return Err(RecordError::LengthMismatch {
                docs: self.ranked_docs.len(),
                clicks: self.clicks.len(),
            });
        }
        let mut seen = HashSet::with_capacity(self.ranked_docs.len());
        for doc in &self.ranked_docs {
            if doc.is_empty() {
                return Err(RecordError::EmptyDocument);
            }
            if !seen.insert(doc.as_str()) {
                return Err(RecordError::DuplicateDocument(doc.clone()));
            }
        }
        Ok(())
    }

    /// Parses one `query<TAB>d1,d2,..<TAB>c1,c2,..` line.
    pub fn parse_line(line: &str) -> Result<Self, RecordError> {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(RecordError::FieldCount(fields.len()));
        }
        let ranked_docs = if fields[1].is_empty() {
            Vec::new()
        } else {
            fields[1].split(',').map(str::to_owned).collect()
        };
        let clicks = if fields[2].is_empty() {
            Vec::new()
        } else {
            fields[2]
                .split(',')
                .map(|flag| match flag {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(RecordError::BadClickFlag(other.to_owned())),
                })
                .collect::<Result<Vec<_>, _>>()?
        };
        Self::new(fields[0], ranked_docs, clicks)
    }

    pub fn to_line(&self) -> String {
        let flags: Vec<&str> = self
            .clicks
            .iter()
            .map(|&c| if c { "1" } else { "0" })
            .collect();
        format!(
            "{}\t{}\t{}",
            self.query_id,
            self.ranked_docs.join(","),
            flags.join(",")
        )
    }
}

/// A string interner handing out dense `u32` ids in first-seen order.
#[derive(Debug, Clone, Default)]
pub struct Interner {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// An ordered list of sessions with interned query and document ids.
///
/// Millions of sessions of ten documents each are common, so documents and
/// clicks are stored in flat arrays rather than one `SessionRecord` apiece.
#[derive(Debug, Clone, Default)]
pub struct SessionLog {
    queries: Interner,
    docs: Interner,
    session_query: Vec<u32>,
    offsets: Vec<usize>,
    doc_ids: Vec<u32>,
    clicks: Vec<bool>,
}

/// Borrowed view of one session inside a [`SessionLog`].
#[derive(Debug, Clone, Copy)]
pub struct SessionView<'a> {
    pub query: u32,
    pub docs: &'a [u32],
    pub clicks: &'a [bool],
}

impl SessionLog {
    pub fn new() -> Self {
        Self {
            offsets: vec![0],
            ..Default::default()
        }
    }

    pub fn from_records<'a>(
        records: impl IntoIterator<Item = &'a SessionRecord>,
    ) -> Result<Self, RecordError> {
        let mut log = Self::new();
        for record in records {
            log.push(record)?;
        }
        Ok(log)
    }

    pub fn push(&mut self, record: &SessionRecord) -> Result<(), RecordError> {
        record.validate()?;
        let query = self.queries.intern(&record.query_id);
        let docs: Vec<u32> = record
            .ranked_docs
            .iter()
            .map(|d| self.docs.intern(d))
            .collect();
        self.push_interned(query, &docs, &record.clicks);
        Ok(())
    }

    pub fn intern_query(&mut self, name: &str) -> u32 {
        self.queries.intern(name)
    }

    pub fn intern_doc(&mut self, name: &str) -> u32 {
        self.docs.intern(name)
    }

    /// Appends a session whose ids were obtained from this log's interners.
    /// The caller guarantees the documents are distinct.
    pub fn push_interned(&mut self, query: u32, docs: &[u32], clicks: &[bool]) {
        assert_eq!(docs.len(), clicks.len(), "docs and clicks differ in length");
        if self.offsets.is_empty() {
            self.offsets.push(0);
        }
        self.session_query.push(query);
        self.doc_ids.extend_from_slice(docs);
        self.clicks.extend_from_slice(clicks);
        self.offsets.push(self.doc_ids.len());
    }

    pub fn len(&self) -> usize {
        self.session_query.len()
    }

    pub fn is_empty(&self) -> bool {
        self.session_query.is_empty()
    }

    pub fn session(&self, i: usize) -> SessionView<'_> {
        let range = self.offsets[i]..self.offsets[i + 1];
        SessionView {
            query: self.session_query[i],
            docs: &self.doc_ids[range.clone()],
            clicks: &self.clicks[range],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = SessionView<'_>> + '_ {
        (0..self.len()).map(move |i| self.session(i))
    }

    pub fn record(&self, i: usize) -> SessionRecord {
        let view = self.session(i);
        SessionRecord {
            query_id: self.query_name(view.query).to_owned(),
            ranked_docs: view
                .docs
                .iter()
                .map(|&d| self.doc_name(d).to_owned())
                .collect(),
            clicks: view.clicks.to_vec(),
        }
    }

    pub fn query_name(&self, id: u32) -> &str {
        self.queries.name(id)
    }

    pub fn doc_name(&self, id: u32) -> &str {
        self.docs.name(id)
    }

    pub fn query_interner(&self) -> &Interner {
        &self.queries
    }

    pub fn doc_interner(&self) -> &Interner {
        &self.docs
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for view in self.iter() {
            out.write_all(self.query_name(view.query).as_bytes())?;
            out.write_all(b"\t")?;
            for (k, &d) in view.docs.iter().enumerate() {
                if k > 0 {
                    out.write_all(b",")?;
                }
                out.write_all(self.doc_name(d).as_bytes())?;
            }
            out.write_all(b"\t")?;
            for (k, &c) in view.clicks.iter().enumerate() {
                if k > 0 {
                    out.write_all(b",")?;
                }
                out.write_all(if c { b"1" } else { b"0" })?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Reads the session TSV format. Blank lines and lines starting with `#` are
/// skipped; line numbers in errors are 1-based physical lines.
pub fn parse_session_log<R: BufRead>(input: R) -> Result<SessionLog, LogError> {
    let mut log = SessionLog::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let record = SessionRecord::parse_line(line).map_err(|source| LogError::Session {
            line: idx + 1,
            source,
        })?;
        log.push(&record).map_err(|source| LogError::Session {
            line: idx + 1,
            source,
        })?;
    }
    Ok(log)
}

/// Aggregated clicks of one document at one position for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub query_id: String,
    pub doc_id: String,
    pub position: u32,
    pub impressions: u64,
    pub clicks: u64,
    ctr: f64,
}

impl Triple {
    pub fn from_counts(
        query_id: impl Into<String>,
        doc_id: impl Into<String>,
        position: u32,
        impressions: u64,
        clicks: u64,
    ) -> Self {
        assert!(clicks <= impressions, "more clicks than impressions");
        let ctr = if impressions == 0 {
            0.0
        } else {
            clicks as f64 / impressions as f64
        };
        Self {
            query_id: query_id.into(),
            doc_id: doc_id.into(),
            position,
            impressions,
            clicks,
            ctr,
        }
    }

    /// A triple carrying an exact click probability; `clicks` is the nearest
    /// whole count at the nominal `impressions`.
    pub fn with_ctr(
        query_id: impl Into<String>,
        doc_id: impl Into<String>,
        position: u32,
        impressions: u64,
        ctr: f64,
    ) -> Self {
        assert!((0.0..=1.0).contains(&ctr), "ctr {ctr} outside [0, 1]");
        Self {
            query_id: query_id.into(),
            doc_id: doc_id.into(),
            position,
            impressions,
            clicks: (ctr * impressions as f64).round() as u64,
            ctr,
        }
    }

    pub fn ctr(&self) -> f64 {
        self.ctr
    }

    /// Same triple with the click-through rate replaced (used to inject noise
    /// into exact tables).
    pub fn with_replaced_ctr(&self, ctr: f64) -> Self {
        Self::with_ctr(
            self.query_id.clone(),
            self.doc_id.clone(),
            self.position,
            self.impressions,
            ctr,
        )
    }
}

/// All triples of one query plus the query's issue frequency.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryTriples {
    pub triples: Vec<Triple>,
    pub frequency: u64,
}

/// Triples grouped by query; at most one triple per `(query, doc, position)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripleTable {
    queries: BTreeMap<String, QueryTriples>,
}

impl TripleTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a table from loose triples. Frequency of each query is the sum
    /// of its position-1 impressions. Later duplicates of a key are dropped.
    pub fn from_triples(triples: impl IntoIterator<Item = Triple>) -> Self {
        let mut table = Self::new();
        let mut seen = HashSet::new();
        for t in triples {
            if !seen.insert((t.query_id.clone(), t.doc_id.clone(), t.position)) {
                continue;
            }
            let entry = table.queries.entry(t.query_id.clone()).or_default();
            if t.position == 1 {
                entry.frequency += t.impressions;
            }
            entry.triples.push(t);
        }
        for q in table.queries.values_mut() {
            sort_triples(&mut q.triples);
        }
        table
    }

    pub fn insert_query(&mut self, query_id: impl Into<String>, mut entry: QueryTriples) {
        sort_triples(&mut entry.triples);
        self.queries.insert(query_id.into(), entry);
    }

    pub fn get(&self, query_id: &str) -> Option<&QueryTriples> {
        self.queries.get(query_id)
    }

    pub fn set_frequency(&mut self, query_id: &str, frequency: u64) {
        if let Some(q) = self.queries.get_mut(query_id) {
            q.frequency = frequency;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &QueryTriples)> {
        self.queries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn triples(&self) -> impl Iterator<Item = &Triple> {
        self.queries.values().flat_map(|q| q.triples.iter())
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn num_triples(&self) -> usize {
        self.queries.values().map(|q| q.triples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn frequency(&self, query_id: &str) -> Option<u64> {
        self.queries.get(query_id).map(|q| q.frequency)
    }
}

fn sort_triples(triples: &mut [Triple]) {
    triples.sort_by(|a, b| {
        (a.position, a.doc_id.as_str()).cmp(&(b.position, b.doc_id.as_str()))
    });
}

/// Filtering applied while aggregating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateOptions {
    /// Triples with fewer impressions are dropped; values below 1 act as 1.
    pub min_impressions: u64,
    pub drop_zero_clicks: bool,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        Self {
            min_impressions: 100,
            drop_zero_clicks: true,
        }
    }
}

type Counts = HashMap<(u32, u32, u32), (u64, u64)>;

const AGGREGATE_CHUNK: usize = 1 << 14;

/// Counts impressions and clicks per `(query, doc, position)` and applies the
/// filter. A query's frequency is its number of sessions, i.e. its total
/// position-1 impressions before filtering. Queries left with no triples are
/// omitted.
pub fn aggregate(log: &SessionLog, options: AggregateOptions) -> TripleTable {
    let min_impressions = options.min_impressions.max(1);
    let (counts, freq) = (0..log.len())
        .into_par_iter()
        .chunks(AGGREGATE_CHUNK)
        .map(|chunk| {
            let mut counts: Counts = HashMap::new();
            let mut freq: HashMap<u32, u64> = HashMap::new();
            for i in chunk {
                let s = log.session(i);
                *freq.entry(s.query).or_default() += 1;
                for (k, (&d, &c)) in s.docs.iter().zip(s.clicks).enumerate() {
                    let e = counts.entry((s.query, d, k as u32 + 1)).or_default();
                    e.0 += 1;
                    e.1 += c as u64;
                }
            }
            (counts, freq)
        })
        .reduce(
            || (HashMap::new(), HashMap::new()),
            |(mut ca, mut fa), (cb, fb)| {
                for (k, (m, a)) in cb {
                    let e = ca.entry(k).or_default();
                    e.0 += m;
                    e.1 += a;
                }
                for (k, n) in fb {
                    *fa.entry(k).or_default() += n;
                }
                (ca, fa)
            },
        );

    let mut grouped: BTreeMap<String, QueryTriples> = BTreeMap::new();
    for ((q, d, pos), (m, a)) in counts {
        if m < min_impressions || (options.drop_zero_clicks && a == 0) {
            continue;
        }
        let query = log.query_name(q);
        grouped
            .entry(query.to_owned())
            .or_default()
            .triples
            .push(Triple::from_counts(query, log.doc_name(d), pos, m, a));
    }
    let mut table = TripleTable::new();
    for (query, mut entry) in grouped {
        let q = log.query_interner().get(&query).expect("interned query");
        entry.frequency = freq.get(&q).copied().unwrap_or(0);
        table.insert_query(query, entry);
    }
    table
}

/// Splits every query's triples into train and test parts.
///
/// Each query with at least two triples sends `round(test_fraction * n)`
/// triples (at least one, at most `n - 1`) to the test side, sampled without
/// replacement with probability proportional to impressions. Single-triple
/// queries stay in train. Both halves keep the query's frequency.
pub fn split_train_test(
    table: &TripleTable,
    test_fraction: f64,
    seed: u64,
) -> Result<(TripleTable, TripleTable), SplitError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(SplitError::BadFraction(test_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = TripleTable::new();
    let mut test = TripleTable::new();
    for (query, entry) in table.iter() {
        let n = entry.triples.len();
        if n < 2 {
            train.insert_query(query, entry.clone());
            continue;
        }
        let k = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
        let chosen: HashSet<usize> = rand::seq::index::sample_weighted(
            &mut rng,
            n,
            |i| entry.triples[i].impressions.max(1) as f64,
            k,
        )
        .expect("positive finite weights")
        .into_iter()
        .collect();
        let (mut tr, mut te) = (Vec::new(), Vec::new());
        for (i, t) in entry.triples.iter().enumerate() {
            if chosen.contains(&i) {
                te.push(t.clone());
            } else {
                tr.push(t.clone());
            }
        }
        train.insert_query(
            query,
            QueryTriples {
                triples: tr,
                frequency: entry.frequency,
            },
        );
        test.insert_query(
            query,
            QueryTriples {
                triples: te,
                frequency: entry.frequency,
            },
        );
    }
    Ok((train, test))
}

const FREQUENCY_DIRECTIVE: &str = "#frequency\t";

/// Writes the triple TSV. `header` lines are emitted first, each prefixed
/// with `# `; query frequencies follow as `#frequency<TAB>query<TAB>n`
/// comment lines so that bucketing survives a round trip.
pub fn write_triples<W: Write>(
    mut out: W,
    table: &TripleTable,
    header: &[String],
) -> std::io::Result<()> {
    for line in header {
        writeln!(out, "# {line}")?;
    }
    for (query, entry) in table.iter() {
        writeln!(out, "{FREQUENCY_DIRECTIVE}{query}\t{}", entry.frequency)?;
    }
    for t in table.triples() {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            t.query_id, t.doc_id, t.position, t.impressions, t.clicks
        )?;
    }
    Ok(())
}

/// Reads the triple TSV. Queries without a frequency line get the sum of their
/// position-1 impressions.
pub fn read_triples<R: BufRead>(input: R) -> Result<TripleTable, LogError> {
    let mut triples = Vec::new();
    let mut frequencies = HashMap::new();
    let bad = |line: usize, message: String| LogError::Triple { line, message };
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        let lineno = idx + 1;
        if let Some(rest) = line.strip_prefix(FREQUENCY_DIRECTIVE) {
            let (query, n) = rest
                .rsplit_once('\t')
                .ok_or_else(|| bad(lineno, "malformed frequency line".into()))?;
            let n: u64 = n
                .parse()
                .map_err(|_| bad(lineno, format!("bad frequency {n:?}")))?;
            frequencies.insert(query.to_owned(), n);
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad(lineno, format!("expected 5 fields, found {}", f.len())));
        }
        let position: u32 = f[2]
            .parse()
            .map_err(|_| bad(lineno, format!("bad position {:?}", f[2])))?;
        if position == 0 {
            return Err(bad(lineno, "positions are 1-based".into()));
        }
        let impressions: u64 = f[3]
            .parse()
            .map_err(|_| bad(lineno, format!("bad impressions {:?}", f[3])))?;
        let clicks: u64 = f[4]
            .parse()
            .map_err(|_| bad(lineno, format!("bad clicks {:?}", f[4])))?;
        if clicks > impressions {
            return Err(bad(lineno, "more clicks than impressions".into()));
        }
        triples.push(Triple::from_counts(f[0], f[1], position, impressions, clicks));
    }
    let mut seen = HashSet::new();
    for t in &triples {
        if !seen.insert((t.query_id.as_str(), t.doc_id.as_str(), t.position)) {
            return Err(bad(
                0,
                format!(
                    "duplicate triple ({}, {}, {})",
                    t.query_id, t.doc_id, t.position
                ),
            ));
        }
    }
    let mut table = TripleTable::from_triples(triples);
    for (query, n) in frequencies {
        table.set_frequency(&query, n);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(q: &str, docs: &[&str], clicks: &[u8]) -> SessionRecord {
        SessionRecord::new(
            q,
            docs.iter().map(|s| s.to_string()).collect(),
            clicks.iter().map(|&c| c == 1).collect(),
        )
        .unwrap()
    }

    fn unfiltered() -> AggregateOptions {
        AggregateOptions {
            min_impressions: 1,
            drop_zero_clicks: false,
        }
    }

    #[test]
    fn parses_a_line() {
        let r = SessionRecord::parse_line("q1\tdA,dB\t1,0").unwrap();
        assert_eq!(r, rec("q1", &["dA", "dB"], &[1, 0]));
        assert_eq!(r.to_line(), "q1\tdA,dB\t1,0");
    }

    #[test]
    fn rejects_duplicate_document_with_line_number() {
        let input = "q1\tdA,dB\t1,0\nq1\tdA,dA\t1,0\n";
        match parse_session_log(input.as_bytes()) {
            Err(LogError::Session { line, source }) => {
                assert_eq!(line, 2);
                assert_eq!(source, RecordError::DuplicateDocument("dA".into()));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_lines() {
        assert_eq!(
            SessionRecord::parse_line("q1\tdA"),
            Err(RecordError::FieldCount(2))
        );
        assert_eq!(
            SessionRecord::parse_line("q1\tdA\t2"),
            Err(RecordError::BadClickFlag("2".into()))
        );
        assert_eq!(
            SessionRecord::parse_line("q1\tdA,dB\t1"),
            Err(RecordError::LengthMismatch { docs: 2, clicks: 1 })
        );
        assert_eq!(
            SessionRecord::parse_line("q1\t\t"),
            Err(RecordError::NoDocuments)
        );
    }

    #[test]
    fn empty_stream_is_empty_log() {
        let log = parse_session_log("".as_bytes()).unwrap();
        assert!(log.is_empty());
    }

    #[test]
    fn line_order_is_preserved() {
        let input = "q2\ta\t0\n# comment\nq1\tb,c\t0,1\n";
        let log = parse_session_log(input.as_bytes()).unwrap();
        assert_eq!(log.len(), 2);
        assert_eq!(log.record(0), rec("q2", &["a"], &[0]));
        assert_eq!(log.record(1), rec("q1", &["b", "c"], &[0, 1]));
        let mut out = Vec::new();
        log.write_tsv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "q2\ta\t0\nq1\tb,c\t0,1\n");
    }

    #[test]
    fn aggregates_ten_sessions() {
        let records: Vec<_> = (0..10)
            .map(|i| rec("q1", &["dA"], &[(i < 4) as u8]))
            .collect();
        let log = SessionLog::from_records(&records).unwrap();
        let table = aggregate(&log, unfiltered());
        let q = table.get("q1").unwrap();
        assert_eq!(q.triples.len(), 1);
        let t = &q.triples[0];
        assert_eq!((t.position, t.impressions, t.clicks), (1, 10, 4));
        assert!((t.ctr() - 0.4).abs() < 1e-15);
        assert_eq!(q.frequency, 10);

        let strict = AggregateOptions {
            min_impressions: 100,
            drop_zero_clicks: true,
        };
        assert!(aggregate(&log, strict).is_empty());
    }

    #[test]
    fn drops_zero_click_triples() {
        let records: Vec<_> = (0..5).map(|_| rec("q1", &["dA", "dB"], &[1, 0])).collect();
        let log = SessionLog::from_records(&records).unwrap();
        let opts = AggregateOptions {
            min_impressions: 1,
            drop_zero_clicks: true,
        };
        let table = aggregate(&log, opts);
        let docs: Vec<_> = table.triples().map(|t| t.doc_id.as_str()).collect();
        assert_eq!(docs, ["dA"]);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let table = TripleTable::new();
        assert!(split_train_test(&table, 0.0, 1).is_err());
        assert!(split_train_test(&table, 1.0, 1).is_err());
        assert!(split_train_test(&table, f64::NAN, 1).is_err());
    }

    #[test]
    fn single_triple_query_stays_in_train() {
        let table = TripleTable::from_triples([Triple::from_counts("q", "d", 1, 10, 3)]);
        let (train, test) = split_train_test(&table, 0.5, 3).unwrap();
        assert_eq!(train.num_triples(), 1);
        assert!(test.is_empty());
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let triples: Vec<_> = (0..30)
            .map(|i| Triple::from_counts(format!("q{}", i % 4), format!("d{i}"), 1 + i % 3, 50 + i as u64, 5))
            .collect();
        let table = TripleTable::from_triples(triples);
        let a = split_train_test(&table, 0.3, 11).unwrap();
        let b = split_train_test(&table, 0.3, 11).unwrap();
        assert_eq!(a, b);
        let (train, test) = a;
        assert_eq!(train.num_triples() + test.num_triples(), table.num_triples());
        for (q, entry) in table.iter() {
            assert!(!test.get(q).unwrap().triples.is_empty());
            for t in &entry.triples {
                let in_train = train.get(q).unwrap().triples.contains(t);
                let in_test = test.get(q).unwrap().triples.contains(t);
                assert!(in_train ^ in_test);
            }
        }
    }

    #[test]
    fn triple_file_round_trip_keeps_frequency() {
        let mut table = TripleTable::from_triples([
            Triple::from_counts("q1", "a", 1, 100, 30),
            Triple::from_counts("q1", "b", 2, 80, 10),
            Triple::from_counts("q2", "a", 2, 70, 1),
        ]);
        table.set_frequency("q2", 1234);
        let mut buf = Vec::new();
        write_triples(&mut buf, &table, &["format: test".into()]).unwrap();
        let back = read_triples(buf.as_slice()).unwrap();
        assert_eq!(back, table);
        assert_eq!(back.frequency("q1"), Some(100));
        assert_eq!(back.frequency("q2"), Some(1234));
    }

    #[test]
    fn triple_reader_rejects_bad_rows() {
        assert!(read_triples("q\td\t0\t10\t1\n".as_bytes()).is_err());
        assert!(read_triples("q\td\t1\t10\t11\n".as_bytes()).is_err());
        assert!(read_triples("q\td\t1\t10\n".as_bytes()).is_err());
        assert!(read_triples("q\td\t1\t10\t1\nq\td\t1\t12\t1\n".as_bytes()).is_err());
    }
}
