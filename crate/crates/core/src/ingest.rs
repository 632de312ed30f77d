//! Activity-log parsing and per-user train/validation/test partitioning.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime};

use crate::error::{Error, Result};

/// The four multiple-choice answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Choice {
    A,
    B,
    C,
    D,
}

impl FromStr for Choice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "a" | "A" => Ok(Choice::A),
            "b" | "B" => Ok(Choice::B),
            "c" | "C" => Ok(Choice::C),
            "d" | "D" => Ok(Choice::D),
            _ => Err(format!("user_answer `{s}` is not one of a, b, c, d")),
        }
    }
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Choice::A => "a",
            Choice::B => "b",
            Choice::C => "c",
            Choice::D => "d",
        })
    }
}

/// One question response from an activity log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user_id: String,
    /// Question start, epoch milliseconds (UTC).
    pub timestamp: i64,
    pub question_id: String,
    pub user_answer: Choice,
    pub correct: bool,
    /// Response time in milliseconds.
    pub elapsed_ms: u64,
    /// Exam part, 1 through 7.
    pub part: u8,
}

pub const MIN_PART: u8 = 1;
pub const MAX_PART: u8 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimestampFormat {
    /// `YYYY-MM-DD HH:MM:SS`, interpreted as UTC.
    #[default]
    DateTime,
    EpochMillis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ElapsedUnit {
    #[default]
    Millis,
    Seconds,
}

impl ElapsedUnit {
    fn to_ms(self, v: f64) -> f64 {
        match self {
            ElapsedUnit::Millis => v,
            ElapsedUnit::Seconds => v * 1000.0,
        }
    }
}

/// Column names of a log file.
///
/// The user column is optional: per-user files carry no user id, in which
/// case every row belongs to `default_user`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSchema {
    pub user_id: String,
    pub timestamp: String,
    pub question_id: String,
    pub user_answer: String,
    pub correctness: String,
    pub elapsed_time: String,
    pub part: String,
    pub elapsed_unit: ElapsedUnit,
    pub default_user: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            user_id: "user_id".into(),
            timestamp: "timestamp".into(),
            question_id: "question_id".into(),
            user_answer: "user_answer".into(),
            correctness: "correctness".into(),
            elapsed_time: "elapsed_time".into(),
            part: "part".into(),
            elapsed_unit: ElapsedUnit::Millis,
            default_user: "user".into(),
        }
    }
}

/// A skipped input row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    /// 1-based line number in the input.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedLog {
    /// Grouped by user id (ascending), then sorted by timestamp; ties keep file order.
    pub records: Vec<InteractionRecord>,
    pub rejections: Vec<Rejection>,
    /// Format of the first parsed timestamp, reused when writing derived logs.
    pub timestamp_format: TimestampFormat,
}

impl ParsedLog {
    /// Contiguous per-user slices of `records`.
    pub fn users(&self) -> UserGroups<'_> {
        UserGroups {
            rest: &self.records,
        }
    }

    pub fn user_ids(&self) -> BTreeSet<String> {
        self.users().map(|g| g[0].user_id.clone()).collect()
    }
}

/// Iterator over runs of records sharing a user id.
pub struct UserGroups<'a> {
    rest: &'a [InteractionRecord],
}

impl<'a> Iterator for UserGroups<'a> {
    type Item = &'a [InteractionRecord];

    fn next(&mut self) -> Option<Self::Item> {
        let first = self.rest.first()?;
        let len = self
            .rest
            .iter()
            .position(|r| r.user_id != first.user_id)
            .unwrap_or(self.rest.len());
        let (head, tail) = self.rest.split_at(len);
        self.rest = tail;
        Some(head)
    }
}

/// Parses a timestamp in either accepted form into epoch milliseconds.
pub fn parse_timestamp(s: &str) -> Result<(i64, TimestampFormat), String> {
    let s = s.trim();
    if !s.is_empty() && s.bytes().enumerate().all(|(i, b)| b.is_ascii_digit() || (i == 0 && b == b'-')) {
        return s
            .parse::<i64>()
            .map(|v| (v, TimestampFormat::EpochMillis))
            .map_err(|e| format!("timestamp `{s}`: {e}"));
    }
    NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f")
        .map(|dt| (dt.and_utc().timestamp_millis(), TimestampFormat::DateTime))
        .map_err(|e| format!("timestamp `{s}`: {e}"))
}

pub fn format_timestamp(ms: i64, format: TimestampFormat) -> String {
    match format {
        TimestampFormat::EpochMillis => ms.to_string(),
        TimestampFormat::DateTime => match DateTime::from_timestamp_millis(ms) {
            Some(dt) if ms.rem_euclid(1000) == 0 => dt.format("%Y-%m-%d %H:%M:%S").to_string(),
            Some(dt) => dt.format("%Y-%m-%d %H:%M:%S%.3f").to_string(),
            None => ms.to_string(),
        },
    }
}

fn format_elapsed(ms: u64, unit: ElapsedUnit) -> String {
    match unit {
        ElapsedUnit::Millis => ms.to_string(),
        ElapsedUnit::Seconds if ms.is_multiple_of(1000) => (ms / 1000).to_string(),
        ElapsedUnit::Seconds => format!("{}", ms as f64 / 1000.0),
    }
}

fn detect_delimiter(header: &[u8]) -> u8 {
    let line = header.split(|&b| b == b'\n').next().unwrap_or(header);
    if line.contains(&b'\t') {
        b'\t'
    } else {
        b','
    }
}

struct ColumnIndex {
    user: Option<usize>,
    timestamp: usize,
    question: usize,
    answer: usize,
    correctness: usize,
    elapsed: usize,
    part: usize,
}

impl ColumnIndex {
    fn resolve(headers: &csv::StringRecord, schema: &ColumnSchema) -> Result<Self> {
        let find = |name: &str| headers.iter().position(|h| h == name);
        let need = |name: &str| {
            find(name).ok_or_else(|| Error::Schema(format!("missing required column `{name}`")))
        };
        Ok(Self {
            user: find(&schema.user_id),
            timestamp: need(&schema.timestamp)?,
            question: need(&schema.question_id)?,
            answer: need(&schema.user_answer)?,
            correctness: need(&schema.correctness)?,
            elapsed: need(&schema.elapsed_time)?,
            part: need(&schema.part)?,
        })
    }

    fn width(&self) -> usize {
        [
            self.user.unwrap_or(0),
            self.timestamp,
            self.question,
            self.answer,
            self.correctness,
            self.elapsed,
            self.part,
        ]
        .into_iter()
        .max()
        .unwrap_or(0)
            + 1
    }
}

fn parse_row(
    row: &csv::StringRecord,
    cols: &ColumnIndex,
    schema: &ColumnSchema,
) -> Result<(InteractionRecord, TimestampFormat), String> {
    if row.len() < cols.width() {
        return Err(format!("expected at least {} fields, found {}", cols.width(), row.len()));
    }
    let user_id = match cols.user {
        Some(i) if row[i].is_empty() => return Err("empty user_id".into()),
        Some(i) => row[i].to_string(),
        None => schema.default_user.clone(),
    };
    let (timestamp, format) = parse_timestamp(&row[cols.timestamp])?;
    let question_id = row[cols.question].to_string();
    if question_id.is_empty() {
        return Err("empty question_id".into());
    }
    let user_answer: Choice = row[cols.answer].parse()?;
    let correct = match &row[cols.correctness] {
        "1" => true,
        "0" => false,
        other => return Err(format!("correctness `{other}` is not 0 or 1")),
    };
    let elapsed: f64 = row[cols.elapsed]
        .parse()
        .map_err(|_| format!("elapsed_time `{}` is not a number", &row[cols.elapsed]))?;
    if !(elapsed.is_finite() && elapsed >= 0.0) {
        return Err(format!("elapsed_time `{}` is negative", &row[cols.elapsed]));
    }
    let part: u8 = row[cols.part]
        .parse()
        .map_err(|_| format!("part `{}` is not an integer", &row[cols.part]))?;
    if !(MIN_PART..=MAX_PART).contains(&part) {
        return Err(format!("part {part} outside [{MIN_PART}, {MAX_PART}]"));
    }
    Ok((
        InteractionRecord {
            user_id,
            timestamp,
            question_id,
            user_answer,
            correct,
            elapsed_ms: schema.elapsed_unit.to_ms(elapsed).round() as u64,
            part,
        },
        format,
    ))
}

/// Parses a delimiter-separated log with a header row.
///
/// Comma or tab delimiters are detected from the header. Malformed rows are
/// skipped and listed in [`ParsedLog::rejections`].
pub fn parse_log<R: Read>(input: R, schema: &ColumnSchema) -> Result<ParsedLog> {
    let mut reader = BufReader::with_capacity(1 << 16, input);
    let delimiter = detect_delimiter(reader.fill_buf()?);
    let mut csv = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Schema("input has no header row".into()));
    }
    let cols = ColumnIndex::resolve(&headers, schema)?;

    let mut records = Vec::new();
    let mut rejections = Vec::new();
    let mut timestamp_format = None;
    let mut row = csv::StringRecord::new();
    loop {
        match csv.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                rejections.push(Rejection {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        }
        let line = row.position().map_or(0, |p| p.line());
        if row.len() == 1 && row[0].is_empty() {
            continue;
        }
        match parse_row(&row, &cols, schema) {
            Ok((rec, fmt)) => {
                timestamp_format.get_or_insert(fmt);
                records.push(rec);
            }
            Err(reason) => rejections.push(Rejection { line, reason }),
        }
    }
    // Stable: equal timestamps keep file order.
    records.sort_by(|a, b| {
        a.user_id
            .cmp(&b.user_id)
            .then(a.timestamp.cmp(&b.timestamp))
    });
    Ok(ParsedLog {
        records,
        rejections,
        timestamp_format: timestamp_format.unwrap_or_default(),
    })
}

pub fn read_log_file(path: &Path, schema: &ColumnSchema) -> Result<ParsedLog> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    parse_log(file, schema)
}

/// Header and field rendering shared by every log writer.
pub const LOG_HEADER: [&str; 7] = [
    "user_id",
    "timestamp",
    "question_id",
    "user_answer",
    "correctness",
    "elapsed_time",
    "part",
];

pub fn record_fields(
    rec: &InteractionRecord,
    format: TimestampFormat,
    unit: ElapsedUnit,
) -> [String; 7] {
    [
        rec.user_id.clone(),
        format_timestamp(rec.timestamp, format),
        rec.question_id.clone(),
        rec.user_answer.to_string(),
        u8::from(rec.correct).to_string(),
        format_elapsed(rec.elapsed_ms, unit),
        rec.part.to_string(),
    ]
}

/// Writes records as a comma-separated log readable by [`parse_log`] with the
/// default schema and the given elapsed unit.
pub fn write_log<W: Write>(
    records: &[InteractionRecord],
    out: W,
    format: TimestampFormat,
    unit: ElapsedUnit,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOG_HEADER)?;
    for rec in records {
        w.write_record(record_fields(rec, format, unit))?;
    }
    w.flush()?;
    Ok(())
}

/// Relative sizes of the train, validation and test user buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitRatio {
    pub train: u32,
    pub validation: u32,
    pub test: u32,
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self {
            train: 7,
            validation: 1,
            test: 2,
        }
    }
}

impl FromStr for SplitRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let bad = || Error::Config(format!("split ratio `{s}` must look like 7:1:2"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let p = |x: &str| x.parse::<u32>().map_err(|_| bad());
        Ok(Self {
            train: p(parts[0])?,
            validation: p(parts[1])?,
            test: p(parts[2])?,
        })
    }
}

impl fmt::Display for SplitRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.train, self.validation, self.test)
    }
}

impl SplitRatio {
    /// Bucket sizes for `n` users by largest remainder; sums to `n`.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let weights = [self.train, self.validation, self.test].map(|w| w as usize);
        let total: usize = weights.iter().sum();
        let mut sizes = weights.map(|w| n * w / total);
        let mut remainders: Vec<(usize, usize)> =
            weights.iter().enumerate().map(|(i, &w)| (n * w % total, i)).collect();
        // Largest remainder first; ties favour the earlier bucket.
        remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let short = n - sizes.iter().sum::<usize>();
        for &(_, i) in remainders.iter().take(short) {
            sizes[i] += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split `{s}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Disjoint user sets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UserPartition {
    pub train: BTreeSet<String>,
    pub validation: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl UserPartition {
    pub fn split_of(&self, user: &str) -> Option<Split> {
        if self.train.contains(user) {
            Some(Split::Train)
        } else if self.validation.contains(user) {
            Some(Split::Validation)
        } else if self.test.contains(user) {
            Some(Split::Test)
        } else {
            None
        }
    }

    pub fn users(&self, split: Split) -> &BTreeSet<String> {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Manifest text: one `user_id<TAB>split` line per user.
    pub fn write_manifest<W: Write>(&self, mut out: W) -> Result<()> {
        for split in [Split::Train, Split::Validation, Split::Test] {
            for user in self.users(split) {
                writeln!(out, "{user}\t{split}")?;
            }
        }
        Ok(())
    }

    pub fn read_manifest<R: Read>(input: R) -> Result<Self> {
        let mut partition = Self::default();
        for (n, line) in BufReader::new(input).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (user, split) = line
                .split_once('\t')
                .ok_or_else(|| Error::Schema(format!("manifest line {}: expected user<TAB>split", n + 1)))?;
            let split: Split = split.trim().parse()?;
            if partition.split_of(user).is_some() {
                return Err(Error::Data(format!("manifest lists user `{user}` twice")));
            }
            match split {
                Split::Train => partition.train.insert(user.to_string()),
                Split::Validation => partition.validation.insert(user.to_string()),
                Split::Test => partition.test.insert(user.to_string()),
            };
        }
        Ok(partition)
    }
}

/// Seeded 64-bit hash of a user id (FNV-1a followed by a splitmix64 finalizer).
/// Stable across platforms and releases.
pub fn user_hash(user: &str, seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in user.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Assigns every user to exactly one bucket.
///
/// Users are ordered by their seeded hash and cut into consecutive runs whose
/// sizes follow `ratio`, so the assignment is deterministic per seed and a user
/// keeps its bucket-relative rank as the population grows.
pub fn split_users<'a, I>(users: I, ratio: SplitRatio, seed: u64) -> Result<UserPartition>
where
    I: IntoIterator<Item = &'a str>,
{
    if ratio.train == 0 || ratio.validation == 0 || ratio.test == 0 {
        return Err(Error::Config(format!(
            "split ratio components must be positive, got {ratio}"
        )));
    }
    let unique: BTreeSet<&str> = users.into_iter().collect();
    let mut keyed: Vec<(u64, &str)> = unique.into_iter().map(|u| (user_hash(u, seed), u)).collect();
    keyed.sort_unstable();
    let [n_train, n_val, _] = ratio.sizes(keyed.len());
    let mut partition = UserPartition::default();
    for (i, (_, user)) in keyed.into_iter().enumerate() {
        let bucket = if i < n_train {
            &mut partition.train
        } else if i < n_train + n_val {
            &mut partition.validation
        } else {
            &mut partition.test
        };
        bucket.insert(user.to_string());
    }
    Ok(partition)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE_ROWS: &str = "\
timestamp, question_id, user_answer, correctness, elapsed_time, part
2019-02-12 09:40:21, 5279, c, 1, 33, 5
2019-02-12 09:40:51, 5629, b, 0, 26, 5
2019-02-12 09:41:10, 6048, a, 1, 16, 5
2019-02-12 09:41:54, 6158, b, 0, 41, 2
2019-02-14 19:32:27, 5022, d, 1, 30, 2
";

    #[test]
    fn parses_example_rows_without_user_column() {
        let log = parse_log(TABLE_ROWS.as_bytes(), &ColumnSchema::default()).unwrap();
        assert!(log.rejections.is_empty());
        assert_eq!(log.records.len(), 5);
        let first = &log.records[0];
        assert_eq!(first.part, 5);
        assert!(first.correct);
        assert_eq!(first.question_id, "5279");
        assert_eq!(first.user_answer, Choice::C);
        assert_eq!(first.user_id, "user");
        assert_eq!(log.timestamp_format, TimestampFormat::DateTime);
        assert_eq!(format_timestamp(first.timestamp, TimestampFormat::DateTime), "2019-02-12 09:40:21");
    }

    #[test]
    fn header_only_is_empty() {
        let log = parse_log(
            "user_id,timestamp,question_id,user_answer,correctness,elapsed_time,part\n".as_bytes(),
            &ColumnSchema::default(),
        )
        .unwrap();
        assert!(log.records.is_empty());
        assert!(log.rejections.is_empty());
    }

    #[test]
    fn out_of_range_part_is_rejected_with_line() {
        let input = "user_id\ttimestamp\tquestion_id\tuser_answer\tcorrectness\telapsed_time\tpart\n\
                     u1\t1000\tq1\ta\t1\t500\t3\n\
                     u1\t2000\tq2\ta\t1\t500\t9\n\
                     u1\t3000\tq3\te\t1\t500\t1\n";
        let log = parse_log(input.as_bytes(), &ColumnSchema::default()).unwrap();
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.rejections.len(), 2);
        assert_eq!(log.rejections[0].line, 3);
        assert!(log.rejections[0].reason.contains("part 9"));
        assert_eq!(log.rejections[1].line, 4);
        assert_eq!(log.timestamp_format, TimestampFormat::EpochMillis);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let err = parse_log("timestamp,question_id\n1,2\n".as_bytes(), &ColumnSchema::default())
            .unwrap_err();
        assert!(matches!(err, Error::Schema(m) if m.contains("user_answer")));
    }

    #[test]
    fn groups_by_user_and_sorts_stably() {
        let input = "user_id,timestamp,question_id,user_answer,correctness,elapsed_time,part\n\
                     b,30,q1,a,1,5,1\n\
                     a,20,q2,a,1,5,1\n\
                     b,10,q3,a,1,5,1\n\
                     a,20,q4,a,0,5,1\n";
        let log = parse_log(input.as_bytes(), &ColumnSchema::default()).unwrap();
        let order: Vec<&str> = log.records.iter().map(|r| r.question_id.as_str()).collect();
        assert_eq!(order, ["q2", "q4", "q3", "q1"]);
        assert_eq!(log.users().count(), 2);
    }

    #[test]
    fn elapsed_in_seconds() {
        let schema = ColumnSchema {
            elapsed_unit: ElapsedUnit::Seconds,
            ..ColumnSchema::default()
        };
        let log = parse_log(TABLE_ROWS.as_bytes(), &schema).unwrap();
        assert_eq!(log.records[0].elapsed_ms, 33_000);
    }

    #[test]
    fn split_sizes() {
        let users: Vec<String> = (0..10).map(|i| format!("u{i}")).collect();
        let p = split_users(users.iter().map(String::as_str), SplitRatio::default(), 1).unwrap();
        assert_eq!((p.train.len(), p.validation.len(), p.test.len()), (7, 1, 2));

        let p = split_users(["solo"], SplitRatio::default(), 1).unwrap();
        assert_eq!(p.len(), 1);
        assert!(p.split_of("solo").is_some());

        let p = split_users(std::iter::empty(), SplitRatio::default(), 1).unwrap();
        assert!(p.is_empty());
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let users: Vec<String> = (0..200).map(|i| format!("user-{i}")).collect();
        let a = split_users(users.iter().map(String::as_str), SplitRatio::default(), 42).unwrap();
        let b = split_users(users.iter().map(String::as_str), SplitRatio::default(), 42).unwrap();
        let c = split_users(users.iter().map(String::as_str), SplitRatio::default(), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_ratio_component_rejected() {
        let ratio: SplitRatio = "7:0:2".parse().unwrap();
        assert!(matches!(split_users(["a"], ratio, 0), Err(Error::Config(_))));
    }

    #[test]
    fn manifest_round_trip() {
        let users: Vec<String> = (0..13).map(|i| format!("u{i}")).collect();
        let p = split_users(users.iter().map(String::as_str), SplitRatio::default(), 5).unwrap();
        let mut buf = Vec::new();
        p.write_manifest(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).lines().all(|l| l.split('\t').count() == 2));
        assert_eq!(UserPartition::read_manifest(buf.as_slice()).unwrap(), p);
    }
}
