//! Feature encoding of sessionized interactions and fixed-length windows.
//!
//! Every feature is an index into its own embedding table. The last row of
//! each table is reserved for left padding; the question table additionally
//! reserves row 0 for ids unseen while building the vocabulary.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use chrono::{DateTime, Datelike, Timelike};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::{Split, UserPartition, MAX_PART, MIN_PART};
use crate::sessionizer::{SessionizedInteraction, SessionizedSequence};

pub const OOV_INDEX: u32 = 0;
pub const DEFAULT_SP_MAX: u32 = 1024;
pub const DEFAULT_ET_MAX_SECS: u32 = 300;
pub const PART_COUNT: u32 = (MAX_PART - MIN_PART + 1) as u32;
pub const HOURS: u32 = 24;
pub const WEEKDAYS: u32 = 7;

/// The nine interaction features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    QuestionId,
    Category,
    StartTime,
    Position,
    SessionPosition,
    Correctness,
    ElapsedTime,
    OnTime,
    Dropout,
}

impl Feature {
    pub const ALL: [Feature; 9] = [
        Feature::QuestionId,
        Feature::Category,
        Feature::StartTime,
        Feature::Position,
        Feature::SessionPosition,
        Feature::Correctness,
        Feature::ElapsedTime,
        Feature::OnTime,
        Feature::Dropout,
    ];

    /// Available to the encoder (question side).
    pub fn question_side(self) -> bool {
        matches!(
            self,
            Feature::QuestionId
                | Feature::Category
                | Feature::StartTime
                | Feature::Position
                | Feature::SessionPosition
        )
    }

    /// Available to the decoder (response side).
    pub fn response_side(self) -> bool {
        !matches!(self, Feature::QuestionId | Feature::Category)
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Feature::QuestionId => "id",
            Feature::Category => "c",
            Feature::StartTime => "st",
            Feature::Position => "p",
            Feature::SessionPosition => "sp",
            Feature::Correctness => "r",
            Feature::ElapsedTime => "et",
            Feature::OnTime => "iot",
            Feature::Dropout => "d",
        }
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Feature::ALL
            .into_iter()
            .find(|f| f.short_name() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature `{s}`")))
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Which features feed the encoder and which feed the decoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSet {
    encoder: BTreeSet<Feature>,
    decoder: BTreeSet<Feature>,
}

impl FeatureSet {
    pub fn new(
        encoder: impl IntoIterator<Item = Feature>,
        decoder: impl IntoIterator<Item = Feature>,
    ) -> Result<Self> {
        let set = Self {
            encoder: encoder.into_iter().collect(),
            decoder: decoder.into_iter().collect(),
        };
        if let Some(f) = set.encoder.iter().find(|f| !f.question_side()) {
            return Err(Error::Config(format!("feature `{f}` is not a question-side feature")));
        }
        if let Some(f) = set.decoder.iter().find(|f| !f.response_side()) {
            return Err(Error::Config(format!("feature `{f}` is not a response-side feature")));
        }
        if set.encoder.is_empty() || set.decoder.is_empty() {
            return Err(Error::Config("encoder and decoder need at least one feature each".into()));
        }
        Ok(set)
    }

    /// Every feature on the side(s) it belongs to.
    pub fn full() -> Self {
        Self {
            encoder: Feature::ALL.into_iter().filter(|f| f.question_side()).collect(),
            decoder: Feature::ALL.into_iter().filter(|f| f.response_side()).collect(),
        }
    }

    /// Question id, category and position for the encoder; correctness and
    /// position for the decoder.
    pub fn base() -> Self {
        use Feature::*;
        Self {
            encoder: [QuestionId, Category, Position].into(),
            decoder: [Correctness, Position].into(),
        }
    }

    pub fn encoder(&self) -> &BTreeSet<Feature> {
        &self.encoder
    }

    pub fn decoder(&self) -> &BTreeSet<Feature> {
        &self.decoder
    }

    /// Parses `"id,c,p|r,p"` (encoder features, then decoder features).
    pub fn parse(s: &str) -> Result<Self> {
        let (enc, dec) = s
            .split_once('|')
            .ok_or_else(|| Error::Config(format!("feature set `{s}` must look like `id,c,p|r,p`")))?;
        let list = |x: &str| -> Result<Vec<Feature>> {
            x.split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(str::parse)
                .collect()
        };
        Self::new(list(enc)?, list(dec)?)
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |s: &BTreeSet<Feature>| {
            s.iter()
                .map(|x| x.short_name())
                .collect::<Vec<_>>()
                .join(",")
        };
        write!(f, "{}|{}", join(&self.encoder), join(&self.decoder))
    }
}

/// Question-id index plus the fixed bucket tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    questions: BTreeMap<String, u32>,
    pub sp_max: u32,
    pub et_max_secs: u32,
}

impl Vocab {
    /// Indexes the question ids of the given (training) sequences in sorted
    /// order, starting at 1.
    pub fn build<'a>(train: impl IntoIterator<Item = &'a SessionizedSequence>) -> Self {
        Self::with_limits(train, DEFAULT_SP_MAX, DEFAULT_ET_MAX_SECS)
    }

    pub fn with_limits<'a>(
        train: impl IntoIterator<Item = &'a SessionizedSequence>,
        sp_max: u32,
        et_max_secs: u32,
    ) -> Self {
        let ids: BTreeSet<&str> = train
            .into_iter()
            .flat_map(|s| s.interactions.iter().map(|i| i.record.question_id.as_str()))
            .collect();
        let questions = ids
            .into_iter()
            .enumerate()
            .map(|(i, q)| (q.to_string(), i as u32 + 1))
            .collect();
        Self {
            questions,
            sp_max: sp_max.max(1),
            et_max_secs,
        }
    }

    pub fn question_index(&self, id: &str) -> u32 {
        self.questions.get(id).copied().unwrap_or(OOV_INDEX)
    }

    pub fn question_count(&self) -> usize {
        self.questions.len()
    }

    /// Category index of an exam part (0-based).
    pub fn category_index(part: u8) -> Result<u32> {
        if (MIN_PART..=MAX_PART).contains(&part) {
            Ok(u32::from(part - MIN_PART))
        } else {
            Err(Error::Data(format!("part {part} outside [{MIN_PART}, {MAX_PART}]")))
        }
    }

    /// Elapsed-time bucket: whole seconds up to `et_max_secs`, then one
    /// overflow bucket.
    pub fn elapsed_bucket(&self, elapsed_ms: u64) -> u32 {
        let secs = elapsed_ms / 1000;
        if secs > u64::from(self.et_max_secs) {
            self.et_max_secs + 1
        } else {
            secs as u32
        }
    }

    pub fn sizes(&self, seq_size: usize) -> TableSizes {
        TableSizes {
            question: self.question_count() as u32 + 1,
            category: PART_COUNT,
            hour: HOURS,
            weekday: WEEKDAYS,
            position: seq_size as u32,
            session_position: self.sp_max,
            correctness: 2,
            elapsed: self.et_max_secs + 2,
            on_time: 2,
            dropout: 2,
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "format=das-vocab-1")?;
        writeln!(out, "sp_max={}", self.sp_max)?;
        writeln!(out, "et_max_secs={}", self.et_max_secs)?;
        writeln!(out, "questions={}", self.questions.len())?;
        for (q, i) in &self.questions {
            writeln!(out, "q.{q}={i}")?;
        }
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let kv = read_key_values(input)?;
        if kv.get("format").map(String::as_str) != Some("das-vocab-1") {
            return Err(Error::Compatibility("vocab file has an unknown format".into()));
        }
        let num = |k: &str| -> Result<u32> {
            kv.get(k)
                .ok_or_else(|| Error::Schema(format!("vocab file lacks `{k}`")))?
                .parse()
                .map_err(|_| Error::Schema(format!("vocab `{k}` is not an integer")))
        };
        let mut questions = BTreeMap::new();
        for (k, v) in &kv {
            if let Some(q) = k.strip_prefix("q.") {
                let ix: u32 = v
                    .parse()
                    .map_err(|_| Error::Schema(format!("vocab index for `{q}` is not an integer")))?;
                questions.insert(q.to_string(), ix);
            }
        }
        if questions.len() != num("questions")? as usize {
            return Err(Error::Schema("vocab question count does not match its entries".into()));
        }
        let mut seen: Vec<u32> = questions.values().copied().collect();
        seen.sort_unstable();
        if seen.iter().enumerate().any(|(i, &ix)| ix != i as u32 + 1) {
            return Err(Error::Schema("vocab indices must be exactly 1..=questions".into()));
        }
        Ok(Self {
            questions,
            sp_max: num("sp_max")?,
            et_max_secs: num("et_max_secs")?,
        })
    }
}

/// Number of real (non-pad) values per embedding table; each table has one
/// extra pad row at index `size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableSizes {
    /// Includes the out-of-vocabulary row 0.
    pub question: u32,
    pub category: u32,
    pub hour: u32,
    pub weekday: u32,
    pub position: u32,
    pub session_position: u32,
    pub correctness: u32,
    pub elapsed: u32,
    pub on_time: u32,
    pub dropout: u32,
}

/// Per-part response-time limits, in seconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeLimits {
    per_part: BTreeMap<u8, u32>,
}

impl Default for TimeLimits {
    /// Listening parts are paced by audio; reading parts get more time the
    /// longer the passage.
    fn default() -> Self {
        Self {
            per_part: [(1, 30), (2, 30), (3, 45), (4, 45), (5, 60), (6, 90), (7, 120)].into(),
        }
    }
}

impl TimeLimits {
    pub fn new(per_part: impl IntoIterator<Item = (u8, u32)>) -> Self {
        Self {
            per_part: per_part.into_iter().collect(),
        }
    }

    pub fn limit_secs(&self, part: u8) -> Result<u32> {
        self.per_part
            .get(&part)
            .copied()
            .ok_or_else(|| Error::Config(format!("no time limit configured for part {part}")))
    }

    pub fn on_time(&self, part: u8, elapsed_ms: u64) -> Result<bool> {
        Ok(elapsed_ms <= u64::from(self.limit_secs(part)?) * 1000)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "format=das-limits-1")?;
        for (p, s) in &self.per_part {
            writeln!(out, "part.{p}={s}")?;
        }
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let kv = read_key_values(input)?;
        let mut per_part = BTreeMap::new();
        for (k, v) in &kv {
            if k == "format" {
                if v != "das-limits-1" {
                    return Err(Error::Compatibility("limits file has an unknown format".into()));
                }
                continue;
            }
            let part = k
                .strip_prefix("part.")
                .and_then(|p| p.parse::<u8>().ok())
                .ok_or_else(|| Error::Config(format!("unknown limits key `{k}`")))?;
            let secs = v
                .parse()
                .map_err(|_| Error::Config(format!("limit for part {part} is not an integer")))?;
            per_part.insert(part, secs);
        }
        Ok(Self { per_part })
    }
}

/// Reads `key=value` lines; blank lines and `#` comments are skipped.
pub fn read_key_values<R: Read>(input: R) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Schema(format!("line {}: expected key=value", n + 1)))?;
        if out.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Schema(format!("duplicate key `{}`", k.trim())));
        }
    }
    Ok(out)
}

/// Hex SHA-256 of a serialized artifact.
pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Encoded features of one interaction (all values are table indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureFrame {
    pub question: u32,
    pub category: u32,
    pub hour: u32,
    pub weekday: u32,
    /// 1-based position in the session, clipped at the vocabulary's maximum.
    pub session_position: u32,
    pub correct: u32,
    pub elapsed: u32,
    pub on_time: u32,
    pub dropout: u32,
}

/// Question-side view of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuestionFeatures {
    pub question: u32,
    pub category: u32,
    pub hour: u32,
    pub weekday: u32,
    pub session_position: u32,
}

/// Response-side view of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResponseFeatures {
    pub correct: u32,
    pub elapsed: u32,
    pub hour: u32,
    pub weekday: u32,
    pub on_time: u32,
    pub dropout: u32,
    pub session_position: u32,
}

impl FeatureFrame {
    pub fn question_side(&self) -> QuestionFeatures {
        QuestionFeatures {
            question: self.question,
            category: self.category,
            hour: self.hour,
            weekday: self.weekday,
            session_position: self.session_position,
        }
    }

    pub fn response_side(&self) -> ResponseFeatures {
        ResponseFeatures {
            correct: self.correct,
            elapsed: self.elapsed,
            hour: self.hour,
            weekday: self.weekday,
            on_time: self.on_time,
            dropout: self.dropout,
            session_position: self.session_position,
        }
    }
}

fn encode(it: &SessionizedInteraction, vocab: &Vocab, limits: &TimeLimits) -> Result<FeatureFrame> {
    let rec = &it.record;
    let start = DateTime::from_timestamp_millis(rec.timestamp)
        .ok_or_else(|| Error::Data(format!("timestamp {} out of range", rec.timestamp)))?;
    Ok(FeatureFrame {
        question: vocab.question_index(&rec.question_id),
        category: Vocab::category_index(rec.part)?,
        hour: start.hour(),
        weekday: start.weekday().num_days_from_monday(),
        session_position: it.session_position.clamp(1, vocab.sp_max),
        correct: u32::from(rec.correct),
        elapsed: vocab.elapsed_bucket(rec.elapsed_ms),
        on_time: u32::from(limits.on_time(rec.part, rec.elapsed_ms)?),
        dropout: u32::from(it.dropout),
    })
}

/// One frame per interaction, in order.
pub fn extract_features(
    sequence: &SessionizedSequence,
    vocab: &Vocab,
    limits: &TimeLimits,
) -> Result<Vec<FeatureFrame>> {
    sequence
        .interactions
        .iter()
        .map(|it| encode(it, vocab, limits))
        .collect()
}

/// A left-padded run of frames ending at the interaction being predicted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingWindow {
    pub user_id: String,
    /// Index of the target interaction within the user's sequence.
    pub target_index: usize,
    /// `None` marks a pad slot; pads only occur before the first frame.
    pub frames: Vec<Option<FeatureFrame>>,
    pub target_label: u8,
}

impl TrainingWindow {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn pad_flags(&self) -> Vec<bool> {
        self.frames.iter().map(Option::is_none).collect()
    }

    /// Index of the first real frame.
    pub fn first_real(&self) -> usize {
        self.frames.iter().position(Option::is_some).unwrap_or(self.frames.len())
    }

    /// 1-based position of slot `i` within the window.
    pub fn position(i: usize) -> u32 {
        i as u32 + 1
    }
}

/// A stride-1 window ending at every frame of one user.
pub fn make_windows(user_id: &str, frames: &[FeatureFrame], seq_size: usize) -> Result<Vec<TrainingWindow>> {
    if seq_size < 2 {
        return Err(Error::Config(format!("sequence size must be at least 2, got {seq_size}")));
    }
    Ok((0..frames.len())
        .map(|t| {
            let start = (t + 1).saturating_sub(seq_size);
            let real = &frames[start..=t];
            let mut slots = vec![None; seq_size - real.len()];
            slots.extend(real.iter().copied().map(Some));
            TrainingWindow {
                user_id: user_id.to_string(),
                target_index: t,
                frames: slots,
                target_label: frames[t].dropout as u8,
            }
        })
        .collect())
}

/// Extracts features and windows for every sequence.
pub fn windows_for(
    sequences: &[SessionizedSequence],
    vocab: &Vocab,
    limits: &TimeLimits,
    seq_size: usize,
) -> Result<Vec<TrainingWindow>> {
    let mut out = Vec::new();
    for seq in sequences {
        let frames = extract_features(seq, vocab, limits)?;
        out.extend(make_windows(&seq.user_id, &frames, seq_size)?);
    }
    Ok(out)
}

/// Windows of every split, encoded with a vocabulary built from the
/// training users only.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocab,
    pub limits: TimeLimits,
    pub seq_size: usize,
    pub train: Vec<TrainingWindow>,
    pub validation: Vec<TrainingWindow>,
    pub test: Vec<TrainingWindow>,
}

impl Dataset {
    pub fn build(
        sequences: &[SessionizedSequence],
        partition: &UserPartition,
        limits: TimeLimits,
        seq_size: usize,
    ) -> Result<Self> {
        let pick = |split: Split| -> Vec<SessionizedSequence> {
            sequences
                .iter()
                .filter(|s| partition.split_of(&s.user_id) == Some(split))
                .cloned()
                .collect()
        };
        let (tr, va, te) = (pick(Split::Train), pick(Split::Validation), pick(Split::Test));
        let vocab = Vocab::build(&tr);
        Ok(Self {
            train: windows_for(&tr, &vocab, &limits, seq_size)?,
            validation: windows_for(&va, &vocab, &limits, seq_size)?,
            test: windows_for(&te, &vocab, &limits, seq_size)?,
            vocab,
            limits,
            seq_size,
        })
    }

    /// Checks that every window belongs to a user of its own split.
    pub fn audit(&self, partition: &UserPartition) -> Result<()> {
        for split in [Split::Train, Split::Validation, Split::Test] {
            let allowed = partition.users(split);
            if let Some(w) = self.split(split).iter().find(|w| !allowed.contains(&w.user_id)) {
                return Err(Error::Data(format!(
                    "{split} windows include user `{}` from another split",
                    w.user_id
                )));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> &[TrainingWindow] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Choice, InteractionRecord};
    use crate::sessionizer::sessionize_user;

    fn seq(questions: &[&str], gaps_secs: &[i64], elapsed_ms: u64) -> SessionizedSequence {
        let mut t = 1_549_964_421_000; // 2019-02-12 09:40:21 UTC
        let recs: Vec<InteractionRecord> = questions
            .iter()
            .enumerate()
            .map(|(i, q)| {
                if i > 0 {
                    t += gaps_secs[i - 1] * 1000;
                }
                InteractionRecord {
                    user_id: "u".into(),
                    timestamp: t,
                    question_id: q.to_string(),
                    user_answer: Choice::C,
                    correct: i % 2 == 0,
                    elapsed_ms,
                    part: 5,
                }
            })
            .collect();
        sessionize_user(&recs, 3600).unwrap()
    }

    #[test]
    fn vocab_enumerates_and_maps_unknowns_to_oov() {
        let s = seq(&["5629", "5279", "5629"], &[10, 10], 1000);
        let v = Vocab::build([&s]);
        assert_eq!(v.question_index("5279"), 1);
        assert_eq!(v.question_index("5629"), 2);
        assert_eq!(v.question_index("9999"), OOV_INDEX);
        for part in 1..=7u8 {
            assert_eq!(Vocab::category_index(part).unwrap(), u32::from(part) - 1);
        }
        assert!(Vocab::category_index(8).is_err());
    }

    #[test]
    fn vocab_round_trip() {
        let s = seq(&["a", "b", "c"], &[1, 1], 1000);
        let v = Vocab::build([&s]);
        let mut buf = vec![];
        v.write(&mut buf).unwrap();
        assert_eq!(Vocab::read(buf.as_slice()).unwrap(), v);
    }

    #[test]
    fn on_time_and_elapsed_buckets() {
        let s = seq(&["5279"], &[], 33_000);
        let v = Vocab::build([&s]);
        let f = extract_features(&s, &v, &TimeLimits::default()).unwrap();
        assert_eq!(f[0].on_time, 1);
        assert_eq!(f[0].elapsed, 33);
        assert_eq!((f[0].hour, f[0].weekday), (9, 1)); // Tuesday

        let slow = seq(&["5279"], &[], 600_000);
        let f = extract_features(&slow, &v, &TimeLimits::default()).unwrap();
        assert_eq!(f[0].elapsed, DEFAULT_ET_MAX_SECS + 1);
        assert_eq!(f[0].on_time, 0);
        assert_eq!(v.sizes(5).elapsed, 302);
    }

    #[test]
    fn unknown_part_limit_is_config_error() {
        let s = seq(&["q"], &[], 1000);
        let v = Vocab::build([&s]);
        let limits = TimeLimits::new([(1, 30)]);
        assert!(matches!(extract_features(&s, &v, &limits), Err(Error::Config(_))));
    }

    #[test]
    fn session_position_resets() {
        let s = seq(&["a", "b", "c", "d"], &[10, 7200, 10], 1000);
        let v = Vocab::build([&s]);
        let f = extract_features(&s, &v, &TimeLimits::default()).unwrap();
        let sp: Vec<u32> = f.iter().map(|x| x.session_position).collect();
        assert_eq!(sp, [1, 2, 1, 2]);
        let d: Vec<u32> = f.iter().map(|x| x.dropout).collect();
        assert_eq!(d, [0, 1, 0, 1]);
    }

    #[test]
    fn windows_cover_every_interaction() {
        let s = seq(&["a", "b", "c", "d", "e", "f", "g"], &[10, 10, 7200, 10, 10, 10], 1000);
        let v = Vocab::build([&s]);
        let f = extract_features(&s, &v, &TimeLimits::default()).unwrap();
        let w = make_windows("u", &f, 5).unwrap();
        assert_eq!(w.len(), 7);
        for (t, win) in w.iter().enumerate() {
            assert_eq!(win.len(), 5);
            let real = win.frames.iter().filter(|x| x.is_some()).count();
            assert_eq!(real, (t + 1).min(5));
            assert!(win.frames[..5 - real].iter().all(Option::is_none));
            assert_eq!(win.frames[4], Some(f[t]));
        }
        // target at the end of session 1
        assert_eq!(w[2].target_label, 1);
        // the first window of session 2 still sees the previous dropout
        assert!(w[3].frames.iter().flatten().any(|x| x.dropout == 1));
        assert_eq!(w[3].frames[4].unwrap().session_position, 1);
        assert!(matches!(make_windows("u", &f, 1), Err(Error::Config(_))));
    }

    #[test]
    fn feature_sets_respect_sides() {
        assert!(FeatureSet::new([Feature::Correctness], [Feature::Position]).is_err());
        assert!(FeatureSet::new([Feature::QuestionId], [Feature::Category]).is_err());
        let base = FeatureSet::parse("id,c,p|r,p").unwrap();
        assert_eq!(base, FeatureSet::base());
        assert_eq!(FeatureSet::parse(&FeatureSet::full().to_string()).unwrap(), FeatureSet::full());
    }

    #[test]
    fn limits_round_trip() {
        let mut buf = vec![];
        TimeLimits::default().write(&mut buf).unwrap();
        assert_eq!(TimeLimits::read(buf.as_slice()).unwrap(), TimeLimits::default());
    }

    #[test]
    fn audit_flags_foreign_users() {
        let s = seq(&["a", "b"], &[10], 1000);
        let mut partition = UserPartition::default();
        partition.test.insert("u".into());
        let ds = Dataset::build(std::slice::from_ref(&s), &partition, TimeLimits::default(), 3).unwrap();
        assert_eq!(ds.test.len(), 2);
        ds.audit(&partition).unwrap();
        let mut leaked = ds.clone();
        leaked.train.push(ds.test[0].clone());
        let err = leaked.audit(&partition).unwrap_err();
        assert!(err.to_string().contains("`u`"), "{err}");
    }
}
