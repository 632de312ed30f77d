//! Study-session segmentation by an inactivity threshold.
//!
//! A session ends when the gap to the user's next question start is at least
//! the threshold; the last interaction of each session is the dropout
//! interaction.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{record_fields, ElapsedUnit, InteractionRecord, TimestampFormat, LOG_HEADER};

pub const DEFAULT_THRESHOLD_SECS: u64 = 3600;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionizedInteraction {
    pub record: InteractionRecord,
    /// 1-based, per user.
    pub session_id: u32,
    /// 1-based position within the session.
    pub session_position: u32,
    /// Last interaction of its session.
    pub dropout: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionizedSequence {
    pub user_id: String,
    pub interactions: Vec<SessionizedInteraction>,
}

impl SessionizedSequence {
    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn session_count(&self) -> usize {
        self.interactions.last().map_or(0, |i| i.session_id as usize)
    }

    /// Interactions of each session, in order.
    pub fn sessions(&self) -> impl Iterator<Item = &[SessionizedInteraction]> {
        self.interactions
            .chunk_by(|a, b| a.session_id == b.session_id)
    }
}

/// Segments one user's time-ordered records.
pub fn sessionize_user(records: &[InteractionRecord], threshold_secs: u64) -> Result<SessionizedSequence> {
    let Some(first) = records.first() else {
        return Err(Error::Contract("cannot sessionize an empty record list".into()));
    };
    let threshold_ms = i64::try_from(threshold_secs.saturating_mul(1000)).unwrap_or(i64::MAX);
    let mut out = Vec::with_capacity(records.len());
    let mut session_id = 1u32;
    let mut position = 0u32;
    for (i, rec) in records.iter().enumerate() {
        if rec.user_id != first.user_id {
            return Err(Error::Contract(format!(
                "records of users `{}` and `{}` are interleaved",
                first.user_id, rec.user_id
            )));
        }
        position += 1;
        let dropout = match records.get(i + 1) {
            Some(next) if next.timestamp < rec.timestamp => {
                return Err(Error::Contract(format!(
                    "records of user `{}` are not sorted by timestamp (index {})",
                    rec.user_id,
                    i + 1
                )))
            }
            Some(next) => next.timestamp - rec.timestamp >= threshold_ms,
            None => true,
        };
        out.push(SessionizedInteraction {
            record: rec.clone(),
            session_id,
            session_position: position,
            dropout,
        });
        if dropout {
            session_id += 1;
            position = 0;
        }
    }
    Ok(SessionizedSequence {
        user_id: first.user_id.clone(),
        interactions: out,
    })
}

/// Segments a user-grouped, time-sorted record list (as produced by
/// [`parse_log`](crate::ingest::parse_log)) into one sequence per user.
pub fn sessionize(records: &[InteractionRecord], threshold_secs: u64) -> Result<Vec<SessionizedSequence>> {
    let groups: Vec<&[InteractionRecord]> = records
        .chunk_by(|a, b| a.user_id == b.user_id)
        .collect();
    let mut seen = std::collections::HashSet::new();
    for g in &groups {
        if !seen.insert(g[0].user_id.as_str()) {
            return Err(Error::Contract(format!(
                "records of user `{}` are not contiguous",
                g[0].user_id
            )));
        }
    }
    groups
        .into_par_iter()
        .map(|g| sessionize_user(g, threshold_secs))
        .collect()
}

/// Aggregate session statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SessionStats {
    pub users: usize,
    pub sessions: usize,
    pub interactions: usize,
    pub sessions_per_user: f64,
    pub questions_per_session: f64,
    /// Fraction of interactions labelled as dropout.
    pub dropout_fraction: f64,
    /// First question start to last question start plus the last response time.
    pub mean_session_minutes: f64,
}

pub fn session_stats(sequences: &[SessionizedSequence]) -> SessionStats {
    let users = sequences.iter().filter(|s| !s.is_empty()).count();
    let mut sessions = 0usize;
    let mut interactions = 0usize;
    let mut dropouts = 0usize;
    let mut duration_ms = 0f64;
    for seq in sequences {
        interactions += seq.len();
        dropouts += seq.interactions.iter().filter(|i| i.dropout).count();
        for s in seq.sessions() {
            sessions += 1;
            let (first, last) = (&s[0].record, &s[s.len() - 1].record);
            duration_ms += (last.timestamp - first.timestamp) as f64 + last.elapsed_ms as f64;
        }
    }
    let ratio = |a: f64, b: usize| if b == 0 { 0.0 } else { a / b as f64 };
    SessionStats {
        users,
        sessions,
        interactions,
        sessions_per_user: ratio(sessions as f64, users),
        questions_per_session: ratio(interactions as f64, sessions),
        dropout_fraction: ratio(dropouts as f64, interactions),
        mean_session_minutes: ratio(duration_ms / 60_000.0, sessions),
    }
}

impl SessionStats {
    /// `key=value` lines.
    pub fn write_key_values<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "users={}", self.users)?;
        writeln!(out, "sessions={}", self.sessions)?;
        writeln!(out, "interactions={}", self.interactions)?;
        writeln!(out, "sessions_per_user={}", self.sessions_per_user)?;
        writeln!(out, "questions_per_session={}", self.questions_per_session)?;
        writeln!(out, "dropout_fraction={}", self.dropout_fraction)?;
        writeln!(out, "mean_session_minutes={}", self.mean_session_minutes)?;
        Ok(())
    }
}

impl fmt::Display for SessionStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows = [
            ("users", self.users.to_string()),
            ("sessions", self.sessions.to_string()),
            ("interactions", self.interactions.to_string()),
            ("sessions per user", format!("{:.2}", self.sessions_per_user)),
            ("questions per session", format!("{:.2}", self.questions_per_session)),
            ("dropout responses", format!("{:.2}%", 100.0 * self.dropout_fraction)),
            ("minutes per session", format!("{:.2}", self.mean_session_minutes)),
        ];
        for (k, v) in rows {
            writeln!(f, "{k:<24}{v:>14}")?;
        }
        Ok(())
    }
}

/// One bar of the inter-action gap histogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapBin {
    /// `floor(log2(gap in microseconds))`; zero gaps fall in bin 0.
    pub log2_micros: u32,
    pub count: usize,
    pub ratio: f64,
}

/// Histogram of gaps between consecutive interactions of each user on a log₂
/// microsecond scale (1 s ≈ 19.9, 1 h ≈ 31.7, 1 day ≈ 36.3).
pub fn gap_histogram(sequences: &[SessionizedSequence]) -> Vec<GapBin> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    let mut total = 0usize;
    for seq in sequences {
        for w in seq.interactions.windows(2) {
            let gap_us = ((w[1].record.timestamp - w[0].record.timestamp).max(0) as u64)
                .saturating_mul(1000)
                .max(1);
            *counts.entry(gap_us.ilog2()).or_default() += 1;
            total += 1;
        }
    }
    counts
        .into_iter()
        .map(|(log2_micros, count)| GapBin {
            log2_micros,
            count,
            ratio: count as f64 / total as f64,
        })
        .collect()
}

pub fn write_gap_histogram<W: Write>(bins: &[GapBin], mut out: W) -> Result<()> {
    writeln!(out, "log2_micros\tcount\tratio")?;
    for b in bins {
        writeln!(out, "{}\t{}\t{:.6}", b.log2_micros, b.count, b.ratio)?;
    }
    Ok(())
}

/// Writes the input rows plus `session_id` and `dropout` columns.
pub fn write_sessionized<W: Write>(
    sequences: &[SessionizedSequence],
    out: W,
    format: TimestampFormat,
    unit: ElapsedUnit,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = LOG_HEADER.to_vec();
    header.extend(["session_id", "dropout"]);
    w.write_record(&header)?;
    for seq in sequences {
        for it in &seq.interactions {
            let mut row = record_fields(&it.record, format, unit).to_vec();
            row.push(it.session_id.to_string());
            row.push(u8::from(it.dropout).to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_log, Choice, ColumnSchema};

    fn records(gaps_secs: &[i64]) -> Vec<InteractionRecord> {
        let mut t = 1_000_000;
        let mut out = vec![];
        for i in 0..=gaps_secs.len() {
            out.push(InteractionRecord {
                user_id: "u".into(),
                timestamp: t,
                question_id: format!("q{i}"),
                user_answer: Choice::A,
                correct: true,
                elapsed_ms: 10_000,
                part: 1,
            });
            if let Some(g) = gaps_secs.get(i) {
                t += g * 1000;
            }
        }
        out
    }

    fn sizes(seq: &SessionizedSequence) -> Vec<usize> {
        seq.sessions().map(<[_]>::len).collect()
    }

    #[test]
    fn splits_at_long_gaps_only() {
        let seq = sessionize_user(&records(&[30, 45 * 60, 61 * 60, 20]), 3600).unwrap();
        assert_eq!(sizes(&seq), [3, 2]);
        let labels: Vec<bool> = seq.interactions.iter().map(|i| i.dropout).collect();
        assert_eq!(labels, [false, false, true, false, true]);
        let sp: Vec<u32> = seq.interactions.iter().map(|i| i.session_position).collect();
        assert_eq!(sp, [1, 2, 3, 1, 2]);
    }

    #[test]
    fn single_interaction_is_its_own_dropout() {
        let seq = sessionize_user(&records(&[]), 3600).unwrap();
        assert_eq!(seq.len(), 1);
        assert!(seq.interactions[0].dropout);
        assert_eq!(seq.interactions[0].session_id, 1);
    }

    #[test]
    fn gap_equal_to_threshold_ends_session() {
        let seq = sessionize_user(&records(&[3600]), 3600).unwrap();
        assert_eq!(sizes(&seq), [1, 1]);
        let seq = sessionize_user(&records(&[3599]), 3600).unwrap();
        assert_eq!(sizes(&seq), [2]);
    }

    #[test]
    fn example_log_sessions() {
        let input = "timestamp,question_id,user_answer,correctness,elapsed_time,part\n\
                     2019-02-12 09:40:21,5279,c,1,33,5\n\
                     2019-02-12 09:40:51,5629,b,0,26,5\n\
                     2019-02-12 09:41:10,6048,a,1,16,5\n\
                     2019-02-12 09:41:54,6158,b,0,41,2\n\
                     2019-02-14 19:32:27,5022,d,1,30,2\n";
        let log = parse_log(input.as_bytes(), &ColumnSchema::default()).unwrap();
        let seqs = sessionize(&log.records, DEFAULT_THRESHOLD_SECS).unwrap();
        let ids: Vec<u32> = seqs[0].interactions.iter().map(|i| i.session_id).collect();
        let drop: Vec<u8> = seqs[0].interactions.iter().map(|i| i.dropout as u8).collect();
        assert_eq!(ids, [1, 1, 1, 1, 2]);
        assert_eq!(drop, [0, 0, 0, 1, 1]);
    }

    #[test]
    fn unsorted_input_is_rejected() {
        let mut recs = records(&[10, 10]);
        recs.swap(0, 2);
        assert!(matches!(sessionize_user(&recs, 3600), Err(Error::Contract(_))));

        let mut a = records(&[10]);
        let mut b = records(&[10]);
        b.iter_mut().for_each(|r| r.user_id = "v".into());
        let mut mixed = vec![a.remove(0)];
        mixed.extend(b);
        mixed.extend(a);
        assert!(matches!(sessionize(&mixed, 3600), Err(Error::Contract(_))));
    }

    #[test]
    fn stats_by_hand() {
        let seq = sessionize_user(&records(&[30, 45 * 60, 61 * 60, 20]), 3600).unwrap();
        let stats = session_stats(&[seq]);
        assert_eq!(stats.sessions, 2);
        assert_eq!(stats.sessions_per_user, 2.0);
        assert_eq!(stats.questions_per_session, 2.5);
        assert_eq!(stats.dropout_fraction, 0.4);
        assert!((stats.dropout_fraction - 1.0 / stats.questions_per_session).abs() < 1e-15);
        // (30 s + 45 min + 10 s) and (20 s + 10 s)
        let expected = ((30.0 + 2700.0 + 10.0) + (20.0 + 10.0)) / 60.0 / 2.0;
        assert!((stats.mean_session_minutes - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_stats_are_zero() {
        assert_eq!(session_stats(&[]), SessionStats::default());
    }

    #[test]
    fn histogram_bins() {
        let seq = sessionize_user(&records(&[1, 30, 3600]), 3600).unwrap();
        let bins = gap_histogram(&[seq]);
        let keys: Vec<u32> = bins.iter().map(|b| b.log2_micros).collect();
        assert_eq!(keys, [19, 24, 31]);
        assert!((bins.iter().map(|b| b.ratio).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
