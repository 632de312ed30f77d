//! Synthetic logs with a known per-interaction dropout hazard.
//!
//! After each answer the user quits the session with probability
//! `sigmoid(logit)`, where the logit is linear in the session position, the
//! previous answer's elapsed time and the previous answer's correctness.
//! Everything the hazard reads is visible to a model by the time it predicts,
//! so the hazards themselves are the best possible scores and their AUC is an
//! upper bound for any model.

use std::io::Write;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::auc;
use crate::ingest::{Choice, InteractionRecord};
use crate::numerics::sigmoid;

#[derive(Debug, Clone, PartialEq)]
pub struct HazardSpec {
    pub intercept: f64,
    /// Per step of 1-based session position beyond the first.
    pub session_position: f64,
    /// Per minute of the previous in-session answer's elapsed time.
    pub prev_elapsed_minutes: f64,
    /// Added when the previous in-session answer was correct.
    pub prev_correct: f64,
    /// Per unit of `(session position - 1) × previous elapsed minutes`.
    pub interaction: f64,
    pub clamp: (f64, f64),
}

impl Default for HazardSpec {
    fn default() -> Self {
        Self {
            intercept: -6.0,
            session_position: 0.2,
            prev_elapsed_minutes: 1.8,
            prev_correct: -0.5,
            interaction: 0.0,
            clamp: (0.01, 0.99),
        }
    }
}

impl HazardSpec {
    pub fn hazard(&self, session_position: u32, prev_elapsed_ms: u64, prev_correct: bool) -> f64 {
        let sp = f64::from(session_position.saturating_sub(1));
        let et = prev_elapsed_ms as f64 / 60_000.0;
        let logit = self.intercept
            + self.session_position * sp
            + self.prev_elapsed_minutes * et
            + self.prev_correct * f64::from(u8::from(prev_correct))
            + self.interaction * sp * et;
        sigmoid(logit).clamp(self.clamp.0, self.clamp.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    pub seed: u64,
    pub hazard: HazardSpec,
    pub questions: usize,
    pub sessions_per_user: Range<u32>,
    pub p_correct: f64,
    /// Probability that an answer is slow.
    pub slow_fraction: f64,
    pub slow_secs: Range<f64>,
    pub fast_secs: Range<f64>,
    /// Pause between an answer and the next question, within a session.
    pub think_secs: Range<f64>,
    /// Pause between sessions.
    pub break_hours: Range<f64>,
    /// Hard cap on session length.
    pub max_session_len: u32,
    /// Epoch milliseconds of the earliest first interaction.
    pub start_ms: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 2000,
            seed: 1,
            hazard: HazardSpec::default(),
            questions: 1000,
            sessions_per_user: 1..6,
            p_correct: 0.65,
            slow_fraction: 0.25,
            slow_secs: 120.0..280.0,
            fast_secs: 5.0..40.0,
            think_secs: 1.0..60.0,
            break_hours: 2.0..72.0,
            max_session_len: 500,
            start_ms: 1_546_300_800_000, // 2019-01-01 00:00:00 UTC
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.users > 0
            && self.questions > 0
            && !self.sessions_per_user.is_empty()
            && self.sessions_per_user.start > 0
            && (0.0..=1.0).contains(&self.p_correct)
            && (0.0..=1.0).contains(&self.slow_fraction)
            && !self.slow_secs.is_empty()
            && !self.fast_secs.is_empty()
            && !self.think_secs.is_empty()
            && !self.break_hours.is_empty()
            && self.max_session_len > 0
            && self.hazard.clamp.0 > 0.0
            && self.hazard.clamp.1 < 1.0
            && self.hazard.clamp.0 <= self.hazard.clamp.1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid synthetic generator settings".into()))
        }
    }
}

/// The planted truth for one generated interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub user_id: String,
    pub timestamp: i64,
    pub session_position: u32,
    pub hazard: f64,
    pub dropout: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    /// Grouped by user and sorted by time.
    pub records: Vec<InteractionRecord>,
    /// Parallel to `records`.
    pub truth: Vec<Truth>,
}

impl Synthetic {
    /// AUC of the planted hazards against the realized dropouts.
    pub fn bayes_auc(&self) -> Result<f64> {
        let h: Vec<f64> = self.truth.iter().map(|t| t.hazard).collect();
        let y: Vec<u8> = self.truth.iter().map(|t| u8::from(t.dropout)).collect();
        auc(&h, &y)
    }

    /// AUC of the hazards restricted to the given users.
    pub fn bayes_auc_for(&self, users: &std::collections::BTreeSet<String>) -> Result<f64> {
        let (h, y): (Vec<f64>, Vec<u8>) = self
            .truth
            .iter()
            .filter(|t| users.contains(&t.user_id))
            .map(|t| (t.hazard, u8::from(t.dropout)))
            .unzip();
        auc(&h, &y)
    }

    pub fn write_truth<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user_id", "timestamp", "session_position", "hazard", "dropout"])?;
        for t in &self.truth {
            w.write_record([
                t.user_id.clone(),
                t.timestamp.to_string(),
                t.session_position.to_string(),
                format!("{:.6}", t.hazard),
                u8::from(t.dropout).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

const CHOICES: [Choice; 4] = [Choice::A, Choice::B, Choice::C, Choice::D];

/// Generates `config.users` users; identical configs give identical output.
pub fn generate(config: &SynthConfig) -> Result<Synthetic> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bank: Vec<(u8, Choice)> = (0..config.questions)
        .map(|_| (rng.gen_range(1..=7), CHOICES[rng.gen_range(0..4)]))
        .collect();
    let width = config.users.to_string().len();
    let mut records = Vec::new();
    let mut truth = Vec::new();

    for u in 0..config.users {
        let user_id = format!("u{u:0width$}");
        let sessions = rng.gen_range(config.sessions_per_user.clone());
        // some day in the first month, at a random second of the day
        let mut t = config.start_ms + rng.gen_range(0..30 * 86_400_000i64);
        for s in 0..sessions {
            if s > 0 {
                t += (rng.gen_range(config.break_hours.clone()) * 3_600_000.0) as i64;
            }
            let (mut prev_et, mut prev_r) = (0u64, false);
            for sp in 1..=config.max_session_len {
                let q = rng.gen_range(0..config.questions);
                let (part, key) = bank[q];
                let slow = rng.gen_bool(config.slow_fraction);
                let range = if slow { &config.slow_secs } else { &config.fast_secs };
                let elapsed_ms = (rng.gen_range(range.clone()) * 1000.0) as u64;
                let correct = rng.gen_bool(config.p_correct);
                let answer = if correct {
                    key
                } else {
                    let others: Vec<Choice> = CHOICES.into_iter().filter(|&c| c != key).collect();
                    others[rng.gen_range(0..3)]
                };
                let hazard = config.hazard.hazard(sp, prev_et, prev_r);
                let dropout = rng.gen_bool(hazard) || sp == config.max_session_len;
                records.push(InteractionRecord {
                    user_id: user_id.clone(),
                    timestamp: t,
                    question_id: format!("q{q}"),
                    user_answer: answer,
                    correct,
                    elapsed_ms,
                    part,
                });
                truth.push(Truth {
                    user_id: user_id.clone(),
                    timestamp: t,
                    session_position: sp,
                    hazard,
                    dropout,
                });
                if dropout {
                    t += elapsed_ms as i64;
                    break;
                }
                t += elapsed_ms as i64 + (rng.gen_range(config.think_secs.clone()) * 1000.0) as i64;
                prev_et = elapsed_ms;
                prev_r = correct;
            }
        }
    }
    Ok(Synthetic { records, truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sessionizer::{sessionize, DEFAULT_THRESHOLD_SECS};

    fn small() -> SynthConfig {
        SynthConfig {
            users: 200,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn hazard_reference() {
        let h = HazardSpec::default();
        assert!((h.hazard(1, 0, false) - 0.01).abs() < 1e-12);
        let expect = sigmoid(-6.0 + 0.2 * 4.0 + 1.8 * 2.0 - 0.5);
        assert!((h.hazard(5, 120_000, true) - expect).abs() < 1e-12);
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = generate(&SynthConfig { seed: 2, ..small() }).unwrap();
        assert_ne!(other, generate(&small()).unwrap());
    }

    #[test]
    fn sessionizer_recovers_planted_sessions() {
        let s = generate(&small()).unwrap();
        let seqs = sessionize(&s.records, DEFAULT_THRESHOLD_SECS).unwrap();
        let got: Vec<(bool, u32)> = seqs
            .iter()
            .flat_map(|q| q.interactions.iter().map(|i| (i.dropout, i.session_position)))
            .collect();
        let want: Vec<(bool, u32)> = s.truth.iter().map(|t| (t.dropout, t.session_position)).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn hazard_is_informative() {
        let s = generate(&small()).unwrap();
        let a = s.bayes_auc().unwrap();
        assert!(a > 0.85 && a < 1.0, "{a}");
    }
}
