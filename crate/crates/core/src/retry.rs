//! Retry schedule for missing-concept identification.
//!
//! Attempt 0 runs at the initial temperature; each failed attempt moves to the
//! next, strictly higher, scheduled temperature. When the schedule is
//! exhausted the caller falls back to retrieving from the prompt itself.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    #[serde(default = "default_repetitions")]
    pub max_repetitions: usize,
    #[serde(default = "default_schedule")]
    pub temperature_schedule: Vec<f64>,
    #[serde(default)]
    pub initial_temperature: f64,
}

fn default_repetitions() -> usize {
    3
}

fn default_schedule() -> Vec<f64> {
    vec![0.4, 0.7, 1.0]
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_repetitions: default_repetitions(),
            temperature_schedule: default_schedule(),
            initial_temperature: 0.0,
        }
    }
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.temperature_schedule.len() != self.max_repetitions {
            return Err(Error::InvalidPolicy("schedule length must equal max_repetitions"));
        }
        if !self.initial_temperature.is_finite() || self.initial_temperature < 0.0 {
            return Err(Error::InvalidPolicy("initial temperature must be finite and non-negative"));
        }
        let mut prev = self.initial_temperature;
        for &t in &self.temperature_schedule {
            if !t.is_finite() || t <= prev {
                return Err(Error::InvalidPolicy("temperatures must be strictly increasing"));
            }
            prev = t;
        }
        Ok(())
    }

    /// Every temperature an attempt may use, in order.
    pub fn temperatures(&self) -> impl Iterator<Item = f64> + '_ {
        core::iter::once(self.initial_temperature).chain(self.temperature_schedule.iter().copied())
    }

    pub fn max_attempts(&self) -> usize {
        1 + self.max_repetitions
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttemptOutcome {
    Success,
    /// The reply contained the refusal phrasing.
    Refused,
    NoConcepts,
    NoCaptions,
}

impl AttemptOutcome {
    pub fn is_success(self) -> bool {
        self == AttemptOutcome::Success
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub temperature: f64,
    pub outcome: AttemptOutcome,
}

/// Drives the schedule: ask for a temperature, run the attempt, record it.
#[derive(Debug, Clone)]
pub struct RetryState<'p> {
    policy: &'p RetryPolicy,
    attempts: Vec<Attempt>,
}

impl<'p> RetryState<'p> {
    pub fn new(policy: &'p RetryPolicy) -> Result<Self> {
        policy.validate()?;
        Ok(Self {
            policy,
            attempts: Vec::with_capacity(policy.max_attempts()),
        })
    }

    /// Temperature for the next attempt, or `None` after a success or once the
    /// schedule is exhausted.
    pub fn next_temperature(&self) -> Option<f64> {
        if self.succeeded() {
            return None;
        }
        self.policy.temperatures().nth(self.attempts.len())
    }

    /// Records the outcome of the attempt run at [`Self::next_temperature`].
    ///
    /// Panics when no attempt was pending.
    pub fn record(&mut self, outcome: AttemptOutcome) {
        let temperature = self.next_temperature().expect("no attempt pending");
        self.attempts.push(Attempt { temperature, outcome });
    }

    pub fn succeeded(&self) -> bool {
        self.attempts.last().is_some_and(|a| a.outcome.is_success())
    }

    pub fn exhausted(&self) -> bool {
        !self.succeeded() && self.attempts.len() == self.policy.max_attempts()
    }

    pub fn attempts(&self) -> &[Attempt] {
        &self.attempts
    }

    pub fn into_attempts(self) -> Vec<Attempt> {
        self.attempts
    }
}
