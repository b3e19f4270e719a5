//! Mean and standard error of the mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator) over sqrt(n); 0 when n = 1.
    pub sem: f64,
    pub n: usize,
}

impl AggregateCell {
    /// A single sample has no spread estimate.
    pub fn is_degenerate(&self) -> bool {
        self.n == 1
    }
}

/// Single-pass (Welford) accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct Accumulator {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn finish(&self) -> Result<AggregateCell> {
        if self.n == 0 {
            return Err(Error::Empty("aggregate samples"));
        }
        let sem = if self.n == 1 {
            0.0
        } else {
            let var = (self.m2 / (self.n - 1) as f64).max(0.0);
            libm::sqrt(var) / libm::sqrt(self.n as f64)
        };
        Ok(AggregateCell {
            mean: self.mean,
            sem,
            n: self.n,
        })
    }
}

pub fn aggregate<I: IntoIterator<Item = f64>>(values: I) -> Result<AggregateCell> {
    let mut acc = Accumulator::default();
    values.into_iter().for_each(|x| acc.push(x));
    acc.finish()
}
