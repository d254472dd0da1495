//! Per-epoch learning-rate schedules.
//!
//! The malleable schedule is a sequence of log-domain ramps. Piece `i` covers
//! epochs `(n_{i-1}, n_i]` and evaluates
//!
//! ```text
//! rate(n) = exp(a_i + (b_i - a_i) * t(n)) * base_rate
//! ```
//!
//! where `a_i` and `b_i` are exponents (so `(0, -8)` ramps from `base_rate`
//! down to `e^-8 * base_rate`).
//!
//! The ramp position `t` comes from one of two abscissas:
//!
//! * [`Abscissa::Piece`] (default): `t` runs from 0 at the previous piece's
//!   end epoch (epoch 1 for the first piece) to 1 at this piece's end. With
//!   `a_{i+1} = b_i` the two pieces give the same rate at `n_i`, so the curve
//!   is continuous.
//! * [`Abscissa::Global`]: every piece uses `t = (n - 1)/(M - 1)`. Pieces then
//!   meet only when `t(n_i) = 1`; in general the curve drops at each
//!   boundary.
//!
//! With a single piece both abscissas coincide with a logspace schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One ramp of a malleable schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Piece {
    pub end_epoch: usize,
    pub exp_start: f64,
    pub exp_end: f64,
}

/// How the ramp position of a piece is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Abscissa {
    #[default]
    Piece,
    Global,
}

/// Piecewise log-domain schedule over epochs `1..=max_epoch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub base_rate: f64,
    pub max_epoch: usize,
    pub pieces: Vec<Piece>,
    #[serde(default)]
    pub abscissa: Abscissa,
}

/// Tolerance on `a_{i+1} = b_i` when validating.
const CONTINUITY_TOL: f64 = 1e-12;

impl ScheduleSpec {
    /// One ramp spanning every epoch; this is a plain logspace schedule.
    pub fn single(base_rate: f64, max_epoch: usize, exp_start: f64, exp_end: f64) -> Self {
        Self {
            base_rate,
            max_epoch,
            pieces: vec![Piece {
                end_epoch: max_epoch,
                exp_start,
                exp_end,
            }],
            abscissa: Abscissa::Piece,
        }
    }

    pub fn with_abscissa(mut self, abscissa: Abscissa) -> Self {
        self.abscissa = abscissa;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_rate > 0.0 && self.base_rate.is_finite()) {
            return Err(Error::Config(format!(
                "schedule: base_rate = {} must be finite and > 0",
                self.base_rate
            )));
        }
        if self.max_epoch == 0 {
            return Err(Error::Config("schedule: max_epoch must be >= 1".into()));
        }
        let Some(last) = self.pieces.last() else {
            return Err(Error::Config("schedule: no pieces".into()));
        };
        if last.end_epoch != self.max_epoch {
            return Err(Error::Config(format!(
                "schedule: last piece ends at {}, max_epoch is {}",
                last.end_epoch, self.max_epoch
            )));
        }
        let mut prev_end = 0;
        for (i, p) in self.pieces.iter().enumerate() {
            if !p.exp_start.is_finite() || !p.exp_end.is_finite() {
                return Err(Error::Config(format!("schedule: piece {i} has non-finite exponents")));
            }
            if p.end_epoch <= prev_end {
                return Err(Error::Config(format!(
                    "schedule: piece {i} end_epoch {} is not after {prev_end}",
                    p.end_epoch
                )));
            }
            prev_end = p.end_epoch;
        }
        for (i, w) in self.pieces.windows(2).enumerate() {
            if (w[1].exp_start - w[0].exp_end).abs() > CONTINUITY_TOL {
                return Err(Error::Config(format!(
                    "schedule: piece {} starts at {} but piece {i} ends at {}",
                    i + 1,
                    w[1].exp_start,
                    w[0].exp_end
                )));
            }
        }
        Ok(())
    }

    fn ramp_position(&self, index: usize, epoch: usize) -> f64 {
        let (start, end) = match self.abscissa {
            Abscissa::Global => (1, self.max_epoch),
            Abscissa::Piece => {
                let start = if index == 0 { 1 } else { self.pieces[index - 1].end_epoch };
                (start, self.pieces[index].end_epoch)
            }
        };
        if end == start {
            0.0
        } else {
            (epoch as f64 - start as f64) / (end - start) as f64
        }
    }

    /// Evaluates piece `index` at `epoch`, whether or not the epoch falls
    /// inside it.
    pub fn piece_rate(&self, index: usize, epoch: usize) -> f64 {
        let p = &self.pieces[index];
        let t = self.ramp_position(index, epoch);
        (p.exp_start + (p.exp_end - p.exp_start) * t).exp() * self.base_rate
    }

    /// Index of the piece covering `epoch`.
    pub fn piece_index(&self, epoch: usize) -> Result<usize> {
        self.check_epoch(epoch)?;
        Ok(self
            .pieces
            .iter()
            .position(|p| epoch <= p.end_epoch)
            .expect("validated schedule covers every epoch"))
    }

    fn check_epoch(&self, epoch: usize) -> Result<()> {
        if epoch == 0 || epoch > self.max_epoch {
            return Err(Error::domain(format!(
                "epoch {epoch} outside 1..={}",
                self.max_epoch
            )));
        }
        Ok(())
    }

    /// Learning rate for a 1-based epoch.
    pub fn rate_at(&self, epoch: usize) -> Result<f64> {
        let i = self.piece_index(epoch)?;
        Ok(self.piece_rate(i, epoch))
    }
}

fn check_ramp(max_epoch: usize, epoch: usize) -> Result<()> {
    if max_epoch < 2 {
        return Err(Error::domain("ramp schedules need max_epoch >= 2"));
    }
    if epoch == 0 || epoch > max_epoch {
        return Err(Error::domain(format!("epoch {epoch} outside 1..={max_epoch}")));
    }
    Ok(())
}

/// `(a + (b - a) (n - 1)/(M - 1)) * base`.
pub fn linspace_rate(a: f64, b: f64, base: f64, max_epoch: usize, epoch: usize) -> Result<f64> {
    check_ramp(max_epoch, epoch)?;
    let t = (epoch - 1) as f64 / (max_epoch - 1) as f64;
    Ok((a + (b - a) * t) * base)
}

/// Geometric interpolation from `a * base` to `b * base`; `a, b > 0`.
pub fn logspace_rate(a: f64, b: f64, base: f64, max_epoch: usize, epoch: usize) -> Result<f64> {
    check_ramp(max_epoch, epoch)?;
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::domain("logspace endpoints must be positive"));
    }
    let t = (epoch - 1) as f64 / (max_epoch - 1) as f64;
    let (la, lb) = (a.ln(), b.ln());
    Ok((la + (lb - la) * t).exp() * base)
}

/// Piecewise-constant schedule: the rate of the first step whose
/// `end_epoch >= epoch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Staircase {
    pub steps: Vec<(usize, f64)>,
}

impl Staircase {
    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::Config("staircase: no steps".into()));
        }
        let mut prev = 0;
        for &(end, rate) in &self.steps {
            if end <= prev {
                return Err(Error::Config("staircase: end epochs must increase".into()));
            }
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(Error::Config(format!("staircase: rate {rate} must be > 0")));
            }
            prev = end;
        }
        Ok(())
    }

    pub fn last_epoch(&self) -> usize {
        self.steps.last().map_or(0, |s| s.0)
    }

    pub fn rate_at(&self, epoch: usize) -> Result<f64> {
        staircase_rate(&self.steps, epoch)
    }
}

pub fn staircase_rate(steps: &[(usize, f64)], epoch: usize) -> Result<f64> {
    if epoch == 0 {
        return Err(Error::domain("epochs are 1-based"));
    }
    steps
        .iter()
        .find(|(end, _)| *end >= epoch)
        .map(|&(_, rate)| rate)
        .ok_or_else(|| Error::domain(format!("epoch {epoch} is past the last step")))
}

/// Any schedule the trainer accepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Malleable(ScheduleSpec),
    Staircase(Staircase),
    Constant { rate: f64 },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            Schedule::Malleable(s) => s.validate(),
            Schedule::Staircase(s) => s.validate(),
            Schedule::Constant { rate } if *rate > 0.0 && rate.is_finite() => Ok(()),
            Schedule::Constant { rate } => {
                Err(Error::Config(format!("constant rate {rate} must be > 0")))
            }
        }
    }

    /// Last epoch the schedule defines, `None` when unbounded.
    pub fn max_epoch(&self) -> Option<usize> {
        match self {
            Schedule::Malleable(s) => Some(s.max_epoch),
            Schedule::Staircase(s) => Some(s.last_epoch()),
            Schedule::Constant { .. } => None,
        }
    }

    pub fn rate_at(&self, epoch: usize) -> Result<f64> {
        match self {
            Schedule::Malleable(s) => s.rate_at(epoch),
            Schedule::Staircase(s) => s.rate_at(epoch),
            Schedule::Constant { rate } => Ok(*rate),
        }
    }
}
