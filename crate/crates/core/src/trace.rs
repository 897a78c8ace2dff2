//! Per-round records produced by every learner.

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord<S> {
    /// 1-based global round index (restarts do not reset it).
    pub t: usize,
    pub x: Vec<S>,
    pub in_body: bool,
    pub in_omega: bool,
    /// Loss as received by the learner, clipped to `[0, 1]`.
    pub loss: S,
    /// Density of the play distribution at `x` (estimated in high dimension).
    pub u: S,
    pub eta: S,
    pub focus_cut: bool,
    pub restart: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace<S> {
    pub dim: usize,
    pub records: Vec<RoundRecord<S>>,
    /// Rounds after which a restart happened.
    pub restart_times: Vec<usize>,
    /// Number of received losses that had to be clipped into `[0, 1]`.
    pub clipped: usize,
    pub warnings: Vec<String>,
}

/// Fraction of clipped losses above which a warning is attached to the trace.
pub const CLIP_WARN_FRACTION: f64 = 1e-3;

impl<S: Real> RunTrace<S> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            records: Vec::new(),
            restart_times: Vec::new(),
            clipped: 0,
            warnings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: RoundRecord<S>) {
        debug_assert!(self.records.last().is_none_or(|r| r.t < record.t));
        self.records.push(record);
    }

    /// Clips a received loss and counts the event.
    pub fn receive(&mut self, raw: S) -> S {
        let clipped = raw.max(S::zero()).min(S::one());
        if clipped != raw || raw.is_nan() {
            self.clipped += 1;
        }
        if raw.is_nan() {
            S::zero()
        } else {
            clipped
        }
    }

    pub fn cumulative_loss(&self) -> S {
        self.records.iter().map(|r| r.loss).sum()
    }

    pub fn restarts(&self) -> usize {
        self.restart_times.len()
    }

    pub fn focus_cuts(&self) -> usize {
        self.records.iter().filter(|r| r.focus_cut).count()
    }

    /// Attaches the clipping warning when clipping was frequent.
    pub fn finish(&mut self) {
        let n = self.records.len().max(1) as f64;
        if self.clipped as f64 / n > CLIP_WARN_FRACTION {
            self.warnings.push(format!(
                "losses clipped into [0, 1] on {} of {} rounds",
                self.clipped,
                self.records.len()
            ));
        }
    }
}
