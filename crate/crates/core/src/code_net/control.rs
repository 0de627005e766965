use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::math::abs;

/// Interval `[start, end)` on which the control grows at constant `rate`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcSegment {
    pub start: f64,
    pub end: f64,
    pub rate: f64,
}

/// Càdlàg control on `[0, horizon]` with `u(0) = 0`: a piecewise-constant
/// density plus jumps `(t, size)` at times in `(0, horizon]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Control {
    #[serde(default)]
    pub jumps: Vec<(f64, f64)>,
    #[serde(default)]
    pub segments: Vec<AcSegment>,
    pub horizon: f64,
}

impl Control {
    pub fn zero(horizon: f64) -> Self {
        Self { jumps: Vec::new(), segments: Vec::new(), horizon }
    }

    /// `u(t) = t` on `[0, horizon]`.
    pub fn time(horizon: f64) -> Self {
        Self { jumps: Vec::new(), segments: alloc::vec![AcSegment { start: 0.0, end: horizon, rate: 1.0 }], horizon }
    }

    /// Unit jumps at `t = 1, …, n`, horizon `n`.
    pub fn unit_steps(n: usize) -> Self {
        Self { jumps: (1..=n).map(|i| (i as f64, 1.0)).collect(), segments: Vec::new(), horizon: n as f64 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(invalid!("control horizon must be positive and finite, got {}", self.horizon));
        }
        for &(t, size) in &self.jumps {
            if !(t > 0.0 && t <= self.horizon && size.is_finite()) {
                return Err(invalid!("jump ({t}, {size}) must have time in (0, T] and finite size"));
            }
        }
        let mut segs = self.segments.clone();
        segs.sort_by(|a, b| a.start.total_cmp(&b.start));
        for s in &segs {
            if !(s.start >= 0.0 && s.start < s.end && s.end <= self.horizon && s.rate.is_finite()) {
                return Err(invalid!("segment [{}, {}) with rate {} must lie in [0, T]", s.start, s.end, s.rate));
            }
        }
        if segs.windows(2).any(|w| w[1].start < w[0].end) {
            return Err(invalid!("density segments of one control must not overlap"));
        }
        Ok(())
    }

    /// `Σ |jump sizes| + ∫ |density|`.
    pub fn total_variation(&self) -> f64 {
        let jumps: f64 = self.jumps.iter().map(|(_, s)| abs(*s)).sum();
        let ac: f64 = self.segments.iter().map(|s| abs(s.rate) * (s.end - s.start)).sum();
        jumps + ac
    }

    /// Absolutely continuous increment `∫_a^b du` on an interval.
    pub fn ac_increment(&self, a: f64, b: f64) -> f64 {
        self.segments
            .iter()
            .map(|s| {
                let lo = s.start.max(a);
                let hi = s.end.min(b);
                if hi > lo {
                    s.rate * (hi - lo)
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// Total jump `u(t) − u(t−)`.
    pub fn jump_at(&self, t: f64) -> f64 {
        self.jumps.iter().filter(|(s, _)| *s == t).map(|(_, size)| size).sum()
    }

    /// This control followed by `other`, shifted to start at `self.horizon`.
    pub fn concat(&self, other: &Control) -> Control {
        let shift = self.horizon;
        let mut out = self.clone();
        out.jumps.extend(other.jumps.iter().map(|&(t, s)| (t + shift, s)));
        out.segments.extend(other.segments.iter().map(|s| AcSegment {
            start: s.start + shift,
            end: s.end + shift,
            rate: s.rate,
        }));
        out.horizon = shift + other.horizon;
        out
    }
}

/// `B_υ = Σ_i |u_i|(T)`.
pub fn total_variation(controls: &[Control]) -> f64 {
    controls.iter().map(Control::total_variation).sum()
}
