//! Piecewise-constant controls `theta(t) = (w, a, b)` for the field `w (a.x + b)_+`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One constant piece of a control on `[t0, t1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSegment {
    pub t0: f64,
    pub t1: f64,
    pub w: Vec<f64>,
    pub a: Vec<f64>,
    pub b: f64,
}

impl ControlSegment {
    pub fn new(t0: f64, t1: f64, w: Vec<f64>, a: Vec<f64>, b: f64) -> Result<Self> {
        let seg = Self { t0, t1, w, a, b };
        seg.validate()?;
        Ok(seg)
    }

    fn validate(&self) -> Result<()> {
        if !(self.t0 < self.t1) || !self.t0.is_finite() || !self.t1.is_finite() {
            return Err(Error::Invalid(format!("segment needs t0 < t1, got [{}, {}]", self.t0, self.t1)));
        }
        if self.w.len() != self.a.len() {
            return Err(Error::Dimension { expected: self.w.len(), got: self.a.len() });
        }
        if self.w.is_empty() {
            return Err(Error::Invalid("segment has dimension zero".into()));
        }
        if !self.b.is_finite() || self.w.iter().chain(&self.a).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("segment parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn duration(&self) -> f64 {
        self.t1 - self.t0
    }

    /// `a.x + b`.
    pub fn activation(&self, x: &[f64]) -> f64 {
        self.a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() + self.b
    }

    /// `w . a`, the growth rate on the active side.
    pub fn rate(&self) -> f64 {
        self.w.iter().zip(&self.a).map(|(w, a)| w * a).sum()
    }

    /// Whether `w . a` is treated as zero (nilpotent exponential).
    pub fn is_nilpotent(&self) -> bool {
        let nw = self.w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let na = self.a.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.rate().abs() < 1e-12 * nw * na
    }

    /// Velocity `w (a.x + b)_+`.
    pub fn velocity(&self, x: &[f64]) -> Vec<f64> {
        let s = self.activation(x).max(0.0);
        self.w.iter().map(|w| w * s).collect()
    }
}

/// An ordered, contiguous list of segments covering `[0, horizon]`.
///
/// An empty segment list is the zero control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule")]
pub struct ControlSchedule {
    pub horizon: f64,
    pub segments: Vec<ControlSegment>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    horizon: f64,
    segments: Vec<ControlSegment>,
}

impl TryFrom<RawSchedule> for ControlSchedule {
    type Error = Error;
    fn try_from(raw: RawSchedule) -> Result<Self> {
        Self::new(raw.horizon, raw.segments)
    }
}

impl ControlSchedule {
    pub fn new(horizon: f64, segments: Vec<ControlSegment>) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Invalid(format!("horizon must be positive, got {horizon}")));
        }
        let tol = 1e-12 * horizon.max(1.0);
        for s in &segments {
            s.validate()?;
        }
        if let Some(first) = segments.first() {
            let d = first.dim();
            if let Some(s) = segments.iter().find(|s| s.dim() != d) {
                return Err(Error::Dimension { expected: d, got: s.dim() });
            }
            if first.t0.abs() > tol {
                return Err(Error::Invalid(format!("first segment starts at {}", first.t0)));
            }
            for (k, pair) in segments.windows(2).enumerate() {
                if (pair[0].t1 - pair[1].t0).abs() > tol {
                    return Err(Error::Invalid(format!(
                        "segments {k} and {} are not contiguous ({} vs {})",
                        k + 1,
                        pair[0].t1,
                        pair[1].t0
                    )));
                }
            }
            let last = segments.last().unwrap().t1;
            if (last - horizon).abs() > tol {
                return Err(Error::Invalid(format!("last segment ends at {last}, horizon is {horizon}")));
            }
        }
        Ok(Self { horizon, segments })
    }

    /// The zero control on `[0, horizon]`.
    pub fn empty(horizon: f64) -> Self {
        Self { horizon, segments: Vec::new() }
    }

    pub fn dim(&self) -> Option<usize> {
        self.segments.first().map(ControlSegment::dim)
    }

    pub fn switch_count(&self) -> usize {
        self.segments.len().saturating_sub(1)
    }

    /// This schedule on `[0, horizon]` followed by `next` shifted by `horizon`.
    ///
    /// An empty side is padded with an idle segment so the result stays
    /// contiguous.
    pub fn then(&self, next: &ControlSchedule) -> Result<ControlSchedule> {
        let d = self.dim().or(next.dim());
        let mut b = ScheduleBuilder::new();
        match (self.segments.is_empty(), d) {
            (true, Some(d)) => b.idle(d, self.horizon),
            _ => self.segments.iter().for_each(|s| b.push(s.w.clone(), s.a.clone(), s.b, s.duration())),
        }
        match (next.segments.is_empty(), d) {
            (true, Some(d)) => b.idle(d, next.horizon),
            _ => next.segments.iter().for_each(|s| b.push(s.w.clone(), s.a.clone(), s.b, s.duration())),
        }
        if d.is_none() {
            return Ok(ControlSchedule::empty(self.horizon + next.horizon));
        }
        b.finish()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Appends segments back to back, starting at time zero.
#[derive(Debug, Default, Clone)]
pub struct ScheduleBuilder {
    t: f64,
    segments: Vec<ControlSegment>,
}

impl ScheduleBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn push(&mut self, w: Vec<f64>, a: Vec<f64>, b: f64, dt: f64) {
        let t1 = self.t + dt;
        self.segments.push(ControlSegment { t0: self.t, t1, w, a, b });
        self.t = t1;
    }

    /// Zero field for `dt`.
    pub fn idle(&mut self, d: usize, dt: f64) {
        self.push(vec![0.0; d], vec![0.0; d], 0.0, dt);
    }

    /// Uniform translation by `shift` over `dt` (`a = 0`, `b = 1`).
    pub fn translate(&mut self, shift: &[f64], dt: f64) {
        let d = shift.len();
        self.push(shift.iter().map(|v| v / dt).collect(), vec![0.0; d], 1.0, dt);
    }

    pub fn finish(self) -> Result<ControlSchedule> {
        if self.segments.is_empty() {
            return Err(Error::Invalid("builder has no segments".into()));
        }
        ControlSchedule::new(self.t, self.segments)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(t0: f64, t1: f64) -> ControlSegment {
        ControlSegment::new(t0, t1, vec![1.0], vec![1.0], 0.0).unwrap()
    }

    #[test]
    fn rejects_gaps_and_bad_horizon() {
        assert!(ControlSchedule::new(2.0, vec![seg(0.0, 1.0), seg(1.5, 2.0)]).is_err());
        assert!(ControlSchedule::new(3.0, vec![seg(0.0, 1.0), seg(1.0, 2.0)]).is_err());
        assert!(ControlSchedule::new(2.0, vec![seg(0.0, 1.0), seg(1.0, 2.0)]).is_ok());
    }

    #[test]
    fn json_round_trip_uses_documented_keys() {
        let s = ControlSchedule::new(1.0, vec![seg(0.0, 1.0)]).unwrap();
        let js = s.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&js).unwrap();
        assert_eq!(v["horizon"], 1.0);
        assert_eq!(v["segments"][0]["t1"], 1.0);
        assert_eq!(v["segments"][0]["b"], 0.0);
        assert_eq!(ControlSchedule::from_json(&js).unwrap(), s);
    }

    #[test]
    fn json_validation_runs_on_parse() {
        let bad = r#"{"horizon":1,"segments":[{"t0":0,"t1":0.5,"w":[1],"a":[1],"b":0}]}"#;
        assert!(ControlSchedule::from_json(bad).is_err());
    }

    #[test]
    fn switch_count_and_concatenation() {
        let a = ControlSchedule::new(1.0, vec![seg(0.0, 0.5), seg(0.5, 1.0)]).unwrap();
        assert_eq!(a.switch_count(), 1);
        let c = a.then(&ControlSchedule::empty(2.0)).unwrap();
        assert_eq!(c.segments.len(), 3);
        assert_eq!(c.horizon, 3.0);
        assert_eq!(c.segments[2].w, vec![0.0]);
    }

    #[test]
    fn nilpotent_threshold_is_relative() {
        let s = ControlSegment::new(0.0, 1.0, vec![1e6, 0.0], vec![1e-20, 1e6], 0.0).unwrap();
        assert!(s.is_nilpotent());
        let s = ControlSegment::new(0.0, 1.0, vec![1.0, 0.0], vec![1e-3, 1.0], 0.0).unwrap();
        assert!(!s.is_nilpotent());
    }
}
