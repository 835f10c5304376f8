use nalgebra::Vector3;

use crate::se3::Twist;
use crate::{Error, Result};

/// Constant body twist held for `duration` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub duration: f64,
    pub twist: Twist<f64>,
}

/// Piecewise-constant motion sampled at `frame_rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionScript {
    pub segments: Vec<Segment>,
    pub frame_rate: f64,
}

impl MotionScript {
    pub fn new(frame_rate: f64) -> Self {
        Self {
            segments: Vec::new(),
            frame_rate,
        }
    }

    pub fn segment(mut self, duration: f64, twist: Twist<f64>) -> Self {
        self.segments.push(Segment { duration, twist });
        self
    }

    pub fn rest(self, duration: f64) -> Self {
        self.segment(duration, Twist::zero())
    }

    /// Rotation by `degrees` about principal axis `axis` at constant rate.
    pub fn rotation(self, axis: usize, degrees: f64, duration: f64) -> Self {
        let mut w = Vector3::zeros();
        w[axis] = degrees.to_radians() / duration;
        self.segment(duration, Twist::new(w, Vector3::zeros()))
    }

    /// Translation by `mm` along principal axis `axis` at constant rate.
    pub fn translation(self, axis: usize, mm: f64, duration: f64) -> Self {
        let mut t = Vector3::zeros();
        t[axis] = mm / duration;
        self.segment(duration, Twist::new(Vector3::zeros(), t))
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Frames at `k / frame_rate` for `k < round(total · rate)`.
    pub fn frame_count(&self) -> usize {
        (self.total_duration() * self.frame_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(Error::InvalidConfig("frame rate must be positive".into()));
        }
        if self.segments.is_empty() {
            return Err(Error::InvalidConfig("motion script is empty".into()));
        }
        for s in &self.segments {
            if !(s.duration > 0.0 && s.duration.is_finite()) || !s.twist.is_finite() {
                return Err(Error::InvalidConfig(
                    "segment durations must be positive and twists finite".into(),
                ));
            }
        }
        Ok(())
    }

    /// Twist active just before time `t` (zero past the end).
    pub fn twist_at(&self, t: f64) -> Twist<f64> {
        let mut end = 0.0;
        for s in &self.segments {
            end += s.duration;
            if t <= end + 1e-12 {
                return s.twist;
            }
        }
        Twist::zero()
    }

    /// `(dt, twist)` pieces covering `[t0, t1]`, split at segment boundaries.
    pub fn pieces(&self, t0: f64, t1: f64) -> Vec<(f64, Twist<f64>)> {
        let mut out = Vec::new();
        let mut start = 0.0;
        for s in &self.segments {
            let end = start + s.duration;
            let (a, b) = (t0.max(start), t1.min(end));
            if b > a {
                out.push((b - a, s.twist));
            }
            start = end;
        }
        out
    }
}
