use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ScaleDirection, SegmentPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Row-based weight reuse: features stream through DRAM, a layer's weights are preloaded.
    Row,
    /// Frame-based weight reuse: whole feature maps stay in the on-chip buffers.
    Frame,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Row => "row",
            Scheme::Frame => "frame",
        }
    }
}

/// Cut-point positions, one per segment, relative to the segment start.
///
/// In a decreasing-scale segment the first `L` blocks use row reuse and the
/// rest frame reuse; in an increasing-scale segment the first `L` blocks use
/// frame reuse and the rest row reuse. `L` ranges over `0..=depth`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ReusePolicy {
    pub cut_points: Vec<usize>,
}

impl ReusePolicy {
    pub fn new(cut_points: Vec<usize>) -> Self {
        ReusePolicy { cut_points }
    }

    /// Every block in frame reuse.
    pub fn all_frame(plan: &SegmentPlan) -> Self {
        ReusePolicy::new(
            plan.segments
                .iter()
                .map(|s| match s.direction {
                    ScaleDirection::Decreasing => 0,
                    ScaleDirection::Increasing => s.depth(),
                })
                .collect(),
        )
    }

    /// Every block in row reuse.
    pub fn all_row(plan: &SegmentPlan) -> Self {
        ReusePolicy::new(
            plan.segments
                .iter()
                .map(|s| match s.direction {
                    ScaleDirection::Decreasing => s.depth(),
                    ScaleDirection::Increasing => 0,
                })
                .collect(),
        )
    }

    pub fn validate(&self, plan: &SegmentPlan) -> Result<()> {
        if self.cut_points.len() != plan.k() {
            return Err(Error::InvalidPolicy(format!(
                "{} cut-points for {} segments",
                self.cut_points.len(),
                plan.k()
            )));
        }
        for (j, (&l, s)) in self.cut_points.iter().zip(&plan.segments).enumerate() {
            if l > s.depth() {
                return Err(Error::InvalidPolicy(format!("cut-point {j} = {l} exceeds segment depth {}", s.depth())));
            }
        }
        Ok(())
    }

    /// Per-block schemes.
    pub fn schemes(&self, plan: &SegmentPlan) -> Result<Vec<Scheme>> {
        self.validate(plan)?;
        let n = plan.segments.last().map_or(0, |s| s.end);
        let mut out = vec![Scheme::Row; n];
        for (&l, s) in self.cut_points.iter().zip(&plan.segments) {
            for b in s.start..s.end {
                let rel = b - s.start;
                let row = match s.direction {
                    ScaleDirection::Decreasing => rel < l,
                    ScaleDirection::Increasing => rel >= l,
                };
                out[b] = if row { Scheme::Row } else { Scheme::Frame };
            }
        }
        Ok(out)
    }

    /// Absolute block index of each cut-point.
    pub fn absolute(&self, plan: &SegmentPlan) -> Vec<usize> {
        self.cut_points.iter().zip(&plan.segments).map(|(&l, s)| s.start + l).collect()
    }

    /// Every tuple in `0..=N_1 x ... x 0..=N_k`, lexicographic.
    pub fn enumerate(plan: &SegmentPlan) -> Vec<ReusePolicy> {
        let mut out = vec![Vec::new()];
        for s in &plan.segments {
            let mut next = Vec::with_capacity(out.len() * (s.depth() + 1));
            for prefix in &out {
                for l in 0..=s.depth() {
                    let mut v = prefix.clone();
                    v.push(l);
                    next.push(v);
                }
            }
            out = next;
        }
        out.into_iter().map(ReusePolicy::new).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Segment;

    fn plan() -> SegmentPlan {
        SegmentPlan {
            segments: vec![
                Segment { start: 0, end: 3, direction: ScaleDirection::Decreasing },
                Segment { start: 3, end: 5, direction: ScaleDirection::Increasing },
            ],
        }
    }

    #[test]
    fn double_cut_semantics() {
        use Scheme::*;
        let p = plan();
        // rows before L1, rows from N1 + L2 on
        assert_eq!(ReusePolicy::new(vec![1, 1]).schemes(&p).unwrap(), vec![Row, Frame, Frame, Frame, Row]);
        assert_eq!(ReusePolicy::all_frame(&p).schemes(&p).unwrap(), vec![Frame; 5]);
        assert_eq!(ReusePolicy::all_row(&p).schemes(&p).unwrap(), vec![Row; 5]);
        assert_eq!(ReusePolicy::new(vec![1, 1]).absolute(&p), vec![1, 4]);
    }

    #[test]
    fn enumeration_covers_product() {
        let all = ReusePolicy::enumerate(&plan());
        assert_eq!(all.len(), 4 * 3);
        assert!(all.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(ReusePolicy::new(vec![4, 0]).schemes(&plan()).is_err());
        assert!(ReusePolicy::new(vec![0]).schemes(&plan()).is_err());
    }
}
