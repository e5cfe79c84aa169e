use serde::Serialize;

use super::{Block, NetworkGraph, NodeGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleDirection {
    Decreasing,
    Increasing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Segment {
    /// Block ids `start..end`.
    pub start: usize,
    pub end: usize,
    pub direction: ScaleDirection,
}

impl Segment {
    pub fn depth(&self) -> usize {
        self.end - self.start
    }
}

/// Maximal monotone runs of block output area; one cut-point per run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SegmentPlan {
    pub segments: Vec<Segment>,
}

impl SegmentPlan {
    pub fn k(&self) -> usize {
        self.segments.len()
    }

    pub fn sub_depths(&self) -> Vec<usize> {
        self.segments.iter().map(Segment::depth).collect()
    }
}

pub fn block_area(graph: &NetworkGraph, groups: &[NodeGroup], block: &Block) -> u64 {
    let last = groups[block.end - 1].last(graph);
    last.out_w as u64 * last.out_h as u64
}

pub fn infer_segments(graph: &NetworkGraph, groups: &[NodeGroup], blocks: &[Block]) -> SegmentPlan {
    let areas: Vec<u64> = blocks.iter().map(|b| block_area(graph, groups, b)).collect();
    segments_from_areas(&areas)
}

pub(crate) fn segments_from_areas(areas: &[u64]) -> SegmentPlan {
    let mut segments = Vec::new();
    if areas.is_empty() {
        return SegmentPlan { segments };
    }
    let mut start = 0;
    let mut dir: Option<ScaleDirection> = None;
    for i in 1..areas.len() {
        let d = match areas[i].cmp(&areas[i - 1]) {
            std::cmp::Ordering::Equal => continue,
            std::cmp::Ordering::Less => ScaleDirection::Decreasing,
            std::cmp::Ordering::Greater => ScaleDirection::Increasing,
        };
        match dir {
            None => dir = Some(d),
            Some(cur) if cur != d => {
                segments.push(Segment { start, end: i, direction: cur });
                start = i;
                dir = Some(d);
            }
            _ => {}
        }
    }
    segments.push(Segment {
        start,
        end: areas.len(),
        direction: dir.unwrap_or(ScaleDirection::Decreasing),
    });
    SegmentPlan { segments }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_single_segment() {
        let p = segments_from_areas(&[64, 64, 16, 16, 4, 1, 1]);
        assert_eq!(p.k(), 1);
        assert_eq!(p.segments[0].direction, ScaleDirection::Decreasing);
    }

    #[test]
    fn autoencoder_two_segments() {
        let p = segments_from_areas(&[64, 16, 4, 4, 16, 64]);
        assert_eq!(p.k(), 2);
        assert_eq!(p.sub_depths(), vec![4, 2]);
        assert_eq!(p.segments[1].direction, ScaleDirection::Increasing);
    }

    #[test]
    fn panet_three_segments() {
        let p = segments_from_areas(&[64, 16, 4, 16, 64, 16, 4]);
        assert_eq!(p.k(), 3);
    }

    #[test]
    fn flat_and_empty() {
        assert_eq!(segments_from_areas(&[5, 5, 5]).k(), 1);
        assert_eq!(segments_from_areas(&[]).k(), 0);
    }
}
