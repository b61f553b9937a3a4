//! Visual representations: raw frame sequences and summed softmax descriptors.

use std::fmt;
use std::str::FromStr;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::clients::{ImageBackboneClient, Taxonomy};
use crate::error::{Error, Result};
use crate::ingest::{FrameSequence, FRAME_SHAPE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisualKind {
    Frames,
    ImgnFeat,
    PlcFeat,
}

impl VisualKind {
    pub const ALL: [VisualKind; 3] = [VisualKind::Frames, VisualKind::ImgnFeat, VisualKind::PlcFeat];

    pub fn shape(self) -> Vec<usize> {
        match self {
            VisualKind::Frames => FRAME_SHAPE.to_vec(),
            VisualKind::ImgnFeat => vec![Taxonomy::Object1000.output_dim()],
            VisualKind::PlcFeat => vec![Taxonomy::Place365.output_dim()],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            VisualKind::Frames => "frames",
            VisualKind::ImgnFeat => "imgn_feat",
            VisualKind::PlcFeat => "plc_feat",
        }
    }

    pub fn taxonomy(self) -> Option<Taxonomy> {
        match self {
            VisualKind::Frames => None,
            VisualKind::ImgnFeat => Some(Taxonomy::Object1000),
            VisualKind::PlcFeat => Some(Taxonomy::Place365),
        }
    }

    pub fn for_taxonomy(t: Taxonomy) -> Self {
        match t {
            Taxonomy::Object1000 => VisualKind::ImgnFeat,
            Taxonomy::Place365 => VisualKind::PlcFeat,
        }
    }
}

impl fmt::Display for VisualKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VisualKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        VisualKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown visual feature kind '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisualFeature {
    pub kind: VisualKind,
    pub video_id: String,
    /// Row-major values of `kind.shape()`.
    pub data: Vec<f32>,
}

impl VisualFeature {
    pub fn new(kind: VisualKind, video_id: impl Into<String>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = kind.shape().iter().product();
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{kind} feature needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            kind,
            video_id: video_id.into(),
            data,
        })
    }
}

pub fn as_frames(seq: &FrameSequence) -> VisualFeature {
    VisualFeature {
        kind: VisualKind::Frames,
        video_id: seq.video_id.clone(),
        data: seq.frames.as_standard_layout().iter().copied().collect(),
    }
}

/// Element-wise sum of the backbone's probability vectors over the real
/// frames. Padding frames are skipped and the sum is not normalised.
pub fn sum_descriptors(seq: &FrameSequence, backbone: &dyn ImageBackboneClient) -> Result<VisualFeature> {
    let kind = VisualKind::for_taxonomy(backbone.taxonomy());
    let mut acc = vec![0f64; backbone.output_dim()];
    if seq.real_count == 0 {
        log::warn!("video {} has no real frames; descriptor is zero", seq.video_id);
    }
    for frame in seq.real_frames().axis_iter(Axis(0)) {
        let p = backbone.classify_frame(frame)?;
        if p.len() != acc.len() {
            return Err(Error::ShapeMismatch(format!(
                "backbone returned {} values, declared {}",
                p.len(),
                acc.len()
            )));
        }
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v as f64;
        }
    }
    VisualFeature::new(kind, seq.video_id.clone(), acc.into_iter().map(|v| v as f32).collect())
}
