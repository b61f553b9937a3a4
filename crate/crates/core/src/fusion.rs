//! Modality encoders, the three fusion strategies and single-modality
//! baselines, plus checkpoint serialisation.
//!
//! * early: both raw features are flattened, the shorter is zero-padded and
//!   the two are interleaved `[t0, v0, t1, v1, ...]` before a dense head;
//! * joint: each modality is encoded to a 512-d global descriptor, the
//!   descriptors are interleaved and classified by the same dense head;
//! * late: each modality has its own classifier and the two probability
//!   vectors are summed; the argmax of the sum is the prediction.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Array3, Array5, Axis};
use num_traits::Zero;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{FRAMES_PER_VIDEO, FRAME_SIZE};
use crate::nn::{
    join, softmax_rows, Activation, ConvLstm, ConvLstmCache, Dense, DenseCache, Lstm, LstmCache, Module, Real,
    Visitor,
};
use crate::store;
use crate::textfeat::{TextFeature, TextKind, MAX_TOKENS};
use crate::visfeat::{VisualFeature, VisualKind};

pub const DESCRIPTOR_DIM: usize = 512;
pub const NUM_CLASSES: usize = 9;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SFCK";
pub const CHECKPOINT_VERSION: u32 = 1;
/// Probabilities are clamped to this floor before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Early,
    Joint,
    Late,
    SingleText,
    SingleVisual,
}

impl FusionMode {
    pub const ALL: [FusionMode; 5] = [
        FusionMode::Early,
        FusionMode::Joint,
        FusionMode::Late,
        FusionMode::SingleText,
        FusionMode::SingleVisual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Early => "early",
            FusionMode::Joint => "joint",
            FusionMode::Late => "late",
            FusionMode::SingleText => "single_text",
            FusionMode::SingleVisual => "single_visual",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        FusionMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion mode '{s}'")))
    }
}

fn default_classes() -> usize {
    NUM_CLASSES
}
fn default_units() -> usize {
    DESCRIPTOR_DIM
}
fn default_head() -> [usize; 2] {
    [256, 128]
}
fn default_kernel() -> [usize; 2] {
    [3, 3]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionModelConfig {
    pub fusion: FusionMode,
    #[serde(default)]
    pub text_kind: Option<TextKind>,
    #[serde(default)]
    pub visual_kind: Option<VisualKind>,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default = "default_units")]
    pub encoder_units: usize,
    #[serde(default = "default_head")]
    pub head_units: [usize; 2],
    #[serde(default = "default_kernel")]
    pub recurrent_kernel: [usize; 2],
}

impl FusionModelConfig {
    pub fn new(fusion: FusionMode, text_kind: Option<TextKind>, visual_kind: Option<VisualKind>) -> Self {
        Self {
            fusion,
            text_kind,
            visual_kind,
            num_classes: NUM_CLASSES,
            encoder_units: DESCRIPTOR_DIM,
            head_units: default_head(),
            recurrent_kernel: default_kernel(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.encoder_units == 0 || self.head_units.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if self.recurrent_kernel.iter().any(|&k| k == 0 || k % 2 == 0) {
            return bad(format!(
                "recurrent kernel must have odd positive sides, got {:?}",
                self.recurrent_kernel
            ));
        }
        let (t, v) = (self.text_kind.is_some(), self.visual_kind.is_some());
        match self.fusion {
            FusionMode::Early | FusionMode::Joint | FusionMode::Late if !(t && v) => {
                bad(format!("{} fusion needs both a text and a visual feature kind", self.fusion))
            }
            FusionMode::Early if self.visual_kind == Some(VisualKind::Frames) => bad(
                "early fusion concatenates raw feature vectors, so frames cannot be used as features".into(),
            ),
            FusionMode::SingleText if !t || v => bad("single_text needs a text kind and no visual kind".into()),
            FusionMode::SingleVisual if t || !v => bad("single_visual needs a visual kind and no text kind".into()),
            _ => Ok(()),
        }
    }

    /// Short human label, e.g. `joint/count_vect/imgn_feat`.
    pub fn descriptor_label(&self) -> String {
        let mut parts = vec![self.fusion.name().to_string()];
        parts.extend(self.text_kind.map(|k| k.name().to_string()));
        parts.extend(self.visual_kind.map(|k| k.name().to_string()));
        parts.join("/")
    }

    fn early_length(&self) -> usize {
        let t: usize = self.text_kind.map_or(0, |k| k.shape().iter().product());
        let v: usize = self.visual_kind.map_or(0, |k| k.shape().iter().product());
        t.max(v)
    }
}

/// Interleaves `[t0, v0, t1, v1, ...]`, zero-padding the shorter input.
pub fn early_fuse<T: Copy + Zero>(t: &[T], v: &[T]) -> Vec<T> {
    let len = t.len().max(v.len());
    let mut out = Vec::with_capacity(2 * len);
    for i in 0..len {
        out.push(t.get(i).copied().unwrap_or_else(T::zero));
        out.push(v.get(i).copied().unwrap_or_else(T::zero));
    }
    out
}

/// Interleaves two equal-length global descriptors.
pub fn joint_fuse<T: Copy + Zero>(g_t: &[T], g_v: &[T]) -> Result<Vec<T>> {
    if g_t.len() != g_v.len() {
        return Err(Error::ShapeMismatch(format!(
            "descriptors differ in length: {} vs {}",
            g_t.len(),
            g_v.len()
        )));
    }
    Ok(early_fuse(g_t, g_v))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Sums two probability vectors without renormalising; returns the sum and
/// the winning class.
pub fn late_fuse<T: Real>(p_t: &[T], p_v: &[T]) -> (Vec<T>, usize) {
    let aggregate: Vec<T> = p_t.iter().zip(p_v).map(|(&a, &b)| a + b).collect();
    let winner = argmax(&aggregate);
    (aggregate, winner)
}

/// Row-wise interleave of two batches, zero-padding the narrower one.
fn interleave_rows<T: Real>(a: &Array2<T>, b: &Array2<T>) -> Array2<T> {
    let len = a.ncols().max(b.ncols());
    let mut out = Array2::zeros((a.nrows(), 2 * len));
    for (r, mut row) in out.rows_mut().into_iter().enumerate() {
        for j in 0..a.ncols() {
            row[2 * j] = a[[r, j]];
        }
        for j in 0..b.ncols() {
            row[2 * j + 1] = b[[r, j]];
        }
    }
    out
}

/// Adjoint of [`interleave_rows`] for equal widths.
fn deinterleave_rows<T: Real>(d: &Array2<T>) -> (Array2<T>, Array2<T>) {
    let half = d.ncols() / 2;
    let a = Array2::from_shape_fn((d.nrows(), half), |(r, j)| d[[r, 2 * j]]);
    let b = Array2::from_shape_fn((d.nrows(), half), |(r, j)| d[[r, 2 * j + 1]]);
    (a, b)
}

/// Stack of dense layers; the last one is linear (softmax is applied by the caller).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T: Real> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Real> Mlp<T> {
    /// Hidden layers use ReLU; the output layer is linear.
    pub fn new(rng: &mut ChaCha8Rng, input: usize, hidden: &[usize], output: usize) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input;
        for &h in hidden {
            layers.push(Dense::new(rng, prev, h, Activation::Relu));
            prev = h;
        }
        layers.push(Dense::new(rng, prev, output, Activation::Identity));
        Self { layers }
    }

    pub fn infer(&self, x: &Array2<T>) -> Array2<T> {
        self.layers.iter().fold(x.clone(), |h, l| l.infer(&h))
    }

    pub fn forward(&self, x: &Array2<T>) -> (Array2<T>, Vec<DenseCache<T>>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &self.layers {
            let (y, c) = l.forward(&h);
            caches.push(c);
            h = y;
        }
        (h, caches)
    }

    pub fn backward(&mut self, caches: Vec<DenseCache<T>>, dy: Array2<T>) -> Array2<T> {
        let mut d = dy;
        for (l, c) in self.layers.iter_mut().zip(caches).rev() {
            d = l.backward(c, d);
        }
        d
    }
}

impl<T: Real> Module<T> for Mlp<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_params(&join(prefix, &i.to_string()), f);
        }
    }
}

/// Softmax probabilities of a head applied to a fused vector.
pub fn classify_head<T: Real>(fused: &[T], head: &Mlp<T>) -> Vec<T> {
    let x = Array2::from_shape_vec((1, fused.len()), fused.to_vec()).expect("one row");
    softmax_rows(&head.infer(&x)).row(0).to_vec()
}

/// Mean categorical cross-entropy of softmax(logits) and the gradient with
/// respect to the logits.
pub fn softmax_cross_entropy<T: Real>(logits: &Array2<T>, labels: &[usize]) -> (T, Array2<T>, Array2<T>) {
    let probs = softmax_rows(logits);
    let n = T::lit(labels.len() as f64);
    let floor = T::lit(PROB_FLOOR);
    let mut loss = T::zero();
    let mut grad = probs.clone();
    for (r, &y) in labels.iter().enumerate() {
        // `max` would turn a NaN probability into the floor and hide divergence.
        let p = probs[[r, y]];
        loss -= if p.is_nan() { p } else { p.max(floor) }.ln();
        grad[[r, y]] -= T::one();
    }
    grad.mapv_inplace(|g| g / n);
    (loss / n, probs, grad)
}

/// Batched model input for one modality.
#[derive(Debug, Clone)]
pub enum ModalityInput<T> {
    /// `batch × dim`
    Global(Array2<T>),
    /// `batch × time × dim`
    Sequence(Array3<T>),
    /// `batch × time × H × W × C`
    Frames(Array5<T>),
}

impl<T> ModalityInput<T> {
    pub fn batch_size(&self) -> usize {
        match self {
            ModalityInput::Global(x) => x.nrows(),
            ModalityInput::Sequence(x) => x.dim().0,
            ModalityInput::Frames(x) => x.dim().0,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Inputs<T> {
    Fused(Array2<T>),
    Pair { text: ModalityInput<T>, visual: ModalityInput<T> },
    Single(ModalityInput<T>),
}

impl<T> Inputs<T> {
    pub fn batch_size(&self) -> usize {
        match self {
            Inputs::Fused(x) => x.nrows(),
            Inputs::Pair { text, .. } => text.batch_size(),
            Inputs::Single(m) => m.batch_size(),
        }
    }
}

/// The features of one video, as consumed by a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub video_id: String,
    pub text: Option<TextFeature>,
    pub visual: Option<VisualFeature>,
}

/// Model-facing values of a text feature: count indices are scaled by the
/// vocabulary size so they land in `[0, 1]`.
pub fn text_values(f: &TextFeature) -> Vec<f32> {
    match f.kind {
        TextKind::CountVect => {
            let size = f.vocab_size.unwrap_or(1).max(1) as f32;
            f.data.iter().map(|v| v / size).collect()
        }
        _ => f.data.clone(),
    }
}

fn lit<T: Real>(v: f32) -> T {
    T::from_f32(v).expect("f32 converts")
}

fn text_of<'a>(config: &FusionModelConfig, ex: &'a Example) -> Result<&'a TextFeature> {
    let want = config.text_kind.expect("validated config");
    let f = ex.text.as_ref().ok_or_else(|| Error::MissingFeature {
        id: ex.video_id.clone(),
        kind: want.name().into(),
    })?;
    if f.kind != want {
        return Err(Error::KindMismatch(format!(
            "video {}: model expects {want}, got {}",
            ex.video_id, f.kind
        )));
    }
    Ok(f)
}

fn visual_of<'a>(config: &FusionModelConfig, ex: &'a Example) -> Result<&'a VisualFeature> {
    let want = config.visual_kind.expect("validated config");
    let f = ex.visual.as_ref().ok_or_else(|| Error::MissingFeature {
        id: ex.video_id.clone(),
        kind: want.name().into(),
    })?;
    if f.kind != want {
        return Err(Error::KindMismatch(format!(
            "video {}: model expects {want}, got {}",
            ex.video_id, f.kind
        )));
    }
    Ok(f)
}

fn rows_to_global<T: Real>(rows: &[Vec<f32>]) -> Array2<T> {
    let width = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), width), |(r, c)| lit(rows[r][c]))
}

fn text_input<T: Real>(kind: TextKind, rows: &[Vec<f32>]) -> ModalityInput<T> {
    match kind {
        TextKind::CountVect | TextKind::W2vPad => {
            let dim = rows[0].len() / MAX_TOKENS;
            ModalityInput::Sequence(Array3::from_shape_fn((rows.len(), MAX_TOKENS, dim), |(b, t, i)| {
                lit(rows[b][t * dim + i])
            }))
        }
        TextKind::W2vSum | TextKind::SentBert => ModalityInput::Global(rows_to_global(rows)),
    }
}

fn visual_input<T: Real>(kind: VisualKind, rows: &[&[f32]]) -> ModalityInput<T> {
    match kind {
        VisualKind::Frames => {
            let (t, s) = (FRAMES_PER_VIDEO, FRAME_SIZE);
            let mut x = Array5::zeros((rows.len(), t, s, s, 3));
            for (b, row) in rows.iter().enumerate() {
                for (dst, &v) in x.index_axis_mut(Axis(0), b).iter_mut().zip(row.iter()) {
                    *dst = lit(v);
                }
            }
            ModalityInput::Frames(x)
        }
        VisualKind::ImgnFeat | VisualKind::PlcFeat => {
            let width = rows.first().map_or(0, |r| r.len());
            ModalityInput::Global(Array2::from_shape_fn((rows.len(), width), |(r, c)| lit(rows[r][c])))
        }
    }
}

/// Builds the batched input for `config` from per-video features.
pub fn assemble_inputs<T: Real>(config: &FusionModelConfig, examples: &[&Example]) -> Result<Inputs<T>> {
    if examples.is_empty() {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    let texts = || -> Result<Vec<Vec<f32>>> {
        examples.iter().map(|ex| text_of(config, ex).map(text_values)).collect()
    };
    let visuals = || -> Result<Vec<&[f32]>> {
        examples.iter().map(|ex| visual_of(config, ex).map(|f| f.data.as_slice())).collect()
    };
    Ok(match config.fusion {
        FusionMode::Early => {
            let t = texts()?;
            let v = visuals()?;
            let len = config.early_length();
            let mut x = Array2::zeros((examples.len(), 2 * len));
            for (r, (tr, vr)) in t.iter().zip(&v).enumerate() {
                for (dst, val) in x.row_mut(r).iter_mut().zip(early_fuse(tr, vr)) {
                    *dst = lit(val);
                }
            }
            Inputs::Fused(x)
        }
        FusionMode::Joint | FusionMode::Late => Inputs::Pair {
            text: text_input(config.text_kind.unwrap(), &texts()?),
            visual: visual_input(config.visual_kind.unwrap(), &visuals()?),
        },
        FusionMode::SingleText => Inputs::Single(text_input(config.text_kind.unwrap(), &texts()?)),
        FusionMode::SingleVisual => Inputs::Single(visual_input(config.visual_kind.unwrap(), &visuals()?)),
    })
}

/// Maps one modality to a global descriptor.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoder<T: Real> {
    Dense(Dense<T>),
    Lstm(Lstm<T>),
    ConvLstm(ConvLstm<T>),
}

pub enum EncoderCache<T> {
    Dense(DenseCache<T>),
    Lstm(LstmCache<T>),
    ConvLstm(ConvLstmCache<T>),
}

fn shape_error(what: &str) -> Error {
    Error::ShapeMismatch(format!("encoder received a {what} input it cannot consume"))
}

impl<T: Real> Encoder<T> {
    pub fn for_text(rng: &mut ChaCha8Rng, kind: TextKind, units: usize) -> Self {
        let in_dim = match kind {
            TextKind::CountVect => 1,
            k => *k.shape().last().unwrap(),
        };
        if kind.is_sequence() {
            Encoder::Lstm(Lstm::new(rng, in_dim, units))
        } else {
            Encoder::Dense(Dense::new(rng, in_dim, units, Activation::Relu))
        }
    }

    pub fn for_visual(rng: &mut ChaCha8Rng, kind: VisualKind, units: usize, kernel: [usize; 2]) -> Self {
        match kind {
            VisualKind::Frames => Encoder::ConvLstm(ConvLstm::new(rng, 3, units, (kernel[0], kernel[1]))),
            k => Encoder::Dense(Dense::new(rng, k.shape()[0], units, Activation::Relu)),
        }
    }

    pub fn infer(&self, x: &ModalityInput<T>) -> Result<Array2<T>> {
        Ok(match (self, x) {
            (Encoder::Dense(l), ModalityInput::Global(x)) => l.infer(x),
            (Encoder::Lstm(l), ModalityInput::Sequence(x)) => l.infer(x),
            (Encoder::ConvLstm(l), ModalityInput::Frames(x)) => l.infer(x),
            _ => return Err(shape_error("mismatched")),
        })
    }

    pub fn forward(&self, x: &ModalityInput<T>) -> Result<(Array2<T>, EncoderCache<T>)> {
        Ok(match (self, x) {
            (Encoder::Dense(l), ModalityInput::Global(x)) => {
                let (y, c) = l.forward(x);
                (y, EncoderCache::Dense(c))
            }
            (Encoder::Lstm(l), ModalityInput::Sequence(x)) => {
                let (y, c) = l.forward(x);
                (y, EncoderCache::Lstm(c))
            }
            (Encoder::ConvLstm(l), ModalityInput::Frames(x)) => {
                let (y, c) = l.forward(x);
                (y, EncoderCache::ConvLstm(c))
            }
            _ => return Err(shape_error("mismatched")),
        })
    }

    pub fn backward(&mut self, cache: EncoderCache<T>, dy: Array2<T>) {
        match (self, cache) {
            (Encoder::Dense(l), EncoderCache::Dense(c)) => {
                l.backward(c, dy);
            }
            (Encoder::Lstm(l), EncoderCache::Lstm(c)) => {
                l.backward(c, dy);
            }
            (Encoder::ConvLstm(l), EncoderCache::ConvLstm(c)) => {
                l.backward(c, dy);
            }
            _ => unreachable!("cache produced by a different encoder"),
        }
    }
}

impl<T: Real> Module<T> for Encoder<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        match self {
            Encoder::Dense(l) => l.visit_params(prefix, f),
            Encoder::Lstm(l) => l.visit_params(prefix, f),
            Encoder::ConvLstm(l) => l.visit_params(prefix, f),
        }
    }
}

/// A model for one [`FusionModelConfig`]. For late fusion `head` is the text
/// branch's classifier and `visual_head` the visual branch's.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel<T: Real> {
    pub config: FusionModelConfig,
    pub text_encoder: Option<Encoder<T>>,
    pub visual_encoder: Option<Encoder<T>>,
    pub head: Mlp<T>,
    pub visual_head: Option<Mlp<T>>,
}

pub fn build_model<T: Real>(config: &FusionModelConfig, seed: u64) -> Result<FusionModel<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = config.encoder_units;
    let classes = config.num_classes;
    let [h1, h2] = config.head_units;
    let with_text = !matches!(config.fusion, FusionMode::Early | FusionMode::SingleVisual);
    let with_visual = !matches!(config.fusion, FusionMode::Early | FusionMode::SingleText);
    let text_encoder = if with_text {
        Some(Encoder::for_text(&mut rng, config.text_kind.unwrap(), u))
    } else {
        None
    };
    let visual_encoder = if with_visual {
        Some(Encoder::for_visual(&mut rng, config.visual_kind.unwrap(), u, config.recurrent_kernel))
    } else {
        None
    };
    let (head, visual_head) = match config.fusion {
        FusionMode::Early => (Mlp::new(&mut rng, 2 * config.early_length(), &[h1, h2], classes), None),
        FusionMode::Joint => (Mlp::new(&mut rng, 2 * u, &[h1, h2], classes), None),
        FusionMode::Late => (
            Mlp::new(&mut rng, u, &[h1], classes),
            Some(Mlp::new(&mut rng, u, &[h1], classes)),
        ),
        FusionMode::SingleText | FusionMode::SingleVisual => (Mlp::new(&mut rng, u, &[], classes), None),
    };
    Ok(FusionModel {
        config: config.clone(),
        text_encoder,
        visual_encoder,
        head,
        visual_head,
    })
}

fn single_encoder<T: Real>(m: &FusionModel<T>) -> &Encoder<T> {
    m.text_encoder.as_ref().or(m.visual_encoder.as_ref()).expect("single model has an encoder")
}

fn mismatch() -> Error {
    Error::KindMismatch("inputs were assembled for a different fusion mode".into())
}

impl<T: Real> FusionModel<T> {
    /// Per-sample probability vectors. Late fusion returns half the summed
    /// branch probabilities, so rows still lie on the simplex.
    pub fn forward(&self, inputs: &Inputs<T>) -> Result<Array2<T>> {
        match (self.config.fusion, inputs) {
            (FusionMode::Early, Inputs::Fused(x)) => self.check_width(x).map(|_| softmax_rows(&self.head.infer(x))),
            (FusionMode::Joint, Inputs::Pair { text, visual }) => {
                let gt = self.text_encoder.as_ref().unwrap().infer(text)?;
                let gv = self.visual_encoder.as_ref().unwrap().infer(visual)?;
                Ok(softmax_rows(&self.head.infer(&interleave_rows(&gt, &gv))))
            }
            (FusionMode::Late, Inputs::Pair { .. }) => {
                let (pt, pv) = self.branch_probs(inputs)?;
                Ok((pt + pv).mapv(|v| v / T::lit(2.0)))
            }
            (FusionMode::SingleText | FusionMode::SingleVisual, Inputs::Single(x)) => {
                Ok(softmax_rows(&self.head.infer(&single_encoder(self).infer(x)?)))
            }
            _ => Err(mismatch()),
        }
    }

    /// Text and visual branch probabilities of a late-fusion model.
    pub fn branch_probs(&self, inputs: &Inputs<T>) -> Result<(Array2<T>, Array2<T>)> {
        match (self.config.fusion, inputs) {
            (FusionMode::Late, Inputs::Pair { text, visual }) => {
                let gt = self.text_encoder.as_ref().unwrap().infer(text)?;
                let gv = self.visual_encoder.as_ref().unwrap().infer(visual)?;
                let pt = softmax_rows(&self.head.infer(&gt));
                let pv = softmax_rows(&self.visual_head.as_ref().unwrap().infer(&gv));
                Ok((pt, pv))
            }
            _ => Err(mismatch()),
        }
    }

    /// Winning class per sample; late fusion decides on the raw aggregate.
    pub fn predict(&self, inputs: &Inputs<T>) -> Result<Vec<usize>> {
        if self.config.fusion == FusionMode::Late {
            let (pt, pv) = self.branch_probs(inputs)?;
            return Ok(pt
                .rows()
                .into_iter()
                .zip(pv.rows())
                .map(|(a, b)| late_fuse(&a.to_vec(), &b.to_vec()).1)
                .collect());
        }
        let p = self.forward(inputs)?;
        Ok(p.rows().into_iter().map(|r| argmax(&r.to_vec())).collect())
    }

    /// Mean cross-entropy of the batch, accumulating parameter gradients.
    /// Late fusion sums the two branch losses so each branch is trained
    /// against the labels on its own. Returns the loss and the probabilities
    /// that [`forward`](Self::forward) would give.
    pub fn loss_and_grad(&mut self, inputs: &Inputs<T>, labels: &[usize]) -> Result<(T, Array2<T>)> {
        if labels.len() != inputs.batch_size() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for a batch of {}",
                labels.len(),
                inputs.batch_size()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.config.num_classes) {
            return Err(Error::LabelOutOfVocabulary {
                label: bad,
                classes: self.config.num_classes,
            });
        }
        match (self.config.fusion, inputs) {
            (FusionMode::Early, Inputs::Fused(x)) => {
                self.check_width(x)?;
                let (logits, caches) = self.head.forward(x);
                let (loss, probs, d) = softmax_cross_entropy(&logits, labels);
                self.head.backward(caches, d);
                Ok((loss, probs))
            }
            (FusionMode::Joint, Inputs::Pair { text, visual }) => {
                let (gt, ct) = self.text_encoder.as_ref().unwrap().forward(text)?;
                let (gv, cv) = self.visual_encoder.as_ref().unwrap().forward(visual)?;
                let (logits, caches) = self.head.forward(&interleave_rows(&gt, &gv));
                let (loss, probs, d) = softmax_cross_entropy(&logits, labels);
                let (dt, dv) = deinterleave_rows(&self.head.backward(caches, d));
                self.text_encoder.as_mut().unwrap().backward(ct, dt);
                self.visual_encoder.as_mut().unwrap().backward(cv, dv);
                Ok((loss, probs))
            }
            (FusionMode::Late, Inputs::Pair { text, visual }) => {
                let (gt, ct) = self.text_encoder.as_ref().unwrap().forward(text)?;
                let (logits_t, caches_t) = self.head.forward(&gt);
                let (loss_t, pt, dt) = softmax_cross_entropy(&logits_t, labels);
                let dgt = self.head.backward(caches_t, dt);
                self.text_encoder.as_mut().unwrap().backward(ct, dgt);

                let vhead = self.visual_head.as_mut().unwrap();
                let (gv, cv) = self.visual_encoder.as_ref().unwrap().forward(visual)?;
                let (logits_v, caches_v) = vhead.forward(&gv);
                let (loss_v, pv, dv) = softmax_cross_entropy(&logits_v, labels);
                let dgv = vhead.backward(caches_v, dv);
                self.visual_encoder.as_mut().unwrap().backward(cv, dgv);
                Ok((loss_t + loss_v, (pt + pv).mapv(|v| v / T::lit(2.0))))
            }
            (FusionMode::SingleText | FusionMode::SingleVisual, Inputs::Single(x)) => {
                let enc = self.text_encoder.as_mut().or(self.visual_encoder.as_mut()).unwrap();
                let (g, c) = enc.forward(x)?;
                let (logits, caches) = self.head.forward(&g);
                let (loss, probs, d) = softmax_cross_entropy(&logits, labels);
                let dg = self.head.backward(caches, d);
                enc.backward(c, dg);
                Ok((loss, probs))
            }
            _ => Err(mismatch()),
        }
    }

    fn check_width(&self, x: &Array2<T>) -> Result<()> {
        let want = self.head.layers[0].input_dim();
        if x.ncols() != want {
            return Err(Error::ShapeMismatch(format!(
                "fused input has width {}, head expects {want}",
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Copies every parameter value into a flat snapshot (visit order).
    pub fn snapshot(&mut self) -> Vec<Vec<T>> {
        let mut out = Vec::new();
        self.visit_params("", &mut |_, _, v, _| out.push(v.to_vec()));
        out
    }

    pub fn restore(&mut self, snapshot: &[Vec<T>]) {
        let mut i = 0;
        self.visit_params("", &mut |_, _, v, _| {
            v.copy_from_slice(&snapshot[i]);
            i += 1;
        });
    }
}

impl<T: Real> Module<T> for FusionModel<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        if let Some(e) = self.text_encoder.as_mut() {
            e.visit_params(&join(prefix, "text_encoder"), f);
        }
        if let Some(e) = self.visual_encoder.as_mut() {
            e.visit_params(&join(prefix, "visual_encoder"), f);
        }
        let head_name = if self.visual_head.is_some() { "text_head" } else { "head" };
        self.head.visit_params(&join(prefix, head_name), f);
        if let Some(h) = self.visual_head.as_mut() {
            h.visit_params(&join(prefix, "visual_head"), f);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: FusionModelConfig,
    pub seed: u64,
    pub classes: Vec<String>,
    pub tensors: Vec<TensorEntry>,
}

/// Layout: magic, u32 header length, JSON header, then every tensor as
/// little-endian f32 in header order.
pub fn checkpoint_bytes(model: &mut FusionModel<f32>, seed: u64, classes: &[String]) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut data = Vec::new();
    model.visit_params("", &mut |name, shape, v, _| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
        });
        data.extend_from_slice(v);
    });
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        seed,
        classes: classes.to_vec(),
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + data.len() * 4);
    out.write_all(CHECKPOINT_MAGIC).unwrap();
    out.write_all(&(json.len() as u32).to_le_bytes()).unwrap();
    out.write_all(&json).unwrap();
    out.extend(store::f32_to_le_bytes(&data));
    Ok(out)
}

pub fn save_checkpoint(path: &Path, model: &mut FusionModel<f32>, seed: u64, classes: &[String]) -> Result<()> {
    store::atomic_write(path, &checkpoint_bytes(model, seed, classes)?)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<(FusionModel<f32>, CheckpointHeader)> {
    let fail = |m: String| Error::Checkpoint(m);
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(fail("not a model checkpoint".into()));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = bytes.get(8..8 + len).ok_or_else(|| fail("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(fail(format!(
            "format version {} is not supported (expected {CHECKPOINT_VERSION})",
            header.format_version
        )));
    }
    let data = store::f32_from_le_bytes(&bytes[8 + len..])?;
    let mut model = build_model::<f32>(&header.config, header.seed)?;
    let expected = model.param_shapes();
    let declared: Vec<(String, Vec<usize>)> = header.tensors.iter().map(|t| (t.name.clone(), t.shape.clone())).collect();
    if expected != declared {
        return Err(fail("tensor table does not match the configured architecture".into()));
    }
    let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if data.len() != total {
        return Err(fail(format!("expected {total} parameter values, found {}", data.len())));
    }
    let mut offset = 0;
    model.visit_params("", &mut |_, _, v, _| {
        v.copy_from_slice(&data[offset..offset + v.len()]);
        offset += v.len();
    });
    Ok((model, header))
}

pub fn load_checkpoint(path: &Path) -> Result<(FusionModel<f32>, CheckpointHeader)> {
    parse_checkpoint(&store::read_file(path)?)
}
