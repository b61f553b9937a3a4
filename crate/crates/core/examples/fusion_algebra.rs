//! The three ways of combining text and visual information, on toy values.
//!
//!     cargo run --example fusion_algebra

use scenefuse::fusion::{build_model, early_fuse, joint_fuse, late_fuse, FusionMode, FusionModelConfig};
use scenefuse::nn::Module;
use scenefuse::textfeat::TextKind;
use scenefuse::visfeat::VisualKind;

fn main() -> scenefuse::Result<()> {
    // Early: features interleaved, shorter side zero-padded.
    println!("early  {:?}", early_fuse(&[1.0, 2.0, 3.0], &[10.0, 20.0]));
    // Joint: equal-length encoder descriptors interleaved.
    println!("joint  {:?}", joint_fuse(&[0.1, 0.2], &[0.9, 0.8])?);
    // Late: probability vectors summed, ties go to the lower class index.
    let (agg, winner) = late_fuse(&[0.5, 0.3, 0.2], &[0.3, 0.5, 0.2]);
    println!("late   {agg:?} -> class {winner}");

    for (mode, t, v) in [
        (FusionMode::Early, TextKind::W2vPad, VisualKind::ImgnFeat),
        (FusionMode::Joint, TextKind::CountVect, VisualKind::Frames),
        (FusionMode::Late, TextKind::SentBert, VisualKind::PlcFeat),
    ] {
        let cfg = FusionModelConfig::new(mode, Some(t), Some(v));
        let mut model = build_model::<f32>(&cfg, 0)?;
        println!("{:<28} {:>10} parameters", cfg.descriptor_label(), model.param_count());
    }
    if let Err(e) = FusionModelConfig::new(FusionMode::Early, Some(TextKind::W2vSum), Some(VisualKind::Frames)).validate() {
        println!("rejected: {e}");
    }
    Ok(())
}
