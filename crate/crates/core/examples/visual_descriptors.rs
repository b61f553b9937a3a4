//! Summed softmax descriptors: every real frame goes through an image
//! classifier and the probability vectors are added up. The stub backbones
//! stand in for object (1000 classes) and place (365 classes) networks.
//!
//!     cargo run --example visual_descriptors

use ndarray::{s, Array4};
use scenefuse::clients::{StubBackbone, Taxonomy};
use scenefuse::fusion::argmax;
use scenefuse::ingest::FrameSequence;
use scenefuse::visfeat::{as_frames, sum_descriptors};

fn main() -> scenefuse::Result<()> {
    // Four reddish frames, six blank padding frames.
    let mut frames = Array4::<f32>::zeros((10, 64, 64, 3));
    frames.slice_mut(s![..4, .., .., 0]).fill(0.8);
    frames.slice_mut(s![..4, .., .., 1..]).fill(0.1);
    let seq = FrameSequence::from_parts("red", 4, frames.into_raw_vec_and_offset().0)?;

    for taxonomy in [Taxonomy::Object1000, Taxonomy::Place365] {
        let backbone = StubBackbone::new(taxonomy, 0);
        let d = sum_descriptors(&seq, &backbone)?;
        let mass: f32 = d.data.iter().sum();
        println!(
            "{}: {} values, mass {mass:.4} (= real frames), top class {}",
            d.kind,
            d.data.len(),
            argmax(&d.data)
        );
    }
    let raw = as_frames(&seq);
    println!("frames kind keeps the raw tensor: {} values", raw.data.len());
    Ok(())
}
