//! Loads the shipped InstaIndoor manifest, prints its class distribution and
//! draws a seeded 3-fold plan over the train split.
//!
//!     cargo run --example manifest_tour

use std::path::Path;

use scenefuse::datamodel::{class_distribution, load_manifest, make_folds, Split};

fn main() -> scenefuse::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/instaindoor.manifest");
    let manifest = load_manifest(&path)?;
    let dist = class_distribution(&manifest);
    print!("{dist}");
    println!(
        "largest class: {}",
        dist.classes.iter().max_by_key(|c| dist.class_total(c)).unwrap()
    );

    let plan = make_folds(&manifest, 3, 0)?;
    plan.check(&manifest)?;
    for (i, fold) in plan.folds.iter().enumerate() {
        println!("fold {i}: {} train / {} validation", fold.train_ids.len(), fold.val_ids.len());
    }
    println!("test split: {} videos", manifest.split(Split::Test).count());
    Ok(())
}
