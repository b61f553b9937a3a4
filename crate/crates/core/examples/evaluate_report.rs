//! Metrics and report files from hand-made predictions: per-class and
//! macro/weighted scores, the mean ± std table over folds and a confusion
//! heatmap written as PNG.
//!
//!     cargo run --example evaluate_report

use scenefuse::eval::{aggregate, confusion, emit_report, metrics};

fn main() -> scenefuse::Result<()> {
    let classes: Vec<String> = ["Cafe", "Bar", "Library"].iter().map(|s| s.to_string()).collect();
    let folds = [
        (vec![0, 0, 1, 1, 2, 2], vec![0, 1, 1, 1, 2, 0]),
        (vec![0, 0, 1, 1, 2, 2], vec![0, 0, 1, 0, 2, 2]),
    ];
    let mut reports = Vec::new();
    let mut pooled = None;
    for (truth, pred) in &folds {
        let cm = confusion(truth, pred, classes.len())?;
        let r = metrics(&cm)?;
        println!("accuracy {:.3}  f1 per class {:?}", r.accuracy, r.f1);
        pooled = Some(match pooled {
            None => cm,
            Some(p) => cm.add(&p),
        });
        reports.push(r);
    }
    let agg = aggregate(&reports)?;
    println!("accuracy over folds: {}", agg.accuracy);

    let out = tempfile::tempdir().expect("temp dir");
    let files = emit_report(&reports, &pooled.unwrap(), &classes, "toy", out.path())?;
    print!("{}", std::fs::read_to_string(&files.metrics_csv).unwrap());
    println!("heatmap: {} bytes", std::fs::metadata(&files.heatmap).unwrap().len());
    Ok(())
}
