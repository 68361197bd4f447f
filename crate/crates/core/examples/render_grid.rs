//! Writes a few synthetic samples with their masks for visual inspection.

use std::path::Path;

use doctrans_core::synthgen::{generate_dataset, SynthConfig};

fn main() -> doctrans_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let out = args.get(1).map(String::as_str).unwrap_or("synthetic_preview");
    let assets = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets");
    let mut cfg = SynthConfig::from_assets(&assets)?;
    cfg.seed = 3;
    let manifest = generate_dataset(&cfg, 6, Path::new(out))?;
    for r in &manifest.records {
        println!("{} {:?}", r.image, r.word_boxes);
    }
    Ok(())
}
