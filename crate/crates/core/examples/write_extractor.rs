//! Regenerates `assets/feature_extractor.ckpt` from the seeded construction.

use eqgan::metrics::{FeatureExtractor, EXTRACTOR_SEED};

fn main() -> anyhow::Result<()> {
    let bytes = FeatureExtractor::seeded(3, EXTRACTOR_SEED).to_checkpoint()?;
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/feature_extractor.ckpt");
    std::fs::write(path, bytes)?;
    println!("{path}");
    Ok(())
}
