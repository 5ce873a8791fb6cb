//! Rebuilds the shipped fixture tokenizer and teacher model.
//!
//! `cargo run --release -p tokdistill --example build_fixture [steps]`

use tokdistill::fixture::{build_fixture, fixture_dir, FixtureSpec};
use tokdistill::model::save_checkpoint;

fn main() -> tokdistill::Result<()> {
    env_logger::init();
    let mut spec = FixtureSpec::default();
    if let Some(steps) = std::env::args().nth(1) {
        spec.pretrain.steps = steps.parse().expect("step count");
    }
    let fx = build_fixture(&spec)?;
    let dir = fixture_dir();
    std::fs::create_dir_all(&dir)?;
    fx.vocab.save(&dir.join("vocab.json"))?;
    save_checkpoint(&fx.weights, dir.join("model.ckpt"))?;
    std::fs::write(dir.join("spec.json"), serde_json::to_string_pretty(&spec)?)?;
    if let Some(report) = fx.report {
        std::fs::write(
            dir.join("pretrain.json"),
            serde_json::to_string_pretty(&report)?,
        )?;
        println!(
            "loss {:.4} -> {:.4}",
            report.initial_loss().unwrap_or(f64::NAN),
            report.final_loss().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
