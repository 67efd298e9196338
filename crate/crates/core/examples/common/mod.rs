use std::path::Path;

use pusnet::surrogate;
use pusnet::{train, ModelContainer};

/// Loads the container at the first CLI argument, or trains a short
/// surrogate model when none is given.
pub fn load_or_train(quick_iterations: u64) -> anyhow::Result<ModelContainer> {
    if let Some(path) = std::env::args().nth(1) {
        return Ok(ModelContainer::load(Path::new(&path))?);
    }
    eprintln!("no container given; training {quick_iterations} steps (pass one from the train_compact example for better results)");
    let cfg = pusnet::TrainConfig { iterations: quick_iterations, ..surrogate::config() };
    Ok(train(&cfg, &surrogate::keys(), &surrogate::training_source())?)
}
