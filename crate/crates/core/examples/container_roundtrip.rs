//! Save a container, load it back, and show what the loader refuses.

use pusnet::sparsity::{apply_mask, generate_mask, init_weights};
use pusnet::{Metadata, ModelContainer, NetworkSpec};

fn main() -> anyhow::Result<()> {
    let spec = NetworkSpec::compact();
    let mut w0 = init_weights(&spec, 11)?;
    let mask = generate_mask(&w0, 0.9, 11)?;
    apply_mask(&mut w0, &mask);
    let meta = Metadata { data_seed: 1, iterations: 0, created_unix: 0 };
    let container = ModelContainer::new(spec, mask, w0, meta)?;

    let dir = std::env::temp_dir().join(format!("pusnet-roundtrip-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.pusn");
    container.save(&path)?;
    let bytes = std::fs::read(&path)?;
    let loaded = ModelContainer::load(&path)?;
    println!("{} bytes written", bytes.len());
    println!("content digest  {}", container.content_digest());
    println!("after reload    {}", loaded.content_digest());
    println!("byte identical: {}", loaded.to_bytes() == bytes);

    match ModelContainer::from_bytes(&bytes[..bytes.len() / 2]) {
        Ok(_) => println!("truncated file accepted?!"),
        Err(e) => println!("truncated file rejected: {e}"),
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    match ModelContainer::from_bytes(&bad) {
        Ok(_) => println!("bad magic accepted?!"),
        Err(e) => println!("bad magic rejected: {e}"),
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
