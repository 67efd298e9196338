//! Magnitude mask on the full-size network: how many kernel weights survive
//! at a few sparse ratios, and where the holes land layer by layer.

use pusnet::sparsity::{generate_mask, init_weights};
use pusnet::NetworkSpec;

fn main() -> pusnet::Result<()> {
    let spec = NetworkSpec::default();
    let w0 = init_weights(&spec, 0)?;
    for ratio in [0.5, 0.8, 0.9, 0.95] {
        let mask = generate_mask(&w0, ratio, 0)?;
        println!(
            "ratio {ratio:<4}  maskable {}  kept {}  holes {}  threshold {:.3e}",
            mask.total,
            mask.kept,
            mask.holes(),
            mask.threshold
        );
    }

    let mask = generate_mask(&w0, 0.9, 0)?;
    println!("\nkept fraction per conv at ratio 0.9:");
    let mut offset = 0;
    for range in w0.layout().kernel_ranges() {
        let len = range.len();
        let kept = (offset..offset + len).filter(|&i| mask.is_kept(i)).count();
        let name = &w0.layout().entries().iter().find(|e| e.range() == range).unwrap().name;
        println!("  {name:<14} {kept:>6}/{len:<6} {:.3}", kept as f64 / len as f64);
        offset += len;
    }
    Ok(())
}
