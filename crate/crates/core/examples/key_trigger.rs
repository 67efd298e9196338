//! Triggering: the same container becomes three different dense networks
//! depending on the mode and key. Kept weights are shared by all of them.

use pusnet::sparsity::{apply_mask, generate_mask, init_weights};
use pusnet::{trigger, Key, Metadata, Mode, ModelContainer, NetworkSpec};

fn main() -> pusnet::Result<()> {
    let spec = NetworkSpec::compact();
    let mut w0 = init_weights(&spec, 7)?;
    let mask = generate_mask(&w0, 0.9, 7)?;
    apply_mask(&mut w0, &mask);
    let container = ModelContainer::new(spec, mask, w0, Metadata::default())?;

    let purified = trigger(&container, &Key::from(""), Mode::Denoise)?;
    let encoder = trigger(&container, &Key::from("correct horse"), Mode::Encode)?;
    let again = trigger(&container, &Key::from("correct horse"), Mode::Encode)?;
    let other = trigger(&container, &Key::from("battery staple"), Mode::Encode)?;

    println!("denoise  {}", purified.digest());
    println!("encode   {}", encoder.digest());
    println!("encode   {}  (same key, same digest)", again.digest());
    println!("encode   {}  (another key)", other.digest());

    let kernels: Vec<_> = container.params.maskable_values().collect();
    let filled: Vec<_> = encoder.maskable_values().collect();
    let shared = (0..kernels.len())
        .filter(|&i| container.mask.is_kept(i))
        .all(|i| kernels[i] == filled[i]);
    let holes_zero_in_purified = purified
        .maskable_values()
        .enumerate()
        .all(|(i, v)| container.mask.is_kept(i) || v == 0.0);
    println!("kept weights shared by encoder: {shared}");
    println!("holes zero in purified network: {holes_zero_in_purified}");
    Ok(())
}
