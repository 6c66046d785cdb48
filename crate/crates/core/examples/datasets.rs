//! The built-in generators, label noise, splits, and a CSV round trip.

use pinsprune::datasets::{batch_iter, gen_parity_sequences, gen_two_moons, load_csv, Split, DEFAULT_SPLIT};

fn main() -> pinsprune::Result<()> {
    let moons = gen_two_moons(1000, 0.2, 3)?.with_label_noise(0.1, 3)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        println!("two moons {:<5} {} rows", split.as_str(), moons.rows(split).len());
    }
    let batches = batch_iter(&moons, Split::Train, 32, 0)?;
    println!("{} train batches of up to 32, first: {:?}", batches.len(), &batches[0][..8]);

    let parity = gen_parity_sequences(200, 8, 1)?;
    println!("parity: {} sequences, {} classes, meta {:?}", parity.len(), parity.num_classes, parity.meta);

    let path = std::env::temp_dir().join(format!("moons-{}.csv", std::process::id()));
    moons.export_csv(&path)?;
    let back = load_csv(&path, "label", DEFAULT_SPLIT, 3)?;
    println!("csv round trip: {} rows, {} classes", back.len(), back.num_classes);
    std::fs::remove_file(&path).ok();
    Ok(())
}
