//! The cubic schedule: full density during warmup, cubic decay, then the
//! final density for the cool-down.

use pinsprune::pruning::SparsityScheduler;

fn main() -> pinsprune::Result<()> {
    let s = SparsityScheduler::new(0.2, 300, 900, 3000, 626)?;
    println!("{:>5} {:>9} {:>6}", "t", "fraction", "kept");
    for t in (0..=3000).step_by(150) {
        println!("{t:>5} {:>9.5} {:>6}", s.remaining_fraction(t)?, s.remaining_count(t)?);
    }
    let small = SparsityScheduler::new(0.2, 10, 10, 100, 1000)?;
    println!("\nT=100, warmup 10, cool-down 10, t=45: {}", small.remaining_fraction(45)?);
    Ok(())
}
