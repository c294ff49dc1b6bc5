//! Prints clean / PGD-40 error for std, adv and adv_plus on the toy setup.

use advlab::toy::ToySetup;

fn main() -> advlab::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let setup = ToySetup::default();
    println!("seed  mode      clean   robust  robust_sd");
    for seed in 0..seeds {
        for (name, o) in ["std", "adv", "adv_plus"].iter().zip(setup.run_seed(seed)?) {
            println!("{seed:<5} {name:<9} {:.4}  {:.4}  {:.4}", o.clean_error, o.robust_error, o.robust_class_sd);
        }
    }
    Ok(())
}
