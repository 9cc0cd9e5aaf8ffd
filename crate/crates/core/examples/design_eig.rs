//! Expected information gain of the three time windows, estimated with
//! common random numbers over replicated datasets.

use parapost::cli::{dataset_generator, RunConfig};
use parapost::design::{eig_grid, ExperimentalSetup, LikelihoodMode};

fn main() -> parapost::Result<()> {
    let replications: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let cfg = RunConfig::from_json("{}")?.resolved();
    let generator = dataset_generator(&cfg, 1)?;
    let settings = cfg.fit_settings(LikelihoodMode::Marginal);
    let mut setups = vec![ExperimentalSetup::full(7, 1.0)];
    setups.extend(ExperimentalSetup::es1());
    let eig = eig_grid(&setups, &generator, &settings, replications, 1)?;
    println!("{replications} replications");
    for (s, e) in setups.iter().zip(&eig) {
        println!("{:>8}  EIG {:.4} +- {:.4}", s.label, e.mean, e.std_error);
    }
    Ok(())
}
