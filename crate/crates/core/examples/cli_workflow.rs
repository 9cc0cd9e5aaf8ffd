//! The command-line workflow driven in-process: generate a dataset, fit it,
//! and print the report.

use parapost::cli::run;

fn main() {
    let dir = std::env::temp_dir().join("parapost-cli-workflow");
    let out = dir.to_str().unwrap();
    let data = dir.join("observations.csv");
    for args in [
        vec!["parapost", "generate", "--out", out, "--seed", "3"],
        vec!["parapost", "fit", "--data", data.to_str().unwrap(), "--out", out, "--mode", "marginal", "--seed", "3"],
    ] {
        let code = run(&args);
        if code != 0 {
            eprintln!("{} exited with {code}", args[1]);
            std::process::exit(code);
        }
    }
    let report = std::fs::read_to_string(dir.join("fit_report.json")).unwrap();
    println!("{report}");
    println!("outputs in {}", dir.display());
}
