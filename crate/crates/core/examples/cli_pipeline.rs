//! Drives the command-line entry point end to end: generate a dataset,
//! train, evaluate, and run the diagnostics, writing into a scratch directory.
//!
//! `cargo run --example cli_pipeline -- [out_dir]`

fn run(args: &[&str]) -> Result<(), String> {
    let mut argv = vec!["hsanet".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    println!("$ {}", argv.join(" "));
    match hsanet::cli::main(argv) {
        0 => Ok(()),
        code => Err(format!("exit code {code}")),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| std::env::temp_dir().join("hsanet-cli").to_string_lossy().into_owned());
    let dataset = format!("{out}/dataset.tsv");
    let small = [
        "--set", "n=200", "--set", "layers=3", "--set", "dim=32", "--set", "tokens=4", "--set", "state=4",
        "--set", "ff_hidden=64", "--set", "epochs=3", "--set", "lr=2e-3",
    ];
    for (cmd, extra) in [
        ("gen-data", vec![]),
        ("train", vec!["--dataset", dataset.as_str()]),
        ("eval", vec!["--dataset", dataset.as_str()]),
        ("gating-report", vec!["--dataset", dataset.as_str()]),
        ("diagnose", vec!["--dataset", dataset.as_str()]),
        ("grad-check", vec!["--set", "n=3"]),
    ] {
        let mut args = vec![cmd, "--out", out.as_str()];
        args.extend(small);
        args.extend(extra);
        run(&args)?;
    }
    println!("outputs in {out}");
    Ok(())
}
