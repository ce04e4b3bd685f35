//! Writes a case series generated from known parameters, for trying `epigraph fit`.
//!
//! `cargo run -p epigraph --example synthetic_cases -- scenarios/fit.json scenarios/cases.csv`

use std::path::PathBuf;

use epigraph::config::FitConfig;
use epigraph::io::{read_json, write_case_csv};
use epigraph_core::calibrate::{synthesize, FitParams};

fn main() {
    let args: Vec<PathBuf> = std::env::args_os().skip(1).map(PathBuf::from).collect();
    let [spec, out] = args.as_slice() else {
        eprintln!("usage: synthetic_cases <fit.json> <cases.csv>");
        std::process::exit(2);
    };
    let cfg: FitConfig = read_json(spec).unwrap_or_else(|e| panic!("{e}"));
    let truth = FitParams {
        lambda_n: vec![0.3],
        gamma: 0.02,
        epsilon: 0.0,
        detection_rate: 0.5,
        split: None,
    };
    let data = synthesize(&cfg.spec, &truth, 200).unwrap();
    write_case_csv(out, &data).unwrap();
}
