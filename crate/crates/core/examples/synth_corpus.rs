//! Write a small synthetic corpus with one series per defect class and show
//! what each series must trigger.
//!
//!     cargo run --example synth_corpus [out_dir]

use std::path::PathBuf;

use ctqa::synth::{write_corpus, CorpusSpec, DefectClass};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scratch = tempfile::tempdir()?;
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| scratch.path().join("corpus"), PathBuf::from);
    let spec = CorpusSpec {
        clean: 1,
        defects: DefectClass::OBJECTIVE.iter().map(|c| (*c, 1)).collect(),
        ..CorpusSpec::benchmark(42)
    };
    let truth = write_corpus(&out, &spec)?;
    for t in &truth {
        let failing: Vec<String> = t.expected.failing.iter().map(|(c, v)| format!("{c}={v}")).collect();
        println!(
            "{:<28} {:>3} files  failing [{}]",
            t.name,
            t.slices.len(),
            failing.join(", ")
        );
        for why in &t.expected.entailments {
            println!("{:<28}   {why}", "");
        }
    }
    println!("wrote {} series to {}", truth.len(), out.display());
    Ok(())
}
