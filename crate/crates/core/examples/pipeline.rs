//! Full batch run: discover sessions, run every stage and write the report
//! files, NIfTI volumes, ROI crops and gallery.
//!
//!     cargo run --example pipeline [input_root output_root]

use std::path::PathBuf;

use chrono::{TimeZone, Utc};
use ctqa::config::PipelineConfig;
use ctqa::pipeline::run_pipeline;
use ctqa::synth::{write_corpus, CorpusSpec, DefectClass};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scratch = tempfile::tempdir()?;
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (input, output) = match args.as_slice() {
        [i, o] => (PathBuf::from(i), PathBuf::from(o)),
        _ => {
            let input = scratch.path().join("corpus");
            let spec = CorpusSpec {
                clean: 3,
                defects: DefectClass::OBJECTIVE.iter().map(|c| (*c, 1)).collect(),
                ..CorpusSpec::benchmark(7)
            };
            write_corpus(&input, &spec)?;
            (input, scratch.path().join("qa"))
        }
    };

    let mut config = PipelineConfig::new(&input, &output);
    config.fixed_clock = Some(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap());
    config.review_sample_size = 3;
    let report = run_pipeline(&config)?;

    for r in &report.scan_records {
        let failed: Vec<String> = r.scan.failed_checks().iter().map(|c| c.to_string()).collect();
        println!(
            "{:<28} {:<12} failed {:?} warnings {:?}",
            r.scan_id(),
            r.disposition.as_str(),
            failed,
            r.scan.warnings
        );
    }
    println!();
    for row in &report.rate_table {
        println!(
            "{:<5} {:<40} {:>3}/{:<3} {}",
            row.check.to_string(),
            row.name,
            row.failed,
            row.applicable,
            row.failure_pct
        );
    }
    println!("\nsampled for review: {:?}", report.review.sampled);
    println!("outputs in {}", output.display());
    Ok(())
}
