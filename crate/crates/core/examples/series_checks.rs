//! Run the header checks C1..C5 on a series with two dropped slices and on
//! one with a duplicated chunk.
//!
//!     cargo run --example series_checks

use ctqa::series::{build_manifest, run_dicom_qa};
use ctqa::synth::{generate_series, inject_defect, DefectKind, DefectSpec, PhantomParams, SeriesGeometry, SynthSeries};
use ctqa::QaThresholds;

fn report(title: &str, series: &SynthSeries, thresholds: &QaThresholds) -> Result<(), Box<dyn std::error::Error>> {
    let headers = series.truth.slices.clone();
    let manifest = build_manifest(headers)?;
    println!(
        "{title}: {} slices, modal spacing {} mm, length {:.1} mm",
        manifest.slice_count, manifest.modal_spacing, manifest.physical_length
    );
    for f in run_dicom_qa(&manifest, thresholds) {
        println!("  {} {:?} value={:?}  {}", f.check, f.outcome, f.value, f.detail);
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let thresholds = QaThresholds::default();
    let geometry = SeriesGeometry::compact();
    let clean = generate_series(&geometry, &PhantomParams::chest(&geometry), 3)?;
    report("clean", &clean, &thresholds)?;
    for kind in [
        DefectKind::DropSlices { count: 2 },
        DefectKind::DuplicateChunk {
            length: 3,
            renumber: false,
        },
    ] {
        let defect = DefectSpec { kind, seed: 4 };
        let series = inject_defect(&clean, &defect, &thresholds)?;
        report(defect.kind.class_name(), &series, &thresholds)?;
        println!("  expected failing: {:?}", series.truth.expected.failing);
    }
    Ok(())
}
