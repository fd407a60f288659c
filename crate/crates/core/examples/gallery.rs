//! Render the three-plane lung-window montage of a volume and a one-row
//! static index page.
//!
//!     cargo run --example gallery [out_dir]

use std::path::PathBuf;

use ctqa::gallery::{build_index, render_montage, IndexEntry, MontageOptions};
use ctqa::pipeline::load_series;
use ctqa::series::{build_manifest, run_dicom_qa};
use ctqa::synth::{generate_series, PhantomParams, SeriesGeometry};
use ctqa::volume::assemble_volume;
use ctqa::QaThresholds;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scratch = tempfile::tempdir()?;
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| scratch.path().join("gallery"), PathBuf::from);
    std::fs::create_dir_all(&out)?;

    let geometry = SeriesGeometry::compact();
    let series = generate_series(&geometry, &PhantomParams::chest(&geometry), 12)?;
    let series_dir = scratch.path().join("series");
    series.write_to(&series_dir)?;
    let (manifest, slabs) = load_series(&series_dir)?;
    let volume = assemble_volume(&manifest, &slabs)?;

    let montage = render_montage("phantom", &volume, &MontageOptions::default())?;
    for d in &montage.slice_descriptors {
        println!("{:?} at fraction {} -> index {}", d.plane, d.fraction, d.index);
    }
    std::fs::write(out.join("phantom.png"), montage.to_png()?)?;

    let findings = run_dicom_qa(&build_manifest(series.truth.slices.clone())?, &QaThresholds::default());
    let index = build_index(&[IndexEntry {
        scan_id: "phantom".into(),
        montage_path: Some("phantom.png".into()),
        findings,
    }]);
    std::fs::write(out.join("index.html"), index)?;
    println!(
        "{}x{} montage and index.html in {}",
        montage.width,
        montage.height,
        out.display()
    );
    Ok(())
}
