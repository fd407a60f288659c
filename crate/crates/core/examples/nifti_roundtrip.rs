//! Assemble a DICOM series into a volume, write it as .nii.gz and read it
//! back.
//!
//!     cargo run --example nifti_roundtrip [series_dir] [out.nii.gz]

use std::path::PathBuf;

use ctqa::pipeline::load_series;
use ctqa::synth::{generate_series, PhantomParams, SeriesGeometry};
use ctqa::volume::assemble_volume;
use ctqa::volume::nifti::{read_nifti_file, write_nifti_file};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scratch = tempfile::tempdir()?;
    let mut args = std::env::args().skip(1);
    let series_dir = match args.next() {
        Some(dir) => PathBuf::from(dir),
        None => {
            let geometry = SeriesGeometry::compact();
            let series = generate_series(&geometry, &PhantomParams::chest(&geometry), 2)?;
            let dir = scratch.path().join("series");
            series.write_to(&dir)?;
            dir
        }
    };
    let out = args
        .next()
        .map_or_else(|| scratch.path().join("volume.nii.gz"), PathBuf::from);

    let (manifest, slabs) = load_series(&series_dir)?;
    let volume = assemble_volume(&manifest, &slabs)?;
    write_nifti_file(&out, &volume)?;
    let back = read_nifti_file(&out)?;

    println!("dims        {:?}", volume.dims);
    println!("voxel size  {:?} mm", volume.voxel_size());
    println!("affine rows");
    for row in volume.affine.rows() {
        println!("  {row:?}");
    }
    println!(
        "file        {} ({} bytes)",
        out.display(),
        std::fs::metadata(&out)?.len()
    );
    let max_err = volume
        .voxels
        .iter()
        .zip(&back.voxels)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f32::max);
    println!("round trip  max voxel error {max_err}");
    Ok(())
}
