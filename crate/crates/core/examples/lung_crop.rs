//! Segment the lungs of the chest phantom and crop the volume to them with a
//! 10% margin.
//!
//!     cargo run --example lung_crop [in.nii.gz] [out.nii.gz]

use std::path::PathBuf;

use ctqa::pipeline::load_series;
use ctqa::synth::{generate_series, PhantomParams, SeriesGeometry};
use ctqa::volume::assemble_volume;
use ctqa::volume::nifti::{read_nifti_file, write_nifti_file};
use ctqa::volume::roi::{crop_bounds, crop_roi, lung_mask, LungMaskParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scratch = tempfile::tempdir()?;
    let mut args = std::env::args().skip(1);
    let volume = match args.next() {
        Some(path) => read_nifti_file(path.as_ref())?,
        None => {
            let geometry = SeriesGeometry::compact();
            let series = generate_series(&geometry, &PhantomParams::chest(&geometry), 8)?;
            series.write_to(scratch.path())?;
            let (manifest, slabs) = load_series(scratch.path())?;
            assemble_volume(&manifest, &slabs)?
        }
    };
    let out = args
        .next()
        .map_or_else(|| scratch.path().join("roi.nii.gz"), PathBuf::from);

    let params = LungMaskParams::default();
    let mask = lung_mask(&volume, &params)?;
    println!(
        "threshold {} HU, dilation radius {}",
        params.hu_threshold, params.dilation_radius
    );
    println!(
        "{} mask voxels in {} components {:?}",
        mask.count(),
        mask.component_count,
        mask.component_sizes
    );
    println!("mask bounding box {:?}", mask.bounding_box());
    let (lo, hi) = crop_bounds(&mask, 0.10)?;
    println!("crop box with 10% margin {lo:?} .. {hi:?}");
    let roi = crop_roi(&volume, &mask, 0.10)?;
    println!("volume {:?} -> roi {:?}", volume.dims, roi.dims);
    println!("roi origin {:?} (volume voxel {lo:?})", roi.affine.origin());
    write_nifti_file(&out, &roi)?;
    println!("wrote {}", out.display());
    Ok(())
}
