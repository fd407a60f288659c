//! Parse one DICOM slice: header fields and Hounsfield-unit pixels.
//!
//!     cargo run --example parse_dicom [path/to/slice.dcm]

use ctqa::dicom::parse_slice_with_pixels;
use ctqa::synth::{generate_series, PhantomParams, SeriesGeometry};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bytes = match std::env::args().nth(1) {
        Some(path) => std::fs::read(path)?,
        None => {
            let geometry = SeriesGeometry::compact();
            let series = generate_series(&geometry, &PhantomParams::chest(&geometry), 1)?;
            series.files[50].bytes.clone()
        }
    };
    let (header, pixels) = parse_slice_with_pixels(&bytes)?;
    println!("series       {}", header.series_uid);
    println!("instance     {}", header.instance_number);
    println!("location     {:?}", header.slice_location);
    println!("position     {:?}", header.image_position);
    println!("orientation  {:?}", header.image_orientation);
    println!("spacing      {:?} mm", header.pixel_spacing);
    println!("size         {} x {}", header.rows, header.columns);
    println!(
        "rescale      {} * stored + {}",
        header.rescale_slope, header.rescale_intercept
    );
    let (row, col) = (pixels.height / 2, pixels.width / 2);
    println!("HU at centre {}", pixels.get(row, col));
    let min = pixels.values.iter().copied().fold(f32::INFINITY, f32::min);
    let max = pixels.values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    println!("HU range     {min} .. {max}");
    Ok(())
}
