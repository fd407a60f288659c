//! A series stored with rows and columns swapped fails the orientation check; after
//! reorientation it passes and every voxel keeps its world position.
//!
//!     cargo run --example reorient

use ctqa::pipeline::load_series;
use ctqa::synth::{generate_series, PhantomParams, SeriesGeometry, SliceOrientation};
use ctqa::volume::assemble_volume;
use ctqa::volume::orientation::{axis_mapping, check_orientation, check_resolution, reorient_to_standard};
use ctqa::QaThresholds;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let geometry = SeriesGeometry {
        orientation: SliceOrientation::SwapXy,
        ..SeriesGeometry::compact()
    };
    let series = generate_series(&geometry, &PhantomParams::chest(&geometry), 6)?;
    let dir = tempfile::tempdir()?;
    series.write_to(dir.path())?;
    let (manifest, slabs) = load_series(dir.path())?;
    let stored = assemble_volume(&manifest, &slabs)?;

    let before = check_orientation(&stored.affine);
    println!("stored:     {:?}  {}", before.outcome, before.detail);
    println!("            {:?}", axis_mapping(&stored.affine)?);

    let fixed = reorient_to_standard(&stored)?;
    let after = check_orientation(&fixed.affine);
    println!("reoriented: {:?}  {}", after.outcome, after.detail);
    let c7 = check_resolution(&fixed.affine, &QaThresholds::default());
    println!("C7:         {:?}  {}", c7.outcome, c7.detail);

    let (i, j, k) = (10, 20, 30);
    let w = stored.world_of(i, j, k);
    let found = (0..fixed.len()).find_map(|n| {
        let (fi, rest) = (n % fixed.dims[0], n / fixed.dims[0]);
        let (fj, fk) = (rest % fixed.dims[1], rest / fixed.dims[1]);
        let p = fixed.world_of(fi, fj, fk);
        let d = (0..3).map(|a| (p[a] - w[a]).abs()).fold(0.0, f64::max);
        (d < 1e-6).then_some((fi, fj, fk))
    });
    println!("voxel ({i},{j},{k}) at world {w:?} is now {found:?}");
    if let Some((fi, fj, fk)) = found {
        println!("HU {} == {}", stored.get(i, j, k), fixed.get(fi, fj, fk));
    }
    Ok(())
}
