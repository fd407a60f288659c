use std::f64::consts::PI;

use ctqa::pipeline::load_series;
use ctqa::synth::{generate_series, read_truth, PhantomParams, SeriesGeometry};
use ctqa::volume::orientation::check_orientation;
use ctqa::volume::roi::{lung_mask, LungMaskParams};
use ctqa::volume::{assemble_volume, Volume};

fn assembled(geometry: &SeriesGeometry, seed: u64) -> (Volume, PhantomParams, tempfile::TempDir) {
    let phantom = PhantomParams::chest(geometry);
    let series = generate_series(geometry, &phantom, seed).unwrap();
    let dir = tempfile::tempdir().unwrap();
    series.write_to(dir.path()).unwrap();
    let (manifest, slabs) = load_series(dir.path()).unwrap();
    (assemble_volume(&manifest, &slabs).unwrap(), phantom, dir)
}

#[test]
fn thresholded_lung_volume_matches_the_ellipsoids() {
    let geometry = SeriesGeometry::compact();
    let (volume, phantom, dir) = assembled(&geometry, 9);
    let analytic: f64 = phantom
        .lungs
        .iter()
        .map(|e| 4.0 / 3.0 * PI * e.semi_axes.iter().product::<f64>())
        .sum();
    let truth = read_truth(dir.path()).unwrap();
    assert!((truth.analytic_lung_volume_mm3.unwrap() - analytic).abs() < 1e-6 * analytic);

    let undilated = LungMaskParams {
        dilation_radius: 0,
        ..Default::default()
    };
    let mask = lung_mask(&volume, &undilated).unwrap();
    let voxel_mm3: f64 = volume.voxel_size().iter().product();
    let measured = mask.count() as f64 * voxel_mm3;
    let rel = (measured - analytic).abs() / analytic;
    assert!(rel < 0.02, "measured {measured:.0} mm3 vs analytic {analytic:.0} mm3");
    assert_eq!(mask.component_count, 2);
}

#[test]
fn chest_geometry_assembles_to_512_by_512_by_100() {
    let (volume, _, _dir) = assembled(&SeriesGeometry::chest(), 1);
    assert_eq!(volume.dims, [512, 512, 100]);
    let v = volume.voxel_size();
    assert!(
        (v[0] - 0.7).abs() < 1e-9 && (v[1] - 0.7).abs() < 1e-9 && (v[2] - 2.5).abs() < 1e-9,
        "{v:?}"
    );
    assert!(check_orientation(&volume.affine).passed());
}
