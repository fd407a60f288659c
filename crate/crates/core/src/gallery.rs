//! Review montages (3 x 3 grid of orthogonal slices, lung window) and the
//! static index page that lists them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::findings::{CheckId, Outcome, QaFinding};
use crate::volume::Volume;

pub const LUNG_WINDOW_CENTER: f64 = -600.0;
pub const LUNG_WINDOW_WIDTH: f64 = 1500.0;
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.4, 0.5, 0.6];
pub const DEFAULT_TILE_SIZE: usize = 128;

#[derive(Debug, Error)]
pub enum GalleryError {
    #[error("volume dimension below 3: {0:?}")]
    DegenerateDim([usize; 3]),
    #[error("png encoding: {0}")]
    Encoding(#[from] png::EncodingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plane {
    Sagittal,
    Coronal,
    Axial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceDescriptor {
    pub plane: Plane,
    pub fraction: f64,
    /// Voxel index along the plane's normal axis.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MontageOptions {
    pub tile_size: usize,
    pub fractions: [f64; 3],
    pub window_center: f64,
    pub window_width: f64,
}

impl Default for MontageOptions {
    fn default() -> Self {
        Self {
            tile_size: DEFAULT_TILE_SIZE,
            fractions: DEFAULT_FRACTIONS,
            window_center: LUNG_WINDOW_CENTER,
            window_width: LUNG_WINDOW_WIDTH,
        }
    }
}

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Montage {
    pub scan_id: String,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub tile_size: usize,
    /// Tile order: sagittal x3, coronal x3, axial x3.
    pub slice_descriptors: Vec<SliceDescriptor>,
}

impl Montage {
    pub fn pixel(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    /// Pixels of tile `t` (0..9), row-major, `tile_size` squared.
    pub fn tile(&self, t: usize) -> Vec<u8> {
        let (tr, tc) = (t / 3, t % 3);
        let n = self.tile_size;
        let mut out = Vec::with_capacity(n * n);
        for r in 0..n {
            let start = (tr * n + r) * self.width + tc * n;
            out.extend_from_slice(&self.pixels[start..start + n]);
        }
        out
    }

    pub fn to_png(&self) -> Result<Vec<u8>, GalleryError> {
        let mut out = Vec::new();
        let mut encoder = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header()?;
        writer.write_image_data(&self.pixels)?;
        writer.finish()?;
        Ok(out)
    }
}

/// Linear window to 0..255, rounding half up.
pub fn window_value(hu: f64, center: f64, width: f64) -> u8 {
    let low = center - width / 2.0;
    let scaled = (hu - low) / width * 255.0;
    (scaled + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Index of fraction `f` along an axis of length `n`.
pub fn fraction_index(f: f64, n: usize) -> usize {
    ((f * (n - 1) as f64).round() as usize).min(n - 1)
}

/// A 2-D view into the volume: `at(row, col)` with physical extents.
struct Section<'a> {
    volume: &'a Volume,
    plane: Plane,
    index: usize,
    rows: usize,
    cols: usize,
    row_mm: f64,
    col_mm: f64,
}

impl Section<'_> {
    fn new(volume: &Volume, plane: Plane, index: usize) -> Section<'_> {
        let [ni, nj, nk] = volume.dims;
        let [si, sj, sk] = volume.voxel_size();
        let (rows, cols, row_mm, col_mm) = match plane {
            Plane::Sagittal => (nk, nj, sk, sj),
            Plane::Coronal => (nk, ni, sk, si),
            Plane::Axial => (nj, ni, sj, si),
        };
        Section {
            volume,
            plane,
            index,
            rows,
            cols,
            row_mm,
            col_mm,
        }
    }

    /// Radiological display: patient right on the left, anterior and
    /// superior at the top.
    fn at(&self, row: usize, col: usize) -> f32 {
        let [_, nj, nk] = self.volume.dims;
        match self.plane {
            Plane::Sagittal => self.volume.get(self.index, nj - 1 - col, nk - 1 - row),
            Plane::Coronal => self.volume.get(col, self.index, nk - 1 - row),
            Plane::Axial => self.volume.get(col, nj - 1 - row, self.index),
        }
    }
}

fn draw_tile(section: &Section, options: &MontageOptions, out: &mut [u8], stride: usize, origin: (usize, usize)) {
    let t = options.tile_size as f64;
    let width_mm = section.cols as f64 * section.col_mm;
    let height_mm = section.rows as f64 * section.row_mm;
    let scale = (t / width_mm).min(t / height_mm);
    let w = ((width_mm * scale).round() as usize).clamp(1, options.tile_size);
    let h = ((height_mm * scale).round() as usize).clamp(1, options.tile_size);
    let off_c = (options.tile_size - w) / 2;
    let off_r = (options.tile_size - h) / 2;
    for r in 0..h {
        let src_r = (((r as f64 + 0.5) / h as f64 * section.rows as f64) as usize).min(section.rows - 1);
        for c in 0..w {
            let src_c = (((c as f64 + 0.5) / w as f64 * section.cols as f64) as usize).min(section.cols - 1);
            let hu = f64::from(section.at(src_r, src_c));
            let y = origin.0 + off_r + r;
            let x = origin.1 + off_c + c;
            out[y * stride + x] = window_value(hu, options.window_center, options.window_width);
        }
    }
}

/// Renders the 9-tile montage of a standard-oriented volume. Tiles are
/// letterboxed on black to a square of `tile_size`, keeping the physical
/// aspect ratio.
pub fn render_montage(scan_id: &str, volume: &Volume, options: &MontageOptions) -> Result<Montage, GalleryError> {
    if volume.dims.iter().any(|d| *d < 3) {
        return Err(GalleryError::DegenerateDim(volume.dims));
    }
    let n = options.tile_size;
    let width = 3 * n;
    let height = 3 * n;
    let mut pixels = vec![0u8; width * height];
    let mut descriptors = Vec::with_capacity(9);
    for (row, (plane, axis)) in [(Plane::Sagittal, 0), (Plane::Coronal, 1), (Plane::Axial, 2)]
        .into_iter()
        .enumerate()
    {
        for (col, f) in options.fractions.iter().enumerate() {
            let index = fraction_index(*f, volume.dims[axis]);
            let section = Section::new(volume, plane, index);
            draw_tile(&section, options, &mut pixels, width, (row * n, col * n));
            descriptors.push(SliceDescriptor {
                plane,
                fraction: *f,
                index,
            });
        }
    }
    Ok(Montage {
        scan_id: scan_id.to_string(),
        width,
        height,
        pixels,
        tile_size: n,
        slice_descriptors: descriptors,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub scan_id: String,
    /// Relative to the index page.
    pub montage_path: Option<String>,
    pub findings: Vec<QaFinding>,
}

pub fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Badge state of a finding: pass, fail, warn (failed but auto-fixed) or na.
pub fn badge_class(finding: Option<&QaFinding>) -> &'static str {
    match finding {
        None => "na",
        Some(f) if f.auto_fixed => "warn",
        Some(f) => match f.outcome {
            Outcome::Pass => "pass",
            Outcome::Fail => "fail",
            Outcome::NotApplicable => "na",
        },
    }
}

const INDEX_STYLE: &str = "body{font-family:sans-serif;background:#111;color:#ddd}\
table{border-collapse:collapse}td,th{padding:4px 8px;border-bottom:1px solid #333}\
.badge{display:inline-block;min-width:2.2em;text-align:center;border-radius:3px}\
.pass{background:#1b5e20}.fail{background:#b71c1c}.warn{background:#e65100}.na{background:#424242}";

/// Static review page: one row per scan, sorted by scan id.
pub fn build_index(entries: &[IndexEntry]) -> String {
    let mut sorted: Vec<&IndexEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| a.scan_id.cmp(&b.scan_id));
    let mut html = String::new();
    html.push_str("<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n");
    html.push_str("<title>CT QA review gallery</title>\n");
    let _ = writeln!(html, "<style>{INDEX_STYLE}</style>");
    html.push_str("</head>\n<body>\n");
    let _ = writeln!(html, "<p>{} scans</p>", sorted.len());
    html.push_str("<table>\n<thead><tr><th>montage</th><th>scan</th>");
    for c in CheckId::OBJECTIVE {
        let _ = write!(html, "<th>{c}</th>");
    }
    html.push_str("</tr></thead>\n<tbody>\n");
    for e in sorted {
        let id = escape_html(&e.scan_id);
        html.push_str("<tr><td>");
        if let Some(path) = &e.montage_path {
            let _ = write!(
                html,
                "<img src=\"{}\" alt=\"{id}\" loading=\"lazy\">",
                escape_html(path)
            );
        }
        let _ = write!(html, "</td><td>{id}</td>");
        for c in CheckId::OBJECTIVE {
            let f = e.findings.iter().find(|f| f.check == c);
            let class = badge_class(f);
            let title = f.map(|f| escape_html(&f.detail)).unwrap_or_default();
            let _ = write!(
                html,
                "<td><span class=\"badge {class}\" title=\"{title}\">{class}</span></td>"
            );
        }
        html.push_str("</tr>\n");
    }
    html.push_str("</tbody>\n</table>\n</body>\n</html>\n");
    html
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Affine;
    use crate::synth::{PhantomParams, SeriesGeometry};
    use proptest::prelude::*;

    fn constant(hu: f32) -> Volume {
        Volume::filled([10, 8, 6], hu, Affine::diagonal([-1.0, 1.0, 2.0], [0.0; 3]))
    }

    #[test]
    fn window_midpoint_and_floor() {
        let m = render_montage("a", &constant(-600.0), &MontageOptions::default()).unwrap();
        // Letterbox background is 0; every tile center is image content.
        for t in 0..9 {
            let tile = m.tile(t);
            assert_eq!(tile[64 * 128 + 64], 128);
        }
        assert_eq!(window_value(-600.0, -600.0, 1500.0), 128);
        let floor = render_montage("a", &constant(-1350.0), &MontageOptions::default()).unwrap();
        assert!(floor.pixels.iter().all(|p| *p == 0));
        assert_eq!(window_value(-2000.0, -600.0, 1500.0), 0);
        assert_eq!(window_value(150.0, -600.0, 1500.0), 255);
        assert_eq!(window_value(3000.0, -600.0, 1500.0), 255);
    }

    proptest! {
        #[test]
        fn window_is_monotone(a in -3000.0f64..3000.0, b in -3000.0f64..3000.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(window_value(lo, -600.0, 1500.0) <= window_value(hi, -600.0, 1500.0));
        }
    }

    #[test]
    fn degenerate_volume_is_rejected() {
        let v = Volume::filled([2, 8, 8], 0.0, Affine::diagonal([-1.0, 1.0, 1.0], [0.0; 3]));
        assert!(matches!(
            render_montage("a", &v, &MontageOptions::default()),
            Err(GalleryError::DegenerateDim(_))
        ));
    }

    #[test]
    fn tiles_follow_the_fixed_order() {
        let m = render_montage("a", &constant(0.0), &MontageOptions::default()).unwrap();
        let planes: Vec<Plane> = m.slice_descriptors.iter().map(|d| d.plane).collect();
        assert_eq!(planes[..3], [Plane::Sagittal; 3]);
        assert_eq!(planes[6..], [Plane::Axial; 3]);
        let axial: Vec<usize> = m.slice_descriptors[6..].iter().map(|d| d.index).collect();
        // Six slices: round(0.4*5)=2, round(0.5*5)=3 (half away from zero), round(0.6*5)=3.
        assert_eq!(axial, vec![2, 3, 3]);
    }

    #[test]
    fn letterbox_keeps_physical_aspect() {
        // 10 x 8 voxels of 1 mm in-plane: axial content is 128 x 102.
        let m = render_montage("a", &constant(0.0), &MontageOptions::default()).unwrap();
        let tile = m.tile(6);
        let content_rows = (0..128).filter(|r| tile[r * 128 + 64] != 0).count();
        let content_cols = (0..128).filter(|c| tile[64 * 128 + c] != 0).count();
        assert_eq!(content_cols, 128);
        assert_eq!(content_rows, (8.0f64 * 128.0 / 10.0).round() as usize);
    }

    #[test]
    fn rendering_is_deterministic() {
        let v = Volume::new(
            [5, 4, 3],
            (0..60).map(|x| x as f32 * 20.0 - 1000.0).collect(),
            Affine::diagonal([-1.0, 1.0, 1.0], [0.0; 3]),
        )
        .unwrap();
        let a = render_montage("a", &v, &MontageOptions::default()).unwrap();
        let b = render_montage("a", &v, &MontageOptions::default()).unwrap();
        assert_eq!(a.to_png().unwrap(), b.to_png().unwrap());
    }

    #[test]
    fn lungs_are_darker_than_body_in_axial_tiles() {
        let g = SeriesGeometry::compact();
        let phantom = PhantomParams::chest(&g);
        let dims = [g.columns as usize, g.rows as usize, g.slice_count];
        let mut v = Volume::filled(dims, 0.0, Affine::diagonal([-0.75, 0.75, 2.5], [0.0; 3]));
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    // Voxel i runs toward patient left (+x in LPS), j anterior (-y in LPS).
                    let p = g.world(i, dims[1] - 1 - j, k);
                    v.set(i, j, k, phantom.hu_at(p) as f32);
                }
            }
        }
        let m = render_montage("p", &v, &MontageOptions::default()).unwrap();
        let tile = m.tile(7);
        let k = m.slice_descriptors[7].index;
        let (mut lung, mut body) = (Vec::new(), Vec::new());
        for r in 0..128 {
            for c in 0..128 {
                let i = c * dims[0] / 128;
                let j = dims[1] - 1 - r * dims[1] / 128;
                let p = g.world(i, dims[1] - 1 - j, k);
                let value = f64::from(tile[r * 128 + c]);
                if phantom.in_lung(p) {
                    lung.push(value);
                } else if phantom.body.contains(p) {
                    body.push(value);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(!lung.is_empty() && !body.is_empty());
        assert!(mean(&lung) < mean(&body), "{} vs {}", mean(&lung), mean(&body));
    }

    fn finding(check: CheckId, outcome: Outcome) -> QaFinding {
        QaFinding {
            check,
            value: Some(0),
            outcome,
            auto_fixed: false,
            detail: "x<y".into(),
        }
    }

    #[test]
    fn index_lists_sorted_entries_with_badges() {
        let entries = vec![
            IndexEntry {
                scan_id: "b".into(),
                montage_path: Some("b.png".into()),
                findings: vec![finding(CheckId::C1, Outcome::Fail)],
            },
            IndexEntry {
                scan_id: "a<&>".into(),
                montage_path: None,
                findings: vec![finding(CheckId::C1, Outcome::Pass)],
            },
        ];
        let html = build_index(&entries);
        let a = html.find("a&lt;&amp;&gt;").unwrap();
        let b = html.find("<td>b</td>").unwrap();
        assert!(a < b);
        assert!(html.contains("<span class=\"badge fail\" title=\"x&lt;y\">fail</span>"));
        assert!(!html.contains("http"));
        assert_eq!(build_index(&entries), html);
        let empty = build_index(&[]);
        assert!(empty.contains("<tbody>\n</tbody>"));
    }
}
