use std::fs;
use std::path::Path;

use log::warn;

use super::PointCloud;
use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XyzFormat {
    /// Whitespace separated columns.
    Xyz,
    /// Comma separated columns, with an optional non-numeric header line.
    Csv,
}

impl XyzFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => XyzFormat::Csv,
            _ => XyzFormat::Xyz,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: usize,
}

/// Read an ASCII point file with rows `x y z [i] [r g b]`.
pub fn ingest_xyz(path: &Path, format: XyzFormat) -> Result<(PointCloud, IngestReport)> {
    let text = fs::read_to_string(path).at(path)?;
    let (cloud, report) = parse_xyz(&text, format);
    if cloud.is_empty() {
        return Err(Error::NoValidRows {
            path: path.to_path_buf(),
            rejected: report.rejected,
        });
    }
    if report.rejected > 0 {
        warn!("{}: rejected {} malformed rows", path.display(), report.rejected);
    }
    Ok((cloud, report))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Layout {
    Xyz,
    XyzI,
    XyzRgb,
    XyzIRgb,
}

impl Layout {
    fn from_columns(n: usize) -> Option<Self> {
        match n {
            3 => Some(Layout::Xyz),
            4 => Some(Layout::XyzI),
            6 => Some(Layout::XyzRgb),
            7 => Some(Layout::XyzIRgb),
            _ => None,
        }
    }
}

/// Parse point rows from text. The column layout is fixed by the first
/// valid row; later rows with a different layout are rejected.
pub fn parse_xyz(text: &str, format: XyzFormat) -> (PointCloud, IngestReport) {
    let mut cloud = PointCloud::new();
    let mut report = IngestReport::default();
    let mut layout: Option<Layout> = None;

    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = match format {
            XyzFormat::Xyz => line.split_whitespace().collect(),
            XyzFormat::Csv => line.split(',').map(str::trim).collect(),
        };
        let values: Option<Vec<f64>> = fields.iter().map(|f| f.parse::<f64>().ok()).collect();
        let Some(values) = values else {
            // A leading CSV header is not a malformed row.
            if !(format == XyzFormat::Csv && lineno == 0) {
                report.rejected += 1;
            }
            continue;
        };
        let Some(row_layout) = Layout::from_columns(values.len()) else {
            report.rejected += 1;
            continue;
        };
        if values.iter().any(|v| !v.is_finite()) {
            report.rejected += 1;
            continue;
        }
        let layout = *layout.get_or_insert_with(|| {
            if matches!(row_layout, Layout::XyzI | Layout::XyzIRgb) {
                cloud.intensity = Some(Vec::new());
            }
            if matches!(row_layout, Layout::XyzRgb | Layout::XyzIRgb) {
                cloud.rgb = Some(Vec::new());
            }
            row_layout
        });
        if row_layout != layout {
            report.rejected += 1;
            continue;
        }
        let rgb_at = |k: usize| -> Option<[u8; 3]> {
            let c = &values[k..k + 3];
            if c.iter().all(|v| (0.0..=255.0).contains(v)) {
                Some([c[0] as u8, c[1] as u8, c[2] as u8])
            } else {
                None
            }
        };
        let rgb = match layout {
            Layout::XyzRgb => Some(rgb_at(3)),
            Layout::XyzIRgb => Some(rgb_at(4)),
            _ => None,
        };
        if let Some(None) = rgb {
            report.rejected += 1;
            continue;
        }
        cloud.x.push(values[0]);
        cloud.y.push(values[1]);
        cloud.z.push(values[2]);
        cloud.hag.push(0.0);
        if let Some(i) = cloud.intensity.as_mut() {
            i.push(values[3] as f32);
        }
        if let (Some(c), Some(Some(rgb))) = (cloud.rgb.as_mut(), rgb) {
            c.push(rgb);
        }
        report.accepted += 1;
    }
    (cloud, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_line_file() {
        let (c, r) = parse_xyz("0 0 0\n1 0 0\n0 1 5\n", XyzFormat::Xyz);
        assert_eq!(c.len(), 3);
        assert_eq!(r.rejected, 0);
        let b = c.bounds();
        assert_eq!(b.min, [0.0, 0.0, 0.0]);
        assert_eq!(b.max, [1.0, 1.0, 5.0]);
    }

    #[test]
    fn empty_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.xyz");
        std::fs::write(&p, "").unwrap();
        let err = ingest_xyz(&p, XyzFormat::Xyz).unwrap_err();
        assert!(err.to_string().contains("zero valid rows"), "{err}");
    }

    #[test]
    fn one_malformed_row_among_ten() {
        let mut text = String::new();
        for i in 0..10 {
            if i == 4 {
                text.push_str("1.0 abc 2.0\n");
            } else {
                text.push_str(&format!("{i} {i} {i}\n"));
            }
        }
        let (c, r) = parse_xyz(&text, XyzFormat::Xyz);
        assert_eq!(c.len(), 9);
        assert_eq!(r.rejected, 1);
        // row order preserved
        assert_eq!(c.x, vec![0.0, 1.0, 2.0, 3.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn non_finite_rows_are_rejected() {
        let (c, r) = parse_xyz("0 0 0\nNaN 1 1\n1 inf 1\n2 2 2\n", XyzFormat::Xyz);
        assert_eq!(c.len(), 2);
        assert_eq!(r.rejected, 2);
    }

    #[test]
    fn csv_with_header_and_channels() {
        let text = "x,y,z,i,r,g,b\n0,0,1,0.5,10,20,30\n1,1,2,0.7,40,50,60\n1,2\n";
        let (c, r) = parse_xyz(text, XyzFormat::Csv);
        assert_eq!(c.len(), 2);
        assert_eq!(r.rejected, 1);
        assert_eq!(c.intensity.as_deref(), Some(&[0.5f32, 0.7][..]));
        assert_eq!(c.rgb.as_ref().unwrap()[1], [40, 50, 60]);
    }
}
