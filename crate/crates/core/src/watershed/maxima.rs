use crate::error::{Error, Result};
use crate::pointcloud::Raster;

/// Seed cells `(col, row)`: values at least `min_height` that dominate every
/// other cell within `radius` meters. Equal values are resolved in favour of
/// the lowest `(row, col)`. Output is sorted by `(row, col)`.
pub fn detect_maxima(chm: &Raster, min_height: f64, radius: f64) -> Result<Vec<(usize, usize)>> {
    if radius < chm.pitch {
        return Err(Error::InvalidArgument(format!(
            "maxima radius {radius} m is smaller than the raster pitch {} m",
            chm.pitch
        )));
    }
    let rc = (radius / chm.pitch).floor() as isize;
    let r2 = (radius / chm.pitch).powi(2);
    let disc: Vec<(isize, isize)> = (-rc..=rc)
        .flat_map(|dr| (-rc..=rc).map(move |dc| (dc, dr)))
        .filter(|&(dc, dr)| (dc != 0 || dr != 0) && ((dc * dc + dr * dr) as f64) <= r2 + 1e-9)
        .collect();
    let (w, h) = (chm.width as isize, chm.height as isize);
    let mut seeds = Vec::new();
    for row in 0..h {
        'cell: for col in 0..w {
            let v = chm.at(col as usize, row as usize);
            if !(v as f64 >= min_height) {
                continue;
            }
            for &(dc, dr) in &disc {
                let (c, r) = (col + dc, row + dr);
                if c < 0 || r < 0 || c >= w || r >= h {
                    continue;
                }
                let o = chm.at(c as usize, r as usize);
                if o > v || (o == v && (r, c) < (row, col)) {
                    continue 'cell;
                }
            }
            seeds.push((col as usize, row as usize));
        }
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cone_raster(apexes: &[(f64, f64, f64)], radius: f64) -> Raster {
        let mut r = Raster::filled(0.0, 0.0, 0.5, 60, 40, 0.0);
        for row in 0..r.height {
            for col in 0..r.width {
                let (x, y) = r.cell_center(col, row);
                let v = apexes
                    .iter()
                    .map(|&(ax, ay, h)| h * (1.0 - ((x - ax).hypot(y - ay) / radius)).max(0.0))
                    .fold(0.0, f64::max);
                r.set(col, row, v as f32);
            }
        }
        r
    }

    #[test]
    fn two_cones_two_seeds() {
        let r = cone_raster(&[(10.1, 10.1, 10.0), (20.1, 10.1, 10.0)], 4.0);
        let seeds = detect_maxima(&r, 2.0, 2.0).unwrap();
        assert_eq!(seeds.len(), 2);
    }

    #[test]
    fn flat_zero_has_no_seeds() {
        let r = Raster::filled(0.0, 0.0, 0.5, 20, 20, 0.0);
        assert!(detect_maxima(&r, 2.0, 2.0).unwrap().is_empty());
    }

    #[test]
    fn short_cone_is_below_threshold() {
        let r = cone_raster(&[(10.1, 10.1, 1.5)], 3.0);
        assert!(detect_maxima(&r, 2.0, 2.0).unwrap().is_empty());
    }

    #[test]
    fn plateau_yields_single_lowest_seed() {
        let mut r = Raster::filled(0.0, 0.0, 1.0, 10, 10, 0.0);
        for (c, rr) in [(4, 4), (5, 4), (4, 5), (5, 5)] {
            r.set(c, rr, 6.0);
        }
        assert_eq!(detect_maxima(&r, 2.0, 2.0).unwrap(), vec![(4, 4)]);
    }

    #[test]
    fn radius_below_pitch_is_rejected() {
        let r = Raster::filled(0.0, 0.0, 1.0, 4, 4, 0.0);
        assert!(detect_maxima(&r, 2.0, 0.5).is_err());
    }
}
