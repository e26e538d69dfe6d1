use std::io::Write;

use crate::error::{check_dim, Error, Result};
use crate::geometry::{ClassPca, RankPolicy};

#[derive(Debug, Clone, PartialEq)]
pub struct Point2d {
    pub name: String,
    pub x: f64,
    pub y: f64,
}

/// Projects every vector onto the top two principal components of the union
/// of all sets.
pub fn export_2d(sets: &[(String, Vec<Vec<f32>>)]) -> Result<Vec<Point2d>> {
    let dim = sets
        .iter()
        .flat_map(|(_, vs)| vs.first())
        .map(Vec::len)
        .next()
        .ok_or_else(|| Error::DegenerateVariance("no vectors to export".into()))?;
    let mut rows: Vec<&[f32]> = Vec::new();
    for (_, vectors) in sets {
        for v in vectors {
            check_dim(dim, v.len())?;
            rows.push(v);
        }
    }
    let geometry = ClassPca::fit_rows(&rows, dim).truncate(RankPolicy::Fixed(2));
    if geometry.rank() < 2 {
        return Err(Error::DegenerateVariance(format!(
            "union spans {} effective dimension(s), need 2",
            geometry.rank()
        )));
    }
    let mut points = Vec::with_capacity(rows.len());
    for (name, vectors) in sets {
        for v in vectors {
            let c = geometry.coordinates(&geometry.center(v)?)?;
            points.push(Point2d {
                name: name.clone(),
                x: c[0],
                y: c[1],
            });
        }
    }
    Ok(points)
}

/// `name,x,y` rows.
pub fn write_points_csv(points: &[Point2d], out: &mut impl Write) -> Result<()> {
    writeln!(out, "name,x,y")?;
    for p in points {
        writeln!(out, "{},{},{}", p.name, p.x, p.y)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_dimensional_input_is_rotated_centered_input() {
        let a = vec![vec![1.0f32, 2.0], vec![3.0, 1.0], vec![-2.0, 0.5], vec![0.0, -1.5]];
        let points = export_2d(&[("a".into(), a.clone())]).unwrap();
        let mean = [
            a.iter().map(|v| v[0] as f64).sum::<f64>() / 4.0,
            a.iter().map(|v| v[1] as f64).sum::<f64>() / 4.0,
        ];
        // Pairwise distances are preserved by a rotation/reflection.
        for i in 0..4 {
            for j in 0..4 {
                let d_in = ((a[i][0] - a[j][0]) as f64).hypot((a[i][1] - a[j][1]) as f64);
                let d_out = (points[i].x - points[j].x).hypot(points[i].y - points[j].y);
                assert!((d_in - d_out).abs() < 1e-9);
            }
            let r_in = (a[i][0] as f64 - mean[0]).hypot(a[i][1] as f64 - mean[1]);
            assert!((r_in - points[i].x.hypot(points[i].y)).abs() < 1e-9);
        }
        assert_eq!(points, export_2d(&[("a".into(), a)]).unwrap());
    }

    #[test]
    fn collinear_input_is_degenerate() {
        let a = vec![vec![1.0f32, 1.0, 1.0], vec![2.0, 2.0, 2.0], vec![3.0, 3.0, 3.0]];
        assert!(matches!(
            export_2d(&[("a".into(), a)]),
            Err(Error::DegenerateVariance(_))
        ));
        assert!(matches!(export_2d(&[]), Err(Error::DegenerateVariance(_))));
    }

    #[test]
    fn mismatched_dims_rejected() {
        let sets = vec![
            ("a".to_string(), vec![vec![1.0f32, 2.0]]),
            ("b".to_string(), vec![vec![1.0f32, 2.0, 3.0]]),
        ];
        assert!(matches!(export_2d(&sets), Err(Error::Dim { .. })));
    }
}
