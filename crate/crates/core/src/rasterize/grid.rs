use serde::{Deserialize, Serialize};
use spade::{DelaunayTriangulation, HasPosition, Point2, PositionInTriangulation, Triangulation};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_easting: f64,
    pub max_easting: f64,
    pub min_northing: f64,
    pub max_northing: f64,
}

impl BoundingBox {
    /// Smallest box containing every coordinate pair.
    pub fn enclosing(xy: &[(f64, f64)]) -> Result<Self> {
        let first = xy
            .first()
            .ok_or_else(|| Error::InvalidInput("no points".into()))?;
        let mut b = BoundingBox {
            min_easting: first.0,
            max_easting: first.0,
            min_northing: first.1,
            max_northing: first.1,
        };
        for &(x, y) in xy {
            b.min_easting = b.min_easting.min(x);
            b.max_easting = b.max_easting.max(x);
            b.min_northing = b.min_northing.min(y);
            b.max_northing = b.max_northing.max(y);
        }
        Ok(b)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.max_easting > self.min_easting && self.max_northing > self.min_northing;
        if !ok
            || ![
                self.min_easting,
                self.max_easting,
                self.min_northing,
                self.max_northing,
            ]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::config(format!("degenerate bounding box {self:?}")));
        }
        Ok(())
    }
}

/// Raster geometry: points are interpolated at `native_size`² and
/// block-averaged down to `working_size`².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub native_size: usize,
    pub working_size: usize,
    /// Taken from the point cloud when absent.
    pub bbox: Option<BoundingBox>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            native_size: 256,
            working_size: 64,
            bbox: None,
        }
    }
}

impl GridSpec {
    pub fn new(native_size: usize, working_size: usize) -> Self {
        GridSpec {
            native_size,
            working_size,
            bbox: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.native_size == 0
            || self.working_size == 0
            || !self.native_size.is_multiple_of(self.working_size)
        {
            return Err(Error::config(format!(
                "native size {} must be a positive multiple of working size {}",
                self.native_size, self.working_size
            )));
        }
        if let Some(b) = &self.bbox {
            b.validate()?;
        }
        Ok(())
    }

    pub fn factor(&self) -> usize {
        self.native_size / self.working_size
    }

    /// Cell centres of the native grid, row-major, row 0 at the northern edge.
    pub fn cell_centers(&self, bbox: &BoundingBox) -> Vec<(f64, f64)> {
        let n = self.native_size;
        let dx = (bbox.max_easting - bbox.min_easting) / n as f64;
        let dy = (bbox.max_northing - bbox.min_northing) / n as f64;
        let mut out = Vec::with_capacity(n * n);
        for row in 0..n {
            let y = bbox.max_northing - (row as f64 + 0.5) * dy;
            for col in 0..n {
                out.push((bbox.min_easting + (col as f64 + 0.5) * dx, y));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Site {
    position: Point2<f64>,
    index: usize,
}

impl HasPosition for Site {
    type Scalar = f64;

    fn position(&self) -> Point2<f64> {
        self.position
    }
}

/// How one grid cell is derived from the scattered values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellStencil {
    /// Barycentric combination inside a Delaunay triangle (or along an edge,
    /// or at a vertex, with the unused weights zero).
    Linear {
        points: [usize; 3],
        weights: [f64; 3],
    },
    /// Outside the convex hull: value of the nearest point.
    Nearest(usize),
}

/// Precomputed Delaunay interpolation weights for a fixed point set.
///
/// Geometry is shared by every date and channel, so triangulation and point
/// location happen once per dataset.
#[derive(Debug, Clone)]
pub struct InterpolationPlan {
    size: usize,
    n_points: usize,
    stencils: Vec<CellStencil>,
}

fn barycentric(p: Point2<f64>, a: Point2<f64>, b: Point2<f64>, c: Point2<f64>) -> [f64; 3] {
    let den = (b.y - c.y) * (a.x - c.x) + (c.x - b.x) * (a.y - c.y);
    let wa = ((b.y - c.y) * (p.x - c.x) + (c.x - b.x) * (p.y - c.y)) / den;
    let wb = ((c.y - a.y) * (p.x - c.x) + (a.x - c.x) * (p.y - c.y)) / den;
    [wa, wb, 1.0 - wa - wb]
}

impl InterpolationPlan {
    pub fn build(xy: &[(f64, f64)], grid: &GridSpec, bbox: &BoundingBox) -> Result<Self> {
        grid.validate()?;
        bbox.validate()?;
        if xy.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "interpolation needs at least 3 points, got {}",
                xy.len()
            )));
        }
        let mut tri: DelaunayTriangulation<Site> = DelaunayTriangulation::new();
        for (index, &(x, y)) in xy.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "point {index} has non-finite coordinates"
                )));
            }
            let position = Point2::new(x, y);
            // duplicate positions keep the first point
            if matches!(tri.locate(position), PositionInTriangulation::OnVertex(_)) {
                continue;
            }
            tri.insert(Site { position, index }).map_err(|e| {
                Error::InvalidInput(format!("cannot triangulate point {index}: {e:?}"))
            })?;
        }
        if tri.num_inner_faces() == 0 {
            return Err(Error::InvalidInput(
                "points are collinear; no triangle to interpolate on".into(),
            ));
        }

        let stencils = grid
            .cell_centers(bbox)
            .into_iter()
            .map(|(x, y)| {
                let p = Point2::new(x, y);
                match tri.locate(p) {
                    PositionInTriangulation::OnFace(face) => {
                        let [a, b, c] = tri.face(face).vertices();
                        let weights = barycentric(p, a.position(), b.position(), c.position());
                        CellStencil::Linear {
                            points: [a.data().index, b.data().index, c.data().index],
                            weights,
                        }
                    }
                    PositionInTriangulation::OnEdge(edge) => {
                        let e = tri.directed_edge(edge);
                        let (from, to) = (e.from(), e.to());
                        let (pa, pb) = (from.position(), to.position());
                        let len2 = (pb.x - pa.x).powi(2) + (pb.y - pa.y).powi(2);
                        let t =
                            ((p.x - pa.x) * (pb.x - pa.x) + (p.y - pa.y) * (pb.y - pa.y)) / len2;
                        CellStencil::Linear {
                            points: [from.data().index, to.data().index, to.data().index],
                            weights: [1.0 - t, t, 0.0],
                        }
                    }
                    PositionInTriangulation::OnVertex(v) => {
                        let i = tri.vertex(v).data().index;
                        CellStencil::Linear {
                            points: [i, i, i],
                            weights: [1.0, 0.0, 0.0],
                        }
                    }
                    _ => {
                        let nearest = tri.nearest_neighbor(p).expect("triangulation is not empty");
                        CellStencil::Nearest(nearest.data().index)
                    }
                }
            })
            .collect();
        Ok(InterpolationPlan {
            size: grid.native_size,
            n_points: xy.len(),
            stencils,
        })
    }

    pub fn stencils(&self) -> &[CellStencil] {
        &self.stencils
    }

    /// Number of cells filled from the nearest point (outside the hull).
    pub fn hull_filled(&self) -> usize {
        self.stencils
            .iter()
            .filter(|s| matches!(s, CellStencil::Nearest(_)))
            .count()
    }

    /// Interpolates one value per point onto the native grid.
    pub fn apply(&self, values: &[f64]) -> Result<Tensor<f64>> {
        if values.len() != self.n_points {
            return Err(Error::shape(format!(
                "{} values for {} points",
                values.len(),
                self.n_points
            )));
        }
        let data = self
            .stencils
            .iter()
            .map(|s| match *s {
                CellStencil::Linear { points, weights } => points
                    .iter()
                    .zip(weights)
                    .map(|(&i, w)| if w == 0.0 { 0.0 } else { w * values[i] })
                    .sum(),
                CellStencil::Nearest(i) => values[i],
            })
            .collect();
        Tensor::new([self.size, self.size], data)
    }
}

/// Piecewise-linear interpolation of scattered `(x, y, value)` samples at the
/// native cell centres.
pub fn interpolate_grid(points: &[(f64, f64, f64)], grid: &GridSpec) -> Result<Tensor<f64>> {
    let xy: Vec<(f64, f64)> = points.iter().map(|&(x, y, _)| (x, y)).collect();
    let bbox = match grid.bbox {
        Some(b) => b,
        None => BoundingBox::enclosing(&xy)?,
    };
    let plan = InterpolationPlan::build(&xy, grid, &bbox)?;
    let values: Vec<f64> = points.iter().map(|p| p.2).collect();
    plan.apply(&values)
}

/// Non-overlapping `factor`×`factor` block mean of a square raster.
pub fn downsample(x: &Tensor<f64>, factor: usize) -> Result<Tensor<f64>> {
    if x.rank() != 2 || x.dim(0) != x.dim(1) || factor == 0 || !x.dim(0).is_multiple_of(factor) {
        return Err(Error::shape(format!(
            "cannot block-average {:?} by {factor}",
            x.shape()
        )));
    }
    let n = x.dim(0);
    let m = n / factor;
    let area = (factor * factor) as f64;
    let src = x.data();
    let mut out = vec![0.0; m * m];
    for (r, row) in out.chunks_mut(m).enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in 0..factor {
                let base = (r * factor + i) * n + c * factor;
                for &v in &src[base..base + factor] {
                    acc += v;
                }
            }
            *cell = acc / area;
        }
    }
    Tensor::new([m, m], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_grid(n: usize) -> GridSpec {
        GridSpec {
            native_size: n,
            working_size: n,
            bbox: Some(BoundingBox {
                min_easting: 0.0,
                max_easting: 1.0,
                min_northing: 0.0,
                max_northing: 1.0,
            }),
        }
    }

    #[test]
    fn constant_field_from_corners() {
        let pts = [
            (0.0, 0.0, 4.5),
            (1.0, 0.0, 4.5),
            (0.0, 1.0, 4.5),
            (1.0, 1.0, 4.5),
        ];
        let g = interpolate_grid(&pts, &unit_grid(16)).unwrap();
        assert!(g.data().iter().all(|&v| (v - 4.5).abs() < 1e-12));
    }

    #[test]
    fn reproduces_planes_inside_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let plane = |x: f64, y: f64| 2.0 * x - 3.5 * y + 0.25;
        let mut pts: Vec<(f64, f64, f64)> = vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
            .into_iter()
            .map(|(x, y)| (x, y, plane(x, y)))
            .collect();
        for _ in 0..6 {
            let (x, y) = (rng.random::<f64>(), rng.random::<f64>());
            pts.push((x, y, plane(x, y)));
        }
        let grid = unit_grid(32);
        let g = interpolate_grid(&pts, &grid).unwrap();
        for ((x, y), v) in grid.cell_centers(&grid.bbox.unwrap()).iter().zip(g.data()) {
            assert!((v - plane(*x, *y)).abs() < 1e-5);
        }
    }

    #[test]
    fn outside_hull_uses_nearest_point() {
        let pts = [(0.4, 0.4, 1.0), (0.6, 0.4, 2.0), (0.5, 0.6, 3.0)];
        let grid = unit_grid(8);
        let xy: Vec<_> = pts.iter().map(|p| (p.0, p.1)).collect();
        let plan = InterpolationPlan::build(&xy, &grid, &grid.bbox.unwrap()).unwrap();
        assert!(plan.hull_filled() > 0);
        let g = plan.apply(&[1.0, 2.0, 3.0]).unwrap();
        // top-left corner cell is nearest to the third point (0.5, 0.6)
        assert_eq!(g.get(&[0, 0]), 3.0);
        assert_eq!(g.get(&[7, 0]), 1.0);
        assert_eq!(g.get(&[7, 7]), 2.0);
    }

    #[test]
    fn too_few_or_collinear_points_fail() {
        let grid = unit_grid(4);
        assert!(interpolate_grid(&[(0.0, 0.0, 1.0), (1.0, 1.0, 1.0)], &grid).is_err());
        let line = [
            (0.0, 0.0, 1.0),
            (0.5, 0.5, 1.0),
            (1.0, 1.0, 1.0),
            (0.25, 0.25, 2.0),
        ];
        assert!(interpolate_grid(&line, &grid).is_err());
    }

    #[test]
    fn duplicates_keep_the_first_value() {
        let pts = [
            (0.0, 0.0, 1.0),
            (1.0, 0.0, 1.0),
            (0.0, 1.0, 1.0),
            (0.0, 0.0, 99.0),
        ];
        let g = interpolate_grid(&pts, &unit_grid(4)).unwrap();
        assert!(g.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn downsample_block_mean() {
        let c = Tensor::full([8, 8], 2.5);
        assert_eq!(downsample(&c, 4).unwrap(), Tensor::full([2, 2], 2.5));

        let mut x = Tensor::zeros([8, 8]);
        for i in 0..4 {
            for j in 0..4 {
                x.set(&[4 + i, j], (i * 4 + j + 1) as f64);
            }
        }
        let d = downsample(&x, 4).unwrap();
        assert_eq!(d.get(&[1, 0]), 8.5);
        assert_eq!(d.get(&[0, 0]), 0.0);
        assert!(downsample(&Tensor::zeros([6, 6]), 4).is_err());
    }

    #[test]
    fn downsample_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::from_fn([32, 32], |_| rng.random_range(-5.0..5.0));
        let d = downsample(&x, 4).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                let mut acc = 0.0;
                for i in 0..4 {
                    for j in 0..4 {
                        acc += x.get(&[4 * r + i, 4 * c + j]);
                    }
                }
                assert_eq!(d.get(&[r, c]), acc / 16.0);
            }
        }
    }

    #[test]
    fn grid_spec_validation() {
        assert!(GridSpec::new(256, 64).validate().is_ok());
        assert!(GridSpec::new(100, 64).validate().is_err());
        assert_eq!(GridSpec::new(64, 16).factor(), 4);
    }
}
