//! Rectilinear node grids and the fields registered on them.
//!
//! Values are stored row-major with the x index fastest. A node is valid
//! iff its value is finite; invalid nodes carry NaN (or `-inf` for
//! rank-deficient flow maps), so the validity mask travels with the data.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::flowfield::DomainBox;
use crate::vec2::Vec2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub domain: DomainBox,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn new(domain: DomainBox, nx: usize, ny: usize) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::Config("grids need at least 3 nodes per axis"));
        }
        let g = GridSpec { domain, nx, ny };
        if !(g.dx() > 0.0 && g.dy() > 0.0) {
            return Err(Error::Config("grid spacing must be positive"));
        }
        Ok(g)
    }

    /// Node-count constructor for policy grids, which may be as small as 2x2.
    pub fn new_coarse(domain: DomainBox, nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::Config("policy grids need at least 2 nodes per axis"));
        }
        Ok(GridSpec { domain, nx, ny })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        (self.domain.x_max - self.domain.x_min) / (self.nx - 1) as f64
    }

    #[inline]
    pub fn dy(&self) -> f64 {
        (self.domain.y_max - self.domain.y_min) / (self.ny - 1) as f64
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        let d = &self.domain;
        d.x_min + (d.x_max - d.x_min) * (i as f64 / (self.nx - 1) as f64)
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        let d = &self.domain;
        d.y_min + (d.y_max - d.y_min) * (j as f64 / (self.ny - 1) as f64)
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(self.x(i), self.y(j))
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// `(i, j)` of a flat index.
    #[inline]
    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    #[inline]
    pub fn node_at(&self, k: usize) -> Vec2 {
        let (i, j) = self.coords(k);
        self.node(i, j)
    }

    #[inline]
    pub fn is_interior(&self, i: usize, j: usize) -> bool {
        i > 0 && j > 0 && i + 1 < self.nx && j + 1 < self.ny
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape { expected: grid.len(), found: values.len() });
        }
        Ok(ScalarField { grid, values })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(Vec2) -> f64) -> Self {
        let values = (0..grid.len()).map(|k| f(grid.node_at(k))).collect();
        ScalarField { grid, values }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    #[inline]
    pub fn is_valid(&self, k: usize) -> bool {
        self.values[k].is_finite()
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_finite()).count()
    }

    pub fn invalid_fraction(&self) -> f64 {
        1.0 - self.valid_count() as f64 / self.values.len() as f64
    }

    /// `(min, max)` over valid nodes.
    pub fn range(&self) -> Option<(f64, f64)> {
        self.values.iter().filter(|v| v.is_finite()).fold(None, |acc, &v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: GridSpec,
    pub values: Vec<Vec2>,
}

impl VectorField {
    pub fn new(grid: GridSpec, values: Vec<Vec2>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape { expected: grid.len(), found: values.len() });
        }
        Ok(VectorField { grid, values })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Vec2 {
        self.values[self.grid.index(i, j)]
    }

    #[inline]
    pub fn is_valid(&self, k: usize) -> bool {
        self.values[k].is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_nodes_hit_box_corners() {
        let g = GridSpec::new(DomainBox::double_gyre(), 401, 201).unwrap();
        assert_eq!(g.x(0), 0.0);
        assert_eq!(g.x(400), 2.0);
        assert_eq!(g.y(200), 1.0);
        assert!((g.dx() - 0.005).abs() < 1e-15);
        assert_eq!(g.coords(g.index(7, 3)), (7, 3));
    }

    #[test]
    fn small_grids_rejected() {
        assert!(GridSpec::new(DomainBox::double_gyre(), 2, 10).is_err());
        assert!(GridSpec::new_coarse(DomainBox::double_gyre(), 2, 2).is_ok());
    }

    #[test]
    fn field_shape_checked() {
        let g = GridSpec::new(DomainBox::double_gyre(), 3, 3).unwrap();
        assert_eq!(
            ScalarField::new(g, alloc::vec![0.0; 8]),
            Err(Error::Shape { expected: 9, found: 8 })
        );
    }
}
