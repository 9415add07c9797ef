use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Extents of a 1-, 2- or 3-D grid.
///
/// Axis 0 is horizontal (position within a row), axis 1 is vertical (row
/// index) and axis 2 is depth. Cells are numbered in raster order with axis 0
/// varying fastest, so a 2-D grid printed row by row lists cells in index
/// order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    extents: Vec<usize>,
}

impl GridShape {
    pub fn new(extents: Vec<usize>) -> Result<Self> {
        if extents.is_empty() || extents.len() > 3 {
            return Err(Error::InvalidShape(format!(
                "expected 1 to 3 extents, got {}",
                extents.len()
            )));
        }
        if extents.iter().any(|&e| e == 0) {
            return Err(Error::InvalidShape(format!(
                "extents must be positive, got {extents:?}"
            )));
        }
        Ok(GridShape { extents })
    }

    /// An m×m (or m×m×m) grid.
    pub fn cube(dims: usize, m: usize) -> Result<Self> {
        GridShape::new(vec![m; dims])
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn ndim(&self) -> usize {
        self.extents.len()
    }

    pub fn cell_count(&self) -> usize {
        self.extents.iter().product()
    }

    /// Extents padded with 1 to three axes.
    pub fn padded(&self) -> [usize; 3] {
        let mut out = [1; 3];
        out[..self.extents.len()].copy_from_slice(&self.extents);
        out
    }

    pub fn index(&self, coords: [usize; 3]) -> usize {
        let e = self.padded();
        coords[0] + e[0] * (coords[1] + e[1] * coords[2])
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let e = self.padded();
        [index % e[0], (index / e[0]) % e[1], index / (e[0] * e[1])]
    }

    /// Index distance between neighbouring cells along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.padded()[..axis].iter().product()
    }

    pub fn transpose(&self) -> GridShape {
        let mut extents = self.extents.clone();
        if extents.len() >= 2 {
            extents.swap(0, 1);
        }
        GridShape { extents }
    }
}

impl fmt::Display for GridShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.extents.iter().map(|e| e.to_string()).collect();
        f.write_str(&parts.join("x"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let s = GridShape::new(vec![3, 4, 2]).unwrap();
        for i in 0..s.cell_count() {
            assert_eq!(s.index(s.coords(i)), i);
        }
        assert_eq!(s.stride(0), 1);
        assert_eq!(s.stride(1), 3);
        assert_eq!(s.stride(2), 12);
    }

    #[test]
    fn rejects_bad_extents() {
        assert!(GridShape::new(vec![]).is_err());
        assert!(GridShape::new(vec![2, 0]).is_err());
        assert!(GridShape::new(vec![1, 1, 1, 1]).is_err());
    }
}
