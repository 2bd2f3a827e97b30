//! Points and unit moves of the integer lattice Z^d.
//!
//! Coordinate 0 is the excited (horizontal) axis; coordinates `1..d` form
//! the vertical part.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatticePoint {
    coords: Vec<i32>,
}

impl LatticePoint {
    pub fn origin(dim: usize) -> Self {
        Self {
            coords: vec![0; dim],
        }
    }

    pub fn new(coords: Vec<i32>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(crate::error::invalid(
                "dimension",
                format!("need d >= 2, got {}", coords.len()),
            ));
        }
        Ok(Self { coords })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[i32] {
        &self.coords
    }

    pub fn horizontal(&self) -> i32 {
        self.coords[0]
    }

    pub fn vertical(&self) -> &[i32] {
        &self.coords[1..]
    }
}

impl From<LatticePoint> for Vec<i32> {
    fn from(p: LatticePoint) -> Self {
        p.coords
    }
}

/// A unit move `sign * e_{axis}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Direction {
    pub axis: usize,
    pub sign: i8,
}

impl Direction {
    pub fn new(axis: usize, sign: i8) -> Self {
        debug_assert!(sign == 1 || sign == -1);
        Self { axis, sign }
    }

    /// Position in the enumeration `+e_0, -e_0, +e_1, -e_1, ...`.
    pub fn index(self) -> usize {
        2 * self.axis + usize::from(self.sign < 0)
    }

    pub fn from_index(index: usize) -> Self {
        Self {
            axis: index / 2,
            sign: if index % 2 == 0 { 1 } else { -1 },
        }
    }

    pub fn negate(self) -> Self {
        Self {
            axis: self.axis,
            sign: -self.sign,
        }
    }

    pub fn is_horizontal(self) -> bool {
        self.axis == 0
    }
}

/// All `2d` unit moves, in index order.
pub fn all_directions(dim: usize) -> Vec<Direction> {
    (0..2 * dim).map(Direction::from_index).collect()
}

pub fn step(p: &LatticePoint, dir: Direction) -> Result<LatticePoint> {
    if dir.axis >= p.dim() {
        return Err(Error::AxisOutOfRange {
            axis: dir.axis,
            dim: p.dim(),
        });
    }
    let mut q = p.clone();
    q.coords[dir.axis] += i32::from(dir.sign);
    Ok(q)
}

/// In-place variant used by the simulation loops.
#[inline]
pub fn step_in_place(coords: &mut [i32], dir: Direction) {
    coords[dir.axis] += i32::from(dir.sign);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_moves() {
        let p = LatticePoint::new(vec![0, 0]).unwrap();
        assert_eq!(step(&p, Direction::new(0, 1)).unwrap().coords(), &[1, 0]);
        let q = LatticePoint::new(vec![3, -2]).unwrap();
        assert_eq!(step(&q, Direction::new(1, -1)).unwrap().coords(), &[3, -3]);
    }

    #[test]
    fn axis_out_of_range() {
        let p = LatticePoint::origin(2);
        assert_eq!(
            step(&p, Direction::new(2, 1)),
            Err(Error::AxisOutOfRange { axis: 2, dim: 2 })
        );
    }

    #[test]
    fn direction_enumeration() {
        for d in 2..8 {
            let dirs = all_directions(d);
            assert_eq!(dirs.len(), 2 * d);
            let set: std::collections::HashSet<_> = dirs.iter().copied().collect();
            assert_eq!(set.len(), 2 * d);
            for (i, dir) in dirs.iter().enumerate() {
                assert_eq!(dir.index(), i);
                assert!(set.contains(&dir.negate()));
            }
        }
    }

    #[test]
    fn split_components() {
        let p = LatticePoint::new(vec![4, 1, -1]).unwrap();
        assert_eq!(p.horizontal(), 4);
        assert_eq!(p.vertical(), &[1, -1]);
        assert!(LatticePoint::new(vec![1]).is_err());
    }
}
