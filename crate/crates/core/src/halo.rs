//! Face traces and the halo-exchange contract.
//!
//! Every block face carries a buffer of the exterior trace `U⁺` (or `U⁻` on a
//! low face) at each face node. Buffers are ordered face-cell-major, then
//! face node, then variable, where face cells and face nodes enumerate the
//! remaining axes in increasing axis order.

use thiserror::Error;

use crate::grid::{Layout, StateField};

/// Lower (`Low`) or upper (`High`) face of a block along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Low,
    High,
}

impl Side {
    pub fn index(self) -> usize {
        match self {
            Side::Low => 0,
            Side::High => 1,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Low => Side::High,
            Side::High => Side::Low,
        }
    }
}

/// A block face; its wire id is `2 * axis + side`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Face {
    pub axis: usize,
    pub side: Side,
}

impl Face {
    pub fn new(axis: usize, side: Side) -> Self {
        Face { axis, side }
    }

    pub fn id(self) -> u32 {
        (2 * self.axis + self.side.index()) as u32
    }

    pub fn from_id(id: u32) -> Option<Face> {
        let id = id as usize;
        let axis = id / 2;
        (axis < 3).then(|| Face {
            axis,
            side: if id % 2 == 0 { Side::Low } else { Side::High },
        })
    }

    /// The neighbor's face that touches this one.
    pub fn opposite(self) -> Face {
        Face {
            axis: self.axis,
            side: self.side.opposite(),
        }
    }
}

impl std::fmt::Display for Face {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let axis = ["x", "y", "z"].get(self.axis).copied().unwrap_or("?");
        let side = match self.side {
            Side::Low => "-",
            Side::High => "+",
        };
        write!(f, "{axis}{side}")
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExchangeError {
    #[error("halo exchange on face {face} of worker {worker}: {reason}")]
    Face { worker: usize, face: Face, reason: String },
    #[error("reduction on worker {worker}: {reason}")]
    Reduction { worker: usize, reason: String },
    #[error("payload for face {face} has {got} values, expected {expected}")]
    PayloadSize { face: Face, got: usize, expected: usize },
}

/// Exterior traces for all faces of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct HaloBuffers {
    dim: usize,
    faces: [[Vec<f64>; 2]; 3],
}

impl HaloBuffers {
    /// Zeroed buffers sized for a field of `layout`.
    pub fn new(dim: usize, layout: &Layout) -> Self {
        let mut faces: [[Vec<f64>; 2]; 3] = Default::default();
        for (axis, pair) in faces.iter_mut().enumerate().take(dim) {
            let len = face_len(layout, axis);
            pair[0] = vec![0.0; len];
            pair[1] = vec![0.0; len];
        }
        HaloBuffers { dim, faces }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn face(&self, face: Face) -> &[f64] {
        &self.faces[face.axis][face.side.index()]
    }

    pub fn face_mut(&mut self, face: Face) -> &mut Vec<f64> {
        &mut self.faces[face.axis][face.side.index()]
    }

    /// Faces present for this dimension.
    pub fn faces(dim: usize) -> impl Iterator<Item = Face> {
        (0..dim).flat_map(|axis| [Face::new(axis, Side::Low), Face::new(axis, Side::High)])
    }
}

/// Values per face buffer: face cells × face nodes × variables.
pub fn face_len(layout: &Layout, axis: usize) -> usize {
    let cells: usize = (0..3).filter(|&a| a != axis).map(|a| layout.cells[a]).product();
    let nodes: usize = (0..3).filter(|&a| a != axis).map(|a| layout.nodes[a]).product();
    cells * nodes * layout.n_var
}

/// Copies the block's own boundary values on `face` into `out`, in buffer
/// order. On a low face that is node 0 of the first cell layer, on a high
/// face the last node of the last layer.
pub fn extract_trace(field: &StateField, face: Face, out: &mut Vec<f64>) {
    let layout = field.layout();
    let d = face.axis;
    let (cell_d, node_d) = match face.side {
        Side::Low => (0, 0),
        Side::High => (layout.cells[d] - 1, layout.nodes[d] - 1),
    };
    let nv = layout.n_var;
    let data = field.as_slice();
    out.clear();
    out.reserve(face_len(&layout, d));
    let range = |a: usize, extent: usize, fixed: usize| if a == d { fixed..fixed + 1 } else { 0..extent };
    for c0 in range(0, layout.cells[0], cell_d) {
        for c1 in range(1, layout.cells[1], cell_d) {
            for c2 in range(2, layout.cells[2], cell_d) {
                for n0 in range(0, layout.nodes[0], node_d) {
                    for n1 in range(1, layout.nodes[1], node_d) {
                        for n2 in range(2, layout.nodes[2], node_d) {
                            let off = layout.offset([c0, c1, c2], [n0, n1, n2]);
                            out.extend_from_slice(&data[off..off + nv]);
                        }
                    }
                }
            }
        }
    }
}

/// Supplies exterior traces and global reductions to a block solver.
///
/// `exchange` is called once per RK stage with the stage input; on return
/// every face buffer must hold the neighbor's adjacent boundary values of
/// that same stage.
pub trait HaloExchange {
    fn exchange(&mut self, field: &StateField, stage: u32, halos: &mut HaloBuffers) -> Result<(), ExchangeError>;

    /// Maximum of `value` over all participating blocks.
    fn reduce_max(&mut self, value: f64) -> Result<f64, ExchangeError>;
}

/// Single block covering the whole periodic mesh: each face receives the
/// opposite face of the same block.
#[derive(Debug, Default, Clone, Copy)]
pub struct PeriodicSelf;

impl HaloExchange for PeriodicSelf {
    fn exchange(&mut self, field: &StateField, _stage: u32, halos: &mut HaloBuffers) -> Result<(), ExchangeError> {
        for face in HaloBuffers::faces(field.dim()) {
            extract_trace(field, face.opposite(), halos.face_mut(face));
        }
        Ok(())
    }

    fn reduce_max(&mut self, value: f64) -> Result<f64, ExchangeError> {
        Ok(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::StateField;

    #[test]
    fn face_ids_round_trip() {
        for id in 0..6 {
            assert_eq!(Face::from_id(id).unwrap().id(), id);
        }
        assert!(Face::from_id(6).is_none());
        assert_eq!(Face::new(1, Side::High).to_string(), "y+");
    }

    #[test]
    fn trace_ordering_2d() {
        // 2x3 cells, order 2, one variable, value = 100 cx + 10 cy + 2 i + j.
        let mut f = StateField::zeros(2, [2, 3, 1], 2, 1);
        for cx in 0..2 {
            for cy in 0..3 {
                for i in 0..2 {
                    for j in 0..2 {
                        f.set([cx, cy, 0], [i, j, 0], 0, (100 * cx + 10 * cy + 2 * i + j) as f64);
                    }
                }
            }
        }
        let mut t = Vec::new();
        extract_trace(&f, Face::new(0, Side::High), &mut t);
        assert_eq!(t, vec![102.0, 103.0, 112.0, 113.0, 122.0, 123.0]);
        extract_trace(&f, Face::new(1, Side::Low), &mut t);
        assert_eq!(t, vec![0.0, 2.0, 100.0, 102.0]);
        assert_eq!(face_len(&f.layout(), 0), 6);
        assert_eq!(face_len(&f.layout(), 1), 4);
    }

    #[test]
    fn periodic_self_copy_and_idempotence() {
        let mut f = StateField::zeros(1, [4, 1, 1], 3, 2);
        for (i, v) in f.as_mut_slice().iter_mut().enumerate() {
            *v = i as f64;
        }
        let mut h = HaloBuffers::new(1, &f.layout());
        PeriodicSelf.exchange(&f, 0, &mut h).unwrap();
        // low face gets the last node of the last cell, high face the first node of cell 0
        assert_eq!(h.face(Face::new(0, Side::Low)), &[22.0, 23.0]);
        assert_eq!(h.face(Face::new(0, Side::High)), &[0.0, 1.0]);
        let before = h.clone();
        PeriodicSelf.exchange(&f, 1, &mut h).unwrap();
        assert_eq!(before, h);
    }
}
