//! Structured periodic mesh, nodal state storage, initial conditions and
//! quadrature diagnostics.
//!
//! A [`StateField`] is one dense `f64` array indexed
//! `[cell_x][cell_y][cell_z][node_i][node_j][node_k][var]`. Axes beyond the
//! spatial dimension are absent from the shape; in memory that is the same as
//! giving them extent 1, which is how the index arithmetic treats them.

use std::f64::consts::PI;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::basis::{NodalBasis, MAX_ORDER};
use crate::models::EquationModel;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{0}")]
    WrongModel(String),
    #[error("malformed field dump: {0}")]
    Dump(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Uniform periodic mesh of `[0, L_x] × [0, L_y] × [0, L_z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    dim: usize,
    cells: [usize; 3],
    lengths: [f64; 3],
    order: usize,
}

impl Mesh {
    /// `cells` and `lengths` must have at least `dim` entries; extra entries
    /// are ignored.
    pub fn new(dim: usize, cells: &[usize], lengths: &[f64], order: usize) -> Result<Self, GridError> {
        if !(1..=3).contains(&dim) {
            return Err(GridError::InvalidMesh(format!("dimension {dim} not in 1..=3")));
        }
        if cells.len() < dim || lengths.len() < dim {
            return Err(GridError::InvalidMesh(format!(
                "need {dim} cell counts and lengths, got {} and {}",
                cells.len(),
                lengths.len()
            )));
        }
        if !(2..=MAX_ORDER).contains(&order) {
            return Err(GridError::InvalidMesh(format!("order {order} not in 2..={MAX_ORDER}")));
        }
        let mut c = [1; 3];
        let mut l = [1.0; 3];
        for d in 0..dim {
            if cells[d] == 0 {
                return Err(GridError::InvalidMesh(format!("zero cells along axis {d}")));
            }
            if !(lengths[d] > 0.0 && lengths[d].is_finite()) {
                return Err(GridError::InvalidMesh(format!("nonpositive length along axis {d}")));
            }
            c[d] = cells[d];
            l[d] = lengths[d];
        }
        Ok(Mesh {
            dim,
            cells: c,
            lengths: l,
            order,
        })
    }

    /// Unit-length domain with `cells` cells on every axis.
    pub fn unit(dim: usize, cells: usize, order: usize) -> Result<Self, GridError> {
        Mesh::new(dim, &[cells; 3], &[1.0; 3], order)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Per-axis cell counts; unused axes report 1.
    pub fn cells(&self) -> [usize; 3] {
        self.cells
    }

    pub fn lengths(&self) -> [f64; 3] {
        self.lengths
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn cell_size(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.cells[axis] as f64
    }

    pub fn min_cell_size(&self) -> f64 {
        (0..self.dim).map(|d| self.cell_size(d)).fold(f64::INFINITY, f64::min)
    }

    pub fn cell_count(&self) -> usize {
        self.cells.iter().product()
    }

    /// Nodes per cell, `N^dim`.
    pub fn nodes_per_cell(&self) -> usize {
        self.order.pow(self.dim as u32)
    }

    /// Degrees of freedom: cells × nodes per cell × variables.
    pub fn dof(&self, n_var: usize) -> usize {
        self.cell_count() * self.nodes_per_cell() * n_var
    }

    pub fn zeros(&self, n_var: usize) -> StateField {
        StateField::zeros(self.dim, self.cells, self.order, n_var)
    }

    /// Physical position of node `node` in cell `cell`.
    pub fn node_coordinates(
        &self,
        basis: &NodalBasis,
        cell: &[usize],
        node: &[usize],
    ) -> Result<[f64; 3], GridError> {
        if cell.len() < self.dim || node.len() < self.dim {
            return Err(GridError::IndexOutOfRange(format!(
                "need {} cell and node indices",
                self.dim
            )));
        }
        if basis.order() != self.order {
            return Err(GridError::ShapeMismatch(format!(
                "basis order {} vs mesh order {}",
                basis.order(),
                self.order
            )));
        }
        let mut x = [0.0; 3];
        for d in 0..self.dim {
            if cell[d] >= self.cells[d] {
                return Err(GridError::IndexOutOfRange(format!(
                    "cell {} along axis {d} (have {})",
                    cell[d], self.cells[d]
                )));
            }
            if node[d] >= self.order {
                return Err(GridError::IndexOutOfRange(format!(
                    "node {} along axis {d} (order {})",
                    node[d], self.order
                )));
            }
            x[d] = self.coordinate(d, cell[d], basis.nodes()[node[d]]);
        }
        Ok(x)
    }

    /// `x = x_left + Δx/2 (ξ + 1)`.
    fn coordinate(&self, axis: usize, cell: usize, xi: f64) -> f64 {
        let h = self.cell_size(axis);
        cell as f64 * h + 0.5 * h * (xi + 1.0)
    }

    /// Samples `f(x, y, z, out)` at every node.
    pub fn collocate(
        &self,
        basis: &NodalBasis,
        n_var: usize,
        mut f: impl FnMut([f64; 3], &mut [f64]),
    ) -> StateField {
        let mut field = self.zeros(n_var);
        let layout = field.layout();
        let nodes = basis.nodes();
        let mut xyz = [0.0; 3];
        for cx in 0..self.cells[0] {
            for cy in 0..self.cells[1] {
                for cz in 0..self.cells[2] {
                    for i in 0..layout.nodes[0] {
                        for j in 0..layout.nodes[1] {
                            for k in 0..layout.nodes[2] {
                                let idx = [(cx, i), (cy, j), (cz, k)];
                                for d in 0..self.dim {
                                    xyz[d] = self.coordinate(d, idx[d].0, nodes[idx[d].1]);
                                }
                                let off = layout.offset([cx, cy, cz], [i, j, k]);
                                f(xyz, &mut field.data[off..off + n_var]);
                            }
                        }
                    }
                }
            }
        }
        field
    }

    /// Quadrature weight of every node of one cell, `Π_d w_{i_d} Δx_d / 2`,
    /// in node order.
    pub fn cell_quadrature_weights(&self, basis: &NodalBasis) -> Vec<f64> {
        let w = basis.weights();
        let n = self.order;
        let nodes = [n, if self.dim > 1 { n } else { 1 }, if self.dim > 2 { n } else { 1 }];
        let half = [0.5 * self.cell_size(0), 0.5 * self.cell_size(1), 0.5 * self.cell_size(2)];
        let mut out = Vec::with_capacity(self.nodes_per_cell());
        for i in 0..nodes[0] {
            for j in 0..nodes[1] {
                for k in 0..nodes[2] {
                    let mut q = w[i] * half[0];
                    if self.dim > 1 {
                        q *= w[j] * half[1];
                    }
                    if self.dim > 2 {
                        q *= w[k] * half[2];
                    }
                    out.push(q);
                }
            }
        }
        out
    }

    fn check_field(&self, field: &StateField) -> Result<(), GridError> {
        if field.dim != self.dim || field.cells != self.cells || field.order != self.order {
            return Err(GridError::ShapeMismatch(format!(
                "field shape {:?} does not match mesh {:?}x{}",
                field.shape(),
                &self.cells[..self.dim],
                self.order
            )));
        }
        Ok(())
    }
}

/// Index arithmetic shared by every [`StateField`] of a given shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub cells: [usize; 3],
    /// Nodes per axis; 1 on unused axes.
    pub nodes: [usize; 3],
    pub n_var: usize,
    /// Entries per cell.
    pub cell_len: usize,
    pub cell_stride: [usize; 3],
    pub node_stride: [usize; 3],
}

impl Layout {
    pub fn new(dim: usize, cells: [usize; 3], order: usize, n_var: usize) -> Self {
        let nodes = [order, if dim > 1 { order } else { 1 }, if dim > 2 { order } else { 1 }];
        let node_stride = [nodes[1] * nodes[2] * n_var, nodes[2] * n_var, n_var];
        let cell_len = nodes[0] * node_stride[0];
        let cell_stride = [cells[1] * cells[2] * cell_len, cells[2] * cell_len, cell_len];
        Layout {
            cells,
            nodes,
            n_var,
            cell_len,
            cell_stride,
            node_stride,
        }
    }

    #[inline(always)]
    pub fn cell_offset(&self, cell: [usize; 3]) -> usize {
        cell[0] * self.cell_stride[0] + cell[1] * self.cell_stride[1] + cell[2] * self.cell_stride[2]
    }

    #[inline(always)]
    pub fn offset(&self, cell: [usize; 3], node: [usize; 3]) -> usize {
        self.cell_offset(cell)
            + node[0] * self.node_stride[0]
            + node[1] * self.node_stride[1]
            + node[2] * self.node_stride[2]
    }

    pub fn len(&self) -> usize {
        self.cells.iter().product::<usize>() * self.cell_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Nodal unknowns of a whole mesh or of one block of it.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    dim: usize,
    cells: [usize; 3],
    order: usize,
    n_var: usize,
    data: Vec<f64>,
}

impl StateField {
    pub fn zeros(dim: usize, cells: [usize; 3], order: usize, n_var: usize) -> Self {
        let mut cells = cells;
        for c in cells.iter_mut().skip(dim) {
            *c = 1;
        }
        let len = Layout::new(dim, cells, order, n_var).len();
        StateField {
            dim,
            cells,
            order,
            n_var,
            data: vec![0.0; len],
        }
    }

    pub fn from_data(
        dim: usize,
        cells: [usize; 3],
        order: usize,
        n_var: usize,
        data: Vec<f64>,
    ) -> Result<Self, GridError> {
        let mut f = StateField::zeros(dim, cells, order, n_var);
        if data.len() != f.data.len() {
            return Err(GridError::ShapeMismatch(format!(
                "{} values for a field of {}",
                data.len(),
                f.data.len()
            )));
        }
        f.data = data;
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> [usize; 3] {
        self.cells
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_var(&self) -> usize {
        self.n_var
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.dim, self.cells, self.order, self.n_var)
    }

    /// Array shape with unused axes dropped:
    /// `[cells..., nodes..., n_var]`.
    pub fn shape(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.cells[..self.dim].to_vec();
        s.extend(std::iter::repeat(self.order).take(self.dim));
        s.push(self.n_var);
        s
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &StateField) -> bool {
        self.dim == other.dim && self.cells == other.cells && self.order == other.order && self.n_var == other.n_var
    }

    pub fn get(&self, cell: [usize; 3], node: [usize; 3], var: usize) -> f64 {
        self.data[self.layout().offset(cell, node) + var]
    }

    pub fn set(&mut self, cell: [usize; 3], node: [usize; 3], var: usize, value: f64) {
        let off = self.layout().offset(cell, node) + var;
        self.data[off] = value;
    }

    /// The `n_var` values at one node.
    pub fn node(&self, cell: [usize; 3], node: [usize; 3]) -> &[f64] {
        let off = self.layout().offset(cell, node);
        &self.data[off..off + self.n_var]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute componentwise difference.
    pub fn max_abs_diff(&self, other: &StateField) -> f64 {
        assert!(self.same_shape(other), "field shapes differ");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
    }
}

/// SplitMix64 generator.
///
/// Fixed so that amplitude sequences are reproducible from a seed alone,
/// independently of any library's RNG stream.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// `nk` amplitudes drawn uniformly from `[0, 1)`.
pub fn multisine_amplitudes(nk: usize, seed: u64) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    (0..nk).map(|_| rng.next_f64()).collect()
}

/// `U_0(x) = Σ_k A_k sin(2π k x / L_x)`, `k = 1..=amplitudes.len()`.
pub fn multisine_profile(amplitudes: &[f64], x: f64, length: f64) -> f64 {
    amplitudes
        .iter()
        .enumerate()
        .map(|(i, a)| a * (2.0 * PI * (i + 1) as f64 * x / length).sin())
        .sum()
}

/// Collocates the multi-sine profile for an advection model. In 2D and 3D
/// the profile varies along x only.
pub fn init_multisine(
    mesh: &Mesh,
    basis: &NodalBasis,
    model: &EquationModel,
    amplitudes: &[f64],
) -> Result<StateField, GridError> {
    advected_multisine(mesh, basis, model, amplitudes, 0.0)
}

/// Exact advection solution at time `t`: the multi-sine profile translated
/// by `a_x t` with periodic wrap.
pub fn advected_multisine(
    mesh: &Mesh,
    basis: &NodalBasis,
    model: &EquationModel,
    amplitudes: &[f64],
    t: f64,
) -> Result<StateField, GridError> {
    let EquationModel::Advection { velocity, .. } = *model else {
        return Err(GridError::WrongModel("multi-sine initial data needs an advection model".into()));
    };
    if amplitudes.is_empty() {
        return Err(GridError::WrongModel("multi-sine needs at least one amplitude".into()));
    }
    check_model(mesh, model)?;
    let lx = mesh.lengths()[0];
    let shift = (velocity[0] * t).rem_euclid(lx);
    Ok(mesh.collocate(basis, 1, |x, out| out[0] = multisine_profile(amplitudes, x[0] - shift, lx)))
}

/// Density amplitude of the subsonic Euler profile.
pub const EULER_DENSITY_AMPLITUDE: f64 = 0.2;
/// Peak velocity component over sound speed.
pub const EULER_MACH: f64 = 0.5;

/// Primitive variables `(ρ, u_x, u_y, u_z)` of the smooth subsonic profile
/// at point `x`.
pub fn euler_subsonic_primitive(dim: usize, sound_speed: f64, lengths: [f64; 3], x: [f64; 3]) -> [f64; 4] {
    let s = |d: usize| (2.0 * PI * x[d] / lengths[d]).sin();
    let mut bump = s(0);
    for d in 1..dim {
        bump *= s(d);
    }
    let rho = 1.0 + EULER_DENSITY_AMPLITUDE * bump;
    let (ux, uy) = if dim > 1 {
        (EULER_MACH * sound_speed * s(1), EULER_MACH * sound_speed * s(0))
    } else {
        (EULER_MACH * sound_speed * s(0), 0.0)
    };
    [rho, ux, uy, 0.0]
}

/// Collocates the subsonic isothermal Euler state.
pub fn init_euler_subsonic(mesh: &Mesh, basis: &NodalBasis, model: &EquationModel) -> Result<StateField, GridError> {
    let EquationModel::IsothermalEuler { sound_speed, dim } = *model else {
        return Err(GridError::WrongModel("subsonic initial data needs an Euler model".into()));
    };
    check_model(mesh, model)?;
    let lengths = mesh.lengths();
    Ok(mesh.collocate(basis, dim + 1, |x, out| {
        let prim = euler_subsonic_primitive(dim, sound_speed, lengths, x);
        out[0] = prim[0];
        for d in 0..dim {
            out[1 + d] = prim[0] * prim[1 + d];
        }
    }))
}

fn check_model(mesh: &Mesh, model: &EquationModel) -> Result<(), GridError> {
    if model.spatial_dim() != mesh.dim() {
        return Err(GridError::WrongModel(format!(
            "{}D model on a {}D mesh",
            model.spatial_dim(),
            mesh.dim()
        )));
    }
    Ok(())
}

/// `sqrt(∫ (a - b)² dx)` for variable `var`, by Gauss-Lobatto quadrature.
pub fn l2_error(
    mesh: &Mesh,
    basis: &NodalBasis,
    a: &StateField,
    b: &StateField,
    var: usize,
) -> Result<f64, GridError> {
    mesh.check_field(a)?;
    if !a.same_shape(b) {
        return Err(GridError::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if var >= a.n_var {
        return Err(GridError::IndexOutOfRange(format!("variable {var} of {}", a.n_var)));
    }
    let q = mesh.cell_quadrature_weights(basis);
    let nv = a.n_var;
    let sum: f64 = a
        .data
        .chunks_exact(q.len() * nv)
        .zip(b.data.chunks_exact(q.len() * nv))
        .map(|(ca, cb)| {
            q.iter()
                .enumerate()
                .map(|(n, w)| {
                    let d = ca[n * nv + var] - cb[n * nv + var];
                    w * d * d
                })
                .sum::<f64>()
        })
        .sum();
    Ok(sum.sqrt())
}

/// Per-variable quadrature integral over the domain.
pub fn conserved_totals(mesh: &Mesh, basis: &NodalBasis, field: &StateField) -> Result<Vec<f64>, GridError> {
    mesh.check_field(field)?;
    Ok(integrate_vars(mesh, basis, field, |v| v))
}

/// Per-variable `∫ |U| dx`; a magnitude scale for relative conservation drift.
pub fn absolute_totals(mesh: &Mesh, basis: &NodalBasis, field: &StateField) -> Result<Vec<f64>, GridError> {
    mesh.check_field(field)?;
    Ok(integrate_vars(mesh, basis, field, f64::abs))
}

fn integrate_vars(mesh: &Mesh, basis: &NodalBasis, field: &StateField, g: impl Fn(f64) -> f64) -> Vec<f64> {
    let q = mesh.cell_quadrature_weights(basis);
    let nv = field.n_var;
    let mut totals = vec![0.0; nv];
    for cell in field.data.chunks_exact(q.len() * nv) {
        for (n, w) in q.iter().enumerate() {
            for v in 0..nv {
                totals[v] += w * g(cell[n * nv + v]);
            }
        }
    }
    totals
}

/// Header of a flat binary field dump.
#[derive(Debug, Clone, PartialEq)]
pub struct DumpHeader {
    pub dim: usize,
    pub cells: Vec<usize>,
    pub order: usize,
    pub n_var: usize,
    pub lengths: Vec<f64>,
}

const DUMP_FORMAT: &str = "ndg-field-v1";

/// Path of the text header that accompanies a binary dump.
pub fn dump_header_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".hdr");
    PathBuf::from(p)
}

/// Writes `field` as little-endian `f64` values in storage order to `path`
/// and a `key = value` header to `<path>.hdr`.
pub fn write_field_dump(path: &Path, mesh: &Mesh, field: &StateField) -> Result<(), GridError> {
    mesh.check_field(field)?;
    let dim = mesh.dim();
    let join = |it: Vec<String>| it.join(" ");
    let header = format!(
        "format = {DUMP_FORMAT}\ndims = {dim}\ncells = {}\norder = {}\nn_var = {}\nlengths = {}\n\
         layout = cell_x cell_y cell_z node_i node_j node_k var (unused axes dropped)\nendianness = little\n",
        join(mesh.cells()[..dim].iter().map(|c| c.to_string()).collect()),
        mesh.order(),
        field.n_var(),
        join(mesh.lengths()[..dim].iter().map(|l| l.to_string()).collect()),
    );
    fs::write(dump_header_path(path), header)?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    for v in field.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_field_dump(path: &Path) -> Result<(DumpHeader, StateField), GridError> {
    let text = fs::read_to_string(dump_header_path(path))?;
    let mut dim = None;
    let mut cells = None;
    let mut order = None;
    let mut n_var = None;
    let mut lengths = None;
    let bad = |what: &str| GridError::Dump(format!("bad {what}"));
    for line in text.lines() {
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        let value = value.trim();
        match key.trim() {
            "format" if value != DUMP_FORMAT => return Err(GridError::Dump(format!("unknown format {value}"))),
            "dims" => dim = Some(value.parse::<usize>().map_err(|_| bad("dims"))?),
            "cells" => {
                cells = Some(
                    value
                        .split_whitespace()
                        .map(str::parse)
                        .collect::<Result<Vec<usize>, _>>()
                        .map_err(|_| bad("cells"))?,
                )
            }
            "order" => order = Some(value.parse::<usize>().map_err(|_| bad("order"))?),
            "n_var" => n_var = Some(value.parse::<usize>().map_err(|_| bad("n_var"))?),
            "lengths" => {
                lengths = Some(
                    value
                        .split_whitespace()
                        .map(str::parse)
                        .collect::<Result<Vec<f64>, _>>()
                        .map_err(|_| bad("lengths"))?,
                )
            }
            _ => {}
        }
    }
    let header = DumpHeader {
        dim: dim.ok_or_else(|| bad("dims"))?,
        cells: cells.ok_or_else(|| bad("cells"))?,
        order: order.ok_or_else(|| bad("order"))?,
        n_var: n_var.ok_or_else(|| bad("n_var"))?,
        lengths: lengths.ok_or_else(|| bad("lengths"))?,
    };
    if header.cells.len() != header.dim || header.lengths.len() != header.dim {
        return Err(bad("axis count"));
    }
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(GridError::Dump("payload is not a whole number of f64".into()));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut cells3 = [1; 3];
    cells3[..header.dim].copy_from_slice(&header.cells);
    let field = StateField::from_data(header.dim, cells3, header.order, header.n_var, data)?;
    Ok((header, field))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(n: usize) -> NodalBasis {
        NodalBasis::new(n).unwrap()
    }

    #[test]
    fn node_coordinates_examples() {
        let b = basis(3);
        let m = Mesh::new(1, &[2], &[1.0], 3).unwrap();
        assert_eq!(m.node_coordinates(&b, &[0], &[0]).unwrap()[0], 0.0);
        assert_eq!(m.node_coordinates(&b, &[0], &[1]).unwrap()[0], 0.25);
        let m = Mesh::new(1, &[4], &[1.0], 3).unwrap();
        assert_eq!(m.node_coordinates(&b, &[3], &[2]).unwrap()[0], 1.0);
        assert!(m.node_coordinates(&b, &[4], &[0]).is_err());
        assert!(m.node_coordinates(&b, &[0], &[3]).is_err());
    }

    #[test]
    fn invalid_meshes() {
        assert!(Mesh::new(0, &[], &[], 3).is_err());
        assert!(Mesh::new(2, &[4, 0], &[1.0, 1.0], 3).is_err());
        assert!(Mesh::new(1, &[4], &[1.0], 1).is_err());
        assert!(Mesh::new(1, &[4], &[-1.0], 3).is_err());
    }

    #[test]
    fn dof_metric() {
        let m = Mesh::unit(2, 400, 8).unwrap();
        assert_eq!(m.dof(1), 400 * 400 * 8 * 8);
        assert_eq!(Mesh::unit(3, 4, 3).unwrap().dof(4), 64 * 27 * 4);
    }

    #[test]
    fn shape_drops_unused_axes() {
        let m = Mesh::new(2, &[5, 7], &[1.0, 2.0], 4).unwrap();
        let f = m.zeros(3);
        assert_eq!(f.shape(), vec![5, 7, 4, 4, 3]);
        assert_eq!(f.as_slice().len(), 5 * 7 * 16 * 3);
        assert_eq!(Mesh::unit(1, 6, 3).unwrap().zeros(1).shape(), vec![6, 3, 1]);
    }

    #[test]
    fn single_mode_multisine() {
        let b = basis(3);
        let m = Mesh::new(1, &[2], &[1.0], 3).unwrap();
        let model = EquationModel::advection(1, &[1.0]).unwrap();
        let f = init_multisine(&m, &b, &model, &[1.0]).unwrap();
        // cell 0, node 1 sits at x = 0.25
        assert!((f.get([0, 0, 0], [1, 0, 0], 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn advected_multisine_translates() {
        let b = basis(4);
        let m = Mesh::new(1, &[3], &[1.0], 4).unwrap();
        let model = EquationModel::advection(1, &[2.0]).unwrap();
        let u0 = init_multisine(&m, &b, &model, &[1.0]).unwrap();
        // a full period of travel lands exactly on the initial state
        assert_eq!(advected_multisine(&m, &b, &model, &[1.0], 0.5).unwrap(), u0);
        // shift by a quarter: sin(2π(x - 1/4)) = -cos(2πx)
        let q = advected_multisine(&m, &b, &model, &[1.0], 0.125).unwrap();
        let expect = m.collocate(&b, 1, |x, out| out[0] = -(2.0 * PI * x[0]).cos());
        assert!(q.max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn multisine_is_deterministic() {
        let a = multisine_amplitudes(40, 7);
        assert_eq!(a, multisine_amplitudes(40, 7));
        assert_ne!(a, multisine_amplitudes(40, 8));
        assert!(a.iter().all(|v| (0.0..1.0).contains(v)));
        let b = basis(5);
        let m = Mesh::unit(2, 6, 5).unwrap();
        let model = EquationModel::advection(2, &[1.0, 0.0]).unwrap();
        let f1 = init_multisine(&m, &b, &model, &a).unwrap();
        let f2 = init_multisine(&m, &b, &model, &a).unwrap();
        assert!(f1.as_slice().iter().zip(f2.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn multisine_needs_advection() {
        let b = basis(3);
        let m = Mesh::unit(2, 4, 3).unwrap();
        let euler = EquationModel::isothermal_euler(2, 1.0).unwrap();
        assert!(init_multisine(&m, &b, &euler, &[1.0]).is_err());
        let adv = EquationModel::advection(2, &[1.0, 0.0]).unwrap();
        assert!(init_euler_subsonic(&m, &b, &adv).is_err());
    }

    #[test]
    fn euler_profile_properties() {
        let s = euler_subsonic_primitive(2, 1.0, [1.0; 3], [0.0, 0.0, 0.0]);
        assert_eq!(s, [1.0, 0.0, 0.0, 0.0]);
        let b = basis(4);
        let m = Mesh::unit(2, 8, 4).unwrap();
        let model = EquationModel::isothermal_euler(2, 1.0).unwrap();
        let f = init_euler_subsonic(&m, &b, &model).unwrap();
        let mut umax = 0.0f64;
        for node in f.as_slice().chunks_exact(3) {
            assert!(node[0] > 0.0);
            umax = umax.max((node[1] / node[0]).abs()).max((node[2] / node[0]).abs());
        }
        assert!(umax <= 0.5 + 1e-15 && umax > 0.49);
        let totals = conserved_totals(&m, &b, &f).unwrap();
        assert!((totals[0] - 1.0).abs() < 1e-14, "mass {}", totals[0]);
    }

    #[test]
    fn l2_error_examples() {
        let b = basis(3);
        let m = Mesh::unit(1, 1, 3).unwrap();
        let one = m.collocate(&b, 1, |_, u| u[0] = 1.0);
        let zero = m.zeros(1);
        assert!((l2_error(&m, &b, &one, &zero, 0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(l2_error(&m, &b, &one, &one, 0).unwrap(), 0.0);

        let b = basis(6);
        let m = Mesh::unit(1, 64, 6).unwrap();
        let s = m.collocate(&b, 1, |x, u| u[0] = (2.0 * PI * x[0]).sin());
        let e = l2_error(&m, &b, &s, &m.zeros(1), 0).unwrap();
        assert!((e - 0.5f64.sqrt()).abs() < 1e-6);
        assert_eq!(e, l2_error(&m, &b, &m.zeros(1), &s, 0).unwrap());
    }

    #[test]
    fn l2_error_shape_mismatch() {
        let b = basis(3);
        let m = Mesh::unit(1, 4, 3).unwrap();
        let other = Mesh::unit(1, 5, 3).unwrap().zeros(1);
        assert!(matches!(
            l2_error(&m, &b, &m.zeros(1), &other, 0),
            Err(GridError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn totals_of_constant_and_multisine() {
        let b = basis(5);
        let m = Mesh::unit(2, 8, 5).unwrap();
        let c = m.collocate(&b, 1, |_, u| u[0] = 2.5);
        assert!((conserved_totals(&m, &b, &c).unwrap()[0] - 2.5).abs() < 1e-12);

        let b = basis(6);
        let m = Mesh::unit(1, 64, 6).unwrap();
        let model = EquationModel::advection(1, &[1.0]).unwrap();
        let f = init_multisine(&m, &b, &model, &multisine_amplitudes(40, 3)).unwrap();
        assert!(conserved_totals(&m, &b, &f).unwrap()[0].abs() < 1e-10);
    }

    #[test]
    fn totals_invariant_under_axis_permutation() {
        let b = basis(4);
        let m = Mesh::new(2, &[3, 5], &[1.0, 2.0], 4).unwrap();
        let mt = Mesh::new(2, &[5, 3], &[2.0, 1.0], 4).unwrap();
        let f = m.collocate(&b, 1, |x, u| u[0] = (x[0] * 3.0).exp() + x[1] * x[1]);
        let ft = mt.collocate(&b, 1, |x, u| u[0] = (x[1] * 3.0).exp() + x[0] * x[0]);
        let a = conserved_totals(&m, &b, &f).unwrap()[0];
        let t = conserved_totals(&mt, &b, &ft).unwrap()[0];
        assert!((a - t).abs() < 1e-12 * a.abs());
        let za = l2_error(&m, &b, &f, &m.zeros(1), 0).unwrap();
        let zt = l2_error(&mt, &b, &ft, &mt.zeros(1), 0).unwrap();
        assert!((za - zt).abs() < 1e-12 * za);
    }

    #[test]
    fn dump_round_trip() {
        let dir = std::env::temp_dir().join(format!("ndg-dump-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("field.bin");
        let b = basis(3);
        let m = Mesh::new(2, &[3, 2], &[1.0, 0.5], 3).unwrap();
        let f = m.collocate(&b, 2, |x, u| {
            u[0] = x[0];
            u[1] = x[1] + 0.1;
        });
        write_field_dump(&path, &m, &f).unwrap();
        let (h, g) = read_field_dump(&path).unwrap();
        assert_eq!(h.cells, vec![3, 2]);
        assert_eq!(h.lengths, vec![1.0, 0.5]);
        assert_eq!((h.dim, h.order, h.n_var), (2, 3, 2));
        assert_eq!(f, g);
        fs::remove_dir_all(&dir).ok();
    }
}
