//! Semi-discrete nodal DG operator and explicit Runge-Kutta time stepping.
//!
//! Along every axis `d` and every line of nodes parallel to it, the time
//! derivative at node `k` of a cell gains
//!
//! ```text
//! (2 / (Δx_d w_k)) [ Σ_l F_d(U_l) D[l][k] w_l − F̂_high δ_{k,N-1} + F̂_low δ_{k,0} ]
//! ```
//!
//! where `F̂` are Lax-Friedrichs fluxes on the two faces of the line. Fluxes
//! are computed once per face and applied to both adjacent cells.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::basis::{BasisError, NodalBasis};
use crate::grid::{GridError, Layout, Mesh, StateField};
use crate::halo::{ExchangeError, Face, HaloBuffers, HaloExchange, PeriodicSelf, Side};
use crate::models::{lax_friedrichs, Advection, EquationModel, EulerFixed, ModelError, Physics, MAX_VARS};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("solution became non-finite after step {step}")]
    Instability { step: usize },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Exchange(#[from] ExchangeError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Explicit Runge-Kutta schemes of order 3, 4 and 6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RkScheme {
    Rk3,
    Rk4,
    Rk6,
}

impl RkScheme {
    pub fn stage_count(self) -> usize {
        match self {
            RkScheme::Rk3 => 3,
            RkScheme::Rk4 => 4,
            RkScheme::Rk6 => 7,
        }
    }

    pub fn order(self) -> usize {
        match self {
            RkScheme::Rk3 => 3,
            RkScheme::Rk4 => 4,
            RkScheme::Rk6 => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RkScheme::Rk3 => "rk3",
            RkScheme::Rk4 => "rk4",
            RkScheme::Rk6 => "rk6",
        }
    }

    /// Stage and output weights with `k_i = dt F(U + Σ_j a_ij k_j)` and
    /// `U' = U + Σ_i b_i k_i`.
    pub fn tableau(self) -> Tableau {
        match self {
            // Heun's third-order method: k1 = dt F(U)/3, k2 = 2 dt F(U + k1)/3,
            // U' = U + dt (F(U) + 3 F(U + k2)) / 4.
            RkScheme::Rk3 => Tableau {
                a: vec![vec![], vec![1.0 / 3.0], vec![0.0, 2.0 / 3.0]],
                b: vec![0.25, 0.0, 0.75],
            },
            RkScheme::Rk4 => Tableau {
                a: vec![vec![], vec![0.5], vec![0.0, 0.5], vec![0.0, 0.0, 1.0]],
                b: vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
            },
            // Luther's seven-stage sixth-order method.
            RkScheme::Rk6 => {
                let s = 21.0f64.sqrt();
                Tableau {
                    a: vec![
                        vec![],
                        vec![1.0],
                        vec![3.0 / 8.0, 1.0 / 8.0],
                        vec![8.0 / 27.0, 2.0 / 27.0, 8.0 / 27.0],
                        vec![
                            3.0 * (3.0 * s - 7.0) / 392.0,
                            -8.0 * (7.0 - s) / 392.0,
                            48.0 * (7.0 - s) / 392.0,
                            -3.0 * (21.0 - s) / 392.0,
                        ],
                        vec![
                            -5.0 * (231.0 + 51.0 * s) / 1960.0,
                            -40.0 * (7.0 + s) / 1960.0,
                            -320.0 * s / 1960.0,
                            3.0 * (21.0 + 121.0 * s) / 1960.0,
                            392.0 * (6.0 + s) / 1960.0,
                        ],
                        vec![
                            15.0 * (22.0 + 7.0 * s) / 180.0,
                            120.0 / 180.0,
                            40.0 * (7.0 * s - 5.0) / 180.0,
                            -63.0 * (3.0 * s - 2.0) / 180.0,
                            -14.0 * (49.0 + 9.0 * s) / 180.0,
                            70.0 * (7.0 - s) / 180.0,
                        ],
                    ],
                    b: vec![
                        9.0 / 180.0,
                        0.0,
                        64.0 / 180.0,
                        0.0,
                        49.0 / 180.0,
                        49.0 / 180.0,
                        9.0 / 180.0,
                    ],
                }
            }
        }
    }
}

impl std::str::FromStr for RkScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rk3" | "3" => Ok(RkScheme::Rk3),
            "rk4" | "4" => Ok(RkScheme::Rk4),
            "rk6" | "6" => Ok(RkScheme::Rk6),
            other => Err(format!("unknown Runge-Kutta scheme '{other}' (expected rk3, rk4 or rk6)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tableau {
    /// Strictly lower-triangular stage coefficients, row `i` has `i` entries.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// Runge-Kutta stepper with stage buffers allocated once.
#[derive(Debug, Clone)]
pub struct RkIntegrator {
    scheme: RkScheme,
    tableau: Tableau,
    /// `F(Y_i)` for each stage.
    derivs: Vec<StateField>,
    stage: StateField,
}

impl RkIntegrator {
    pub fn new(scheme: RkScheme, template: &StateField) -> Self {
        let tableau = scheme.tableau();
        let derivs = (0..scheme.stage_count()).map(|_| template.clone()).collect();
        RkIntegrator {
            scheme,
            tableau,
            derivs,
            stage: template.clone(),
        }
    }

    pub fn scheme(&self) -> RkScheme {
        self.scheme
    }

    /// Advances `state` by `dt`. `rhs(stage_index, input, out)` must write the
    /// time derivative of `input` to `out`.
    pub fn step<E>(
        &mut self,
        state: &mut StateField,
        dt: f64,
        mut rhs: impl FnMut(usize, &StateField, &mut StateField) -> Result<(), E>,
    ) -> Result<(), E> {
        let stages = self.scheme.stage_count();
        for i in 0..stages {
            let (done, rest) = self.derivs.split_at_mut(i);
            let out = &mut rest[0];
            if i == 0 {
                rhs(0, state, out)?;
            } else {
                combine(
                    self.stage.as_mut_slice(),
                    state.as_slice(),
                    dt,
                    &self.tableau.a[i],
                    done,
                );
                rhs(i, &self.stage, out)?;
            }
        }
        combine(
            self.stage.as_mut_slice(),
            state.as_slice(),
            dt,
            &self.tableau.b,
            &self.derivs,
        );
        std::mem::swap(state, &mut self.stage);
        Ok(())
    }
}

/// `out = base + dt Σ_j coeffs[j] derivs[j]`, skipping zero coefficients.
fn combine(out: &mut [f64], base: &[f64], dt: f64, coeffs: &[f64], derivs: &[StateField]) {
    let mut terms: [(f64, &[f64]); 8] = [(0.0, &[]); 8];
    let mut n = 0;
    for (c, k) in coeffs.iter().zip(derivs) {
        if *c != 0.0 {
            terms[n] = (dt * c, k.as_slice());
            n += 1;
        }
    }
    let terms = &terms[..n];
    match terms {
        [] => out.copy_from_slice(base),
        [(c0, k0)] => {
            for (i, o) in out.iter_mut().enumerate() {
                *o = base[i] + c0 * k0[i];
            }
        }
        [(c0, k0), (c1, k1)] => {
            for (i, o) in out.iter_mut().enumerate() {
                *o = base[i] + (c0 * k0[i] + c1 * k1[i]);
            }
        }
        _ => {
            for (i, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (c, k) in terms {
                    acc += c * k[i];
                }
                *o = base[i] + acc;
            }
        }
    }
}

/// One Runge-Kutta step with freshly allocated stage buffers.
pub fn rk_step<E>(
    scheme: RkScheme,
    state: &mut StateField,
    dt: f64,
    rhs: impl FnMut(usize, &StateField, &mut StateField) -> Result<(), E>,
) -> Result<(), E> {
    RkIntegrator::new(scheme, state).step(state, dt, rhs)
}

/// Precomputed per-block operator data.
#[derive(Debug, Clone)]
pub struct DgOperator {
    dim: usize,
    order: usize,
    /// Per axis, `volume_scaled[d][k * N + l] = 2 w_l D[l][k] / (w_k Δx_d)`.
    volume_scaled: [Vec<f64>; 3],
    lift_low: f64,
    lift_high: f64,
    inv_dx: [f64; 3],
    origin: [usize; 3],
    layout: Layout,
    /// Per axis: offsets inside a cell of the nodes with index 0 along that axis.
    line_bases: [Vec<usize>; 3],
}

impl DgOperator {
    /// Operator for a block with shape `layout`, whose first cell sits at
    /// global index `origin` of `mesh`.
    pub fn new(mesh: &Mesh, basis: &NodalBasis, layout: Layout, origin: [usize; 3]) -> Self {
        let n = basis.order();
        let w = basis.weights();
        let mut volume = vec![0.0; n * n];
        for k in 0..n {
            for l in 0..n {
                volume[k * n + l] = 2.0 * w[l] * basis.diff(l, k) / w[k];
            }
        }
        let mut inv_dx = [0.0; 3];
        for (d, v) in inv_dx.iter_mut().enumerate().take(mesh.dim()) {
            *v = 1.0 / mesh.cell_size(d);
        }
        let volume_scaled = inv_dx.map(|s| volume.iter().map(|m| m * s).collect());
        let mut line_bases: [Vec<usize>; 3] = Default::default();
        let range = |d: usize, a: usize, extent: usize| if a == d { 0..1 } else { 0..extent };
        for d in 0..mesh.dim() {
            for i in range(d, 0, layout.nodes[0]) {
                for j in range(d, 1, layout.nodes[1]) {
                    for k in range(d, 2, layout.nodes[2]) {
                        line_bases[d].push(layout.offset([0; 3], [i, j, k]));
                    }
                }
            }
        }
        DgOperator {
            dim: mesh.dim(),
            order: n,
            volume_scaled,
            lift_low: 2.0 / w[0],
            lift_high: 2.0 / w[n - 1],
            inv_dx,
            origin,
            layout,
            line_bases,
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    fn global_cell(&self, local: [usize; 3]) -> [usize; 3] {
        [
            local[0] + self.origin[0],
            local[1] + self.origin[1],
            local[2] + self.origin[2],
        ]
    }

    /// Writes `dU/dt` of `field` to `out`, using `halos` for the exterior
    /// traces on block faces.
    pub fn rhs(
        &self,
        model: &EquationModel,
        field: &StateField,
        halos: &HaloBuffers,
        out: &mut StateField,
    ) -> Result<(), SolverError> {
        match *model {
            EquationModel::Advection { velocity, .. } => self.rhs_kernel(Advection { velocity }, field, halos, out),
            EquationModel::IsothermalEuler { sound_speed, dim } => match dim {
                1 => self.rhs_kernel(EulerFixed::<1> { sound_speed }, field, halos, out),
                2 => self.rhs_kernel(EulerFixed::<2> { sound_speed }, field, halos, out),
                _ => self.rhs_kernel(EulerFixed::<3> { sound_speed }, field, halos, out),
            },
        }
    }

    fn rhs_kernel<P: Physics>(
        &self,
        model: P,
        field: &StateField,
        halos: &HaloBuffers,
        out: &mut StateField,
    ) -> Result<(), SolverError> {
        let layout = &self.layout;
        debug_assert_eq!(field.layout(), *layout);
        let dim = self.dim;
        let n = self.order;
        let nv = model.n_var();
        let u = field.as_slice();
        let du = out.as_mut_slice();
        let cell_len = layout.cell_len;
        // Fluxes of one cell, `[axis][node][var]`.
        let mut fbuf = vec![0.0; dim * cell_len];
        let mut node_flux = [0.0; 3 * MAX_VARS];

        // Volume terms, cell by cell, axes in increasing order.
        for (c, (uc, dc)) in u.chunks_exact(cell_len).zip(du.chunks_exact_mut(cell_len)).enumerate() {
            for (i, node) in uc.chunks_exact(nv).enumerate() {
                model
                    .fluxes(node, dim, &mut node_flux)
                    .map_err(|e| e.at_cell(self.global_cell(self.cell_index(c))))?;
                for d in 0..dim {
                    fbuf[d * cell_len + i * nv..d * cell_len + (i + 1) * nv]
                        .copy_from_slice(&node_flux[d * nv..(d + 1) * nv]);
                }
            }
            dc.fill(0.0);
            // Along axis d the cell splits into blocks of n slabs of
            // `stride` contiguous values; the derivative mixes slabs.
            for d in 0..dim {
                let stride = layout.node_stride[d];
                let fd = &fbuf[d * cell_len..(d + 1) * cell_len];
                let matrix = &self.volume_scaled[d];
                if stride >= 4 {
                    for (fo, o) in fd.chunks_exact(n * stride).zip(dc.chunks_exact_mut(n * stride)) {
                        for (row, out) in matrix.chunks_exact(n).zip(o.chunks_exact_mut(stride)) {
                            for (l, &m) in row.iter().enumerate() {
                                let src = &fo[l * stride..(l + 1) * stride];
                                let out = &mut out[..stride];
                                for i in 0..stride {
                                    out[i] += m * src[i];
                                }
                            }
                        }
                    }
                } else {
                    // Short slabs: one dot product per output value.
                    for (fo, o) in fd.chunks_exact(n * stride).zip(dc.chunks_exact_mut(n * stride)) {
                        for (row, out) in matrix.chunks_exact(n).zip(o.chunks_exact_mut(stride)) {
                            for (r, x) in out.iter_mut().enumerate() {
                                let mut acc = 0.0;
                                for (l, &m) in row.iter().enumerate() {
                                    acc += m * fo[l * stride + r];
                                }
                                *x += acc;
                            }
                        }
                    }
                }
            }
        }

        // Face fluxes, one evaluation per face shared by both neighbors. Each
        // cell handles its high face, and its low face when it is first
        // along the axis.
        let mut flux = [0.0; MAX_VARS];
        let cells = layout.cells;
        let last = |d: usize| (n - 1) * layout.node_stride[d];
        for d in 0..dim {
            let scale = self.inv_dx[d];
            let lift_high = scale * self.lift_high;
            let lift_low = scale * self.lift_low;
            let low = halos.face(Face::new(d, Side::Low));
            let high = halos.face(Face::new(d, Side::High));
            let face_nodes = self.line_bases[d].len();
            let cstride = layout.cell_stride[d];
            let top = last(d);
            for cx in 0..cells[0] {
                for cy in 0..cells[1] {
                    for cz in 0..cells[2] {
                        let cell = [cx, cy, cz];
                        let coff = layout.cell_offset(cell);
                        let pencil = match d {
                            0 => cy * cells[2] + cz,
                            1 => cx * cells[2] + cz,
                            _ => cx * cells[1] + cy,
                        };
                        let first = cell[d] == 0;
                        let is_last = cell[d] + 1 == cells[d];
                        for (fnode, &lb) in self.line_bases[d].iter().enumerate() {
                            let halo_at = (pencil * face_nodes + fnode) * nv;
                            if first {
                                let at = coff + lb;
                                lax_friedrichs(&model, &low[halo_at..halo_at + nv], &u[at..at + nv], d, &mut flux)
                                    .map_err(|e| e.at_cell(self.global_cell(cell)))?;
                                for v in 0..nv {
                                    du[at + v] += lift_low * flux[v];
                                }
                            }
                            let at = coff + lb + top;
                            let plus = if is_last {
                                &high[halo_at..halo_at + nv]
                            } else {
                                let next = coff + cstride + lb;
                                &u[next..next + nv]
                            };
                            lax_friedrichs(&model, &u[at..at + nv], plus, d, &mut flux)
                                .map_err(|e| e.at_cell(self.global_cell(cell)))?;
                            for v in 0..nv {
                                du[at + v] -= lift_high * flux[v];
                            }
                            if !is_last {
                                let next = coff + cstride + lb;
                                for v in 0..nv {
                                    du[next + v] += lift_low * flux[v];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn cell_index(&self, c: usize) -> [usize; 3] {
        let cells = self.layout.cells;
        [c / (cells[1] * cells[2]), (c / cells[2]) % cells[1], c % cells[2]]
    }

    /// Largest wavespeed over all nodes and axes of this block.
    pub fn local_max_wavespeed(&self, model: &EquationModel, field: &StateField) -> Result<f64, SolverError> {
        let nv = field.n_var();
        let cell_len = self.layout.cell_len;
        let mut alpha = 0.0f64;
        for (c, chunk) in field.as_slice().chunks_exact(cell_len).enumerate() {
            for node in chunk.chunks_exact(nv) {
                for d in 0..self.dim {
                    let a = model
                        .wavespeed(node, d)
                        .map_err(|e| e.at_cell(self.global_cell(self.cell_index(c))))?;
                    alpha = alpha.max(a);
                }
            }
        }
        Ok(alpha)
    }
}

/// `dt = cfl · min_d Δx_d / (α (2N − 1))`; infinite when `α = 0`.
pub fn stable_dt(mesh: &Mesh, alpha: f64, cfl: f64) -> f64 {
    if alpha > 0.0 {
        cfl * mesh.min_cell_size() / (alpha * (2 * mesh.order() - 1) as f64)
    } else {
        f64::INFINITY
    }
}

/// CFL time step for a whole-mesh field.
pub fn compute_dt(mesh: &Mesh, model: &EquationModel, field: &StateField, cfl: f64) -> Result<f64, SolverError> {
    let basis = NodalBasis::new(mesh.order())?;
    let op = DgOperator::new(mesh, &basis, field.layout(), [0; 3]);
    let alpha = op.local_max_wavespeed(model, field)?;
    Ok(stable_dt(mesh, alpha, cfl))
}

/// Time derivative of a whole-mesh field with periodic boundaries.
pub fn rhs(mesh: &Mesh, basis: &NodalBasis, model: &EquationModel, field: &StateField) -> Result<StateField, SolverError> {
    let op = DgOperator::new(mesh, basis, field.layout(), [0; 3]);
    let mut halos = HaloBuffers::new(mesh.dim(), &field.layout());
    PeriodicSelf.exchange(field, 0, &mut halos)?;
    let mut out = field.clone();
    op.rhs(model, field, &halos, &mut out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub mesh: Mesh,
    pub model: EquationModel,
    pub scheme: RkScheme,
    pub cfl: f64,
    pub end_time: f64,
}

pub const DEFAULT_CFL: f64 = 0.4;

impl SolverConfig {
    pub fn new(mesh: Mesh, model: EquationModel, scheme: RkScheme) -> Self {
        SolverConfig {
            mesh,
            model,
            scheme,
            cfl: DEFAULT_CFL,
            end_time: 1.0,
        }
    }

    pub fn with_cfl(mut self, cfl: f64) -> Self {
        self.cfl = cfl;
        self
    }

    pub fn with_end_time(mut self, end_time: f64) -> Self {
        self.end_time = end_time;
        self
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(SolverError::InvalidConfig(format!("cfl {} not in (0, 1]", self.cfl)));
        }
        if !(self.end_time > 0.0 && self.end_time.is_finite()) {
            return Err(SolverError::InvalidConfig(format!("end time {} must be positive", self.end_time)));
        }
        if self.model.spatial_dim() != self.mesh.dim() {
            return Err(SolverError::InvalidConfig(format!(
                "{}D model on a {}D mesh",
                self.model.spatial_dim(),
                self.mesh.dim()
            )));
        }
        Ok(())
    }

    pub fn n_var(&self) -> usize {
        self.model.n_var()
    }

    pub fn dof(&self) -> usize {
        self.mesh.dof(self.n_var())
    }
}

/// Statistics of one time-stepping run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepStats {
    pub steps: usize,
    pub dt_min: f64,
    pub dt_max: f64,
    pub final_time: f64,
    /// Seconds spent in the stepping loop.
    pub wall_time: f64,
    /// Seconds of `wall_time` spent waiting for halo exchanges and reductions.
    pub exchange_time: f64,
}

impl StepStats {
    fn record(&mut self, dt: f64) {
        if self.steps == 0 {
            self.dt_min = dt;
            self.dt_max = dt;
        } else {
            self.dt_min = self.dt_min.min(dt);
            self.dt_max = self.dt_max.max(dt);
        }
        self.steps += 1;
        self.final_time += dt;
    }
}

/// Drives one block (or the whole mesh) through time.
pub struct Stepper<'h> {
    mesh: Mesh,
    model: EquationModel,
    op: DgOperator,
    integrator: RkIntegrator,
    halos: HaloBuffers,
    exchange: &'h mut dyn HaloExchange,
    stage_counter: u32,
    exchange_time: Duration,
}

impl<'h> Stepper<'h> {
    /// `template` has the block's shape; `origin` is its first global cell.
    pub fn new(
        config: &SolverConfig,
        template: &StateField,
        origin: [usize; 3],
        exchange: &'h mut dyn HaloExchange,
    ) -> Result<Self, SolverError> {
        config.validate()?;
        let mesh = &config.mesh;
        if template.dim() != mesh.dim() || template.order() != mesh.order() || template.n_var() != config.n_var() {
            return Err(SolverError::InvalidConfig(format!(
                "field shape {:?} does not fit the configured mesh and model",
                template.shape()
            )));
        }
        let basis = NodalBasis::new(mesh.order())?;
        let layout = template.layout();
        Ok(Stepper {
            mesh: mesh.clone(),
            model: config.model,
            op: DgOperator::new(mesh, &basis, layout, origin),
            integrator: RkIntegrator::new(config.scheme, template),
            halos: HaloBuffers::new(mesh.dim(), &layout),
            exchange,
            stage_counter: 0,
            exchange_time: Duration::ZERO,
        })
    }

    /// Global CFL step; involves a max-reduction across blocks.
    pub fn compute_dt(&mut self, state: &StateField, cfl: f64) -> Result<f64, SolverError> {
        let local = self.op.local_max_wavespeed(&self.model, state)?;
        let t0 = Instant::now();
        let alpha = self.exchange.reduce_max(local)?;
        self.exchange_time += t0.elapsed();
        Ok(stable_dt(&self.mesh, alpha, cfl))
    }

    pub fn step(&mut self, state: &mut StateField, dt: f64) -> Result<(), SolverError> {
        let Stepper {
            model,
            op,
            integrator,
            halos,
            exchange,
            stage_counter,
            exchange_time,
            ..
        } = self;
        integrator.step(state, dt, |_, input, out| {
            let t0 = Instant::now();
            exchange.exchange(input, *stage_counter, halos)?;
            *exchange_time += t0.elapsed();
            *stage_counter = stage_counter.wrapping_add(1);
            op.rhs(model, input, halos, out)
        })
    }

    pub fn exchange_time(&self) -> Duration {
        self.exchange_time
    }

    fn reset_exchange_time(&mut self) {
        self.exchange_time = Duration::ZERO;
    }
}

/// Integrates to `config.end_time`, shortening the last step to land on it.
pub fn advance_block(
    config: &SolverConfig,
    initial: StateField,
    origin: [usize; 3],
    exchange: &mut dyn HaloExchange,
) -> Result<(StateField, StepStats), SolverError> {
    let mut state = initial;
    let mut stepper = Stepper::new(config, &state, origin, exchange)?;
    let end = config.end_time;
    let mut stats = StepStats::default();
    let start = Instant::now();
    let mut t = 0.0;
    while t < end {
        let mut dt = stepper.compute_dt(&state, config.cfl)?;
        let remaining = end - t;
        let last = dt >= remaining || remaining - dt <= 1e-12 * end;
        if last {
            dt = remaining;
        }
        stepper.step(&mut state, dt)?;
        stats.record(dt);
        if !state.is_finite() {
            return Err(SolverError::Instability { step: stats.steps });
        }
        t = if last { end } else { t + dt };
    }
    stats.final_time = t;
    stats.wall_time = start.elapsed().as_secs_f64();
    stats.exchange_time = stepper.exchange_time().as_secs_f64();
    Ok((state, stats))
}

/// Serial integration of a whole-mesh field to `config.end_time`.
pub fn advance(config: &SolverConfig, initial: StateField) -> Result<(StateField, StepStats), SolverError> {
    advance_block(config, initial, [0; 3], &mut PeriodicSelf)
}

/// Takes `warmup` untimed steps and then `steps` timed steps, each with the
/// CFL step size and no landing on an end time.
pub fn run_steps_block(
    config: &SolverConfig,
    initial: StateField,
    origin: [usize; 3],
    exchange: &mut dyn HaloExchange,
    steps: usize,
    warmup: usize,
) -> Result<(StateField, StepStats), SolverError> {
    let mut state = initial;
    let mut stepper = Stepper::new(config, &state, origin, exchange)?;
    let fallback = stable_dt(&config.mesh, 1.0, config.cfl);
    let one_step = |stepper: &mut Stepper, state: &mut StateField| -> Result<f64, SolverError> {
        let mut dt = stepper.compute_dt(state, config.cfl)?;
        if !dt.is_finite() {
            dt = fallback;
        }
        stepper.step(state, dt)?;
        Ok(dt)
    };
    for i in 0..warmup {
        one_step(&mut stepper, &mut state)?;
        if !state.is_finite() {
            return Err(SolverError::Instability { step: i + 1 });
        }
    }
    stepper.reset_exchange_time();
    let mut stats = StepStats::default();
    let start = Instant::now();
    for _ in 0..steps {
        let dt = one_step(&mut stepper, &mut state)?;
        stats.record(dt);
        if !state.is_finite() {
            return Err(SolverError::Instability {
                step: warmup + stats.steps,
            });
        }
    }
    stats.wall_time = start.elapsed().as_secs_f64();
    stats.exchange_time = stepper.exchange_time().as_secs_f64();
    Ok((state, stats))
}

/// Serial fixed-step run.
pub fn run_steps(
    config: &SolverConfig,
    initial: StateField,
    steps: usize,
    warmup: usize,
) -> Result<(StateField, StepStats), SolverError> {
    run_steps_block(config, initial, [0; 3], &mut PeriodicSelf, steps, warmup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{self, init_euler_subsonic, init_multisine, multisine_amplitudes};
    use std::f64::consts::PI;

    /// One step with `rhs = shift` on a coefficient vector yields the
    /// stability polynomial `R(z) = Σ c_m z^m` of the scheme.
    fn stability_coefficients(scheme: RkScheme) -> Vec<f64> {
        let mut state = StateField::zeros(1, [5, 1, 1], 2, 1);
        state.as_mut_slice()[0] = 1.0;
        rk_step(scheme, &mut state, 1.0, |_, input, out| {
            let (i, o) = (input.as_slice(), out.as_mut_slice());
            o[0] = 0.0;
            for m in 1..o.len() {
                o[m] = i[m - 1];
            }
            Ok::<(), ()>(())
        })
        .unwrap();
        state.into_vec()
    }

    #[test]
    fn stability_polynomials_match_exponential() {
        for scheme in [RkScheme::Rk3, RkScheme::Rk4, RkScheme::Rk6] {
            let c = stability_coefficients(scheme);
            let mut fact = 1.0;
            for (m, cm) in c.iter().enumerate().take(scheme.order() + 1) {
                if m > 0 {
                    fact *= m as f64;
                }
                assert!((cm - 1.0 / fact).abs() <= 1e-13, "{scheme:?} m={m}: {cm}");
            }
            // The scheme is not of higher order on the linear test problem.
            let next = scheme.order() + 1;
            if next < c.len() && next <= scheme.stage_count() {
                fact *= next as f64;
                assert!((c[next] - 1.0 / fact).abs() > 1e-6, "{scheme:?}");
            }
        }
    }

    fn scalar_step(scheme: RkScheme, u0: f64, dt: f64, f: impl Fn(f64) -> f64) -> f64 {
        let mut state = StateField::zeros(1, [1, 1, 1], 2, 1);
        state.as_mut_slice()[0] = u0;
        rk_step(scheme, &mut state, dt, |_, i, o| {
            o.as_mut_slice()[0] = f(i.as_slice()[0]);
            o.as_mut_slice()[1] = 0.0;
            Ok::<(), ()>(())
        })
        .unwrap();
        state.as_slice()[0]
    }

    #[test]
    fn rk4_exponential_growth_step() {
        let u = scalar_step(RkScheme::Rk4, 1.0, 0.1, |u| u);
        let taylor = 1.0 + 0.1 + 0.01 / 2.0 + 0.001 / 6.0 + 0.0001 / 24.0;
        assert!((u - taylor).abs() < 1e-15);
        assert!((u - 1.105_170_833_333_333).abs() < 1e-14);
    }

    #[test]
    fn rk6_exponential_growth_step() {
        let u = scalar_step(RkScheme::Rk6, 1.0, 0.1, |u| u);
        // Seven stages give a degree-7 polynomial whose z^7 coefficient is the
        // product of b_7 and the subdiagonal; it differs from 1/7!, so the
        // one-step error is dominated by that term rather than by 0.1^7 / 7!.
        let t = RkScheme::Rk6.tableau();
        let c7 = t.b[6] * (1..7).map(|i| t.a[i][i - 1]).product::<f64>();
        let taylor6: f64 = (0..=6).map(|m| 0.1f64.powi(m) / (1..=m).map(f64::from).product::<f64>()).sum();
        let predicted = taylor6 + c7 * 0.1f64.powi(7);
        assert!((u - predicted).abs() < 1e-15);
        assert!((u - 0.1f64.exp()).abs() < 7e-11);
    }

    /// Nonlinear order check: u' = u² from u(0) = 1 has u(t) = 1 / (1 - t).
    #[test]
    fn nonlinear_convergence_orders() {
        for scheme in [RkScheme::Rk3, RkScheme::Rk4, RkScheme::Rk6] {
            let err = |steps: usize| {
                let dt = 0.5 / steps as f64;
                let mut u = 1.0;
                for _ in 0..steps {
                    u = scalar_step(scheme, u, dt, |u| u * u);
                }
                (u - 2.0).abs()
            };
            let (coarse, fine) = (err(20), err(40));
            let rate = (coarse / fine).log2();
            assert!((rate - scheme.order() as f64).abs() < 0.3, "{scheme:?} rate {rate}");
        }
    }

    #[test]
    fn zero_rhs_leaves_state_bitwise() {
        let mesh = Mesh::unit(2, 3, 4).unwrap();
        let basis = NodalBasis::new(4).unwrap();
        let mut f = mesh.collocate(&basis, 2, |x, u| {
            u[0] = x[0].sin() + 1e-300;
            u[1] = x[1] * 1e20;
        });
        let before = f.clone();
        for scheme in [RkScheme::Rk3, RkScheme::Rk4, RkScheme::Rk6] {
            rk_step(scheme, &mut f, 0.37, |_, _, o| {
                o.as_mut_slice().fill(0.0);
                Ok::<(), ()>(())
            })
            .unwrap();
        }
        assert!(f.as_slice().iter().zip(before.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn constant_state_has_zero_derivative() {
        for (dim, model, state) in [
            (1, EquationModel::advection(1, &[1.0]).unwrap(), vec![3.0]),
            (2, EquationModel::advection(2, &[1.0, -0.5]).unwrap(), vec![3.0]),
            (3, EquationModel::advection(3, &[0.3, 1.0, -2.0]).unwrap(), vec![-1.0]),
            (2, EquationModel::isothermal_euler(2, 1.0).unwrap(), vec![1.3, 0.4, -0.2]),
            (3, EquationModel::isothermal_euler(3, 2.0).unwrap(), vec![0.7, 0.1, 0.2, 0.3]),
        ] {
            let mesh = Mesh::new(dim, &[3, 4, 2], &[1.0, 2.0, 0.5], 4).unwrap();
            let basis = NodalBasis::new(4).unwrap();
            let f = mesh.collocate(&basis, state.len(), |_, u| u.copy_from_slice(&state));
            let d = rhs(&mesh, &basis, &model, &f).unwrap();
            let worst = d.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(worst < 1e-13, "dim {dim}: {worst}");
        }
    }

    #[test]
    fn advection_rhs_approximates_derivative() {
        let mut prev = f64::INFINITY;
        for order in [4, 6, 8] {
            let mesh = Mesh::unit(1, 16, order).unwrap();
            let basis = NodalBasis::new(order).unwrap();
            let model = EquationModel::advection(1, &[1.0]).unwrap();
            let f = init_multisine(&mesh, &basis, &model, &[1.0]).unwrap();
            let d = rhs(&mesh, &basis, &model, &f).unwrap();
            let exact = mesh.collocate(&basis, 1, |x, u| u[0] = -2.0 * PI * (2.0 * PI * x[0]).cos());
            let err = d.max_abs_diff(&exact);
            assert!(err < prev, "order {order}: {err}");
            prev = err;
        }
        assert!(prev < 1e-4, "order 8: {prev}");
    }

    #[test]
    fn rhs_telescopes_to_zero_total() {
        let basis = NodalBasis::new(5).unwrap();
        let mesh = Mesh::new(2, &[6, 5], &[1.0, 1.0], 5).unwrap();
        let model = EquationModel::isothermal_euler(2, 1.0).unwrap();
        let f = init_euler_subsonic(&mesh, &basis, &model).unwrap();
        let d = rhs(&mesh, &basis, &model, &f).unwrap();
        for t in grid::conserved_totals(&mesh, &basis, &d).unwrap() {
            assert!(t.abs() < 1e-13, "{t}");
        }
        let model = EquationModel::advection(2, &[0.7, -1.3]).unwrap();
        let f = mesh.collocate(&basis, 1, |x, u| u[0] = (5.0 * x[0]).exp() * (3.0 * x[1]).cos());
        let d = rhs(&mesh, &basis, &model, &f).unwrap();
        assert!(grid::conserved_totals(&mesh, &basis, &d).unwrap()[0].abs() < 1e-12);
    }

    #[test]
    fn nonpositive_density_names_the_cell() {
        let basis = NodalBasis::new(3).unwrap();
        let mesh = Mesh::unit(2, 4, 3).unwrap();
        let model = EquationModel::isothermal_euler(2, 1.0).unwrap();
        let mut f = mesh.collocate(&basis, 3, |_, u| u.copy_from_slice(&[1.0, 0.0, 0.0]));
        f.set([2, 1, 0], [1, 1, 0], 0, -0.5);
        let err = rhs(&mesh, &basis, &model, &f).unwrap_err();
        match err {
            SolverError::Model(ModelError::NonPositiveDensity { cell, .. }) => assert_eq!(cell, Some([2, 1, 0])),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn dt_formula() {
        let mesh = Mesh::unit(2, 100, 8).unwrap();
        let model = EquationModel::advection(2, &[1.0, 0.0]).unwrap();
        let f = mesh.zeros(1);
        let dt = compute_dt(&mesh, &model, &f, 0.4).unwrap();
        assert!((dt - 0.4 / (100.0 * 15.0)).abs() < 1e-18);
        let fine = Mesh::unit(2, 200, 8).unwrap();
        let dt2 = compute_dt(&fine, &model, &fine.zeros(1), 0.4).unwrap();
        assert!((dt / dt2 - 2.0).abs() < 1e-12);

        let mesh = Mesh::unit(2, 10, 4).unwrap();
        let euler = EquationModel::isothermal_euler(2, 1.0).unwrap();
        let basis = NodalBasis::new(4).unwrap();
        let rest = mesh.collocate(&basis, 3, |_, u| u.copy_from_slice(&[1.0, 0.0, 0.0]));
        let dt = compute_dt(&mesh, &euler, &rest, 0.7).unwrap();
        assert!((dt - 0.7 * 0.1 / 7.0).abs() < 1e-16);

        let still = EquationModel::advection(1, &[0.0]).unwrap();
        let m1 = Mesh::unit(1, 4, 3).unwrap();
        assert!(compute_dt(&m1, &still, &m1.zeros(1), 0.4).unwrap().is_infinite());
    }

    #[test]
    fn short_end_time_takes_one_step() {
        let mesh = Mesh::unit(1, 8, 4).unwrap();
        let basis = NodalBasis::new(4).unwrap();
        let model = EquationModel::advection(1, &[1.0]).unwrap();
        let f = init_multisine(&mesh, &basis, &model, &[1.0]).unwrap();
        let cfg = SolverConfig::new(mesh, model, RkScheme::Rk4).with_end_time(1e-4);
        let (_, stats) = advance(&cfg, f).unwrap();
        assert_eq!(stats.steps, 1);
        assert_eq!(stats.final_time, 1e-4);
        assert_eq!(stats.dt_max, 1e-4);
    }

    #[test]
    fn stationary_advection_lands_in_one_step() {
        let mesh = Mesh::unit(1, 8, 4).unwrap();
        let basis = NodalBasis::new(4).unwrap();
        let model = EquationModel::advection(1, &[0.0]).unwrap();
        let f = init_multisine(&mesh, &basis, &model, &[1.0]).unwrap();
        let cfg = SolverConfig::new(mesh, model, RkScheme::Rk3);
        let (g, stats) = advance(&cfg, f.clone()).unwrap();
        assert_eq!(stats.steps, 1);
        assert_eq!(f, g);
    }

    #[test]
    fn invalid_configs() {
        let mesh = Mesh::unit(1, 8, 4).unwrap();
        let model = EquationModel::advection(1, &[1.0]).unwrap();
        let f = mesh.zeros(1);
        let bad = SolverConfig::new(mesh.clone(), model, RkScheme::Rk4).with_cfl(1.5);
        assert!(matches!(advance(&bad, f.clone()), Err(SolverError::InvalidConfig(_))));
        let bad = SolverConfig::new(mesh.clone(), model, RkScheme::Rk4).with_end_time(0.0);
        assert!(matches!(advance(&bad, f.clone()), Err(SolverError::InvalidConfig(_))));
        let euler = EquationModel::isothermal_euler(2, 1.0).unwrap();
        let bad = SolverConfig::new(mesh, euler, RkScheme::Rk4);
        assert!(advance(&bad, f).is_err());
    }

    #[test]
    fn unstable_cfl_is_reported() {
        let mesh = Mesh::unit(1, 16, 6).unwrap();
        let basis = NodalBasis::new(6).unwrap();
        let model = EquationModel::advection(1, &[1.0]).unwrap();
        let f = init_multisine(&mesh, &basis, &model, &multisine_amplitudes(4, 1)).unwrap();
        // 20x the CFL step
        let cfg = SolverConfig::new(mesh, model, RkScheme::Rk3);
        let mut state = f;
        let mut ex = PeriodicSelf;
        let mut stepper = Stepper::new(&cfg, &state, [0; 3], &mut ex).unwrap();
        let mut blew_up = false;
        for _ in 0..2000 {
            stepper.step(&mut state, 0.05).unwrap();
            if !state.is_finite() {
                blew_up = true;
                break;
            }
        }
        assert!(blew_up);
    }

    #[test]
    fn advection_is_linear_in_data() {
        let mesh = Mesh::unit(2, 4, 4).unwrap();
        let basis = NodalBasis::new(4).unwrap();
        let model = EquationModel::advection(2, &[1.0, 0.5]).unwrap();
        let a = mesh.collocate(&basis, 1, |x, u| u[0] = (2.0 * PI * x[0]).sin());
        let b = mesh.collocate(&basis, 1, |x, u| u[0] = (2.0 * PI * (x[0] + 2.0 * x[1])).cos());
        let mut sum = a.clone();
        for (s, v) in sum.as_mut_slice().iter_mut().zip(b.as_slice()) {
            *s = 2.0 * *s + 3.0 * v;
        }
        let cfg = SolverConfig::new(mesh, model, RkScheme::Rk4).with_end_time(0.2);
        let (ra, _) = advance(&cfg, a).unwrap();
        let (rb, _) = advance(&cfg, b).unwrap();
        let (rs, _) = advance(&cfg, sum).unwrap();
        let worst = rs
            .as_slice()
            .iter()
            .zip(ra.as_slice().iter().zip(rb.as_slice()))
            .fold(0.0f64, |m, (s, (x, y))| m.max((s - 2.0 * x - 3.0 * y).abs()));
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn serial_runs_are_deterministic() {
        let mesh = Mesh::unit(2, 6, 4).unwrap();
        let basis = NodalBasis::new(4).unwrap();
        let model = EquationModel::isothermal_euler(2, 1.0).unwrap();
        let f = init_euler_subsonic(&mesh, &basis, &model).unwrap();
        let cfg = SolverConfig::new(mesh, model, RkScheme::Rk6).with_end_time(0.05);
        let (a, sa) = advance(&cfg, f.clone()).unwrap();
        let (b, sb) = advance(&cfg, f).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa.steps, sb.steps);
    }

    #[test]
    fn fixed_step_run_counts() {
        let mesh = Mesh::unit(2, 4, 3).unwrap();
        let basis = NodalBasis::new(3).unwrap();
        let model = EquationModel::advection(2, &[1.0, 0.0]).unwrap();
        let f = init_multisine(&mesh, &basis, &model, &[1.0]).unwrap();
        let cfg = SolverConfig::new(mesh, model, RkScheme::Rk4);
        let (_, stats) = run_steps(&cfg, f, 10, 1).unwrap();
        assert_eq!(stats.steps, 10);
        assert!((stats.dt_min - 0.4 * 0.25 / 5.0).abs() < 1e-15);
    }
}
