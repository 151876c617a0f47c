//! Block decomposition of the cell grid and block-parallel time stepping.
//!
//! Each worker owns one rectangular (2D) or cuboid (3D) block and exchanges
//! face traces with its periodic neighbors once per RK stage. The shared
//! Lax-Friedrichs flux is then computed on both sides of a block face from
//! identical `(U⁻, U⁺)` pairs, so no flux exchange is needed.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use thiserror::Error;

use crate::grid::{Mesh, StateField};
use crate::halo::{extract_trace, face_len, ExchangeError, Face, HaloBuffers, HaloExchange, Side};
use crate::solver::{advance_block, run_steps_block, SolverConfig, SolverError, StepStats};
use crate::transport::{ChannelTransport, Message, TcpTransport, Transport, TransportError, REDUCE_FACE};

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("cannot decompose {cells:?} cells over {workers} workers: {reason}")]
    Infeasible {
        cells: Vec<usize>,
        workers: usize,
        reason: String,
    },
    #[error("worker {rank} failed: {source}")]
    Worker {
        rank: usize,
        #[source]
        source: SolverError,
    },
    #[error("worker {rank} panicked")]
    WorkerPanic { rank: usize },
    #[error("field shape {0:?} does not match the mesh")]
    Shape(Vec<usize>),
    #[error("transport setup: {0}")]
    Transport(#[from] TransportError),
}

/// One worker's block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub rank: usize,
    /// Block coordinates in the block grid.
    pub coords: [usize; 3],
    /// First owned global cell per axis.
    pub start: [usize; 3],
    /// Owned cell count per axis.
    pub cells: [usize; 3],
    /// Neighbor ranks per axis, `[low, high]`, with periodic wrap.
    pub neighbors: [[usize; 2]; 3],
}

impl Block {
    pub fn neighbor(&self, face: Face) -> usize {
        self.neighbors[face.axis][face.side.index()]
    }

    pub fn cell_count(&self) -> usize {
        self.cells.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockDecomposition {
    pub dim: usize,
    pub global_cells: [usize; 3],
    /// Block counts per axis, `(P_x, P_y, P_z)`.
    pub grid: [usize; 3],
    pub blocks: Vec<Block>,
}

impl BlockDecomposition {
    pub fn worker_count(&self) -> usize {
        self.blocks.len()
    }

    /// Halo payload bytes sent per RK stage by worker `rank`, counting only
    /// faces whose neighbor is another worker.
    pub fn exchange_bytes_per_stage(&self, rank: usize, order: usize, n_var: usize) -> usize {
        let block = &self.blocks[rank];
        let layout = crate::grid::Layout::new(self.dim, block.cells, order, n_var);
        HaloBuffers::faces(self.dim)
            .filter(|&f| block.neighbor(f) != rank)
            .map(|f| face_len(&layout, f.axis) * 8)
            .sum()
    }
}

/// Splits `n` into `parts` contiguous ranges whose lengths differ by at most 1.
fn split_axis(n: usize, parts: usize) -> Vec<(usize, usize)> {
    let base = n / parts;
    let extra = n % parts;
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = (start, len);
            start += len;
            r
        })
        .collect()
}

/// Sum of block surface areas (in face cells) for a candidate block grid.
fn surface_area(dim: usize, cells: [usize; 3], grid: [usize; 3]) -> usize {
    let splits: Vec<Vec<(usize, usize)>> = (0..3).map(|d| split_axis(cells[d], grid[d])).collect();
    let mut total = 0;
    for x in &splits[0] {
        for y in &splits[1] {
            for z in &splits[2] {
                let b = [x.1, y.1, z.1];
                for d in 0..dim {
                    total += 2 * (0..dim).filter(|&a| a != d).map(|a| b[a]).product::<usize>();
                }
            }
        }
    }
    total
}

/// Chooses the block grid with the smallest total block surface among all
/// factorizations of `workers` that leave at least one cell per block and
/// axis. Ties go to the lexicographically smallest `(P_x, P_y, P_z)`.
pub fn decompose(mesh: &Mesh, workers: usize) -> Result<BlockDecomposition, PartitionError> {
    let dim = mesh.dim();
    let cells = mesh.cells();
    let infeasible = |reason: String| PartitionError::Infeasible {
        cells: cells[..dim].to_vec(),
        workers,
        reason,
    };
    if workers == 0 {
        return Err(infeasible("worker count must be at least 1".into()));
    }
    let mut best: Option<([usize; 3], usize)> = None;
    let limit = |d: usize| if d < dim { cells[d].min(workers) } else { 1 };
    for px in 1..=limit(0) {
        if workers % px != 0 {
            continue;
        }
        for py in 1..=limit(1) {
            if (workers / px) % py != 0 {
                continue;
            }
            let pz = workers / px / py;
            if pz > limit(2) {
                continue;
            }
            let grid = [px, py, pz];
            let area = surface_area(dim, cells, grid);
            if best.map_or(true, |(_, a)| area < a) {
                best = Some((grid, area));
            }
        }
    }
    let Some((grid, _)) = best else {
        return Err(infeasible(format!(
            "no factorization of {workers} leaves every block at least one cell per axis"
        )));
    };

    let splits: Vec<Vec<(usize, usize)>> = (0..3).map(|d| split_axis(cells[d], grid[d])).collect();
    let rank_of = |c: [usize; 3]| (c[0] * grid[1] + c[1]) * grid[2] + c[2];
    let mut blocks = Vec::with_capacity(workers);
    for bx in 0..grid[0] {
        for by in 0..grid[1] {
            for bz in 0..grid[2] {
                let coords = [bx, by, bz];
                let mut neighbors = [[0; 2]; 3];
                for d in 0..3 {
                    let mut lo = coords;
                    lo[d] = (coords[d] + grid[d] - 1) % grid[d];
                    let mut hi = coords;
                    hi[d] = (coords[d] + 1) % grid[d];
                    neighbors[d] = [rank_of(lo), rank_of(hi)];
                }
                blocks.push(Block {
                    rank: rank_of(coords),
                    coords,
                    start: [splits[0][bx].0, splits[1][by].0, splits[2][bz].0],
                    cells: [splits[0][bx].1, splits[1][by].1, splits[2][bz].1],
                    neighbors,
                });
            }
        }
    }
    Ok(BlockDecomposition {
        dim,
        global_cells: cells,
        grid,
        blocks,
    })
}

/// Copies the cells of `block` out of a global field.
pub fn scatter(global: &StateField, block: &Block) -> StateField {
    let gl = global.layout();
    let mut local = StateField::zeros(global.dim(), block.cells, global.order(), global.n_var());
    let ll = local.layout();
    let src = global.as_slice();
    let dst = local.as_mut_slice();
    for cx in 0..block.cells[0] {
        for cy in 0..block.cells[1] {
            for cz in 0..block.cells[2] {
                let g = gl.cell_offset([cx + block.start[0], cy + block.start[1], cz + block.start[2]]);
                let l = ll.cell_offset([cx, cy, cz]);
                dst[l..l + ll.cell_len].copy_from_slice(&src[g..g + gl.cell_len]);
            }
        }
    }
    local
}

/// Writes a block's cells back into a global field.
pub fn gather_into(global: &mut StateField, block: &Block, local: &StateField) {
    let gl = global.layout();
    let ll = local.layout();
    let src = local.as_slice();
    let dst = global.as_mut_slice();
    for cx in 0..block.cells[0] {
        for cy in 0..block.cells[1] {
            for cz in 0..block.cells[2] {
                let g = gl.cell_offset([cx + block.start[0], cy + block.start[1], cz + block.start[2]]);
                let l = ll.cell_offset([cx, cy, cz]);
                dst[g..g + gl.cell_len].copy_from_slice(&src[l..l + ll.cell_len]);
            }
        }
    }
}

/// Halo exchange of one block over a message transport.
pub struct BlockExchange<T: Transport> {
    block: Block,
    dim: usize,
    transport: T,
    trace: Vec<f64>,
    reductions: u32,
    workers: usize,
}

impl<T: Transport> BlockExchange<T> {
    pub fn new(decomposition: &BlockDecomposition, rank: usize, transport: T) -> Self {
        BlockExchange {
            block: decomposition.blocks[rank].clone(),
            dim: decomposition.dim,
            transport,
            trace: Vec::new(),
            reductions: 0,
            workers: decomposition.worker_count(),
        }
    }

    fn face_error(&self, face: Face, e: TransportError) -> ExchangeError {
        ExchangeError::Face {
            worker: self.block.rank,
            face,
            reason: e.to_string(),
        }
    }
}

impl<T: Transport> HaloExchange for BlockExchange<T> {
    fn exchange(&mut self, field: &StateField, stage: u32, halos: &mut HaloBuffers) -> Result<(), ExchangeError> {
        let rank = self.block.rank;
        // Post every send first; receives follow.
        for face in HaloBuffers::faces(self.dim) {
            let nb = self.block.neighbor(face);
            if nb == rank {
                continue;
            }
            extract_trace(field, face, &mut self.trace);
            let msg = Message {
                stage,
                face: face.opposite().id(),
                payload: self.trace.clone(),
            };
            self.transport.send(nb, msg).map_err(|e| self.face_error(face, e))?;
        }
        for face in HaloBuffers::faces(self.dim) {
            let nb = self.block.neighbor(face);
            if nb == rank {
                extract_trace(field, face.opposite(), halos.face_mut(face));
                continue;
            }
            let payload = self
                .transport
                .recv(nb, face.id(), stage)
                .map_err(|e| self.face_error(face, e))?;
            let buf = halos.face_mut(face);
            if payload.len() != buf.len() {
                return Err(ExchangeError::PayloadSize {
                    face,
                    got: payload.len(),
                    expected: buf.len(),
                });
            }
            *buf = payload;
        }
        Ok(())
    }

    fn reduce_max(&mut self, value: f64) -> Result<f64, ExchangeError> {
        let rank = self.block.rank;
        let tag = self.reductions;
        self.reductions = self.reductions.wrapping_add(1);
        let err = |e: TransportError| ExchangeError::Reduction {
            worker: rank,
            reason: e.to_string(),
        };
        for peer in (0..self.workers).filter(|&p| p != rank) {
            let msg = Message {
                stage: tag,
                face: REDUCE_FACE,
                payload: vec![value],
            };
            self.transport.send(peer, msg).map_err(err)?;
        }
        let mut result = value;
        for peer in (0..self.workers).filter(|&p| p != rank) {
            let payload = self.transport.recv(peer, REDUCE_FACE, tag).map_err(err)?;
            result = result.max(payload.first().copied().unwrap_or(f64::NAN));
        }
        Ok(result)
    }
}

/// How far a partitioned run goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    /// Integrate to the configured end time.
    ToEndTime,
    /// A fixed number of timed steps after untimed warm-up steps.
    FixedSteps { steps: usize, warmup: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransportKind {
    /// Channels between threads of this process.
    #[default]
    InProcess,
    /// Loopback TCP sockets using the framed wire format.
    Tcp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerTiming {
    pub rank: usize,
    pub cells: usize,
    pub stats: StepStats,
}

impl WorkerTiming {
    pub fn compute_time(&self) -> f64 {
        (self.stats.wall_time - self.stats.exchange_time).max(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct PartitionedRun {
    pub field: StateField,
    pub decomposition: BlockDecomposition,
    pub workers: Vec<WorkerTiming>,
}

impl PartitionedRun {
    /// Slowest worker's loop time.
    pub fn wall_time(&self) -> f64 {
        self.workers.iter().map(|w| w.stats.wall_time).fold(0.0, f64::max)
    }

    pub fn steps(&self) -> usize {
        self.workers.first().map_or(0, |w| w.stats.steps)
    }

    /// Step statistics of rank 0 with the slowest worker's wall time.
    pub fn stats(&self) -> StepStats {
        let mut s = self.workers.first().map(|w| w.stats.clone()).unwrap_or_default();
        s.wall_time = self.wall_time();
        s
    }
}

/// Default time a worker waits for one message before failing the exchange.
pub const EXCHANGE_TIMEOUT: Duration = Duration::from_secs(120);

/// Runs `config` on `workers` concurrent block workers and gathers the
/// global field.
pub fn run_partitioned(
    config: &SolverConfig,
    initial: &StateField,
    workers: usize,
    mode: RunMode,
    transport: TransportKind,
) -> Result<PartitionedRun, PartitionError> {
    let mesh = &config.mesh;
    if initial.dim() != mesh.dim() || initial.cells() != mesh.cells() || initial.order() != mesh.order() {
        return Err(PartitionError::Shape(initial.shape()));
    }
    let decomposition = decompose(mesh, workers)?;
    let abort = Arc::new(AtomicBool::new(false));
    let transports: Vec<Box<dyn Transport>> = match transport {
        TransportKind::InProcess => ChannelTransport::mesh(workers, EXCHANGE_TIMEOUT, abort.clone())
            .into_iter()
            .map(|t| Box::new(t) as Box<dyn Transport>)
            .collect(),
        TransportKind::Tcp => TcpTransport::loopback_mesh(workers, EXCHANGE_TIMEOUT, abort.clone())?
            .into_iter()
            .map(|t| Box::new(t) as Box<dyn Transport>)
            .collect(),
    };

    let results: Vec<Result<(StateField, StepStats), PartitionError>> = thread::scope(|scope| {
        let handles: Vec<_> = transports
            .into_iter()
            .enumerate()
            .map(|(rank, t)| {
                let block = decomposition.blocks[rank].clone();
                let local = scatter(initial, &block);
                let decomposition = &decomposition;
                let abort = abort.clone();
                scope.spawn(move || {
                    let mut exchange = BlockExchange::new(decomposition, rank, t);
                    let out = match mode {
                        RunMode::ToEndTime => advance_block(config, local, block.start, &mut exchange),
                        RunMode::FixedSteps { steps, warmup } => {
                            run_steps_block(config, local, block.start, &mut exchange, steps, warmup)
                        }
                    };
                    if out.is_err() {
                        abort.store(true, Ordering::SeqCst);
                    }
                    out.map_err(|source| PartitionError::Worker { rank, source })
                })
            })
            .collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(rank, h)| {
                h.join().unwrap_or_else(|_| {
                    abort.store(true, Ordering::SeqCst);
                    Err(PartitionError::WorkerPanic { rank })
                })
            })
            .collect()
    });

    let mut field = StateField::zeros(mesh.dim(), mesh.cells(), mesh.order(), initial.n_var());
    let mut timings = Vec::with_capacity(workers);
    // Report the first failing worker that is not merely a victim of an abort.
    let mut first_err: Option<PartitionError> = None;
    for (rank, r) in results.into_iter().enumerate() {
        match r {
            Ok((local, stats)) => {
                let block = &decomposition.blocks[rank];
                gather_into(&mut field, block, &local);
                timings.push(WorkerTiming {
                    rank,
                    cells: block.cell_count(),
                    stats,
                });
            }
            Err(e) => {
                let aborted = matches!(&e, PartitionError::Worker { source: SolverError::Exchange(x), .. }
                    if x.to_string().contains("aborted"));
                if first_err.is_none() || (!aborted && is_abort(first_err.as_ref())) {
                    first_err = Some(e);
                }
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    Ok(PartitionedRun {
        field,
        decomposition,
        workers: timings,
    })
}

fn is_abort(e: Option<&PartitionError>) -> bool {
    matches!(e, Some(PartitionError::Worker { source: SolverError::Exchange(x), .. }) if x.to_string().contains("aborted"))
}

/// Side helper used by tests and diagnostics: the global cell index owning
/// the face trace a block receives on `face`.
pub fn halo_source_cell(decomposition: &BlockDecomposition, rank: usize, face: Face) -> usize {
    let block = &decomposition.blocks[rank];
    let nb = &decomposition.blocks[block.neighbor(face)];
    let d = face.axis;
    match face.side {
        Side::Low => nb.start[d] + nb.cells[d] - 1,
        Side::High => nb.start[d],
    }
}
