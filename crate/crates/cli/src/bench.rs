//! Solver timing across system sizes and iteration budgets.
//!
//! `m = 4` uses the normal equations of a synthetic trace; larger sizes use
//! generated SPD systems. Gradient descent is timed on `descend` alone with
//! a zero tolerance so every run performs exactly `T` iterations.

use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use surflink::estimator::{build_system, NormalEquations, DEFAULT_SEED};
use surflink::linalg::{random_spd, solve_with_condition, Matrix};
use surflink::synth::{self, SynthConfig};

use crate::commands::Context;
use crate::output::Run;
use crate::{BenchArgs, CliError, Format};

/// Exact solves per timed sample; one solve is too short to time reliably.
const EXACT_BATCH: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub m: usize,
    /// Iteration budget; empty for the exact solver.
    #[serde(rename = "T")]
    pub t: Option<usize>,
    pub method: String,
    pub median_s: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn system_of_size(m: usize, seed: u64) -> Result<(Matrix, Vec<f64>), CliError> {
    if m == 4 {
        let config = SynthConfig {
            seed,
            ..SynthConfig::preset("southbeach")?
        };
        let truth = synth::generate(&config)?
            .truth
            .expect("linear model has a truth series");
        return Ok(build_system(&truth)?.reduced());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ m as u64);
    let e = random_spd(m, 0.25, 0.1, &mut rng);
    let r = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    Ok((e, r))
}

/// Wall-clock seconds of one gradient-descent run of `iters` steps.
pub fn time_gd(ne: &NormalEquations, iters: usize) -> f64 {
    let start = Instant::now();
    let d = black_box(ne.descend(vec![0.0; ne.dim()], iters, 0.0));
    let elapsed = start.elapsed().as_secs_f64();
    if d.iterations != iters {
        log::warn!(
            "descent stopped after {} of {iters} iterations ({:?})",
            d.iterations,
            d.stop
        );
    }
    elapsed
}

/// Wall-clock seconds of one exact solve, averaged over a batch. Like the
/// estimator's exact solver it includes the condition estimate.
pub fn time_exact(e: &Matrix, r: &[f64]) -> f64 {
    let start = Instant::now();
    for _ in 0..EXACT_BATCH {
        black_box(solve_with_condition(black_box(e), black_box(r)).expect("solvable system"));
    }
    start.elapsed().as_secs_f64() / EXACT_BATCH as f64
}

/// One timed cell: a system and, for gradient descent, an iteration budget.
struct Cell {
    m: usize,
    t: Option<usize>,
    e: Matrix,
    r: Vec<f64>,
    ne: NormalEquations,
    samples: Vec<f64>,
}

impl Cell {
    fn sample(&mut self) {
        let s = match self.t {
            None => time_exact(&self.e, &self.r),
            Some(t) => time_gd(&self.ne, t),
        };
        self.samples.push(s);
    }
}

/// Times both solvers for every `m` in `sizes` and, for gradient descent,
/// every `T` in `iters`; writes `bench.csv` (`m,T,method,median_s`).
pub fn cmd_bench(ctx: &Context, args: &BenchArgs) -> Result<Vec<BenchRow>, CliError> {
    if args.reps == 0 || args.sizes.contains(&0) || args.iters.contains(&0) {
        return Err(CliError::input(
            "sizes, iteration counts and reps must be positive",
        ));
    }
    let mut run = Run::new("bench", &ctx.out_dir);
    let seed = ctx.seed.unwrap_or(DEFAULT_SEED);
    run.set_config(&(args, seed))?;
    run.set_seed(seed);
    let mut cells = Vec::new();
    for &m in &args.sizes {
        let (e, r) = system_of_size(m, seed)?;
        solve_with_condition(&e, &r).map_err(|err| CliError::Numerical(err.into()))?;
        let ne = NormalEquations::new(&e, &r);
        for t in std::iter::once(None).chain(args.iters.iter().map(|&t| Some(t))) {
            cells.push(Cell {
                m,
                t,
                e: e.clone(),
                r: r.clone(),
                ne: ne.clone(),
                samples: Vec::with_capacity(args.reps),
            });
        }
    }
    // round-robin so slow drifts in machine load hit every cell alike
    for _ in 0..args.reps {
        for cell in &mut cells {
            cell.sample();
        }
    }
    let rows: Vec<BenchRow> = cells
        .into_iter()
        .map(|cell| BenchRow {
            m: cell.m,
            t: cell.t,
            method: if cell.t.is_some() { "gd" } else { "exact" }.into(),
            median_s: median(cell.samples),
        })
        .collect();
    let bytes = match ctx.format {
        Format::Json => crate::output::to_json_bytes(&rows)?,
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in &rows {
                w.serialize(row).map_err(|e| CliError::Internal(e.into()))?;
            }
            w.into_inner()
                .map_err(|e| CliError::Internal(anyhow::anyhow!("{e}")))?
        }
    };
    let name = match ctx.format {
        Format::Json => "bench.json",
        Format::Csv => "bench.csv",
    };
    run.stage(name, bytes);
    run.commit()?;
    Ok(rows)
}
