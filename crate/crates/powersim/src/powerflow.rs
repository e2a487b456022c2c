//! Newton-Raphson AC power flow in polar coordinates.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Result, SimError};
use crate::grid::{BusType, GridModel};

pub const MAX_ITERATIONS: usize = 50;
/// Convergence threshold on the largest P/Q mismatch, per-unit.
pub const MISMATCH_TOL: f64 = 1e-8;
/// Solutions with any bus below this magnitude are treated as infeasible.
pub const MIN_VOLTAGE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub vm: Vec<f64>,
    /// Bus voltage angles, radians.
    pub va: Vec<f64>,
    /// Net complex injection at each bus (generation minus load).
    pub injection: Vec<Complex64>,
    pub iterations: usize,
    pub max_mismatch: f64,
}

impl PowerFlowSolution {
    pub fn voltage(&self, bus: usize) -> Complex64 {
        Complex64::from_polar(self.vm[bus], self.va[bus])
    }

    /// Complex output of each generator (injection plus local load).
    pub fn generator_output(&self, grid: &GridModel) -> Vec<Complex64> {
        grid.generator_bus_indices()
            .into_iter()
            .map(|i| {
                let b = &grid.buses[i];
                self.injection[i] + Complex64::new(b.p_load, b.q_load)
            })
            .collect()
    }
}

fn injections(y: &DMatrix<Complex64>, v: &[Complex64]) -> Vec<Complex64> {
    let vv = DVector::from_column_slice(v);
    let i = y * &vv;
    v.iter().zip(i.iter()).map(|(v, i)| v * i.conj()).collect()
}

/// Solves the AC power flow from a flat start. Non-convergence, or a
/// converged point with collapsed voltages, is reported as
/// [`SimError::PowerFlowDiverged`] so that callers can redraw the scenario.
pub fn solve_powerflow(grid: &GridModel) -> Result<PowerFlowSolution> {
    grid.validate()?;
    let n = grid.buses.len();
    let y = grid.ybus();

    let mut p_spec = vec![0.0; n];
    let mut q_spec = vec![0.0; n];
    for (i, b) in grid.buses.iter().enumerate() {
        p_spec[i] -= b.p_load;
        q_spec[i] -= b.q_load;
    }
    for (g, &i) in grid.generators.iter().zip(&grid.generator_bus_indices()) {
        p_spec[i] += g.p_gen;
    }
    let pvpq: Vec<usize> = (0..n).filter(|&i| grid.buses[i].kind != BusType::Slack).collect();
    let pq: Vec<usize> = (0..n).filter(|&i| grid.buses[i].kind == BusType::Pq).collect();

    let mut vm: Vec<f64> = grid
        .buses
        .iter()
        .map(|b| if b.kind == BusType::Pq { 1.0 } else { b.v_set })
        .collect();
    let mut va = vec![0.0; n];

    let mut iterations = 0;
    let mut max_mismatch;
    loop {
        let v: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(vm[i], va[i])).collect();
        let s = injections(&y, &v);
        let mut f = Vec::with_capacity(pvpq.len() + pq.len());
        f.extend(pvpq.iter().map(|&i| s[i].re - p_spec[i]));
        f.extend(pq.iter().map(|&i| s[i].im - q_spec[i]));
        max_mismatch = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if !max_mismatch.is_finite() {
            break;
        }
        if max_mismatch <= MISMATCH_TOL {
            if vm.iter().any(|&m| m < MIN_VOLTAGE) {
                break;
            }
            return Ok(PowerFlowSolution {
                vm,
                va,
                injection: s,
                iterations,
                max_mismatch,
            });
        }
        if iterations == MAX_ITERATIONS {
            break;
        }
        iterations += 1;

        // dS/dθ = j·diag(V)·conj(diag(I) − Y·diag(V))
        // dS/d|V| = diag(V)·conj(Y·diag(V/|V|)) + conj(diag(I))·diag(V/|V|)
        let vv = DVector::from_column_slice(&v);
        let cur = &y * &vv;
        let unit: Vec<Complex64> = v.iter().map(|x| x / x.norm()).collect();
        let ds_dva = |r: usize, c: usize| -> Complex64 {
            let mut t = -y[(r, c)] * v[c];
            if r == c {
                t += cur[r];
            }
            Complex64::new(0.0, 1.0) * v[r] * t.conj()
        };
        let ds_dvm = |r: usize, c: usize| -> Complex64 {
            let mut t = v[r] * (y[(r, c)] * unit[c]).conj();
            if r == c {
                t += cur[r].conj() * unit[r];
            }
            t
        };
        let dim = pvpq.len() + pq.len();
        let mut jac = DMatrix::zeros(dim, dim);
        for (a, &r) in pvpq.iter().enumerate() {
            for (b, &c) in pvpq.iter().enumerate() {
                jac[(a, b)] = ds_dva(r, c).re;
            }
            for (b, &c) in pq.iter().enumerate() {
                jac[(a, pvpq.len() + b)] = ds_dvm(r, c).re;
            }
        }
        for (a, &r) in pq.iter().enumerate() {
            for (b, &c) in pvpq.iter().enumerate() {
                jac[(pvpq.len() + a, b)] = ds_dva(r, c).im;
            }
            for (b, &c) in pq.iter().enumerate() {
                jac[(pvpq.len() + a, pvpq.len() + b)] = ds_dvm(r, c).im;
            }
        }
        let rhs = DVector::from_iterator(dim, f.iter().map(|x| -x));
        let Some(dx) = jac.lu().solve(&rhs) else {
            break;
        };
        for (a, &i) in pvpq.iter().enumerate() {
            va[i] += dx[a];
        }
        for (a, &i) in pq.iter().enumerate() {
            vm[i] += dx[pvpq.len() + a];
        }
    }
    Err(SimError::PowerFlowDiverged {
        iterations,
        mismatch: max_mismatch,
    })
}
