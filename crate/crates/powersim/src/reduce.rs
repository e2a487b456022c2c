//! Classical-model network reduction.
//!
//! Loads become constant admittances at their power-flow voltage, every
//! generator gets an internal node behind its transient reactance, and all
//! other nodes are eliminated by Kron reduction.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Result, SimError};
use crate::grid::GridModel;
use crate::powerflow::PowerFlowSolution;

/// Swing-equation view of a network: admittances among internal EMFs plus
/// the machine data needed to integrate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSystem {
    pub gen_ids: Vec<String>,
    pub y: DMatrix<Complex64>,
    pub e_mag: Vec<f64>,
    /// Equilibrium internal angles, radians.
    pub delta0: Vec<f64>,
    /// Mechanical input, system per-unit; equals `Pe(δ₀)`.
    pub pm: Vec<f64>,
    /// Inertia constants on the system base, seconds.
    pub h: Vec<f64>,
    /// Machine ratings, used to convert machine-base damping.
    pub mva_base: Vec<f64>,
    pub base_mva: f64,
    pub frequency_hz: f64,
}

impl ReducedSystem {
    /// Builds a system with `Pm` set so that `δ₀` is an equilibrium.
    pub fn from_parts(
        gen_ids: Vec<String>,
        y: DMatrix<Complex64>,
        e_mag: Vec<f64>,
        delta0: Vec<f64>,
        h: Vec<f64>,
        frequency_hz: f64,
    ) -> Self {
        let n = gen_ids.len();
        let mut sys = Self {
            gen_ids,
            y,
            e_mag,
            delta0,
            pm: vec![0.0; n],
            h,
            mva_base: vec![100.0; n],
            base_mva: 100.0,
            frequency_hz,
        };
        sys.pm = sys.electrical_power(&sys.delta0.clone());
        sys
    }

    pub fn len(&self) -> usize {
        self.gen_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gen_ids.is_empty()
    }

    /// `Peᵢ = Σⱼ EᵢEⱼ (Gᵢⱼ cos δᵢⱼ + Bᵢⱼ sin δᵢⱼ)`.
    pub fn electrical_power(&self, delta: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut pe = vec![0.0; n];
        self.electrical_power_into(delta, &mut pe);
        pe
    }

    pub(crate) fn electrical_power_into(&self, delta: &[f64], pe: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                let y = self.y[(i, j)];
                let d = delta[i] - delta[j];
                let (s, c) = d.sin_cos();
                acc += self.e_mag[j] * (y.re * c + y.im * s);
            }
            pe[i] = self.e_mag[i] * acc;
        }
    }

    /// Machine-base damping values expressed on the system base.
    pub fn damping_system(&self, machine_base: &[f64]) -> Vec<f64> {
        machine_base
            .iter()
            .zip(&self.mva_base)
            .map(|(d, s)| d * s / self.base_mva)
            .collect()
    }
}

/// `Y_kk − Y_ke · Y_ee⁻¹ · Y_ek` keeping the nodes in `keep` (in that order).
pub fn kron_reduce(y: &DMatrix<Complex64>, keep: &[usize]) -> Result<DMatrix<Complex64>> {
    let n = y.nrows();
    if keep.iter().any(|&k| k >= n) {
        return Err(SimError::Numerical("kept node out of range".into()));
    }
    let elim: Vec<usize> = (0..n).filter(|i| !keep.contains(i)).collect();
    let pick = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| y[(rows[r], cols[c])])
    };
    let ykk = pick(keep, keep);
    if elim.is_empty() {
        return Ok(ykk);
    }
    let yke = pick(keep, &elim);
    let yee = pick(&elim, &elim);
    let yek = pick(&elim, keep);
    let solved = yee
        .lu()
        .solve(&yek)
        .ok_or_else(|| SimError::Numerical("eliminated-node admittance block is singular".into()))?;
    if solved.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(SimError::Numerical("eliminated-node admittance block is singular".into()));
    }
    Ok(ykk - yke * solved)
}

/// Reduces a solved network to its generator internal nodes.
pub fn reduce_network(grid: &GridModel, pf: &PowerFlowSolution) -> Result<ReducedSystem> {
    let nb = grid.buses.len();
    let ng = grid.generators.len();
    let mut y = DMatrix::from_element(nb + ng, nb + ng, Complex64::new(0.0, 0.0));
    y.view_mut((0, 0), (nb, nb)).copy_from(&grid.ybus());
    for (i, b) in grid.buses.iter().enumerate() {
        let v2 = pf.vm[i] * pf.vm[i];
        y[(i, i)] += Complex64::new(b.p_load, -b.q_load) / v2;
    }
    let gen_out = pf.generator_output(grid);
    let mut e = Vec::with_capacity(ng);
    for (k, (g, &bus)) in grid.generators.iter().zip(&grid.generator_bus_indices()).enumerate() {
        let xd = g.xd_prime_system(grid.base_mva);
        let yg = Complex64::new(0.0, -1.0 / xd);
        let node = nb + k;
        y[(node, node)] += yg;
        y[(bus, bus)] += yg;
        y[(node, bus)] -= yg;
        y[(bus, node)] -= yg;
        let v = pf.voltage(bus);
        let current = (gen_out[k] / v).conj();
        e.push(v + Complex64::new(0.0, xd) * current);
    }
    let keep: Vec<usize> = (nb..nb + ng).collect();
    let y_red = kron_reduce(&y, &keep)?;
    let mut sys = ReducedSystem {
        gen_ids: grid.generators.iter().map(|g| g.id.clone()).collect(),
        y: y_red,
        e_mag: e.iter().map(|e| e.norm()).collect(),
        delta0: e.iter().map(|e| e.arg()).collect(),
        pm: vec![0.0; ng],
        h: grid.generators.iter().map(|g| g.h_system(grid.base_mva)).collect(),
        mva_base: grid.generators.iter().map(|g| g.mva_base).collect(),
        base_mva: grid.base_mva,
        frequency_hz: grid.frequency_hz,
    };
    sys.pm = sys.electrical_power(&sys.delta0);
    Ok(sys)
}
