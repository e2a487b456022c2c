//! Fixed-step RK4 integration of the classical swing equations
//!
//! ```text
//! dδᵢ/dt  = ω_s · Δωᵢ
//! 2Hᵢ dΔωᵢ/dt = Pmᵢ + ΔPᵢ(t) − Peᵢ(δ) − Dᵢ · Δωᵢ
//! ```
//!
//! with `Δω` the per-unit speed deviation, `ω_s = 2π f_nom`, `H` and `D` on
//! the system base, and `ΔPᵢ(t) = k·sin(2πft)` on the disturbed machine
//! only, from its start time onward.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use oscloc_core::MTSeries;

use crate::error::{Result, SimError};
use crate::reduce::ReducedSystem;

/// Relative rotor angles beyond this are treated as loss of synchronism.
pub const DIVERGENCE_ANGLE: f64 = 10.0 * PI;

#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSpec {
    /// Index of the disturbed generator.
    pub target: usize,
    /// Amplitude `k`, system per-unit.
    pub amplitude_k: f64,
    /// Frequency `f`, Hz.
    pub frequency_hz: f64,
    /// Seconds; the sinusoid is zero before this.
    pub start_time: f64,
}

impl DisturbanceSpec {
    pub fn validate(&self, n_gen: usize) -> Result<()> {
        if self.target >= n_gen {
            return Err(SimError::InvalidConfig(format!(
                "disturbance target {} out of {n_gen} generators",
                self.target
            )));
        }
        if !(self.amplitude_k > 0.0 && self.frequency_hz > 0.0 && self.start_time >= 0.0) {
            return Err(SimError::InvalidConfig(
                "disturbance needs k > 0, f > 0 and a non-negative start".into(),
            ));
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        if t >= self.start_time {
            self.amplitude_k * (2.0 * PI * self.frequency_hz * t).sin()
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationSettings {
    /// RK4 step, seconds.
    pub step: f64,
    /// Simulated span, seconds; samples cover `[0, duration)`.
    pub duration: f64,
    /// Output sampling rate, Hz. `1 / (rate · step)` must be an integer.
    pub sample_rate: f64,
}

impl Default for IntegrationSettings {
    fn default() -> Self {
        Self {
            step: 0.005,
            duration: 15.0,
            sample_rate: 25.0,
        }
    }
}

impl IntegrationSettings {
    fn steps_per_sample(&self) -> Result<usize> {
        if !(self.step > 0.0 && self.duration > 0.0 && self.sample_rate > 0.0) {
            return Err(SimError::InvalidConfig("step, duration and sample rate must be positive".into()));
        }
        let ratio = 1.0 / (self.sample_rate * self.step);
        let rounded = ratio.round();
        if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * ratio {
            return Err(SimError::InvalidConfig(format!(
                "sample period is not a whole number of {} s steps",
                self.step
            )));
        }
        Ok(rounded as usize)
    }

    pub fn output_samples(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }
}

/// Sampled rotor angles (centre-of-inertia frame), electrical powers and
/// speed deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub gen_ids: Vec<String>,
    pub sample_rate: f64,
    pub times: Vec<f64>,
    /// `delta[sample][gen]`, radians relative to the centre of inertia.
    pub delta: Vec<Vec<f64>>,
    /// `pe[sample][gen]`, system per-unit.
    pub pe: Vec<Vec<f64>>,
    /// `speed[sample][gen]`, per-unit deviation from synchronous speed.
    pub speed: Vec<Vec<f64>>,
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Channel names `delta_<id>…, pe_<id>…`.
    pub fn channel_names(&self) -> Vec<String> {
        self.gen_ids
            .iter()
            .map(|g| format!("delta_{g}"))
            .chain(self.gen_ids.iter().map(|g| format!("pe_{g}")))
            .collect()
    }

    /// Makes every channel a deviation from its value at the first sample.
    pub fn subtract_initial(&mut self) {
        for rows in [&mut self.delta, &mut self.pe, &mut self.speed] {
            let Some(first) = rows.first().cloned() else { return };
            for row in rows.iter_mut() {
                for (v, v0) in row.iter_mut().zip(&first) {
                    *v -= v0;
                }
            }
        }
    }

    /// `h × 2G` series with rotor angles first, then electrical powers.
    pub fn to_series(&self) -> Result<MTSeries> {
        let g = self.gen_ids.len();
        let values = DMatrix::from_fn(self.len(), 2 * g, |i, j| {
            if j < g {
                self.delta[i][j]
            } else {
                self.pe[i][j - g]
            }
        });
        Ok(MTSeries::new(values, self.sample_rate, self.channel_names(), 0.0)?)
    }
}

struct Rhs<'a> {
    sys: &'a ReducedSystem,
    damping: &'a [f64],
    disturbance: Option<&'a DisturbanceSpec>,
    omega_s: f64,
    pe: Vec<f64>,
}

impl Rhs<'_> {
    /// State layout `[δ₀ … δₙ₋₁, Δω₀ … Δωₙ₋₁]`.
    fn eval(&mut self, t: f64, x: &[f64], dx: &mut [f64]) {
        let n = self.sys.len();
        self.sys.electrical_power_into(&x[..n], &mut self.pe);
        for i in 0..n {
            let mut pa = self.sys.pm[i] - self.pe[i] - self.damping[i] * x[n + i];
            if let Some(d) = self.disturbance.filter(|d| d.target == i) {
                pa += d.value(t);
            }
            dx[i] = self.omega_s * x[n + i];
            dx[n + i] = pa / (2.0 * self.sys.h[i]);
        }
    }
}

/// Integrates from the equilibrium `δ₀`, `Δω = 0`. `damping` is on each
/// machine's own base.
pub fn integrate(
    sys: &ReducedSystem,
    disturbance: Option<&DisturbanceSpec>,
    damping: &[f64],
    settings: &IntegrationSettings,
) -> Result<SimulationTrace> {
    let speed0 = vec![0.0; sys.len()];
    integrate_from(sys, &sys.delta0, &speed0, disturbance, &sys.damping_system(damping), settings)
}

/// Integrates from an arbitrary state. `damping` is already on the system base.
pub fn integrate_from(
    sys: &ReducedSystem,
    delta_init: &[f64],
    speed_init: &[f64],
    disturbance: Option<&DisturbanceSpec>,
    damping: &[f64],
    settings: &IntegrationSettings,
) -> Result<SimulationTrace> {
    let n = sys.len();
    if delta_init.len() != n || speed_init.len() != n || damping.len() != n {
        return Err(SimError::InvalidConfig(format!(
            "state and damping vectors must have {n} entries"
        )));
    }
    if let Some(d) = disturbance {
        d.validate(n)?;
    }
    let per_sample = settings.steps_per_sample()?;
    let n_out = settings.output_samples();
    let h_total: f64 = sys.h.iter().sum();

    let mut rhs = Rhs {
        sys,
        damping,
        disturbance,
        omega_s: 2.0 * PI * sys.frequency_hz,
        pe: vec![0.0; n],
    };
    let mut x: Vec<f64> = delta_init.iter().chain(speed_init).copied().collect();
    let dim = 2 * n;
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);

    let mut trace = SimulationTrace {
        gen_ids: sys.gen_ids.clone(),
        sample_rate: settings.sample_rate,
        times: Vec::with_capacity(n_out),
        delta: Vec::with_capacity(n_out),
        pe: Vec::with_capacity(n_out),
        speed: Vec::with_capacity(n_out),
    };
    let dt = settings.step;
    let mut step = 0usize;
    for k in 0..n_out {
        let target_step = k * per_sample;
        while step < target_step {
            let t = step as f64 * dt;
            rhs.eval(t, &x, &mut k1);
            for i in 0..dim {
                tmp[i] = x[i] + 0.5 * dt * k1[i];
            }
            rhs.eval(t + 0.5 * dt, &tmp, &mut k2);
            for i in 0..dim {
                tmp[i] = x[i] + 0.5 * dt * k2[i];
            }
            rhs.eval(t + 0.5 * dt, &tmp, &mut k3);
            for i in 0..dim {
                tmp[i] = x[i] + dt * k3[i];
            }
            rhs.eval(t + dt, &tmp, &mut k4);
            for i in 0..dim {
                x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            step += 1;
        }
        let t = step as f64 * dt;
        let coi: f64 = x[..n].iter().zip(&sys.h).map(|(d, h)| d * h).sum::<f64>() / h_total;
        let rel: Vec<f64> = x[..n].iter().map(|d| d - coi).collect();
        if rel.iter().any(|d| !d.is_finite() || d.abs() > DIVERGENCE_ANGLE) {
            return Err(SimError::Unstable { time: t });
        }
        trace.pe.push(sys.electrical_power(&x[..n]));
        trace.times.push(k as f64 / settings.sample_rate);
        trace.delta.push(rel);
        trace.speed.push(x[n..].to_vec());
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridModel;
    use crate::powerflow::solve_powerflow;
    use crate::reduce::reduce_network;

    fn two_area() -> ReducedSystem {
        let grid = GridModel::kundur_two_area();
        reduce_network(&grid, &solve_powerflow(&grid).unwrap()).unwrap()
    }

    #[test]
    fn settings_validation() {
        let bad = IntegrationSettings { step: 0.003, ..Default::default() };
        assert!(bad.steps_per_sample().is_err());
        assert_eq!(IntegrationSettings::default().steps_per_sample().unwrap(), 8);
        assert_eq!(IntegrationSettings::default().output_samples(), 375);
    }

    #[test]
    fn undisturbed_stays_at_equilibrium() {
        let sys = two_area();
        let tr = integrate(&sys, None, &[1.0; 4], &IntegrationSettings::default()).unwrap();
        assert_eq!(tr.len(), 375);
        let first = &tr.delta[0];
        for row in &tr.delta {
            for (a, b) in row.iter().zip(first) {
                assert!((a - b).abs() <= 1e-6);
            }
        }
        assert!(tr.speed.iter().flatten().all(|w| w.abs() < 1e-9));
    }

    #[test]
    fn disturbance_waits_for_start() {
        let sys = two_area();
        let d = DisturbanceSpec { target: 0, amplitude_k: 0.03, frequency_hz: 0.6, start_time: 2.0 };
        let tr = integrate(&sys, Some(&d), &[0.0; 4], &IntegrationSettings::default()).unwrap();
        let omega_s = 2.0 * PI * sys.frequency_hz;
        for (t, w) in tr.times.iter().zip(&tr.speed) {
            if *t < 2.0 {
                assert!(w.iter().all(|w| (omega_s * w).abs() <= 1e-6));
            }
        }
        assert!(tr.speed.last().unwrap()[0].abs() > 1e-6);
    }

    #[test]
    fn coi_reference_holds() {
        let sys = two_area();
        let d = DisturbanceSpec { target: 2, amplitude_k: 0.03, frequency_hz: 0.62, start_time: 0.0 };
        let tr = integrate(&sys, Some(&d), &[2.0, 1.0, 0.5, 3.0], &IntegrationSettings::default()).unwrap();
        let h_total: f64 = sys.h.iter().sum();
        for row in &tr.delta {
            let coi: f64 = row.iter().zip(&sys.h).map(|(d, h)| d * h).sum::<f64>() / h_total;
            assert!(coi.abs() <= 1e-9);
        }
    }

    #[test]
    fn bad_target_rejected() {
        let sys = two_area();
        let d = DisturbanceSpec { target: 7, amplitude_k: 0.03, frequency_hz: 0.62, start_time: 0.0 };
        assert!(integrate(&sys, Some(&d), &[0.0; 4], &IntegrationSettings::default()).is_err());
        assert!(integrate(&sys, None, &[0.0; 3], &IntegrationSettings::default()).is_err());
    }

    #[test]
    fn runaway_is_unstable() {
        let sys = two_area();
        let d = DisturbanceSpec { target: 0, amplitude_k: 50.0, frequency_hz: 0.1, start_time: 0.0 };
        let err = integrate(&sys, Some(&d), &[0.0; 4], &IntegrationSettings::default()).unwrap_err();
        assert!(err.is_rejection());
    }
}
