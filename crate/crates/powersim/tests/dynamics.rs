use std::f64::consts::PI;

use num_complex::Complex64;
use oscloc_powersim::dynamics::{integrate, integrate_from, DisturbanceSpec, IntegrationSettings};
use oscloc_powersim::powerflow::solve_powerflow;
use oscloc_powersim::reduce::{reduce_network, ReducedSystem};
use oscloc_powersim::GridModel;
use rustfft::FftPlanner;

const F0: f64 = 0.6208;

fn two_area() -> ReducedSystem {
    let grid = GridModel::kundur_two_area();
    reduce_network(&grid, &solve_powerflow(&grid).unwrap()).unwrap()
}

fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn step_halving_changes_trace_by_less_than_tolerance() {
    let sys = two_area();
    let disturbance = DisturbanceSpec { target: 1, amplitude_k: 0.03, frequency_hz: F0, start_time: 0.0 };
    let damping = [0.5, 2.0, 0.0, 3.5];
    let coarse = IntegrationSettings::default();
    let fine = IntegrationSettings { step: coarse.step / 2.0, ..coarse };
    let a = integrate(&sys, Some(&disturbance), &damping, &coarse).unwrap();
    let b = integrate(&sys, Some(&disturbance), &damping, &fine).unwrap();
    assert_eq!(a.times, b.times);
    let d_delta = max_abs_diff(&a.delta, &b.delta);
    let d_pe = max_abs_diff(&a.pe, &b.pe);
    assert!(d_delta <= 1e-6, "angle change {d_delta:e}");
    assert!(d_pe <= 1e-6, "power change {d_pe:e}");
}

/// Peak-to-peak swing of the area-1 electrical output `Pe₁ + Pe₂` once the
/// start-up transient has decayed. Local modes cancel in the sum, leaving
/// the inter-area exchange.
fn steady_swing(sys: &ReducedSystem, f: f64) -> f64 {
    let disturbance = DisturbanceSpec { target: 0, amplitude_k: 0.03, frequency_hz: f, start_time: 0.0 };
    let settings = IntegrationSettings { duration: 60.0, ..Default::default() };
    let tr = integrate(sys, Some(&disturbance), &[2.0; 4], &settings).unwrap();
    let tail = &tr.pe[tr.len() - 500..];
    let (lo, hi) = tail
        .iter()
        .map(|row| row[0] + row[1])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    hi - lo
}

#[test]
fn forcing_near_base_mode_resonates() {
    let sys = two_area();
    let near = steady_swing(&sys, F0);
    let double = steady_swing(&sys, 2.0 * F0);
    assert!(near > double, "swing at f0 {near} vs 2f0 {double}");
}

/// Swing energy of a lossless network: kinetic plus the cosine potential.
fn swing_energy(sys: &ReducedSystem, delta: &[f64], speed: &[f64]) -> f64 {
    let omega_s = 2.0 * PI * sys.frequency_hz;
    let n = sys.len();
    let kinetic: f64 = (0..n).map(|i| sys.h[i] * omega_s * speed[i] * speed[i]).sum();
    let mut potential: f64 = -(0..n).map(|i| sys.pm[i] * delta[i]).sum::<f64>();
    for i in 0..n {
        for j in i + 1..n {
            potential -= sys.e_mag[i] * sys.e_mag[j] * sys.y[(i, j)].im * (delta[i] - delta[j]).cos();
        }
    }
    kinetic + potential
}

#[test]
fn lossless_undamped_swing_conserves_energy() {
    let full = two_area();
    let y = full.y.map(|v| Complex64::new(0.0, v.im));
    let sys = ReducedSystem::from_parts(
        full.gen_ids.clone(),
        y,
        full.e_mag.clone(),
        full.delta0.clone(),
        full.h.clone(),
        full.frequency_hz,
    );
    assert!(sys.pm.iter().sum::<f64>().abs() < 1e-12);
    let speed0 = [2e-3, 0.0, -1e-3, 0.0];
    let tr = integrate_from(&sys, &sys.delta0, &speed0, None, &[0.0; 4], &IntegrationSettings::default()).unwrap();

    let coi: f64 = sys.delta0.iter().zip(&sys.h).map(|(d, h)| d * h).sum::<f64>() / sys.h.iter().sum::<f64>();
    let rel0: Vec<f64> = sys.delta0.iter().map(|d| d - coi).collect();
    let e0 = swing_energy(&sys, &rel0, &speed0);
    let excess = e0 - swing_energy(&sys, &rel0, &[0.0; 4]);
    assert!(excess > 0.0);
    let drift = tr
        .delta
        .iter()
        .zip(&tr.speed)
        .map(|(d, w)| (swing_energy(&sys, d, w) - e0).abs())
        .fold(0.0, f64::max);
    assert!(drift <= 1e-3 * excess, "energy drift {drift:e} of {excess:e}");
    // The swing actually moved.
    assert!(max_abs_diff(&tr.delta[..1], &tr.delta[200..201]) > 1e-4);
}

#[test]
fn ring_down_shows_inter_area_mode() {
    let sys = two_area();
    let settings = IntegrationSettings { duration: 120.0, ..Default::default() };
    let speed0 = [1e-4, 0.0, 0.0, 0.0];
    let tr = integrate_from(&sys, &sys.delta0, &speed0, None, &[0.0; 4], &settings).unwrap();
    // Area 1 against area 2 cancels the local modes to first order.
    let mut signal: Vec<f64> = tr.delta.iter().map(|d| d[0] + d[1] - d[2] - d[3]).collect();
    let mean = signal.iter().sum::<f64>() / signal.len() as f64;
    signal.iter_mut().for_each(|v| *v -= mean);

    let n_fft = 1 << 15;
    let mut buf: Vec<rustfft::num_complex::Complex64> = signal
        .iter()
        .map(|&v| rustfft::num_complex::Complex64::new(v, 0.0))
        .chain(std::iter::repeat(rustfft::num_complex::Complex64::new(0.0, 0.0)))
        .take(n_fft)
        .collect();
    FftPlanner::new().plan_fft_forward(n_fft).process(&mut buf);
    let df = tr.sample_rate / n_fft as f64;
    let (peak, _) = buf[1..n_fft / 2]
        .iter()
        .enumerate()
        .map(|(i, c)| ((i + 1) as f64 * df, c.norm()))
        .filter(|(f, _)| *f < 1.0)
        .fold((0.0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    let rel = (peak - F0).abs() / F0;
    assert!(rel <= 0.15, "inter-area peak at {peak} Hz");
}
