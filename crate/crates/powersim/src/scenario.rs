//! Randomised forced-oscillation scenarios and labelled dataset generation.
//!
//! Each scenario draws a load scale, a damping value per machine and a
//! disturbance frequency around the base mode, simulates the grid with the
//! sinusoid injected at one machine, and adds white Gaussian noise at a fixed
//! per-channel SNR. The label is the disturbed machine.
//!
//! Scenario `(class c, index i, attempt a)` uses the seed
//! `mix(mix(mix(mix(rng_seed) ^ c) ^ i) ^ a)` with `mix` the SplitMix64
//! finaliser, so results do not depend on how scenarios are scheduled.

use std::collections::BTreeMap;
use std::ops::Range;

use oscloc_core::{Dataset, LabeledSample, MTSeries};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate, DisturbanceSpec, IntegrationSettings};
use crate::error::{Result, SimError};
use crate::grid::GridModel;
use crate::powerflow::solve_powerflow;
use crate::reduce::reduce_network;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Uniform range for the common load multiplier.
    pub load_scale_range: [f64; 2],
    /// Uniform range for each machine's damping (machine base).
    pub damping_range: [f64; 2],
    /// Disturbance frequency range as multiples of `base_mode_freq_f0`.
    pub frequency_band: [f64; 2],
    pub base_mode_freq_f0: f64,
    /// Sinusoid amplitude `k`, system per-unit mechanical power.
    pub amplitude_k: f64,
    pub disturbance_start: f64,
    /// Per-channel SNR in dB; `inf` disables noise.
    pub noise_snr_db: f64,
    pub sim_duration: f64,
    pub sample_rate: f64,
    pub integration_step: f64,
    /// Delay `d` between onset and the start of the test window, seconds.
    pub test_delay_d: f64,
    pub test_window: f64,
    /// Scenarios per class; split evenly between training and testing.
    pub samples_per_class: usize,
    pub rng_seed: u64,
    /// Subtract each scenario's pre-disturbance operating point so channels
    /// hold deviations `δ − δ₀`, `Pe − Pe₀`.
    pub remove_operating_point: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            load_scale_range: [0.9, 1.1],
            damping_range: [0.0, 4.0],
            frequency_band: [0.9, 1.1],
            base_mode_freq_f0: 0.6208,
            amplitude_k: 0.03,
            disturbance_start: 0.0,
            noise_snr_db: 13.0,
            sim_duration: 15.0,
            sample_rate: 25.0,
            integration_step: 0.005,
            test_delay_d: 3.0,
            test_window: 5.0,
            samples_per_class: 200,
            rng_seed: 0,
            remove_operating_point: true,
        }
    }
}

fn range_ok(r: [f64; 2]) -> bool {
    r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !range_ok(self.load_scale_range) || self.load_scale_range[0] <= 0.0 {
            return bad("load_scale_range must be an ordered positive interval".into());
        }
        if !range_ok(self.damping_range) || self.damping_range[0] < 0.0 {
            return bad("damping_range must be an ordered non-negative interval".into());
        }
        if !range_ok(self.frequency_band) || self.frequency_band[0] <= 0.0 {
            return bad("frequency_band must be an ordered positive interval".into());
        }
        if !(self.base_mode_freq_f0 > 0.0 && self.amplitude_k > 0.0) {
            return bad("base_mode_freq_f0 and amplitude_k must be positive".into());
        }
        if !(self.sample_rate > 0.0 && self.sim_duration > 0.0 && self.test_window > 0.0) {
            return bad("sample_rate, sim_duration and test_window must be positive".into());
        }
        if !(self.test_delay_d >= 0.0 && self.disturbance_start >= 0.0) {
            return bad("test_delay_d and disturbance_start must be non-negative".into());
        }
        if self.sim_duration + 1e-9 < self.test_delay_d + self.test_window {
            return bad(format!(
                "sim_duration {} is shorter than test_delay_d + test_window = {}",
                self.sim_duration,
                self.test_delay_d + self.test_window
            ));
        }
        let f_max = self.base_mode_freq_f0 * self.frequency_band[1];
        if self.sample_rate <= 2.0 * f_max {
            return bad(format!("sample_rate {} Hz must exceed twice {f_max} Hz", self.sample_rate));
        }
        if self.noise_snr_db.is_nan() {
            return bad("noise_snr_db must be a number or inf".into());
        }
        if self.samples_per_class < 2 {
            return bad("samples_per_class must be at least 2 for a train/test split".into());
        }
        self.integration().output_samples();
        Ok(())
    }

    pub fn integration(&self) -> IntegrationSettings {
        IntegrationSettings {
            step: self.integration_step,
            duration: self.sim_duration,
            sample_rate: self.sample_rate,
        }
    }

    pub fn training_rows(&self) -> usize {
        (self.sim_duration * self.sample_rate).round() as usize
    }

    pub fn test_rows(&self) -> usize {
        (self.test_window * self.sample_rate).round() as usize
    }

    /// Rows of the test window for a given delay.
    pub fn test_window_rows(&self, delay: f64) -> Result<Range<usize>> {
        window_rows(self.sample_rate, self.training_rows(), delay, self.test_window)
    }

    /// Training scenarios per class; testing gets the remainder.
    pub fn training_per_class(&self) -> usize {
        self.samples_per_class.div_ceil(2)
    }
}

fn window_rows(sample_rate: f64, total_rows: usize, start: f64, len: f64) -> Result<Range<usize>> {
    let first = (start * sample_rate).round() as usize;
    let count = (len * sample_rate).round() as usize;
    if start < 0.0 || count == 0 || first + count > total_rows {
        return Err(SimError::InvalidConfig(format!(
            "window [{start}, {}) s does not fit in a {:.3} s trace",
            start + len,
            total_rows as f64 / sample_rate
        )));
    }
    Ok(first..first + count)
}

/// Cuts `[start, start + len)` seconds out of a full trace starting at 0 s.
pub fn extract_window(trace: &MTSeries, start: f64, len: f64) -> Result<MTSeries> {
    let rows = window_rows(trace.sample_rate(), trace.len(), start, len)?;
    Ok(trace.window(rows.start, rows.len())?)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn scenario_seed(base: u64, class: usize, index: usize, attempt: usize) -> u64 {
    let s = splitmix(splitmix(base) ^ class as u64);
    splitmix(splitmix(s ^ index as u64) ^ attempt as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDraw {
    pub class: usize,
    pub index: usize,
    pub attempt: usize,
    pub seed: u64,
    pub load_scale: f64,
    /// Machine-base damping per generator.
    pub damping: Vec<f64>,
    pub frequency_hz: f64,
    pub noise_seed: u64,
}

impl ScenarioDraw {
    pub fn new(config: &ScenarioConfig, n_gen: usize, class: usize, index: usize, attempt: usize) -> Self {
        let seed = scenario_seed(config.rng_seed, class, index, attempt);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |r: [f64; 2]| if r[0] == r[1] { r[0] } else { rng.random_range(r[0]..r[1]) };
        let load_scale = uniform(config.load_scale_range);
        let damping = (0..n_gen).map(|_| uniform(config.damping_range)).collect();
        let frequency_hz = config.base_mode_freq_f0 * uniform(config.frequency_band);
        let noise_seed = rng.next_u64();
        Self {
            class,
            index,
            attempt,
            seed,
            load_scale,
            damping,
            frequency_hz,
            noise_seed,
        }
    }

    fn meta(&self, grid: &GridModel) -> BTreeMap<String, String> {
        let damping: Vec<String> = self.damping.iter().map(f64::to_string).collect();
        BTreeMap::from([
            ("target".to_string(), grid.generators[self.class].id.clone()),
            ("load_scale".to_string(), self.load_scale.to_string()),
            ("frequency_hz".to_string(), self.frequency_hz.to_string()),
            ("damping".to_string(), damping.join("/")),
            ("seed".to_string(), self.seed.to_string()),
            ("attempt".to_string(), self.attempt.to_string()),
            ("noise_seed".to_string(), self.noise_seed.to_string()),
        ])
    }
}

/// Noise-free full trace for one draw. Power-flow failure or loss of
/// synchronism come back as rejection errors.
pub fn simulate_scenario(grid: &GridModel, config: &ScenarioConfig, draw: &ScenarioDraw) -> Result<MTSeries> {
    let scaled = grid.with_load_scale(draw.load_scale, true);
    let pf = solve_powerflow(&scaled)?;
    let sys = reduce_network(&scaled, &pf)?;
    let disturbance = DisturbanceSpec {
        target: draw.class,
        amplitude_k: config.amplitude_k,
        frequency_hz: draw.frequency_hz,
        start_time: config.disturbance_start,
    };
    let mut trace = integrate(&sys, Some(&disturbance), &draw.damping, &config.integration())?;
    if config.remove_operating_point {
        trace.subtract_initial();
    }
    trace.to_series()
}

/// Adds white Gaussian noise to every row of `trace`. Each channel's noise
/// variance is its signal variance over `window` divided by `10^(snr/10)`.
pub fn add_noise(trace: &MTSeries, window: Range<usize>, snr_db: f64, seed: u64) -> Result<MTSeries> {
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(trace.clone());
    }
    if window.is_empty() || window.end > trace.len() {
        return Err(SimError::InvalidConfig("noise window outside the trace".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = trace.values().clone();
    let ratio = 10f64.powf(snr_db / 10.0);
    for j in 0..trace.channels() {
        let col = trace.values().column(j);
        let w = &col.as_slice()[window.clone()];
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let sigma = (var / ratio).sqrt();
        if sigma == 0.0 {
            continue;
        }
        let normal = Normal::new(0.0, sigma).map_err(|e| SimError::Numerical(e.to_string()))?;
        for i in 0..trace.len() {
            values[(i, j)] += normal.sample(&mut rng);
        }
    }
    Ok(MTSeries::new(values, trace.sample_rate(), trace.channel_names().to_vec(), trace.start_time())?)
}

#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub training: Dataset,
    pub testing: Dataset,
    /// Full noisy traces of the testing scenarios, aligned with `testing`.
    pub testing_traces: Vec<MTSeries>,
    pub accepted: usize,
    pub rejected: usize,
}

struct Outcome {
    sample: LabeledSample,
    trace: MTSeries,
    training: bool,
    rejected: usize,
}

fn run_scenario(
    grid: &GridModel,
    config: &ScenarioConfig,
    class: usize,
    index: usize,
    max_attempts: usize,
) -> Result<Outcome> {
    let training = index < config.training_per_class();
    let window = if training {
        0..config.training_rows()
    } else {
        config.test_window_rows(config.test_delay_d)?
    };
    let mut rejected = 0;
    for attempt in 0..max_attempts {
        let draw = ScenarioDraw::new(config, grid.generators.len(), class, index, attempt);
        let clean = match simulate_scenario(grid, config, &draw) {
            Ok(t) => t,
            Err(e) if e.is_rejection() => {
                log::info!("scenario {class}/{index} attempt {attempt} rejected: {e}");
                rejected += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let noisy = add_noise(&clean, window.clone(), config.noise_snr_db, draw.noise_seed)?;
        let series = noisy.window(window.start, window.len())?;
        let label = grid.generators[class].id.clone();
        let id = format!("{label}_{index:04}");
        let mut sample = LabeledSample::new(id, series, label);
        sample.meta = draw.meta(grid);
        return Ok(Outcome {
            sample,
            trace: noisy,
            training,
            rejected,
        });
    }
    Err(SimError::TooManyRejections {
        requested: 1,
        rejected,
    })
}

/// Simulates `samples_per_class` scenarios for every generator and splits
/// each class into training (first half) and testing (second half).
pub fn generate_dataset(grid: &GridModel, config: &ScenarioConfig) -> Result<GeneratedData> {
    config.validate()?;
    grid.validate()?;
    let classes: Vec<String> = grid.generators.iter().map(|g| g.id.clone()).collect();
    let requested = classes.len() * config.samples_per_class;
    let max_attempts = 10 * requested + 1;
    let jobs: Vec<(usize, usize)> = (0..classes.len())
        .flat_map(|c| (0..config.samples_per_class).map(move |i| (c, i)))
        .collect();
    let outcomes: Vec<Result<Outcome>> = jobs
        .par_iter()
        .map(|&(c, i)| run_scenario(grid, config, c, i, max_attempts))
        .collect();

    let mut rejected = 0;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut traces = Vec::new();
    for outcome in outcomes {
        let o = match outcome {
            Ok(o) => o,
            Err(SimError::TooManyRejections { .. }) => {
                return Err(SimError::TooManyRejections {
                    requested,
                    rejected: rejected + max_attempts,
                })
            }
            Err(e) => return Err(e),
        };
        rejected += o.rejected;
        assert_eq!(o.sample.label, o.sample.meta["target"]);
        if o.training {
            train.push(o.sample);
        } else {
            test.push(o.sample);
            traces.push(o.trace);
        }
    }
    if rejected > 10 * requested {
        return Err(SimError::TooManyRejections { requested, rejected });
    }
    Ok(GeneratedData {
        training: Dataset::new(train, classes.clone())?,
        testing: Dataset::new(test, classes)?,
        testing_traces: traces,
        accepted: requested,
        rejected,
    })
}

/// Re-cuts the test windows of a generated test set at another delay.
pub fn rewindow(testing: &Dataset, traces: &[MTSeries], delay: f64, window: f64) -> Result<Dataset> {
    if traces.len() != testing.len() {
        return Err(SimError::InvalidConfig("trace count differs from test samples".into()));
    }
    let samples = testing
        .samples()
        .iter()
        .zip(traces)
        .map(|(s, t)| {
            Ok(LabeledSample {
                series: extract_window(t, delay, window)?,
                ..s.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(samples, testing.class_set().to_vec())?)
}
