//! Seeded synthetic regions with known ground truth.

use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::contact::ContactMap;
use crate::model::{step_state, CompartmentState, ModelParams};
use crate::npi::{NpiVector, NPI_COUNT, OXCGRT_MAX};
use crate::training::RegionObservations;
use crate::Result;

/// How the generator picks NPI levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NpiPolicy {
    /// Each index changes level at random times, uniformly over its range.
    Random,
    /// Index changes still happen at random times, but the new level pulls
    /// the contact rate toward a target that falls when incidence is high
    /// and rises when it is low.
    Feedback,
    /// No NPI ever changes.
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub days: usize,
    pub population: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta_t: f64,
    /// Infected fraction at day 0.
    pub i0: f64,
    /// Cumulative cases at day 0, persons.
    pub initial_cumulative: f64,
    pub active_inputs: usize,
    pub policy: NpiPolicy,
    /// Mean days between level changes of one index.
    pub mean_hold_days: f64,
    /// Alpha-row process-noise intensity, 1/day per sqrt(day).
    pub alpha_noise: f64,
    /// Relative standard deviation of daily reported counts.
    pub report_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            days: 400,
            population: 1e7,
            beta: 0.219,
            gamma: 1.0 / 7.0,
            delta_t: 0.1,
            i0: 1e-5,
            initial_cumulative: 60.0,
            active_inputs: 4,
            policy: NpiPolicy::Feedback,
            mean_hold_days: 21.0,
            alpha_noise: 0.003,
            report_noise: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRegion {
    pub data: RegionObservations,
    pub map: ContactMap,
    pub params: ModelParams,
    /// True state at the start of every day.
    pub states: Vec<CompartmentState>,
    /// True new infections per day, persons.
    pub new_infections: Vec<f64>,
}

impl SyntheticRegion {
    pub fn alpha(&self) -> Vec<f64> {
        self.states.iter().map(|x| x.alpha).collect()
    }
}

/// Linear map with `active` non-zero weights whose full-range effect adds
/// about 1/day on top of an intercept near 0.12/day.
pub fn random_linear_map(rng: &mut impl Rng, active: usize) -> ContactMap {
    let mut idx: Vec<usize> = (0..NPI_COUNT).collect();
    for k in 0..active.min(NPI_COUNT) {
        let j = rng.random_range(k..NPI_COUNT);
        idx.swap(k, j);
    }
    let mut a = [0.0; NPI_COUNT];
    let raw: Vec<f64> = (0..active).map(|_| rng.random_range(0.5..1.5)).collect();
    let full: f64 = idx.iter().zip(&raw).map(|(&k, w)| w * OXCGRT_MAX[k]).sum();
    let target = rng.random_range(0.9..1.1);
    for (&k, w) in idx.iter().zip(&raw) {
        a[k] = w * target / full;
    }
    let b = rng.random_range(0.10..0.14);
    ContactMap::linear(a, b).expect("weights are non-negative")
}

fn draw_level(rng: &mut ChaCha8Rng, k: usize) -> f64 {
    rng.random_range(0..=OXCGRT_MAX[k] as i64) as f64
}

/// Level for index `k` whose drive lies near `target`, picked at random among
/// the levels within `slack` of the best one.
fn steer_level(rng: &mut ChaCha8Rng, map: &ContactMap, u: &NpiVector, k: usize, target: f64) -> f64 {
    let max = OXCGRT_MAX[k] as usize;
    let miss: Vec<f64> = (0..=max)
        .map(|level| {
            let mut v = *u;
            v.0[k] = level as f64;
            (map.drive(&v) - target).abs()
        })
        .collect();
    let best = miss.iter().cloned().fold(f64::INFINITY, f64::min);
    let near: Vec<usize> = (0..=max).filter(|&l| miss[l] <= best + 0.08).collect();
    near[rng.random_range(0..near.len())] as f64
}

/// Generates a region from a random linear map.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticRegion> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let map = random_linear_map(&mut rng, spec.active_inputs);
    generate_with_map(spec, map, &mut rng)
}

/// Generates a region from a given map.
pub fn generate_with_map(spec: &SyntheticSpec, map: ContactMap, rng: &mut ChaCha8Rng) -> Result<SyntheticRegion> {
    let params = ModelParams::new(spec.beta, spec.gamma, spec.population, spec.delta_t, 1.0)?;
    let substeps = (1.0 / spec.delta_t).round() as usize;
    let n = spec.population;

    let mut u = NpiVector::zeros();
    if spec.policy == NpiPolicy::Feedback {
        for k in 0..NPI_COUNT {
            u.0[k] = steer_level(rng, &map, &u, k, spec.beta + 0.08);
        }
    }
    let mut x = CompartmentState::new(1.0 - spec.i0 - spec.initial_cumulative / n, spec.i0, map.drive(&u))?;
    let mut next_change: [f64; NPI_COUNT] = core::array::from_fn(|_| rng.random_range(0.0..spec.mean_hold_days));

    let mut states = Vec::with_capacity(spec.days);
    let mut npis = Vec::with_capacity(spec.days);
    let mut new_infections = Vec::with_capacity(spec.days);
    let mut cumulative = Vec::with_capacity(spec.days);
    let mut reported = spec.initial_cumulative;
    let mut incidence = 0.0;

    for day in 0..spec.days {
        if spec.policy != NpiPolicy::Constant {
            let offset = if incidence > 3e-4 {
                -0.06
            } else if incidence < 3e-5 {
                0.08
            } else {
                0.0
            };
            let target = (spec.beta + offset) / x.s.max(1e-3);
            let mut due: [bool; NPI_COUNT] = core::array::from_fn(|k| day as f64 >= next_change[k]);
            if spec.policy == NpiPolicy::Feedback && offset != 0.0 {
                let active: Vec<usize> = (0..NPI_COUNT).filter(|&k| map.a[k] > 0.0).collect();
                let off_target = (map.drive(&u) - target) * offset < -0.04;
                if off_target && !active.is_empty() && rng.random_bool(0.3) {
                    due[active[rng.random_range(0..active.len())]] = true;
                }
            }
            for k in 0..NPI_COUNT {
                if due[k] {
                    u.0[k] = match spec.policy {
                        NpiPolicy::Feedback => steer_level(rng, &map, &u, k, target),
                        _ => draw_level(rng, k),
                    };
                    next_change[k] = day as f64 + 1.0 + rng.random_range(0.0..2.0 * spec.mean_hold_days);
                }
            }
        }
        states.push(x);
        npis.push(u);
        cumulative.push(Some(reported.round()));

        let s_before = x.s;
        let drive = map.drive(&u);
        let sd = spec.alpha_noise / spec.delta_t.sqrt();
        for _ in 0..substeps {
            let w = sd * rng.sample::<f64, _>(StandardNormal);
            x = step_state(&x, drive, &params, [0.0, 0.0, w])?.state;
        }
        let infected = (s_before - x.s) * n;
        incidence = infected / n;
        new_infections.push(infected);
        let noisy = infected * (1.0 + spec.report_noise * rng.sample::<f64, _>(StandardNormal));
        reported += noisy.max(0.0);
    }

    Ok(SyntheticRegion {
        data: RegionObservations {
            region_id: alloc::format!("synthetic-{}", spec.seed),
            population: n,
            cumulative,
            npis,
        },
        map,
        params,
        states,
        new_infections,
    })
}

/// Labelled batch of regions with consecutive seeds.
pub fn batch(spec: &SyntheticSpec, count: usize) -> Result<Vec<SyntheticRegion>> {
    (0..count as u64)
        .map(|k| {
            let mut s = spec.clone();
            s.seed = spec.seed + k;
            generate(&s)
        })
        .collect()
}

pub fn region_name(seed: u64) -> String {
    alloc::format!("synthetic-{seed}")
}
