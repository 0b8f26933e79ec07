//! AC power flow by polar Newton–Raphson, used to produce ground-truth
//! voltage snapshots from per-bus power injections.
//!
//! Quantities are in per unit on a 1 MVA system base. Branch impedances are
//! converted on the nominal voltage of their from-bus. Buses joined by closed
//! switches are solved as one node and share a voltage.

use crate::exec::Execution;
use crate::grid_model::{fuse_switch_buses, BranchKind, BusKind, FusedBuses, GridTopology};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use thiserror::Error;

pub const SYSTEM_BASE_MVA: f64 = 1.0;

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("topology is disconnected ({0} components)")]
    Disconnected(usize),
    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("no injection given for bus {0}")]
    MissingInjection(u32),
    #[error("transformer {0} has no impedance")]
    TransformerWithoutImpedance(u32),
    #[error("tolerance must be positive")]
    BadTolerance,
    #[error("power flow did not converge at step {step} after {iterations} iterations")]
    NotConverged { step: usize, iterations: usize },
    #[error("n_steps must be at least 1")]
    NoSteps,
}

/// Complex power at one bus; consumption negative, generation positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusPower {
    pub p_mw: f64,
    pub q_mvar: f64,
}

/// Per-bus power injections. The slack entry, if present, is ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerInjection(pub BTreeMap<u32, BusPower>);

impl PowerInjection {
    pub fn zeros(topology: &GridTopology) -> Self {
        Self(
            topology
                .buses
                .iter()
                .filter(|b| b.kind != BusKind::Slack)
                .map(|b| {
                    (
                        b.id,
                        BusPower {
                            p_mw: 0.0,
                            q_mvar: 0.0,
                        },
                    )
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusVoltage {
    pub v_pu: f64,
    pub theta_rad: f64,
}

impl BusVoltage {
    pub fn rectangular(&self) -> (f64, f64) {
        (
            self.v_pu * self.theta_rad.cos(),
            self.v_pu * self.theta_rad.sin(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageSolution {
    pub voltages: BTreeMap<u32, BusVoltage>,
    pub converged: bool,
    pub iterations: usize,
    /// Max absolute mismatch before each update and at termination.
    pub mismatch_history: Vec<f64>,
}

impl VoltageSolution {
    pub fn max_mismatch(&self) -> f64 {
        self.mismatch_history
            .last()
            .copied()
            .unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PowerFlowOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 30,
        }
    }
}

/// Bus admittance matrix over fused nodes.
#[derive(Debug, Clone)]
pub struct AdmittanceMatrix {
    pub fused: FusedBuses,
    pub y: DMatrix<Complex64>,
    pub slack_node: usize,
}

pub fn admittance_matrix(topology: &GridTopology) -> Result<AdmittanceMatrix, PowerFlowError> {
    let components = topology.conducting_components();
    if components > 1 {
        return Err(PowerFlowError::Disconnected(components));
    }
    let fused = fuse_switch_buses(topology);
    let n = fused.node_count;
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for br in topology.branches.iter().filter(|b| b.in_service) {
        match br.kind {
            BranchKind::Switch => continue,
            BranchKind::Transformer if br.r_ohm.is_none() => {
                return Err(PowerFlowError::TransformerWithoutImpedance(br.id));
            }
            _ => {}
        }
        let (a, b) = (
            fused.bus_to_node[&br.from_bus],
            fused.bus_to_node[&br.to_bus],
        );
        if a == b {
            continue;
        }
        let kv = topology
            .bus(br.from_bus)
            .expect("validated endpoint")
            .nominal_kv;
        let z_base = kv * kv / SYSTEM_BASE_MVA;
        let z = Complex64::new(br.r_ohm.unwrap_or(0.0), br.x_ohm.unwrap_or(0.0)) / z_base;
        let series = z.inv();
        y[(a, a)] += series;
        y[(b, b)] += series;
        y[(a, b)] -= series;
        y[(b, a)] -= series;
    }
    let slack = topology.slack_bus().expect("validated slack");
    Ok(AdmittanceMatrix {
        slack_node: fused.bus_to_node[&slack.id],
        fused,
        y,
    })
}

/// Net per-unit injection per fused node.
fn node_injections(
    topology: &GridTopology,
    ybus: &AdmittanceMatrix,
    injections: &PowerInjection,
) -> Result<Vec<Complex64>, PowerFlowError> {
    let mut s = vec![Complex64::new(0.0, 0.0); ybus.fused.node_count];
    for bus in topology.buses.iter().filter(|b| b.kind != BusKind::Slack) {
        let power = injections
            .0
            .get(&bus.id)
            .ok_or(PowerFlowError::MissingInjection(bus.id))?;
        s[ybus.fused.bus_to_node[&bus.id]] +=
            Complex64::new(power.p_mw, power.q_mvar) / SYSTEM_BASE_MVA;
    }
    Ok(s)
}

fn calculated_power(y: &DMatrix<Complex64>, v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let current: Complex64 = (0..n).map(|k| y[(i, k)] * v[k]).sum();
            v[i] * current.conj()
        })
        .collect()
}

/// Solves the AC power flow from a flat start with all non-slack buses PQ.
pub fn solve_power_flow(
    topology: &GridTopology,
    injections: &PowerInjection,
    options: &PowerFlowOptions,
) -> Result<VoltageSolution, PowerFlowError> {
    if options.tol.is_nan() || options.tol <= 0.0 {
        return Err(PowerFlowError::BadTolerance);
    }
    let ybus = admittance_matrix(topology)?;
    let s_spec = node_injections(topology, &ybus, injections)?;
    let n = ybus.fused.node_count;
    let pq: Vec<usize> = (0..n).filter(|&i| i != ybus.slack_node).collect();
    let m = pq.len();
    let y = &ybus.y;

    let mut vm = vec![1.0; n];
    let mut va = vec![0.0; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    loop {
        let v: Vec<Complex64> = (0..n)
            .map(|i| Complex64::from_polar(vm[i], va[i]))
            .collect();
        let s_calc = calculated_power(y, &v);
        let mut mismatch = DVector::zeros(2 * m);
        for (row, &i) in pq.iter().enumerate() {
            let d = s_spec[i] - s_calc[i];
            mismatch[row] = d.re;
            mismatch[m + row] = d.im;
        }
        let max_mismatch = mismatch.amax();
        history.push(max_mismatch);
        if max_mismatch < options.tol {
            converged = true;
            break;
        }
        if iterations >= options.max_iter {
            break;
        }

        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for (r, &i) in pq.iter().enumerate() {
            let (p_i, q_i) = (s_calc[i].re, s_calc[i].im);
            let (g_ii, b_ii) = (y[(i, i)].re, y[(i, i)].im);
            for (c, &k) in pq.iter().enumerate() {
                if i == k {
                    jac[(r, c)] = -q_i - b_ii * vm[i] * vm[i];
                    jac[(r, m + c)] = p_i / vm[i] + g_ii * vm[i];
                    jac[(m + r, c)] = p_i - g_ii * vm[i] * vm[i];
                    jac[(m + r, m + c)] = q_i / vm[i] - b_ii * vm[i];
                } else {
                    let (g, b) = (y[(i, k)].re, y[(i, k)].im);
                    if g == 0.0 && b == 0.0 {
                        continue;
                    }
                    let angle = va[i] - va[k];
                    let (sin, cos) = angle.sin_cos();
                    let t1 = g * sin - b * cos;
                    let t2 = g * cos + b * sin;
                    jac[(r, c)] = vm[i] * vm[k] * t1;
                    jac[(r, m + c)] = vm[i] * t2;
                    jac[(m + r, c)] = -vm[i] * vm[k] * t2;
                    jac[(m + r, m + c)] = vm[i] * t1;
                }
            }
        }
        let step = jac
            .lu()
            .solve(&mismatch)
            .filter(|dx| dx.iter().all(|x| x.is_finite()))
            .ok_or(PowerFlowError::SingularJacobian {
                iteration: iterations,
            })?;
        for (r, &i) in pq.iter().enumerate() {
            va[i] += step[r];
            vm[i] += step[m + r];
        }
        iterations += 1;
    }

    let voltages = topology
        .buses
        .iter()
        .map(|bus| {
            let node = ybus.fused.bus_to_node[&bus.id];
            (
                bus.id,
                BusVoltage {
                    v_pu: vm[node],
                    theta_rad: va[node],
                },
            )
        })
        .collect();
    Ok(VoltageSolution {
        voltages,
        converged,
        iterations,
        mismatch_history: history,
    })
}

/// Largest |ΔP|, |ΔQ| over non-slack nodes when injections are recomputed
/// from the solved voltages.
pub fn power_balance_residual(
    topology: &GridTopology,
    injections: &PowerInjection,
    solution: &VoltageSolution,
) -> Result<f64, PowerFlowError> {
    let ybus = admittance_matrix(topology)?;
    let s_spec = node_injections(topology, &ybus, injections)?;
    let mut v = vec![Complex64::new(0.0, 0.0); ybus.fused.node_count];
    for (bus, volt) in &solution.voltages {
        v[ybus.fused.bus_to_node[bus]] = Complex64::from_polar(volt.v_pu, volt.theta_rad);
    }
    let s_calc = calculated_power(&ybus.y, &v);
    Ok((0..v.len())
        .filter(|&i| i != ybus.slack_node)
        .map(|i| {
            let d = s_spec[i] - s_calc[i];
            d.re.abs().max(d.im.abs())
        })
        .fold(0.0, f64::max))
}

/// One solved time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub topology_id: String,
    pub injections: PowerInjection,
    pub voltages: VoltageSolution,
}

/// Synthetic load profile: per-bus base load drawn uniformly in
/// `[0.5, 1.5] × nominal_p_mw`, scaled by a sinusoidal daily shape and
/// multiplicative uniform noise of ±`noise`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub nominal_p_mw: f64,
    /// Reactive to active power ratio.
    pub q_ratio: f64,
    pub daily_amplitude: f64,
    pub noise: f64,
    pub steps_per_day: usize,
}

impl Default for LoadProfile {
    fn default() -> Self {
        Self {
            nominal_p_mw: 0.25,
            q_ratio: 0.3,
            daily_amplitude: 0.3,
            noise: 0.05,
            steps_per_day: 96,
        }
    }
}

impl LoadProfile {
    fn daily_shape(&self, step: usize) -> f64 {
        let phase = 2.0 * PI * (step % self.steps_per_day) as f64 / self.steps_per_day as f64;
        1.0 + self.daily_amplitude * (phase - PI / 2.0).sin()
    }

    /// Injections for every step. Base loads come from the seed's first
    /// stream; step `t` draws its noise from stream `t + 1`, so the
    /// schedule does not depend on evaluation order.
    pub fn injections(
        &self,
        topology: &GridTopology,
        n_steps: usize,
        seed: u64,
    ) -> Vec<PowerInjection> {
        let loads: Vec<u32> = topology
            .buses
            .iter()
            .filter(|b| b.kind != BusKind::Slack)
            .map(|b| b.id)
            .collect();
        let mut base_rng = ChaCha8Rng::seed_from_u64(seed);
        let base: Vec<f64> = loads
            .iter()
            .map(|_| base_rng.gen_range(0.5..1.5) * self.nominal_p_mw)
            .collect();
        (0..n_steps)
            .map(|step| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(step as u64 + 1);
                let shape = self.daily_shape(step);
                PowerInjection(
                    loads
                        .iter()
                        .zip(&base)
                        .map(|(&bus, &b)| {
                            let p = b * shape * (1.0 + rng.gen_range(-self.noise..=self.noise));
                            (
                                bus,
                                BusPower {
                                    p_mw: -p,
                                    q_mvar: -p * self.q_ratio,
                                },
                            )
                        })
                        .collect(),
                )
            })
            .collect()
    }
}

/// Solves `n_steps` power flows driven by a seeded load profile.
pub fn generate_time_series(
    topology: &GridTopology,
    topology_id: &str,
    n_steps: usize,
    profile: &LoadProfile,
    seed: u64,
    execution: Execution,
) -> Result<Vec<Snapshot>, PowerFlowError> {
    if n_steps == 0 {
        return Err(PowerFlowError::NoSteps);
    }
    let injections = profile.injections(topology, n_steps, seed);
    let steps: Vec<(usize, PowerInjection)> = injections.into_iter().enumerate().collect();
    let options = PowerFlowOptions::default();
    execution
        .map(&steps, |(step, inj)| {
            let solution = solve_power_flow(topology, inj, &options)?;
            if !solution.converged {
                return Err(PowerFlowError::NotConverged {
                    step: *step,
                    iterations: solution.iterations,
                });
            }
            Ok(Snapshot {
                topology_id: topology_id.to_string(),
                injections: inj.clone(),
                voltages: solution,
            })
        })
        .into_iter()
        .collect()
}
