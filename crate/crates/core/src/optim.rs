//! Monotone first-order minimisation over real parameter vectors.
//!
//! Search directions come from limited-memory BFGS (plain steepest descent
//! when `memory == 0`); every step is accepted only under the Armijo
//! condition, so the recorded objective never increases.

use std::collections::VecDeque;

#[derive(Clone, Debug)]
pub struct DescentConfig {
    pub max_iterations: usize,
    /// L-BFGS history length; 0 selects steepest descent.
    pub memory: usize,
    pub initial_step: f64,
    pub armijo: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Stop when the relative objective change stays below this for
    /// `plateau_window` consecutive iterations.
    pub plateau_tolerance: f64,
    pub plateau_window: usize,
    pub gradient_tolerance: f64,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            memory: 10,
            initial_step: 1.0,
            armijo: 1e-4,
            shrink: 0.5,
            max_backtracks: 40,
            plateau_tolerance: 1e-7,
            plateau_window: 5,
            gradient_tolerance: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StopReason {
    MaxIterations,
    Plateau,
    SmallGradient,
    LineSearchFailed,
    NonFinite { iteration: usize },
}

#[derive(Clone, Debug)]
pub struct DescentResult {
    pub params: Vec<f64>,
    pub value: f64,
    /// Objective after each accepted iteration, starting with the initial value.
    pub trace: Vec<f64>,
    pub stop: StopReason,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimises `f`, where `f(x)` returns `(value, gradient)`.
pub fn minimize<F>(mut x: Vec<f64>, config: &DescentConfig, mut f: F) -> DescentResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (mut value, mut grad) = f(&x);
    let mut trace = vec![value];
    if !value.is_finite() {
        return DescentResult { params: x, value, trace, stop: StopReason::NonFinite { iteration: 0 } };
    }
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut step_scale = config.initial_step;
    let mut flat = 0usize;
    let mut stop = StopReason::MaxIterations;

    for iteration in 1..=config.max_iterations {
        let gnorm = dot(&grad, &grad).sqrt();
        if gnorm < config.gradient_tolerance {
            stop = StopReason::SmallGradient;
            break;
        }
        // Two-loop recursion.
        let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &dir);
            for (d, yi) in dir.iter_mut().zip(y) {
                *d -= a * yi;
            }
            alphas.push(a);
        }
        let mut step = 1.0;
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            for d in dir.iter_mut() {
                *d *= gamma;
            }
        } else {
            step = step_scale / gnorm.max(1e-300);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &dir);
            for (d, si) in dir.iter_mut().zip(s) {
                *d += (a - b) * si;
            }
        }
        let mut slope = dot(&grad, &dir);
        if slope >= 0.0 {
            history.clear();
            dir = grad.iter().map(|g| -g).collect();
            slope = -gnorm * gnorm;
            step = step_scale / gnorm.max(1e-300);
        }

        let mut accepted = None;
        for _ in 0..config.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (tv, tg) = f(&trial);
            if tv.is_finite() && tv <= value + config.armijo * step * slope {
                accepted = Some((trial, tv, tg));
                break;
            }
            if !tv.is_finite() && step < 1e-300 {
                break;
            }
            step *= config.shrink;
        }
        let Some((nx, nv, ng)) = accepted else {
            stop = if value.is_finite() { StopReason::LineSearchFailed } else { StopReason::NonFinite { iteration } };
            break;
        };
        if config.memory > 0 {
            let s: Vec<f64> = nx.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = ng.iter().zip(&grad).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
                history.push_back((s, y, 1.0 / sy));
                if history.len() > config.memory {
                    history.pop_front();
                }
            }
        } else {
            step_scale = (step * gnorm * 2.0).max(1e-12);
        }
        let rel = (value - nv).abs() / value.abs().max(1e-300);
        x = nx;
        value = nv;
        grad = ng;
        trace.push(value);
        if rel < config.plateau_tolerance {
            flat += 1;
            if flat >= config.plateau_window {
                stop = StopReason::Plateau;
                break;
            }
        } else {
            flat = 0;
        }
    }
    DescentResult { params: x, value, trace, stop }
}

/// Central finite-difference gradient with step `h`.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(x: &[f64], h: f64, mut f: F) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}
