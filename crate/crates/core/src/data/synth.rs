//! Seeded synthetic degradation families for tests and demos.
//!
//! Battery: constant-current charging voltage
//! `v(t) = v_min + (v_max - v_min) * (1 - exp(-t / tau_i))` with the time
//! constant growing (`tau_i = tau0 * (1 + rho * i)`) and the charge duration
//! shrinking (`t_end = t0 * (1 - delta)^i`) as the cell ages.
//!
//! Engine: smooth random operating conditions feeding a fixed nonlinear
//! pressure map whose gain decays linearly with the stage index, followed by
//! block smoothing and a joint min-max fit over every stage.

use serde::{Deserialize, Serialize};

use super::dataset::{Column, StageDataset};
use super::preprocess::{smooth_downsample_columns, MinMaxScaler};
use crate::autodiff::{derive_seed, Rng, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatterySynthParams {
    pub stages: usize,
    pub points: usize,
    pub noise_std: f64,
    pub seed: u64,
    pub v_min: f64,
    pub v_max: f64,
    /// Charging current (A), a constant input column (about C/3 for a
    /// 2.2 Ah cell).
    pub current: f64,
    /// Time constant of a fresh cell (h).
    pub tau0: f64,
    /// Relative growth of the time constant per stage.
    pub rho: f64,
    /// Charge duration of a fresh cell (h).
    pub t0: f64,
    /// Relative shrink of the charge duration per stage.
    pub delta: f64,
}

impl Default for BatterySynthParams {
    fn default() -> Self {
        BatterySynthParams {
            stages: 50,
            points: 200,
            noise_std: 0.0,
            seed: 0,
            v_min: 2.7,
            v_max: 4.2,
            current: 0.74,
            tau0: 0.8,
            rho: 0.01,
            t0: 3.0,
            delta: 0.005,
        }
    }
}

impl BatterySynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("battery synth: {m}")));
        if self.stages == 0 {
            return bad("need at least one stage");
        }
        if self.points < 2 {
            return bad("need at least two points per stage");
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise std must be >= 0");
        }
        if !(self.v_max > self.v_min) {
            return bad("v_max must exceed v_min");
        }
        if !(self.tau0 > 0.0) || !(self.t0 > 0.0) {
            return bad("tau0 and t0 must be positive");
        }
        if !(0.0..1.0).contains(&self.rho) || !(0.0..1.0).contains(&self.delta) {
            return bad("rho and delta must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn tau(&self, stage: usize) -> f64 {
        self.tau0 * (1.0 + self.rho * stage as f64)
    }

    pub fn t_end(&self, stage: usize) -> f64 {
        self.t0 * (1.0 - self.delta).powi(stage as i32)
    }

    /// Noiseless voltage at time `t` (h) of `stage`.
    pub fn voltage(&self, stage: usize, t: f64) -> f64 {
        self.v_min + (self.v_max - self.v_min) * (1.0 - (-t / self.tau(stage)).exp())
    }
}

/// Battery stages with inputs `(t, current)` and output `voltage`.
pub fn synth_battery(p: &BatterySynthParams) -> Result<Vec<StageDataset>> {
    p.validate()?;
    let mut rng = Rng::new(derive_seed(p.seed, 0xBA77));
    let inputs = vec![Column::new("time", "h"), Column::new("current", "A")];
    let outputs = vec![Column::new("voltage", "V")];
    (0..p.stages)
        .map(|i| {
            let t_end = p.t_end(i);
            let n = p.points;
            let mut x = Vec::with_capacity(2 * n);
            let mut y = Vec::with_capacity(n);
            for k in 0..n {
                let t = t_end * k as f64 / (n - 1) as f64;
                x.extend([t, p.current]);
                y.push(p.voltage(i, t) + rng.normal(0.0, p.noise_std));
            }
            StageDataset::new(
                i,
                Tensor::matrix(n, 2, x)?,
                Tensor::matrix(n, 1, y)?,
                inputs.clone(),
                outputs.clone(),
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineSynthParams {
    pub stages: usize,
    /// Raw samples per stage before smoothing.
    pub raw_points: usize,
    /// Smoothing/downsampling window.
    pub window: usize,
    pub noise_std: f64,
    pub seed: u64,
    /// Linear gain loss per stage.
    pub gamma: f64,
    /// Step size of the operating-condition random walks.
    pub walk_step: f64,
}

impl Default for EngineSynthParams {
    fn default() -> Self {
        EngineSynthParams {
            stages: 80,
            raw_points: 5000,
            window: 50,
            noise_std: 0.05,
            seed: 0,
            gamma: 0.002,
            walk_step: 0.02,
        }
    }
}

impl EngineSynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("engine synth: {m}")));
        if self.stages == 0 {
            return bad("need at least one stage");
        }
        if self.window == 0 || self.raw_points < self.window {
            return bad("raw points must cover at least one window");
        }
        if !(self.noise_std >= 0.0) || !(self.walk_step >= 0.0) {
            return bad("noise and walk step must be >= 0");
        }
        if !(self.gamma >= 0.0) || self.gamma * (self.stages - 1) as f64 >= 1.0 {
            return bad("gamma must keep every stage gain positive");
        }
        Ok(())
    }
}

/// Normalized operating conditions `[altitude, mach, throttle, inlet_temp]`,
/// each in `[0, 1]`, mapped to physical units by [`engine_inputs`].
pub type Conditions = [f64; 4];

/// Physical inputs `(time, altitude, mach, throttle, inlet_temp)`.
pub fn engine_inputs(time: f64, c: &Conditions) -> [f64; 5] {
    [
        time,
        35000.0 * c[0],
        0.2 + 0.6 * c[1],
        20.0 + 70.0 * c[2],
        450.0 + 80.0 * c[3],
    ]
}

/// Noiseless combustor pressure of `stage` under normalized conditions `c`.
pub fn engine_pressure(c: &Conditions, stage: usize, gamma: f64) -> f64 {
    let g = 10.0 + 4.0 * (2.0 * (c[2] - 0.5)).tanh() + 1.5 * (1.5 * (c[1] - 0.4)).tanh()
        - 2.0 * (1.2 * (c[0] - 0.5)).tanh()
        + 0.8 * (c[3] - 0.5).tanh() * (1.0 + c[2]);
    g * (1.0 - gamma * stage as f64)
}

fn reflect_unit(v: f64) -> f64 {
    let mut v = v.rem_euclid(2.0);
    if v > 1.0 {
        v = 2.0 - v;
    }
    v
}

fn engine_conditions(rng: &mut Rng, n: usize, step: f64) -> Vec<Conditions> {
    let mut c: Conditions = [0.0; 4];
    for v in &mut c {
        *v = rng.uniform(0.2, 0.8);
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(c);
        for v in &mut c {
            *v = reflect_unit(*v + rng.normal(0.0, step));
        }
    }
    out
}

/// Engine stages with inputs `(time, altitude, mach, throttle, inlet_temp)`
/// and output `pressure`, smoothed and jointly min-max scaled.
pub fn synth_engine(p: &EngineSynthParams) -> Result<Vec<StageDataset>> {
    p.validate()?;
    let mut raw = Vec::with_capacity(p.stages);
    for i in 0..p.stages {
        let mut rng = Rng::new(derive_seed(p.seed, 0xE000 + i as u64));
        let conds = engine_conditions(&mut rng, p.raw_points, p.walk_step);
        let mut x = Vec::with_capacity(5 * p.raw_points);
        let mut y = Vec::with_capacity(p.raw_points);
        for (k, c) in conds.iter().enumerate() {
            x.extend(engine_inputs(k as f64, c));
            y.push(engine_pressure(c, i, p.gamma) + rng.normal(0.0, p.noise_std));
        }
        let x = smooth_downsample_columns(&Tensor::matrix(p.raw_points, 5, x)?, p.window)?;
        let y = smooth_downsample_columns(&Tensor::matrix(p.raw_points, 1, y)?, p.window)?;
        raw.push((x, y));
    }
    let xs: Vec<&Tensor> = raw.iter().map(|(x, _)| x).collect();
    let ys: Vec<&Tensor> = raw.iter().map(|(_, y)| y).collect();
    let sx = MinMaxScaler::fit(&xs)?;
    let sy = MinMaxScaler::fit(&ys)?;
    let inputs = vec![
        Column::new("time", "s"),
        Column::new("altitude", "ft"),
        Column::new("mach", "-"),
        Column::new("throttle", "deg"),
        Column::new("inlet_temp", "R"),
    ];
    let outputs = vec![Column::new("pressure", "psia")];
    raw.iter()
        .enumerate()
        .map(|(i, (x, y))| {
            StageDataset::new(
                i,
                sx.apply(x)?,
                sy.apply(y)?,
                inputs.clone(),
                outputs.clone(),
            )
        })
        .collect()
}
