//! The coupled state/control ODE `q̈ = f + u`,
//! `ü = −(∂f/∂q̇)ᵀu̇ − [d/dt(∂f/∂q̇) − ∂f/∂q]ᵀu`, and a fixed-step RK4
//! integrator shared with the costate oracle.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_finite_slice, ensure_len, Error, Result};
use crate::model::MechanicalSystem;

/// Grid uniformity tolerance, relative to the step.
pub const UNIFORM_TOL: f64 = 1e-12;

/// Stacked `(q, q̇, u, u̇)` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub u: DVector<f64>,
    pub udot: DVector<f64>,
    pub t: f64,
}

impl ExtendedState {
    pub fn new(
        q: DVector<f64>,
        qdot: DVector<f64>,
        u: DVector<f64>,
        udot: DVector<f64>,
        t: f64,
    ) -> Result<Self> {
        let n = q.len();
        ensure_len("qdot", n, qdot.len())?;
        ensure_len("u", n, u.len())?;
        ensure_len("udot", n, udot.len())?;
        let s = Self { q, qdot, u, udot, t };
        s.check_finite()?;
        Ok(s)
    }

    /// Uncontrolled state `(q, q̇)` with `u = u̇ = 0`.
    pub fn uncontrolled(q: DVector<f64>, qdot: DVector<f64>, t: f64) -> Result<Self> {
        let n = q.len();
        Self::new(q, qdot, DVector::zeros(n), DVector::zeros(n), t)
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    pub fn check_finite(&self) -> Result<()> {
        ensure_finite_slice("extended state", self.q.as_slice())?;
        ensure_finite_slice("extended state", self.qdot.as_slice())?;
        ensure_finite_slice("extended state", self.u.as_slice())?;
        ensure_finite_slice("extended state", self.udot.as_slice())?;
        if !self.t.is_finite() {
            return Err(Error::NonFinite("extended state"));
        }
        Ok(())
    }

    pub fn pack(&self) -> DVector<f64> {
        let n = self.dof();
        let mut x = DVector::zeros(4 * n);
        x.rows_mut(0, n).copy_from(&self.q);
        x.rows_mut(n, n).copy_from(&self.qdot);
        x.rows_mut(2 * n, n).copy_from(&self.u);
        x.rows_mut(3 * n, n).copy_from(&self.udot);
        x
    }

    pub fn unpack(n: usize, x: &DVector<f64>, t: f64) -> Result<Self> {
        ensure_len("packed extended state", 4 * n, x.len())?;
        Ok(Self {
            q: x.rows(0, n).into_owned(),
            qdot: x.rows(n, n).into_owned(),
            u: x.rows(2 * n, n).into_owned(),
            udot: x.rows(3 * n, n).into_owned(),
            t,
        })
    }
}

/// Time derivative of an [`ExtendedState`]: `(q̇, q̈, u̇, ü)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedDerivative {
    pub qdot: DVector<f64>,
    pub qddot: DVector<f64>,
    pub udot: DVector<f64>,
    pub uddot: DVector<f64>,
}

impl ExtendedDerivative {
    pub fn pack(&self) -> DVector<f64> {
        let n = self.qdot.len();
        let mut x = DVector::zeros(4 * n);
        x.rows_mut(0, n).copy_from(&self.qdot);
        x.rows_mut(n, n).copy_from(&self.qddot);
        x.rows_mut(2 * n, n).copy_from(&self.udot);
        x.rows_mut(3 * n, n).copy_from(&self.uddot);
        x
    }
}

/// `d/dt(∂f/∂q̇)` along the flow with `q̈` given.
pub(crate) fn dfdqdot_rate(
    sys: &MechanicalSystem,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    qddot: &DVector<f64>,
    t: f64,
) -> Result<DMatrix<f64>> {
    let n = sys.dof();
    let sp = sys.eval_second_partials(q, qdot, t)?;
    let mut rate = sys.dfdqdot_time_rate(q, qdot, t)?;
    for k in 0..n {
        rate += &sp.wrt_q[k] * qdot[k] + &sp.wrt_qdot[k] * qddot[k];
    }
    Ok(rate)
}

/// Right-hand side of the costate-free optimal-control system.
pub fn rhs(sys: &MechanicalSystem, s: &ExtendedState) -> Result<ExtendedDerivative> {
    let n = sys.dof();
    ensure_len("q", n, s.q.len())?;
    ensure_len("u", n, s.u.len())?;
    ensure_len("udot", n, s.udot.len())?;
    let f = sys.eval_f(&s.q, &s.qdot, s.t)?;
    let p = sys.eval_partials(&s.q, &s.qdot, s.t)?;
    let qddot = f + &s.u;
    let rate = dfdqdot_rate(sys, &s.q, &s.qdot, &qddot, s.t)?;
    let uddot = -(p.df_dqdot.transpose() * &s.udot) - (rate - p.df_dq).transpose() * &s.u;
    ensure_finite_slice("control acceleration", uddot.as_slice())?;
    Ok(ExtendedDerivative {
        qdot: s.qdot.clone(),
        qddot,
        udot: s.udot.clone(),
        uddot,
    })
}

/// Integrates the costate-free system from `s0` to `t_final` with RK4.
pub fn integrate(
    sys: &MechanicalSystem,
    s0: &ExtendedState,
    t_final: f64,
    h: f64,
) -> Result<Trajectory> {
    let n = sys.dof();
    ensure_len("initial state", n, s0.dof())?;
    s0.check_finite()?;
    let (grid, xs) = rk4(
        |t, x| {
            let s = ExtendedState::unpack(n, x, t)?;
            Ok(rhs(sys, &s)?.pack())
        },
        s0.t,
        t_final,
        &s0.pack(),
        h,
    )?;
    let states = grid
        .iter()
        .zip(&xs)
        .map(|(&t, x)| ExtendedState::unpack(n, x, t))
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(grid, states, h)
}

/// Fixed-step grid `t0 + k·h` ending exactly at `tf`; the last step is
/// shortened when `tf − t0` is not a multiple of `h`.
pub fn time_grid(t0: f64, tf: f64, h: f64) -> Result<Vec<f64>> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidParams(format!("step must be positive, got {h}")));
    }
    if !(t0.is_finite() && tf.is_finite() && tf > t0) {
        return Err(Error::InvalidParams(format!("need t_final > t0, got [{t0}, {tf}]")));
    }
    if t0 + h == t0 {
        return Err(Error::StepUnderflow(h));
    }
    let ratio = (tf - t0) / h;
    let whole = ratio.round();
    let steps = if (ratio - whole).abs() < 1e-9 {
        whole as usize
    } else {
        ratio.floor() as usize + 1
    };
    if steps == 0 {
        return Err(Error::StepUnderflow(h));
    }
    let mut grid: Vec<f64> = (0..steps).map(|k| t0 + k as f64 * h).collect();
    grid.push(tf);
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::StepUnderflow(h));
    }
    Ok(grid)
}

/// Classical RK4 over [`time_grid`]; errors from the right-hand side abort.
pub(crate) fn rk4<F>(
    mut f: F,
    t0: f64,
    tf: f64,
    x0: &DVector<f64>,
    h: f64,
) -> Result<(Vec<f64>, Vec<DVector<f64>>)>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let grid = time_grid(t0, tf, h)?;
    let mut xs = Vec::with_capacity(grid.len());
    let mut x = x0.clone();
    xs.push(x.clone());
    for w in grid.windows(2) {
        let (t, dt) = (w[0], w[1] - w[0]);
        let k1 = f(t, &x)?;
        let k2 = f(t + 0.5 * dt, &(&x + &k1 * (0.5 * dt)))?;
        let k3 = f(t + 0.5 * dt, &(&x + &k2 * (0.5 * dt)))?;
        let k4 = f(t + dt, &(&x + &k3 * dt))?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        ensure_finite_slice("integrated state", x.as_slice())?;
        xs.push(x.clone());
    }
    Ok((grid, xs))
}

/// Time grid with one [`ExtendedState`] per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: Vec<f64>,
    states: Vec<ExtendedState>,
    step: f64,
}

impl Trajectory {
    pub fn new(grid: Vec<f64>, states: Vec<ExtendedState>, step: f64) -> Result<Self> {
        ensure_len("trajectory states", grid.len(), states.len())?;
        if grid.is_empty() {
            return Err(Error::TooShort { needed: 1, have: 0 });
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParams("grid must be strictly increasing".into()));
        }
        let n = states[0].dof();
        for s in &states {
            ensure_len("trajectory state", n, s.dof())?;
        }
        Ok(Self { grid, states, step })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn states(&self) -> &[ExtendedState] {
        &self.states
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn dof(&self) -> usize {
        self.states[0].dof()
    }

    pub fn first(&self) -> &ExtendedState {
        &self.states[0]
    }

    pub fn last(&self) -> &ExtendedState {
        &self.states[self.states.len() - 1]
    }

    /// All consecutive spacings equal `step` to [`UNIFORM_TOL`] relative.
    pub fn is_uniform(&self) -> bool {
        self.grid
            .windows(2)
            .all(|w| ((w[1] - w[0]) - self.step).abs() <= UNIFORM_TOL * self.step.max(1.0))
    }

    /// Cubic Hermite interpolation of `q` (with `q̇`) and `u` (with `u̇`);
    /// `q̇` and `u̇` are interpolated linearly.
    pub fn interpolate(&self, t: f64) -> Result<ExtendedState> {
        let (t0, tf) = (self.grid[0], self.grid[self.len() - 1]);
        if !(t >= t0 && t <= tf) {
            return Err(Error::Domain(format!("t = {t} outside [{t0}, {tf}]")));
        }
        let k = match self.grid.partition_point(|&g| g <= t) {
            0 => 0,
            i if i >= self.len() => return Ok(self.last().clone()),
            i => i - 1,
        };
        let (a, b) = (&self.states[k], &self.states[k + 1]);
        let dt = self.grid[k + 1] - self.grid[k];
        let s = (t - self.grid[k]) / dt;
        let h00 = 2.0 * s.powi(3) - 3.0 * s * s + 1.0;
        let h10 = s.powi(3) - 2.0 * s * s + s;
        let h01 = -2.0 * s.powi(3) + 3.0 * s * s;
        let h11 = s.powi(3) - s * s;
        let herm = |p0: &DVector<f64>, m0: &DVector<f64>, p1: &DVector<f64>, m1: &DVector<f64>| {
            p0 * h00 + m0 * (h10 * dt) + p1 * h01 + m1 * (h11 * dt)
        };
        Ok(ExtendedState {
            q: herm(&a.q, &a.qdot, &b.q, &b.qdot),
            qdot: &a.qdot * (1.0 - s) + &b.qdot * s,
            u: herm(&a.u, &a.udot, &b.u, &b.udot),
            udot: &a.udot * (1.0 - s) + &b.udot * s,
            t,
        })
    }

    /// Central difference in time of `pick(state)` at interior node `k`.
    pub fn central_difference<F>(&self, k: usize, pick: F) -> Result<DVector<f64>>
    where
        F: Fn(&ExtendedState) -> &DVector<f64>,
    {
        if k == 0 || k + 1 >= self.len() {
            return Err(Error::TooShort { needed: k + 2, have: self.len() });
        }
        let dt = self.grid[k + 1] - self.grid[k - 1];
        Ok((pick(&self.states[k + 1]) - pick(&self.states[k - 1])) / dt)
    }

    /// Second central difference in time of `pick(state)` at interior node `k`.
    pub fn second_difference<F>(&self, k: usize, pick: F) -> Result<DVector<f64>>
    where
        F: Fn(&ExtendedState) -> &DVector<f64>,
    {
        if !self.is_uniform() {
            return Err(Error::NonUniformGrid);
        }
        if k == 0 || k + 1 >= self.len() {
            return Err(Error::TooShort { needed: k + 2, have: self.len() });
        }
        let h = self.step;
        Ok((pick(&self.states[k + 1]) - pick(&self.states[k]) * 2.0 + pick(&self.states[k - 1]))
            / (h * h))
    }

    /// Copy with `u` and `u̇` multiplied by `scale`.
    pub fn scale_control(&self, scale: f64) -> Self {
        let states = self
            .states
            .iter()
            .map(|s| ExtendedState {
                u: &s.u * scale,
                udot: &s.udot * scale,
                ..s.clone()
            })
            .collect();
        Self {
            grid: self.grid.clone(),
            states,
            step: self.step,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.dof();
        writeln!(w, "{}", csv_header(n, false))?;
        for s in &self.states {
            let mut row = vec![fmt_num(s.t)];
            for v in [&s.q, &s.qdot, &s.u, &s.udot] {
                row.extend(v.iter().map(|&x| fmt_num(x)));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// CSV header for an `n`-dof trajectory, with costate columns on request.
pub fn csv_header(n: usize, costate: bool) -> String {
    let mut cols = vec![String::from("t")];
    for prefix in ["q", "qd", "u", "ud"] {
        cols.extend((1..=n).map(|i| format!("{prefix}{i}")));
    }
    if costate {
        for prefix in ["lam1_", "lam2_"] {
            cols.extend((1..=n).map(|i| format!("{prefix}{i}")));
        }
    }
    cols.join(",")
}

/// 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}
