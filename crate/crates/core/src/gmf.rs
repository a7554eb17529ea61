//! Gap minimization flow.
//!
//! A small per-clip network `φ(h, 1/P)` predicts the gap to add at each of
//! `P` steps, carrying the initial features `H⁰` towards the encoder's
//! estimate `H¹`. Training matches the whole displacement (global term) and
//! every intermediate state against the straight line from `H⁰` to `H¹`
//! (local term).

use crate::attention::xavier;
use crate::diffcore::{rng, Matrix, ParamStore, ParamVars, Tape, Var};
use crate::error::{Error, Result};

pub const W1: &str = "flow.w1";
pub const B1: &str = "flow.b1";
pub const W2: &str = "flow.w2";
pub const B2: &str = "flow.b2";

/// Two-layer per-clip gap network. The input is a clip row with the step size appended.
#[derive(Clone, Debug, PartialEq)]
pub struct GapNetParams {
    /// `(D+1)×D_h`
    pub w1: Matrix,
    /// `1×D_h`
    pub b1: Matrix,
    /// `D_h×D`
    pub w2: Matrix,
    /// `1×D`
    pub b2: Matrix,
}

impl GapNetParams {
    pub fn init(d: usize, hidden: usize, seed: u64) -> Self {
        let mut r = rng::stream(rng::derive(seed, &[rng::tag("gapnet-init")]));
        Self {
            w1: xavier(d + 1, hidden, &mut r),
            b1: Matrix::zeros(1, hidden),
            w2: xavier(hidden, d, &mut r),
            b2: Matrix::zeros(1, d),
        }
    }

    /// Random first layer, zero output layer: the flow starts as the identity.
    pub fn init_identity(d: usize, hidden: usize, seed: u64) -> Self {
        Self {
            w2: Matrix::zeros(hidden, d),
            ..Self::init(d, hidden, seed)
        }
    }

    pub fn zeros(d: usize, hidden: usize) -> Self {
        Self {
            w1: Matrix::zeros(d + 1, hidden),
            b1: Matrix::zeros(1, hidden),
            w2: Matrix::zeros(hidden, d),
            b2: Matrix::zeros(1, d),
        }
    }

    pub fn d_model(&self) -> usize {
        self.w2.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w2.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h) = (self.d_model(), self.hidden());
        if self.w1.shape() != (d + 1, h) || self.b1.shape() != (1, h) || self.b2.shape() != (1, d) {
            return Err(Error::shape(
                "gap network",
                format!(
                    "w1 {:?}, b1 {:?}, w2 {:?}, b2 {:?}",
                    self.w1.shape(),
                    self.b1.shape(),
                    self.w2.shape(),
                    self.b2.shape()
                ),
            ));
        }
        Ok(())
    }

    pub fn insert_into(&self, store: &mut ParamStore) -> Result<()> {
        store.insert(W1, self.w1.clone(), true)?;
        store.insert(B1, self.b1.clone(), false)?;
        store.insert(W2, self.w2.clone(), true)?;
        store.insert(B2, self.b2.clone(), false)?;
        Ok(())
    }

    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let get = |n: &str| {
            store
                .get(n)
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {n}")))
        };
        let p = Self {
            w1: get(W1)?,
            b1: get(B1)?,
            w2: get(W2)?,
            b2: get(B2)?,
        };
        p.validate()?;
        Ok(p)
    }

    fn bind_constant(&self, tape: &mut Tape) -> GapNetVars {
        GapNetVars {
            w1: tape.constant(self.w1.clone()),
            b1: tape.constant(self.b1.clone()),
            w2: tape.constant(self.w2.clone()),
            b2: tape.constant(self.b2.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GapNetVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl GapNetVars {
    pub fn from_params(vars: &ParamVars) -> Self {
        Self {
            w1: vars.get(W1),
            b1: vars.get(B1),
            w2: vars.get(W2),
            b2: vars.get(B2),
        }
    }
}

/// One rollout: the gaps `g_1..g_P` and states `Ĥ^{0/P}..Ĥ^{P/P}`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowTrajectory {
    pub steps: usize,
    pub gaps: Vec<Matrix>,
    pub states: Vec<Matrix>,
}

impl FlowTrajectory {
    pub fn final_state(&self) -> &Matrix {
        self.states.last().expect("trajectory has at least the initial state")
    }
}

/// `(1 − j/P)·H⁰ + (j/P)·H¹`: the straight path from `H⁰` (j = 0) to `H¹` (j = P).
pub fn interpolate_target(h0: &Matrix, h1: &Matrix, j: usize, steps: usize) -> Result<Matrix> {
    check_step(j, steps)?;
    if h0.shape() != h1.shape() {
        return Err(Error::shape("interpolate_target", format!("{:?} vs {:?}", h0.shape(), h1.shape())));
    }
    let t = j as f64 / steps as f64;
    Ok(h0.zip_map(h1, |a, b| (1.0 - t) * a + t * b))
}

fn check_step(j: usize, steps: usize) -> Result<()> {
    if steps == 0 {
        return Err(Error::InvalidArgument("flow needs at least one step".into()));
    }
    if j > steps {
        return Err(Error::InvalidArgument(format!("step {j} beyond {steps}")));
    }
    Ok(())
}

pub fn interpolate_on(tape: &mut Tape, h0: Var, h1: Var, j: usize, steps: usize) -> Var {
    let t = j as f64 / steps as f64;
    let a = tape.scale(h0, 1.0 - t);
    let b = tape.scale(h1, t);
    tape.add(a, b)
}

/// `g = ReLU([h, step]·W1 + b1)·W2 + b2`, applied to each clip row independently.
pub fn gap_step_on(tape: &mut Tape, phi: &GapNetVars, h: Var, step_size: f64) -> Var {
    let x = tape.append_column(h, step_size);
    let hidden = tape.matmul(x, phi.w1);
    let hidden = tape.add_row(hidden, phi.b1);
    let hidden = tape.relu(hidden);
    let out = tape.matmul(hidden, phi.w2);
    tape.add_row(out, phi.b2)
}

pub fn gap_step(phi: &GapNetParams, h_prev: &Matrix, step_size: f64) -> Result<Matrix> {
    phi.validate()?;
    if !(step_size > 0.0 && step_size <= 1.0) {
        return Err(Error::InvalidArgument(format!("step size must lie in (0, 1], got {step_size}")));
    }
    if h_prev.cols() != phi.d_model() {
        return Err(Error::shape(
            "gap_step",
            format!("input width {}, network width {}", h_prev.cols(), phi.d_model()),
        ));
    }
    let mut tape = Tape::new();
    let vars = phi.bind_constant(&mut tape);
    let h = tape.constant(h_prev.clone());
    let g = gap_step_on(&mut tape, &vars, h, step_size);
    Ok(tape.value(g).clone())
}

/// Trajectory handles on a tape.
#[derive(Clone, Debug)]
pub struct TrajectoryVars {
    pub gaps: Vec<Var>,
    pub states: Vec<Var>,
}

impl TrajectoryVars {
    pub fn final_state(&self) -> Var {
        *self.states.last().expect("non-empty trajectory")
    }
}

/// Autoregressive rollout: `Ĥ^{j/P} = Ĥ^{(j−1)/P} + φ(Ĥ^{(j−1)/P}, 1/P)`.
pub fn rollout_on(tape: &mut Tape, phi: &GapNetVars, h0: Var, steps: usize) -> TrajectoryVars {
    let step = 1.0 / steps as f64;
    let mut states = vec![h0];
    let mut gaps = Vec::with_capacity(steps);
    let mut h = h0;
    for _ in 0..steps {
        let g = gap_step_on(tape, phi, h, step);
        h = tape.add(h, g);
        gaps.push(g);
        states.push(h);
    }
    TrajectoryVars { gaps, states }
}

/// Teacher-forced rollout: step `j` starts from the interpolation target at `j − 1`
/// instead of the previous prediction.
pub fn rollout_teacher_forced_on(tape: &mut Tape, phi: &GapNetVars, h0: Var, h1: Var, steps: usize) -> TrajectoryVars {
    let step = 1.0 / steps as f64;
    let mut states = vec![h0];
    let mut gaps = Vec::with_capacity(steps);
    for j in 1..=steps {
        let start = if j == 1 { h0 } else { interpolate_on(tape, h0, h1, j - 1, steps) };
        let g = gap_step_on(tape, phi, start, step);
        let s = tape.add(start, g);
        gaps.push(g);
        states.push(s);
    }
    TrajectoryVars { gaps, states }
}

pub fn rollout(phi: &GapNetParams, h0: &Matrix, steps: usize) -> Result<FlowTrajectory> {
    phi.validate()?;
    check_step(0, steps)?;
    if h0.cols() != phi.d_model() {
        return Err(Error::shape(
            "rollout",
            format!("input width {}, network width {}", h0.cols(), phi.d_model()),
        ));
    }
    let mut tape = Tape::new();
    let vars = phi.bind_constant(&mut tape);
    let h = tape.constant(h0.clone());
    let traj = rollout_on(&mut tape, &vars, h, steps);
    for (j, &s) in traj.states.iter().enumerate() {
        if !tape.value(s).is_finite() {
            return Err(Error::NonFinite {
                op: format!("rollout step {j}"),
            });
        }
    }
    Ok(FlowTrajectory {
        steps,
        gaps: traj.gaps.iter().map(|&g| tape.value(g).clone()).collect(),
        states: traj.states.iter().map(|&s| tape.value(s).clone()).collect(),
    })
}

/// Global and local flow terms for one sample as tape scalars.
pub fn gmf_loss_on(tape: &mut Tape, traj: &TrajectoryVars, h0: Var, h1: Var) -> (Var, Var) {
    let steps = traj.gaps.len();
    let direction = tape.sub(h1, h0);
    let total_gap = tape.add_all(&traj.gaps);
    let miss = tape.sub(direction, total_gap);
    let global = tape.sum_squares(miss);

    let mut terms = Vec::with_capacity(steps);
    for j in 1..=steps {
        let target = interpolate_on(tape, h0, h1, j, steps);
        let diff = tape.sub(target, traj.states[j]);
        terms.push(tape.sum_squares(diff));
    }
    let local = tape.add_all(&terms);
    let local = tape.scale(local, 1.0 / steps as f64);
    (global, local)
}

/// `(‖(H¹ − H⁰) − Σ g_j‖², (1/P)·Σ_j ‖H^{j/P} − Ĥ^{j/P}‖²)`.
pub fn gmf_loss(traj: &FlowTrajectory, h0: &Matrix, h1: &Matrix, steps: usize) -> Result<(f64, f64)> {
    if traj.steps != steps || traj.gaps.len() != steps || traj.states.len() != steps + 1 {
        return Err(Error::InvalidArgument(format!(
            "trajectory has {} steps, loss asked for {steps}",
            traj.steps
        )));
    }
    if h0.shape() != h1.shape() || traj.states[0].shape() != h0.shape() {
        return Err(Error::shape("gmf_loss", "trajectory and endpoints differ in shape"));
    }
    let mut tape = Tape::new();
    let h0v = tape.constant(h0.clone());
    let h1v = tape.constant(h1.clone());
    let vars = TrajectoryVars {
        gaps: traj.gaps.iter().map(|g| tape.constant(g.clone())).collect(),
        states: traj.states.iter().map(|s| tape.constant(s.clone())).collect(),
    };
    let (g, l) = gmf_loss_on(&mut tape, &vars, h0v, h1v);
    Ok((tape.scalar(g), tape.scalar(l)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{finite_diff_grad, gradient_of, max_relative_error, sgd_step, OptimizerState, ParamStore};
    use rand::Rng;

    fn seeded(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = rng::stream(seed);
        Matrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let h0 = seeded(3, 4, 1);
        let h1 = seeded(3, 4, 2);
        assert_eq!(interpolate_target(&h0, &h1, 0, 5).unwrap(), h0);
        assert_eq!(interpolate_target(&h0, &h1, 5, 5).unwrap(), h1);
        let mid = interpolate_target(&h0, &h1, 1, 2).unwrap();
        assert!(mid.max_abs_diff(&h0.add(&h1).scale(0.5)) < 1e-15);
        assert!(interpolate_target(&h0, &h1, 6, 5).is_err());
        assert!(interpolate_target(&h0, &h1, 0, 0).is_err());
    }

    #[test]
    fn zero_network_gives_zero_gaps_and_flat_rollout() {
        let phi = GapNetParams::zeros(4, 3);
        let h0 = seeded(5, 4, 3);
        assert_eq!(gap_step(&phi, &h0, 0.25).unwrap().max_abs(), 0.0);
        let traj = rollout(&phi, &h0, 4).unwrap();
        assert!(traj.states.iter().all(|s| s == &h0));
    }

    #[test]
    fn gap_step_is_row_equivariant() {
        let phi = GapNetParams::init(4, 6, 9);
        let h = seeded(5, 4, 10);
        let perm = [3, 0, 4, 1, 2];
        let a = gap_step(&phi, &h.permute_rows(&perm), 0.5).unwrap();
        let b = gap_step(&phi, &h, 0.5).unwrap().permute_rows(&perm);
        assert_eq!(a, b);
    }

    #[test]
    fn single_step_rollout() {
        let phi = GapNetParams::init(4, 6, 11);
        let h0 = seeded(3, 4, 12);
        let traj = rollout(&phi, &h0, 1).unwrap();
        assert_eq!(traj.states[1], h0.add(&gap_step(&phi, &h0, 1.0).unwrap()));
    }

    #[test]
    fn step_size_is_validated() {
        let phi = GapNetParams::zeros(2, 2);
        assert!(gap_step(&phi, &Matrix::zeros(1, 2), 0.0).is_err());
        assert!(gap_step(&phi, &Matrix::zeros(1, 2), 1.5).is_err());
        assert!(rollout(&phi, &Matrix::zeros(1, 2), 0).is_err());
    }

    #[test]
    fn exact_constant_gaps_have_zero_loss() {
        let h0 = seeded(4, 3, 5);
        let h1 = seeded(4, 3, 6);
        for steps in [1, 2, 3, 4, 8] {
            let g = h1.sub(&h0).scale(1.0 / steps as f64);
            let mut states = vec![h0.clone()];
            for j in 1..=steps {
                states.push(interpolate_target(&h0, &h1, j, steps).unwrap());
            }
            let traj = FlowTrajectory {
                steps,
                gaps: vec![g; steps],
                states,
            };
            let (global, local) = gmf_loss(&traj, &h0, &h1, steps).unwrap();
            assert!(global < 1e-28 && local < 1e-28, "P={steps}: {global} {local}");
        }
    }

    #[test]
    fn one_step_error_shows_in_global_term() {
        let h0 = seeded(2, 3, 7);
        let h1 = seeded(2, 3, 8);
        let e = seeded(2, 3, 9);
        let g = h1.sub(&h0).add(&e);
        let traj = FlowTrajectory {
            steps: 1,
            states: vec![h0.clone(), h0.add(&g)],
            gaps: vec![g],
        };
        let (global, _) = gmf_loss(&traj, &h0, &h1, 1).unwrap();
        assert!((global - e.sum_squares()).abs() < 1e-12);
        assert!(gmf_loss(&traj, &h0, &h1, 2).is_err());
    }

    fn flow_loss_on(tape: &mut Tape, vars: &ParamVars, h0: &Matrix, h1: &Matrix, steps: usize, forced: bool) -> Var {
        let phi = GapNetVars::from_params(vars);
        let x0 = tape.constant(h0.clone());
        let x1 = tape.constant(h1.clone());
        let traj = if forced {
            rollout_teacher_forced_on(tape, &phi, x0, x1, steps)
        } else {
            rollout_on(tape, &phi, x0, steps)
        };
        let (g, l) = gmf_loss_on(tape, &traj, x0, x1);
        tape.add(g, l)
    }

    #[test]
    fn flow_loss_gradients_match_finite_differences() {
        for seed in 0..6 {
            let mut store = ParamStore::new();
            GapNetParams::init(5, 6, seed).insert_into(&mut store).unwrap();
            let h0 = seeded(3, 5, 100 + seed);
            let h1 = seeded(3, 5, 200 + seed);
            for forced in [false, true] {
                let f = |t: &mut Tape, v: &ParamVars| Ok(flow_loss_on(t, v, &h0, &h1, 3, forced));
                let (_, analytic) = gradient_of(&store, f).unwrap();
                let numeric = finite_diff_grad(&store, f, 1e-5).unwrap();
                let err = max_relative_error(&analytic, &numeric);
                assert!(err < 1e-4, "seed {seed} forced {forced}: {err}");
            }
        }
    }

    #[test]
    fn rollout_matches_manual_chain() {
        let phi = GapNetParams::init(4, 5, 21);
        let h0 = seeded(3, 4, 22);
        let traj = rollout(&phi, &h0, 4).unwrap();
        let mut h = h0.clone();
        for j in 1..=4 {
            let g = gap_step(&phi, &h, 0.25).unwrap();
            assert_eq!(traj.gaps[j - 1], g);
            h = h.add(&g);
            assert_eq!(traj.states[j], h);
        }
        let folded = traj.gaps.iter().fold(h0, |acc, g| acc.add(g));
        assert_eq!(&folded, traj.final_state());
    }

    #[test]
    fn phi_alone_fits_a_frozen_pair() {
        let (m, d, steps) = (4, 8, 4);
        let h0 = seeded(m, d, 31);
        let h1 = seeded(m, d, 32);
        let mut store = ParamStore::new();
        GapNetParams::init_identity(d, d, 33).insert_into(&mut store).unwrap();
        let mut opt = OptimizerState::new(&store, 1);
        opt.weight_decay = 0.0;
        let mut last = f64::INFINITY;
        for _ in 0..2000 {
            let (loss, grads) =
                gradient_of(&store, |t, v| Ok(flow_loss_on(t, v, &h0, &h1, steps, false))).unwrap();
            last = loss;
            if loss < 1e-3 {
                break;
            }
            sgd_step(&mut store, &grads, &mut opt, 0.003).unwrap();
        }
        assert!(last < 1e-3, "loss {last}");
    }
}
