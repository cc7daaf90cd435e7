use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::Action;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, Dense, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QNetArch {
    /// Observation width `d`; the cell sees `d + 1` inputs per step (flag appended).
    pub dims: usize,
    pub hidden: usize,
}

/// Gated recurrent cell over the flag-augmented window followed by a scalar head.
///
/// Per step, with `c = [x; h]`:
/// `z = sigmoid(Wz c)`, `r = sigmoid(Wr c)`, `n = tanh(Wn [x; r*h])`, `h' = (1 - z) n + z h`.
/// The value is `Q = w . h_T + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct QNet {
    arch: QNetArch,
    update_gate: Dense,
    reset_gate: Dense,
    candidate: Dense,
    head: Dense,
    pub params: ParamSet,
}

#[derive(Debug, Clone, Default)]
struct StepTrace {
    concat: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    reset_concat: Vec<f64>,
    n: Vec<f64>,
    h_prev: Vec<f64>,
}

/// Forward activations kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct QTrace {
    steps: Vec<StepTrace>,
    h_last: Vec<f64>,
    pub q: f64,
}

impl QNet {
    pub fn zeros(arch: QNetArch) -> Result<Self> {
        if arch.dims == 0 || arch.hidden == 0 {
            return Err(Error::InvalidArgs(format!("invalid Q-network architecture {arch:?}")));
        }
        let inp = arch.dims + 1 + arch.hidden;
        let mut cursor = 0;
        let update_gate = Dense::alloc(&mut cursor, inp, arch.hidden);
        let reset_gate = Dense::alloc(&mut cursor, inp, arch.hidden);
        let candidate = Dense::alloc(&mut cursor, inp, arch.hidden);
        let head = Dense::alloc(&mut cursor, arch.hidden, 1);
        Ok(Self { arch, update_gate, reset_gate, candidate, head, params: ParamSet::zeros(cursor) })
    }

    pub fn new(arch: QNetArch, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in net.layers() {
            layer.init(&mut net.params.values, &mut rng);
        }
        Ok(net)
    }

    pub fn arch(&self) -> QNetArch {
        self.arch
    }

    pub fn layers(&self) -> [Dense; 4] {
        [self.update_gate, self.reset_gate, self.candidate, self.head]
    }

    pub fn head(&self) -> Dense {
        self.head
    }

    fn check(&self, window: ArrayView2<'_, f64>) -> Result<()> {
        if window.ncols() != self.arch.dims || window.nrows() == 0 {
            return Err(Error::ShapeError(format!(
                "Q-network expects windows with {} columns, got {:?}",
                self.arch.dims,
                window.shape()
            )));
        }
        Ok(())
    }

    /// Runs the recurrence over `window` with the given action flag.
    pub fn forward(&self, window: ArrayView2<'_, f64>, action: Action) -> Result<QTrace> {
        self.check(window)?;
        let p = &self.params.values;
        let hdim = self.arch.hidden;
        let xdim = self.arch.dims + 1;
        let flag = action.flag();
        let mut h = vec![0.0; hdim];
        let mut steps = Vec::with_capacity(window.nrows());
        for row in window.rows() {
            let mut concat = Vec::with_capacity(xdim + hdim);
            concat.extend(row.iter().copied());
            concat.push(flag);
            concat.extend_from_slice(&h);

            let mut z = vec![0.0; hdim];
            let mut r = vec![0.0; hdim];
            self.update_gate.forward(p, &concat, &mut z);
            self.reset_gate.forward(p, &concat, &mut r);
            z.iter_mut().for_each(|v| *v = sigmoid(*v));
            r.iter_mut().for_each(|v| *v = sigmoid(*v));

            let mut reset_concat = concat.clone();
            for k in 0..hdim {
                reset_concat[xdim + k] = r[k] * h[k];
            }
            let mut n = vec![0.0; hdim];
            self.candidate.forward(p, &reset_concat, &mut n);
            n.iter_mut().for_each(|v| *v = v.tanh());

            let h_next: Vec<f64> = (0..hdim).map(|k| (1.0 - z[k]) * n[k] + z[k] * h[k]).collect();
            steps.push(StepTrace { concat, z, r, reset_concat, n, h_prev: std::mem::replace(&mut h, h_next) });
        }
        let mut q = [0.0];
        self.head.forward(p, &h, &mut q);
        if !q[0].is_finite() {
            return Err(Error::NonFiniteOutput);
        }
        Ok(QTrace { steps, h_last: h, q: q[0] })
    }

    pub fn q(&self, window: ArrayView2<'_, f64>, action: Action) -> Result<f64> {
        self.forward(window, action).map(|t| t.q)
    }

    /// Adds `dq * dQ/dparams` into the gradient buffer.
    pub fn backward(&mut self, trace: &QTrace, dq: f64) {
        let hdim = self.arch.hidden;
        let xdim = self.arch.dims + 1;
        let p = &self.params.values;
        let g = &mut self.params.grads;

        let mut dh = vec![0.0; hdim];
        self.head.backward(p, g, &trace.h_last, &[dq], Some(&mut dh));

        let mut dconcat = vec![0.0; xdim + hdim];
        for st in trace.steps.iter().rev() {
            let mut dh_prev: Vec<f64> = (0..hdim).map(|k| dh[k] * st.z[k]).collect();
            let mut dn_pre = vec![0.0; hdim];
            let mut dz_pre = vec![0.0; hdim];
            for k in 0..hdim {
                dn_pre[k] = dh[k] * (1.0 - st.z[k]) * (1.0 - st.n[k] * st.n[k]);
                dz_pre[k] = dh[k] * (st.h_prev[k] - st.n[k]) * st.z[k] * (1.0 - st.z[k]);
            }

            dconcat.fill(0.0);
            self.candidate.backward(p, g, &st.reset_concat, &dn_pre, Some(&mut dconcat));
            let mut dr_pre = vec![0.0; hdim];
            for k in 0..hdim {
                let d_rh = dconcat[xdim + k];
                dh_prev[k] += d_rh * st.r[k];
                dr_pre[k] = d_rh * st.h_prev[k] * st.r[k] * (1.0 - st.r[k]);
            }

            dconcat.fill(0.0);
            self.update_gate.backward(p, g, &st.concat, &dz_pre, Some(&mut dconcat));
            self.reset_gate.backward(p, g, &st.concat, &dr_pre, Some(&mut dconcat));
            for k in 0..hdim {
                dh_prev[k] += dconcat[xdim + k];
            }
            dh = dh_prev;
        }
    }
}

/// Values of both flag-augmented states for one window.
pub fn q_values(net: &QNet, window: ArrayView2<'_, f64>) -> Result<(f64, f64)> {
    Ok((net.q(window, Action::Normal)?, net.q(window, Action::Anomalous)?))
}
