//! Standard LSTM cell with backpropagation through time.
//!
//! Gates: `i, f, o = sigmoid`, candidate `g = tanh`,
//! `c = f.c_prev + i.g`, `h = o.tanh(c)`. Initial hidden and cell states
//! are zero vectors.

use crate::matrix::Matrix;
use crate::rng::SplitMix64;
use crate::{Error, Result};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// All trainable parameters of one LSTM layer. Biases are column vectors
/// stored as `hidden_dim x 1` matrices so the optimizer treats every
/// parameter uniformly.
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_i: Matrix,
    pub w_f: Matrix,
    pub w_o: Matrix,
    pub w_g: Matrix,
    pub u_i: Matrix,
    pub u_f: Matrix,
    pub u_o: Matrix,
    pub u_g: Matrix,
    pub b_i: Matrix,
    pub b_f: Matrix,
    pub b_o: Matrix,
    pub b_g: Matrix,
}

pub const LSTM_PARAM_NAMES: [&str; 12] = [
    "w_i", "w_f", "w_o", "w_g", "u_i", "u_f", "u_o", "u_g", "b_i", "b_f", "b_o", "b_g",
];

fn glorot(rows: usize, cols: usize, rng: &mut SplitMix64) -> Matrix {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = rng.uniform(-s, s);
    }
    m
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmParams {
            input_dim,
            hidden_dim,
            w_i: Matrix::zeros(hidden_dim, input_dim),
            w_f: Matrix::zeros(hidden_dim, input_dim),
            w_o: Matrix::zeros(hidden_dim, input_dim),
            w_g: Matrix::zeros(hidden_dim, input_dim),
            u_i: Matrix::zeros(hidden_dim, hidden_dim),
            u_f: Matrix::zeros(hidden_dim, hidden_dim),
            u_o: Matrix::zeros(hidden_dim, hidden_dim),
            u_g: Matrix::zeros(hidden_dim, hidden_dim),
            b_i: Matrix::zeros(hidden_dim, 1),
            b_f: Matrix::zeros(hidden_dim, 1),
            b_o: Matrix::zeros(hidden_dim, 1),
            b_g: Matrix::zeros(hidden_dim, 1),
        }
    }

    /// Glorot-uniform weights, forget-gate bias 1.0, other biases 0.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut SplitMix64) -> Self {
        let mut p = LstmParams::zeros(input_dim, hidden_dim);
        p.w_i = glorot(hidden_dim, input_dim, rng);
        p.w_f = glorot(hidden_dim, input_dim, rng);
        p.w_o = glorot(hidden_dim, input_dim, rng);
        p.w_g = glorot(hidden_dim, input_dim, rng);
        p.u_i = glorot(hidden_dim, hidden_dim, rng);
        p.u_f = glorot(hidden_dim, hidden_dim, rng);
        p.u_o = glorot(hidden_dim, hidden_dim, rng);
        p.u_g = glorot(hidden_dim, hidden_dim, rng);
        for v in p.b_f.data_mut() {
            *v = 1.0;
        }
        p
    }

    pub fn param(&self, name: &str) -> Option<&Matrix> {
        match name {
            "w_i" => Some(&self.w_i),
            "w_f" => Some(&self.w_f),
            "w_o" => Some(&self.w_o),
            "w_g" => Some(&self.w_g),
            "u_i" => Some(&self.u_i),
            "u_f" => Some(&self.u_f),
            "u_o" => Some(&self.u_o),
            "u_g" => Some(&self.u_g),
            "b_i" => Some(&self.b_i),
            "b_f" => Some(&self.b_f),
            "b_o" => Some(&self.b_o),
            "b_g" => Some(&self.b_g),
            _ => None,
        }
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        match name {
            "w_i" => Some(&mut self.w_i),
            "w_f" => Some(&mut self.w_f),
            "w_o" => Some(&mut self.w_o),
            "w_g" => Some(&mut self.w_g),
            "u_i" => Some(&mut self.u_i),
            "u_f" => Some(&mut self.u_f),
            "u_o" => Some(&mut self.u_o),
            "u_g" => Some(&mut self.u_g),
            "b_i" => Some(&mut self.b_i),
            "b_f" => Some(&mut self.b_f),
            "b_o" => Some(&mut self.b_o),
            "b_g" => Some(&mut self.b_g),
            _ => None,
        }
    }

    fn check_dims(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<()> {
        if x.len() != self.input_dim || h_prev.len() != self.hidden_dim || c_prev.len() != self.hidden_dim
        {
            return Err(Error::shape(format!(
                "lstm_step expects x[{}], h[{}], c[{}]; got x[{}], h[{}], c[{}]",
                self.input_dim,
                self.hidden_dim,
                self.hidden_dim,
                x.len(),
                h_prev.len(),
                c_prev.len()
            )));
        }
        Ok(())
    }
}

/// Everything one step needs to replay for backprop.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

fn step_record(p: &LstmParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<StepRecord> {
    p.check_dims(x, h_prev, c_prev)?;
    let hd = p.hidden_dim;
    let gate = |w: &Matrix, u: &Matrix, b: &Matrix| -> Result<Vec<f64>> {
        let mut a = w.matvec(x)?;
        let rec = u.matvec(h_prev)?;
        for k in 0..hd {
            a[k] += rec[k] + b.get(k, 0);
        }
        Ok(a)
    };
    let a_i = gate(&p.w_i, &p.u_i, &p.b_i)?;
    let a_f = gate(&p.w_f, &p.u_f, &p.b_f)?;
    let a_o = gate(&p.w_o, &p.u_o, &p.b_o)?;
    let a_g = gate(&p.w_g, &p.u_g, &p.b_g)?;
    let i: Vec<f64> = a_i.iter().map(|a| sigmoid(*a)).collect();
    let f: Vec<f64> = a_f.iter().map(|a| sigmoid(*a)).collect();
    let o: Vec<f64> = a_o.iter().map(|a| sigmoid(*a)).collect();
    let g: Vec<f64> = a_g.iter().map(|a| a.tanh()).collect();
    let mut c = vec![0.0; hd];
    let mut tanh_c = vec![0.0; hd];
    let mut h = vec![0.0; hd];
    for k in 0..hd {
        c[k] = f[k] * c_prev[k] + i[k] * g[k];
        tanh_c[k] = c[k].tanh();
        h[k] = o[k] * tanh_c[k];
    }
    Ok(StepRecord {
        i,
        f,
        o,
        g,
        c,
        tanh_c,
        h,
    })
}

/// One LSTM cell step; returns the new hidden and cell state.
pub fn lstm_step(
    p: &LstmParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let rec = step_record(p, x, h_prev, c_prev)?;
    Ok((rec.h, rec.c))
}

/// Unrolled forward pass over a nonempty sequence, zero initial states.
pub fn lstm_forward(p: &LstmParams, xs: &[Vec<f64>]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let trace = lstm_forward_trace(p, xs)?;
    Ok(trace
        .steps
        .into_iter()
        .map(|s| (s.h, s.c))
        .collect())
}

/// Recorded forward pass; required before `lstm_backward`.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    pub xs: Vec<Vec<f64>>,
    pub steps: Vec<StepRecord>,
}

impl LstmTrace {
    pub fn frames(&self) -> usize {
        self.steps.len()
    }

    pub fn hidden(&self, t: usize) -> &[f64] {
        &self.steps[t].h
    }
}

pub fn lstm_forward_trace(p: &LstmParams, xs: &[Vec<f64>]) -> Result<LstmTrace> {
    if xs.is_empty() {
        return Err(Error::argument("lstm_forward needs a nonempty sequence"));
    }
    let hd = p.hidden_dim;
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    let mut steps = Vec::with_capacity(xs.len());
    for x in xs {
        let rec = step_record(p, x, &h, &c)?;
        h = rec.h.clone();
        c = rec.c.clone();
        steps.push(rec);
    }
    Ok(LstmTrace {
        xs: xs.to_vec(),
        steps,
    })
}

/// Parameter gradients, mirroring `LstmParams`.
#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub w_i: Matrix,
    pub w_f: Matrix,
    pub w_o: Matrix,
    pub w_g: Matrix,
    pub u_i: Matrix,
    pub u_f: Matrix,
    pub u_o: Matrix,
    pub u_g: Matrix,
    pub b_i: Matrix,
    pub b_f: Matrix,
    pub b_o: Matrix,
    pub b_g: Matrix,
}

impl LstmGrads {
    pub fn zeros(p: &LstmParams) -> Self {
        LstmGrads {
            w_i: Matrix::zeros(p.hidden_dim, p.input_dim),
            w_f: Matrix::zeros(p.hidden_dim, p.input_dim),
            w_o: Matrix::zeros(p.hidden_dim, p.input_dim),
            w_g: Matrix::zeros(p.hidden_dim, p.input_dim),
            u_i: Matrix::zeros(p.hidden_dim, p.hidden_dim),
            u_f: Matrix::zeros(p.hidden_dim, p.hidden_dim),
            u_o: Matrix::zeros(p.hidden_dim, p.hidden_dim),
            u_g: Matrix::zeros(p.hidden_dim, p.hidden_dim),
            b_i: Matrix::zeros(p.hidden_dim, 1),
            b_f: Matrix::zeros(p.hidden_dim, 1),
            b_o: Matrix::zeros(p.hidden_dim, 1),
            b_g: Matrix::zeros(p.hidden_dim, 1),
        }
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix> {
        match name {
            "w_i" => Some(&self.w_i),
            "w_f" => Some(&self.w_f),
            "w_o" => Some(&self.w_o),
            "w_g" => Some(&self.w_g),
            "u_i" => Some(&self.u_i),
            "u_f" => Some(&self.u_f),
            "u_o" => Some(&self.u_o),
            "u_g" => Some(&self.u_g),
            "b_i" => Some(&self.b_i),
            "b_f" => Some(&self.b_f),
            "b_o" => Some(&self.b_o),
            "b_g" => Some(&self.b_g),
            _ => None,
        }
    }
}

/// BPTT over a recorded forward pass. `dh` carries the upstream gradient on
/// every per-frame hidden state. Returns parameter gradients and the
/// gradients on the inputs.
pub fn lstm_backward(
    p: &LstmParams,
    trace: &LstmTrace,
    dh: &[Vec<f64>],
) -> Result<(LstmGrads, Vec<Vec<f64>>)> {
    let frames = trace.frames();
    if dh.len() != frames {
        return Err(Error::shape(format!(
            "lstm_backward got {} upstream gradients for {} frames",
            dh.len(),
            frames
        )));
    }
    let hd = p.hidden_dim;
    let mut grads = LstmGrads::zeros(p);
    let mut dx = vec![vec![0.0; p.input_dim]; frames];
    let mut dh_carry = vec![0.0; hd];
    let mut dc_carry = vec![0.0; hd];
    let zero = vec![0.0; hd];
    for t in (0..frames).rev() {
        let rec = &trace.steps[t];
        let (h_prev, c_prev): (&[f64], &[f64]) = if t == 0 {
            (&zero, &zero)
        } else {
            (&trace.steps[t - 1].h, &trace.steps[t - 1].c)
        };
        let mut da_i = vec![0.0; hd];
        let mut da_f = vec![0.0; hd];
        let mut da_o = vec![0.0; hd];
        let mut da_g = vec![0.0; hd];
        let mut dc_prev = vec![0.0; hd];
        for k in 0..hd {
            let dht = dh[t][k] + dh_carry[k];
            let do_ = dht * rec.tanh_c[k];
            let dc = dc_carry[k] + dht * rec.o[k] * (1.0 - rec.tanh_c[k] * rec.tanh_c[k]);
            let di = dc * rec.g[k];
            let dg = dc * rec.i[k];
            let df = dc * c_prev[k];
            dc_prev[k] = dc * rec.f[k];
            da_i[k] = di * rec.i[k] * (1.0 - rec.i[k]);
            da_f[k] = df * rec.f[k] * (1.0 - rec.f[k]);
            da_o[k] = do_ * rec.o[k] * (1.0 - rec.o[k]);
            da_g[k] = dg * (1.0 - rec.g[k] * rec.g[k]);
        }
        let x = &trace.xs[t];
        grads.w_i.add_outer(&da_i, x)?;
        grads.w_f.add_outer(&da_f, x)?;
        grads.w_o.add_outer(&da_o, x)?;
        grads.w_g.add_outer(&da_g, x)?;
        grads.u_i.add_outer(&da_i, h_prev)?;
        grads.u_f.add_outer(&da_f, h_prev)?;
        grads.u_o.add_outer(&da_o, h_prev)?;
        grads.u_g.add_outer(&da_g, h_prev)?;
        for k in 0..hd {
            *grads.b_i.data_mut().get_mut(k).unwrap() += da_i[k];
            *grads.b_f.data_mut().get_mut(k).unwrap() += da_f[k];
            *grads.b_o.data_mut().get_mut(k).unwrap() += da_o[k];
            *grads.b_g.data_mut().get_mut(k).unwrap() += da_g[k];
        }
        let mut dxt = p.w_i.matvec_t(&da_i)?;
        for (acc, v) in dxt.iter_mut().zip(p.w_f.matvec_t(&da_f)?) {
            *acc += v;
        }
        for (acc, v) in dxt.iter_mut().zip(p.w_o.matvec_t(&da_o)?) {
            *acc += v;
        }
        for (acc, v) in dxt.iter_mut().zip(p.w_g.matvec_t(&da_g)?) {
            *acc += v;
        }
        dx[t] = dxt;
        let mut dhp = p.u_i.matvec_t(&da_i)?;
        for (acc, v) in dhp.iter_mut().zip(p.u_f.matvec_t(&da_f)?) {
            *acc += v;
        }
        for (acc, v) in dhp.iter_mut().zip(p.u_o.matvec_t(&da_o)?) {
            *acc += v;
        }
        for (acc, v) in dhp.iter_mut().zip(p.u_g.matvec_t(&da_g)?) {
            *acc += v;
        }
        dh_carry = dhp;
        dc_carry = dc_prev;
    }
    Ok((grads, dx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_params_give_zero_states() {
        let p = LstmParams::zeros(3, 2);
        let (h, c) = lstm_step(&p, &[1.0, -2.0, 0.5], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(h, vec![0.0, 0.0]);
        assert_eq!(c, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_params_nonzero_cell_closed_form() {
        // i = f = o = 0.5, g = 0 => c = 0.5 * c_prev, h = 0.5 * tanh(c).
        let p = LstmParams::zeros(1, 1);
        let (h, c) = lstm_step(&p, &[0.3], &[0.0], &[1.0]).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-15);
        assert!((h[0] - 0.5 * 0.5f64.tanh()).abs() < 1e-12);
        assert!((h[0] - 0.231059).abs() < 1e-6);
    }

    // Independent straight-line scalar oracle for a 1-unit, 2-input cell.
    fn scalar_oracle(
        w: [[f64; 2]; 4],
        u: [f64; 4],
        b: [f64; 4],
        x: [f64; 2],
        h_prev: f64,
        c_prev: f64,
    ) -> (f64, f64) {
        let pre = |gi: usize| w[gi][0] * x[0] + w[gi][1] * x[1] + u[gi] * h_prev + b[gi];
        let i = sigmoid(pre(0));
        let f = sigmoid(pre(1));
        let o = sigmoid(pre(2));
        let g = pre(3).tanh();
        let c = f * c_prev + i * g;
        let h = o * c.tanh();
        (h, c)
    }

    #[test]
    fn step_matches_scalar_oracle() {
        let mut rng = SplitMix64::new(17);
        let mut p = LstmParams::zeros(2, 1);
        let mut w = [[0.0; 2]; 4];
        let mut u = [0.0; 4];
        let mut b = [0.0; 4];
        for (gi, name) in ["i", "f", "o", "g"].iter().enumerate() {
            for j in 0..2 {
                w[gi][j] = rng.normal();
                p.param_mut(&format!("w_{name}")).unwrap().set(0, j, w[gi][j]);
            }
            u[gi] = rng.normal();
            p.param_mut(&format!("u_{name}")).unwrap().set(0, 0, u[gi]);
            b[gi] = rng.normal();
            p.param_mut(&format!("b_{name}")).unwrap().set(0, 0, b[gi]);
        }
        let x = [0.7, -1.2];
        let (h, c) = lstm_step(&p, &x, &[0.4], &[-0.6]).unwrap();
        let (ho, co) = scalar_oracle(w, u, b, x, 0.4, -0.6);
        assert!((h[0] - ho).abs() < 1e-14);
        assert!((c[0] - co).abs() < 1e-14);
    }

    #[test]
    fn forward_base_case_and_chaining() {
        let mut rng = SplitMix64::new(5);
        let p = LstmParams::init(3, 2, &mut rng);
        let xs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..3).map(|_| rng.normal()).collect())
            .collect();
        // T=1 equals a single step.
        let single = lstm_forward(&p, &xs[..1]).unwrap();
        let (h1, c1) = lstm_step(&p, &xs[0], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(single[0], (h1.clone(), c1.clone()));
        // T=3 equals three chained steps.
        let all = lstm_forward(&p, &xs).unwrap();
        let (h2, c2) = lstm_step(&p, &xs[1], &h1, &c1).unwrap();
        let (h3, c3) = lstm_step(&p, &xs[2], &h2, &c2).unwrap();
        assert_eq!(all[1], (h2, c2));
        assert_eq!(all[2], (h3, c3));
    }

    #[test]
    fn zero_params_forward_all_zero_hidden() {
        let p = LstmParams::zeros(2, 3);
        let xs = vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![3.0, -3.0]];
        for (h, _) in lstm_forward(&p, &xs).unwrap() {
            assert!(h.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn empty_sequence_is_error() {
        let p = LstmParams::zeros(2, 2);
        assert!(lstm_forward(&p, &[]).is_err());
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let p = LstmParams::zeros(2, 2);
        let err = lstm_step(&p, &[1.0], &[0.0, 0.0], &[0.0, 0.0]);
        assert!(matches!(err, Err(crate::Error::Shape(_))));
    }

    #[test]
    fn bptt_matches_finite_differences() {
        // Sum of all hidden states as the scalar loss.
        let mut rng = SplitMix64::new(23);
        let p = LstmParams::init(3, 4, &mut rng);
        let xs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.normal()).collect())
            .collect();
        let loss = |p: &LstmParams| -> f64 {
            lstm_forward(p, &xs)
                .unwrap()
                .iter()
                .map(|(h, _)| h.iter().sum::<f64>())
                .sum()
        };
        let trace = lstm_forward_trace(&p, &xs).unwrap();
        let dh = vec![vec![1.0; 4]; 4];
        let (grads, _) = lstm_backward(&p, &trace, &dh).unwrap();
        let eps = 1e-5;
        for name in LSTM_PARAM_NAMES {
            let g = grads.by_name(name).unwrap().clone();
            let shape = g.shape();
            for r in 0..shape.0 {
                for c in 0..shape.1 {
                    let mut pp = p.clone();
                    let orig = pp.param(name).unwrap().get(r, c);
                    pp.param_mut(name).unwrap().set(r, c, orig + eps);
                    let up = loss(&pp);
                    pp.param_mut(name).unwrap().set(r, c, orig - eps);
                    let down = loss(&pp);
                    let fd = (up - down) / (2.0 * eps);
                    let got = g.get(r, c);
                    let tol = 1e-4 * got.abs().max(1.0);
                    assert!(
                        (got - fd).abs() <= tol,
                        "{name}[{r},{c}]: analytic {got} vs fd {fd}"
                    );
                }
            }
        }
    }
}
