//! LSTM cell with backpropagation through time.
//!
//! The four gate weight matrices are stored stacked in one `4H x (I+H)`
//! matrix in the order input, forget, candidate, output. Each gate block
//! acts on the concatenation `[x_t | h_{t-1}]`.
//!
//! ```text
//! i = σ(W_i·[x|h] + b_i)    f = σ(W_f·[x|h] + b_f)
//! g = tanh(W_g·[x|h] + b_g) o = σ(W_o·[x|h] + b_o)
//! c' = f⊙c + i⊙g            h' = o⊙tanh(c')
//! ```

use rand::Rng;

use crate::init::{orthogonal, scaled_uniform};
use crate::params::Params;
use crate::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Candidate = 2,
    Output = 3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    /// `4H x (I+H)`, gate blocks stacked by row.
    pub weight: Matrix,
    /// `1 x 4H`
    pub bias: Matrix,
    input_size: usize,
    hidden_size: usize,
}

/// Recurrent state for a batch: `h` and `c` are both `batch x H`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Matrix,
    pub c: Matrix,
}

impl LstmState {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        Self {
            h: Matrix::zeros(batch, hidden),
            c: Matrix::zeros(batch, hidden),
        }
    }

    pub fn batch(&self) -> usize {
        self.h.rows()
    }

    /// Stacks single-row states into one batch.
    pub fn stack(states: &[&LstmState]) -> Self {
        let h: Vec<&[f64]> = states.iter().flat_map(|s| (0..s.h.rows()).map(|r| s.h.row(r))).collect();
        let c: Vec<&[f64]> = states.iter().flat_map(|s| (0..s.c.rows()).map(|r| s.c.row(r))).collect();
        Self {
            h: Matrix::from_rows(&h),
            c: Matrix::from_rows(&c),
        }
    }
}

/// Everything the backward pass needs from one forward step.
#[derive(Clone, Debug)]
pub struct LstmStepCache {
    xh: Matrix,
    /// Post-activation gates, `batch x 4H`.
    gates: Matrix,
    c_prev: Matrix,
    tanh_c: Matrix,
}

#[derive(Clone, Debug)]
pub struct LstmBackward {
    /// Gradient with respect to each step's input.
    pub dx: Vec<Matrix>,
    pub dh0: Matrix,
    pub dc0: Matrix,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LstmCell {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        Self {
            weight: Matrix::zeros(4 * hidden_size, input_size + hidden_size),
            bias: Matrix::zeros(1, 4 * hidden_size),
            input_size,
            hidden_size,
        }
    }

    /// Orthogonal recurrent blocks, scaled-uniform input blocks, forget bias 1.
    pub fn init<R: Rng + ?Sized>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let mut cell = Self::zeros(input_size, hidden_size);
        let h = hidden_size;
        for gate in 0..4 {
            let w_in = scaled_uniform(h, input_size, 1.0, rng);
            let w_rec = orthogonal(h, h, 1.0, rng);
            for r in 0..h {
                let row = cell.weight.row_mut(gate * h + r);
                row[..input_size].copy_from_slice(w_in.row(r));
                row[input_size..].copy_from_slice(w_rec.row(r));
            }
        }
        let forget = Gate::Forget as usize * h;
        cell.bias.data_mut()[forget..forget + h].fill(1.0);
        cell
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    /// The `H x (I+H)` weight block of one gate.
    pub fn gate_weight(&self, gate: Gate) -> Matrix {
        let h = self.hidden_size;
        let start = gate as usize * h;
        Matrix::from_fn(h, self.weight.cols(), |r, c| self.weight.get(start + r, c))
    }

    pub fn gate_bias(&self, gate: Gate) -> &[f64] {
        let h = self.hidden_size;
        &self.bias.data()[gate as usize * h..(gate as usize + 1) * h]
    }

    pub fn initial_state(&self, batch: usize) -> LstmState {
        LstmState::zeros(batch, self.hidden_size)
    }

    pub fn step(&self, x: &Matrix, state: &LstmState) -> (LstmState, LstmStepCache) {
        assert_eq!(x.cols(), self.input_size, "lstm input width mismatch");
        assert_eq!(state.h.cols(), self.hidden_size, "lstm hidden width mismatch");
        assert_eq!(x.rows(), state.batch(), "lstm batch mismatch");
        let h = self.hidden_size;
        let batch = x.rows();
        let xh = Matrix::hconcat(x, &state.h);
        let mut gates = xh.matmul_t(&self.weight);
        gates.add_row_broadcast(&self.bias);
        let mut c = Matrix::zeros(batch, h);
        let mut tanh_c = Matrix::zeros(batch, h);
        let mut h_out = Matrix::zeros(batch, h);
        for b in 0..batch {
            let g = gates.row_mut(b);
            for v in &mut g[..2 * h] {
                *v = sigmoid(*v);
            }
            for v in &mut g[2 * h..3 * h] {
                *v = v.tanh();
            }
            for v in &mut g[3 * h..] {
                *v = sigmoid(*v);
            }
            let g = gates.row(b);
            let c_prev = state.c.row(b);
            let c_row = c.row_mut(b);
            for j in 0..h {
                c_row[j] = g[h + j] * c_prev[j] + g[j] * g[2 * h + j];
            }
            let tc = tanh_c.row_mut(b);
            let c_row = c.row(b);
            for j in 0..h {
                tc[j] = c_row[j].tanh();
            }
            let h_row = h_out.row_mut(b);
            for j in 0..h {
                h_row[j] = g[3 * h + j] * tc[j];
            }
        }
        let cache = LstmStepCache {
            xh,
            gates,
            c_prev: state.c.clone(),
            tanh_c,
        };
        (LstmState { h: h_out, c }, cache)
    }

    /// Runs the cell over `xs` from `state`, returning every step's hidden
    /// output, the final state and the caches.
    pub fn forward_sequence(&self, xs: &[Matrix], state: &LstmState) -> (Vec<Matrix>, LstmState, Vec<LstmStepCache>) {
        let mut st = state.clone();
        let mut hs = Vec::with_capacity(xs.len());
        let mut caches = Vec::with_capacity(xs.len());
        for x in xs {
            let (next, cache) = self.step(x, &st);
            hs.push(next.h.clone());
            caches.push(cache);
            st = next;
        }
        (hs, st, caches)
    }

    /// Backpropagation through time over a contiguous forward pass.
    ///
    /// `dh_seq[t]` is the loss gradient flowing into the hidden output of step
    /// `t`; `d_final` optionally adds gradient on the final `(h, c)`.
    /// Parameter gradients are accumulated into `grads`.
    pub fn bptt(
        &self,
        caches: &[LstmStepCache],
        dh_seq: &[Matrix],
        d_final: Option<&LstmState>,
        grads: &mut LstmCell,
    ) -> LstmBackward {
        assert_eq!(caches.len(), dh_seq.len(), "cache/sequence length mismatch");
        assert_eq!(grads.weight.shape(), self.weight.shape(), "gradient buffer shape mismatch");
        let h = self.hidden_size;
        let inp = self.input_size;
        let steps = caches.len();
        let batch = caches.first().map_or_else(|| d_final.map_or(0, |d| d.batch()), |c| c.xh.rows());
        let mut dh_next = d_final.map_or_else(|| Matrix::zeros(batch, h), |d| d.h.clone());
        let mut dc_next = d_final.map_or_else(|| Matrix::zeros(batch, h), |d| d.c.clone());
        let mut dx = vec![Matrix::zeros(batch, inp); steps];
        let mut dz_all = Matrix::zeros(steps * batch, 4 * h);
        let mut xh_all = Matrix::zeros(steps * batch, inp + h);

        for t in (0..steps).rev() {
            let cache = &caches[t];
            assert_eq!(dh_seq[t].shape(), (batch, h), "dh shape mismatch at step {t}");
            let mut dz = Matrix::zeros(batch, 4 * h);
            let mut dc_prev = Matrix::zeros(batch, h);
            for b in 0..batch {
                let g = cache.gates.row(b);
                let tc = cache.tanh_c.row(b);
                let cp = cache.c_prev.row(b);
                let dh_in = dh_seq[t].row(b);
                let dhn = dh_next.row(b);
                let dcn = dc_next.row(b);
                let dz_row = dz.row_mut(b);
                let dcp = dc_prev.row_mut(b);
                for j in 0..h {
                    let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                    let dh = dh_in[j] + dhn[j];
                    let d_o = dh * tc[j];
                    let dc = dcn[j] + dh * o * (1.0 - tc[j] * tc[j]);
                    dz_row[j] = dc * gg * i * (1.0 - i);
                    dz_row[h + j] = dc * cp[j] * f * (1.0 - f);
                    dz_row[2 * h + j] = dc * i * (1.0 - gg * gg);
                    dz_row[3 * h + j] = d_o * o * (1.0 - o);
                    dcp[j] = dc * f;
                }
            }
            let dxh = dz.matmul(&self.weight);
            dx[t] = dxh.cols_slice(0, inp);
            dh_next = dxh.cols_slice(inp, h);
            dc_next = dc_prev;
            for b in 0..batch {
                dz_all.row_mut(t * batch + b).copy_from_slice(dz.row(b));
                xh_all.row_mut(t * batch + b).copy_from_slice(cache.xh.row(b));
            }
        }
        if steps > 0 {
            grads.weight.add_t_matmul(&dz_all, &xh_all);
            grads.bias.add_assign(&dz_all.col_sums());
        }
        LstmBackward {
            dx,
            dh0: dh_next,
            dc0: dc_next,
        }
    }
}

impl Params for LstmCell {
    fn named_blocks(&self) -> Vec<(String, &Matrix)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.weight, &mut self.bias]
    }
}
