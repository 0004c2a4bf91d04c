//! Single-layer LSTM with skip-copy recurrence.
//!
//! A step whose mask bit is 0 copies the incoming hidden and cell state
//! unchanged, so the encoder never sees the skipped input.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{ops, Matrix, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmState {
    pub fn zeros(dim: usize) -> Self {
        LstmState {
            hidden: vec![0.0; dim],
            cell: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.hidden.len()
    }
}

/// LSTM state living on a tape.
#[derive(Debug, Clone, Copy)]
pub struct TracedState {
    pub hidden: Var,
    pub cell: Var,
}

impl TracedState {
    pub fn constant(tape: &mut Tape<'_>, state: &LstmState) -> Self {
        TracedState {
            hidden: tape.constant(state.hidden.clone()),
            cell: tape.constant(state.cell.clone()),
        }
    }
}

/// Handles to the fused gate weights of one LSTM.
///
/// The weight matrix is `4d x (input + d)` with gate rows ordered input,
/// forget, output, candidate; columns take the input first, then the
/// previous hidden state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lstm {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl Lstm {
    /// Registers fresh parameters: weights `U(-1/sqrt(d), 1/sqrt(d))`,
    /// forget-gate bias 1, other biases 0.
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let weight = Matrix::uniform(4 * hidden_dim, input_dim + hidden_dim, bound, rng);
        let mut bias = vec![0.0; 4 * hidden_dim];
        bias[hidden_dim..2 * hidden_dim].fill(1.0);
        Lstm {
            weight: store.add(format!("{prefix}.weight"), weight),
            bias: store.add(format!("{prefix}.bias"), Matrix::column(bias)),
            input_dim,
            hidden_dim,
        }
    }

    /// Rebinds handles to parameters already present in `store`.
    pub fn bind(store: &ParamStore, prefix: &str) -> Result<Self> {
        let find = |suffix: &str| {
            let name = format!("{prefix}.{suffix}");
            store
                .find(&name)
                .ok_or_else(|| Error::domain(format!("missing parameter {name}")))
        };
        let weight = find("weight")?;
        let bias = find("bias")?;
        let (rows, cols) = store.get(weight).shape();
        if rows % 4 != 0 || rows / 4 > cols || store.get(bias).shape() != (rows, 1) {
            return Err(Error::shape(
                "Lstm::bind",
                format!("weight {rows}x{cols}"),
                format!("bias {:?}", store.get(bias).shape()),
            ));
        }
        let hidden_dim = rows / 4;
        Ok(Lstm {
            weight,
            bias,
            input_dim: cols - hidden_dim,
            hidden_dim,
        })
    }

    fn check(&self, state_dim: usize, input_dim: usize) -> Result<()> {
        if input_dim != self.input_dim {
            return Err(Error::shape(
                "lstm step",
                format!("input dim {}", self.input_dim),
                format!("got {input_dim}"),
            ));
        }
        if state_dim != self.hidden_dim {
            return Err(Error::shape(
                "lstm step",
                format!("hidden dim {}", self.hidden_dim),
                format!("state {state_dim}"),
            ));
        }
        Ok(())
    }

    /// One recurrence step.
    pub fn step(&self, store: &ParamStore, state: &LstmState, input: &[f64]) -> Result<LstmState> {
        self.check(state.dim(), input.len())?;
        let d = self.hidden_dim;
        let x = ops::concat(&[input, &state.hidden]);
        let z = store
            .get(self.weight)
            .affine(&x, store.get(self.bias).data())?;
        let i = ops::sigmoid_vec(&z[0..d]);
        let f = ops::sigmoid_vec(&z[d..2 * d]);
        let o = ops::sigmoid_vec(&z[2 * d..3 * d]);
        let g = ops::tanh_vec(&z[3 * d..4 * d]);
        let cell: Vec<f64> = (0..d)
            .map(|k| f[k] * state.cell[k] + i[k] * g[k])
            .collect();
        let tc = ops::tanh_vec(&cell);
        let hidden = (0..d).map(|k| o[k] * tc[k]).collect();
        Ok(LstmState { hidden, cell })
    }

    /// Recorded variant of [`Lstm::step`]; produces identical values.
    pub fn step_traced(
        &self,
        tape: &mut Tape<'_>,
        state: &TracedState,
        input: Var,
    ) -> Result<TracedState> {
        let state_dim = tape.value(state.hidden).len();
        self.check(state_dim, tape.value(input).len())?;
        let d = self.hidden_dim;
        let x = tape.concat(&[input, state.hidden])?;
        let z = tape.affine(self.weight, x, Some(self.bias))?;
        let zi = tape.slice(z, 0, d)?;
        let zf = tape.slice(z, d, d)?;
        let zo = tape.slice(z, 2 * d, d)?;
        let zg = tape.slice(z, 3 * d, d)?;
        let i = tape.sigmoid(zi)?;
        let f = tape.sigmoid(zf)?;
        let o = tape.sigmoid(zo)?;
        let g = tape.tanh(zg)?;
        let keep = tape.mul(f, state.cell)?;
        let write = tape.mul(i, g)?;
        let cell = tape.add(keep, write)?;
        let tc = tape.tanh(cell)?;
        let hidden = tape.mul(o, tc)?;
        Ok(TracedState { hidden, cell })
    }

    /// The discarded-input branch of the recurrence.
    pub fn skip(state: &LstmState) -> LstmState {
        state.clone()
    }

    /// Runs the recurrence over `seq`, stepping where `mask` is set and
    /// copying the state elsewhere. Returns the state after every position.
    pub fn encode_masked(
        &self,
        store: &ParamStore,
        seq: &[Vec<f64>],
        mask: &[bool],
        initial: &LstmState,
    ) -> Result<Vec<LstmState>> {
        if seq.len() != mask.len() {
            return Err(Error::shape(
                "encode_masked",
                format!("sequence len {}", seq.len()),
                format!("mask len {}", mask.len()),
            ));
        }
        let mut states = Vec::with_capacity(seq.len());
        let mut cur = initial.clone();
        for (x, &keep) in seq.iter().zip(mask) {
            cur = if keep {
                self.step(store, &cur, x)?
            } else {
                Self::skip(&cur)
            };
            states.push(cur.clone());
        }
        Ok(states)
    }

    /// Final state after stepping through every element of `seq`.
    pub fn encode(
        &self,
        store: &ParamStore,
        seq: &[Vec<f64>],
        initial: &LstmState,
    ) -> Result<LstmState> {
        let mut cur = initial.clone();
        for x in seq {
            cur = self.step(store, &cur, x)?;
        }
        Ok(cur)
    }
}
