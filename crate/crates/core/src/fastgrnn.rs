//! The FastGRNN recurrent cell.
//!
//! A single cell holds one input matrix `W` (h×d), one recurrent matrix `U`
//! (h×h) and two bias vectors; the same pre-activation `W·x + U·h_prev` feeds
//! both the gate and the candidate:
//!
//! ```text
//! pre = W·x + U·h_prev
//! z   = gate(pre + b_z)
//! h̃   = update(pre + b_h)
//! h   = z ⊙ h_prev + (ζ·(1−z) + ν) ⊙ h̃
//! ```
//!
//! ζ is fixed at 1 and ν at 0 unless explicitly overridden. The hidden state
//! starts at zero by default (an optional seeded-random initial state exists
//! for experimentation). Optional binary masks on `W`/`U` support sparse
//! variants; masked entries are stored as exact zeros.

use crate::error::{Error, Result};
use crate::Scalar;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<S: Scalar = f32> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![S::ZERO; rows * cols],
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut S {
        &mut self.data[r * self.cols + c]
    }

    /// y = M·x
    pub fn matvec(&self, x: &[S]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.cols);
        let mut y = vec![S::ZERO; self.rows];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = S::ZERO;
            for (a, b) in row.iter().zip(x.iter()) {
                acc += *a * *b;
            }
            y[r] = acc;
        }
        y
    }

    /// y = Mᵀ·x
    pub fn matvec_t(&self, x: &[S]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.rows);
        let mut y = vec![S::ZERO; self.cols];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let xr = x[r];
            for (c, a) in row.iter().enumerate() {
                y[c] += *a * xr;
            }
        }
        y
    }

    pub fn cast<T: Scalar>(&self) -> Mat<T> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| T::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Gate nonlinearity choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GateNonlin {
    #[default]
    Sigmoid,
    QuantSigmoid,
}

/// Candidate (update) nonlinearity choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateNonlin {
    #[default]
    Tanh,
    QuantTanh,
}

/// quantTanh(x) = clamp(x, −1, 1).
pub fn quant_tanh<S: Scalar>(x: S) -> S {
    x.max_s(-S::ONE).min_s(S::ONE)
}

/// quantSigmoid(x) = clamp((x+1)/2, 0, 1).
pub fn quant_sigmoid<S: Scalar>(x: S) -> S {
    ((x + S::ONE) / S::from_f64(2.0)).max_s(S::ZERO).min_s(S::ONE)
}

fn sigmoid<S: Scalar>(x: S) -> S {
    S::ONE / (S::ONE + (-x).exp())
}

/// The FastGRNN cell. See the module docs for the step equations.
#[derive(Debug, Clone, PartialEq)]
pub struct FastGrnnCell<S: Scalar = f32> {
    pub w: Mat<S>,
    pub u: Mat<S>,
    pub b_z: Vec<S>,
    pub b_h: Vec<S>,
    pub zeta: S,
    pub nu: S,
    pub gate_nonlin: GateNonlin,
    pub update_nonlin: UpdateNonlin,
    /// Optional binary mask on W (1 = keep). Masked entries of `w` are zero.
    pub w_mask: Option<Vec<u8>>,
    /// Optional binary mask on U.
    pub u_mask: Option<Vec<u8>>,
}

/// Intermediates of one step, cached for backpropagation.
#[derive(Debug, Clone)]
pub struct StepCache<S: Scalar = f32> {
    pub x: Vec<S>,
    pub h_prev: Vec<S>,
    pub pre: Vec<S>,
    pub z: Vec<S>,
    pub h_cand: Vec<S>,
    pub h: Vec<S>,
}

/// Parameter gradients of one cell, accumulated across steps/uses.
#[derive(Debug, Clone)]
pub struct CellGrads<S: Scalar = f32> {
    pub dw: Mat<S>,
    pub du: Mat<S>,
    pub db_z: Vec<S>,
    pub db_h: Vec<S>,
}

impl<S: Scalar> CellGrads<S> {
    pub fn zeros_like(cell: &FastGrnnCell<S>) -> Self {
        CellGrads {
            dw: Mat::zeros(cell.w.rows, cell.w.cols),
            du: Mat::zeros(cell.u.rows, cell.u.cols),
            db_z: vec![S::ZERO; cell.b_z.len()],
            db_h: vec![S::ZERO; cell.b_h.len()],
        }
    }

    pub fn add_assign(&mut self, other: &CellGrads<S>) {
        for (a, b) in self.dw.data.iter_mut().zip(&other.dw.data) {
            *a += *b;
        }
        for (a, b) in self.du.data.iter_mut().zip(&other.du.data) {
            *a += *b;
        }
        for (a, b) in self.db_z.iter_mut().zip(&other.db_z) {
            *a += *b;
        }
        for (a, b) in self.db_h.iter_mut().zip(&other.db_h) {
            *a += *b;
        }
    }
}

impl<S: Scalar> FastGrnnCell<S> {
    /// All-zero cell with given input dimension `d` and hidden dimension `h`.
    pub fn zeros(d: usize, h: usize) -> Result<Self> {
        if d == 0 || h == 0 {
            return Err(Error::Arg(format!("cell dims must be positive, got d={d}, h={h}")));
        }
        Ok(FastGrnnCell {
            w: Mat::zeros(h, d),
            u: Mat::zeros(h, h),
            b_z: vec![S::ZERO; h],
            b_h: vec![S::ZERO; h],
            zeta: S::ONE,
            nu: S::ZERO,
            gate_nonlin: GateNonlin::default(),
            update_nonlin: UpdateNonlin::default(),
            w_mask: None,
            u_mask: None,
        })
    }

    /// Seeded uniform initialization in [−scale, scale].
    pub fn random(d: usize, h: usize, scale: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut cell = Self::zeros(d, h)?;
        let mut fill = |v: &mut [S]| {
            for x in v.iter_mut() {
                *x = S::from_f64(rng.gen_range(-scale..scale));
            }
        };
        fill(&mut cell.w.data);
        fill(&mut cell.u.data);
        fill(&mut cell.b_z);
        fill(&mut cell.b_h);
        Ok(cell)
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols
    }

    pub fn hidden_dim(&self) -> usize {
        self.w.rows
    }

    /// Zero out masked entries (no-op when no masks are set).
    pub fn apply_masks(&mut self) {
        if let Some(m) = &self.w_mask {
            for (v, &keep) in self.w.data.iter_mut().zip(m) {
                if keep == 0 {
                    *v = S::ZERO;
                }
            }
        }
        if let Some(m) = &self.u_mask {
            for (v, &keep) in self.u.data.iter_mut().zip(m) {
                if keep == 0 {
                    *v = S::ZERO;
                }
            }
        }
    }

    fn check_dims(&self, x: &[S], h_prev: &[S]) -> Result<()> {
        if x.len() != self.input_dim() || h_prev.len() != self.hidden_dim() {
            return Err(Error::Shape(format!(
                "step expects x of {} and h of {}, got {} and {}",
                self.input_dim(),
                self.hidden_dim(),
                x.len(),
                h_prev.len()
            )));
        }
        if x.iter().chain(h_prev.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite step input".into()));
        }
        Ok(())
    }

    /// One recurrence step.
    pub fn step(&self, x: &[S], h_prev: &[S]) -> Result<Vec<S>> {
        Ok(self.step_cached(x, h_prev)?.h)
    }

    /// One step, returning all intermediates needed by the backward pass.
    pub fn step_cached(&self, x: &[S], h_prev: &[S]) -> Result<StepCache<S>> {
        self.check_dims(x, h_prev)?;
        let h = self.hidden_dim();
        // pre = W·x + U·h_prev, computed once and reused by gate and candidate.
        let mut pre = self.w.matvec(x);
        let uh = self.u.matvec(h_prev);
        for (p, u) in pre.iter_mut().zip(&uh) {
            *p += *u;
        }
        let mut z = vec![S::ZERO; h];
        let mut h_cand = vec![S::ZERO; h];
        let mut out = vec![S::ZERO; h];
        for i in 0..h {
            z[i] = match self.gate_nonlin {
                GateNonlin::Sigmoid => sigmoid(pre[i] + self.b_z[i]),
                GateNonlin::QuantSigmoid => quant_sigmoid(pre[i] + self.b_z[i]),
            };
            h_cand[i] = match self.update_nonlin {
                UpdateNonlin::Tanh => (pre[i] + self.b_h[i]).tanh(),
                UpdateNonlin::QuantTanh => quant_tanh(pre[i] + self.b_h[i]),
            };
            out[i] = z[i] * h_prev[i] + (self.zeta * (S::ONE - z[i]) + self.nu) * h_cand[i];
        }
        Ok(StepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            pre,
            z,
            h_cand,
            h: out,
        })
    }

    /// Reverse-mode derivatives of one step.
    ///
    /// Given dL/dh for this step's output, accumulates parameter gradients
    /// into `grads` and returns (dL/dx, dL/dh_prev). Quantized nonlinearities
    /// use their clamp subgradients (zero outside the linear region).
    pub fn step_backward(
        &self,
        cache: &StepCache<S>,
        dh: &[S],
        grads: &mut CellGrads<S>,
    ) -> (Vec<S>, Vec<S>) {
        let hd = self.hidden_dim();
        let mut dpre = vec![S::ZERO; hd];
        let mut dh_prev = vec![S::ZERO; hd];
        for i in 0..hd {
            let z = cache.z[i];
            let hc = cache.h_cand[i];
            // h = z·h_prev + (ζ(1−z)+ν)·h̃
            let dz = dh[i] * (cache.h_prev[i] - self.zeta * hc);
            let dhc = dh[i] * (self.zeta * (S::ONE - z) + self.nu);
            let dgate_arg = match self.gate_nonlin {
                GateNonlin::Sigmoid => dz * z * (S::ONE - z),
                GateNonlin::QuantSigmoid => {
                    let a = cache.pre[i] + self.b_z[i];
                    if a.to_f64() > -1.0 && a.to_f64() < 1.0 {
                        dz * S::from_f64(0.5)
                    } else {
                        S::ZERO
                    }
                }
            };
            let dupd_arg = match self.update_nonlin {
                UpdateNonlin::Tanh => dhc * (S::ONE - hc * hc),
                UpdateNonlin::QuantTanh => {
                    let a = cache.pre[i] + self.b_h[i];
                    if a.to_f64() > -1.0 && a.to_f64() < 1.0 {
                        dhc
                    } else {
                        S::ZERO
                    }
                }
            };
            grads.db_z[i] += dgate_arg;
            grads.db_h[i] += dupd_arg;
            dpre[i] = dgate_arg + dupd_arg;
            dh_prev[i] = dh[i] * z;
        }
        // dW += dpre·xᵀ ; dU += dpre·h_prevᵀ ; dx = Wᵀ·dpre ; dh_prev += Uᵀ·dpre
        for i in 0..hd {
            let d = dpre[i];
            for (j, &xv) in cache.x.iter().enumerate() {
                *grads.dw.at_mut(i, j) += d * xv;
            }
            for (j, &hv) in cache.h_prev.iter().enumerate() {
                *grads.du.at_mut(i, j) += d * hv;
            }
        }
        let dx = self.w.matvec_t(&dpre);
        let du_h = self.u.matvec_t(&dpre);
        for (a, b) in dh_prev.iter_mut().zip(&du_h) {
            *a += *b;
        }
        (dx, dh_prev)
    }

    /// Fold [`Self::step`] over a sequence starting from `h0`; returns the
    /// final hidden state only.
    pub fn run(&self, sequence: &[&[S]], h0: &[S]) -> Result<Vec<S>> {
        if sequence.is_empty() {
            return Err(Error::Arg("run requires a nonempty sequence".into()));
        }
        let mut h = h0.to_vec();
        for x in sequence {
            h = self.step(x, &h)?;
        }
        Ok(h)
    }

    /// Trainable parameter count: h·d + h² + 2h (ζ, ν are fixed).
    pub fn param_count(&self) -> usize {
        let (d, h) = (self.input_dim(), self.hidden_dim());
        h * d + h * h + 2 * h
    }

    /// Multiply-accumulate cost of one step: h·d + h² for the two
    /// matrix–vector products plus 4h for the elementwise gate arithmetic.
    pub fn step_madds(&self) -> usize {
        let (d, h) = (self.input_dim(), self.hidden_dim());
        h * d + h * h + 4 * h
    }

    pub fn cast<T: Scalar>(&self) -> FastGrnnCell<T> {
        FastGrnnCell {
            w: self.w.cast(),
            u: self.u.cast(),
            b_z: self.b_z.iter().map(|&v| T::from_f64(v.to_f64())).collect(),
            b_h: self.b_h.iter().map(|&v| T::from_f64(v.to_f64())).collect(),
            zeta: T::from_f64(self.zeta.to_f64()),
            nu: T::from_f64(self.nu.to_f64()),
            gate_nonlin: self.gate_nonlin,
            update_nonlin: self.update_nonlin,
            w_mask: self.w_mask.clone(),
            u_mask: self.u_mask.clone(),
        }
    }
}

impl FastGrnnCell<f32> {
    /// Serialize as little-endian float32: header (d, h as u32) followed by
    /// the flat arrays W, U, b_z, b_h.
    pub fn write_to(&self, w: &mut impl std::io::Write) -> Result<()> {
        w.write_u32::<LittleEndian>(self.input_dim() as u32)?;
        w.write_u32::<LittleEndian>(self.hidden_dim() as u32)?;
        for arr in [&self.w.data, &self.u.data, &self.b_z, &self.b_h] {
            for &v in arr.iter() {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    /// Inverse of [`Self::write_to`].
    pub fn read_from(r: &mut impl std::io::Read) -> Result<Self> {
        let d = r.read_u32::<LittleEndian>()? as usize;
        let h = r.read_u32::<LittleEndian>()? as usize;
        let mut cell = Self::zeros(d, h)?;
        for arr in [&mut cell.w.data, &mut cell.u.data, &mut cell.b_z, &mut cell.b_h] {
            for v in arr.iter_mut() {
                *v = r.read_f32::<LittleEndian>()?;
            }
        }
        Ok(cell)
    }
}

/// Sparsity density assignment for a two-cell pooling operator:
/// fraction of non-zeros in each matrix.
#[derive(Debug, Clone, Copy)]
pub struct SparsityPreset {
    pub w1_density: f64,
    pub u1_density: f64,
    pub w2_density: f64,
    pub u2_density: f64,
}

/// Named sparsity presets. `face-m4-sparsity` keeps 50% non-zeros in the
/// first cell's W and 30% in every other matrix.
pub fn sparsity_preset(name: &str) -> Result<SparsityPreset> {
    match name {
        "face-m4-sparsity" => Ok(SparsityPreset {
            w1_density: 0.50,
            u1_density: 0.30,
            w2_density: 0.30,
            u2_density: 0.30,
        }),
        other => Err(Error::Arg(format!("unknown sparsity preset '{other}'"))),
    }
}

/// Deterministic binary mask with exactly round(density·len) ones.
pub fn random_mask(len: usize, density: f64, seed: u64) -> Vec<u8> {
    let nnz = ((density * len as f64) + 0.5).floor() as usize;
    let mut idx: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut mask = vec![0u8; len];
    for &i in idx.iter().take(nnz.min(len)) {
        mask[i] = 1;
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn saturated_gate_freezes_state() {
        let mut cell = FastGrnnCell::<f64>::zeros(3, 4).unwrap();
        cell.b_z = vec![20.0; 4];
        let h_prev = vec![0.3, -0.7, 1.5, 0.0];
        let h = cell.step(&[1.0, 2.0, 3.0], &h_prev).unwrap();
        for (a, b) in h.iter().zip(&h_prev) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_cell_zero_state() {
        let cell = FastGrnnCell::<f64>::zeros(2, 2).unwrap();
        let h = cell.step(&[5.0, -5.0], &[0.0, 0.0]).unwrap();
        assert_eq!(h, vec![0.0, 0.0]);
    }

    #[test]
    fn step_matches_elementwise_oracle() {
        let mut r = rng(11);
        let cell = FastGrnnCell::<f64>::random(2, 2, 0.8, &mut r).unwrap();
        let x = [0.37, -0.92];
        let h_prev = [0.11, 0.55];
        let got = cell.step(&x, &h_prev).unwrap();
        // Scalar-by-scalar re-derivation of the three formula lines.
        for i in 0..2 {
            let pre = cell.w.at(i, 0) * x[0]
                + cell.w.at(i, 1) * x[1]
                + cell.u.at(i, 0) * h_prev[0]
                + cell.u.at(i, 1) * h_prev[1];
            let z = 1.0 / (1.0 + (-(pre + cell.b_z[i])).exp());
            let hc = (pre + cell.b_h[i]).tanh();
            let expect = z * h_prev[i] + (1.0 - z) * hc;
            assert!((got[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn run_composes_steps() {
        let mut r = rng(5);
        let cell = FastGrnnCell::<f64>::random(3, 4, 0.5, &mut r).unwrap();
        let seq: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let refs: Vec<&[f64]> = seq.iter().map(|v| v.as_slice()).collect();
        let h0 = vec![0.0; 4];
        let folded = cell.run(&refs, &h0).unwrap();
        let mut h = h0.clone();
        for x in &seq {
            h = cell.step(x, &h).unwrap();
        }
        assert_eq!(folded, h);

        // Length-1 sequence equals a single step.
        let one = cell.run(&refs[..1], &h0).unwrap();
        assert_eq!(one, cell.step(&seq[0], &h0).unwrap());

        // Saturated gate: identity on h0 for any sequence.
        let mut frozen = cell.clone();
        frozen.b_z = vec![25.0; 4];
        let h0b = vec![0.4, -0.2, 0.9, 0.0];
        let out = frozen.run(&refs, &h0b).unwrap();
        for (a, b) in out.iter().zip(&h0b) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn empty_sequence_rejected() {
        let cell = FastGrnnCell::<f64>::zeros(2, 2).unwrap();
        assert!(matches!(cell.run(&[], &[0.0, 0.0]), Err(Error::Arg(_))));
    }

    #[test]
    fn quant_nonlinearities() {
        assert_eq!(quant_tanh(0.0f64), 0.0);
        assert_eq!(quant_sigmoid(0.0f64), 0.5);
        assert_eq!(quant_tanh(5.0f64), 1.0);
        assert_eq!(quant_sigmoid(-3.0f64), 0.0);
        // Dense sweep: the piecewise-linear form stays within 0.25 of tanh.
        let mut x = -4.0f64;
        while x <= 4.0 {
            assert!((quant_tanh(x) - x.tanh()).abs() <= 0.25, "x={x}");
            x += 0.001;
        }
    }

    #[test]
    fn costs() {
        let cell = FastGrnnCell::<f32>::zeros(3, 4).unwrap();
        assert_eq!(cell.param_count(), 12 + 16 + 8);
        let cell = FastGrnnCell::<f32>::zeros(16, 16).unwrap();
        assert_eq!(cell.step_madds(), 256 + 256 + 64);
        assert!(FastGrnnCell::<f32>::zeros(0, 4).is_err());
    }

    #[test]
    fn step_stays_in_hull() {
        let mut r = rng(21);
        for _ in 0..50 {
            let cell = FastGrnnCell::<f64>::random(3, 3, 2.0, &mut r).unwrap();
            let x: Vec<f64> = (0..3).map(|_| r.gen_range(-3.0..3.0)).collect();
            let h_prev: Vec<f64> = (0..3).map(|_| r.gen_range(-2.0..2.0)).collect();
            let h = cell.step(&x, &h_prev).unwrap();
            for i in 0..3 {
                let lo = h_prev[i].min(-1.0) - 1e-12;
                let hi = h_prev[i].max(1.0) + 1e-12;
                assert!(h[i] >= lo && h[i] <= hi, "component {i} out of hull");
            }
        }
    }

    #[test]
    fn masked_entries_do_not_matter() {
        let mut r = rng(9);
        let mut cell = FastGrnnCell::<f64>::random(4, 3, 1.0, &mut r).unwrap();
        cell.w_mask = Some(random_mask(12, 0.5, 1));
        cell.u_mask = Some(random_mask(9, 0.5, 2));
        cell.apply_masks();
        let x: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
        let h_prev = vec![0.1, 0.2, 0.3];
        let base = cell.step(&x, &h_prev).unwrap();
        // Scribble under the masked positions, re-apply, and compare.
        let mut other = cell.clone();
        for (v, &keep) in other.w.data.iter_mut().zip(other.w_mask.as_ref().unwrap()) {
            if keep == 0 {
                *v = 123.0;
            }
        }
        other.apply_masks();
        assert_eq!(other.step(&x, &h_prev).unwrap(), base);
    }

    #[test]
    fn face_m4_sparsity_densities() {
        let p = sparsity_preset("face-m4-sparsity").unwrap();
        assert_eq!(p.w1_density, 0.50);
        assert_eq!(p.u1_density, 0.30);
        // Exact non-zero counts from the deterministic mask builder.
        let m = random_mask(16 * 4, 0.50, 0);
        assert_eq!(m.iter().filter(|&&b| b == 1).count(), 32);
        let m = random_mask(16 * 16, 0.30, 0);
        let nnz = m.iter().filter(|&&b| b == 1).count() as f64;
        assert!((nnz / 256.0 - 0.30).abs() <= 1.0 / 256.0);
        assert!(sparsity_preset("nope").is_err());
    }

    #[test]
    fn weight_serialization_roundtrip() {
        let mut r = rng(2);
        let cell = FastGrnnCell::<f32>::random(5, 3, 1.0, &mut r).unwrap();
        let mut buf = Vec::new();
        cell.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 4 * (15 + 9 + 3 + 3));
        let back = FastGrnnCell::<f32>::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.w, cell.w);
        assert_eq!(back.u, cell.u);
        assert_eq!(back.b_z, cell.b_z);
        assert_eq!(back.b_h, cell.b_h);
    }
}
