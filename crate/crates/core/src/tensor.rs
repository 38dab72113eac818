//! Row-major H×W×C activation maps, patch extraction, and byte accounting.
//!
//! Layout is channel-last: element (i, j, ch) lives at `(i*w + j)*c + ch`.
//! Maps are immutable from the perspective of readers once constructed;
//! mutation is confined to the constructing context.

use crate::error::{Error, Result};
use crate::Scalar;

/// Element types recognized by the byte accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Dtype {
    F32,
    F64,
    I8,
}

impl Dtype {
    /// Size of one element in bytes.
    pub fn size_of(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
            Dtype::I8 => 1,
        }
    }
}

/// Bytes occupied by a dense H×W×C map of the given dtype.
pub fn byte_size(h: usize, w: usize, c: usize, dtype: Dtype) -> usize {
    h * w * c * dtype.size_of()
}

/// Out-of-bounds handling for patch extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PadPolicy {
    /// Out-of-bounds cells read as zero.
    #[default]
    ZeroPad,
    /// Out-of-bounds patches are an error.
    Reject,
}

/// A rectangular patch request.
#[derive(Debug, Clone, Copy)]
pub struct PatchSpec {
    pub top: isize,
    pub left: isize,
    pub rows: usize,
    pub cols: usize,
    pub pad: PadPolicy,
}

/// Dense row-major H×W×C activation map.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorMap<S: Scalar = f32> {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<S>,
}

impl<S: Scalar> TensorMap<S> {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        TensorMap {
            h,
            w,
            c,
            data: vec![S::ZERO; h * w * c],
        }
    }

    pub fn from_vec(h: usize, w: usize, c: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != h * w * c {
            return Err(Error::Shape(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                h,
                w,
                c
            )));
        }
        Ok(TensorMap { h, w, c, data })
    }

    pub fn from_fn(h: usize, w: usize, c: usize, mut f: impl FnMut(usize, usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(h * w * c);
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    data.push(f(i, j, ch));
                }
            }
        }
        TensorMap { h, w, c, data }
    }

    pub fn h(&self) -> usize {
        self.h
    }
    pub fn w(&self) -> usize {
        self.w
    }
    pub fn c(&self) -> usize {
        self.c
    }
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }
    pub fn data(&self) -> &[S] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, ch: usize) -> S {
        self.data[(i * self.w + j) * self.c + ch]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, ch: usize, v: S) {
        self.data[(i * self.w + j) * self.c + ch] = v;
    }

    /// Read with zero padding outside the bounds.
    #[inline]
    pub fn get_padded(&self, i: isize, j: isize, ch: usize) -> S {
        if i < 0 || j < 0 || i as usize >= self.h || j as usize >= self.w {
            S::ZERO
        } else {
            self.get(i as usize, j as usize, ch)
        }
    }

    pub fn bytes(&self, dtype: Dtype) -> usize {
        byte_size(self.h, self.w, self.c, dtype)
    }

    /// Convert element type (used to move between f32 executors and f64
    /// gradient checking).
    pub fn cast<T: Scalar>(&self) -> TensorMap<T> {
        TensorMap {
            h: self.h,
            w: self.w,
            c: self.c,
            data: self.data.iter().map(|&v| T::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Copy an r×c×C patch out of `map`.
///
/// Under [`PadPolicy::ZeroPad`] out-of-bounds cells read as zero; under
/// [`PadPolicy::Reject`] the patch must lie fully inside the map.
pub fn extract_patch<S: Scalar>(map: &TensorMap<S>, spec: &PatchSpec) -> Result<TensorMap<S>> {
    if spec.pad == PadPolicy::Reject {
        let bottom = spec.top + spec.rows as isize;
        let right = spec.left + spec.cols as isize;
        if spec.top < 0 || spec.left < 0 || bottom > map.h as isize || right > map.w as isize {
            return Err(Error::Bounds(format!(
                "patch ({},{}) {}x{} outside {}x{} map",
                spec.top, spec.left, spec.rows, spec.cols, map.h, map.w
            )));
        }
    }
    let mut out = TensorMap::zeros(spec.rows, spec.cols, map.c);
    for i in 0..spec.rows {
        for j in 0..spec.cols {
            for ch in 0..map.c {
                let v = map.get_padded(spec.top + i as isize, spec.left + j as isize, ch);
                out.set(i, j, ch, v);
            }
        }
    }
    Ok(out)
}

/// Write a patch back at the same offset; out-of-bounds cells are dropped.
/// Together with [`extract_patch`] this is the identity on in-bounds cells.
pub fn write_patch<S: Scalar>(map: &mut TensorMap<S>, patch: &TensorMap<S>, top: isize, left: isize) {
    for i in 0..patch.h() {
        for j in 0..patch.w() {
            let (ti, tj) = (top + i as isize, left + j as isize);
            if ti < 0 || tj < 0 || ti as usize >= map.h || tj as usize >= map.w {
                continue;
            }
            for ch in 0..patch.c() {
                map.set(ti as usize, tj as usize, ch, patch.get(i, j, ch));
            }
        }
    }
}
