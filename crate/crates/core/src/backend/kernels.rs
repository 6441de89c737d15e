//! Naive f32 kernels over row-major slices.
//!
//! The batched engine and the reference interpreter both call these, so a
//! value computed either way goes through the same floating-point operations
//! in the same order.

use crate::ir::OpCode;

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn tanh(x: f32) -> f32 {
    x.tanh()
}

#[inline]
pub fn relu(x: f32) -> f32 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Applies a unary elementwise op to one element.
#[inline]
pub fn unary(op: OpCode, x: f32) -> f32 {
    match op {
        OpCode::Sigmoid => sigmoid(x),
        OpCode::Tanh => tanh(x),
        OpCode::Relu => relu(x),
        _ => unreachable!("{op} is not unary elementwise"),
    }
}

/// Applies a binary elementwise op to one element pair.
#[inline]
pub fn binary(op: OpCode, a: f32, b: f32) -> f32 {
    match op {
        OpCode::Add | OpCode::BiasAdd => a + b,
        OpCode::Mul => a * b,
        _ => unreachable!("{op} is not binary elementwise"),
    }
}

/// `out = a (m x k) * b (k x n)`, i-k-j loop order.
pub fn dense(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                row[j] += aik * brow[j];
            }
        }
    }
}

/// Concatenates `a (m x ka)` and `b (m x kb)` along columns.
pub fn concat(a: &[f32], b: &[f32], m: usize, ka: usize, kb: usize, out: &mut [f32]) {
    let w = ka + kb;
    for i in 0..m {
        out[i * w..i * w + ka].copy_from_slice(&a[i * ka..(i + 1) * ka]);
        out[i * w + ka..(i + 1) * w].copy_from_slice(&b[i * kb..(i + 1) * kb]);
    }
}

/// Index of the first maximal element; NaN never wins.
pub fn argmax(a: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in a.iter().enumerate() {
        if *v > a[best] {
            best = i;
        }
    }
    best
}

pub fn unary_into(op: OpCode, a: &[f32], out: &mut [f32]) {
    for (o, x) in out.iter_mut().zip(a) {
        *o = unary(op, *x);
    }
}

pub fn binary_into(op: OpCode, a: &[f32], b: &[f32], out: &mut [f32]) {
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o = binary(op, *x, *y);
    }
}

/// Evaluates one prim-op on host slices. `shapes` are the argument shapes;
/// returns the result (argmax yields a one-element tensor holding the index).
pub fn eval_op(op: OpCode, args: &[&[f32]], shapes: &[&[usize]]) -> Vec<f32> {
    match op {
        OpCode::Dense => {
            let (m, k, n) = (shapes[0][0], shapes[0][1], shapes[1][1]);
            let mut out = vec![0.0; m * n];
            dense(args[0], args[1], m, k, n, &mut out);
            out
        }
        OpCode::Concat => {
            let (m, ka, kb) = (shapes[0][0], shapes[0][1], shapes[1][1]);
            let mut out = vec![0.0; m * (ka + kb)];
            concat(args[0], args[1], m, ka, kb, &mut out);
            out
        }
        OpCode::Argmax => vec![argmax(args[0]) as f32],
        OpCode::Add | OpCode::BiasAdd | OpCode::Mul => {
            let mut out = vec![0.0; args[0].len()];
            binary_into(op, args[0], args[1], &mut out);
            out
        }
        OpCode::Sigmoid | OpCode::Tanh | OpCode::Relu => {
            let mut out = vec![0.0; args[0].len()];
            unary_into(op, args[0], &mut out);
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_dense() {
        let mut out = [0.0; 2];
        dense(&[1.0, 2.0], &[1.0, 0.0, 0.0, 1.0], 1, 2, 2, &mut out);
        assert_eq!(out, [1.0, 2.0]);
    }

    #[test]
    fn sigmoid_zero() {
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn argmax_first_max() {
        assert_eq!(argmax(&[0.1, 0.9, 0.3]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn concat_rows() {
        let mut out = [0.0; 6];
        concat(&[1.0, 2.0], &[3.0, 4.0, 5.0, 6.0], 2, 1, 2, &mut out);
        assert_eq!(out, [1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }
}
