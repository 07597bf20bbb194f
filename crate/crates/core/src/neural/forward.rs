//! Per-family forward passes on a batch `(B, L)` of windows, each returning
//! `(B, 1)`. Parameters are looked up by block name on the bound tape.

use std::collections::HashMap;
use std::rc::Rc;

use pif_autodiff::{uniform_knots, Result, Shape, Tape, Value};

use super::arch::Architecture;
use super::layout::{HEAD_BIAS, HEAD_WEIGHT};

pub struct Bound<'a> {
    pub values: Vec<Value>,
    pub index: &'a HashMap<String, usize>,
}

impl Bound<'_> {
    pub fn get(&self, name: &str) -> Value {
        self.values[self.index[name]]
    }
}

fn affine(tape: &mut Tape, x: Value, w: Value, b: Value) -> Result<Value> {
    let xw = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}

fn zeros(tape: &mut Tape, rows: usize, cols: usize) -> Result<Value> {
    tape.matrix(rows, cols, vec![0.0; rows * cols])
}

/// `x * sigmoid(x)`.
pub fn silu(tape: &mut Tape, x: Value) -> Result<Value> {
    let s = tape.sigmoid(x)?;
    tape.mul(x, s)
}

/// One KAN layer: every edge `(i, o)` applies
/// `base[i, o] * silu(x_i) + sum_j spline[i*k + j, o] * B_j(x_i)` and each
/// output sums its incoming edges.
pub fn kan_layer(tape: &mut Tape, x: Value, base: Value, spline: Value, knots: Rc<[f64]>, degree: usize) -> Result<Value> {
    let basis = tape.bspline(x, knots, degree)?;
    let spline_part = tape.matmul(basis, spline)?;
    let act = silu(tape, x)?;
    let base_part = tape.matmul(act, base)?;
    tape.add(spline_part, base_part)
}

/// One Chebyshev-KAN layer: edge `(i, o)` is
/// `sum_d coeff[i*(D+1) + d, o] * T_d(tanh x_i)`.
pub fn ckan_layer(tape: &mut Tape, x: Value, coeff: Value, degree: usize) -> Result<Value> {
    let squashed = tape.tanh(x)?;
    let basis = tape.chebyshev(squashed, degree)?;
    tape.matmul(basis, coeff)
}

fn head(tape: &mut Tape, p: &Bound, h: Value) -> Result<Value> {
    affine(tape, h, p.get(HEAD_WEIGHT), p.get(HEAD_BIAS))
}

pub fn forward_batch(arch: &Architecture, tape: &mut Tape, p: &Bound, x: Value) -> Result<Value> {
    let h = body(arch, tape, p, x)?;
    head(tape, p, h)
}

/// Hidden representation the head reads, `(B, head_width)`.
pub fn body(arch: &Architecture, tape: &mut Tape, p: &Bound, x: Value) -> Result<Value> {
    let (batch, lookback) = match x.shape() {
        Shape::Matrix(b, l) => (b, l),
        other => panic!("forward expects a (batch, lookback) matrix, got {other}"),
    };
    match arch {
        Architecture::Mlp { .. } => {
            let a = affine(tape, x, p.get("l0.weight"), p.get("l0.bias"))?;
            let a = tape.tanh(a)?;
            let a = affine(tape, a, p.get("l1.weight"), p.get("l1.bias"))?;
            tape.tanh(a)
        }
        Architecture::Rnn { hidden } => {
            let mut inputs: Vec<Value> = (0..lookback).map(|t| tape.slice_cols(x, t..t + 1)).collect::<Result<_>>()?;
            for (i, &h) in hidden.iter().enumerate() {
                let (w, b) = (p.get(&format!("r{i}.weight")), p.get(&format!("r{i}.bias")));
                let mut state = zeros(tape, batch, h)?;
                let mut outputs = Vec::with_capacity(lookback);
                for &u in &inputs {
                    let joined = tape.concat(&[u, state])?;
                    let pre = affine(tape, joined, w, b)?;
                    state = tape.tanh(pre)?;
                    outputs.push(state);
                }
                inputs = outputs;
            }
            Ok(*inputs.last().unwrap())
        }
        Architecture::Lstm { hidden } => {
            let mut inputs: Vec<Value> = (0..lookback).map(|t| tape.slice_cols(x, t..t + 1)).collect::<Result<_>>()?;
            for (i, &h) in hidden.iter().enumerate() {
                let (w, b) = (p.get(&format!("r{i}.weight")), p.get(&format!("r{i}.bias")));
                let mut state = zeros(tape, batch, h)?;
                let mut cell = zeros(tape, batch, h)?;
                let mut outputs = Vec::with_capacity(lookback);
                for &u in &inputs {
                    let joined = tape.concat(&[u, state])?;
                    let pre = affine(tape, joined, w, b)?;
                    let ig = tape.slice_cols(pre, 0..h)?;
                    let ig = tape.sigmoid(ig)?;
                    let fg = tape.slice_cols(pre, h..2 * h)?;
                    let fg = tape.sigmoid(fg)?;
                    let cand = tape.slice_cols(pre, 2 * h..3 * h)?;
                    let cand = tape.tanh(cand)?;
                    let og = tape.slice_cols(pre, 3 * h..4 * h)?;
                    let og = tape.sigmoid(og)?;
                    let keep = tape.mul(fg, cell)?;
                    let write = tape.mul(ig, cand)?;
                    cell = tape.add(keep, write)?;
                    let squashed = tape.tanh(cell)?;
                    state = tape.mul(og, squashed)?;
                    outputs.push(state);
                }
                inputs = outputs;
            }
            Ok(*inputs.last().unwrap())
        }
        Architecture::Lem { hidden } => {
            // Long expressive memory with dt = 1:
            //   dt1 = sigmoid(W1 [u, y] + b1), dt2 = sigmoid(W2 [u, y] + b2)
            //   z <- (1 - dt1) z + dt1 tanh(Wz [u, y] + bz)
            //   y <- (1 - dt2) y + dt2 tanh(Wy [u, z] + by)
            let mut inputs: Vec<Value> = (0..lookback).map(|t| tape.slice_cols(x, t..t + 1)).collect::<Result<_>>()?;
            for (i, &h) in hidden.iter().enumerate() {
                let gw = p.get(&format!("r{i}.gates.weight"));
                let gb = p.get(&format!("r{i}.gates.bias"));
                let yw = p.get(&format!("r{i}.y.weight"));
                let yb = p.get(&format!("r{i}.y.bias"));
                let mut y = zeros(tape, batch, h)?;
                let mut z = zeros(tape, batch, h)?;
                let mut outputs = Vec::with_capacity(lookback);
                for &u in &inputs {
                    let joined = tape.concat(&[u, y])?;
                    let pre = affine(tape, joined, gw, gb)?;
                    let dt1 = tape.slice_cols(pre, 0..h)?;
                    let dt1 = tape.sigmoid(dt1)?;
                    let dt2 = tape.slice_cols(pre, h..2 * h)?;
                    let dt2 = tape.sigmoid(dt2)?;
                    let zc = tape.slice_cols(pre, 2 * h..3 * h)?;
                    let zc = tape.tanh(zc)?;
                    z = lerp(tape, z, zc, dt1)?;
                    let joined = tape.concat(&[u, z])?;
                    let yc = affine(tape, joined, yw, yb)?;
                    let yc = tape.tanh(yc)?;
                    y = lerp(tape, y, yc, dt2)?;
                    outputs.push(y);
                }
                inputs = outputs;
            }
            Ok(*inputs.last().unwrap())
        }
        Architecture::Kan { hidden, grid, degree } => {
            let knots: Rc<[f64]> = uniform_knots(-1.0, 1.0, *grid, *degree).into();
            let mut a = x;
            for i in 0..hidden.len() {
                a = kan_layer(
                    tape,
                    a,
                    p.get(&format!("k{i}.base")),
                    p.get(&format!("k{i}.spline")),
                    knots.clone(),
                    *degree,
                )?;
            }
            Ok(a)
        }
        Architecture::Ckan { hidden, degree } => {
            let mut a = x;
            for i in 0..hidden.len() {
                a = ckan_layer(tape, a, p.get(&format!("c{i}.coeff")), *degree)?;
            }
            Ok(a)
        }
        Architecture::Transformer { .. } => {
            let mut rows = Vec::with_capacity(batch);
            for s in 0..batch {
                let window = tape.slice_rows(x, s..s + 1)?;
                let states = transformer_states(arch, tape, p, window)?;
                rows.push(tape.slice_rows(states, lookback - 1..lookback)?);
            }
            if batch == 1 {
                return Ok(rows[0]);
            }
            // concat joins matrices column-wise: stack (d, 1) columns, then transpose
            let cols: Vec<Value> = rows.iter().map(|r| tape.transpose(*r)).collect::<Result<_>>()?;
            let stacked = tape.concat(&cols)?;
            tape.transpose(stacked)
        }
    }
}

/// `a + gate * (b - a)`, i.e. `(1 - gate) a + gate b`.
fn lerp(tape: &mut Tape, a: Value, b: Value, gate: Value) -> Result<Value> {
    let diff = tape.sub(b, a)?;
    let step = tape.mul(gate, diff)?;
    tape.add(a, step)
}

/// Hidden states at every position for a single `(1, L)` window, `(L, d)`.
pub fn transformer_states(arch: &Architecture, tape: &mut Tape, p: &Bound, window: Value) -> Result<Value> {
    let Architecture::Transformer {
        d_model: d, heads, blocks, ..
    } = *arch
    else {
        panic!("transformer_states on {arch:?}");
    };
    let column = tape.transpose(window)?;
    let embedded = affine(tape, column, p.get("embed.weight"), p.get("embed.bias"))?;
    let mut h = tape.add(embedded, p.get("embed.position"))?;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    for i in 0..blocks {
        let qkv = affine(tape, h, p.get(&format!("t{i}.qkv.weight")), p.get(&format!("t{i}.qkv.bias")))?;
        let mut head_out = Vec::with_capacity(heads);
        for k in 0..heads {
            let q = tape.slice_cols(qkv, k * dh..(k + 1) * dh)?;
            let key = tape.slice_cols(qkv, d + k * dh..d + (k + 1) * dh)?;
            let v = tape.slice_cols(qkv, 2 * d + k * dh..2 * d + (k + 1) * dh)?;
            let kt = tape.transpose(key)?;
            let scores = tape.matmul(q, kt)?;
            let scores = tape.scale(scores, scale)?;
            let attn = tape.softmax(scores, true)?;
            head_out.push(tape.matmul(attn, v)?);
        }
        let merged = tape.concat(&head_out)?;
        let projected = affine(tape, merged, p.get(&format!("t{i}.out.weight")), p.get(&format!("t{i}.out.bias")))?;
        h = tape.add(h, projected)?;
        let ff = affine(tape, h, p.get(&format!("t{i}.ffn1.weight")), p.get(&format!("t{i}.ffn1.bias")))?;
        let ff = tape.tanh(ff)?;
        let ff = affine(tape, ff, p.get(&format!("t{i}.ffn2.weight")), p.get(&format!("t{i}.ffn2.bias")))?;
        h = tape.add(h, ff)?;
    }
    Ok(h)
}

/// Head applied to every position of a single window, `(L, 1)`.
pub fn transformer_position_outputs(arch: &Architecture, tape: &mut Tape, p: &Bound, window: Value) -> Result<Value> {
    let states = transformer_states(arch, tape, p, window)?;
    head(tape, p, states)
}
