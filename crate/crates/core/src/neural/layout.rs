//! Named parameter blocks and their initialization.

use pif_autodiff::{uniform_knots, Shape};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::arch::Architecture;
use crate::rng::{self, SeededRng};

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

/// One contiguous slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Biases are vectors broadcast over rows.
    pub vector: bool,
    pub offset: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> Shape {
        if self.vector {
            Shape::Vector(self.cols)
        } else {
            Shape::Matrix(self.rows, self.cols)
        }
    }

    pub fn is_head(&self) -> bool {
        self.name == HEAD_WEIGHT || self.name == HEAD_BIAS
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    Uniform { fan_in: usize },
    /// Per-edge random-slope ramp through the Greville abscissae plus small
    /// noise, so each spline starts close to a linear function.
    SplineRamp { fan_in: usize, grid: usize, degree: usize },
    /// Zero except the `T_1` coefficient.
    ChebyshevLinear { fan_in: usize, degree: usize },
}

struct Builder {
    blocks: Vec<ParamBlock>,
    inits: Vec<Init>,
    offset: usize,
}

impl Builder {
    fn push(&mut self, name: String, rows: usize, cols: usize, vector: bool, init: Init) {
        self.blocks.push(ParamBlock {
            name,
            rows,
            cols,
            vector,
            offset: self.offset,
        });
        self.offset += rows * cols;
        self.inits.push(init);
    }

    fn weight(&mut self, name: String, rows: usize, cols: usize, fan_in: usize) {
        self.push(name, rows, cols, false, Init::Uniform { fan_in });
    }

    fn bias(&mut self, name: String, cols: usize, fan_in: usize) {
        self.push(name, 1, cols, true, Init::Uniform { fan_in });
    }
}

fn build(arch: &Architecture, lookback: usize) -> Builder {
    let mut b = Builder {
        blocks: Vec::new(),
        inits: Vec::new(),
        offset: 0,
    };
    match arch {
        Architecture::Mlp { hidden: [h1, h2] } => {
            b.weight("l0.weight".into(), lookback, *h1, lookback);
            b.bias("l0.bias".into(), *h1, lookback);
            b.weight("l1.weight".into(), *h1, *h2, *h1);
            b.bias("l1.bias".into(), *h2, *h1);
        }
        Architecture::Rnn { hidden } | Architecture::Lstm { hidden } => {
            let gates = if matches!(arch, Architecture::Lstm { .. }) { 4 } else { 1 };
            let mut input = 1;
            for (i, &h) in hidden.iter().enumerate() {
                b.weight(format!("r{i}.weight"), input + h, gates * h, input + h);
                b.bias(format!("r{i}.bias"), gates * h, input + h);
                input = h;
            }
        }
        Architecture::Lem { hidden } => {
            let mut input = 1;
            for (i, &h) in hidden.iter().enumerate() {
                // both time-scale gates and the z candidate read [u, y]
                b.weight(format!("r{i}.gates.weight"), input + h, 3 * h, input + h);
                b.bias(format!("r{i}.gates.bias"), 3 * h, input + h);
                // the y candidate reads [u, z]
                b.weight(format!("r{i}.y.weight"), input + h, h, input + h);
                b.bias(format!("r{i}.y.bias"), h, input + h);
                input = h;
            }
        }
        Architecture::Kan { hidden, grid, degree } => {
            let k = grid + degree;
            let mut input = lookback;
            for (i, &h) in hidden.iter().enumerate() {
                b.weight(format!("k{i}.base"), input, h, input);
                b.push(
                    format!("k{i}.spline"),
                    input * k,
                    h,
                    false,
                    Init::SplineRamp {
                        fan_in: input,
                        grid: *grid,
                        degree: *degree,
                    },
                );
                input = h;
            }
        }
        Architecture::Ckan { hidden, degree } => {
            let mut input = lookback;
            for (i, &h) in hidden.iter().enumerate() {
                b.push(
                    format!("c{i}.coeff"),
                    input * (degree + 1),
                    h,
                    false,
                    Init::ChebyshevLinear {
                        fan_in: input,
                        degree: *degree,
                    },
                );
                input = h;
            }
        }
        Architecture::Transformer {
            d_model: d,
            ffn: f,
            blocks,
            ..
        } => {
            let (d, f) = (*d, *f);
            b.weight("embed.weight".into(), 1, d, 1);
            b.bias("embed.bias".into(), d, 1);
            b.weight("embed.position".into(), lookback, d, d);
            for i in 0..*blocks {
                b.weight(format!("t{i}.qkv.weight"), d, 3 * d, d);
                b.bias(format!("t{i}.qkv.bias"), 3 * d, d);
                b.weight(format!("t{i}.out.weight"), d, d, d);
                b.bias(format!("t{i}.out.bias"), d, d);
                b.weight(format!("t{i}.ffn1.weight"), d, f, d);
                b.bias(format!("t{i}.ffn1.bias"), f, d);
                b.weight(format!("t{i}.ffn2.weight"), f, d, f);
                b.bias(format!("t{i}.ffn2.bias"), d, f);
            }
        }
    }
    let h = arch.head_width();
    b.weight(HEAD_WEIGHT.into(), h, 1, h);
    b.bias(HEAD_BIAS.into(), 1, h);
    b
}

pub fn layout(arch: &Architecture, lookback: usize) -> Vec<ParamBlock> {
    build(arch, lookback).blocks
}

/// Greville abscissae of a uniform knot vector on `[-1, 1]`: spline
/// coefficients equal to these reproduce the identity on the grid.
pub fn greville(grid: usize, degree: usize) -> Vec<f64> {
    let knots = uniform_knots(-1.0, 1.0, grid, degree);
    let k = grid + degree;
    (0..k)
        .map(|j| knots[j + 1..=j + degree].iter().sum::<f64>() / degree.max(1) as f64)
        .collect()
}

pub fn initialize(arch: &Architecture, lookback: usize, seed: u64) -> (Vec<ParamBlock>, Vec<f64>) {
    let b = build(arch, lookback);
    let mut params = vec![0.0; b.offset];
    let mut g: SeededRng = rng::seeded(seed);
    for (block, init) in b.blocks.iter().zip(&b.inits) {
        let out = &mut params[block.range()];
        match *init {
            Init::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                for v in out.iter_mut() {
                    *v = g.random_range(-bound..bound);
                }
            }
            Init::SplineRamp { fan_in, grid, degree } => {
                let ramp = greville(grid, degree);
                let k = ramp.len();
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let cols = block.cols;
                for i in 0..fan_in {
                    for o in 0..cols {
                        let slope = g.random_range(-bound..bound);
                        for (j, r) in ramp.iter().enumerate() {
                            out[(i * k + j) * cols + o] = slope * r + rng::gaussian(&mut g, 0.01 * bound);
                        }
                    }
                }
            }
            Init::ChebyshevLinear { fan_in, degree } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let cols = block.cols;
                for i in 0..fan_in {
                    for o in 0..cols {
                        out[(i * (degree + 1) + 1) * cols + o] = g.random_range(-bound..bound);
                    }
                }
            }
        }
    }
    (b.blocks, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_length_matches_closed_form() {
        let archs = [
            Architecture::Mlp { hidden: [7, 5] },
            Architecture::Rnn { hidden: vec![6, 4] },
            Architecture::Lstm { hidden: vec![5] },
            Architecture::Lem { hidden: vec![3, 3] },
            Architecture::kan(vec![3, 2]),
            Architecture::ckan(vec![4]),
            Architecture::transformer(6, 9, 2),
        ];
        for arch in archs {
            let (blocks, params) = initialize(&arch, 11, 0);
            assert_eq!(params.len(), arch.parameter_count(11), "{arch:?}");
            let last = blocks.last().unwrap();
            assert_eq!(last.offset + last.len(), params.len());
        }
    }

    #[test]
    fn greville_points_span_the_grid() {
        let g = greville(5, 3);
        assert_eq!(g.len(), 8);
        for (j, v) in g.iter().enumerate() {
            assert!((v - (-1.4 + 0.4 * j as f64)).abs() < 1e-12, "{j}: {v}");
        }
    }
}
