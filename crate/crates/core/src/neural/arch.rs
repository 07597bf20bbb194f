use std::fmt;

use serde::{Deserialize, Serialize};

/// B-spline cells on `[-1, 1]` for KAN edges.
pub const KAN_GRID: usize = 5;
pub const KAN_DEGREE: usize = 3;
pub const CKAN_DEGREE: usize = 4;
pub const TRANSFORMER_HEADS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "MLP")]
    Mlp,
    #[serde(rename = "RNN")]
    Rnn,
    #[serde(rename = "LSTM")]
    Lstm,
    #[serde(rename = "Transformer")]
    Transformer,
    #[serde(rename = "KAN")]
    Kan,
    #[serde(rename = "cKAN")]
    Ckan,
    #[serde(rename = "LEM")]
    Lem,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Mlp,
        Family::Rnn,
        Family::Lstm,
        Family::Transformer,
        Family::Kan,
        Family::Ckan,
        Family::Lem,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Family::Mlp => "MLP",
            Family::Rnn => "RNN",
            Family::Lstm => "LSTM",
            Family::Transformer => "Transformer",
            Family::Kan => "KAN",
            Family::Ckan => "cKAN",
            Family::Lem => "LEM",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.label().eq_ignore_ascii_case(s))
    }

    pub fn default_learning_rate(&self) -> f64 {
        match self {
            Family::Transformer => 5e-4,
            _ => 1e-3,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Hidden sizes per family. Recurrent and KAN-style bodies stack one layer
/// per entry of `hidden`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", deny_unknown_fields)]
pub enum Architecture {
    #[serde(rename = "MLP")]
    Mlp { hidden: [usize; 2] },
    #[serde(rename = "RNN")]
    Rnn { hidden: Vec<usize> },
    #[serde(rename = "LSTM")]
    Lstm { hidden: Vec<usize> },
    #[serde(rename = "Transformer")]
    Transformer {
        d_model: usize,
        heads: usize,
        ffn: usize,
        blocks: usize,
    },
    #[serde(rename = "KAN")]
    Kan { hidden: Vec<usize>, grid: usize, degree: usize },
    #[serde(rename = "cKAN")]
    Ckan { hidden: Vec<usize>, degree: usize },
    #[serde(rename = "LEM")]
    Lem { hidden: Vec<usize> },
}

impl Architecture {
    pub fn family(&self) -> Family {
        match self {
            Architecture::Mlp { .. } => Family::Mlp,
            Architecture::Rnn { .. } => Family::Rnn,
            Architecture::Lstm { .. } => Family::Lstm,
            Architecture::Transformer { .. } => Family::Transformer,
            Architecture::Kan { .. } => Family::Kan,
            Architecture::Ckan { .. } => Family::Ckan,
            Architecture::Lem { .. } => Family::Lem,
        }
    }

    pub fn kan(hidden: Vec<usize>) -> Self {
        Architecture::Kan {
            hidden,
            grid: KAN_GRID,
            degree: KAN_DEGREE,
        }
    }

    pub fn ckan(hidden: Vec<usize>) -> Self {
        Architecture::Ckan {
            hidden,
            degree: CKAN_DEGREE,
        }
    }

    pub fn transformer(d_model: usize, ffn: usize, blocks: usize) -> Self {
        Architecture::Transformer {
            d_model,
            heads: TRANSFORMER_HEADS,
            ffn,
            blocks,
        }
    }

    /// Width of the representation the head reads.
    pub fn head_width(&self) -> usize {
        match self {
            Architecture::Mlp { hidden } => hidden[1],
            Architecture::Rnn { hidden } | Architecture::Lstm { hidden } | Architecture::Lem { hidden } => *hidden.last().unwrap_or(&0),
            Architecture::Kan { hidden, .. } | Architecture::Ckan { hidden, .. } => *hidden.last().unwrap_or(&0),
            Architecture::Transformer { d_model, .. } => *d_model,
        }
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        let widths_ok = |h: &[usize]| !h.is_empty() && h.iter().all(|&w| w > 0);
        match self {
            Architecture::Mlp { hidden } if hidden.contains(&0) => Err("MLP widths must be positive".into()),
            Architecture::Rnn { hidden } | Architecture::Lstm { hidden } | Architecture::Lem { hidden } if !widths_ok(hidden) => {
                Err("recurrent widths must be non-empty and positive".into())
            }
            Architecture::Kan { hidden, grid, .. } if !widths_ok(hidden) || *grid == 0 => Err("KAN needs positive widths and grid".into()),
            Architecture::Ckan { hidden, .. } if !widths_ok(hidden) => Err("cKAN widths must be non-empty and positive".into()),
            Architecture::Transformer {
                d_model,
                heads,
                ffn,
                blocks,
            } if *heads == 0 || *d_model == 0 || d_model % heads != 0 || *ffn == 0 || *blocks == 0 => Err(format!(
                "Transformer needs d_model divisible by heads, got d_model={d_model}, heads={heads}"
            )),
            _ => Ok(()),
        }
    }

    /// Closed-form trainable parameter count for a lookback of `lookback`.
    pub fn parameter_count(&self, lookback: usize) -> usize {
        let head = self.head_width() + 1;
        let body = match self {
            Architecture::Mlp { hidden: [h1, h2] } => lookback * h1 + h1 + h1 * h2 + h2,
            Architecture::Rnn { hidden } => stacked(hidden, |i, h| (i + h) * h + h),
            Architecture::Lstm { hidden } => stacked(hidden, |i, h| 4 * ((i + h) * h + h)),
            Architecture::Lem { hidden } => stacked(hidden, |i, h| 4 * ((i + h) * h + h)),
            Architecture::Kan { hidden, grid, degree } => kan_chain(lookback, hidden, grid + degree + 1),
            Architecture::Ckan { hidden, degree } => kan_chain(lookback, hidden, degree + 1),
            Architecture::Transformer {
                d_model: d,
                ffn: f,
                blocks,
                ..
            } => {
                let embed = 2 * d + lookback * d;
                let block = 4 * d * d + 4 * d + 2 * d * f + f + d;
                embed + blocks * block
            }
        };
        body + head
    }
}

fn stacked(hidden: &[usize], layer: impl Fn(usize, usize) -> usize) -> usize {
    let mut input = 1;
    let mut total = 0;
    for &h in hidden {
        total += layer(input, h);
        input = h;
    }
    total
}

fn kan_chain(lookback: usize, hidden: &[usize], per_edge: usize) -> usize {
    let mut input = lookback;
    let mut total = 0;
    for &h in hidden {
        total += input * h * per_edge;
        input = h;
    }
    total
}
