//! Width search that lands a family on a target parameter count.
//!
//! A first pass tries the canonical shape of each family (equal MLP widths,
//! one recurrent or KAN layer, one Transformer block with `ffn = 2d`). When
//! that misses the target by more than 2%, a second pass widens the search
//! to a second dimension and takes the closest count. Ties keep the first
//! candidate in enumeration order.

use serde::{Deserialize, Serialize};

use super::arch::{Architecture, Family};
use super::NeuralError;

pub const MAX_TOLERANCE: f64 = 0.05;
const CANONICAL_SLACK: f64 = 0.02;

/// Desk-scale tiers; the last one is the headline size.
pub const DESK_TIERS: [usize; 3] = [2_000, 8_000, 30_000];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeTier {
    pub target: usize,
    pub tolerance: f64,
}

impl SizeTier {
    pub fn new(target: usize, tolerance: f64) -> Result<Self, NeuralError> {
        if !(tolerance > 0.0 && tolerance <= MAX_TOLERANCE) {
            return Err(NeuralError::Tolerance(tolerance));
        }
        Ok(Self { target, tolerance })
    }

    pub fn with_target(target: usize) -> Self {
        Self {
            target,
            tolerance: MAX_TOLERANCE,
        }
    }

    pub fn admits(&self, count: usize) -> bool {
        (count as f64 - self.target as f64).abs() <= self.tolerance * self.target as f64
    }
}

fn canonical(family: Family, lookback: usize, target: usize) -> Vec<Architecture> {
    let mut out = Vec::new();
    let limit = 2 * target + 16;
    let mut w = 1;
    loop {
        let arch = match family {
            Family::Mlp => Architecture::Mlp { hidden: [w, w] },
            Family::Rnn => Architecture::Rnn { hidden: vec![w] },
            Family::Lstm => Architecture::Lstm { hidden: vec![w] },
            Family::Lem => Architecture::Lem { hidden: vec![w] },
            Family::Kan => Architecture::kan(vec![w]),
            Family::Ckan => Architecture::ckan(vec![w]),
            Family::Transformer => Architecture::transformer(2 * w, 4 * w, 1),
        };
        let count = arch.parameter_count(lookback);
        out.push(arch);
        if count > limit {
            break;
        }
        w += 1;
    }
    out
}

fn extended(family: Family, lookback: usize, target: usize) -> Vec<Architecture> {
    let limit = 2 * target + 16;
    let mut out = Vec::new();
    let mut w = 1;
    loop {
        let first_count;
        match family {
            Family::Mlp => {
                first_count = Architecture::Mlp {
                    hidden: [w, w.div_ceil(2)],
                }
                .parameter_count(lookback);
                for s in w.div_ceil(2)..=w {
                    out.push(Architecture::Mlp { hidden: [w, s] });
                }
            }
            Family::Rnn | Family::Lstm | Family::Lem | Family::Kan | Family::Ckan => {
                let make = |hidden: Vec<usize>| match family {
                    Family::Rnn => Architecture::Rnn { hidden },
                    Family::Lstm => Architecture::Lstm { hidden },
                    Family::Lem => Architecture::Lem { hidden },
                    Family::Kan => Architecture::kan(hidden),
                    _ => Architecture::ckan(hidden),
                };
                first_count = make(vec![w]).parameter_count(lookback);
                out.push(make(vec![w]));
                for s in w.div_ceil(2)..=w {
                    out.push(make(vec![w, s]));
                }
            }
            Family::Transformer => {
                let d = 2 * w;
                first_count = Architecture::transformer(d, d, 1).parameter_count(lookback);
                for blocks in 1..=2 {
                    for f in d..=4 * d {
                        out.push(Architecture::transformer(d, f, blocks));
                    }
                }
            }
        }
        if first_count > limit {
            break;
        }
        w += 1;
    }
    out
}

fn closest(candidates: Vec<Architecture>, lookback: usize, target: usize) -> Option<(Architecture, usize)> {
    let mut best: Option<(Architecture, usize)> = None;
    for arch in candidates {
        let count = arch.parameter_count(lookback);
        let better = match &best {
            None => true,
            Some((_, c)) => count.abs_diff(target) < c.abs_diff(target),
        };
        if better {
            best = Some((arch, count));
        }
    }
    best
}

/// Picks hidden sizes for `family` so the parameter count is within the
/// tier tolerance.
pub fn size_architecture(family: Family, lookback: usize, tier: SizeTier) -> Result<Architecture, NeuralError> {
    SizeTier::new(tier.target, tier.tolerance)?;
    let target = tier.target;
    let (arch, count) = closest(canonical(family, lookback, target), lookback, target).expect("non-empty candidate list");
    if count.abs_diff(target) as f64 <= CANONICAL_SLACK * target as f64 {
        return Ok(arch);
    }
    let (arch, count) = closest(extended(family, lookback, target), lookback, target).expect("non-empty candidate list");
    if tier.admits(count) {
        Ok(arch)
    } else {
        Err(NeuralError::Infeasible {
            family,
            target,
            nearest: count,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_tiers_hit_every_family() {
        for target in DESK_TIERS {
            for family in Family::ALL {
                let arch = size_architecture(family, 50, SizeTier::with_target(target)).unwrap();
                let c = arch.parameter_count(50);
                assert!(SizeTier::with_target(target).admits(c), "{family} {target}: {c}");
            }
        }
    }

    #[test]
    fn tiny_tier_is_infeasible_for_lstm() {
        let err = size_architecture(Family::Lstm, 50, SizeTier::with_target(10)).unwrap_err();
        assert!(matches!(err, NeuralError::Infeasible { .. }));
    }

    #[test]
    fn tolerance_is_capped() {
        assert!(SizeTier::new(1000, 0.06).is_err());
        assert!(SizeTier::new(1000, 0.05).is_ok());
    }
}
