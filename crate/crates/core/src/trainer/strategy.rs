use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which layers contribute to the meta gradient each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum GatingStrategy {
    /// Every layer: the unmodified reweighting update.
    AllLayers,
    /// Layers `2b - 1` and `2b` (1-based block index).
    PreSpecifiedBlock(usize),
    /// `s` distinct layers drawn uniformly every iteration.
    RandomLayers(usize),
    /// Learned gradient samplers targeting `K` active layers.
    Famus(usize),
    /// No meta-model: unweighted SGD on the training loss.
    PlainSgd,
}

pub fn block_count(num_layers: usize) -> usize {
    num_layers.div_ceil(2)
}

impl GatingStrategy {
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        let ok = match *self {
            GatingStrategy::AllLayers | GatingStrategy::PlainSgd => true,
            GatingStrategy::PreSpecifiedBlock(b) => b >= 1 && b <= block_count(num_layers),
            GatingStrategy::RandomLayers(s) | GatingStrategy::Famus(s) => s >= 1 && s <= num_layers,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "strategy {self} does not fit a network with {num_layers} layers"
            )))
        }
    }

    pub fn uses_meta_model(&self) -> bool {
        !matches!(self, GatingStrategy::PlainSgd)
    }

    pub fn is_famus(&self) -> bool {
        matches!(self, GatingStrategy::Famus(_))
    }

    /// Layer mask for the fixed and random strategies; `None` for Famus and
    /// plain SGD. Random subsets are drawn from `rng`.
    pub fn fixed_mask<R: Rng + ?Sized>(&self, num_layers: usize, rng: &mut R) -> Option<Vec<bool>> {
        match *self {
            GatingStrategy::AllLayers => Some(vec![true; num_layers]),
            GatingStrategy::PreSpecifiedBlock(b) => Some(
                (1..=num_layers)
                    .map(|l| l == 2 * b - 1 || l == 2 * b)
                    .collect(),
            ),
            GatingStrategy::RandomLayers(s) => {
                let mut mask = vec![false; num_layers];
                for p in index::sample(rng, num_layers, s) {
                    mask[p] = true;
                }
                Some(mask)
            }
            GatingStrategy::Famus(_) | GatingStrategy::PlainSgd => None,
        }
    }
}

impl fmt::Display for GatingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GatingStrategy::AllLayers => write!(f, "all_layers"),
            GatingStrategy::PreSpecifiedBlock(b) => write!(f, "block:{b}"),
            GatingStrategy::RandomLayers(s) => write!(f, "random:{s}"),
            GatingStrategy::Famus(k) => write!(f, "famus:{k}"),
            GatingStrategy::PlainSgd => write!(f, "plain_sgd"),
        }
    }
}

impl FromStr for GatingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let count = || -> Result<usize> {
            arg.ok_or_else(|| Error::config(format!("strategy `{s}` needs a count, e.g. `{name}:2`")))?
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("strategy `{s}` has a non-integer count")))
        };
        match (name.trim(), arg) {
            ("all_layers", None) => Ok(GatingStrategy::AllLayers),
            ("plain_sgd", None) => Ok(GatingStrategy::PlainSgd),
            ("block", _) => Ok(GatingStrategy::PreSpecifiedBlock(count()?)),
            ("random", _) => Ok(GatingStrategy::RandomLayers(count()?)),
            ("famus", _) => Ok(GatingStrategy::Famus(count()?)),
            _ => Err(Error::config(format!(
                "unknown strategy `{s}` (all_layers, block:B, random:S, famus:K, plain_sgd)"
            ))),
        }
    }
}

impl TryFrom<String> for GatingStrategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GatingStrategy> for String {
    fn from(s: GatingStrategy) -> String {
        s.to_string()
    }
}
