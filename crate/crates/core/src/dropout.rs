use rand::Rng;

use crate::rng::{seeded, SplitMix64};
use crate::tensor::{Graph, Result, Var};

/// Forward-pass mode. Dropout is only active in `Train`.
#[derive(Debug, Clone)]
pub enum Mode {
    Eval,
    Train { rate: f64, rng: SplitMix64 },
}

impl Mode {
    pub fn train(rate: f64, seed: u64) -> Self {
        Mode::Train {
            rate,
            rng: seeded(seed),
        }
    }

    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - rate)` so
    /// evaluation needs no rescaling.
    pub fn dropout(&mut self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        match self {
            Mode::Eval => Ok(x),
            Mode::Train { rate, .. } if *rate <= 0.0 => Ok(x),
            Mode::Train { rate, rng } => {
                let keep = 1.0 - *rate;
                let n = g.value(x).len();
                let mask = (0..n)
                    .map(|_| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect();
                g.mul_const(x, mask)
            }
        }
    }
}
