//! Relative-position remapping for running a model past its trained window.
//!
//! Within the neighbor window `w_n` a key keeps its exact distance to the
//! query. Beyond it, both positions are floor-divided by the group size and
//! shifted by `w_n − ⌊w_n / G_s⌋` so grouped distances continue where neighbor
//! distances stop:
//!
//! ```text
//! rel(q, k) = q − k                                   if q − k ≤ w_n
//!           = ⌊q/G_s⌋ − ⌊k/G_s⌋ + w_n − ⌊w_n/G_s⌋     otherwise
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Additive logit penalty per unit of relative position in the demo.
pub const POSITION_DECAY: f64 = 0.05;
const DEMO_HEAD_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelfExtendConfig {
    /// Trained context window `L`.
    pub trained_window: usize,
    /// `w_n`
    pub neighbor_window: usize,
    /// `G_s`
    pub group_size: usize,
}

impl Default for SelfExtendConfig {
    fn default() -> Self {
        SelfExtendConfig {
            trained_window: 2048,
            neighbor_window: 1024,
            group_size: 8,
        }
    }
}

impl SelfExtendConfig {
    pub fn new(trained_window: usize, neighbor_window: usize, group_size: usize) -> Result<Self> {
        let cfg = SelfExtendConfig {
            trained_window,
            neighbor_window,
            group_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.neighbor_window == 0 || self.neighbor_window >= self.trained_window {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= neighbor_window ({}) < trained_window ({})",
                self.neighbor_window, self.trained_window
            )));
        }
        if self.group_size == 0 {
            return Err(Error::InvalidArgument("group_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Vanilla positions over the same trained window.
    pub fn vanilla(&self) -> Self {
        SelfExtendConfig {
            group_size: 1,
            ..*self
        }
    }

    fn shift(&self) -> usize {
        self.neighbor_window - self.neighbor_window / self.group_size
    }

    pub fn relative_position(&self, q: usize, k: usize) -> usize {
        debug_assert!(k <= q);
        let d = q - k;
        if d <= self.neighbor_window {
            d
        } else {
            q / self.group_size - k / self.group_size + self.shift()
        }
    }
}

/// Longest sequence whose remapped positions all stay below the trained
/// window: `(L − w_n + ⌊w_n/G_s⌋) · G_s`.
///
/// When `G_s` divides `w_n` this is `(L − w_n) · G_s + w_n`. Otherwise the
/// shift `w_n − ⌊w_n/G_s⌋` is one larger than `w_n · (1 − 1/G_s)` and the
/// bound tightens accordingly.
pub fn capacity(cfg: &SelfExtendConfig) -> usize {
    let l = cfg.trained_window;
    let w = cfg.neighbor_window;
    let g = cfg.group_size;
    (l - w + w / g) * g
}

/// Lower-triangular table of remapped relative positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionMatrix {
    len: usize,
    /// Row `q` holds entries for keys `0..=q`.
    rows: Vec<Vec<usize>>,
}

impl PositionMatrix {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, q: usize, k: usize) -> Option<usize> {
        self.rows.get(q).and_then(|r| r.get(k)).copied()
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn max_entry(&self) -> usize {
        self.rows.iter().flatten().copied().max().unwrap_or(0)
    }

    /// Right-aligned text rendering; cells above the diagonal print as `.`.
    pub fn render(&self) -> String {
        let width = self.max_entry().to_string().len().max(1);
        let mut out = String::new();
        for q in 0..self.len {
            let cells: Vec<String> = (0..self.len)
                .map(|k| match self.get(q, k) {
                    Some(v) => format!("{v:>width$}"),
                    None => format!("{:>width$}", "."),
                })
                .collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out
    }
}

pub fn build_position_matrix(len: usize, cfg: &SelfExtendConfig) -> PositionMatrix {
    let rows = (0..len)
        .map(|q| (0..=q).map(|k| cfg.relative_position(q, k)).collect())
        .collect();
    PositionMatrix { len, rows }
}

/// Cells whose relative position is at least `trained_window`, row-major.
pub fn detect_ood(m: &PositionMatrix, trained_window: usize) -> Vec<(usize, usize)> {
    let mut cells = Vec::new();
    for (q, row) in m.rows.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            if v >= trained_window {
                cells.push((q, k));
            }
        }
    }
    cells
}

fn unit_vectors(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Causal logits `q·k / √dim − POSITION_DECAY · rel(q, k)` for seeded unit
/// query/key vectors. Entries above the diagonal are `-inf`.
pub fn attention_logits(positions: &PositionMatrix, seed: u64) -> Vec<Vec<f64>> {
    let n = positions.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let queries = unit_vectors(&mut rng, n, DEMO_HEAD_DIM);
    let keys = unit_vectors(&mut rng, n, DEMO_HEAD_DIM);
    let scale = (DEMO_HEAD_DIM as f64).sqrt();
    (0..n)
        .map(|q| {
            (0..n)
                .map(|k| match positions.get(q, k) {
                    Some(rel) => {
                        let dot: f64 = queries[q].iter().zip(&keys[k]).map(|(a, b)| a * b).sum();
                        dot / scale - POSITION_DECAY * rel as f64
                    }
                    None => f64::NEG_INFINITY,
                })
                .collect()
        })
        .collect()
}

fn softmax_rows(logits: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    logits
        .into_iter()
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / sum).collect()
        })
        .collect()
}

/// Row-stochastic toy attention over remapped positions.
pub fn attention_weights_demo(len: usize, cfg: &SelfExtendConfig, seed: u64) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let cap = capacity(cfg);
    if len > cap {
        return Err(Error::ExceedsCapacity { len, capacity: cap });
    }
    Ok(softmax_rows(attention_logits(&build_position_matrix(len, cfg), seed)))
}
