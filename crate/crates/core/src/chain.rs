//! MCMC output storage, parameter blocks, block-independent re-ordering
//! and batching.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod io;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub width: usize,
}

impl Block {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.width
    }
}

/// Names, widths and positions of the parameter blocks inside a flat draw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    blocks: Vec<Block>,
    total_dim: usize,
}

impl BlockLayout {
    /// Builds a contiguous layout from `(name, width)` pairs in order.
    pub fn new<S: Into<String>>(spec: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut offset = 0;
        for (name, width) in spec {
            let name = name.into();
            if width == 0 {
                return Err(Error::Chain(format!("block `{name}` has zero width")));
            }
            if blocks.iter().any(|b: &Block| b.name == name) {
                return Err(Error::Chain(format!("duplicate block name `{name}`")));
            }
            blocks.push(Block {
                name,
                offset,
                width,
            });
            offset += width;
        }
        if blocks.is_empty() {
            return Err(Error::Chain("layout needs at least one block".into()));
        }
        Ok(Self {
            blocks,
            total_dim: offset,
        })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn get(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Block> {
        self.get(name)
            .ok_or_else(|| Error::Chain(format!("layout has no block named `{name}`")))
    }

    /// Column names of the form `block[index]`.
    pub fn column_names(&self) -> Vec<String> {
        self.blocks
            .iter()
            .flat_map(|b| (0..b.width).map(move |i| format!("{}[{}]", b.name, i)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Independence {
    /// Rows are draws from the joint posterior.
    Joint,
    /// Blocks were re-ordered against each other; rows pair draws from the
    /// product of the block marginals.
    BlockIndependent,
}

/// A borrowed row of a chain together with its layout.
#[derive(Debug, Clone, Copy)]
pub struct Draw<'a> {
    pub layout: &'a BlockLayout,
    pub values: &'a [f64],
    pub index: usize,
}

impl<'a> Draw<'a> {
    /// Values of a named block. Panics if the block does not exist; layouts
    /// are validated when estimator inputs are assembled.
    pub fn block(&self, name: &str) -> &'a [f64] {
        let b = self
            .layout
            .get(name)
            .unwrap_or_else(|| panic!("draw has no block `{name}`"));
        &self.values[b.range()]
    }

    pub fn block_at(&self, i: usize) -> &'a [f64] {
        &self.values[self.layout.blocks[i].range()]
    }
}

/// `N x total_dim` matrix of post-burn-in draws, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSample {
    draws: Vec<f64>,
    n: usize,
    layout: BlockLayout,
    pub burn_in_discarded: usize,
    pub seed: u64,
    independence: Independence,
}

impl ChainSample {
    pub fn new(layout: BlockLayout, draws: Vec<f64>, burn_in_discarded: usize, seed: u64) -> Result<Self> {
        let dim = layout.total_dim();
        if draws.is_empty() || draws.len() % dim != 0 {
            return Err(Error::Chain(format!(
                "draw buffer of length {} does not hold whole rows of width {dim}",
                draws.len()
            )));
        }
        Ok(Self {
            n: draws.len() / dim,
            draws,
            layout,
            burn_in_discarded,
            seed,
            independence: Independence::Joint,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn independence(&self) -> Independence {
        self.independence
    }

    pub fn with_independence(mut self, independence: Independence) -> Self {
        self.independence = independence;
        self
    }

    pub fn raw(&self) -> &[f64] {
        &self.draws
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.layout.total_dim();
        &self.draws[i * d..(i + 1) * d]
    }

    pub fn draw(&self, i: usize) -> Draw<'_> {
        Draw {
            layout: &self.layout,
            values: self.row(i),
            index: i,
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + Clone {
        self.draws.chunks_exact(self.layout.total_dim())
    }

    /// The values of one block in each row.
    pub fn block_rows<'a>(&'a self, name: &str) -> Result<impl Iterator<Item = &'a [f64]> + Clone + 'a> {
        let range = self.layout.require(name)?.range();
        Ok(self.rows().map(move |r| &r[range.clone()]))
    }

    /// A single column, `block[index]`.
    pub fn column(&self, name: &str, index: usize) -> Result<Vec<f64>> {
        let b = self.layout.require(name)?;
        if index >= b.width {
            return Err(Error::Chain(format!("{name}[{index}] is out of range")));
        }
        Ok(self.rows().map(|r| r[b.offset + index]).collect())
    }

    /// Sub-chain keeping only the named blocks, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<ChainSample> {
        let picked: Vec<Block> = names
            .iter()
            .map(|n| self.layout.require(n).cloned())
            .collect::<Result<_>>()?;
        let layout = BlockLayout::new(picked.iter().map(|b| (b.name.clone(), b.width)))?;
        let mut draws = Vec::with_capacity(self.n * layout.total_dim());
        for r in self.rows() {
            for b in &picked {
                draws.extend_from_slice(&r[b.range()]);
            }
        }
        Ok(ChainSample {
            draws,
            n: self.n,
            layout,
            burn_in_discarded: self.burn_in_discarded,
            seed: self.seed,
            independence: self.independence,
        })
    }

    /// Keeps the first `n` draws.
    pub fn truncate(&self, n: usize) -> ChainSample {
        let mut out = self.clone();
        out.n = n.min(self.n);
        out.draws.truncate(out.n * self.layout.total_dim());
        out
    }

    /// Rebuilds the chain so that row `i` of block `b` is taken from
    /// source row `sources[b][i]`.
    fn gather(&self, sources: &[Vec<usize>]) -> ChainSample {
        let d = self.layout.total_dim();
        let mut draws = vec![0.0; self.n * d];
        for (b, block) in self.layout.blocks().iter().enumerate() {
            for (i, &src) in sources[b].iter().enumerate() {
                draws[i * d + block.offset..i * d + block.offset + block.width]
                    .copy_from_slice(&self.draws[src * d + block.offset..src * d + block.offset + block.width]);
            }
        }
        ChainSample {
            draws,
            n: self.n,
            layout: self.layout.clone(),
            burn_in_discarded: self.burn_in_discarded,
            seed: self.seed,
            independence: Independence::BlockIndependent,
        }
    }
}

/// Cyclically shifts block `i` by `i * N / B` rows; block 0 stays put.
///
/// Trailing draws beyond the largest multiple of `B` are dropped with a
/// warning. A single-block chain keeps its rows.
pub fn systematic_reorder(chain: &ChainSample) -> ChainSample {
    let b = chain.layout().len();
    if b == 1 {
        return chain.clone().with_independence(Independence::BlockIndependent);
    }
    let keep = chain.len() - chain.len() % b;
    if keep != chain.len() {
        log::warn!(
            "systematic re-ordering drops {} trailing draws so N is divisible by {b} blocks",
            chain.len() - keep
        );
    }
    let chain = chain.truncate(keep);
    let shift = keep / b;
    let sources: Vec<Vec<usize>> = (0..b)
        .map(|blk| (0..keep).map(|i| (i + blk * shift) % keep).collect())
        .collect();
    chain.gather(&sources)
}

/// Shuffles the rows of every block except block 0 independently.
pub fn random_permute<R: Rng + ?Sized>(chain: &ChainSample, rng: &mut R) -> ChainSample {
    let n = chain.len();
    let sources: Vec<Vec<usize>> = (0..chain.layout().len())
        .map(|blk| {
            let mut idx: Vec<usize> = (0..n).collect();
            if blk > 0 {
                idx.shuffle(rng);
            }
            idx
        })
        .collect();
    chain.gather(&sources)
}

/// Block names used by the mixture sampler: `mu` and `w` have one entry
/// per component, `sigma2` one per component or a single shared value,
/// and `z` holds the allocation label of every observation.
pub mod mixture_blocks {
    pub const MU: &str = "mu";
    pub const SIGMA2: &str = "sigma2";
    pub const W: &str = "w";
    pub const Z: &str = "z";
}

/// Applies an independent uniformly random relabelling of the `k`
/// components to every draw of a mixture chain: component means,
/// component variances (when unequal), weights and, if present, the
/// allocation vector `z`.
pub fn label_permute_mixture<R: Rng + ?Sized>(chain: &ChainSample, k: usize, rng: &mut R) -> Result<ChainSample> {
    use mixture_blocks as mb;
    if k < 1 {
        return Err(Error::domain("mixture needs at least one component"));
    }
    let layout = chain.layout();
    let per_component = |name: &str| -> Result<usize> {
        let b = layout.require(name)?;
        if b.width != k {
            return Err(Error::Chain(format!("block `{name}` has width {} but k = {k}", b.width)));
        }
        Ok(b.offset)
    };
    let mu = per_component(mb::MU)?;
    let w = per_component(mb::W)?;
    let s2 = layout.require(mb::SIGMA2)?;
    let s2 = (s2.width == k && k > 1).then_some(s2.offset);
    let z = layout.get(mb::Z).cloned();

    let d = layout.total_dim();
    let mut draws = chain.raw().to_vec();
    let mut perm: Vec<usize> = (0..k).collect();
    for row in draws.chunks_exact_mut(d) {
        if k == 1 {
            break;
        }
        perm.shuffle(rng);
        // new label perm[j] takes the old component j
        let old = row.to_vec();
        for j in 0..k {
            row[mu + perm[j]] = old[mu + j];
            if let Some(s2) = s2 {
                row[s2 + perm[j]] = old[s2 + j];
            }
            row[w + perm[j]] = old[w + j];
        }
        if let Some(z) = &z {
            for i in z.range() {
                row[i] = perm[old[i] as usize] as f64;
            }
        }
    }
    Ok(ChainSample {
        draws,
        n: chain.len(),
        layout: layout.clone(),
        burn_in_discarded: chain.burn_in_discarded,
        seed: chain.seed,
        independence: chain.independence(),
    })
}

/// `K` contiguous batches of equal size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPartition {
    pub count: usize,
    pub size: usize,
}

impl BatchPartition {
    pub fn new(n: usize, count: usize) -> Result<Self> {
        if count == 0 || count > n {
            return Err(Error::Chain(format!("cannot split {n} draws into {count} batches")));
        }
        if n % count != 0 {
            return Err(Error::Chain(format!(
                "{n} draws are not divisible into {count} batches; truncate first"
            )));
        }
        Ok(Self {
            count,
            size: n / count,
        })
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.count).map(move |k| k * self.size..(k + 1) * self.size)
    }

    pub fn total(&self) -> usize {
        self.count * self.size
    }
}

pub fn partition_batches(chain: &ChainSample, count: usize) -> Result<BatchPartition> {
    BatchPartition::new(chain.len(), count)
}
