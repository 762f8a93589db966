//! Seeded random models: stochastic block model graphs, node features and
//! the edge-perturbation samplers.
//!
//! Every sampler takes an explicit seed and builds its own generator, so a
//! result depends only on its inputs. The generator is ChaCha8 seeded through
//! `SeedableRng::seed_from_u64`, which is specified bit-for-bit and portable.

use nalgebra::DVector;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{is_connected, is_connected_after, Edge, EdgePerturbation, Graph, Sign};

pub const RNG_ALGORITHM: &str = "chacha8/rand_chacha-0.9/seed_from_u64";

pub const SBM_RETRIES: usize = 100;
pub const PERTURBATION_RETRIES: usize = 1000;

pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed of item `index` in an independent `stream`: `base + (stream << 40) + index`.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    base.wrapping_add(stream << 40).wrapping_add(index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    pub communities: Vec<usize>,
    pub p_intra: f64,
    pub p_inter: f64,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub require_connected: bool,
}

fn default_true() -> bool {
    true
}

impl SbmParams {
    pub fn validate(&self) -> Result<()> {
        if self.communities.is_empty() || self.communities.contains(&0) {
            return Err(Error::InvalidArgument(
                "community sizes must be non-empty and at least 1".into(),
            ));
        }
        for (what, p) in [("p_intra", self.p_intra), ("p_inter", self.p_inter)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Probability {
                    what: what.into(),
                    value: p,
                });
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.communities.iter().sum()
    }

    /// Community label of every node; communities are contiguous blocks.
    pub fn labels(&self) -> Vec<usize> {
        self.communities
            .iter()
            .enumerate()
            .flat_map(|(c, &size)| std::iter::repeat_n(c, size))
            .collect()
    }
}

/// Samples every node pair independently, resampling the whole graph until
/// it is connected when `require_connected` is set.
pub fn generate_sbm(params: &SbmParams) -> Result<Graph> {
    params.validate()?;
    let labels = params.labels();
    let n = labels.len();
    let mut rng = rng(params.seed);
    let attempts = if params.require_connected { SBM_RETRIES } else { 1 };
    for _ in 0..attempts {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let p = if labels[i] == labels[j] {
                    params.p_intra
                } else {
                    params.p_inter
                };
                if rng.random::<f64>() < p {
                    edges.push(Edge::new(i, j)?);
                }
            }
        }
        let g = Graph::with_communities(n, edges, Some(labels.clone()))?;
        if !params.require_connected || is_connected(&g) {
            return Ok(g);
        }
    }
    Err(Error::RetriesExhausted(SBM_RETRIES))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum PolicyMode {
    /// Delete `count` existing edges chosen uniformly.
    FixedCountDelete { count: usize },
    /// Delete each existing edge independently with probability `p`; with
    /// `include_insertions` each absent pair is also inserted with `p`.
    BernoulliAllEdges {
        p: f64,
        #[serde(default)]
        include_insertions: bool,
    },
    /// Delete `count` edges, `round(intra_fraction · count)` of them from the
    /// intra-community pool and the rest from the inter-community pool.
    ClusterMix { count: usize, intra_fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationPolicy {
    #[serde(flatten)]
    pub mode: PolicyMode,
    #[serde(default)]
    pub require_connected: bool,
    /// Take all of a pool instead of failing when it is too small.
    #[serde(default)]
    pub clamp_to_pool: bool,
}

impl PerturbationPolicy {
    pub fn new(mode: PolicyMode) -> Self {
        PerturbationPolicy {
            mode,
            require_connected: false,
            clamp_to_pool: false,
        }
    }

    pub fn connected(mut self) -> Self {
        self.require_connected = true;
        self
    }

    pub fn clamped(mut self) -> Self {
        self.clamp_to_pool = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            PolicyMode::BernoulliAllEdges { p, .. } if !(0.0..=1.0).contains(&p) => {
                Err(Error::Probability {
                    what: "perturbation p".into(),
                    value: p,
                })
            }
            PolicyMode::ClusterMix { intra_fraction, .. }
                if !(0.0..=1.0).contains(&intra_fraction) =>
            {
                Err(Error::InvalidArgument(format!(
                    "intra_fraction {intra_fraction} outside [0, 1]"
                )))
            }
            _ => Ok(()),
        }
    }
}

fn take_from_pool(
    rng: &mut SeededRng,
    pool: &[Edge],
    count: usize,
    clamp: bool,
    out: &mut Vec<(Edge, Sign)>,
) -> Result<()> {
    let count = if clamp { count.min(pool.len()) } else { count };
    if count > pool.len() {
        return Err(Error::PoolTooSmall {
            requested: count,
            available: pool.len(),
        });
    }
    let mut picked = index::sample(rng, pool.len(), count).into_vec();
    picked.sort_unstable();
    out.extend(picked.into_iter().map(|i| (pool[i], Sign::Delete)));
    Ok(())
}

fn sample_once(g: &Graph, policy: &PerturbationPolicy, rng: &mut SeededRng) -> Result<EdgePerturbation> {
    let mut items = Vec::new();
    match policy.mode {
        PolicyMode::FixedCountDelete { count } => {
            let pool: Vec<Edge> = g.edges().collect();
            take_from_pool(rng, &pool, count, policy.clamp_to_pool, &mut items)?;
        }
        PolicyMode::BernoulliAllEdges {
            p,
            include_insertions,
        } => {
            for e in g.edges() {
                if rng.random::<f64>() < p {
                    items.push((e, Sign::Delete));
                }
            }
            if include_insertions {
                for e in g.non_edges() {
                    if rng.random::<f64>() < p {
                        items.push((e, Sign::Insert));
                    }
                }
            }
        }
        PolicyMode::ClusterMix {
            count,
            intra_fraction,
        } => {
            let comm = g.community().ok_or(Error::MissingCommunities)?;
            let (intra, inter): (Vec<Edge>, Vec<Edge>) =
                g.edges().partition(|e| comm[e.lo()] == comm[e.hi()]);
            let n_intra = (intra_fraction * count as f64).round() as usize;
            let n_inter = count - n_intra.min(count);
            take_from_pool(rng, &intra, n_intra, policy.clamp_to_pool, &mut items)?;
            take_from_pool(rng, &inter, n_inter, policy.clamp_to_pool, &mut items)?;
        }
    }
    EdgePerturbation::new(items)
}

/// Draws a perturbation of `g` under `policy`. With `require_connected`, the
/// whole perturbation is redrawn until the perturbed graph is connected.
pub fn sample_perturbation(g: &Graph, policy: &PerturbationPolicy, seed: u64) -> Result<EdgePerturbation> {
    policy.validate()?;
    let mut rng = rng(seed);
    let attempts = if policy.require_connected {
        PERTURBATION_RETRIES
    } else {
        1
    };
    for _ in 0..attempts {
        let p = sample_once(g, policy, &mut rng)?;
        if !policy.require_connected || is_connected_after(g, &p) {
            return Ok(p);
        }
    }
    Err(Error::RetriesExhausted(PERTURBATION_RETRIES))
}

/// Candidate set of the Bernoulli policy: every edge as a deletion and,
/// optionally, every absent pair as an insertion, all with probability `p`.
pub fn bernoulli_candidates(g: &Graph, p: f64, include_insertions: bool) -> Vec<crate::bounds::Candidate> {
    let deletions = g.edges().map(|edge| (edge, Sign::Delete));
    let insertions = if include_insertions { g.non_edges() } else { Vec::new() }
        .into_iter()
        .map(|edge| (edge, Sign::Insert));
    deletions
        .chain(insertions)
        .map(|(edge, sign)| crate::bounds::Candidate {
            edge,
            sign,
            probability: p,
        })
        .collect()
}

/// Number of edges whose endpoints lie in different communities.
pub fn cut_size(g: &Graph) -> Result<usize> {
    let comm = g.community().ok_or(Error::MissingCommunities)?;
    Ok(g.edges().filter(|e| comm[e.lo()] != comm[e.hi()]).count())
}

/// I.i.d. standard normal node values (not normalised).
pub fn gaussian_features(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = rng(seed);
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Unit-norm signal that is constant on each community, with community `c`
/// of `C` mapped to the value `c − (C − 1)/2` before normalisation. Falls
/// back to the all-constant signal when that would be zero.
pub fn community_coded_features(g: &Graph) -> Result<DVector<f64>> {
    let comm = g.community().ok_or(Error::MissingCommunities)?;
    let k = comm.iter().max().map_or(1, |m| m + 1);
    let centre = (k as f64 - 1.0) / 2.0;
    let x = DVector::from_iterator(g.n(), comm.iter().map(|&c| c as f64 - centre));
    if x.norm() == 0.0 {
        return Ok(constant_features(g.n()));
    }
    Ok(&x / x.norm())
}

/// The unit-norm constant signal `1/√n`.
pub fn constant_features(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0 / (n as f64).sqrt())
}
