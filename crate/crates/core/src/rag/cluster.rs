//! Embedding and clustering for the cluster-based baseline.

use crate::par::{self, ExecMode};

use super::index::tokenize;

/// Maps text to a fixed-length vector.
pub trait TicketEmbedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Groups vectors. Labels are `0..k` with `-1` for noise.
pub trait Clusterer: Send + Sync {
    fn cluster(&self, vectors: &[Vec<f64>]) -> Vec<i64>;
}

/// Hashed term-frequency vectors, L2-normalized.
#[derive(Debug, Clone, Copy)]
pub struct HashedTfEmbedder {
    pub dimension: usize,
}

impl Default for HashedTfEmbedder {
    fn default() -> Self {
        Self { dimension: 256 }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl TicketEmbedder for HashedTfEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        for t in tokenize(text) {
            v[(fnv1a(t.as_bytes()) % self.dimension as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Greedy density clustering on cosine similarity.
///
/// Repeatedly seeds a cluster at the unassigned point with the most
/// unassigned neighbours (similarity >= `tau`), absorbing those neighbours.
/// Points left without any unassigned neighbour are noise.
#[derive(Debug, Clone, Copy)]
pub struct GreedyClusterer {
    pub tau: f64,
    pub exec: ExecMode,
    pub max_parallel: usize,
}

impl Default for GreedyClusterer {
    fn default() -> Self {
        Self {
            tau: 0.5,
            exec: ExecMode::Parallel,
            max_parallel: 8,
        }
    }
}

impl GreedyClusterer {
    /// Neighbour lists, one row per point, computed in parallel.
    pub fn neighbours(&self, vectors: &[Vec<f64>]) -> Vec<Vec<usize>> {
        let idx: Vec<usize> = (0..vectors.len()).collect();
        par::map_bounded_with(self.exec, &idx, self.max_parallel, |&i| {
            (0..vectors.len())
                .filter(|&j| j != i && cosine(&vectors[i], &vectors[j]) >= self.tau)
                .collect()
        })
    }
}

impl Clusterer for GreedyClusterer {
    fn cluster(&self, vectors: &[Vec<f64>]) -> Vec<i64> {
        let nbrs = self.neighbours(vectors);
        let mut labels = vec![-1i64; vectors.len()];
        let mut next = 0i64;
        loop {
            let free = |j: &&usize| labels[**j] == -1;
            let seed = (0..vectors.len())
                .filter(|&i| labels[i] == -1)
                .map(|i| (nbrs[i].iter().filter(free).count(), i))
                .filter(|&(n, _)| n > 0)
                .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
            let Some((_, s)) = seed else { break };
            let members: Vec<usize> = nbrs[s].iter().copied().filter(|&j| labels[j] == -1).collect();
            labels[s] = next;
            for j in members {
                labels[j] = next;
            }
            next += 1;
        }
        labels
    }
}
