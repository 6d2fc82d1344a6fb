//! Feature backbone: graph-convolution stack over the symmetrized tree,
//! root-preserving top-k pooling with tanh gating, and restoration of tree
//! connectivity among the surviving nodes.

use std::rc::Rc;

use ndarray::Array2;
use rand::RngExt;
#[cfg(test)]
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore, Scalar, SparseMatrix, Tape, Var};

/// Pooled tree structure over kept original-node indices.
///
/// `kept` is ascending, so the root (original index 0) is pooled index 0.
/// `parent`/`depth` are in pooled indices and reflect restored connectivity:
/// every kept non-root node hangs off its nearest kept proper ancestor.
#[derive(Clone, Debug)]
pub struct PooledTree {
    pub kept: Vec<usize>,
    pub parent: Vec<Option<usize>>,
    pub depth: Vec<usize>,
}

impl PooledTree {
    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    /// Pooled index of an original node, if kept.
    pub fn pooled_index(&self, original: usize) -> Option<usize> {
        self.kept.binary_search(&original).ok()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kept.first() != Some(&0) {
            return Err(Error::Config("root is not kept".into()));
        }
        if !self.kept.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("kept indices not strictly ascending".into()));
        }
        for i in 1..self.len() {
            let Some(p) = self.parent[i] else {
                return Err(Error::Config(format!("pooled node {i} has no parent")));
            };
            if p >= i || self.depth[i] != self.depth[p] + 1 {
                return Err(Error::Config(format!("bad parent/depth at pooled {i}")));
            }
        }
        if self.parent[0].is_some() || self.depth[0] != 0 {
            return Err(Error::Config("pooled root must be parentless".into()));
        }
        Ok(())
    }
}

/// Symmetrically normalized adjacency with self-loops over the tree's
/// undirected edges: D^{-1/2} (A + I) D^{-1/2}.
pub fn normalized_adjacency<T: Scalar>(parents: &[Option<usize>]) -> SparseMatrix<T> {
    let n = parents.len();
    let mut degree = vec![1usize; n]; // self-loop
    for (v, p) in parents.iter().enumerate() {
        if let Some(p) = *p {
            degree[v] += 1;
            degree[p] += 1;
        }
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|&d| 1.0 / (d as f64).sqrt()).collect();
    let mut entries = Vec::with_capacity(2 * n);
    for (v, w) in inv_sqrt.iter().enumerate() {
        entries.push((v as u32, v as u32, T::from_f64(w * w)));
    }
    for (v, p) in parents.iter().enumerate() {
        if let Some(p) = *p {
            let w = T::from_f64(inv_sqrt[v] * inv_sqrt[p]);
            entries.push((v as u32, p as u32, w));
            entries.push((p as u32, v as u32, w));
        }
    }
    SparseMatrix::new(n, n, entries)
}

/// Parameter ids for the convolution stack: one (weight, bias) per layer.
#[derive(Clone, Debug)]
pub struct GcnStackIds {
    pub layers: Vec<(ParamId, ParamId)>,
}

/// Layer widths: F in, `hidden` between, F out (a single layer maps F -> F).
pub fn gcn_layer_dims(feature_dim: usize, hidden: usize, layers: usize) -> Vec<(usize, usize)> {
    (0..layers)
        .map(|i| {
            let d_in = if i == 0 { feature_dim } else { hidden };
            let d_out = if i + 1 == layers { feature_dim } else { hidden };
            (d_in, d_out)
        })
        .collect()
}

pub fn init_gcn_stack<T: Scalar>(
    store: &mut ParamStore<T>,
    feature_dim: usize,
    hidden: usize,
    layers: usize,
    rng: &mut ChaCha8Rng,
) -> GcnStackIds {
    let ids = gcn_layer_dims(feature_dim, hidden, layers)
        .into_iter()
        .enumerate()
        .map(|(i, (d_in, d_out))| {
            let bound = (6.0 / d_in as f64).sqrt();
            let w = store.register(
                format!("gcn{i}.w"),
                Array2::from_shape_fn((d_out, d_in), |_| {
                    T::from_f64(rng.random_range(-bound..bound))
                }),
            );
            let b = store.register(format!("gcn{i}.b"), Array2::zeros((1, d_out)));
            (w, b)
        })
        .collect();
    GcnStackIds { layers: ids }
}

/// Record the convolution stack on the tape: each layer aggregates over the
/// normalized adjacency, applies a linear map, then leaky ReLU.
pub fn gcn_stack_on<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    ids: &GcnStackIds,
    x: Var,
    adj: &Rc<SparseMatrix<T>>,
    slope: T,
) -> Result<Var> {
    let mut h = x;
    for &(w_id, b_id) in &ids.layers {
        let agg = tape.spmm(adj.clone(), h)?;
        let w = tape.param(store, w_id);
        let b = tape.param(store, b_id);
        let lin = tape.linear(agg, w, b)?;
        h = tape.leaky_relu(lin, slope);
    }
    Ok(h)
}

/// Number of nodes kept by pooling: max(1, ceil(ratio * n)).
pub fn pool_keep_count(n: usize, ratio: f64) -> usize {
    // Tiny slack keeps float noise in ratio * n from bumping the ceiling.
    (((ratio * n as f64) - 1e-9).ceil() as usize).clamp(1, n)
}

/// Pure top-k selection: highest scores win, ties break toward the lower
/// node index, and the root replaces the weakest survivor if it would have
/// been dropped. Returns kept original indices in ascending order.
pub fn select_topk(scores: &[f64], ratio: f64) -> Vec<usize> {
    let n = scores.len();
    let k = pool_keep_count(n, ratio);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = order[..k].to_vec();
    if !kept.contains(&0) {
        // `order` is best-to-worst, so the last selected is the weakest.
        let weakest = kept.len() - 1;
        kept[weakest] = 0;
    }
    kept.sort_unstable();
    kept
}

/// Restore tree connectivity over the kept set: each kept non-root node's
/// parent becomes its nearest kept proper ancestor. Returns pooled-index
/// parents and recomputed depths.
///
/// Single forward pass with memoized nearest-kept ancestors; the per-node
/// upward-walk oracle in the tests is the independent route.
pub fn restore_connectivity(
    kept: &[usize],
    orig_parent: &[Option<usize>],
) -> (Vec<Option<usize>>, Vec<usize>) {
    let n = orig_parent.len();
    let mut kept_mask = vec![false; n];
    for &v in kept {
        kept_mask[v] = true;
    }
    // anchor[v] = v if kept, else nearest kept proper ancestor.
    let mut anchor = vec![0usize; n];
    for v in 0..n {
        match orig_parent[v] {
            None => anchor[v] = 0,
            Some(p) => {
                debug_assert!(p < v, "parents precede children in index order");
                anchor[v] = if kept_mask[v] { v } else { anchor[p] };
            }
        }
    }
    let pooled_of = |orig: usize| kept.binary_search(&orig).expect("kept node");
    let mut parent = vec![None; kept.len()];
    let mut depth = vec![0usize; kept.len()];
    for (i, &v) in kept.iter().enumerate() {
        if let Some(p) = orig_parent[v] {
            let pp = pooled_of(anchor[p]);
            parent[i] = Some(pp);
            depth[i] = depth[pp] + 1;
        }
    }
    (parent, depth)
}

/// Tape-level pooling: project scores, select, gate kept features by
/// tanh(score), and restore connectivity. Returns the pooled structure and
/// the gated (k, F) feature matrix.
pub fn topk_pool_on<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    pool_p: ParamId,
    x: Var,
    orig_parent: &[Option<usize>],
    ratio: f64,
) -> Result<(PooledTree, Var)> {
    let p = tape.param(store, pool_p);
    let p2 = tape.mul(p, p)?;
    let p2s = tape.sum_all(p2);
    let p_norm = tape.sqrt(p2s);
    let raw_scores = tape.matmul_nt(x, p)?;
    let scores = tape.div_by_scalar(raw_scores, p_norm)?;

    let score_values: Vec<f64> = tape.value(scores).iter().map(|&v| Scalar::to_f64(v)).collect();
    let kept = select_topk(&score_values, ratio);

    let gates = tape.tanh(scores);
    let kept_gates = tape.gather_rows(gates, &kept)?;
    let kept_x = tape.gather_rows(x, &kept)?;
    let gated = tape.scale_rows(kept_x, kept_gates)?;

    let (parent, depth) = restore_connectivity(&kept, orig_parent);
    Ok((
        PooledTree {
            kept,
            parent,
            depth,
        },
        gated,
    ))
}

/// Random tree with parents preceding children, as produced by parsing.
#[cfg(test)]
pub(crate) fn random_tree_parents(rng: &mut ChaCha8Rng, n: usize) -> Vec<Option<usize>> {
    let mut parents = vec![None];
    for v in 1..n {
        parents.push(Some(rng.random_range(0..v)));
    }
    parents
}
