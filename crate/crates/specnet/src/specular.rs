//! Mirrored-tree autoencoder.
//!
//! The pooled tree is fused at its root with a mirror of its non-root nodes.
//! Encoding walks levels bottom-up, aggregating attention-weighted child
//! messages into each parent exactly once; the root state is the bottleneck.
//! Decoding walks the mirror top-down, each mirrored node updated from its
//! parent's fresh state and its own pre-encoding feature.
//!
//! Mirrored nodes are identified by the encoder node they pair with, so the
//! pairing is the identity on non-root indices and `m(parent(v))` is just
//! `parent(v)`.

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore, Scalar, Tape, Var};

/// Pooled encoder tree plus its mirror and both level partitions.
#[derive(Clone, Debug)]
pub struct SpecularGraph {
    /// Encoder-side node count (mirror adds n - 1 more).
    pub n: usize,
    pub parent: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
    /// Encoder levels grouped by depth, deepest first.
    pub levels_enc: Vec<Vec<usize>>,
    /// Mirror levels grouped by depth, shallowest first (node ids are the
    /// paired encoder ids; the root is shared, not mirrored).
    pub levels_mir: Vec<Vec<usize>>,
}

impl SpecularGraph {
    pub fn total_nodes(&self) -> usize {
        2 * self.n - 1
    }

    pub fn total_directed_edges(&self) -> usize {
        2 * (self.n - 1)
    }
}

/// Build the specular graph for a pooled tree given pooled-index parents and
/// depths (root at index 0).
pub fn build_mirror(parent: &[Option<usize>], depth: &[usize]) -> SpecularGraph {
    let n = parent.len();
    let mut children = vec![Vec::new(); n];
    for v in 1..n {
        children[parent[v].expect("non-root has parent")].push(v);
    }
    let max_depth = depth.iter().copied().max().unwrap_or(0);
    let mut by_depth = vec![Vec::new(); max_depth + 1];
    for v in 0..n {
        by_depth[depth[v]].push(v);
    }
    let levels_enc: Vec<Vec<usize>> = by_depth.iter().rev().cloned().collect();
    let levels_mir: Vec<Vec<usize>> = by_depth.into_iter().skip(1).collect();
    SpecularGraph {
        n,
        parent: parent.to_vec(),
        children,
        levels_enc,
        levels_mir,
    }
}

/// Update log: node ids in the order they were updated.
#[derive(Clone, Debug, Default)]
pub struct UpdateTrace {
    pub order: Vec<usize>,
}

/// Bottom-up encoding pass. Children are aggregated from their
/// already-updated states; every node (leaves and root included) is updated
/// exactly once. Returns the final per-node states, the root bottleneck
/// state, and the update trace.
pub fn encode_on<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    graph: &SpecularGraph,
    x: Var,
    w_id: ParamId,
    b_id: ParamId,
    slope: T,
) -> Result<(Var, Vec<Var>, UpdateTrace)> {
    let f = tape.value(x).ncols();
    if tape.value(x).nrows() != graph.n {
        return Err(Error::shape((graph.n, f), tape.value(x).dim()));
    }
    let w = tape.param(store, w_id);
    let b = tape.param(store, b_id);
    let pre: Vec<Var> = (0..graph.n)
        .map(|v| tape.gather_rows(x, &[v]))
        .collect::<Result<_>>()?;
    let mut state: Vec<Option<Var>> = vec![None; graph.n];
    let mut trace = UpdateTrace::default();

    for level in &graph.levels_enc {
        for &v in level {
            debug_assert!(state[v].is_none(), "single-update law");
            let message = if graph.children[v].is_empty() {
                tape.zeros(1, f)
            } else {
                let rows: Vec<Var> = graph.children[v]
                    .iter()
                    .map(|&c| state[c].expect("children updated before parents"))
                    .collect();
                let child_matrix = tape.concat_rows(&rows)?;
                let scores = tape.matmul_nt(child_matrix, pre[v])?;
                let weights = tape.softmax(scores);
                let weighted = tape.scale_rows(child_matrix, weights)?;
                // Softmax weights already sum to one, so summing the scaled
                // rows is the convex combination of the child states.
                tape.sum_rows(weighted)
            };
            let joint = tape.concat_cols(message, pre[v])?;
            let lin = tape.linear(joint, w, b)?;
            state[v] = Some(tape.leaky_relu(lin, slope));
            trace.order.push(v);
        }
    }
    let states: Vec<Var> = state.into_iter().map(|s| s.expect("all updated")).collect();
    Ok((states[0], states, trace))
}

/// Top-down decoding pass over the mirror. Each mirrored node is updated
/// once, strictly after its parent; the shared root is not re-updated. The
/// returned reconstruction has one row per encoder node, the root row being
/// the bottleneck state itself.
#[allow(clippy::too_many_arguments)]
pub fn decode_on<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    graph: &SpecularGraph,
    x: Var,
    root_state: Var,
    w_id: ParamId,
    b_id: ParamId,
    slope: T,
) -> Result<(Var, UpdateTrace)> {
    if graph.n == 1 {
        return Ok((root_state, UpdateTrace::default()));
    }
    let w = tape.param(store, w_id);
    let b = tape.param(store, b_id);
    let mut state: Vec<Option<Var>> = vec![None; graph.n];
    state[0] = Some(root_state);
    let mut trace = UpdateTrace::default();
    for level in &graph.levels_mir {
        for &v in level {
            debug_assert!(state[v].is_none(), "single-update law");
            let parent = graph.parent[v].expect("mirrored nodes are non-root");
            let parent_state = state[parent].expect("parent updated before child");
            let init = tape.gather_rows(x, &[v])?;
            let joint = tape.concat_cols(parent_state, init)?;
            let lin = tape.linear(joint, w, b)?;
            state[v] = Some(tape.leaky_relu(lin, slope));
            trace.order.push(v);
        }
    }
    let rows: Vec<Var> = state.into_iter().map(|s| s.expect("all updated")).collect();
    let xhat = tape.concat_rows(&rows)?;
    Ok((xhat, trace))
}

/// Element-wise squared error E, scalar mean error, and the per-feature
/// column-mean error vector. With `root_in_error` off the root row is
/// excluded from both aggregates (unless it is the only row).
pub fn reconstruction_error_on<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    xhat: Var,
    root_in_error: bool,
) -> Result<(Var, Var, Var)> {
    if tape.value(x).dim() != tape.value(xhat).dim() {
        return Err(Error::shape(tape.value(x).dim(), tape.value(xhat).dim()));
    }
    let n = tape.value(x).nrows();
    let (x, xhat) = if root_in_error || n == 1 {
        (x, xhat)
    } else {
        let rest: Vec<usize> = (1..n).collect();
        (tape.gather_rows(x, &rest)?, tape.gather_rows(xhat, &rest)?)
    };
    let diff = tape.sub(x, xhat)?;
    let e = tape.mul(diff, diff)?;
    let eps = tape.mean_all(e);
    let delta = tape.mean_rows(e);
    Ok((e, eps, delta))
}
