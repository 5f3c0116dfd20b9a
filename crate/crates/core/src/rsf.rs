//! Random survival forest used as the population model.
//!
//! Trees are grown on bootstrap samples with logrank splitting over every
//! feature, and each leaf stores the Kaplan–Meier curve of its in-bag
//! subjects on the dataset's unique-event-time grid. Averaging the leaf curves
//! a subject routes to gives its individual survival curve; stacking those
//! rows gives the [`SurvivalMatrix`].
//!
//! Split search is `O(n log n)` per feature and node. For a candidate left
//! child `L` the logrank pieces decompose as
//!
//! ```text
//! O - E = sum_{i in L} (delta_i - H(t_i))
//! V     = sum_{i in L} U(t_i) - sum_{i,j in L} W(min(t_i, t_j))
//! ```
//!
//! where `H`, `U` and `W` are running sums over the node's event times of
//! `d/r`, `w*r` and `w` with `w = d (r - d) / (r^2 (r - 1))`. Sweeping subjects
//! in feature order, the double sum is updated with two Fenwick trees keyed by
//! time rank.

use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SurvivalDataset;
use crate::seed::{self, Stream};
use crate::survival::StepCurve;
use crate::{Error, Result};

/// Upper bound on split thresholds evaluated per feature and node.
pub const MAX_SPLIT_CANDIDATES: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` means twice the number of features.
    pub max_depth: Option<usize>,
    pub max_subjects_per_tree: usize,
    pub min_split: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            max_subjects_per_tree: 2000,
            min_split: 40,
            min_leaf: 20,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be positive".into()));
        }
        if self.max_subjects_per_tree == 0 {
            return Err(Error::Config("max_subjects_per_tree must be positive".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::Config("min_leaf must be at least 1".into()));
        }
        if self.min_split < 2 * self.min_leaf {
            return Err(Error::Config(format!(
                "min_split ({}) must be at least twice min_leaf ({})",
                self.min_split, self.min_leaf
            )));
        }
        if self.max_depth == Some(0) {
            return Err(Error::Config("max_depth must be at least 1".into()));
        }
        Ok(())
    }

    pub fn depth_for(&self, p: usize) -> usize {
        self.max_depth.unwrap_or(2 * p).max(1)
    }
}

/// Leaf survival curve as steps `(grid index, value from that index on)`.
#[derive(Debug, Clone, PartialEq)]
struct LeafCurve {
    steps: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        curve: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    leaves: Vec<LeafCurve>,
}

impl Tree {
    fn leaf_for(&self, x: &[f64]) -> &LeafCurve {
        let mut id = 0usize;
        loop {
            match self.nodes[id] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if x[feature as usize] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
                Node::Leaf { curve } => return &self.leaves[curve as usize],
            }
        }
    }

    /// `(feature, threshold)` of the root split, if the root is not a leaf.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes[0] {
            Node::Split {
                feature, threshold, ..
            } => Some((feature as usize, threshold)),
            Node::Leaf { .. } => None,
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match nodes[id] {
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, left as usize).max(walk(nodes, right as usize))
                }
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

/// A fitted forest. Immutable and shareable across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<Tree>,
    grid: Vec<f64>,
    n_features: usize,
}

impl Forest {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Unique event times of the training data.
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Survival curve of one tree for covariates `x`, dense on the grid.
    pub fn tree_curve(&self, tree: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![1.0; self.grid.len()];
        let mut value = 1.0;
        let mut steps = self.trees[tree].leaf_for(x).steps.iter().peekable();
        for (k, slot) in out.iter_mut().enumerate() {
            while let Some(&&(idx, v)) = steps.peek() {
                if idx as usize > k {
                    break;
                }
                value = v;
                steps.next();
            }
            *slot = value;
        }
        out
    }

    /// Individual survival curve for `x`: mean over trees of the leaf curves.
    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for tree in &self.trees {
            let mut prev = 1.0;
            for &(idx, v) in &tree.leaf_for(x).steps {
                out[idx as usize] += v - prev;
                prev = v;
            }
        }
        let n_trees = self.trees.len() as f64;
        let mut acc = n_trees;
        for v in out.iter_mut() {
            acc += *v;
            *v = (acc / n_trees).clamp(0.0, 1.0);
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(FOREST_MAGIC)?;
        put_u32(&mut w, CACHE_VERSION)?;
        put_u64(&mut w, self.n_features as u64)?;
        put_f64s(&mut w, &self.grid)?;
        put_u64(&mut w, self.trees.len() as u64)?;
        for tree in &self.trees {
            put_u64(&mut w, tree.nodes.len() as u64)?;
            for node in &tree.nodes {
                match *node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        w.write_all(&[0])?;
                        put_u32(&mut w, feature)?;
                        w.write_all(&threshold.to_le_bytes())?;
                        put_u32(&mut w, left)?;
                        put_u32(&mut w, right)?;
                    }
                    Node::Leaf { curve } => {
                        w.write_all(&[1])?;
                        put_u32(&mut w, curve)?;
                    }
                }
            }
            put_u64(&mut w, tree.leaves.len() as u64)?;
            for leaf in &tree.leaves {
                put_u64(&mut w, leaf.steps.len() as u64)?;
                for &(idx, v) in &leaf.steps {
                    put_u32(&mut w, idx)?;
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        expect_header(&mut r, FOREST_MAGIC)?;
        let n_features = get_u64(&mut r)? as usize;
        let grid = get_f64s(&mut r)?;
        let n_trees = get_u64(&mut r)? as usize;
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let n_nodes = get_u64(&mut r)? as usize;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let mut tag = [0u8];
                r.read_exact(&mut tag)?;
                nodes.push(match tag[0] {
                    0 => Node::Split {
                        feature: get_u32(&mut r)?,
                        threshold: get_f64(&mut r)?,
                        left: get_u32(&mut r)?,
                        right: get_u32(&mut r)?,
                    },
                    1 => Node::Leaf {
                        curve: get_u32(&mut r)?,
                    },
                    t => return Err(Error::Cache(format!("bad node tag {t}"))),
                });
            }
            let n_leaves = get_u64(&mut r)? as usize;
            let mut leaves = Vec::with_capacity(n_leaves);
            for _ in 0..n_leaves {
                let n_steps = get_u64(&mut r)? as usize;
                let mut steps = Vec::with_capacity(n_steps);
                for _ in 0..n_steps {
                    steps.push((get_u32(&mut r)?, get_f64(&mut r)?));
                }
                leaves.push(LeafCurve { steps });
            }
            trees.push(Tree { nodes, leaves });
        }
        Ok(Self {
            trees,
            grid,
            n_features,
        })
    }
}

/// Per-subject survival probabilities on the unique-event-time grid, one row
/// per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalMatrix {
    grid: Vec<f64>,
    data: Vec<f64>,
    n_rows: usize,
}

impl SurvivalMatrix {
    /// Build from explicit rows, validating that every row is non-increasing
    /// and within `[0, 1]`.
    pub fn from_rows(grid: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Shape("matrix needs at least one row".into()));
        }
        let m = grid.len();
        let mut data = Vec::with_capacity(rows.len() * m);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries for a grid of {m}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) || row.windows(2).any(|w| w[1] > w[0])
            {
                return Err(Error::Argument(format!(
                    "row {i} is not a survival curve"
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            grid,
            data,
            n_rows: rows.len(),
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.grid.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.grid.len();
        &self.data[i * m..(i + 1) * m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.grid.len().max(1)).take(self.n_rows)
    }

    /// Weighted column mean. Returns `None` when the weights sum to zero.
    pub fn weighted_mean(&self, weights: &[f64]) -> Option<Vec<f64>> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let mut acc = vec![0.0; self.n_cols()];
        for (row, &w) in self.rows().zip(weights) {
            if w != 0.0 {
                acc.iter_mut().zip(row).for_each(|(a, v)| *a += w * v);
            }
        }
        Some(
            acc.into_iter()
                .map(|a| (a / total).clamp(0.0, 1.0))
                .collect(),
        )
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MATRIX_MAGIC)?;
        put_u32(&mut w, CACHE_VERSION)?;
        put_u64(&mut w, self.n_rows as u64)?;
        put_f64s(&mut w, &self.grid)?;
        put_f64s(&mut w, &self.data)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        expect_header(&mut r, MATRIX_MAGIC)?;
        let n_rows = get_u64(&mut r)? as usize;
        let grid = get_f64s(&mut r)?;
        let data = get_f64s(&mut r)?;
        if data.len() != n_rows * grid.len() {
            return Err(Error::Cache("matrix payload has the wrong size".into()));
        }
        Ok(Self { grid, data, n_rows })
    }
}

/// Column means of the matrix: the model-averaged population curve.
pub fn population_curve(matrix: &SurvivalMatrix) -> Result<StepCurve> {
    let weights = vec![1.0; matrix.n_rows()];
    let values = matrix
        .weighted_mean(&weights)
        .ok_or_else(|| Error::Shape("empty matrix".into()))?;
    StepCurve::new(matrix.grid().to_vec(), values)
}

/// Fit a forest on `dataset`. Deterministic given `config.seed`, independent
/// of the number of worker threads.
pub fn fit_forest(dataset: &SurvivalDataset, config: &ForestConfig) -> Result<Forest> {
    config.validate()?;
    let n = dataset.n();
    if n < config.min_leaf {
        return Err(Error::Config(format!(
            "{n} subjects cannot fill a leaf of min_leaf = {}",
            config.min_leaf
        )));
    }
    let shared = SharedData::new(dataset);
    let max_depth = config.depth_for(dataset.p());
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(config.seed, Stream::Tree, t as u64);
            let size = n.min(config.max_subjects_per_tree);
            let sample: Vec<u32> = (0..size).map(|_| rng.random_range(0..n) as u32).collect();
            TreeBuilder::new(&shared, config, max_depth, sample).build()
        })
        .collect();
    Ok(Forest {
        trees,
        grid: shared.grid,
        n_features: dataset.p(),
    })
}

/// Predict the survival matrix for every subject of `dataset`.
pub fn predict_matrix(forest: &Forest, dataset: &SurvivalDataset) -> Result<SurvivalMatrix> {
    if dataset.p() != forest.n_features {
        return Err(Error::Shape(format!(
            "forest trained on {} features, dataset has {}",
            forest.n_features,
            dataset.p()
        )));
    }
    let m = forest.grid.len();
    let mut data = vec![0.0; dataset.n() * m];
    data.par_chunks_mut(m.max(1))
        .enumerate()
        .for_each(|(i, row)| forest.predict_into(dataset.row(i), row));
    Ok(SurvivalMatrix {
        grid: forest.grid.clone(),
        data,
        n_rows: dataset.n(),
    })
}

/// Dataset views shared by every tree.
struct SharedData<'a> {
    dataset: &'a SurvivalDataset,
    grid: Vec<f64>,
    /// Rank of each subject's time among all distinct observed times.
    time_rank: Vec<u32>,
    /// Grid index of each subject's time when it is an event.
    grid_index: Vec<u32>,
}

impl<'a> SharedData<'a> {
    fn new(dataset: &'a SurvivalDataset) -> Self {
        let times = dataset.times();
        let mut distinct = times.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let grid = dataset.unique_event_times();
        let time_rank = times
            .iter()
            .map(|t| distinct.partition_point(|d| d < t) as u32)
            .collect();
        let grid_index = times
            .iter()
            .zip(dataset.events())
            .map(|(t, &e)| {
                if e {
                    grid.partition_point(|g| g < t) as u32
                } else {
                    u32::MAX
                }
            })
            .collect();
        Self {
            dataset,
            grid,
            time_rank,
            grid_index,
        }
    }
}

/// Event-time summary of one node, in node-local time ranks.
struct NodeTimes {
    /// Cumulative `d/r` (Nelson–Aalen hazard) through each local time.
    hazard: Vec<f64>,
    /// Cumulative `w * r` through each local time.
    lin: Vec<f64>,
    /// Cumulative `w` through each local time.
    quad: Vec<f64>,
    /// Leaf Kaplan–Meier steps for this node.
    km: Vec<(u32, f64)>,
    events: usize,
}

struct Fenwick {
    tree: Vec<f64>,
}

impl Fenwick {
    fn reset(&mut self, n: usize) {
        self.tree.clear();
        self.tree.resize(n + 1, 0.0);
    }

    fn add(&mut self, i: usize, v: f64) {
        let mut i = i + 1;
        while i < self.tree.len() {
            self.tree[i] += v;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over indices `< i`.
    fn prefix(&self, i: usize) -> f64 {
        let mut i = i;
        let mut s = 0.0;
        while i > 0 {
            s += self.tree[i];
            i &= i - 1;
        }
        s
    }
}

/// A candidate split evaluated during the sweep.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    left_size: usize,
    threshold: f64,
    statistic: f64,
}

struct TreeBuilder<'a, 'd> {
    shared: &'a SharedData<'d>,
    min_split: usize,
    min_leaf: usize,
    max_depth: usize,
    /// Dataset row of each in-bag slot.
    rows: Vec<u32>,
    /// Per feature, slots sorted by feature value; a node owns a range.
    orders: Vec<Vec<u32>>,
    /// Slots sorted by time rank; same ranges as `orders`.
    time_order: Vec<u32>,
    local_rank: Vec<u32>,
    goes_left: Vec<bool>,
    scratch: Vec<u32>,
    fen_w: Fenwick,
    fen_c: Fenwick,
}

impl<'a, 'd> TreeBuilder<'a, 'd> {
    fn new(shared: &'a SharedData<'d>, cfg: &ForestConfig, max_depth: usize, rows: Vec<u32>) -> Self {
        let data = shared.dataset;
        let size = rows.len();
        let orders = (0..data.p())
            .map(|f| {
                let mut order: Vec<u32> = (0..size as u32).collect();
                order.sort_by(|&a, &b| {
                    let xa = data.row(rows[a as usize] as usize)[f];
                    let xb = data.row(rows[b as usize] as usize)[f];
                    xa.total_cmp(&xb).then(a.cmp(&b))
                });
                order
            })
            .collect();
        let mut time_order: Vec<u32> = (0..size as u32).collect();
        time_order.sort_by_key(|&s| (shared.time_rank[rows[s as usize] as usize], s));
        Self {
            shared,
            min_split: cfg.min_split,
            min_leaf: cfg.min_leaf,
            max_depth,
            rows,
            orders,
            time_order,
            local_rank: vec![0; size],
            goes_left: vec![false; size],
            scratch: Vec::with_capacity(size),
            fen_w: Fenwick { tree: Vec::new() },
            fen_c: Fenwick { tree: Vec::new() },
        }
    }

    fn x(&self, slot: u32, feature: usize) -> f64 {
        self.shared.dataset.row(self.rows[slot as usize] as usize)[feature]
    }

    fn is_event(&self, slot: u32) -> bool {
        self.shared.dataset.events()[self.rows[slot as usize] as usize]
    }

    fn build(mut self) -> Tree {
        let mut nodes = vec![Node::Leaf { curve: 0 }];
        let mut leaves = Vec::new();
        // (node id, start, end, depth)
        let mut stack = vec![(0usize, 0usize, self.rows.len(), 0usize)];
        while let Some((id, start, end, depth)) = stack.pop() {
            let times = self.node_times(start, end);
            let split = if end - start >= self.min_split && depth < self.max_depth && times.events >= 2
            {
                self.best_split(start, end, &times)
            } else {
                None
            };
            match split {
                Some((feature, cand)) => {
                    self.partition(start, end, feature, cand.threshold);
                    let mid = start + cand.left_size;
                    let left = nodes.len();
                    nodes.push(Node::Leaf { curve: 0 });
                    nodes.push(Node::Leaf { curve: 0 });
                    nodes[id] = Node::Split {
                        feature: feature as u32,
                        threshold: cand.threshold,
                        left: left as u32,
                        right: left as u32 + 1,
                    };
                    // right first so the left subtree is built first
                    stack.push((left + 1, mid, end, depth + 1));
                    stack.push((left, start, mid, depth + 1));
                }
                None => {
                    nodes[id] = Node::Leaf {
                        curve: leaves.len() as u32,
                    };
                    leaves.push(LeafCurve { steps: times.km });
                }
            }
        }
        Tree { nodes, leaves }
    }

    fn node_times(&mut self, start: usize, end: usize) -> NodeTimes {
        let shared = self.shared;
        let slots = &self.time_order[start..end];
        // distinct times: (global rank, deaths, subjects)
        let mut groups: Vec<(u32, f64, f64, u32)> = Vec::new();
        for &s in slots {
            let row = self.rows[s as usize] as usize;
            let rank = shared.time_rank[row];
            let event = shared.dataset.events()[row];
            match groups.last_mut() {
                Some(g) if g.0 == rank => {
                    g.1 += event as u8 as f64;
                    g.2 += 1.0;
                    if event {
                        g.3 = shared.grid_index[row];
                    }
                }
                _ => groups.push((rank, event as u8 as f64, 1.0, shared.grid_index[row])),
            }
            self.local_rank[s as usize] = groups.len() as u32 - 1;
        }
        let mut at_risk = slots.len() as f64;
        let (mut h, mut l, mut q) = (0.0, 0.0, 0.0);
        let mut surv = 1.0;
        let mut out = NodeTimes {
            hazard: Vec::with_capacity(groups.len()),
            lin: Vec::with_capacity(groups.len()),
            quad: Vec::with_capacity(groups.len()),
            km: Vec::new(),
            events: 0,
        };
        for &(_, d, count, grid_idx) in &groups {
            if d > 0.0 {
                h += d / at_risk;
                if at_risk > 1.0 {
                    let w = d * (at_risk - d) / (at_risk * at_risk * (at_risk - 1.0));
                    l += w * at_risk;
                    q += w;
                }
                surv *= 1.0 - d / at_risk;
                out.km.push((grid_idx, surv));
                out.events += d as usize;
            }
            out.hazard.push(h);
            out.lin.push(l);
            out.quad.push(q);
            at_risk -= count;
        }
        out
    }

    fn best_split(&mut self, start: usize, end: usize, times: &NodeTimes) -> Option<(usize, Candidate)> {
        let mut best: Option<(usize, Candidate)> = None;
        for f in 0..self.orders.len() {
            for cand in self.scan_feature(f, start, end, times) {
                if best.is_none_or(|(_, b)| cand.statistic > b.statistic) {
                    best = Some((f, cand));
                }
            }
        }
        best
    }

    /// Evaluate the thinned candidate thresholds of one feature, in ascending
    /// threshold order.
    fn scan_feature(&mut self, f: usize, start: usize, end: usize, times: &NodeTimes) -> Vec<Candidate> {
        let n_node = end - start;
        let order = &self.orders[f][start..end];
        let xs: Vec<f64> = order.iter().map(|&s| self.x(s, f)).collect();

        let mut gaps: Vec<usize> = (self.min_leaf..=n_node - self.min_leaf)
            .filter(|&k| k > 0 && k < n_node && xs[k - 1] < xs[k])
            .collect();
        if gaps.is_empty() {
            return Vec::new();
        }
        if gaps.len() > MAX_SPLIT_CANDIDATES {
            let last = gaps.len() - 1;
            let mut thinned: Vec<usize> = (0..MAX_SPLIT_CANDIDATES)
                .map(|i| gaps[(i * last + (MAX_SPLIT_CANDIDATES - 1) / 2) / (MAX_SPLIT_CANDIDATES - 1)])
                .collect();
            thinned.dedup();
            gaps = thinned;
        }

        let n_ranks = times.hazard.len();
        self.fen_w.reset(n_ranks);
        self.fen_c.reset(n_ranks);
        let (mut oe, mut lin, mut quad) = (0.0, 0.0, 0.0);
        let mut left_events = 0usize;
        let mut out = Vec::with_capacity(gaps.len());
        let mut next_gap = gaps.iter().peekable();
        for (k, &s) in order.iter().enumerate() {
            let rank = self.local_rank[s as usize] as usize;
            let event = self.is_event(s);
            let w = times.quad[rank];
            let below = self.fen_w.prefix(rank);
            let at_or_above = k as f64 - self.fen_c.prefix(rank);
            quad += w + 2.0 * (below + w * at_or_above);
            lin += times.lin[rank];
            oe += event as u8 as f64 - times.hazard[rank];
            left_events += event as usize;
            self.fen_w.add(rank, w);
            self.fen_c.add(rank, 1.0);

            let left_size = k + 1;
            if next_gap.peek() != Some(&&left_size) {
                continue;
            }
            next_gap.next();
            if left_events == 0 || left_events == times.events {
                continue;
            }
            let variance = lin - quad;
            if !(variance > 1e-12) {
                continue;
            }
            let (lo, hi) = (xs[left_size - 1], xs[left_size]);
            let mut threshold = 0.5 * (lo + hi);
            if !(threshold < hi) {
                threshold = lo;
            }
            out.push(Candidate {
                left_size,
                threshold,
                statistic: oe * oe / variance,
            });
            if next_gap.peek().is_none() {
                break;
            }
        }
        out
    }

    fn partition(&mut self, start: usize, end: usize, feature: usize, threshold: f64) {
        for &s in &self.orders[feature][start..end] {
            self.goes_left[s as usize] = self.x(s, feature) <= threshold;
        }
        let goes_left = &self.goes_left;
        let scratch = &mut self.scratch;
        let mut stable = |range: &mut [u32]| {
            scratch.clear();
            let mut w = 0;
            for i in 0..range.len() {
                let s = range[i];
                if goes_left[s as usize] {
                    range[w] = s;
                    w += 1;
                } else {
                    scratch.push(s);
                }
            }
            range[w..].copy_from_slice(scratch);
        };
        for order in self.orders.iter_mut() {
            stable(&mut order[start..end]);
        }
        stable(&mut self.time_order[start..end]);
    }
}

const FOREST_MAGIC: &[u8; 4] = b"SGRF";
const MATRIX_MAGIC: &[u8; 4] = b"SGSM";
const CACHE_VERSION: u32 = 1;

fn expect_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    if &buf != magic {
        return Err(Error::Cache("unrecognised file type".into()));
    }
    let version = get_u32(r)?;
    if version != CACHE_VERSION {
        return Err(Error::Cache(format!(
            "format version {version}, expected {CACHE_VERSION}"
        )));
    }
    Ok(())
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64s<W: Write>(w: &mut W, vs: &[f64]) -> Result<()> {
    put_u64(w, vs.len() as u64)?;
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_f64s<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let len = get_u64(r)? as usize;
    (0..len).map(|_| get_f64(r)).collect()
}
