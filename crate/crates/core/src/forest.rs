//! Random forest over the three physiological features: CART trees grown on
//! bootstrap resamples with Gini splits and a random feature subset per
//! node. Class probabilities are the mean of the leaf class frequencies.

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use thiserror::Error;

use crate::features::{EmotionLabel, PhysioFeatures};
use crate::fusion::ProbVector;
use crate::seed;

pub const FEATURES: usize = 3;
pub const CLASSES: usize = EmotionLabel::COUNT;

/// Splits whose impurity decrease does not exceed this are not taken.
const MIN_DECREASE: f64 = 1e-12;

const BLOB_MAGIC: &[u8; 4] = b"FRST";
const BLOB_VERSION: u16 = 1;

pub type ClassCounts = [u32; CLASSES];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error("node has no samples")]
    EmptyNode,
    #[error("training set is empty")]
    EmptyDataset,
    #[error("forest has no trees")]
    UnfittedForest,
    #[error("invalid forest configuration: {0}")]
    InvalidConfig(String),
    #[error("corrupt forest blob: {0}")]
    Corrupt(String),
}

pub type Result<T> = std::result::Result<T, ForestError>;

/// One training example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledFeatures {
    pub features: PhysioFeatures,
    pub label: EmotionLabel,
}

impl LabeledFeatures {
    pub fn new(features: PhysioFeatures, label: EmotionLabel) -> Self {
        Self { features, label }
    }
}

/// Gini impurity `1 - sum_k p_k^2` of a class histogram.
pub fn gini(counts: &ClassCounts) -> Result<f64> {
    let n: u64 = counts.iter().map(|&c| c as u64).sum();
    if n == 0 {
        return Err(ForestError::EmptyNode);
    }
    let n = n as f64;
    Ok(1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>())
}

fn gini_unchecked(counts: &ClassCounts, n: u32) -> f64 {
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// Weighted impurity decrease of splitting `parent` into `left` and its complement.
fn split_decrease(parent: &ClassCounts, left: &ClassCounts, n: u32, n_left: u32) -> f64 {
    let mut right = *parent;
    for (r, l) in right.iter_mut().zip(left) {
        *r -= l;
    }
    let n_right = n - n_left;
    gini_unchecked(parent, n)
        - (n_left as f64 / n as f64) * gini_unchecked(left, n_left)
        - (n_right as f64 / n as f64) * gini_unchecked(&right, n_right)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    /// Samples with `value <= threshold` go left.
    pub threshold: f64,
    pub decrease: f64,
}

fn histogram(data: &[LabeledFeatures], idx: &[usize]) -> ClassCounts {
    let mut counts = [0u32; CLASSES];
    for &i in idx {
        counts[data[i].label.index()] += 1;
    }
    counts
}

/// Midpoint threshold that keeps `lo` on the left and `hi` on the right.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid < hi {
        mid
    } else {
        lo
    }
}

fn best_split_indexed(
    data: &[LabeledFeatures],
    idx: &[usize],
    features: &[usize],
) -> Option<Split> {
    if idx.len() < 2 {
        return None;
    }
    let parent = histogram(data, idx);
    let n = idx.len() as u32;
    let mut best: Option<Split> = None;
    let mut sorted = idx.to_vec();
    let mut feats = features.to_vec();
    feats.sort_unstable();
    feats.dedup();
    for &f in &feats {
        sorted.sort_by(|&a, &b| data[a].features.get(f).total_cmp(&data[b].features.get(f)));
        let mut left = [0u32; CLASSES];
        for k in 0..sorted.len() - 1 {
            left[data[sorted[k]].label.index()] += 1;
            let (lo, hi) = (
                data[sorted[k]].features.get(f),
                data[sorted[k + 1]].features.get(f),
            );
            if lo == hi {
                continue;
            }
            let decrease = split_decrease(&parent, &left, n, k as u32 + 1);
            if decrease > MIN_DECREASE && best.is_none_or(|b| decrease > b.decrease) {
                best = Some(Split {
                    feature: f,
                    threshold: midpoint(lo, hi),
                    decrease,
                });
            }
        }
    }
    best
}

/// Exhaustive search over midpoints between consecutive distinct values of
/// each candidate feature. Ties go to the lowest feature index, then the
/// lowest threshold. `None` when no split lowers the impurity.
pub fn best_split(samples: &[LabeledFeatures], candidate_features: &[usize]) -> Option<Split> {
    let idx: Vec<usize> = (0..samples.len()).collect();
    best_split_indexed(samples, &idx, candidate_features)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Split {
        feature: u8,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        counts: ClassCounts,
    },
}

/// A fitted tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(counts: ClassCounts) -> Self {
        Self {
            nodes: vec![Node::Leaf { counts }],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + go(nodes, left as usize).max(go(nodes, right as usize))
                }
            }
        }
        go(&self.nodes, 0)
    }

    /// Class counts of the leaf reached by `x`.
    pub fn leaf_counts(&self, x: &PhysioFeatures) -> &ClassCounts {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { counts } => return counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x.get(*feature as usize) <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    /// Leaf class frequencies for `x`.
    pub fn distribution(&self, x: &PhysioFeatures) -> [f64; CLASSES] {
        let counts = self.leaf_counts(x);
        let n: u32 = counts.iter().sum();
        let mut p = [0.0; CLASSES];
        for (pk, &c) in p.iter_mut().zip(counts) {
            *pk = c as f64 / n as f64;
        }
        p
    }

    fn grow(
        data: &[LabeledFeatures],
        idx: Vec<usize>,
        cfg: &ForestConfig,
        rng: &mut seed::Rng,
    ) -> Self {
        let mut nodes = vec![Node::Leaf {
            counts: [0; CLASSES],
        }];
        let mut stack = vec![(0usize, idx, 0usize)];
        while let Some((slot, idx, depth)) = stack.pop() {
            let counts = histogram(data, &idx);
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let depth_capped = cfg.max_depth.is_some_and(|d| depth >= d);
            let split = if pure || idx.len() < cfg.min_samples_split || depth_capped {
                None
            } else {
                let mut feats = sample(rng, FEATURES, cfg.max_features.min(FEATURES)).into_vec();
                feats.sort_unstable();
                best_split_indexed(data, &idx, &feats)
            };
            match split {
                None => nodes[slot] = Node::Leaf { counts },
                Some(s) => {
                    let (l, r): (Vec<usize>, Vec<usize>) = idx
                        .into_iter()
                        .partition(|&i| data[i].features.get(s.feature) <= s.threshold);
                    let left = nodes.len();
                    nodes.push(Node::Leaf {
                        counts: [0; CLASSES],
                    });
                    nodes.push(Node::Leaf {
                        counts: [0; CLASSES],
                    });
                    nodes[slot] = Node::Split {
                        feature: s.feature as u8,
                        threshold: s.threshold,
                        left: left as u32,
                        right: left as u32 + 1,
                    };
                    stack.push((left + 1, r, depth + 1));
                    stack.push((left, l, depth + 1));
                }
            }
        }
        Self { nodes }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features tried at each node.
    pub max_features: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            // ceil(sqrt(3))
            max_features: 2,
            max_depth: None,
            min_samples_split: 2,
            bootstrap: true,
        }
    }
}

impl ForestConfig {
    fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(ForestError::InvalidConfig(
                "n_trees must be positive".into(),
            ));
        }
        if !(1..=FEATURES).contains(&self.max_features) {
            return Err(ForestError::InvalidConfig(format!(
                "max_features {} not in 1..={FEATURES}",
                self.max_features
            )));
        }
        if self.min_samples_split < 2 {
            return Err(ForestError::InvalidConfig(
                "min_samples_split must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<Tree>,
    pub config: ForestConfig,
    pub seed: u64,
    /// Out-of-bag accuracy over samples left out by at least one tree.
    pub oob_accuracy: Option<f64>,
}

impl Forest {
    /// Assembles a forest from already built trees.
    pub fn from_trees(trees: Vec<Tree>) -> Self {
        Self {
            config: ForestConfig {
                n_trees: trees.len(),
                ..ForestConfig::default()
            },
            trees,
            seed: 0,
            oob_accuracy: None,
        }
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BLOB_MAGIC);
        out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.config.n_trees as u32).to_le_bytes());
        out.push(self.config.max_features as u8);
        out.extend_from_slice(&(self.config.max_depth.map_or(0, |d| d as u32 + 1)).to_le_bytes());
        out.extend_from_slice(&(self.config.min_samples_split as u32).to_le_bytes());
        out.push(u8::from(self.config.bootstrap));
        out.extend_from_slice(&self.oob_accuracy.unwrap_or(f64::NAN).to_le_bytes());
        out.extend_from_slice(&(self.trees.len() as u32).to_le_bytes());
        for tree in &self.trees {
            out.extend_from_slice(&(tree.nodes.len() as u32).to_le_bytes());
            for node in &tree.nodes {
                match node {
                    Node::Leaf { counts } => {
                        out.push(0);
                        counts
                            .iter()
                            .for_each(|c| out.extend_from_slice(&c.to_le_bytes()));
                    }
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        out.push(1);
                        out.push(*feature);
                        out.extend_from_slice(&threshold.to_le_bytes());
                        out.extend_from_slice(&left.to_le_bytes());
                        out.extend_from_slice(&right.to_le_bytes());
                    }
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| ForestError::Corrupt(m.to_string());
        if bytes.len() < 4 + 2 + 4 {
            return Err(corrupt("truncated"));
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != BLOB_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u16()?;
        if version != BLOB_VERSION {
            return Err(ForestError::Corrupt(format!(
                "unsupported version {version}"
            )));
        }
        let seed = r.u64()?;
        let n_trees_cfg = r.u32()? as usize;
        let max_features = r.u8()? as usize;
        let max_depth = match r.u32()? {
            0 => None,
            d => Some(d as usize - 1),
        };
        let min_samples_split = r.u32()? as usize;
        let bootstrap = r.u8()? != 0;
        let oob = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let n_trees = r.u32()? as usize;
        let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
        for _ in 0..n_trees {
            let n_nodes = r.u32()? as usize;
            let mut nodes = Vec::with_capacity(n_nodes.min(1 << 20));
            for _ in 0..n_nodes {
                nodes.push(match r.u8()? {
                    0 => {
                        let mut counts = [0u32; CLASSES];
                        for c in &mut counts {
                            *c = r.u32()?;
                        }
                        Node::Leaf { counts }
                    }
                    1 => {
                        let feature = r.u8()?;
                        let threshold = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
                        let (left, right) = (r.u32()?, r.u32()?);
                        if feature as usize >= FEATURES
                            || left as usize >= n_nodes
                            || right as usize >= n_nodes
                        {
                            return Err(corrupt("split node out of range"));
                        }
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        }
                    }
                    _ => return Err(corrupt("unknown node tag")),
                });
            }
            if nodes.is_empty() {
                return Err(corrupt("empty tree"));
            }
            trees.push(Tree { nodes });
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self {
            trees,
            config: ForestConfig {
                n_trees: n_trees_cfg,
                max_features,
                max_depth,
                min_samples_split,
                bootstrap,
            },
            seed,
            oob_accuracy: (!oob.is_nan()).then_some(oob),
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| ForestError::Corrupt("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Indices drawn for tree `t`: a same-size resample with replacement, or the
/// whole set when bootstrapping is off.
pub fn bootstrap_indices(n: usize, cfg: &ForestConfig, seed: u64, t: usize) -> Vec<usize> {
    if !cfg.bootstrap {
        return (0..n).collect();
    }
    let mut rng = seed::stream(seed, &[seed::tag::TREE, t as u64, 0]);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Fits `cfg.n_trees` trees, each on its own seeded bootstrap resample.
pub fn fit_forest(data: &[LabeledFeatures], cfg: &ForestConfig, seed: u64) -> Result<Forest> {
    if data.is_empty() {
        return Err(ForestError::EmptyDataset);
    }
    cfg.validate()?;
    let n = data.len();
    let fitted: Vec<(Tree, Vec<bool>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let idx = bootstrap_indices(n, cfg, seed, t);
            let mut in_bag = vec![false; n];
            idx.iter().for_each(|&i| in_bag[i] = true);
            let mut rng = seed::stream(seed, &[seed::tag::TREE, t as u64, 1]);
            (Tree::grow(data, idx, cfg, &mut rng), in_bag)
        })
        .collect();

    let oob_accuracy = if cfg.bootstrap {
        let (mut hits, mut scored) = (0usize, 0usize);
        for (i, sample) in data.iter().enumerate() {
            let mut acc = [0.0; CLASSES];
            let mut voters = 0;
            for (tree, in_bag) in &fitted {
                if !in_bag[i] {
                    voters += 1;
                    for (a, p) in acc.iter_mut().zip(tree.distribution(&sample.features)) {
                        *a += p;
                    }
                }
            }
            if voters > 0 {
                scored += 1;
                hits += usize::from(crate::fusion::argmax(&acc) == sample.label.index());
            }
        }
        (scored > 0).then(|| hits as f64 / scored as f64)
    } else {
        None
    };

    Ok(Forest {
        trees: fitted.into_iter().map(|(t, _)| t).collect(),
        config: cfg.clone(),
        seed,
        oob_accuracy,
    })
}

/// Mean leaf distribution over all trees and its argmax (lowest index on ties).
pub fn predict_forest(
    forest: &Forest,
    features: &PhysioFeatures,
) -> Result<(ProbVector, EmotionLabel)> {
    if forest.trees.is_empty() {
        return Err(ForestError::UnfittedForest);
    }
    let mut acc = [0.0; CLASSES];
    for tree in &forest.trees {
        for (a, p) in acc.iter_mut().zip(tree.distribution(features)) {
            *a += p;
        }
    }
    let n = forest.trees.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    let probs = ProbVector::new(acc).expect("mean of leaf distributions is a distribution");
    Ok((probs, probs.argmax()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use EmotionLabel::*;

    fn lf(hrv: f64, eda: f64, dt: f64, label: EmotionLabel) -> LabeledFeatures {
        LabeledFeatures::new(
            PhysioFeatures {
                hrv,
                eda_max: eda,
                delta_t: dt,
            },
            label,
        )
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[5, 0, 0, 0, 0, 0, 0]).unwrap(), 0.0);
        assert!((gini(&[1; 7]).unwrap() - 6.0 / 7.0).abs() < 1e-15);
        assert!((gini(&[3, 1, 0, 0, 0, 0, 0]).unwrap() - 0.375).abs() < 1e-15);
        assert_eq!(gini(&[0; 7]), Err(ForestError::EmptyNode));
    }

    #[test]
    fn best_split_examples() {
        let same = vec![lf(1.0, 1.0, 1.0, Angry), lf(1.0, 1.0, 1.0, Sad)];
        assert_eq!(best_split(&same, &[0, 1, 2]), None);

        let sep = vec![lf(0.0, 0.0, 0.0, Angry), lf(1.0, 0.0, 0.0, Disgust)];
        let s = best_split(&sep, &[0]).unwrap();
        assert_eq!(s.feature, 0);
        assert_eq!(s.threshold, 0.5);
        assert!((s.decrease - 0.5).abs() < 1e-15);

        // every feature separates equally well: lowest index wins
        let tied = vec![lf(0.0, 0.0, 0.0, Angry), lf(1.0, 1.0, 1.0, Fear)];
        assert_eq!(best_split(&tied, &[2, 1, 0]).unwrap().feature, 0);
    }

    #[test]
    fn lowest_threshold_wins_ties() {
        // labels A B A: cutting at 0.5 or 1.5 isolates one sample each, same decrease
        let d = vec![
            lf(0.0, 0.0, 0.0, Angry),
            lf(1.0, 0.0, 0.0, Sad),
            lf(2.0, 0.0, 0.0, Angry),
        ];
        let s = best_split(&d, &[0]).unwrap();
        assert_eq!(s.threshold, 0.5);
    }

    #[test]
    fn single_class_forest_is_pure() {
        let d: Vec<_> = (0..20).map(|i| lf(i as f64, 0.0, 1.0, Surprise)).collect();
        let f = fit_forest(
            &d,
            &ForestConfig {
                n_trees: 10,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        assert!(f.trees().iter().all(|t| t.nodes().len() == 1));
        let (p, l) = predict_forest(&f, &d[3].features).unwrap();
        assert_eq!(l, Surprise);
        assert_eq!(p, ProbVector::one_hot(Surprise));
    }

    #[test]
    fn averaged_leaf_distributions() {
        let mut a = [0; CLASSES];
        a[0] = 3;
        let mut b = [0; CLASSES];
        b[1] = 2;
        let f = Forest::from_trees(vec![Tree::leaf(a), Tree::leaf(b)]);
        let (p, l) = predict_forest(
            &f,
            &PhysioFeatures {
                hrv: 0.0,
                eda_max: 0.0,
                delta_t: 0.0,
            },
        )
        .unwrap();
        assert_eq!(p.probs(), &[0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(l, Angry);
        let mut c = [0; CLASSES];
        c[2] = 1;
        let pure = Forest::from_trees(vec![Tree::leaf(c); 3]);
        assert_eq!(
            predict_forest(
                &pure,
                &PhysioFeatures {
                    hrv: 1.0,
                    eda_max: 1.0,
                    delta_t: 1.0
                }
            )
            .unwrap()
            .1,
            Fear
        );
    }

    #[test]
    fn unfitted_and_empty() {
        let f = Forest::from_trees(vec![]);
        assert!(matches!(
            predict_forest(
                &f,
                &PhysioFeatures {
                    hrv: 0.0,
                    eda_max: 0.0,
                    delta_t: 0.0
                }
            ),
            Err(ForestError::UnfittedForest)
        ));
        assert!(matches!(
            fit_forest(&[], &ForestConfig::default(), 0),
            Err(ForestError::EmptyDataset)
        ));
    }

    #[test]
    fn max_depth_is_respected() {
        let d: Vec<_> = (0..64)
            .map(|i| {
                lf(
                    i as f64,
                    (i * 7 % 13) as f64,
                    0.0,
                    EmotionLabel::from_index(i % 7).unwrap(),
                )
            })
            .collect();
        let cfg = ForestConfig {
            n_trees: 5,
            max_depth: Some(2),
            ..Default::default()
        };
        let f = fit_forest(&d, &cfg, 3).unwrap();
        assert!(f.trees().iter().all(|t| t.depth() <= 2));
    }
}
