//! Bagged Gini decision trees over histogram bins.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, Prediction};
use crate::error::{Error, Result};
use crate::extract::Histogram;

const FEATURES: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub tree_count: usize,
    pub features_per_split: usize,
    /// `None` grows trees until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { tree_count: 500, features_per_split: 16, max_depth: None, min_leaf: 1, seed: 0 }
    }
}

impl ForestParams {
    fn check(&self) -> Result<()> {
        if self.tree_count == 0 || self.min_leaf == 0 || self.max_depth == Some(0) {
            return Err(Error::invalid("forest parameters must be positive"));
        }
        if !(1..=FEATURES).contains(&self.features_per_split) {
            return Err(Error::invalid(format!(
                "features_per_split must be in 1..=256, got {}",
                self.features_per_split
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Node {
    Leaf { class: usize },
    Split { feature: u8, threshold: f64, left: u32, right: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn vote(&self, bins: &[u32; 256]) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { class } => return class,
                Node::Split { feature, threshold, left, right } => {
                    at = if bins[feature as usize] as f64 <= threshold { left } else { right } as usize;
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub class_count: usize,
    pub params: ForestParams,
    pub trees: Vec<Tree>,
}

/// Training data in canonical order, stored by column.
struct Columns {
    cols: Vec<Vec<u32>>,
    class: Vec<usize>,
    class_count: usize,
}

impl Columns {
    fn new(train: &Dataset) -> Self {
        let mut rows: Vec<(&[u32; 256], usize)> = train.instances.iter().map(|i| (i.hist.bins(), i.class)).collect();
        rows.sort_unstable();
        let cols = (0..FEATURES).map(|f| rows.iter().map(|r| r.0[f]).collect()).collect();
        Self { cols, class: rows.iter().map(|r| r.1).collect(), class_count: train.class_count }
    }
}

struct Best {
    score: f64,
    feature: usize,
    threshold: f64,
}

/// Sum of squared class counts over size, per side; larger is purer.
fn purity(counts: &[usize], n: usize) -> f64 {
    counts.iter().map(|&c| (c * c) as f64).sum::<f64>() / n as f64
}

fn best_split_on(
    cols: &Columns,
    f: usize,
    idx: &[u32],
    min_leaf: usize,
    pairs: &mut Vec<(u32, usize)>,
    left: &mut [usize],
    total: &[usize],
) -> Option<(f64, f64)> {
    let col = &cols.cols[f];
    pairs.clear();
    pairs.extend(idx.iter().map(|&i| (col[i as usize], cols.class[i as usize])));
    let (lo, hi) = pairs.iter().fold((u32::MAX, 0), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    if lo == hi {
        return None;
    }
    pairs.sort_unstable();
    left.fill(0);
    let n = pairs.len();
    let mut right = total.to_vec();
    let mut best: Option<(f64, f64)> = None;
    for i in 0..n - 1 {
        let c = pairs[i].1;
        left[c] += 1;
        right[c] -= 1;
        if pairs[i].0 == pairs[i + 1].0 {
            continue;
        }
        let nl = i + 1;
        if nl < min_leaf || n - nl < min_leaf {
            continue;
        }
        let score = purity(left, nl) + purity(&right, n - nl);
        if best.is_none_or(|(s, _)| score > s + 1e-12) {
            best = Some((score, (pairs[i].0 as f64 + pairs[i + 1].0 as f64) / 2.0));
        }
    }
    best
}

fn grow(cols: &Columns, p: &ForestParams, rng: &mut ChaCha8Rng) -> Tree {
    let n = cols.class.len();
    let mut idx: Vec<u32> = (0..n).map(|_| rng.gen_range(0..n) as u32).collect();
    let mut nodes = vec![Node::Leaf { class: 0 }];
    let mut stack = vec![(0usize, 0usize, n, 0usize)];
    let mut features: Vec<usize> = (0..FEATURES).collect();
    let mut pairs = Vec::with_capacity(n);
    let mut left = vec![0; cols.class_count];
    let mut counts = vec![0; cols.class_count];
    while let Some((at, lo, hi, depth)) = stack.pop() {
        let here = &mut idx[lo..hi];
        counts.fill(0);
        for &i in here.iter() {
            counts[cols.class[i as usize]] += 1;
        }
        let majority = (0..counts.len()).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap();
        let size = hi - lo;
        let pure = counts[majority] == size;
        if pure || size < 2 * p.min_leaf || p.max_depth.is_some_and(|d| depth >= d) {
            nodes[at] = Node::Leaf { class: majority };
            continue;
        }
        // Features are drawn in random order; past the first batch, the
        // search only continues while no usable split has turned up.
        features.shuffle(rng);
        let mut best: Option<Best> = None;
        for (k, &f) in features.iter().enumerate() {
            if k >= p.features_per_split && best.is_some() {
                break;
            }
            if let Some((score, threshold)) = best_split_on(cols, f, here, p.min_leaf, &mut pairs, &mut left, &counts) {
                if best.as_ref().is_none_or(|b| score > b.score + 1e-12) {
                    best = Some(Best { score, feature: f, threshold });
                }
            }
        }
        let Some(best) = best else {
            nodes[at] = Node::Leaf { class: majority };
            continue;
        };
        let col = &cols.cols[best.feature];
        let mut mid = 0;
        for j in 0..here.len() {
            if col[here[j] as usize] as f64 <= best.threshold {
                here.swap(mid, j);
                mid += 1;
            }
        }
        let (l, r) = (nodes.len(), nodes.len() + 1);
        nodes.push(Node::Leaf { class: majority });
        nodes.push(Node::Leaf { class: majority });
        nodes[at] =
            Node::Split { feature: best.feature as u8, threshold: best.threshold, left: l as u32, right: r as u32 };
        stack.push((r, lo + mid, hi, depth + 1));
        stack.push((l, lo, lo + mid, depth + 1));
    }
    Tree { nodes }
}

pub fn forest_train(train: &Dataset, p: &ForestParams) -> Result<ForestModel> {
    p.check()?;
    if train.instances.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if train.classes_present() < 2 {
        log::warn!("training set has a single class; forest will be constant");
    }
    let cols = Columns::new(train);
    let trees = (0..p.tree_count)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
            rng.set_stream(t as u64);
            grow(&cols, p, &mut rng)
        })
        .collect();
    Ok(ForestModel { class_count: train.class_count, params: p.clone(), trees })
}

pub fn forest_predict(m: &ForestModel, query: &Histogram) -> Prediction {
    let mut votes = vec![0.0; m.class_count];
    for t in &m.trees {
        votes[t.vote(query.bins())] += 1.0;
    }
    Prediction::from_weights(votes).expect("at least one tree")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::Instance;
    use proptest::prelude::*;

    fn hist(pairs: &[(usize, u32)]) -> Histogram {
        let mut h = Histogram::zero();
        for &(b, c) in pairs {
            h.bins_mut()[b] = c;
        }
        h
    }

    fn separable(n: usize) -> Dataset {
        let mut instances = Vec::new();
        for i in 0..n {
            let c = (i % 2) as u32;
            let h = if c == 0 { hist(&[(0, 5 + i as u32), (40, 3)]) } else { hist(&[(255, 2 + i as u32), (40, 3)]) };
            instances.push(Instance::new(h, c as usize, "b", format!("s{i}")));
        }
        Dataset::new(instances, 2).unwrap()
    }

    fn small(trees: usize, seed: u64) -> ForestParams {
        ForestParams { tree_count: trees, seed, ..Default::default() }
    }

    #[test]
    fn separable_training_accuracy() {
        let d = separable(40);
        let m = forest_train(&d, &small(50, 3)).unwrap();
        for inst in &d.instances {
            let p = forest_predict(&m, &inst.hist);
            assert_eq!(p.predicted, inst.class);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let d = separable(30);
        let a = forest_train(&d, &small(20, 9)).unwrap();
        let b = forest_train(&d, &small(20, 9)).unwrap();
        assert_eq!(a, b);
        let q = hist(&[(0, 3), (255, 3)]);
        assert_eq!(forest_predict(&a, &q), forest_predict(&b, &q));
    }

    #[test]
    fn single_class_is_constant() {
        let inst = (0..5).map(|i| Instance::new(hist(&[(i, 1)]), 1, "b", "s")).collect();
        let d = Dataset::new(inst, 2).unwrap();
        let m = forest_train(&d, &small(10, 0)).unwrap();
        let p = forest_predict(&m, &hist(&[(200, 9)]));
        assert_eq!(p.predicted, 1);
        assert_eq!(p.probs, vec![0.0, 1.0]);
    }

    #[test]
    fn vote_fractions() {
        let leaf = |c| Tree { nodes: vec![Node::Leaf { class: c }] };
        let mut trees = vec![leaf(1); 300];
        trees.extend(vec![leaf(0); 200]);
        let m = ForestModel { class_count: 2, params: ForestParams::default(), trees };
        let p = forest_predict(&m, &Histogram::zero());
        assert!((p.probs[0] - 0.4).abs() < 1e-12 && (p.probs[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_params() {
        let d = separable(4);
        assert!(forest_train(&d, &ForestParams { features_per_split: 0, ..small(1, 0) }).is_err());
        assert!(forest_train(&d, &small(0, 0)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn order_invariant(seed in any::<u64>(), perm_seed in any::<u64>()) {
            let d = separable(16);
            let mut shuffled = d.clone();
            shuffled.instances.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
            let a = forest_train(&d, &small(8, seed)).unwrap();
            let b = forest_train(&shuffled, &small(8, seed)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn probs_sum_to_one(bins in proptest::collection::vec((0usize..256, 0u32..50), 1..6)) {
            let m = forest_train(&separable(20), &small(15, 1)).unwrap();
            let p = forest_predict(&m, &hist(&bins));
            prop_assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
