//! Decision trees and random forests over binary presence features.
//!
//! Trees split on one feature per node: the left child holds rows where the
//! feature is absent, the right child rows where it is present. Leaves keep
//! class counts so forests can average fault fractions and rules can report
//! support and confidence.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::Provenance;
use crate::episode::FeatureVector;
use crate::rng::{seeded, sub_seed, StageRng};

pub const MODEL_FORMAT: &str = "rlfault-forest";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("no training rows")]
    Empty,
    #[error("row {row} has {got} features, expected {expected}")]
    Dimension { row: usize, expected: usize, got: usize },
    #[error("{rows} rows cannot be split into {folds} folds")]
    TooFewRows { rows: usize, folds: usize },
    #[error("invalid classifier config: {0}")]
    Config(String),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRow {
    pub features: FeatureVector,
    pub fault: bool,
}

impl LabeledRow {
    pub fn new(features: FeatureVector, fault: bool) -> Self {
        LabeledRow { features, fault }
    }
}

pub fn gini(negatives: usize, positives: usize) -> f64 {
    let n = (negatives + positives) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p = positives as f64 / n;
    1.0 - p * p - (1.0 - p) * (1.0 - p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split { feature: usize, absent: usize, present: usize },
    Leaf { negatives: usize, positives: usize },
}

impl Node {
    pub fn leaf(negatives: usize, positives: usize) -> Self {
        Node::Leaf { negatives, positives }
    }
}

/// Fault fraction of a leaf; an empty leaf predicts 0.
fn leaf_probability(negatives: usize, positives: usize) -> f64 {
    let n = negatives + positives;
    if n == 0 {
        0.0
    } else {
        positives as f64 / n as f64
    }
}

pub trait Classifier {
    fn predict(&self, x: &FeatureVector) -> bool;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    n_features: usize,
    /// Preorder; the root is node 0.
    nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn from_nodes(n_features: usize, nodes: Vec<Node>) -> Result<Self, ClassifierError> {
        if nodes.is_empty() {
            return Err(ClassifierError::Corrupt("tree has no nodes".into()));
        }
        for (i, node) in nodes.iter().enumerate() {
            if let Node::Split { feature, absent, present } = *node {
                if feature >= n_features || absent <= i || present <= i || absent >= nodes.len() || present >= nodes.len()
                {
                    return Err(ClassifierError::Corrupt(format!("node {i} has invalid links")));
                }
            }
        }
        Ok(DecisionTree { n_features, nodes })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { absent, present, .. } => 1 + go(nodes, absent).max(go(nodes, present)),
            }
        }
        go(&self.nodes, 0)
    }

    fn leaf_for(&self, x: &FeatureVector) -> (usize, usize) {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { negatives, positives } => return (negatives, positives),
                Node::Split { feature, absent, present } => {
                    i = if x.get(feature) { present } else { absent };
                }
            }
        }
    }

    pub fn predict_proba(&self, x: &FeatureVector) -> f64 {
        let (n, p) = self.leaf_for(x);
        leaf_probability(n, p)
    }
}

impl Classifier for DecisionTree {
    /// Majority class; ties go to non-fault.
    fn predict(&self, x: &FeatureVector) -> bool {
        let (n, p) = self.leaf_for(x);
        p > n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturesPerSplit {
    All,
    Sqrt,
    Count(usize),
}

impl FeaturesPerSplit {
    pub fn resolve(self, n_features: usize) -> usize {
        match self {
            FeaturesPerSplit::All => n_features,
            FeaturesPerSplit::Sqrt => (n_features as f64).sqrt().ceil() as usize,
            FeaturesPerSplit::Count(c) => c.min(n_features),
        }
        .max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub features_per_split: FeaturesPerSplit,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_leaf: 1,
            features_per_split: FeaturesPerSplit::All,
        }
    }
}

fn check_rows(rows: &[LabeledRow]) -> Result<usize, ClassifierError> {
    let first = rows.first().ok_or(ClassifierError::Empty)?;
    let n = first.features.len();
    for (row, r) in rows.iter().enumerate() {
        if r.features.len() != n {
            return Err(ClassifierError::Dimension {
                row,
                expected: n,
                got: r.features.len(),
            });
        }
    }
    Ok(n)
}

struct TreeBuilder<'a> {
    rows: &'a [LabeledRow],
    params: &'a TreeParams,
    mtry: usize,
    n_features: usize,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, idx: &[usize], depth: usize, rng: &mut StageRng) -> usize {
        let positives = idx.iter().filter(|&&i| self.rows[i].fault).count();
        let negatives = idx.len() - positives;
        let me = self.nodes.len();
        self.nodes.push(Node::leaf(negatives, positives));

        let pure = positives == 0 || negatives == 0;
        let depth_hit = self.params.max_depth.is_some_and(|m| depth >= m);
        if pure || depth_hit || idx.len() < 2 * self.params.min_leaf.max(1) {
            return me;
        }
        let Some(feature) = self.best_split(idx, negatives, positives, rng) else {
            return me;
        };
        let (present, absent): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.rows[i].features.get(feature));
        let absent_node = self.build(&absent, depth + 1, rng);
        let present_node = self.build(&present, depth + 1, rng);
        self.nodes[me] = Node::Split {
            feature,
            absent: absent_node,
            present: present_node,
        };
        me
    }

    /// Best Gini split among a random subset of `mtry` non-constant
    /// features (all features when `mtry == n`). Ties go to the lowest
    /// feature index.
    fn best_split(&self, idx: &[usize], negatives: usize, positives: usize, rng: &mut StageRng) -> Option<usize> {
        let parent = gini(negatives, positives);
        let total = idx.len() as f64;
        let mut order: Vec<usize> = (0..self.n_features).collect();
        let sampling = self.mtry < self.n_features;
        let mut best: Option<(f64, usize)> = None;
        let mut evaluated = 0;
        for k in 0..self.n_features {
            if sampling {
                let j = rng.gen_range(k..self.n_features);
                order.swap(k, j);
            }
            let f = order[k];
            let (mut on, mut on_pos) = (0usize, 0usize);
            for &i in idx {
                if self.rows[i].features.get(f) {
                    on += 1;
                    on_pos += self.rows[i].fault as usize;
                }
            }
            if on == 0 || on == idx.len() {
                continue;
            }
            evaluated += 1;
            let off = idx.len() - on;
            let off_pos = positives - on_pos;
            if on >= self.params.min_leaf && off >= self.params.min_leaf {
                let weighted = (on as f64 / total) * gini(on - on_pos, on_pos)
                    + (off as f64 / total) * gini(off - off_pos, off_pos);
                let gain = parent - weighted;
                let better = match best {
                    None => true,
                    Some((g, bf)) => gain > g || (gain == g && f < bf),
                };
                if better {
                    best = Some((gain, f));
                }
            }
            if sampling && evaluated >= self.mtry && best.is_some() {
                break;
            }
        }
        best.map(|(_, f)| f)
    }
}

pub fn train_tree(rows: &[LabeledRow], params: &TreeParams, rng: &mut StageRng) -> Result<DecisionTree, ClassifierError> {
    let n_features = check_rows(rows)?;
    let idx: Vec<usize> = (0..rows.len()).collect();
    train_tree_on(rows, &idx, n_features, params, rng)
}

fn train_tree_on(
    rows: &[LabeledRow],
    idx: &[usize],
    n_features: usize,
    params: &TreeParams,
    rng: &mut StageRng,
) -> Result<DecisionTree, ClassifierError> {
    if params.min_leaf == 0 {
        return Err(ClassifierError::Config("min_leaf must be at least 1".into()));
    }
    let mut builder = TreeBuilder {
        rows,
        params,
        mtry: params.features_per_split.resolve(n_features),
        n_features,
        nodes: Vec::new(),
    };
    builder.build(idx, 0, rng);
    Ok(DecisionTree {
        n_features,
        nodes: builder.nodes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub trees: usize,
    pub features_per_split: FeaturesPerSplit,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            trees: 100,
            features_per_split: FeaturesPerSplit::Sqrt,
            max_depth: None,
            min_leaf: 1,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultForest {
    n_features: usize,
    features_per_split: usize,
    tree_seeds: Vec<u64>,
    trees: Vec<DecisionTree>,
}

impl FaultForest {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn from_trees(trees: Vec<DecisionTree>) -> Result<Self, ClassifierError> {
        let n = trees.first().ok_or(ClassifierError::Empty)?.n_features;
        if trees.iter().any(|t| t.n_features != n) {
            return Err(ClassifierError::Corrupt("trees disagree on feature count".into()));
        }
        Ok(FaultForest {
            n_features: n,
            features_per_split: n,
            tree_seeds: vec![0; trees.len()],
            trees,
        })
    }

    pub fn predict_fault_probability(&self, x: &FeatureVector) -> Result<f64, ClassifierError> {
        if x.len() != self.n_features {
            return Err(ClassifierError::Dimension {
                row: 0,
                expected: self.n_features,
                got: x.len(),
            });
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict_proba(x)).sum();
        Ok(sum / self.trees.len() as f64)
    }
}

impl Classifier for FaultForest {
    fn predict(&self, x: &FeatureVector) -> bool {
        self.predict_fault_probability(x).map(|p| p > 0.5).unwrap_or(false)
    }
}

pub fn train_forest(rows: &[LabeledRow], config: &ForestConfig) -> Result<FaultForest, ClassifierError> {
    let n_features = check_rows(rows)?;
    if config.trees == 0 {
        return Err(ClassifierError::Config("forest needs at least one tree".into()));
    }
    let params = TreeParams {
        max_depth: config.max_depth,
        min_leaf: config.min_leaf,
        features_per_split: config.features_per_split,
    };
    let tree_seeds: Vec<u64> = (0..config.trees)
        .map(|i| sub_seed(config.seed, &format!("tree-{i}")))
        .collect();
    let trees = tree_seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = seeded(seed);
            let idx: Vec<usize> = if config.bootstrap {
                (0..rows.len()).map(|_| rng.gen_range(0..rows.len())).collect()
            } else {
                (0..rows.len()).collect()
            };
            train_tree_on(rows, &idx, n_features, &params, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FaultForest {
        n_features,
        features_per_split: params.features_per_split.resolve(n_features),
        tree_seeds,
        trees,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Metrics on the fault class. Undefined ratios (no predicted or no actual
/// faults) are reported as 0.
pub fn metrics(predicted: &[bool], actual: &[bool]) -> Metrics {
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p, a) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Metrics {
        accuracy: ratio(tp + tn, tp + tn + fp + fn_),
        precision,
        recall,
        f1,
    }
}

pub fn evaluate<C: Classifier + ?Sized>(model: &C, rows: &[LabeledRow]) -> Metrics {
    let predicted: Vec<bool> = rows.iter().map(|r| model.predict(&r.features)).collect();
    let actual: Vec<bool> = rows.iter().map(|r| r.fault).collect();
    metrics(&predicted, &actual)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KFoldReport {
    pub folds: Vec<Metrics>,
    pub median: Metrics,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
pub fn stratified_folds(rows: &[LabeledRow], k: usize, rng: &mut StageRng) -> Result<Vec<Vec<usize>>, ClassifierError> {
    if k < 2 || rows.len() < k {
        return Err(ClassifierError::TooFewRows { rows: rows.len(), folds: k });
    }
    let mut pos: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].fault).collect();
    let mut neg: Vec<usize> = (0..rows.len()).filter(|&i| !rows[i].fault).collect();
    pos.shuffle(rng);
    neg.shuffle(rng);
    let mut folds = vec![Vec::new(); k];
    for (slot, i) in pos.into_iter().chain(neg).enumerate() {
        folds[slot % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

pub fn kfold_metrics<F, C>(rows: &[LabeledRow], k: usize, mut learner: F, rng: &mut StageRng) -> Result<KFoldReport, ClassifierError>
where
    F: FnMut(&[LabeledRow], &mut StageRng) -> Result<C, ClassifierError>,
    C: Classifier,
{
    check_rows(rows)?;
    let folds = stratified_folds(rows, k, rng)?;
    let mut out = Vec::with_capacity(k);
    for held in &folds {
        let mut is_held = vec![false; rows.len()];
        held.iter().for_each(|&i| is_held[i] = true);
        let train: Vec<LabeledRow> = (0..rows.len()).filter(|&i| !is_held[i]).map(|i| rows[i].clone()).collect();
        let test: Vec<LabeledRow> = held.iter().map(|&i| rows[i].clone()).collect();
        let model = learner(&train, rng)?;
        out.push(evaluate(&model, &test));
    }
    let med = |f: fn(&Metrics) -> f64| median(out.iter().map(f).collect());
    let median = Metrics {
        accuracy: med(|m| m.accuracy),
        precision: med(|m| m.precision),
        recall: med(|m| m.recall),
        f1: med(|m| m.f1),
    };
    Ok(KFoldReport { folds: out, median })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Literal {
    pub feature: usize,
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub literals: Vec<Literal>,
    pub predicts_fault: bool,
    pub support: usize,
    pub confidence: f64,
}

impl Rule {
    pub fn matches(&self, x: &FeatureVector) -> bool {
        self.literals.iter().all(|l| x.get(l.feature) == l.present)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let body: Vec<String> = self
            .literals
            .iter()
            .map(|l| {
                if l.present {
                    format!("S{}", l.feature)
                } else {
                    format!("not(S{})", l.feature)
                }
            })
            .collect();
        let head = if body.is_empty() { "true".to_string() } else { body.join(" and ") };
        write!(
            f,
            "{head} -> {} (support {}, confidence {:.3})",
            if self.predicts_fault { "fault" } else { "no fault" },
            self.support,
            self.confidence
        )
    }
}

/// One rule per leaf, in preorder.
pub fn leaf_rules(tree: &DecisionTree) -> Vec<Rule> {
    fn walk(nodes: &[Node], i: usize, path: &mut Vec<Literal>, out: &mut Vec<Rule>) {
        match nodes[i] {
            Node::Leaf { negatives, positives } => out.push(Rule {
                literals: path.clone(),
                predicts_fault: positives > negatives,
                support: negatives + positives,
                confidence: leaf_probability(negatives, positives),
            }),
            Node::Split { feature, absent, present } => {
                path.push(Literal { feature, present: false });
                walk(nodes, absent, path, out);
                path.pop();
                path.push(Literal { feature, present: true });
                walk(nodes, present, path, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(&tree.nodes, 0, &mut Vec::new(), &mut out);
    out
}

/// Rules for the fault-predicting leaves; confidence is the leaf's fault fraction.
pub fn extract_rules(tree: &DecisionTree) -> Vec<Rule> {
    leaf_rules(tree).into_iter().filter(|r| r.predicts_fault).collect()
}

/// Fault iff any fault rule fires.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet(pub Vec<Rule>);

impl Classifier for RuleSet {
    fn predict(&self, x: &FeatureVector) -> bool {
        self.0.iter().any(|r| r.predicts_fault && r.matches(x))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    provenance: Provenance,
    forest: FaultForest,
}

pub fn save_forest(path: &Path, forest: &FaultForest, provenance: &Provenance) -> Result<(), ClassifierError> {
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        provenance: provenance.clone(),
        forest: forest.clone(),
    };
    let text = serde_json::to_string(&file).map_err(|e| ClassifierError::Corrupt(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_forest(path: &Path) -> Result<(FaultForest, Provenance), ClassifierError> {
    let text = fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| ClassifierError::Corrupt(e.to_string()))?;
    if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
        return Err(ClassifierError::Corrupt(format!("unexpected format {} v{}", file.format, file.version)));
    }
    for t in &file.forest.trees {
        DecisionTree::from_nodes(t.n_features, t.nodes.clone())?;
    }
    Ok((file.forest, file.provenance))
}
