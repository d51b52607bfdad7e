//! The flow-based classifier: a multiclass gradient-boosted ensemble of
//! regression trees with a softmax readout, trained with second-order
//! (Newton) boosting and exact greedy splits.
//!
//! Two growth presets are exposed: the default depth-capped configuration
//! (100 rounds, learning rate 0.3, depth 6) and `leafwise` (best-first growth
//! capped at 31 leaves, unlimited depth).

use std::fmt::Write as _;
use std::path::Path;

use crate::flow_features::{FeatureVector, DIMENSION, SCHEMA_NAME};
use crate::traffic_model::{CoSLabel, N_COS};
use crate::{par, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: Option<usize>,
    pub max_leaf_nodes: Option<usize>,
    pub min_child_weight: f64,
    pub l2_reg: f64,
    pub n_classes: usize,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            n_rounds: 100,
            learning_rate: 0.3,
            max_depth: Some(6),
            max_leaf_nodes: None,
            min_child_weight: 1.0,
            l2_reg: 1.0,
            n_classes: N_COS,
        }
    }
}

impl GbdtConfig {
    /// Best-first growth with a 31-leaf cap and no depth cap.
    pub fn leafwise() -> Self {
        GbdtConfig {
            max_depth: None,
            max_leaf_nodes: Some(31),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rounds < 1 {
            return Err(Error::InvalidArgument("n_rounds must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidArgument(
                "learning_rate must be in (0,1]".into(),
            ));
        }
        if self.max_depth == Some(0) {
            return Err(Error::InvalidArgument("max_depth must be >= 1".into()));
        }
        if self.min_child_weight < 0.0 || self.l2_reg < 0.0 {
            return Err(Error::InvalidArgument(
                "min_child_weight and l2_reg must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// A regression tree storing raw leaf values; the learning rate is applied at
/// prediction time.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    pub config: GbdtConfig,
    pub schema_name: String,
    pub feature_dim: usize,
    pub base_score: f64,
    /// `n_rounds * n_classes` trees, class-major within each round.
    pub trees: Vec<RegressionTree>,
}

/// Softmax gradient and diagonal hessian of the multiclass log-loss, computed
/// with max-subtraction for stability.
pub fn softmax_gradient_hessian(scores: &[f64], true_class: usize) -> (Vec<f64>, Vec<f64>) {
    let p = softmax(scores);
    let g = p
        .iter()
        .enumerate()
        .map(|(k, &pk)| pk - if k == true_class { 1.0 } else { 0.0 })
        .collect();
    let h = p.iter().map(|&pk| pk * (1.0 - pk)).collect();
    (g, h)
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Exact greedy split search over all (feature, midpoint) candidates.
/// Maximizes `0.5 * [G_L^2/(H_L+reg) + G_R^2/(H_R+reg) - G^2/(H+reg)]`;
/// returns `None` when no candidate has positive gain or every candidate
/// violates the per-child hessian floor. Ties break toward the lowest feature
/// index, then the lowest threshold.
pub fn best_split(
    indices: &[usize],
    columns: &[Vec<f64>],
    g: &[f64],
    h: &[f64],
    config: &GbdtConfig,
) -> Option<SplitCandidate> {
    if indices.len() < 2 {
        return None;
    }
    let total_g: f64 = indices.iter().map(|&i| g[i]).sum();
    let total_h: f64 = indices.iter().map(|&i| h[i]).sum();
    let reg = config.l2_reg;
    let parent = total_g * total_g / (total_h + reg);

    let per_feature = par::map_indices(columns.len(), |f| {
        let col = &columns[f];
        let mut order: Vec<usize> = indices.to_vec();
        order.sort_by(|&a, &b| col[a].partial_cmp(&col[b]).unwrap_or(std::cmp::Ordering::Equal));
        let mut gl = 0.0;
        let mut hl = 0.0;
        let mut best: Option<SplitCandidate> = None;
        for w in 0..order.len() - 1 {
            let i = order[w];
            gl += g[i];
            hl += h[i];
            let (v, next) = (col[i], col[order[w + 1]]);
            if next <= v {
                continue;
            }
            let hr = total_h - hl;
            if hl < config.min_child_weight || hr < config.min_child_weight {
                continue;
            }
            let gr = total_g - gl;
            let gain = 0.5 * (gl * gl / (hl + reg) + gr * gr / (hr + reg) - parent);
            let threshold = 0.5 * (v + next);
            let better = match best {
                None => true,
                Some(b) => gain > b.gain || (gain == b.gain && threshold < b.threshold),
            };
            if better {
                best = Some(SplitCandidate {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
        best
    });

    let mut winner: Option<SplitCandidate> = None;
    for cand in per_feature.into_iter().flatten() {
        let better = match winner {
            None => true,
            Some(w) => {
                cand.gain > w.gain
                    || (cand.gain == w.gain
                        && (cand.feature, cand.threshold) < (w.feature, w.threshold))
            }
        };
        if better {
            winner = Some(cand);
        }
    }
    winner.filter(|w| w.gain > 1e-12)
}

fn leaf_value(indices: &[usize], g: &[f64], h: &[f64], reg: f64) -> f64 {
    let gs: f64 = indices.iter().map(|&i| g[i]).sum();
    let hs: f64 = indices.iter().map(|&i| h[i]).sum();
    -gs / (hs + reg)
}

/// Best-first tree growth. Without a leaf cap the resulting tree is identical
/// to depth-first greedy growth; with a cap the highest-gain frontier node is
/// expanded until the budget is spent.
fn build_tree(indices: Vec<usize>, columns: &[Vec<f64>], g: &[f64], h: &[f64], config: &GbdtConfig) -> RegressionTree {
    struct Frontier {
        node: usize,
        depth: usize,
        indices: Vec<usize>,
        split: SplitCandidate,
        seq: usize,
    }

    let mut nodes = vec![TreeNode::Leaf {
        value: leaf_value(&indices, g, h, config.l2_reg),
    }];
    let mut frontier: Vec<Frontier> = Vec::new();
    let mut seq = 0usize;
    let mut leaves = 1usize;

    let consider = |frontier: &mut Vec<Frontier>,
                    seq: &mut usize,
                    node: usize,
                    depth: usize,
                    idx: Vec<usize>| {
        if let Some(d) = config.max_depth {
            if depth >= d {
                return;
            }
        }
        if idx.len() < 2 {
            return;
        }
        if let Some(split) = best_split(&idx, columns, g, h, config) {
            frontier.push(Frontier {
                node,
                depth,
                indices: idx,
                split,
                seq: *seq,
            });
            *seq += 1;
        }
    };

    consider(&mut frontier, &mut seq, 0, 0, indices);

    while !frontier.is_empty() {
        if let Some(cap) = config.max_leaf_nodes {
            if leaves >= cap {
                break;
            }
        }
        // highest gain wins; earliest insertion breaks ties
        let mut bi = 0;
        for i in 1..frontier.len() {
            let (a, b) = (&frontier[i], &frontier[bi]);
            if a.split.gain > b.split.gain || (a.split.gain == b.split.gain && a.seq < b.seq) {
                bi = i;
            }
        }
        let item = frontier.swap_remove(bi);
        let (mut li, mut ri) = (Vec::new(), Vec::new());
        for &i in &item.indices {
            if columns[item.split.feature][i] <= item.split.threshold {
                li.push(i);
            } else {
                ri.push(i);
            }
        }
        let left = nodes.len();
        nodes.push(TreeNode::Leaf {
            value: leaf_value(&li, g, h, config.l2_reg),
        });
        let right = nodes.len();
        nodes.push(TreeNode::Leaf {
            value: leaf_value(&ri, g, h, config.l2_reg),
        });
        nodes[item.node] = TreeNode::Split {
            feature: item.split.feature,
            threshold: item.split.threshold,
            left,
            right,
        };
        leaves += 1;
        consider(&mut frontier, &mut seq, left, item.depth + 1, li);
        consider(&mut frontier, &mut seq, right, item.depth + 1, ri);
    }

    RegressionTree { nodes }
}

/// A trained model plus its per-round training log-loss trace.
#[derive(Debug, Clone)]
pub struct TrainedGbdt {
    pub model: GbdtModel,
    pub train_log_loss: Vec<f64>,
}

pub fn train_gbdt(
    features: &[FeatureVector],
    labels: &[CoSLabel],
    config: &GbdtConfig,
    _seed: u64,
) -> Result<TrainedGbdt> {
    config.validate()?;
    let n = features.len();
    let k_classes = config.n_classes;
    if n != labels.len() || n < k_classes {
        return Err(Error::InvalidArgument(format!(
            "need |X| == |y| >= {k_classes}, got {n} and {}",
            labels.len()
        )));
    }
    for c in 0..k_classes {
        if !labels.iter().any(|l| l.encode() == c) {
            return Err(Error::EmptyClass(CoSLabel::decode(c)?.name().to_string()));
        }
    }
    let dim = features[0].values.len();
    for fv in features {
        if fv.values.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: fv.values.len(),
            });
        }
        if fv.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "non-finite feature value in training data".into(),
            ));
        }
    }

    // column-major copy for cache-friendly split scans
    let columns: Vec<Vec<f64>> = (0..dim)
        .map(|f| features.iter().map(|fv| fv.values[f]).collect())
        .collect();
    let y: Vec<usize> = labels.iter().map(|l| l.encode()).collect();

    let base_score = 0.0;
    let mut scores = vec![vec![base_score; k_classes]; n];
    let mut trees = Vec::with_capacity(config.n_rounds * k_classes);
    let mut train_log_loss = Vec::with_capacity(config.n_rounds);

    for _round in 0..config.n_rounds {
        let grads: Vec<(Vec<f64>, Vec<f64>)> =
            par::map_indices(n, |i| softmax_gradient_hessian(&scores[i], y[i]));

        let round_trees: Vec<RegressionTree> = par::map_indices(k_classes, |k| {
            let g: Vec<f64> = grads.iter().map(|(g, _)| g[k]).collect();
            let h: Vec<f64> = grads.iter().map(|(_, h)| h[k]).collect();
            build_tree((0..n).collect(), &columns, &g, &h, config)
        });

        for (k, tree) in round_trees.iter().enumerate() {
            for (i, s) in scores.iter_mut().enumerate() {
                s[k] += config.learning_rate * tree.predict(&features[i].values);
            }
        }
        trees.extend(round_trees);

        let loss: f64 = scores
            .iter()
            .zip(&y)
            .map(|(s, &c)| -softmax(s)[c].max(1e-300).ln())
            .sum::<f64>()
            / n as f64;
        train_log_loss.push(loss);
    }

    Ok(TrainedGbdt {
        model: GbdtModel {
            config: config.clone(),
            schema_name: SCHEMA_NAME.to_string(),
            feature_dim: dim,
            base_score,
            trees,
        },
        train_log_loss,
    })
}

pub fn predict_scores(model: &GbdtModel, x: &FeatureVector) -> Result<Vec<f64>> {
    if x.values.len() != model.feature_dim {
        return Err(Error::DimensionMismatch {
            expected: model.feature_dim,
            got: x.values.len(),
        });
    }
    let mut scores = vec![model.base_score; model.config.n_classes];
    for (t, tree) in model.trees.iter().enumerate() {
        let k = t % model.config.n_classes;
        scores[k] += model.config.learning_rate * tree.predict(&x.values);
    }
    Ok(scores)
}

/// Argmax of the class scores; exact ties break toward the lowest encoding.
pub fn predict_label(model: &GbdtModel, x: &FeatureVector) -> Result<CoSLabel> {
    let scores = predict_scores(model, x)?;
    CoSLabel::decode(argmax(&scores))
}

pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn predict_labels(model: &GbdtModel, xs: &[FeatureVector]) -> Result<Vec<CoSLabel>> {
    xs.iter().map(|x| predict_label(model, x)).collect()
}

// ---------------------------------------------------------------------------
// persistence: versioned line-oriented text container
// ---------------------------------------------------------------------------

fn fmt_opt(v: Option<usize>) -> String {
    v.map_or_else(|| "none".to_string(), |d| d.to_string())
}

fn parse_opt(s: &str) -> Result<Option<usize>> {
    if s == "none" {
        Ok(None)
    } else {
        s.parse()
            .map(Some)
            .map_err(|_| Error::ModelFormat(format!("bad integer {s:?}")))
    }
}

fn write_tree(out: &mut String, tree: &RegressionTree) {
    writeln!(out, "nodes {}", tree.nodes.len()).unwrap();
    for n in &tree.nodes {
        match n {
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => writeln!(out, "split {feature} {threshold:?} {left} {right}").unwrap(),
            TreeNode::Leaf { value } => writeln!(out, "leaf {value:?}").unwrap(),
        }
    }
}

pub(crate) fn parse_tree<'a, I: Iterator<Item = &'a str>>(lines: &mut I) -> Result<RegressionTree> {
    let hdr = lines
        .next()
        .ok_or_else(|| Error::ModelFormat("missing tree header".into()))?;
    let count: usize = hdr
        .strip_prefix("nodes ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::ModelFormat(format!("bad tree header {hdr:?}")))?;
    let mut nodes = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| Error::ModelFormat("truncated tree".into()))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        let node = match parts.as_slice() {
            ["split", f, t, l, r] => TreeNode::Split {
                feature: f
                    .parse()
                    .map_err(|_| Error::ModelFormat(format!("bad node {line:?}")))?,
                threshold: t
                    .parse()
                    .map_err(|_| Error::ModelFormat(format!("bad node {line:?}")))?,
                left: l
                    .parse()
                    .map_err(|_| Error::ModelFormat(format!("bad node {line:?}")))?,
                right: r
                    .parse()
                    .map_err(|_| Error::ModelFormat(format!("bad node {line:?}")))?,
            },
            ["leaf", v] => TreeNode::Leaf {
                value: v
                    .parse()
                    .map_err(|_| Error::ModelFormat(format!("bad node {line:?}")))?,
            },
            _ => return Err(Error::ModelFormat(format!("bad node line {line:?}"))),
        };
        nodes.push(node);
    }
    Ok(RegressionTree { nodes })
}

pub fn model_to_string(model: &GbdtModel) -> String {
    let mut out = String::new();
    out.push_str("fphtc-model v1\n");
    out.push_str("kind gbdt\n");
    writeln!(out, "schema {} {}", model.schema_name, model.feature_dim).unwrap();
    let c = &model.config;
    writeln!(out, "n_rounds {}", c.n_rounds).unwrap();
    writeln!(out, "learning_rate {:?}", c.learning_rate).unwrap();
    writeln!(out, "max_depth {}", fmt_opt(c.max_depth)).unwrap();
    writeln!(out, "max_leaf_nodes {}", fmt_opt(c.max_leaf_nodes)).unwrap();
    writeln!(out, "min_child_weight {:?}", c.min_child_weight).unwrap();
    writeln!(out, "l2_reg {:?}", c.l2_reg).unwrap();
    writeln!(out, "n_classes {}", c.n_classes).unwrap();
    writeln!(out, "base_score {:?}", model.base_score).unwrap();
    writeln!(out, "trees {}", model.trees.len()).unwrap();
    for t in &model.trees {
        write_tree(&mut out, t);
    }
    out.push_str("end\n");
    out
}

pub fn model_from_string(text: &str) -> Result<GbdtModel> {
    let mut lines = text.lines();
    let mut expect = |want: &str| -> Result<()> {
        let got = lines
            .next()
            .ok_or_else(|| Error::ModelFormat("unexpected end of file".into()))?;
        if got != want {
            return Err(Error::ModelFormat(format!(
                "expected {want:?}, got {got:?}"
            )));
        }
        Ok(())
    };
    expect("fphtc-model v1")?;
    expect("kind gbdt")?;

    let mut field = |name: &str| -> Result<String> {
        let line = lines
            .next()
            .ok_or_else(|| Error::ModelFormat("unexpected end of file".into()))?;
        line.strip_prefix(name)
            .and_then(|s| s.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| Error::ModelFormat(format!("expected field {name:?}, got {line:?}")))
    };
    let schema_line = field("schema")?;
    let (schema_name, dim) = schema_line
        .rsplit_once(' ')
        .ok_or_else(|| Error::ModelFormat("bad schema line".into()))?;
    let feature_dim: usize = dim
        .parse()
        .map_err(|_| Error::ModelFormat("bad schema dimension".into()))?;
    let bad = |f: &str| Error::ModelFormat(format!("bad field {f}"));
    let config = GbdtConfig {
        n_rounds: field("n_rounds")?.parse().map_err(|_| bad("n_rounds"))?,
        learning_rate: field("learning_rate")?
            .parse()
            .map_err(|_| bad("learning_rate"))?,
        max_depth: parse_opt(&field("max_depth")?)?,
        max_leaf_nodes: parse_opt(&field("max_leaf_nodes")?)?,
        min_child_weight: field("min_child_weight")?
            .parse()
            .map_err(|_| bad("min_child_weight"))?,
        l2_reg: field("l2_reg")?.parse().map_err(|_| bad("l2_reg"))?,
        n_classes: field("n_classes")?.parse().map_err(|_| bad("n_classes"))?,
    };
    let base_score: f64 = field("base_score")?.parse().map_err(|_| bad("base_score"))?;
    let n_trees: usize = field("trees")?.parse().map_err(|_| bad("trees"))?;
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        trees.push(parse_tree(&mut lines)?);
    }
    if lines.next() != Some("end") {
        return Err(Error::ModelFormat("missing end marker".into()));
    }
    Ok(GbdtModel {
        config,
        schema_name: schema_name.to_string(),
        feature_dim,
        base_score,
        trees,
    })
}

pub fn save_model(model: &GbdtModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_string(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<GbdtModel> {
    model_from_string(&std::fs::read_to_string(path)?)
}

// silence unused warning for the DIMENSION re-export path
const _: () = assert!(DIMENSION == 44);
