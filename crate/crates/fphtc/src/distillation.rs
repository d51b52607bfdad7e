//! Experiment orchestration: the hybrid pipeline (DPI-label a fraction,
//! train the flow-based teacher, teacher-label the full corpus, train the
//! packet-based student) and the regular packet-based baseline, plus the
//! evaluation metrics shared by both.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::flow_features::{extract_all, extract_features};
use crate::ingestion::dpi_label;
use crate::policy::{
    build_packet_dataset, classify, train_cart, CartConfig, DecisionTree, PacketRecord,
};
use crate::teacher::{predict_label, train_gbdt, GbdtConfig, GbdtModel};
use crate::traffic_model::{
    balance_dataset, cos_of_app, CoSLabel, Flow, FlowDataset, LabelKind, N_COS,
};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Student corpus size, flows.
    pub n: usize,
    /// DPI-labeled fraction in (0,1].
    pub lambda: f64,
    pub teacher_config: GbdtConfig,
    pub student_config: CartConfig,
    /// Cost units per DPI-labeled flow.
    pub c_dpi: f64,
    pub seed: u64,
    /// Keep DPI truth for the labeled fraction instead of overwriting with
    /// teacher predictions. Default off: the teacher relabels all flows.
    pub keep_dpi_truth: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be in (0,1], got {}",
                self.lambda
            )));
        }
        if self.dpi_flow_count() < 1 {
            return Err(Error::InvalidArgument(
                "round(n * lambda) must be >= 1".into(),
            ));
        }
        if self.c_dpi < 0.0 {
            return Err(Error::InvalidArgument("c_dpi must be >= 0".into()));
        }
        self.teacher_config.validate()
    }

    pub fn dpi_flow_count(&self) -> usize {
        (self.n as f64 * self.lambda).round() as usize
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub pipeline: String,
    pub teacher_balanced_acc: Option<f64>,
    pub student_balanced_acc: f64,
    pub flows_labeled: usize,
    pub dpi_cost: f64,
    pub rule_count: usize,
    /// Per-class student recalls on the packet test set, by CoS encoding.
    pub per_class_recalls: [Option<f64>; N_COS],
    /// Test 4-tuples excluded because they collided with training tuples.
    pub test_collisions: usize,
}

/// A finished run: the report plus the trained artifacts.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: ExperimentReport,
    pub student_tree: DecisionTree,
    pub teacher_model: Option<GbdtModel>,
}

/// Mean over classes (present in the truth) of per-class recall.
pub fn balanced_accuracy(pred: &[CoSLabel], truth: &[CoSLabel]) -> Result<f64> {
    let recalls = per_class_recalls(pred, truth)?;
    let present: Vec<f64> = recalls.iter().flatten().copied().collect();
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

pub fn per_class_recalls(
    pred: &[CoSLabel],
    truth: &[CoSLabel],
) -> Result<[Option<f64>; N_COS]> {
    if pred.len() != truth.len() || truth.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "prediction/truth lengths must match and be nonempty ({} vs {})",
            pred.len(),
            truth.len()
        )));
    }
    let mut correct = [0usize; N_COS];
    let mut total = [0usize; N_COS];
    for (p, t) in pred.iter().zip(truth) {
        total[t.encode()] += 1;
        if p == t {
            correct[t.encode()] += 1;
        }
    }
    let mut out = [None; N_COS];
    for k in 0..N_COS {
        if total[k] > 0 {
            out[k] = Some(correct[k] as f64 / total[k] as f64);
        }
    }
    Ok(out)
}

/// Student-t confidence interval around the sample mean, clamped to [0,1].
pub fn confidence_interval(scores: &[f64], level: f64) -> Result<(f64, f64)> {
    if scores.len() < 2 {
        return Err(Error::InvalidArgument(
            "confidence interval needs at least 2 scores".into(),
        ));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument("level must be in (0,1)".into()));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    if se == 0.0 {
        return Ok((mean, mean));
    }
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?
        .inverse_cdf(0.5 + level / 2.0);
    Ok(((mean - t * se).max(0.0), (mean + t * se).min(1.0)))
}

/// Seeded sample of `n` distinct flows from the corpus.
fn draw_flows(corpus: &[Flow], n: usize, seed: u64) -> Result<Vec<Flow>> {
    if corpus.len() < n {
        return Err(Error::InvalidArgument(format!(
            "corpus has {} flows, need {n}",
            corpus.len()
        )));
    }
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = crate::rng::seeded(seed, 0xd7a3);
    idx.shuffle(&mut rng);
    Ok(idx[..n].iter().map(|&i| corpus[i].clone()).collect())
}

/// Upsample packet records with replacement so every present class reaches
/// the majority count.
fn balance_records(records: &[PacketRecord], seed: u64) -> Vec<PacketRecord> {
    let mut by_class: [Vec<usize>; N_COS] = Default::default();
    for (i, r) in records.iter().enumerate() {
        by_class[r.label.encode()].push(i);
    }
    let target = by_class.iter().map(|v| v.len()).max().unwrap_or(0);
    let mut rng = crate::rng::seeded(seed, 0xba1a);
    let mut out = Vec::new();
    for idxs in &by_class {
        if idxs.is_empty() {
            continue;
        }
        for &i in idxs {
            out.push(records[i]);
        }
        for _ in idxs.len()..target {
            out.push(records[idxs[rng.random_range(0..idxs.len())]]);
        }
    }
    out
}

/// Score a student tree on the unique packets of ground-truth test flows,
/// excluding 4-tuples that appeared in the training records.
fn evaluate_student(
    tree: &DecisionTree,
    train_records: &[PacketRecord],
    test: &[Flow],
) -> Result<(f64, [Option<f64>; N_COS], usize)> {
    let train_tuples: HashSet<_> = train_records.iter().map(|r| r.features).collect();
    let test_ds = build_packet_dataset(test, LabelKind::Truth)?;
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    let mut collisions = 0usize;
    for r in &test_ds.records {
        if train_tuples.contains(&r.features) {
            collisions += 1;
            continue;
        }
        pred.push(classify(tree, &r.features));
        truth.push(r.label);
    }
    let acc = balanced_accuracy(&pred, &truth)?;
    let recalls = per_class_recalls(&pred, &truth)?;
    Ok((acc, recalls, collisions))
}

fn evaluate_teacher(model: &GbdtModel, test: &[Flow]) -> Result<f64> {
    let features = extract_all(test);
    let truth: Vec<CoSLabel> = test
        .iter()
        .map(|f| f.true_app.map(cos_of_app).ok_or(Error::MissingGroundTruth))
        .collect::<Result<_>>()?;
    let pred: Vec<CoSLabel> = features
        .iter()
        .map(|fv| predict_label(model, fv))
        .collect::<Result<_>>()?;
    balanced_accuracy(&pred, &truth)
}

/// Train the teacher on the DPI-labeled fraction of the drawn corpus.
fn train_teacher_on(dpi_flows: &[Flow], cfg: &ExperimentConfig) -> Result<GbdtModel> {
    let ds = FlowDataset::new(dpi_flows.to_vec(), LabelKind::Truth)?;
    let balanced = balance_dataset(&ds, cfg.seed)?;
    let features = extract_all(&balanced.flows);
    let labels = balanced.labels();
    Ok(train_gbdt(&features, &labels, &cfg.teacher_config, cfg.seed)?.model)
}

/// The hybrid pipeline: DPI-label `round(n*lambda)` flows, train the teacher
/// on them, teacher-label all `n` flows, then train the student CART on the
/// resulting packet dataset. Deterministic per seed.
pub fn run_fphtc(corpus: &[Flow], cfg: &ExperimentConfig, test: &[Flow]) -> Result<RunOutput> {
    cfg.validate()?;
    let mut drawn = draw_flows(corpus, cfg.n, cfg.seed)?;
    let n_dpi = cfg.dpi_flow_count();
    for f in &drawn[..n_dpi] {
        dpi_label(f)?; // cost accounted below
    }

    let teacher = train_teacher_on(&drawn[..n_dpi], cfg)?;

    for (i, flow) in drawn.iter_mut().enumerate() {
        let label = if cfg.keep_dpi_truth && i < n_dpi {
            cos_of_app(flow.true_app.ok_or(Error::MissingGroundTruth)?)
        } else {
            predict_label(&teacher, &extract_features(flow))?
        };
        flow.teacher_label = Some(label);
    }

    let packet_ds = build_packet_dataset(&drawn, LabelKind::TeacherPredicted)?;
    let train_records = balance_records(&packet_ds.records, cfg.seed);
    let tree = train_cart(&train_records, &cfg.student_config, cfg.seed)?;

    let (student_acc, recalls, collisions) = evaluate_student(&tree, &packet_ds.records, test)?;
    let teacher_acc = evaluate_teacher(&teacher, test)?;

    Ok(RunOutput {
        report: ExperimentReport {
            pipeline: "fphtc".into(),
            teacher_balanced_acc: Some(teacher_acc),
            student_balanced_acc: student_acc,
            flows_labeled: n_dpi,
            dpi_cost: n_dpi as f64 * cfg.c_dpi,
            rule_count: tree.leaf_count(),
            per_class_recalls: recalls,
            test_collisions: collisions,
        },
        student_tree: tree,
        teacher_model: Some(teacher),
    })
}

/// The regular packet-based baseline: the CART trains directly on the packets
/// of the DPI-labeled flows, with true labels and no teacher.
pub fn run_regular_baseline(
    corpus: &[Flow],
    cfg: &ExperimentConfig,
    test: &[Flow],
) -> Result<RunOutput> {
    cfg.validate()?;
    let drawn = draw_flows(corpus, cfg.n, cfg.seed)?;
    let n_dpi = cfg.dpi_flow_count();
    for f in &drawn[..n_dpi] {
        dpi_label(f)?;
    }
    let packet_ds = build_packet_dataset(&drawn[..n_dpi], LabelKind::Truth)?;
    let train_records = balance_records(&packet_ds.records, cfg.seed);
    let tree = train_cart(&train_records, &cfg.student_config, cfg.seed)?;

    let (student_acc, recalls, collisions) = evaluate_student(&tree, &packet_ds.records, test)?;

    Ok(RunOutput {
        report: ExperimentReport {
            pipeline: "baseline".into(),
            teacher_balanced_acc: None,
            student_balanced_acc: student_acc,
            flows_labeled: n_dpi,
            dpi_cost: n_dpi as f64 * cfg.c_dpi,
            rule_count: tree.leaf_count(),
            per_class_recalls: recalls,
            test_collisions: collisions,
        },
        student_tree: tree,
        teacher_model: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::{generate_synthetic, preset, AppMix};
    use crate::traffic_model::ALL_APPS;
    use approx::assert_relative_eq;
    use CoSLabel::*;

    #[test]
    fn balanced_accuracy_perfect() {
        let y = vec![DelaySensitive, DelayModerate, DelayTolerant];
        assert_eq!(balanced_accuracy(&y, &y).unwrap(), 1.0);
    }

    #[test]
    fn balanced_accuracy_mean_of_recalls() {
        // recalls: S 1.0 (2/2), M 0.5 (1/2), T 0.75 (3/4)
        let truth = vec![
            DelaySensitive,
            DelaySensitive,
            DelayModerate,
            DelayModerate,
            DelayTolerant,
            DelayTolerant,
            DelayTolerant,
            DelayTolerant,
        ];
        let pred = vec![
            DelaySensitive,
            DelaySensitive,
            DelayModerate,
            DelayTolerant,
            DelayTolerant,
            DelayTolerant,
            DelayTolerant,
            DelaySensitive,
        ];
        assert_relative_eq!(balanced_accuracy(&pred, &truth).unwrap(), 0.75);
    }

    #[test]
    fn balanced_accuracy_two_classes_present() {
        let truth = vec![DelaySensitive, DelaySensitive, DelayModerate, DelayModerate];
        let pred = vec![DelaySensitive, DelayModerate, DelayModerate, DelayModerate];
        assert_relative_eq!(balanced_accuracy(&pred, &truth).unwrap(), 0.75);
    }

    #[test]
    fn balanced_accuracy_length_mismatch() {
        assert!(balanced_accuracy(&[DelaySensitive], &[]).is_err());
    }

    #[test]
    fn ci_zero_variance() {
        let (lo, hi) = confidence_interval(&[0.8, 0.8, 0.8], 0.9).unwrap();
        assert_relative_eq!(lo, 0.8, epsilon = 1e-12);
        assert_relative_eq!(hi, 0.8, epsilon = 1e-12);
    }

    #[test]
    fn ci_two_points() {
        let (lo, hi) = confidence_interval(&[0.7, 0.9], 0.90).unwrap();
        // t(0.95, df=1) = 6.314, SE = 0.1
        assert_relative_eq!(lo, (0.8 - 0.63138f64).max(0.0), epsilon = 1e-4);
        assert_relative_eq!(hi, 1.0); // clamped
    }

    #[test]
    fn ci_widens_with_level() {
        let scores = [0.7, 0.75, 0.8, 0.85];
        let (a_lo, a_hi) = confidence_interval(&scores, 0.90).unwrap();
        let (b_lo, b_hi) = confidence_interval(&scores, 0.99).unwrap();
        assert!(b_lo <= a_lo && b_hi >= a_hi);
    }

    #[test]
    fn ci_needs_two_scores() {
        assert!(confidence_interval(&[0.8], 0.9).is_err());
    }

    fn small_cfg(n: usize, lambda: f64, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            n,
            lambda,
            teacher_config: GbdtConfig {
                n_rounds: 15,
                ..Default::default()
            },
            student_config: CartConfig::default(),
            c_dpi: 1.0,
            seed,
            keep_dpi_truth: false,
        }
    }

    fn corpus_and_test(n: usize, seed: u64) -> (Vec<Flow>, Vec<Flow>) {
        let profiles = preset("separable").unwrap();
        let mix: AppMix = ALL_APPS.iter().map(|&a| (a, 1.0)).collect();
        let corpus = generate_synthetic(&profiles, &mix, n, seed).unwrap();
        let test = generate_synthetic(&profiles, &mix, 400, seed ^ 0xffff).unwrap();
        (corpus, test)
    }

    #[test]
    fn fphtc_pipeline_end_to_end() {
        let (corpus, test) = corpus_and_test(600, 42);
        let cfg = small_cfg(500, 0.4, 42);
        let out = run_fphtc(&corpus, &cfg, &test).unwrap();
        let r = &out.report;
        assert_eq!(r.flows_labeled, 200);
        assert_relative_eq!(r.dpi_cost, 200.0);
        assert_eq!(r.rule_count, out.student_tree.leaf_count());
        assert!(r.teacher_balanced_acc.unwrap() > 0.8);
        assert!(r.student_balanced_acc > 0.5);
    }

    #[test]
    fn lambda_one_labels_everything() {
        let (corpus, test) = corpus_and_test(300, 7);
        let cfg = small_cfg(250, 1.0, 7);
        let out = run_fphtc(&corpus, &cfg, &test).unwrap();
        assert_eq!(out.report.flows_labeled, 250);
        assert_relative_eq!(out.report.dpi_cost, 250.0);
        let base = run_regular_baseline(&corpus, &cfg, &test).unwrap();
        assert_eq!(base.report.flows_labeled, 250);
    }

    #[test]
    fn determinism_same_seed_same_report() {
        let (corpus, test) = corpus_and_test(400, 9);
        let cfg = small_cfg(300, 0.5, 9);
        let a = run_fphtc(&corpus, &cfg, &test).unwrap();
        let b = run_fphtc(&corpus, &cfg, &test).unwrap();
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
        assert_eq!(a.student_tree, b.student_tree);
    }

    #[test]
    fn invalid_lambda_rejected() {
        let (corpus, test) = corpus_and_test(50, 3);
        let mut cfg = small_cfg(40, 1.5, 3);
        assert!(run_fphtc(&corpus, &cfg, &test).is_err());
        cfg.lambda = 0.0001; // rounds to zero DPI flows
        assert!(run_fphtc(&corpus, &cfg, &test).is_err());
    }
}
