//! Time-slotted online simulation: traffic-pattern shifts, an accuracy
//! threshold that triggers retraining, a saturation threshold that stops it,
//! and atomic policy swaps between slots. A regular packet-based baseline arm
//! retrains on the same slots with the same DPI budget for comparison.

use serde::Serialize;

use crate::distillation::balanced_accuracy;
use crate::ingestion::{generate_synthetic, AppMix, ProfileSet};
use crate::policy::{
    build_packet_dataset, classify, train_cart, CartConfig, DecisionTree,
};
use crate::teacher::{predict_label, train_gbdt, GbdtConfig};
use crate::traffic_model::{
    balance_dataset, AppType, CoSLabel, Flow, FlowDataset, LabelKind,
};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SlotSpec {
    pub apps: Vec<AppType>,
    pub flows_per_slot: usize,
}

#[derive(Debug, Clone)]
pub struct TrafficSchedule {
    pub slots: Vec<SlotSpec>,
}

impl TrafficSchedule {
    /// The default 30-slot preset: three 5-app subsets, switching every 10
    /// slots.
    pub fn default_preset(flows_per_slot: usize) -> Self {
        use AppType::*;
        let subsets: [&[AppType]; 3] = [
            &[Audio, Ftp, Video, Voip, Web],
            &[Ftp, Mail, P2p, Video, Voip],
            &[Audio, Chat, Ftp, Mail, Web],
        ];
        let slots = (0..30)
            .map(|t| SlotSpec {
                apps: subsets[t / 10].to_vec(),
                flows_per_slot,
            })
            .collect();
        TrafficSchedule { slots }
    }
}

#[derive(Debug, Clone)]
pub struct OnlineConfig {
    pub accuracy_threshold: f64,
    pub saturation_threshold: f64,
    pub dpi_flows_per_slot: usize,
    pub teacher_labeled_flows: usize,
    pub teacher_config: GbdtConfig,
    pub student_config: CartConfig,
    pub profiles: ProfileSet,
    pub seed: u64,
}

impl OnlineConfig {
    pub fn with_profiles(profiles: ProfileSet, seed: u64) -> Self {
        OnlineConfig {
            accuracy_threshold: 0.80,
            saturation_threshold: 0.01,
            dpi_flows_per_slot: 1000,
            teacher_labeled_flows: 10_000,
            teacher_config: GbdtConfig::default(),
            student_config: CartConfig::default(),
            profiles,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        for t in [self.accuracy_threshold, self.saturation_threshold] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidArgument(
                    "thresholds must be in (0,1)".into(),
                ));
            }
        }
        if self.dpi_flows_per_slot == 0 || self.teacher_labeled_flows == 0 {
            return Err(Error::InvalidArgument(
                "per-slot flow budgets must be >= 1".into(),
            ));
        }
        self.teacher_config.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    Monitoring,
    Retraining,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Monitoring => f.write_str("monitoring"),
            Mode::Retraining => f.write_str("retraining"),
        }
    }
}

/// Simulation state between slots. Policies are only replaced during
/// retraining slots; monitoring slots never swap.
#[derive(Debug, Clone)]
pub struct SimState {
    pub mode: Mode,
    pub fphtc_policy: Option<DecisionTree>,
    pub baseline_policy: Option<DecisionTree>,
    pub last_accuracy: f64,
    pub slot_index: usize,
    pub dpi_flows_used: usize,
}

impl SimState {
    /// Slot 0 always trains an initial policy.
    pub fn initial() -> Self {
        SimState {
            mode: Mode::Retraining,
            fphtc_policy: None,
            baseline_policy: None,
            last_accuracy: 0.0,
            slot_index: 0,
            dpi_flows_used: 0,
        }
    }
}

/// The traffic visible in one slot: the evaluation stream plus (when
/// retraining) the DPI-labeled and unlabeled training flows.
#[derive(Debug, Clone)]
pub struct SlotTraffic {
    pub eval: Vec<Flow>,
    pub dpi: Vec<Flow>,
    pub corpus: Vec<Flow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlotMetrics {
    pub slot: usize,
    pub mode: Mode,
    pub fphtc_accuracy: f64,
    pub baseline_accuracy: f64,
    /// Cumulative DPI-labeled flows.
    pub dpi_flows_used: usize,
    pub rule_count: usize,
}

fn retrain(
    state: &mut SimState,
    traffic: &SlotTraffic,
    cfg: &OnlineConfig,
) -> Result<()> {
    // teacher on the DPI-labeled slice
    let ds = FlowDataset::new(traffic.dpi.clone(), LabelKind::Truth)?;
    let balanced = balance_dataset(&ds, cfg.seed ^ state.slot_index as u64)?;
    let features = crate::flow_features::extract_all(&balanced.flows);
    let labels = balanced.labels();
    let teacher = train_gbdt(&features, &labels, &cfg.teacher_config, cfg.seed)?.model;

    // teacher-label the student corpus
    let mut corpus = traffic.corpus.clone();
    let corpus_features = crate::flow_features::extract_all(&corpus);
    for (flow, fv) in corpus.iter_mut().zip(&corpus_features) {
        flow.teacher_label = Some(predict_label(&teacher, fv)?);
    }
    let packet_ds = build_packet_dataset(&corpus, LabelKind::TeacherPredicted)?;
    state.fphtc_policy = Some(train_cart(&packet_ds.records, &cfg.student_config, cfg.seed)?);

    // baseline on the same DPI budget, true labels only
    let base_ds = build_packet_dataset(&traffic.dpi, LabelKind::Truth)?;
    state.baseline_policy = Some(train_cart(&base_ds.records, &cfg.student_config, cfg.seed)?);

    state.dpi_flows_used += traffic.dpi.len();
    Ok(())
}

fn evaluate(tree: &DecisionTree, eval: &[Flow]) -> Result<f64> {
    let ds = build_packet_dataset(eval, LabelKind::Truth)?;
    let pred: Vec<CoSLabel> = ds.records.iter().map(|r| classify(tree, &r.features)).collect();
    let truth: Vec<CoSLabel> = ds.records.iter().map(|r| r.label).collect();
    balanced_accuracy(&pred, &truth)
}

/// Advance one slot: retrain if the state machine says so, measure both arms
/// on the slot's traffic, then apply the threshold rules.
///
/// Monitoring: accuracy below the threshold at slot end switches to
/// Retraining starting the next slot. Retraining: a fresh teacher and policy
/// are trained and swapped in, and retraining stops once accuracy is back
/// above the threshold and the consecutive improvement falls below the
/// saturation threshold.
pub fn step(
    state: &SimState,
    traffic: &SlotTraffic,
    cfg: &OnlineConfig,
) -> Result<(SimState, SlotMetrics)> {
    cfg.validate()?;
    let mut next = state.clone();
    let retraining_slot = state.mode == Mode::Retraining;
    if retraining_slot {
        retrain(&mut next, traffic, cfg)?;
    }
    let fphtc_tree = next
        .fphtc_policy
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("no policy trained yet".into()))?;
    let baseline_tree = next.baseline_policy.as_ref().unwrap();
    let fphtc_accuracy = evaluate(fphtc_tree, &traffic.eval)?;
    let baseline_accuracy = evaluate(baseline_tree, &traffic.eval)?;

    next.mode = if retraining_slot {
        let saturated = fphtc_accuracy >= cfg.accuracy_threshold
            && (fphtc_accuracy - state.last_accuracy) < cfg.saturation_threshold;
        if saturated {
            Mode::Monitoring
        } else {
            Mode::Retraining
        }
    } else if fphtc_accuracy < cfg.accuracy_threshold {
        Mode::Retraining
    } else {
        Mode::Monitoring
    };

    let metrics = SlotMetrics {
        slot: state.slot_index,
        mode: state.mode,
        fphtc_accuracy,
        baseline_accuracy,
        dpi_flows_used: next.dpi_flows_used,
        rule_count: fphtc_tree.leaf_count(),
    };
    next.last_accuracy = fphtc_accuracy;
    next.slot_index += 1;
    Ok((next, metrics))
}

fn slot_traffic(
    spec: &SlotSpec,
    retraining: bool,
    slot: usize,
    cfg: &OnlineConfig,
) -> Result<SlotTraffic> {
    let mix: AppMix = spec.apps.iter().map(|&a| (a, 1.0)).collect();
    let salt = |k: u64| cfg.seed ^ (slot as u64) << 8 ^ k;
    let eval = generate_synthetic(&cfg.profiles, &mix, spec.flows_per_slot, salt(1))?;
    let (dpi, corpus) = if retraining {
        (
            generate_synthetic(&cfg.profiles, &mix, cfg.dpi_flows_per_slot, salt(2))?,
            generate_synthetic(&cfg.profiles, &mix, cfg.teacher_labeled_flows, salt(3))?,
        )
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(SlotTraffic { eval, dpi, corpus })
}

/// Run the whole schedule; deterministic per seed.
pub fn run_simulation(schedule: &TrafficSchedule, cfg: &OnlineConfig) -> Result<Vec<SlotMetrics>> {
    cfg.validate()?;
    if schedule.slots.is_empty() {
        return Err(Error::InvalidArgument("schedule must be nonempty".into()));
    }
    let mut state = SimState::initial();
    let mut out = Vec::with_capacity(schedule.slots.len());
    for (slot, spec) in schedule.slots.iter().enumerate() {
        if spec.apps.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "slot {slot} has an empty app subset"
            )));
        }
        let traffic = slot_traffic(spec, state.mode == Mode::Retraining, slot, cfg)?;
        let (next, metrics) = step(&state, &traffic, cfg)?;
        out.push(metrics);
        state = next;
    }
    Ok(out)
}

pub fn metrics_to_csv(metrics: &[SlotMetrics]) -> String {
    let mut out =
        String::from("slot,mode,fphtc_accuracy,baseline_accuracy,dpi_flows_used,rule_count\n");
    for m in metrics {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{},{}\n",
            m.slot, m.mode, m.fphtc_accuracy, m.baseline_accuracy, m.dpi_flows_used, m.rule_count
        ));
    }
    out
}
