//! Interval-based driving metrics and per-episode manipulation metrics.

use std::collections::{BTreeMap, HashMap};
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::episodes::{Classification, Episode, FrameVerdict, ScenarioClass, TaskOutcome};

/// What the monitor said about one evaluated timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Judgement {
    Normal,
    Anomaly,
    /// Unparseable response or failed query.
    Withheld,
}

impl Judgement {
    fn of(verdict: &FrameVerdict) -> Self {
        match verdict.overall() {
            Some(Classification::Anomaly) => Judgement::Anomaly,
            Some(Classification::Normal) => Judgement::Normal,
            None => Judgement::Withheld,
        }
    }
}

/// Verdicts grouped by episode and timestep, checked against the corpus.
#[derive(Debug, Clone, Default)]
pub struct VerdictIndex {
    by_episode: HashMap<String, BTreeMap<u64, Judgement>>,
}

impl VerdictIndex {
    pub fn new(episodes: &[Episode], verdicts: &[FrameVerdict]) -> Result<Self, EvalError> {
        let known: HashMap<&str, &Episode> = episodes.iter().map(|e| (e.id(), e)).collect();
        let mut by_episode: HashMap<String, BTreeMap<u64, Judgement>> = HashMap::new();
        for verdict in verdicts {
            let episode_id = verdict.episode_id();
            let episode = known
                .get(episode_id)
                .ok_or_else(|| EvalError::UnknownEpisode { episode_id: episode_id.to_string() })?;
            let timestep = verdict.timestep();
            if episode.frame(timestep).is_none() {
                return Err(EvalError::UnknownTimestep { episode_id: episode_id.to_string(), timestep });
            }
            let slot = by_episode.entry(episode_id.to_string()).or_default();
            if slot.insert(timestep, Judgement::of(verdict)).is_some() {
                return Err(EvalError::DuplicateVerdict { episode_id: episode_id.to_string(), timestep });
            }
        }
        Ok(Self { by_episode })
    }

    pub fn judgements(&self, episode_id: &str) -> Option<&BTreeMap<u64, Judgement>> {
        self.by_episode.get(episode_id)
    }
}

/// TP/FN over anomaly intervals and TN/FP over out-of-view timesteps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub fp: u64,
    pub unparseable_in_view: u64,
    pub unparseable_out_of_view: u64,
    /// Intervals without a single parsed verdict; excluded from TP/FN.
    pub skipped_intervals: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Counts {
    /// Intervals evaluated (TP + FN).
    pub fn anomalies(&self) -> u64 {
        self.tp + self.fn_
    }

    /// Out-of-view timesteps evaluated, including withheld ones.
    pub fn observations(&self) -> u64 {
        self.tn + self.fp + self.unparseable_out_of_view
    }

    pub fn unparseable(&self) -> u64 {
        self.unparseable_in_view + self.unparseable_out_of_view
    }

    pub fn tpr(&self) -> Option<f64> {
        ratio(self.tp, self.anomalies())
    }

    pub fn fnr(&self) -> Option<f64> {
        ratio(self.fn_, self.anomalies())
    }

    pub fn tnr(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn fpr(&self) -> Option<f64> {
        ratio(self.fp, self.tn + self.fp)
    }
}

impl AddAssign for Counts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
        self.fp += o.fp;
        self.unparseable_in_view += o.unparseable_in_view;
        self.unparseable_out_of_view += o.unparseable_out_of_view;
        self.skipped_intervals += o.skipped_intervals;
    }
}

impl Add for Counts {
    type Output = Counts;

    fn add(mut self, o: Self) -> Counts {
        self += o;
        self
    }
}

/// A report column: one scenario class or a pooled group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Column {
    Class(ScenarioClass),
    NominalTotal,
    AnomalousTotal,
    Total,
}

impl Column {
    /// Driving columns in report order.
    pub const DRIVING: [Column; 8] = [
        Column::Class(ScenarioClass::NominalStop),
        Column::Class(ScenarioClass::NominalLight),
        Column::NominalTotal,
        Column::Class(ScenarioClass::AnomalousStop),
        Column::Class(ScenarioClass::AnomalousLight),
        Column::Class(ScenarioClass::StrangeObject),
        Column::AnomalousTotal,
        Column::Total,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Column::Class(c) => c.as_str(),
            Column::NominalTotal => "nominal_total",
            Column::AnomalousTotal => "anomalous_total",
            Column::Total => "total",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Column::Class(ScenarioClass::NominalStop | ScenarioClass::AnomalousStop) => "Stop Signs",
            Column::Class(ScenarioClass::NominalLight | ScenarioClass::AnomalousLight) => "Traffic Lights",
            Column::Class(ScenarioClass::StrangeObject) => "Strange Objects",
            Column::Class(ScenarioClass::ManipBaseline) => "Baseline",
            Column::Class(ScenarioClass::ManipNeutral) => "Neutral Distractor",
            Column::Class(ScenarioClass::ManipSemantic) => "Semantic Distractor",
            Column::NominalTotal | Column::AnomalousTotal | Column::Total => "Total",
        }
    }

    pub fn contains(self, class: ScenarioClass) -> bool {
        match self {
            Column::Class(c) => c == class,
            Column::NominalTotal => class.is_nominal(),
            Column::AnomalousTotal => !class.is_nominal(),
            Column::Total => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IntervalMetrics {
    pub per_class: BTreeMap<ScenarioClass, Counts>,
}

impl IntervalMetrics {
    /// Counts pooled over the column's classes by summation.
    pub fn column(&self, column: Column) -> Counts {
        self.per_class.iter().filter(|(c, _)| column.contains(**c)).fold(Counts::default(), |acc, (_, v)| acc + *v)
    }

    pub fn total(&self) -> Counts {
        self.column(Column::Total)
    }
}

/// Count one episode. Intervals are TP if any parsed in-interval verdict is
/// an anomaly, FN if every parsed one is normal, and skipped when none
/// parsed. In-view normal verdicts feed neither TN nor FP.
pub fn episode_counts(episode: &Episode, judgements: Option<&BTreeMap<u64, Judgement>>) -> Counts {
    let empty = BTreeMap::new();
    let judgements = judgements.unwrap_or(&empty);
    let mut counts = Counts::default();
    for interval in episode.anomaly_intervals() {
        let inside: Vec<Judgement> = judgements.range(interval.start()..=interval.end()).map(|(_, j)| *j).collect();
        counts.unparseable_in_view += inside.iter().filter(|j| **j == Judgement::Withheld).count() as u64;
        if inside.contains(&Judgement::Anomaly) {
            counts.tp += 1;
        } else if inside.contains(&Judgement::Normal) {
            counts.fn_ += 1;
        } else {
            tracing::warn!(
                episode = episode.id(),
                start = interval.start(),
                end = interval.end(),
                "anomaly interval has no parsed verdict; excluded"
            );
            counts.skipped_intervals += 1;
        }
    }
    for (&timestep, judgement) in judgements {
        if episode.in_view(timestep) {
            continue;
        }
        match judgement {
            Judgement::Anomaly => counts.fp += 1,
            Judgement::Normal => counts.tn += 1,
            Judgement::Withheld => counts.unparseable_out_of_view += 1,
        }
    }
    counts
}

pub fn interval_metrics(episodes: &[Episode], verdicts: &[FrameVerdict]) -> Result<IntervalMetrics, EvalError> {
    let index = VerdictIndex::new(episodes, verdicts)?;
    let mut metrics = IntervalMetrics::default();
    for episode in episodes {
        *metrics.per_class.entry(episode.scenario_class()).or_default() += episode_counts(episode, index.judgements(episode.id()));
    }
    Ok(metrics)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRate {
    pub variant: ScenarioClass,
    pub flagged: u64,
    pub n: u64,
    /// Episodes without a single parsed verdict (counted as not flagged).
    pub withheld: u64,
    pub rate: f64,
}

fn episode_flagged(index: &VerdictIndex, episode: &Episode) -> (bool, bool) {
    let judgements = index.judgements(episode.id());
    let flagged = judgements.is_some_and(|j| j.values().any(|v| *v == Judgement::Anomaly));
    let parsed = judgements.is_some_and(|j| j.values().any(|v| *v != Judgement::Withheld));
    (flagged, parsed)
}

/// Fraction of the variant's episodes with at least one anomaly verdict.
pub fn episode_detection_rate(
    episodes: &[Episode],
    verdicts: &[FrameVerdict],
    variant: ScenarioClass,
) -> Result<DetectionRate, EvalError> {
    let index = VerdictIndex::new(episodes, verdicts)?;
    detection_rate_indexed(episodes, &index, variant)
}

fn detection_rate_indexed(episodes: &[Episode], index: &VerdictIndex, variant: ScenarioClass) -> Result<DetectionRate, EvalError> {
    let (mut flagged, mut n, mut withheld) = (0, 0, 0);
    for episode in episodes.iter().filter(|e| e.scenario_class() == variant) {
        let (is_flagged, parsed) = episode_flagged(index, episode);
        n += 1;
        flagged += is_flagged as u64;
        withheld += !parsed as u64;
    }
    if n == 0 {
        return Err(EvalError::EmptySelection { variant });
    }
    Ok(DetectionRate { variant, flagged, n, withheld, rate: flagged as f64 / n as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusionMatrix2x2 {
    pub detected_success: u64,
    pub missed_success: u64,
    pub detected_failure: u64,
    pub missed_failure: u64,
}

impl ConfusionMatrix2x2 {
    pub fn total(&self) -> u64 {
        self.detected_success + self.missed_success + self.detected_failure + self.missed_failure
    }

    pub fn detected(&self) -> u64 {
        self.detected_success + self.detected_failure
    }
}

/// Task outcome against detection for every given episode.
pub fn fault_confusion(episodes: &[Episode], verdicts: &[FrameVerdict]) -> Result<ConfusionMatrix2x2, EvalError> {
    let index = VerdictIndex::new(episodes, verdicts)?;
    confusion_indexed(episodes.iter(), &index)
}

fn confusion_indexed<'a>(episodes: impl Iterator<Item = &'a Episode>, index: &VerdictIndex) -> Result<ConfusionMatrix2x2, EvalError> {
    let mut m = ConfusionMatrix2x2::default();
    for episode in episodes {
        let outcome = episode.task_outcome().ok_or_else(|| EvalError::MissingTaskOutcome { episode_id: episode.id().to_string() })?;
        let (flagged, _) = episode_flagged(index, episode);
        match (flagged, outcome) {
            (true, TaskOutcome::Success) => m.detected_success += 1,
            (false, TaskOutcome::Success) => m.missed_success += 1,
            (true, TaskOutcome::Failure) => m.detected_failure += 1,
            (false, TaskOutcome::Failure) => m.missed_failure += 1,
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ManipulationMetrics {
    pub rates: BTreeMap<ScenarioClass, DetectionRate>,
    /// Present for variants whose episodes all carry a task outcome.
    pub confusion: BTreeMap<ScenarioClass, ConfusionMatrix2x2>,
}

/// Detection rate and confusion for every manipulation variant present.
pub fn manipulation_metrics(episodes: &[Episode], verdicts: &[FrameVerdict]) -> Result<ManipulationMetrics, EvalError> {
    let index = VerdictIndex::new(episodes, verdicts)?;
    let mut out = ManipulationMetrics::default();
    for variant in [ScenarioClass::ManipBaseline, ScenarioClass::ManipNeutral, ScenarioClass::ManipSemantic] {
        let selected: Vec<&Episode> = episodes.iter().filter(|e| e.scenario_class() == variant).collect();
        if selected.is_empty() {
            continue;
        }
        out.rates.insert(variant, detection_rate_indexed(episodes, &index, variant)?);
        if selected.iter().all(|e| e.task_outcome().is_some()) {
            out.confusion.insert(variant, confusion_indexed(selected.into_iter(), &index)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episodes::{AnomalyKind, Frame, MonitorVerdict, VisibilityInterval};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn episode(id: &str, class: ScenarioClass, len: u64, intervals: &[(u64, u64)]) -> Episode {
        Episode::builder(id, class)
            .frames((0..len).map(|t| Frame::at(t, vec![])).collect())
            .intervals(intervals.iter().map(|&(s, e)| VisibilityInterval::new(s, e, AnomalyKind::StopSign).unwrap()).collect())
            .build()
            .unwrap()
    }

    fn verdict(id: &str, t: u64, anomaly: bool) -> FrameVerdict {
        FrameVerdict::Ok(MonitorVerdict {
            episode_id: id.into(),
            timestep: t,
            per_object: vec![],
            overall: if anomaly { Classification::Anomaly } else { Classification::Normal },
            rationale: String::new(),
        })
    }

    fn withheld(id: &str, t: u64) -> FrameVerdict {
        FrameVerdict::Unparseable { episode_id: id.into(), timestep: t, rationale: String::new(), reason: "x".into() }
    }

    #[test]
    fn two_interval_example() {
        let ep = episode("a", ScenarioClass::AnomalousStop, 10, &[(2, 4), (7, 8)]);
        let verdicts: Vec<_> = (0..10).map(|t| verdict("a", t, t == 3 || t == 9)).collect();
        let m = interval_metrics(&[ep], &verdicts).unwrap();
        let c = m.total();
        assert_eq!((c.tp, c.fn_, c.fp, c.tn), (1, 1, 1, 4));
        assert_eq!(c.tpr(), Some(0.5));
        assert_eq!(c.tnr(), Some(0.8));
    }

    #[test]
    fn nominal_episode_has_no_tpr() {
        let ep = episode("n", ScenarioClass::NominalStop, 10, &[]);
        let verdicts: Vec<_> = (0..10).map(|t| verdict("n", t, false)).collect();
        let c = interval_metrics(&[ep], &verdicts).unwrap().total();
        assert_eq!((c.tn, c.fp), (10, 0));
        assert_eq!(c.tpr(), None);
        assert_eq!(c.fnr(), None);
    }

    #[test]
    fn withheld_verdicts_are_counted_apart() {
        let ep = episode("a", ScenarioClass::AnomalousLight, 6, &[(1, 2), (4, 4)]);
        let verdicts = vec![withheld("a", 0), withheld("a", 1), verdict("a", 2, false), withheld("a", 4), verdict("a", 5, true)];
        let c = interval_metrics(&[ep], &verdicts).unwrap().total();
        assert_eq!((c.tp, c.fn_, c.skipped_intervals), (0, 1, 1));
        assert_eq!((c.unparseable_in_view, c.unparseable_out_of_view), (2, 1));
        assert_eq!((c.tn, c.fp, c.observations()), (0, 1, 2));
    }

    #[test]
    fn verdicts_must_resolve() {
        let ep = episode("a", ScenarioClass::NominalStop, 3, &[]);
        assert!(matches!(
            interval_metrics(std::slice::from_ref(&ep), &[verdict("b", 0, false)]),
            Err(EvalError::UnknownEpisode { .. })
        ));
        assert!(matches!(
            interval_metrics(std::slice::from_ref(&ep), &[verdict("a", 3, false)]),
            Err(EvalError::UnknownTimestep { timestep: 3, .. })
        ));
        assert!(matches!(
            interval_metrics(&[ep], &[verdict("a", 1, false), verdict("a", 1, true)]),
            Err(EvalError::DuplicateVerdict { .. })
        ));
    }

    #[test]
    fn pooling_sums_counts() {
        let a = episode("a", ScenarioClass::NominalStop, 4, &[]);
        let b = episode("b", ScenarioClass::NominalLight, 6, &[]);
        let mut verdicts: Vec<_> = (0..4).map(|t| verdict("a", t, t == 0)).collect();
        verdicts.extend((0..6).map(|t| verdict("b", t, t < 3)));
        let m = interval_metrics(&[a, b], &verdicts).unwrap();
        assert_eq!(m.column(Column::Class(ScenarioClass::NominalStop)).fpr(), Some(0.25));
        assert_eq!(m.column(Column::Class(ScenarioClass::NominalLight)).fpr(), Some(0.5));
        // 4 of 10, not the mean of the per-class rates.
        assert_eq!(m.column(Column::NominalTotal).fpr(), Some(0.4));
        assert_eq!(m.column(Column::AnomalousTotal), Counts::default());
        assert_eq!(m.column(Column::AnomalousTotal).tnr(), None);
    }

    fn manip(id: &str, class: ScenarioClass, outcome: Option<TaskOutcome>) -> Episode {
        Episode::builder(id, class)
            .frames(vec![Frame::at(0, vec![])])
            .task_outcome(outcome)
            .task_spec(Some("put the red blocks in a gray bowl".into()))
            .build()
            .unwrap()
    }

    #[test]
    fn confusion_one_per_cell() {
        let episodes = vec![
            manip("a", ScenarioClass::ManipSemantic, Some(TaskOutcome::Success)),
            manip("b", ScenarioClass::ManipSemantic, Some(TaskOutcome::Success)),
            manip("c", ScenarioClass::ManipSemantic, Some(TaskOutcome::Failure)),
            manip("d", ScenarioClass::ManipSemantic, Some(TaskOutcome::Failure)),
        ];
        let verdicts = vec![verdict("a", 0, true), verdict("b", 0, false), verdict("c", 0, true), withheld("d", 0)];
        let m = fault_confusion(&episodes, &verdicts).unwrap();
        assert_eq!(m, ConfusionMatrix2x2 { detected_success: 1, missed_success: 1, detected_failure: 1, missed_failure: 1 });
        let rate = episode_detection_rate(&episodes, &verdicts, ScenarioClass::ManipSemantic).unwrap();
        assert_eq!((rate.flagged, rate.n, rate.withheld, rate.rate), (2, 4, 1, 0.5));
        assert!(matches!(
            episode_detection_rate(&episodes, &verdicts, ScenarioClass::ManipNeutral),
            Err(EvalError::EmptySelection { .. })
        ));
        let no_outcome = vec![manip("x", ScenarioClass::ManipNeutral, None)];
        assert!(matches!(fault_confusion(&no_outcome, &[]), Err(EvalError::MissingTaskOutcome { .. })));
        let all_normal = vec![verdict("x", 0, false)];
        assert_eq!(episode_detection_rate(&no_outcome, &all_normal, ScenarioClass::ManipNeutral).unwrap().rate, 0.0);
    }

    /// Independent counter: walk every timestep, building interval
    /// membership from explicit sets.
    fn brute_force(episode: &Episode, verdicts: &BTreeMap<u64, Judgement>) -> Counts {
        let mut c = Counts::default();
        let mut in_view = BTreeSet::new();
        for iv in episode.anomaly_intervals() {
            let members: Vec<u64> = (iv.start()..=iv.end()).collect();
            in_view.extend(members.iter().copied());
            let mut any_anomaly = false;
            let mut any_parsed = false;
            for t in &members {
                match verdicts.get(t) {
                    Some(Judgement::Anomaly) => {
                        any_anomaly = true;
                        any_parsed = true;
                    }
                    Some(Judgement::Normal) => any_parsed = true,
                    Some(Judgement::Withheld) => c.unparseable_in_view += 1,
                    None => {}
                }
            }
            match (any_parsed, any_anomaly) {
                (_, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, _) => c.skipped_intervals += 1,
            }
        }
        for f in episode.frames() {
            let t = f.timestep();
            if in_view.contains(&t) {
                continue;
            }
            match verdicts.get(&t) {
                Some(Judgement::Anomaly) => c.fp += 1,
                Some(Judgement::Normal) => c.tn += 1,
                Some(Judgement::Withheld) => c.unparseable_out_of_view += 1,
                None => {}
            }
        }
        c
    }

    fn random_instance() -> impl Strategy<Value = (Episode, Vec<FrameVerdict>)> {
        (2u64..40, proptest::collection::vec((0u64..40, 0u64..6), 0..4), proptest::collection::vec(0u8..4, 40))
            .prop_map(|(len, raw_intervals, codes)| {
                // Build disjoint sorted intervals inside [0, len).
                let mut intervals = Vec::new();
                let mut next_free = 0;
                let mut starts: Vec<(u64, u64)> = raw_intervals.into_iter().map(|(s, w)| (s % len, w)).collect();
                starts.sort();
                for (s, w) in starts {
                    let s = s.max(next_free);
                    let e = (s + w).min(len - 1);
                    if s >= len || s > e {
                        continue;
                    }
                    intervals.push((s, e));
                    next_free = e + 2;
                }
                let class = if intervals.is_empty() { ScenarioClass::NominalLight } else { ScenarioClass::StrangeObject };
                let ep = episode("r", class, len, &intervals);
                let verdicts = (0..len)
                    .filter_map(|t| match codes[t as usize] {
                        0 => None,
                        1 => Some(verdict("r", t, false)),
                        2 => Some(verdict("r", t, true)),
                        _ => Some(withheld("r", t)),
                    })
                    .collect();
                (ep, verdicts)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn matches_brute_force((ep, verdicts) in random_instance()) {
            let judgements: BTreeMap<u64, Judgement> = verdicts.iter().map(|v| (v.timestep(), Judgement::of(v))).collect();
            let expected = brute_force(&ep, &judgements);
            let got = interval_metrics(std::slice::from_ref(&ep), &verdicts).unwrap().total();
            prop_assert_eq!(got, expected);
            // Conservation.
            let evaluated_intervals = ep.anomaly_intervals().iter()
                .filter(|iv| judgements.range(iv.start()..=iv.end()).any(|(_, j)| *j != Judgement::Withheld))
                .count() as u64;
            prop_assert_eq!(got.tp + got.fn_, evaluated_intervals);
            let out_of_view = judgements.keys().filter(|t| !ep.in_view(**t)).count() as u64;
            prop_assert_eq!(got.tn + got.fp + got.unparseable_out_of_view, out_of_view);
            if let (Some(a), Some(b)) = (got.tpr(), got.fnr()) { prop_assert!((a + b - 1.0).abs() < 1e-12); }
            if let (Some(a), Some(b)) = (got.tnr(), got.fpr()) { prop_assert!((a + b - 1.0).abs() < 1e-12); }
        }

        #[test]
        fn extra_anomaly_never_lowers_tp_or_fp((ep, verdicts) in random_instance(), pick in 0usize..40) {
            let before = interval_metrics(std::slice::from_ref(&ep), &verdicts).unwrap().total();
            let t = (pick as u64) % ep.frames().len() as u64;
            let mut more: Vec<FrameVerdict> = verdicts.into_iter().filter(|v| v.timestep() != t).collect();
            more.push(verdict("r", t, true));
            let after = interval_metrics(std::slice::from_ref(&ep), &more).unwrap().total();
            prop_assert!(after.tp >= before.tp);
            prop_assert!(after.fp >= before.fp);
        }
    }
}
