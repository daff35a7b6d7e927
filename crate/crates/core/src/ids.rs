//! Anomaly detection with a categorical naive Bayes classifier.
//!
//! Transactions carry a fixed number of categorical features, each encoded as
//! an index into that feature's alphabet. Leaders sample their voters'
//! traffic according to the budget allocation and classify what they sample.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::payment::BudgetAllocation;
use crate::topology::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Normal,
    Attack,
}

impl Label {
    fn index(self) -> usize {
        match self {
            Label::Normal => 0,
            Label::Attack => 1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Normal => "normal",
            Label::Attack => "attack",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub features: Vec<u32>,
    /// Ground truth. The classifier never looks at it outside training.
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IdsError {
    #[error("training set is empty")]
    EmptyTraining,
    #[error("smoothing constant must be > 0, got {0}")]
    NonPositiveAlpha(f64),
    #[error("transaction has {got} features, model expects {expected}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("feature {feature}: category {value} outside alphabet of size {size}")]
    UnknownCategory { feature: usize, value: u32, size: u32 },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Io(String),
}

/// Alphabet sizes per feature, with optional category names for loaded data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    pub names: Vec<Vec<String>>,
}

impl FeatureSchema {
    pub fn with_sizes(sizes: &[u32]) -> Self {
        FeatureSchema {
            names: sizes
                .iter()
                .map(|&s| (0..s).map(|c| c.to_string()).collect())
                .collect(),
        }
    }

    pub fn arity(&self) -> usize {
        self.names.len()
    }

    pub fn size(&self, feature: usize) -> u32 {
        self.names[feature].len() as u32
    }

    fn check(&self, t: &Transaction) -> Result<(), IdsError> {
        if t.features.len() != self.arity() {
            return Err(IdsError::ArityMismatch { expected: self.arity(), got: t.features.len() });
        }
        for (feature, &value) in t.features.iter().enumerate() {
            let size = self.size(feature);
            if value >= size {
                return Err(IdsError::UnknownCategory { feature, value, size });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BayesModel {
    schema: FeatureSchema,
    /// Indexed by `Label::index`.
    class_priors: [f64; 2],
    class_counts: [u64; 2],
    /// `conditional_counts[feature][label][category]`.
    conditional_counts: Vec<[Vec<u64>; 2]>,
    alpha: f64,
}

impl BayesModel {
    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn prior(&self, label: Label) -> f64 {
        self.class_priors[label.index()]
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Smoothed `P(feature = value | label)`.
    pub fn conditional(&self, feature: usize, value: u32, label: Label) -> f64 {
        let l = label.index();
        let count = self.conditional_counts[feature][l][value as usize] as f64;
        let size = self.schema.size(feature) as f64;
        (count + self.alpha) / (self.class_counts[l] as f64 + self.alpha * size)
    }

    fn log_score(&self, t: &Transaction, label: Label) -> f64 {
        let prior = self.prior(label);
        if prior == 0.0 {
            return f64::NEG_INFINITY;
        }
        let mut s = prior.ln();
        for (f, &v) in t.features.iter().enumerate() {
            s += self.conditional(f, v, label).ln();
        }
        s
    }
}

/// Fits priors and Laplace-smoothed conditionals. With a single label present
/// the other label's prior is 0 and its conditionals are uniform.
pub fn train_bayes(data: &[Transaction], schema: &FeatureSchema, alpha: f64) -> Result<BayesModel, IdsError> {
    if data.is_empty() {
        return Err(IdsError::EmptyTraining);
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(IdsError::NonPositiveAlpha(alpha));
    }
    let mut class_counts = [0u64; 2];
    let mut conditional_counts: Vec<[Vec<u64>; 2]> = (0..schema.arity())
        .map(|f| {
            let n = schema.size(f) as usize;
            [vec![0; n], vec![0; n]]
        })
        .collect();
    for t in data {
        schema.check(t)?;
        let l = t.label.index();
        class_counts[l] += 1;
        for (f, &v) in t.features.iter().enumerate() {
            conditional_counts[f][l][v as usize] += 1;
        }
    }
    let n = data.len() as f64;
    Ok(BayesModel {
        schema: schema.clone(),
        class_priors: [class_counts[0] as f64 / n, class_counts[1] as f64 / n],
        class_counts,
        conditional_counts,
        alpha,
    })
}

/// `[P(Normal | t), P(Attack | t)]`, normalized in log space.
pub fn posteriors(m: &BayesModel, t: &Transaction) -> Result<[f64; 2], IdsError> {
    m.schema.check(t)?;
    let ln = m.log_score(t, Label::Normal);
    let la = m.log_score(t, Label::Attack);
    let top = ln.max(la);
    let (en, ea) = ((ln - top).exp(), (la - top).exp());
    Ok([en / (en + ea), ea / (en + ea)])
}

/// Label and posterior probability of `Attack`. Exact ties go to `Attack`.
pub fn classify(m: &BayesModel, t: &Transaction) -> Result<(Label, f64), IdsError> {
    let [_, pa] = posteriors(m, t)?;
    let label = if m.log_score(t, Label::Attack) >= m.log_score(t, Label::Normal) {
        Label::Attack
    } else {
        Label::Normal
    };
    Ok((label, pa))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VoterDetection {
    pub sampled: u64,
    pub flagged: u64,
    pub true_positives: u64,
    pub false_positives: u64,
}

impl VoterDetection {
    pub fn merge(&mut self, o: &VoterDetection) {
        self.sampled += o.sampled;
        self.flagged += o.flagged;
        self.true_positives += o.true_positives;
        self.false_positives += o.false_positives;
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionReport {
    pub leader: Option<NodeId>,
    pub per_voter: BTreeMap<NodeId, VoterDetection>,
    pub packets_sampled: u64,
}

impl DetectionReport {
    pub fn totals(&self) -> VoterDetection {
        let mut t = VoterDetection::default();
        for d in self.per_voter.values() {
            t.merge(d);
        }
        t
    }

    pub fn flagged_fraction(&self) -> f64 {
        let t = self.totals();
        if t.sampled == 0 {
            0.0
        } else {
            t.flagged as f64 / t.sampled as f64
        }
    }
}

fn voter_seed(seed: u64, v: NodeId) -> u64 {
    seed ^ (u64::from(v.0) + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Samples `floor(share)` of each voter's transactions without replacement
/// and classifies them. Each voter gets its own generator derived from
/// `rng_seed`, so one voter's share never shifts another's sample. A
/// transaction the model cannot encode counts as flagged.
pub fn detection_round(
    leader: NodeId,
    allocation: &BudgetAllocation,
    traffic: &BTreeMap<NodeId, Vec<Transaction>>,
    m: &BayesModel,
    rng_seed: u64,
) -> DetectionReport {
    let mut report = DetectionReport { leader: Some(leader), ..Default::default() };
    for (&v, &share) in &allocation.shares {
        let pool = traffic.get(&v).map(Vec::as_slice).unwrap_or(&[]);
        let amount = (share.max(0.0).floor() as usize).min(pool.len());
        let mut rng = ChaCha8Rng::seed_from_u64(voter_seed(rng_seed, v));
        let mut d = VoterDetection::default();
        for i in index::sample(&mut rng, pool.len(), amount) {
            let t = &pool[i];
            let flagged = classify(m, t).map_or(true, |(l, _)| l == Label::Attack);
            d.sampled += 1;
            if flagged {
                d.flagged += 1;
                match t.label {
                    Label::Attack => d.true_positives += 1,
                    Label::Normal => d.false_positives += 1,
                }
            }
        }
        report.packets_sampled += d.sampled;
        report.per_voter.insert(v, d);
    }
    report
}

/// Detection interval that halves under heavy flagging and relaxes otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalRule {
    pub floor: u64,
    pub ceiling: u64,
    /// Flagged fraction above which the interval halves.
    pub threshold: f64,
}

impl Default for IntervalRule {
    fn default() -> Self {
        IntervalRule { floor: 1, ceiling: 8, threshold: 0.2 }
    }
}

impl IntervalRule {
    pub fn next(&self, current: u64, flagged_fraction: f64) -> u64 {
        if flagged_fraction > self.threshold {
            (current / 2).max(self.floor)
        } else {
            current.saturating_mul(2).min(self.ceiling)
        }
    }
}

/// Traffic generator: Normal transactions favor low categories, Attack
/// transactions favor high ones.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTraffic {
    pub schema: FeatureSchema,
}

impl Default for SyntheticTraffic {
    fn default() -> Self {
        // rate class, destination diversity class, size class
        SyntheticTraffic { schema: FeatureSchema::with_sizes(&[3, 3, 3]) }
    }
}

impl SyntheticTraffic {
    fn draw_category<R: Rng + ?Sized>(size: u32, label: Label, rng: &mut R) -> u32 {
        // Weight 4 on the label's home end, 1 elsewhere.
        let home = match label {
            Label::Normal => 0,
            Label::Attack => size - 1,
        };
        let total = size + 3;
        let x = rng.random_range(0..total);
        if x < 4 {
            home
        } else {
            let others: Vec<u32> = (0..size).filter(|&c| c != home).collect();
            others[(x - 4) as usize]
        }
    }

    pub fn transaction<R: Rng + ?Sized>(&self, label: Label, rng: &mut R) -> Transaction {
        let features = (0..self.schema.arity())
            .map(|f| Self::draw_category(self.schema.size(f), label, rng))
            .collect();
        Transaction { features, label }
    }

    pub fn generate<R: Rng + ?Sized>(&self, attack_rate: f64, count: usize, rng: &mut R) -> Vec<Transaction> {
        (0..count)
            .map(|_| {
                let label = if rng.random_bool(attack_rate.clamp(0.0, 1.0)) {
                    Label::Attack
                } else {
                    Label::Normal
                };
                self.transaction(label, rng)
            })
            .collect()
    }
}

/// Parses training data: one transaction per line, comma-separated
/// categories, label last (`normal`/`attack`, case-insensitive, or `0`/`1`).
/// Blank lines and `#` comments are skipped. Category names become indices
/// in order of first appearance per feature.
pub fn parse_training(text: &str) -> Result<(FeatureSchema, Vec<Transaction>), IdsError> {
    let mut names: Vec<Vec<String>> = Vec::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let (label, cats) = fields.split_last().expect("split yields at least one field");
        let label = match label.to_ascii_lowercase().as_str() {
            "normal" | "0" => Label::Normal,
            "attack" | "1" => Label::Attack,
            other => return Err(IdsError::Parse { line: i + 1, msg: format!("unknown label {other:?}") }),
        };
        if cats.is_empty() {
            return Err(IdsError::Parse { line: i + 1, msg: "no feature fields".into() });
        }
        if names.is_empty() {
            names = vec![Vec::new(); cats.len()];
        } else if cats.len() != names.len() {
            return Err(IdsError::Parse {
                line: i + 1,
                msg: format!("expected {} features, found {}", names.len(), cats.len()),
            });
        }
        let features = cats
            .iter()
            .zip(names.iter_mut())
            .map(|(c, alphabet)| match alphabet.iter().position(|a| a == c) {
                Some(p) => p as u32,
                None => {
                    alphabet.push(c.to_string());
                    alphabet.len() as u32 - 1
                }
            })
            .collect();
        out.push(Transaction { features, label });
    }
    if out.is_empty() {
        return Err(IdsError::EmptyTraining);
    }
    Ok((FeatureSchema { names }, out))
}

pub fn load_training(path: &Path) -> Result<(FeatureSchema, Vec<Transaction>), IdsError> {
    let text = std::fs::read_to_string(path).map_err(|e| IdsError::Io(format!("{}: {e}", path.display())))?;
    parse_training(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tx(features: &[u32], label: Label) -> Transaction {
        Transaction { features: features.to_vec(), label }
    }

    fn fixture() -> (FeatureSchema, Vec<Transaction>) {
        let data = vec![
            tx(&[0], Label::Normal),
            tx(&[0], Label::Normal),
            tx(&[1], Label::Attack),
            tx(&[1], Label::Attack),
        ];
        (FeatureSchema::with_sizes(&[2]), data)
    }

    #[test]
    fn four_transaction_fixture() {
        let (schema, data) = fixture();
        let m = train_bayes(&data, &schema, 1.0).unwrap();
        assert_eq!(m.conditional(0, 1, Label::Attack), 0.75);
        assert_eq!(m.prior(Label::Attack), 0.5);
        let (label, pa) = classify(&m, &tx(&[1], Label::Normal)).unwrap();
        assert_eq!(label, Label::Attack);
        assert!((pa - 0.75).abs() < 1e-9);
        let (label, pa) = classify(&m, &tx(&[0], Label::Normal)).unwrap();
        assert_eq!(label, Label::Normal);
        assert!((pa - 0.25).abs() < 1e-9);
    }

    #[test]
    fn training_guards() {
        let (schema, data) = fixture();
        assert_eq!(train_bayes(&[], &schema, 1.0), Err(IdsError::EmptyTraining));
        assert_eq!(train_bayes(&data, &schema, 0.0), Err(IdsError::NonPositiveAlpha(0.0)));
        let m = train_bayes(&data, &schema, 1.0).unwrap();
        assert_eq!(
            classify(&m, &tx(&[2], Label::Normal)),
            Err(IdsError::UnknownCategory { feature: 0, value: 2, size: 2 })
        );
        assert!(matches!(classify(&m, &tx(&[0, 0], Label::Normal)), Err(IdsError::ArityMismatch { .. })));
    }

    #[test]
    fn single_label_training() {
        let schema = FeatureSchema::with_sizes(&[3]);
        let data = vec![tx(&[0], Label::Normal), tx(&[2], Label::Normal)];
        let m = train_bayes(&data, &schema, 1.0).unwrap();
        assert_eq!(m.prior(Label::Normal), 1.0);
        assert_eq!(m.prior(Label::Attack), 0.0);
        for c in 0..3 {
            assert!((m.conditional(0, c, Label::Attack) - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(classify(&m, &tx(&[1], Label::Attack)).unwrap(), (Label::Normal, 0.0));
    }

    #[test]
    fn symmetric_model_ties_to_attack() {
        let schema = FeatureSchema::with_sizes(&[2]);
        let data = vec![tx(&[0], Label::Normal), tx(&[0], Label::Attack)];
        let m = train_bayes(&data, &schema, 1.0).unwrap();
        assert_eq!(classify(&m, &tx(&[0], Label::Normal)).unwrap(), (Label::Attack, 0.5));
    }

    #[test]
    fn log_space_matches_direct_product() {
        let gen = SyntheticTraffic::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut data = gen.generate(0.3, 200, &mut rng);
        data.push(gen.transaction(Label::Attack, &mut rng));
        let m = train_bayes(&data, &gen.schema, 0.5).unwrap();
        for t in gen.generate(0.5, 100, &mut rng) {
            let direct = |l: Label| {
                t.features
                    .iter()
                    .enumerate()
                    .fold(m.prior(l), |acc, (f, &v)| acc * m.conditional(f, v, l))
            };
            let (dn, da) = (direct(Label::Normal), direct(Label::Attack));
            let [_, pa] = posteriors(&m, &t).unwrap();
            assert!((pa - da / (dn + da)).abs() < 1e-12);
            let (label, _) = classify(&m, &t).unwrap();
            assert_eq!(label == Label::Attack, da >= dn);
        }
    }

    fn round_fixture() -> (BayesModel, BTreeMap<NodeId, Vec<Transaction>>) {
        let gen = SyntheticTraffic::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = train_bayes(&gen.generate(0.5, 400, &mut rng), &gen.schema, 1.0).unwrap();
        let traffic = BTreeMap::from([
            (NodeId(1), gen.generate(0.4, 10, &mut rng)),
            (NodeId(2), gen.generate(0.4, 10, &mut rng)),
        ]);
        (m, traffic)
    }

    fn alloc(pairs: &[(u32, f64)]) -> BudgetAllocation {
        BudgetAllocation { shares: pairs.iter().map(|&(n, s)| (NodeId(n), s)).collect() }
    }

    #[test]
    fn detection_round_cases() {
        let (m, traffic) = round_fixture();
        let r = detection_round(NodeId(9), &alloc(&[(1, 0.0), (2, 5.0)]), &traffic, &m, 7);
        assert_eq!(r.per_voter[&NodeId(1)].sampled, 0);
        assert_eq!(r.per_voter[&NodeId(2)].sampled, 5);
        assert_eq!(r.packets_sampled, 5);
        assert_eq!(r, detection_round(NodeId(9), &alloc(&[(1, 0.0), (2, 5.0)]), &traffic, &m, 7));

        let full = detection_round(NodeId(9), &alloc(&[(1, 25.0)]), &traffic, &m, 7);
        let mut expect = VoterDetection::default();
        for t in &traffic[&NodeId(1)] {
            expect.sampled += 1;
            if classify(&m, t).unwrap().0 == Label::Attack {
                expect.flagged += 1;
                if t.label == Label::Attack {
                    expect.true_positives += 1;
                } else {
                    expect.false_positives += 1;
                }
            }
        }
        assert_eq!(full.per_voter[&NodeId(1)], expect);

        let missing = detection_round(NodeId(9), &alloc(&[(5, 3.0)]), &traffic, &m, 7);
        assert_eq!(missing.packets_sampled, 0);
    }

    #[test]
    fn larger_share_finds_more_on_average() {
        let (m, traffic) = round_fixture();
        let mean_tp = |share: f64| {
            let total: u64 = (0..200)
                .map(|seed| {
                    detection_round(NodeId(9), &alloc(&[(1, share)]), &traffic, &m, seed).per_voter[&NodeId(1)]
                        .true_positives
                })
                .sum();
            total as f64 / 200.0
        };
        let means: Vec<f64> = [0.0, 2.0, 4.0, 6.0, 8.0, 10.0].iter().map(|&s| mean_tp(s)).collect();
        for w in means.windows(2) {
            assert!(w[0] <= w[1], "{means:?}");
        }
    }

    #[test]
    fn interval_rule() {
        let r = IntervalRule { floor: 1, ceiling: 8, threshold: 0.2 };
        assert_eq!(r.next(4, 0.5), 2);
        assert_eq!(r.next(1, 0.5), 1);
        assert_eq!(r.next(4, 0.1), 8);
        assert_eq!(r.next(8, 0.0), 8);
        assert_eq!(r.next(4, 0.2), 8);
    }

    #[test]
    fn parse_training_file() {
        let text = "# rate,dest,label\nlow,few,normal\nhigh,many,attack\n\nlow,many,Attack\n";
        let (schema, data) = parse_training(text).unwrap();
        assert_eq!(schema.names, vec![vec!["low", "high"], vec!["few", "many"]]);
        assert_eq!(data[2], tx(&[0, 1], Label::Attack));
        assert!(matches!(parse_training("a,b,maybe"), Err(IdsError::Parse { line: 1, .. })));
        assert!(matches!(parse_training("a,normal\na,b,attack"), Err(IdsError::Parse { line: 2, .. })));
        assert_eq!(parse_training("# nothing\n"), Err(IdsError::EmptyTraining));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn posteriors_normalize(seed in any::<u64>(), alpha in 0.01f64..5.0) {
                let gen = SyntheticTraffic::default();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = train_bayes(&gen.generate(0.3, 50, &mut rng), &gen.schema, alpha).unwrap();
                for t in gen.generate(0.5, 20, &mut rng) {
                    let [pn, pa] = posteriors(&m, &t).unwrap();
                    prop_assert!((pn + pa - 1.0).abs() < 1e-12);
                    prop_assert!((0.0..=1.0).contains(&pa));
                }
            }
        }
    }
}
