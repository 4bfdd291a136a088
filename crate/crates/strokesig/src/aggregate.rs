//! From stroke verdicts to a drawing-level attribution.
//!
//! A classified drawing is a list of per-stroke posterior distributions.
//! Four aggregation strategies turn that list into one verdict:
//!
//! * **majority** — every stroke casts one vote for its argmax class;
//! * **posterior** — per-class sum of posteriors;
//! * **k-certain** — majority vote restricted to strokes whose top
//!   posterior exceeds a threshold k (default 0.85), falling back to the
//!   posterior sum when no stroke qualifies;
//! * **certainty-weighted** — each stroke votes for its argmax class with
//!   weight (top posterior)^γ, γ default 2.
//!
//! Ties break toward the designated negative class when one exists (a tie
//! should not attribute a work to an artist), then toward the lowest class
//! index. Fake rejection under a one-vs-all model is simply "the winner is
//! the negative class".

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One stroke's classification outcome: a posterior over classes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StrokeVerdict {
    pub stroke_id: usize,
    pub posterior: Vec<f64>,
}

impl StrokeVerdict {
    /// Validates that the posterior is a distribution (Σ = 1 ± 1e−9).
    pub fn new(stroke_id: usize, posterior: Vec<f64>) -> Result<StrokeVerdict> {
        if posterior.is_empty() {
            return Err(Error::Empty("posterior has no classes".into()));
        }
        let sum: f64 = posterior.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || posterior.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidInput(format!(
                "posterior must be a distribution (sum {sum})"
            )));
        }
        Ok(StrokeVerdict { stroke_id, posterior })
    }

    /// Argmax class (lowest index on exact ties).
    pub fn predicted(&self) -> usize {
        argmax(&self.posterior)
    }

    /// Top posterior value — the stroke classifier's certainty.
    pub fn certainty(&self) -> f64 {
        self.posterior[self.predicted()]
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Aggregation strategy selector.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Majority,
    Posterior,
    KCertain,
    CertaintyWeighted,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::Majority,
        StrategyKind::Posterior,
        StrategyKind::KCertain,
        StrategyKind::CertaintyWeighted,
    ];
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "majority" => Ok(StrategyKind::Majority),
            "posterior" => Ok(StrategyKind::Posterior),
            "k_certain" | "k-certain" => Ok(StrategyKind::KCertain),
            "certainty_weighted" | "certainty-weighted" => Ok(StrategyKind::CertaintyWeighted),
            other => Err(Error::Config(format!(
                "unknown strategy '{other}' (majority|posterior|k_certain|certainty_weighted)"
            ))),
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StrategyKind::Majority => "majority",
            StrategyKind::Posterior => "posterior",
            StrategyKind::KCertain => "k_certain",
            StrategyKind::CertaintyWeighted => "certainty_weighted",
        };
        write!(f, "{s}")
    }
}

/// A strategy with its parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AggregationStrategy {
    pub kind: StrategyKind,
    /// Certainty threshold for k-certain voting, in (0,1).
    pub k: f64,
    /// Power applied to the certainty in certainty-weighted voting.
    pub gamma_exponent: f64,
}

impl Default for AggregationStrategy {
    fn default() -> Self {
        AggregationStrategy { kind: StrategyKind::Majority, k: 0.85, gamma_exponent: 2.0 }
    }
}

impl AggregationStrategy {
    pub fn of(kind: StrategyKind) -> Self {
        AggregationStrategy { kind, ..AggregationStrategy::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k < 1.0) {
            return Err(Error::Config(format!("k must be in (0,1), got {}", self.k)));
        }
        if !(self.gamma_exponent > 0.0) {
            return Err(Error::Config("gamma_exponent must be positive".into()));
        }
        Ok(())
    }

    /// Aggregate stroke verdicts under this strategy.
    pub fn aggregate(
        &self,
        drawing_id: &str,
        verdicts: &[StrokeVerdict],
        negative_class: Option<usize>,
    ) -> Result<DrawingVerdict> {
        self.validate()?;
        match self.kind {
            StrategyKind::Majority => majority_vote(drawing_id, verdicts, negative_class),
            StrategyKind::Posterior => posterior_aggregate(drawing_id, verdicts, negative_class),
            StrategyKind::KCertain => k_certain_vote(drawing_id, verdicts, self.k, negative_class),
            StrategyKind::CertaintyWeighted => {
                certainty_weighted_vote(drawing_id, verdicts, self.gamma_exponent, negative_class)
            }
        }
    }
}

/// A drawing-level attribution.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DrawingVerdict {
    pub drawing_id: String,
    pub winner: usize,
    pub scores: Vec<f64>,
    pub strategy: StrategyKind,
    /// Strokes that actually contributed votes (≤ total strokes).
    pub n_strokes_counted: usize,
}

fn check_verdicts(verdicts: &[StrokeVerdict]) -> Result<usize> {
    if verdicts.is_empty() {
        return Err(Error::Empty("no stroke verdicts to aggregate".into()));
    }
    let n_classes = verdicts[0].posterior.len();
    for v in verdicts {
        if v.posterior.len() != n_classes {
            return Err(Error::ShapeMismatch(
                "stroke verdicts disagree on the number of classes".into(),
            ));
        }
    }
    Ok(n_classes)
}

/// Winner = argmax score; exact ties prefer the negative class when it is
/// among the leaders, then the lowest class index.
fn pick_winner(scores: &[f64], negative_class: Option<usize>) -> usize {
    let top = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if let Some(neg) = negative_class {
        if neg < scores.len() && scores[neg] == top {
            return neg;
        }
    }
    scores.iter().position(|&s| s == top).unwrap()
}

/// One equal vote per stroke, for its argmax class.
pub fn majority_vote(
    drawing_id: &str,
    verdicts: &[StrokeVerdict],
    negative_class: Option<usize>,
) -> Result<DrawingVerdict> {
    let n_classes = check_verdicts(verdicts)?;
    let mut scores = vec![0.0; n_classes];
    for v in verdicts {
        scores[v.predicted()] += 1.0;
    }
    Ok(DrawingVerdict {
        drawing_id: drawing_id.to_string(),
        winner: pick_winner(&scores, negative_class),
        scores,
        strategy: StrategyKind::Majority,
        n_strokes_counted: verdicts.len(),
    })
}

/// Per-class sum of posteriors.
pub fn posterior_aggregate(
    drawing_id: &str,
    verdicts: &[StrokeVerdict],
    negative_class: Option<usize>,
) -> Result<DrawingVerdict> {
    let n_classes = check_verdicts(verdicts)?;
    let mut scores = vec![0.0; n_classes];
    for v in verdicts {
        for (s, &p) in scores.iter_mut().zip(&v.posterior) {
            *s += p;
        }
    }
    Ok(DrawingVerdict {
        drawing_id: drawing_id.to_string(),
        winner: pick_winner(&scores, negative_class),
        scores,
        strategy: StrategyKind::Posterior,
        n_strokes_counted: verdicts.len(),
    })
}

/// Majority vote restricted to strokes whose certainty exceeds `k`
/// (strictly). When no stroke qualifies the posterior sum decides instead.
pub fn k_certain_vote(
    drawing_id: &str,
    verdicts: &[StrokeVerdict],
    k: f64,
    negative_class: Option<usize>,
) -> Result<DrawingVerdict> {
    let n_classes = check_verdicts(verdicts)?;
    let qualifying: Vec<&StrokeVerdict> =
        verdicts.iter().filter(|v| v.certainty() > k).collect();
    if qualifying.is_empty() {
        let mut fallback = posterior_aggregate(drawing_id, verdicts, negative_class)?;
        fallback.strategy = StrategyKind::KCertain;
        return Ok(fallback);
    }
    let mut scores = vec![0.0; n_classes];
    for v in &qualifying {
        scores[v.predicted()] += 1.0;
    }
    Ok(DrawingVerdict {
        drawing_id: drawing_id.to_string(),
        winner: pick_winner(&scores, negative_class),
        scores,
        strategy: StrategyKind::KCertain,
        n_strokes_counted: qualifying.len(),
    })
}

/// Each stroke votes for its argmax class with weight certainty^γ.
pub fn certainty_weighted_vote(
    drawing_id: &str,
    verdicts: &[StrokeVerdict],
    gamma_exponent: f64,
    negative_class: Option<usize>,
) -> Result<DrawingVerdict> {
    let n_classes = check_verdicts(verdicts)?;
    let mut scores = vec![0.0; n_classes];
    for v in verdicts {
        scores[v.predicted()] += v.certainty().powf(gamma_exponent);
    }
    Ok(DrawingVerdict {
        drawing_id: drawing_id.to_string(),
        winner: pick_winner(&scores, negative_class),
        scores,
        strategy: StrategyKind::CertaintyWeighted,
        n_strokes_counted: verdicts.len(),
    })
}

/// Fake rejection under a one-vs-all arrangement: the drawing is rejected
/// as not-the-artist exactly when the aggregated winner is the negative
/// ("everyone else") class.
pub fn detect_fake(verdict: &DrawingVerdict, negative_class: usize) -> bool {
    verdict.winner == negative_class
}

/// Fuse per-stroke posteriors from several models (e.g. the per-fold
/// classifiers applied to one test stroke) into one distribution: the
/// elementwise mean, renormalized.
pub fn fuse_stroke_posteriors(posteriors: &[Vec<f64>]) -> Result<Vec<f64>> {
    if posteriors.is_empty() {
        return Err(Error::Empty("no posteriors to fuse".into()));
    }
    let n = posteriors[0].len();
    let mut mean = vec![0.0; n];
    for p in posteriors {
        if p.len() != n {
            return Err(Error::ShapeMismatch("posterior lengths disagree".into()));
        }
        for (m, &v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    let sum: f64 = mean.iter().sum();
    if sum <= 0.0 {
        return Err(Error::InvalidInput("fused posterior sums to zero".into()));
    }
    for m in &mut mean {
        *m /= sum;
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(posterior: &[f64]) -> StrokeVerdict {
        StrokeVerdict::new(0, posterior.to_vec()).unwrap()
    }

    fn certain(class: usize, n_classes: usize) -> StrokeVerdict {
        let mut p = vec![0.0; n_classes];
        p[class] = 1.0;
        StrokeVerdict::new(0, p).unwrap()
    }

    #[test]
    fn verdict_validation_rejects_non_distributions() {
        assert!(StrokeVerdict::new(0, vec![0.6, 0.6]).is_err());
        assert!(StrokeVerdict::new(0, vec![]).is_err());
        assert!(StrokeVerdict::new(0, vec![1.2, -0.2]).is_err());
        assert!(StrokeVerdict::new(0, vec![0.25; 4]).is_ok());
    }

    #[test]
    fn unanimous_majority_scores_all_votes() {
        let verdicts: Vec<_> = (0..10).map(|_| certain(0, 3)).collect();
        let dv = majority_vote("d", &verdicts, None).unwrap();
        assert_eq!(dv.winner, 0);
        assert_eq!(dv.scores, vec![10.0, 0.0, 0.0]);
        assert_eq!(dv.n_strokes_counted, 10);
    }

    #[test]
    fn majority_three_to_two() {
        let mut verdicts: Vec<_> = (0..3).map(|_| certain(0, 2)).collect();
        verdicts.extend((0..2).map(|_| certain(1, 2)));
        let dv = majority_vote("d", &verdicts, None).unwrap();
        assert_eq!(dv.winner, 0);
        assert_eq!(dv.scores, vec![3.0, 2.0]);
    }

    #[test]
    fn posterior_sum_arithmetic() {
        let verdicts = vec![v(&[0.9, 0.1]), v(&[0.4, 0.6])];
        let dv = posterior_aggregate("d", &verdicts, None).unwrap();
        assert!((dv.scores[0] - 1.3).abs() < 1e-12);
        assert!((dv.scores[1] - 0.7).abs() < 1e-12);
        assert_eq!(dv.winner, 0, "first class carries the larger posterior mass");
    }

    #[test]
    fn uniform_posteriors_tie_toward_the_negative_class() {
        let verdicts = vec![v(&[0.5, 0.5]); 4];
        let dv = posterior_aggregate("d", &verdicts, Some(1)).unwrap();
        assert_eq!(dv.winner, 1, "tie must fall to the negative class");
        let dv0 = posterior_aggregate("d", &verdicts, None).unwrap();
        assert_eq!(dv0.winner, 0, "without a negative class ties fall to the lowest index");
    }

    #[test]
    fn k_certain_example_from_three_strokes() {
        let verdicts = vec![v(&[0.9, 0.1]), v(&[0.4, 0.6]), v(&[0.95, 0.05])];
        let dv = k_certain_vote("d", &verdicts, 0.85, None).unwrap();
        assert_eq!(dv.winner, 0);
        assert_eq!(dv.scores, vec![2.0, 0.0], "only the two certain strokes vote");
        assert_eq!(dv.n_strokes_counted, 2);
    }

    #[test]
    fn k_certain_falls_back_to_posterior_sum() {
        let verdicts = vec![v(&[0.6, 0.4]), v(&[0.3, 0.7]), v(&[0.55, 0.45])];
        let dv = k_certain_vote("d", &verdicts, 0.85, None).unwrap();
        let fallback = posterior_aggregate("d", &verdicts, None).unwrap();
        assert_eq!(dv.winner, fallback.winner);
        assert_eq!(dv.scores, fallback.scores);
        assert_eq!(dv.strategy, StrategyKind::KCertain);
        assert_eq!(dv.n_strokes_counted, 3);
    }

    #[test]
    fn k_sweep_qualifying_count_is_non_increasing() {
        let verdicts: Vec<_> = (0..20)
            .map(|i| {
                let p = 0.5 + 0.025 * i as f64; // certainties 0.5 … 0.975
                v(&[p, 1.0 - p])
            })
            .collect();
        let mut last = usize::MAX;
        for step in 1..20 {
            let k = step as f64 / 20.0;
            let count = verdicts.iter().filter(|s| s.certainty() > k).count();
            assert!(count <= last, "qualifying count grew as k rose");
            last = count;
        }
    }

    #[test]
    fn k_zero_equals_majority() {
        // All certainties exceed any k → every stroke qualifies. k must lie
        // in (0,1), so probe just above zero.
        let verdicts = vec![v(&[0.7, 0.3]), v(&[0.2, 0.8]), v(&[0.6, 0.4])];
        let kc = k_certain_vote("d", &verdicts, 1e-9, None).unwrap();
        let mj = majority_vote("d", &verdicts, None).unwrap();
        assert_eq!(kc.winner, mj.winner);
        assert_eq!(kc.scores, mj.scores);
        assert_eq!(kc.n_strokes_counted, mj.n_strokes_counted);
    }

    #[test]
    fn certainty_weighted_example() {
        let verdicts = vec![v(&[0.9, 0.1]), v(&[0.4, 0.6]), v(&[0.4, 0.6])];
        let dv = certainty_weighted_vote("d", &verdicts, 2.0, None).unwrap();
        assert!((dv.scores[0] - 0.81).abs() < 1e-12);
        assert!((dv.scores[1] - 0.72).abs() < 1e-12);
        assert_eq!(dv.winner, 0, "one confident stroke outweighs two hesitant ones");
    }

    #[test]
    fn gamma_one_matches_max_posterior_weighting() {
        let verdicts = vec![v(&[0.9, 0.1]), v(&[0.3, 0.7]), v(&[0.55, 0.45])];
        let dv = certainty_weighted_vote("d", &verdicts, 1.0, None).unwrap();
        let mut direct = vec![0.0; 2];
        for s in &verdicts {
            direct[s.predicted()] += s.certainty();
        }
        for (a, b) in dv.scores.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_certainties_reduce_to_majority() {
        let verdicts = vec![v(&[0.8, 0.2]), v(&[0.2, 0.8]), v(&[0.8, 0.2])];
        let cw = certainty_weighted_vote("d", &verdicts, 2.0, None).unwrap();
        let mj = majority_vote("d", &verdicts, None).unwrap();
        assert_eq!(cw.winner, mj.winner);
    }

    #[test]
    fn empty_verdict_lists_are_rejected() {
        assert!(majority_vote("d", &[], None).is_err());
        assert!(posterior_aggregate("d", &[], None).is_err());
        assert!(k_certain_vote("d", &[], 0.85, None).is_err());
        assert!(certainty_weighted_vote("d", &[], 2.0, None).is_err());
    }

    #[test]
    fn fake_rejection_flags_the_negative_winner() {
        let verdicts: Vec<_> = (0..5).map(|_| certain(1, 2)).collect();
        let dv = majority_vote("d", &verdicts, Some(1)).unwrap();
        assert!(detect_fake(&dv, 1), "all strokes negative → reject");
        let genuine: Vec<_> = (0..5).map(|_| certain(0, 2)).collect();
        let dv = majority_vote("d", &genuine, Some(1)).unwrap();
        assert!(!detect_fake(&dv, 1));
    }

    #[test]
    fn posterior_fusion_means_and_renormalizes() {
        let fused =
            fuse_stroke_posteriors(&[vec![0.8, 0.2], vec![0.4, 0.6], vec![0.6, 0.4]]).unwrap();
        assert!((fused[0] - 0.6).abs() < 1e-12);
        assert!((fused[1] - 0.4).abs() < 1e-12);
        assert!((fused.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(fuse_stroke_posteriors(&[]).is_err());
    }

    #[test]
    fn strategy_dispatch_matches_direct_calls() {
        let verdicts = vec![v(&[0.9, 0.1]), v(&[0.4, 0.6]), v(&[0.7, 0.3])];
        for kind in StrategyKind::ALL {
            let strat = AggregationStrategy::of(kind);
            let via = strat.aggregate("d", &verdicts, None).unwrap();
            let direct = match kind {
                StrategyKind::Majority => majority_vote("d", &verdicts, None),
                StrategyKind::Posterior => posterior_aggregate("d", &verdicts, None),
                StrategyKind::KCertain => k_certain_vote("d", &verdicts, 0.85, None),
                StrategyKind::CertaintyWeighted => {
                    certainty_weighted_vote("d", &verdicts, 2.0, None)
                }
            }
            .unwrap();
            assert_eq!(via.winner, direct.winner);
            assert_eq!(via.scores, direct.scores);
        }
        let bad = AggregationStrategy { k: 1.5, ..AggregationStrategy::default() };
        assert!(bad.aggregate("d", &verdicts, None).is_err());
    }

    /// Random verdict lists as (stroke posteriors over 3 classes).
    fn arb_verdicts() -> impl Strategy<Value = Vec<StrokeVerdict>> {
        prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 1..40).prop_map(|raw| {
            raw.into_iter()
                .enumerate()
                .map(|(i, mut p)| {
                    let s: f64 = p.iter().sum();
                    p.iter_mut().for_each(|x| *x /= s);
                    // Renormalize exactly enough for the 1e−9 gate.
                    StrokeVerdict::new(i, p).unwrap()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn aggregation_is_permutation_invariant(
            verdicts in arb_verdicts(),
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = verdicts.clone();
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            shuffled.shuffle(&mut rng);
            for kind in StrategyKind::ALL {
                let strat = AggregationStrategy::of(kind);
                let a = strat.aggregate("d", &verdicts, Some(2)).unwrap();
                let b = strat.aggregate("d", &shuffled, Some(2)).unwrap();
                prop_assert_eq!(a.winner, b.winner);
                prop_assert_eq!(a.n_strokes_counted, b.n_strokes_counted);
                for (x, y) in a.scores.iter().zip(&b.scores) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn unanimous_certain_verdicts_agree_across_strategies(
            class in 0usize..3,
            n in 1usize..30,
        ) {
            let verdicts: Vec<_> = (0..n).map(|_| certain(class, 3)).collect();
            for kind in StrategyKind::ALL {
                let dv = AggregationStrategy::of(kind)
                    .aggregate("d", &verdicts, Some(2))
                    .unwrap();
                prop_assert_eq!(dv.winner, class);
            }
        }

        #[test]
        fn score_ranges_hold(verdicts in arb_verdicts()) {
            let n = verdicts.len() as f64;
            let ps = posterior_aggregate("d", &verdicts, None).unwrap();
            for &s in &ps.scores {
                prop_assert!((0.0..=n).contains(&s));
            }
            prop_assert!((ps.scores.iter().sum::<f64>() - n).abs() < 1e-9);
            let mj = majority_vote("d", &verdicts, None).unwrap();
            for &s in &mj.scores {
                prop_assert_eq!(s.fract(), 0.0, "majority scores are integers");
            }
        }
    }
}
