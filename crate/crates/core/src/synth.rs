//! Finite staged-information worlds with exact conditional expectations.
//!
//! A world draws `D ~ Bernoulli(θ)` and then one signal per stage, each from a
//! finite alphabet, with a distribution depending on `D` and on every earlier
//! signal. A stage-`t` history is the tuple of the first `t` signals.
//! Optional coarsenings label each stage-`t` history with a cell; since a
//! label is a function of the full history, the coarse information is always
//! contained in the full information.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SUM_TOLERANCE: f64 = 1e-12;
/// Floor on every generated signal probability.
pub const MIN_RANDOM_PROBABILITY: f64 = 0.05;

pub type History = Vec<usize>;

/// Signal distributions for one stage, one row per previous-stage history
/// (mixed-radix order of earlier signals).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSignals {
    pub given_negative: Vec<Vec<f64>>,
    pub given_positive: Vec<Vec<f64>>,
    /// Cell label of every stage history (this stage's signal included).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarsening: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWorld", into = "RawWorld")]
pub struct SyntheticWorld {
    prior: f64,
    alphabets: Vec<usize>,
    stages: Vec<StageSignals>,
}

#[derive(Serialize, Deserialize)]
struct RawWorld {
    prior: f64,
    stages: Vec<StageSignals>,
}

impl TryFrom<RawWorld> for SyntheticWorld {
    type Error = Error;

    fn try_from(raw: RawWorld) -> Result<Self> {
        SyntheticWorld::new(raw.prior, raw.stages)
    }
}

impl From<SyntheticWorld> for RawWorld {
    fn from(world: SyntheticWorld) -> Self {
        RawWorld {
            prior: world.prior,
            stages: world.stages,
        }
    }
}

fn check_distribution(row: &[f64], what: impl Fn() -> String) -> Result<()> {
    if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid(format!("{}: entries outside [0,1]", what())));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::invalid(format!("{}: sums to {sum}", what())));
    }
    Ok(())
}

impl SyntheticWorld {
    pub fn new(prior: f64, stages: Vec<StageSignals>) -> Result<Self> {
        if !(prior > 0.0 && prior < 1.0) {
            return Err(Error::invalid(format!("prior {prior} outside (0,1)")));
        }
        let mut alphabets = Vec::with_capacity(stages.len());
        let mut histories = 1usize;
        for (t, stage) in stages.iter().enumerate() {
            let stage_no = t + 1;
            if stage.given_negative.len() != histories || stage.given_positive.len() != histories {
                return Err(Error::invalid(format!(
                    "stage {stage_no} needs {histories} rows per class"
                )));
            }
            let a = stage.given_negative.first().map_or(0, Vec::len);
            if a == 0 {
                return Err(Error::invalid(format!(
                    "stage {stage_no} has an empty alphabet"
                )));
            }
            for (h, (neg, pos)) in stage
                .given_negative
                .iter()
                .zip(&stage.given_positive)
                .enumerate()
            {
                if neg.len() != a || pos.len() != a {
                    return Err(Error::invalid(format!(
                        "stage {stage_no}, history {h}: alphabet size differs from {a}"
                    )));
                }
                check_distribution(neg, || format!("stage {stage_no}, history {h}, D=0"))?;
                check_distribution(pos, || format!("stage {stage_no}, history {h}, D=1"))?;
            }
            histories *= a;
            if let Some(cells) = &stage.coarsening {
                if cells.len() != histories {
                    return Err(Error::invalid(format!(
                        "stage {stage_no} coarsening labels {} of {histories} histories",
                        cells.len()
                    )));
                }
            }
            alphabets.push(a);
        }
        let coarse = stages.iter().filter(|s| s.coarsening.is_some()).count();
        if coarse != 0 && coarse != stages.len() {
            return Err(Error::invalid(
                "coarsening must be given for every stage or none",
            ));
        }
        Ok(Self {
            prior,
            alphabets,
            stages,
        })
    }

    /// Random world: `θ ∈ [0.05, 0.95]` and every signal probability at
    /// least 0.05. With `coarsened`, adds a decreasing coarsening chain.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, alphabets: &[usize], coarsened: bool) -> Self {
        let prior = rng.random_range(0.05..=0.95);
        let mut stages = Vec::with_capacity(alphabets.len());
        let mut histories = 1;
        let mut previous_cells: Option<Vec<usize>> = None;
        for &a in alphabets {
            let mut draw = || -> Vec<Vec<f64>> {
                (0..histories)
                    .map(|_| random_distribution(rng, a))
                    .collect()
            };
            let given_negative = draw();
            let given_positive = draw();
            let next = histories * a;
            let coarsening = coarsened.then(|| match &previous_cells {
                None => {
                    let k = rng.random_range(1..=next);
                    (0..next)
                        .map(|_| rng.random_range(0..k))
                        .collect::<Vec<_>>()
                }
                Some(prev) => {
                    let k_prev = prev.iter().max().map_or(1, |m| m + 1);
                    let k = rng.random_range(1..=k_prev);
                    let merge: Vec<usize> = (0..k_prev).map(|_| rng.random_range(0..k)).collect();
                    (0..next).map(|h| merge[prev[h / a]]).collect()
                }
            });
            previous_cells = coarsening.clone();
            stages.push(StageSignals {
                given_negative,
                given_positive,
                coarsening,
            });
            histories = next;
        }
        Self::new(prior, stages).expect("generated world is valid")
    }

    pub fn prior(&self) -> f64 {
        self.prior
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn alphabets(&self) -> &[usize] {
        &self.alphabets
    }

    pub fn stages(&self) -> &[StageSignals] {
        &self.stages
    }

    pub fn has_coarsening(&self) -> bool {
        self.stages.first().is_some_and(|s| s.coarsening.is_some())
    }

    /// Number of distinct stage-`t` histories.
    pub fn n_histories(&self, t: usize) -> usize {
        self.alphabets[..t].iter().product()
    }

    /// Mixed-radix index of a history among histories of the same length.
    pub fn history_index(&self, history: &[usize]) -> usize {
        history
            .iter()
            .zip(&self.alphabets)
            .fold(0, |acc, (&s, &a)| acc * a + s)
    }

    /// P(signal_{t+1} = s | D, history) for a stage-`t` history.
    pub fn emission(&self, history: &[usize], positive: bool, signal: usize) -> f64 {
        let stage = &self.stages[history.len()];
        let rows = if positive {
            &stage.given_positive
        } else {
            &stage.given_negative
        };
        rows[self.history_index(history)][signal]
    }

    /// Coarse cell of a stage-`t` history; stage 0 is a single cell.
    pub fn cell(&self, history: &[usize]) -> Option<usize> {
        if history.is_empty() {
            return Some(0);
        }
        self.stages[history.len() - 1]
            .coarsening
            .as_ref()
            .map(|cells| cells[self.history_index(history)])
    }
}

fn random_distribution<R: Rng + ?Sized>(rng: &mut R, a: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..a).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = w.iter().sum();
    let free = 1.0 - MIN_RANDOM_PROBABILITY * a as f64;
    let mut p: Vec<f64> = w
        .iter()
        .map(|x| MIN_RANDOM_PROBABILITY + free * x / total)
        .collect();
    // absorb rounding so the row sums to one
    let drift: f64 = p.iter().sum::<f64>() - 1.0;
    p[a - 1] -= drift;
    p
}

/// Joint probabilities `P(history, D = 0)` and `P(history, D = 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Joint {
    pub negative: f64,
    pub positive: f64,
}

impl Joint {
    pub fn total(&self) -> f64 {
        self.negative + self.positive
    }

    pub fn posterior(&self) -> f64 {
        self.positive / self.total()
    }
}

/// Joint table per stage `0..=T`, keeping only positive-probability histories.
pub fn joint_table(world: &SyntheticWorld) -> Vec<BTreeMap<History, Joint>> {
    let mut table = Vec::with_capacity(world.horizon() + 1);
    let mut current = BTreeMap::new();
    current.insert(
        Vec::new(),
        Joint {
            negative: 1.0 - world.prior,
            positive: world.prior,
        },
    );
    for t in 0..world.horizon() {
        let mut next = BTreeMap::new();
        for (h, j) in &current {
            for s in 0..world.alphabets[t] {
                let child = Joint {
                    negative: j.negative * world.emission(h, false, s),
                    positive: j.positive * world.emission(h, true, s),
                };
                if child.total() > 0.0 {
                    let mut key = h.clone();
                    key.push(s);
                    next.insert(key, child);
                }
            }
        }
        table.push(current);
        current = next;
    }
    table.push(current);
    table
}

/// `X_t(h) = P(D = 1 | h)` for every positive-probability history, stages `0..=T`.
pub fn exact_posteriors(world: &SyntheticWorld) -> Vec<BTreeMap<History, f64>> {
    joint_table(world)
        .into_iter()
        .map(|stage| stage.into_iter().map(|(h, j)| (h, j.posterior())).collect())
        .collect()
}

/// `Y_t(cell) = P(D = 1 | cell)` for stages `0..=T`.
pub fn exact_projections(world: &SyntheticWorld) -> Result<Vec<BTreeMap<usize, f64>>> {
    if !world.has_coarsening() {
        return Err(Error::invalid("world has no coarsening"));
    }
    Ok(joint_table(world)
        .iter()
        .map(|stage| {
            let mut cells: BTreeMap<usize, Joint> = BTreeMap::new();
            for (h, j) in stage {
                let c = world.cell(h).expect("coarsening present");
                let e = cells.entry(c).or_insert(Joint {
                    negative: 0.0,
                    positive: 0.0,
                });
                e.negative += j.negative;
                e.positive += j.positive;
            }
            cells.into_iter().map(|(c, j)| (c, j.posterior())).collect()
        })
        .collect())
}

/// A complete trajectory with its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub history: History,
    pub positive: bool,
    pub probability: f64,
}

/// Every terminal (history, D) pair with positive probability.
pub fn outcomes(world: &SyntheticWorld) -> Vec<Outcome> {
    let table = joint_table(world);
    let last = table.last().expect("stage 0 always present");
    last.iter()
        .flat_map(|(h, j)| {
            [(false, j.negative), (true, j.positive)]
                .into_iter()
                .filter(|(_, p)| *p > 0.0)
                .map(|(positive, probability)| Outcome {
                    history: h.clone(),
                    positive,
                    probability,
                })
        })
        .collect()
}

/// Largest `|E[X_{t+1} | h] − X_t(h)|` when the supplied posterior tables
/// are checked against the world's transition law.
pub fn martingale_violation(world: &SyntheticWorld, posteriors: &[BTreeMap<History, f64>]) -> f64 {
    let table = joint_table(world);
    let mut worst: f64 = 0.0;
    for t in 0..world.horizon() {
        for (h, j) in &table[t] {
            let mut expected = 0.0;
            for s in 0..world.alphabets[t] {
                let mut child = h.clone();
                child.push(s);
                if let (Some(cj), Some(x)) =
                    (table[t + 1].get(&child), posteriors[t + 1].get(&child))
                {
                    expected += cj.total() / j.total() * x;
                }
            }
            let x_t = posteriors[t].get(h).copied().unwrap_or(f64::NAN);
            let gap = (expected - x_t).abs();
            worst = if gap.is_nan() {
                f64::INFINITY
            } else {
                worst.max(gap)
            };
        }
    }
    worst
}

pub fn martingale_check(world: &SyntheticWorld) -> f64 {
    martingale_violation(world, &exact_posteriors(world))
}

/// Checks that the coarse cells of stage `t + 1` are unions of stage-`t`
/// cells (cell of `(h, s)` determined by the cell of `h`) for `t = 1..T−1`.
pub fn check_decreasing_chain(world: &SyntheticWorld) -> Result<()> {
    if !world.has_coarsening() {
        return Err(Error::invalid("world has no coarsening"));
    }
    for t in 1..world.horizon() {
        let a = world.alphabets[t];
        let prev = world.stages[t - 1].coarsening.as_ref().expect("checked");
        let next = world.stages[t].coarsening.as_ref().expect("checked");
        let mut map: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for (idx, &cell) in next.iter().enumerate() {
            let parent = prev[idx / a];
            match map.get(&parent) {
                Some(&(seen, at)) if seen != cell => {
                    return Err(Error::invalid(format!(
                        "coarsening chain is not decreasing: stage {} cell {parent} maps to \
                         cells {seen} (history {at}) and {cell} (history {idx}) at stage {}",
                        t,
                        t + 1
                    )));
                }
                Some(_) => {}
                None => {
                    map.insert(parent, (cell, idx));
                }
            }
        }
    }
    Ok(())
}

/// Largest `|E[Y_t | G_{t+1}] − Y_{t+1}|` over stages `1..T`.
pub fn reverse_martingale_check(world: &SyntheticWorld) -> Result<f64> {
    check_decreasing_chain(world)?;
    let table = joint_table(world);
    let projections = exact_projections(world)?;
    let mut worst: f64 = 0.0;
    for t in 1..world.horizon() {
        // cell at t+1 → (mass, mass-weighted Y_t)
        let mut acc: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
        for (h, j) in &table[t + 1] {
            let fine = world.cell(&h[..t]).expect("coarsening present");
            let y_t = projections[t][&fine];
            let e = acc
                .entry(world.cell(h).expect("coarsening present"))
                .or_default();
            e.0 += j.total();
            e.1 += j.total() * y_t;
        }
        for (cell, (mass, weighted)) in acc {
            worst = worst.max((weighted / mass - projections[t + 1][&cell]).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub history: History,
    pub positive: bool,
}

/// `n` i.i.d. trajectories. Trajectory `i` uses stream `i` of a ChaCha8
/// generator keyed by `seed`, so any subset can be regenerated independently.
pub fn sample_trajectories(world: &SyntheticWorld, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    Ok((0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let positive = rng.random::<f64>() < world.prior;
            let mut history = Vec::with_capacity(world.horizon());
            for t in 0..world.horizon() {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut signal = world.alphabets[t] - 1;
                for s in 0..world.alphabets[t] {
                    acc += world.emission(&history, positive, s);
                    if u < acc {
                        signal = s;
                        break;
                    }
                }
                history.push(signal);
            }
            Trajectory { history, positive }
        })
        .collect())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn bayes_example() -> SyntheticWorld {
        SyntheticWorld::new(
            0.5,
            vec![StageSignals {
                given_negative: vec![vec![0.8, 0.2]],
                given_positive: vec![vec![0.2, 0.8]],
                coarsening: Some(vec![0, 1]),
            }],
        )
        .unwrap()
    }

    pub(crate) fn random_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
        let t = rng.random_range(1..=4);
        (0..t).map(|_| rng.random_range(1..=4)).collect()
    }

    #[test]
    fn bayes_rule_example() {
        let x = exact_posteriors(&bayes_example());
        assert!((x[1][&vec![1]] - 0.8).abs() < 1e-15);
        assert!((x[1][&vec![0]] - 0.2).abs() < 1e-15);
        assert_eq!(x[0][&vec![]], 0.5);
    }

    #[test]
    fn uninformative_signals_keep_prior() {
        let world = SyntheticWorld::new(
            0.3,
            vec![StageSignals {
                given_negative: vec![vec![0.5, 0.5]],
                given_positive: vec![vec![0.5, 0.5]],
                coarsening: None,
            }],
        )
        .unwrap();
        for stage in exact_posteriors(&world) {
            for x in stage.values() {
                assert!((x - 0.3).abs() < 1e-15);
            }
        }
        assert_eq!(martingale_check(&world), 0.0);
    }

    #[test]
    fn revealing_signal_drops_impossible_histories() {
        let world = SyntheticWorld::new(
            0.4,
            vec![StageSignals {
                given_negative: vec![vec![1.0, 0.0]],
                given_positive: vec![vec![0.0, 1.0]],
                coarsening: None,
            }],
        )
        .unwrap();
        let x = exact_posteriors(&world);
        assert_eq!(x[1][&vec![0]], 0.0);
        assert_eq!(x[1][&vec![1]], 1.0);
    }

    #[test]
    fn invalid_worlds_rejected() {
        let bad = StageSignals {
            given_negative: vec![vec![0.5, 0.6]],
            given_positive: vec![vec![0.5, 0.5]],
            coarsening: None,
        };
        assert!(SyntheticWorld::new(0.5, vec![bad]).is_err());
        assert!(SyntheticWorld::new(1.0, vec![]).is_err());
    }

    #[test]
    fn projections_of_trivial_coarsenings() {
        let mut world = bayes_example();
        let full = exact_projections(&world).unwrap();
        assert!((full[1][&1] - 0.8).abs() < 1e-15);
        world.stages[0].coarsening = Some(vec![0, 0]);
        let single = exact_projections(&world).unwrap();
        assert!((single[1][&0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn random_worlds_are_martingales() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let shape = random_shape(&mut rng);
            let world = SyntheticWorld::random(&mut rng, &shape, true);
            assert!(martingale_check(&world) <= 1e-12);
            assert!(reverse_martingale_check(&world).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn corrupted_posterior_table_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let world = SyntheticWorld::random(&mut rng, &[2, 3], false);
        let mut x = exact_posteriors(&world);
        *x[2].get_mut(&vec![1, 2]).unwrap() += 0.05;
        assert!(martingale_violation(&world, &x) > 1e-3);
    }

    #[test]
    fn non_decreasing_chain_rejected() {
        let world = SyntheticWorld::new(
            0.5,
            vec![
                StageSignals {
                    given_negative: vec![vec![0.7, 0.3]],
                    given_positive: vec![vec![0.4, 0.6]],
                    coarsening: Some(vec![0, 0]),
                },
                StageSignals {
                    given_negative: vec![vec![0.5, 0.5], vec![0.1, 0.9]],
                    given_positive: vec![vec![0.2, 0.8], vec![0.6, 0.4]],
                    // splits the single stage-1 cell
                    coarsening: Some(vec![0, 1, 0, 1]),
                },
            ],
        )
        .unwrap();
        let err = reverse_martingale_check(&world).unwrap_err();
        assert!(err.to_string().contains("not decreasing"), "{err}");
    }

    #[test]
    fn sampling_is_seeded_and_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let world = SyntheticWorld::random(&mut rng, &[2, 2], false);
        assert!(sample_trajectories(&world, 0, 1).is_err());
        let a = sample_trajectories(&world, 10_000, 99).unwrap();
        assert_eq!(a, sample_trajectories(&world, 10_000, 99).unwrap());
        let freq = a.iter().filter(|t| t.positive).count() as f64 / 10_000.0;
        let theta = world.prior();
        let se = (theta * (1.0 - theta) / 10_000.0).sqrt();
        assert!((freq - theta).abs() <= 3.0 * se, "{freq} vs {theta}");
    }

    #[test]
    fn toml_round_trip() {
        let world = bayes_example();
        let text = toml::to_string(&world).unwrap();
        let back: SyntheticWorld = toml::from_str(&text).unwrap();
        assert_eq!(world, back);
        let broken = text.replace("0.8", "0.9");
        assert!(toml::from_str::<SyntheticWorld>(&broken).is_err());
    }
}
