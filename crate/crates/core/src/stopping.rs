//! Threshold decisions, exact Bellman induction on synthetic worlds, and the
//! retrospective total-cost rule used on real data.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::synth::{joint_table, History, SyntheticWorld};
use crate::types::{CostSchedule, LossSpec, StoppingReport};

pub fn bayes_threshold(loss: &LossSpec) -> f64 {
    loss.threshold()
}

/// Expected loss of the Bayes action at risk `x`:
/// `c_FN·x` if `x ≤ c*`, else `c_FP·(1 − x)`.
pub fn acting_loss(x: f64, loss: &LossSpec) -> f64 {
    if x <= loss.threshold() {
        loss.c_fn() * x
    } else {
        loss.c_fp() * (1.0 - x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StateValue {
    /// `P(history)`
    pub probability: f64,
    pub posterior: f64,
    pub value: f64,
    pub stop: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BellmanSolution {
    /// `values[t]` maps every reachable stage-`t` history to its state.
    pub values: Vec<BTreeMap<History, StateValue>>,
    /// `V_0` at the empty history.
    pub total_cost: f64,
}

fn check_schedule(world: &SyntheticWorld, costs: &CostSchedule) -> Result<()> {
    if costs.len() != world.horizon() + 1 {
        return Err(Error::invalid(format!(
            "world with horizon {} needs {} cumulative costs, got {}",
            world.horizon(),
            world.horizon() + 1,
            costs.len()
        )));
    }
    Ok(())
}

/// Backward induction from `V_T = ℓ(X_T)`. Stopping wins ties.
pub fn bellman_solve(
    world: &SyntheticWorld,
    loss: &LossSpec,
    costs: &CostSchedule,
) -> Result<BellmanSolution> {
    check_schedule(world, costs)?;
    let table = joint_table(world);
    let horizon = world.horizon();
    let mut values: Vec<BTreeMap<History, StateValue>> = vec![BTreeMap::new(); horizon + 1];
    for (h, j) in &table[horizon] {
        let x = j.posterior();
        values[horizon].insert(
            h.clone(),
            StateValue {
                probability: j.total(),
                posterior: x,
                value: acting_loss(x, loss),
                stop: true,
            },
        );
    }
    for t in (0..horizon).rev() {
        let c_t = costs.incremental(t);
        let (done, rest) = values.split_at_mut(t + 1);
        let next = &rest[0];
        for (h, j) in &table[t] {
            let x = j.posterior();
            let mut continuation = 0.0;
            for s in 0..world.alphabets()[t] {
                let mut child = h.clone();
                child.push(s);
                if let Some(v) = next.get(&child) {
                    continuation += v.probability / j.total() * v.value;
                }
            }
            let act = acting_loss(x, loss);
            let cont = c_t + continuation;
            let stop = act <= cont;
            done[t].insert(
                h.clone(),
                StateValue {
                    probability: j.total(),
                    posterior: x,
                    value: if stop { act } else { cont },
                    stop,
                },
            );
        }
    }
    let total_cost = values[0][&Vec::new()].value;
    Ok(BellmanSolution { values, total_cost })
}

/// Largest number of decision states [`exhaustive_min_cost`] will enumerate.
pub const MAX_ENUMERATED_STATES: usize = 22;

/// Minimum expected total cost over every deterministic stopping rule, found
/// by listing all stop/continue assignments to the non-terminal histories.
pub fn exhaustive_min_cost(
    world: &SyntheticWorld,
    loss: &LossSpec,
    costs: &CostSchedule,
) -> Result<f64> {
    check_schedule(world, costs)?;
    let table = joint_table(world);
    let horizon = world.horizon();
    let mut state_ids: BTreeMap<&History, usize> = BTreeMap::new();
    for stage in &table[..horizon] {
        for h in stage.keys() {
            let id = state_ids.len();
            state_ids.insert(h, id);
        }
    }
    let k = state_ids.len();
    if k > MAX_ENUMERATED_STATES {
        return Err(Error::invalid(format!(
            "{k} decision states exceed the enumeration limit of {MAX_ENUMERATED_STATES}"
        )));
    }
    // per terminal history: probability, then (state id, stop cost) along its prefixes
    type Path = (f64, Vec<(usize, f64)>, f64);
    let paths: Vec<Path> = table[horizon]
        .iter()
        .map(|(h, j)| {
            let prefixes = (0..horizon)
                .map(|t| {
                    let prefix = &h[..t];
                    let x = table[t][prefix].posterior();
                    (
                        state_ids[&prefix.to_vec()],
                        acting_loss(x, loss) + costs.cumulative()[t],
                    )
                })
                .collect();
            let terminal = acting_loss(j.posterior(), loss) + costs.cumulative()[horizon];
            (j.total(), prefixes, terminal)
        })
        .collect();
    let mut best = f64::INFINITY;
    for policy in 0u64..(1u64 << k) {
        let cost: f64 = paths
            .iter()
            .map(|(p, prefixes, terminal)| {
                let stop = prefixes
                    .iter()
                    .find(|(id, _)| policy >> id & 1 == 1)
                    .map_or(*terminal, |&(_, c)| c);
                p * stop
            })
            .sum();
        best = best.min(cost);
    }
    Ok(best)
}

/// `E[ℓ(X_t)]` for `t = 0..=T`.
pub fn stage_expected_losses(world: &SyntheticWorld, loss: &LossSpec) -> Vec<f64> {
    joint_table(world)
        .iter()
        .map(|stage| {
            stage
                .values()
                .map(|j| j.total() * acting_loss(j.posterior(), loss))
                .sum()
        })
        .collect()
}

/// `total[t] = stage_losses[t] + cumulative[t]`; the earliest minimum is preferred.
pub fn retrospective_total_cost(
    stage_losses: &[f64],
    costs: &CostSchedule,
) -> Result<StoppingReport> {
    if stage_losses.len() != costs.len() {
        return Err(Error::invalid(format!(
            "{} stage losses but {} cumulative costs",
            stage_losses.len(),
            costs.len()
        )));
    }
    let total_cost: Vec<f64> = stage_losses
        .iter()
        .zip(costs.cumulative())
        .map(|(l, c)| l + c)
        .collect();
    let mut preferred_stage = 0;
    for (t, &v) in total_cost.iter().enumerate() {
        if v < total_cost[preferred_stage] {
            preferred_stage = t;
        }
    }
    Ok(StoppingReport {
        decision_loss: stage_losses.to_vec(),
        cumulative_cost: costs.cumulative().to_vec(),
        total_cost,
        preferred_stage,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub schedule: Vec<f64>,
    pub total_cost: Vec<f64>,
    pub preferred_stage: usize,
}

pub fn sensitivity_sweep(
    stage_losses: &[f64],
    schedules: &[CostSchedule],
) -> Result<Vec<SweepRow>> {
    if schedules.is_empty() {
        return Err(Error::invalid(
            "sensitivity sweep needs at least one schedule",
        ));
    }
    schedules
        .iter()
        .map(|s| {
            let r = retrospective_total_cost(stage_losses, s)?;
            Ok(SweepRow {
                schedule: s.cumulative().to_vec(),
                total_cost: r.total_cost,
                preferred_stage: r.preferred_stage,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::StageSignals;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn loss(c_fp: f64, c_fn: f64) -> LossSpec {
        LossSpec::new(c_fp, c_fn).unwrap()
    }

    fn schedule(v: &[f64]) -> CostSchedule {
        CostSchedule::new(v.to_vec()).unwrap()
    }

    #[test]
    fn thresholds() {
        assert!((bayes_threshold(&loss(1.0, 5.0)) - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(bayes_threshold(&loss(1.0, 1.0)), 0.5);
        assert!((bayes_threshold(&loss(1.0, 10.0)) - 1.0 / 11.0).abs() < 1e-15);
        assert_eq!(
            bayes_threshold(&loss(3.0, 15.0)),
            bayes_threshold(&loss(1.0, 5.0))
        );
    }

    #[test]
    fn acting_loss_branches() {
        let l = loss(1.0, 5.0);
        assert_eq!(acting_loss(0.0, &l), 0.0);
        assert!((acting_loss(0.1, &l) - 0.5).abs() < 1e-15);
        let c = l.threshold();
        let below = l.c_fn() * c;
        let above = l.c_fp() * (1.0 - c);
        assert!((below - above).abs() < 1e-15);
        assert!((acting_loss(c, &l) - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn retrospective_examples() {
        let r = retrospective_total_cost(&[0.486, 0.424, 0.416], &schedule(&[0.0, 0.02, 0.06]))
            .unwrap();
        let expected = [0.486, 0.444, 0.476];
        for (a, b) in r.total_cost.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(r.preferred_stage, 1);

        let r = retrospective_total_cost(&[0.446, 0.437, 0.448], &schedule(&[0.0, 0.01, 0.03]))
            .unwrap();
        assert_eq!(r.preferred_stage, 0);

        let r = retrospective_total_cost(&[0.3, 0.2, 0.2], &CostSchedule::free(3)).unwrap();
        assert_eq!(r.preferred_stage, 1);
        assert!(retrospective_total_cost(&[0.3], &CostSchedule::free(3)).is_err());
    }

    #[test]
    fn sweep_examples() {
        let rows = sensitivity_sweep(
            &[0.918, 0.911, 0.816],
            &[schedule(&[0.0, 0.01, 0.1]), CostSchedule::free(3)],
        )
        .unwrap();
        assert_eq!(rows[0].preferred_stage, 2);
        assert!((rows[0].total_cost[2] - 0.916).abs() < 1e-12);
        assert_eq!(rows[1].preferred_stage, 2);
        assert!(sensitivity_sweep(&[0.1], &[]).is_err());
    }

    fn revealing_world() -> SyntheticWorld {
        SyntheticWorld::new(
            0.5,
            vec![StageSignals {
                given_negative: vec![vec![1.0, 0.0]],
                given_positive: vec![vec![0.0, 1.0]],
                coarsening: None,
            }],
        )
        .unwrap()
    }

    #[test]
    fn revealing_stage_worth_a_cheap_test() {
        let l = loss(1.0, 1.0);
        let cheap = bellman_solve(&revealing_world(), &l, &schedule(&[0.0, 0.1])).unwrap();
        assert!(!cheap.values[0][&vec![]].stop);
        assert!((cheap.total_cost - 0.1).abs() < 1e-15);
        let dear = bellman_solve(&revealing_world(), &l, &schedule(&[0.0, 0.6])).unwrap();
        assert!(dear.values[0][&vec![]].stop);
        assert!((dear.total_cost - 0.5).abs() < 1e-15);
    }

    #[test]
    fn uninformative_world_stops_immediately() {
        let flat = vec![vec![0.25; 4]];
        let world = SyntheticWorld::new(
            0.3,
            vec![
                StageSignals {
                    given_negative: flat.clone(),
                    given_positive: flat,
                    coarsening: None,
                },
                StageSignals {
                    given_negative: vec![vec![0.5, 0.5]; 4],
                    given_positive: vec![vec![0.5, 0.5]; 4],
                    coarsening: None,
                },
            ],
        )
        .unwrap();
        let sol = bellman_solve(&world, &loss(1.0, 5.0), &schedule(&[0.0, 0.01, 0.02])).unwrap();
        for t in 0..2 {
            assert!(sol.values[t].values().all(|v| v.stop));
        }
    }

    #[test]
    fn schedule_length_must_match_horizon() {
        assert!(
            bellman_solve(&revealing_world(), &loss(1.0, 1.0), &CostSchedule::free(3)).is_err()
        );
    }

    #[test]
    fn value_dominated_by_acting_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let shape: Vec<usize> = (0..rng.random_range(1..=3))
                .map(|_| rng.random_range(1..=3))
                .collect();
            let world = SyntheticWorld::random(&mut rng, &shape, false);
            let l = loss(1.0, rng.random_range(1.0..10.0));
            let mut cum = vec![0.0];
            for _ in 0..shape.len() {
                let last = *cum.last().unwrap();
                cum.push(last + rng.random_range(0.0..0.05));
            }
            let sol = bellman_solve(&world, &l, &schedule(&cum)).unwrap();
            for stage in &sol.values {
                for s in stage.values() {
                    assert!(s.value <= acting_loss(s.posterior, &l) + 1e-15);
                }
            }
            let retro =
                retrospective_total_cost(&stage_expected_losses(&world, &l), &schedule(&cum))
                    .unwrap();
            for total in retro.total_cost {
                assert!(total >= sol.total_cost - 1e-12);
            }
        }
    }
}
