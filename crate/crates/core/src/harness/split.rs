use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::SplitPlan;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Each class contributes `⌊count · fraction⌋` shuffled members to the
/// training fold and the rest to the test fold. Both folds come back sorted.
pub fn stratified_split(labels: &[bool], rep: usize, plan: &SplitPlan) -> Result<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.rep_seed(rep));
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [false, true] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < 2 {
            return Err(Error::invalid(format!(
                "class {} has {} members; stratified splitting needs at least 2",
                u8::from(class),
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let k = (members.len() as f64 * plan.train_fraction() + 1e-9).floor() as usize;
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_and_ten_gives_seven_and_seven() {
        let labels: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
        let plan = SplitPlan::new(1, 5, 0.7).unwrap();
        let s = stratified_split(&labels, 0, &plan).unwrap();
        assert_eq!(s.train.iter().filter(|&&i| labels[i]).count(), 7);
        assert_eq!(s.train.len(), 14);
        assert_eq!(s.test.len(), 6);
    }

    #[test]
    fn split_is_a_partition_and_deterministic() {
        let labels: Vec<bool> = (0..97).map(|i| i % 3 == 0).collect();
        let plan = SplitPlan::new(2026, 10, 0.7).unwrap();
        for rep in 0..10 {
            let s = stratified_split(&labels, rep, &plan).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..97).collect::<Vec<_>>());
            assert_eq!(s, stratified_split(&labels, rep, &plan).unwrap());
            let pos = labels.iter().filter(|&&y| y).count() as f64;
            let train_pos = s.train.iter().filter(|&&i| labels[i]).count() as f64;
            assert!((train_pos / s.train.len() as f64 - pos / 97.0).abs() <= 1.0 / pos);
        }
        let a = stratified_split(&labels, 0, &plan).unwrap();
        let b = stratified_split(&labels, 1, &plan).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn tiny_class_rejected() {
        let labels = vec![true, false, false, false];
        let plan = SplitPlan::new(0, 1, 0.7).unwrap();
        assert!(stratified_split(&labels, 0, &plan).is_err());
    }
}
