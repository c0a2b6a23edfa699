//! Stratified shuffled train / validation / test splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed::mix_seed;

/// Number of shuffles in every trial plan.
pub const SHUFFLES: usize = 10;

const SPLIT_STREAM: u64 = 0x5350_4c54;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split fractions must be in [0, 1] and sum to 1, got {parts:?}"
            )));
        }
        if self.train == 0.0 {
            return Err(Error::invalid("training fraction must be positive"));
        }
        Ok(())
    }
}

/// Disjoint index sets covering a dataset; every list is sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub shuffle_index: usize,
    pub seed: u64,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

impl SplitPlan {
    /// SHA-256 over the seed and the three index lists.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for part in [&self.train_idx, &self.val_idx, &self.test_idx] {
            h.update((part.len() as u64).to_le_bytes());
            for &i in part {
                h.update((i as u64).to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }

    pub fn len(&self) -> usize {
        self.train_idx.len() + self.val_idx.len() + self.test_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Members of every class, by class index.
fn strata(labels: &[usize]) -> Vec<Vec<usize>> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); k];
    for (i, &c) in labels.iter().enumerate() {
        out[c].push(i);
    }
    out
}

/// Per-class `[test, val, train]` counts. Every cell is the floor or ceiling
/// of its exact share, each class sums to its size, and the test and
/// validation totals are `round(fraction * n)`. Round-ups go to the largest
/// fractional parts first, smaller class index on ties.
fn apportion(sizes: &[usize], fractions: SplitFractions) -> Vec<[usize; 3]> {
    let n: usize = sizes.iter().sum();
    let parts = [fractions.test, fractions.val, fractions.train];
    let exact: Vec<[f64; 3]> = sizes.iter().map(|&s| parts.map(|f| s as f64 * f)).collect();
    let mut counts: Vec<[usize; 3]> = exact.iter().map(|e| e.map(|x| x.floor() as usize)).collect();
    // Round-ups each class still needs to reach its size.
    let mut need: Vec<usize> = sizes
        .iter()
        .zip(&counts)
        .map(|(&s, c)| s - c.iter().sum::<usize>())
        .collect();
    let by_remainder = |p: usize| {
        let mut order: Vec<usize> = (0..sizes.len()).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (exact[a][p] - exact[a][p].floor(), exact[b][p] - exact[b][p].floor());
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        order
    };
    let floor_total = |counts: &[[usize; 3]], p: usize| counts.iter().map(|c| c[p]).sum::<usize>();
    let test_ups = ((parts[0] * n as f64).round() as usize).saturating_sub(floor_total(&counts, 0));
    let val_ups = ((parts[1] * n as f64).round() as usize).saturating_sub(floor_total(&counts, 1));

    let mut test: Vec<usize> = by_remainder(0).into_iter().filter(|&c| need[c] > 0).take(test_ups).collect();
    // Classes needing two round-ups but skipped by test must take one in
    // both val and train; swap test slots until val can absorb them.
    loop {
        let forced: Vec<usize> = by_remainder(0)
            .into_iter()
            .filter(|c| need[*c] == 2 && !test.contains(c))
            .collect();
        if forced.len() <= val_ups {
            break;
        }
        let Some(pos) = test.iter().rposition(|&c| need[c] < 2) else { break };
        test.remove(pos);
        test.push(forced[0]);
    }
    for &c in &test {
        counts[c][0] += 1;
        need[c] -= 1;
    }
    let mut val: Vec<usize> = (0..sizes.len()).filter(|&c| need[c] == 2).collect();
    val.extend(by_remainder(1).into_iter().filter(|&c| need[c] == 1));
    for &c in val.iter().take(val_ups) {
        counts[c][1] += 1;
        need[c] -= 1;
    }
    for (c, count) in counts.iter_mut().enumerate() {
        count[2] += need[c];
    }
    counts
}

/// Splits `labels` so that each part holds its fraction of every class to
/// within one sample. Classes with fewer than three members are rejected.
pub fn stratified_shuffle_split(labels: &[usize], fractions: SplitFractions, seed: u64) -> Result<SplitPlan> {
    fractions.validate()?;
    let strata = strata(labels);
    for (c, members) in strata.iter().enumerate() {
        if !members.is_empty() && members.len() < 3 {
            return Err(Error::invalid(format!(
                "class {c} has {} samples; stratified splitting needs at least 3",
                members.len()
            )));
        }
    }
    let sizes: Vec<usize> = strata.iter().map(Vec::len).collect();
    let counts = apportion(&sizes, fractions);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = SplitPlan {
        shuffle_index: 0,
        seed,
        train_idx: Vec::new(),
        val_idx: Vec::new(),
        test_idx: Vec::new(),
    };
    for (mut members, &[nt, nv, _]) in strata.into_iter().zip(&counts) {
        members.shuffle(&mut rng);
        let (test, rest) = members.split_at(nt);
        let (val, train) = rest.split_at(nv);
        plan.test_idx.extend_from_slice(test);
        plan.val_idx.extend_from_slice(val);
        plan.train_idx.extend_from_slice(train);
    }
    plan.train_idx.sort_unstable();
    plan.val_idx.sort_unstable();
    plan.test_idx.sort_unstable();
    Ok(plan)
}

/// The fixed splits shared by every cell of a trial.
pub fn plan_splits(labels: &[usize], fractions: SplitFractions, base_seed: u64) -> Result<Vec<SplitPlan>> {
    (0..SHUFFLES)
        .map(|s| {
            let mut plan = stratified_shuffle_split(labels, fractions, mix_seed(&[base_seed, SPLIT_STREAM, s as u64]))?;
            plan.shuffle_index = s;
            Ok(plan)
        })
        .collect()
}
