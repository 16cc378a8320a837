use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Random partition of observations into `k` folds of near-equal size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Fold id of every observation.
    pub assignment: Vec<u8>,
}

impl FoldPlan {
    /// Shuffle the observation indices and deal them round-robin, so the
    /// first `n mod k` folds hold one extra observation.
    pub fn new(n: usize, k: usize, seed: u64) -> Result<Self> {
        if !(2..=u8::MAX as usize).contains(&k) {
            return Err(Error::config(format!("fold count {k} must be between 2 and 255")));
        }
        if n < k {
            return Err(Error::data(format!("{n} observations cannot fill {k} folds")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut assignment = vec![0u8; n];
        for (pos, &i) in order.iter().enumerate() {
            assignment[i] = (pos % k) as u8;
        }
        Ok(FoldPlan { k, seed, assignment })
    }

    pub fn n_observations(&self) -> usize {
        self.assignment.len()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.assignment.len() != n {
            return Err(Error::structural(format!(
                "fold plan covers {} observations, data has {n}",
                self.assignment.len()
            )));
        }
        let sizes = self.sizes();
        if let Some(f) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::data(format!("fold {f} has zero observations")));
        }
        if self.assignment.iter().any(|&f| f as usize >= self.k) {
            return Err(Error::structural("fold id out of range"));
        }
        Ok(())
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.assignment {
            if (f as usize) < self.k {
                s[f as usize] += 1;
            }
        }
        s
    }

    /// Training and held-out observation indices of fold `f`, ascending.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let (mut train, mut held) = (Vec::new(), Vec::new());
        for (i, &g) in self.assignment.iter().enumerate() {
            if g as usize == f {
                held.push(i);
            } else {
                train.push(i);
            }
        }
        (train, held)
    }
}
