use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// A bijection on `0..C`. Applied to a matrix, output column `i` is input column
/// `mapping[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationMap {
    mapping: Vec<usize>,
    seed: Option<u64>,
}

impl PermutationMap {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; mapping.len()];
        for &m in &mapping {
            if m >= mapping.len() || std::mem::replace(&mut seen[m], true) {
                return Err(Error::arg(format!("{mapping:?} is not a permutation")));
            }
        }
        Ok(Self {
            mapping,
            seed: None,
        })
    }

    pub fn identity(c: usize) -> Self {
        Self {
            mapping: (0..c).collect(),
            seed: None,
        }
    }

    /// Uniform over all `C!` permutations.
    pub fn random(c: usize, seed: u64) -> Self {
        Self::random_with(c, &mut ChaCha8Rng::seed_from_u64(seed)).with_seed(seed)
    }

    pub fn random_with(c: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut mapping: Vec<usize> = (0..c).collect();
        mapping.shuffle(rng);
        Self {
            mapping,
            seed: None,
        }
    }

    fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.mapping
    }

    pub fn is_identity(&self) -> bool {
        self.mapping.iter().enumerate().all(|(i, &m)| i == m)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.len()];
        for (i, &m) in self.mapping.iter().enumerate() {
            inv[m] = i;
        }
        Self {
            mapping: inv,
            seed: None,
        }
    }

    /// `self.then(other)` applies `self` first: `apply(apply(M, self), other)`.
    pub fn then(&self, other: &Self) -> Result<Self> {
        if other.len() != self.len() {
            return Err(Error::arg("composing permutations of different sizes"));
        }
        Ok(Self {
            mapping: other.mapping.iter().map(|&j| self.mapping[j]).collect(),
            seed: None,
        })
    }

    pub fn fixed_points(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.mapping[i] == i).collect()
    }

    /// Reorders a slice of per-channel items.
    pub fn apply_slice<T: Clone>(&self, items: &[T]) -> Result<Vec<T>> {
        if items.len() != self.len() {
            return Err(Error::arg(format!(
                "{} items for a permutation of {}",
                items.len(),
                self.len()
            )));
        }
        Ok(self.mapping.iter().map(|&m| items[m].clone()).collect())
    }

    /// Rows of a `C × *` matrix.
    pub fn apply_rows(&self, m: &Tensor) -> Result<Tensor> {
        let (c, d) = m.dims2()?;
        if c != self.len() {
            return Err(Error::arg(format!(
                "{c} rows for a permutation of {}",
                self.len()
            )));
        }
        let mut data = Vec::with_capacity(c * d);
        for &r in &self.mapping {
            data.extend_from_slice(m.row(r));
        }
        Tensor::new(vec![c, d], data)
    }
}

/// Columns of a `* × C` matrix: output column `i` is input column `π(i)`.
pub fn apply_permutation(m: &Tensor, pi: &PermutationMap) -> Result<Tensor> {
    let (n, c) = m.dims2()?;
    if c != pi.len() {
        return Err(Error::arg(format!(
            "{c} columns for a permutation of {}",
            pi.len()
        )));
    }
    let mut data = Vec::with_capacity(n * c);
    for t in 0..n {
        let row = m.row(t);
        data.extend(pi.as_slice().iter().map(|&j| row[j]));
    }
    Tensor::new(vec![n, c], data)
}

/// Picks `floor(fraction · C)` channels uniformly and permutes them uniformly among their
/// own positions; every other channel stays put.
pub fn sample_partial_permutation(c: usize, fraction: f64, seed: u64) -> Result<PermutationMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(partial_with(c, fraction, &mut rng)?.0.with_seed(seed))
}

/// The permutation together with the sorted subset it was allowed to move.
pub(crate) fn partial_with(
    c: usize,
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(PermutationMap, Vec<usize>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::arg(format!(
            "shuffle fraction {fraction} outside [0, 1]"
        )));
    }
    let k = ((fraction * c as f64) + 1e-9).floor() as usize;
    let k = k.min(c);
    let mut subset = rand::seq::index::sample(rng, c, k).into_vec();
    subset.sort_unstable();
    let mut targets = subset.clone();
    targets.shuffle(rng);
    let mut mapping: Vec<usize> = (0..c).collect();
    for (&pos, &src) in subset.iter().zip(&targets) {
        mapping[pos] = src;
    }
    Ok((
        PermutationMap {
            mapping,
            seed: None,
        },
        subset,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convention_on_three_columns() {
        let m = Tensor::matrix(1, 3, vec![10.0, 20.0, 30.0]).unwrap();
        let pi = PermutationMap::new(vec![2, 0, 1]).unwrap();
        let out = apply_permutation(&m, &pi).unwrap();
        assert_eq!(out.data(), &[30.0, 10.0, 20.0]);
        assert_eq!(apply_permutation(&out, &pi.inverse()).unwrap(), m);
        assert_eq!(
            apply_permutation(&m, &PermutationMap::identity(3)).unwrap(),
            m
        );
    }

    #[test]
    fn rejects_non_bijections() {
        assert!(PermutationMap::new(vec![0, 0, 1]).is_err());
        assert!(PermutationMap::new(vec![0, 3, 1]).is_err());
    }

    #[test]
    fn composition_matches_sequential_application() {
        let m = Tensor::from_fn(vec![2, 5], |i| i as f64);
        let a = PermutationMap::random(5, 1);
        let b = PermutationMap::random(5, 2);
        let seq = apply_permutation(&apply_permutation(&m, &a).unwrap(), &b).unwrap();
        let once = apply_permutation(&m, &a.then(&b).unwrap()).unwrap();
        assert_eq!(seq, once);
    }

    #[test]
    fn partial_extremes() {
        assert!(sample_partial_permutation(7, 0.0, 3).unwrap().is_identity());
        let full = sample_partial_permutation(7, 1.0, 3).unwrap();
        assert_eq!(full.len(), 7);
        assert!(PermutationMap::new(full.as_slice().to_vec()).is_ok());
    }

    #[test]
    fn partial_half_fixes_complement() {
        for seed in 0..1000 {
            let (p, subset) = partial_with(8, 0.5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(subset.len(), 4);
            let fixed = p.fixed_points();
            let complement: Vec<usize> = (0..8).filter(|i| !subset.contains(i)).collect();
            assert!(complement.iter().all(|i| fixed.contains(i)));
            assert_eq!(
                p,
                sample_partial_permutation(8, 0.5, seed)
                    .unwrap()
                    .inverse()
                    .inverse()
            );
        }
    }
}
