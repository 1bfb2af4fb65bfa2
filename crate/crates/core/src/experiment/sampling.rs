//! Seeded few-shot sampling and train/validation halving.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::template::Example;

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotSplit {
    pub d_train: Vec<Example>,
    pub d_valid: Vec<Example>,
    pub seed: u64,
    pub n: usize,
}

impl FewShotSplit {
    pub fn empty(seed: u64) -> Self {
        Self {
            d_train: Vec::new(),
            d_valid: Vec::new(),
            seed,
            n: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// Per-class sample sizes: `n / C` each, remainder to the lowest class indices.
pub fn stratified_counts(n: usize, num_labels: usize) -> Vec<usize> {
    let base = n / num_labels;
    let extra = n % num_labels;
    (0..num_labels).map(|y| base + usize::from(y < extra)).collect()
}

/// How many of each class go to the training half: `⌊c/2⌋`, plus one for
/// odd-sized classes (lowest index first) until the half reaches `⌈n/2⌉`.
pub fn train_counts(class_counts: &[usize]) -> Vec<usize> {
    let n: usize = class_counts.iter().sum();
    let mut out: Vec<usize> = class_counts.iter().map(|c| c / 2).collect();
    let mut missing = n.div_ceil(2) - out.iter().sum::<usize>();
    for (y, c) in class_counts.iter().enumerate() {
        if missing == 0 {
            break;
        }
        if c % 2 == 1 {
            out[y] += 1;
            missing -= 1;
        }
    }
    out
}

fn by_class(pool: &[Example], num_labels: usize) -> Result<Vec<Vec<usize>>> {
    let mut out = vec![Vec::new(); num_labels];
    for (i, x) in pool.iter().enumerate() {
        match x.label {
            Some(y) if y < num_labels => out[y].push(i),
            Some(y) => return Err(Error::argument(format!("example {} has label {y} out of range", x.id))),
            None => return Err(Error::argument(format!("example {} is unlabeled", x.id))),
        }
    }
    Ok(out)
}

fn halve(pool: &[Example], picked: &[Vec<usize>], seed: u64) -> FewShotSplit {
    let counts: Vec<usize> = picked.iter().map(Vec::len).collect();
    let to_train = train_counts(&counts);
    let mut split = FewShotSplit::empty(seed);
    for (idx, t) in picked.iter().zip(to_train) {
        split.d_train.extend(idx[..t].iter().map(|&i| pool[i].clone()));
        split.d_valid.extend(idx[t..].iter().map(|&i| pool[i].clone()));
    }
    split.n = split.d_train.len() + split.d_valid.len();
    split
}

/// Class-stratified sample of `n` labeled examples from `pool`, split into halves.
pub fn sample_fewshot(pool: &[Example], num_labels: usize, n: usize, seed: u64) -> Result<FewShotSplit> {
    if n == 0 {
        return Ok(FewShotSplit::empty(seed));
    }
    if num_labels == 0 {
        return Err(Error::argument("no labels"));
    }
    let mut classes = by_class(pool, num_labels)?;
    let wanted = stratified_counts(n, num_labels);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (y, (idx, &c)) in classes.iter_mut().zip(&wanted).enumerate() {
        if c > idx.len() {
            return Err(Error::argument(format!(
                "need {c} examples of class {y} but the pool has {}",
                idx.len()
            )));
        }
        idx.partial_shuffle(&mut rng, c);
        idx.truncate(c);
    }
    Ok(halve(pool, &classes, seed))
}

/// Uniform sample of `n` examples (no stratification), halved per class as far as parity allows.
pub fn sample_uniform(pool: &[Example], num_labels: usize, n: usize, seed: u64) -> Result<FewShotSplit> {
    if n == 0 {
        return Ok(FewShotSplit::empty(seed));
    }
    if n > pool.len() {
        return Err(Error::argument(format!("need {n} examples but the pool has {}", pool.len())));
    }
    by_class(pool, num_labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.partial_shuffle(&mut rng, n);
    let mut picked = vec![Vec::new(); num_labels];
    for &i in &idx[..n] {
        picked[pool[i].label.expect("checked")].push(i);
    }
    Ok(halve(pool, &picked, seed))
}

/// Seeded subset of at most `limit` items, kept in original order.
pub fn subsample<T: Clone>(items: &[T], limit: usize, seed: u64) -> Vec<T> {
    if limit >= items.len() {
        return items.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.partial_shuffle(&mut rng, limit);
    let mut keep = idx[..limit].to_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| items[i].clone()).collect()
}
