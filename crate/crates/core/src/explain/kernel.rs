use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_input, Attribution, Baseline, ExplainError, Method, Result, ScoreModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelShapConfig {
    /// Contiguous timesteps per player.
    pub group_size: usize,
    /// Coalition budget including the empty and full coalitions. Budgets of at least
    /// `2^M` switch to full enumeration.
    pub num_coalitions: usize,
    pub seed: u64,
}

impl Default for KernelShapConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            num_coalitions: 2048,
            seed: 0,
        }
    }
}

/// Partition of `0..len` into consecutive runs of `group_size`.
pub fn contiguous_groups(len: usize, group_size: usize) -> Result<Vec<Vec<usize>>> {
    if group_size == 0 || !len.is_multiple_of(group_size) {
        return Err(ExplainError::GroupSize { group_size, len });
    }
    Ok((0..len / group_size)
        .map(|g| (g * group_size..(g + 1) * group_size).collect())
        .collect())
}

/// Mean target score over the references with players outside `mask` replaced.
pub(super) fn coalition_value<M: ScoreModel + ?Sized>(
    model: &M,
    beat: &[f64],
    refs: &[Vec<f64>],
    groups: &[Vec<usize>],
    mask: &[bool],
    class: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut x = beat.to_vec();
    for r in refs {
        for (g, &present) in groups.iter().zip(mask) {
            for &i in g {
                x[i] = if present { beat[i] } else { r[i] };
            }
        }
        total += model.score(&x, class)?;
    }
    Ok(total / refs.len() as f64)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Weighted least-squares Shapley regression over group coalitions. The efficiency
/// constraint `sum(phi) = v(full) - v(empty)` is imposed exactly by eliminating the
/// last player. Each group's value is spread evenly over its timesteps.
pub fn kernel_shap<M: ScoreModel + ?Sized>(
    model: &M,
    beat: &[f64],
    class: usize,
    baseline: &Baseline,
    config: &KernelShapConfig,
) -> Result<Attribution> {
    check_input(model, beat, class)?;
    let groups = contiguous_groups(beat.len(), config.group_size)?;
    if config.group_size == 1 {
        log::warn!(
            "KernelSHAP with group size 1 has {} players; this is expensive",
            beat.len()
        );
    }
    let refs = baseline.references(beat.len())?;
    let m = groups.len();
    if config.num_coalitions < m + 2 {
        return Err(ExplainError::TooFewCoalitions {
            coalitions: config.num_coalitions,
            players: m,
            needed: m + 2,
        });
    }

    let v_empty = coalition_value(model, beat, &refs, &groups, &vec![false; m], class)?;
    let v_full = coalition_value(model, beat, &refs, &groups, &vec![true; m], class)?;
    let delta = v_full - v_empty;

    let rows = if m == 1 {
        BTreeMap::new()
    } else if m < usize::BITS as usize - 1 && config.num_coalitions >= 1usize << m {
        enumerate_all(m)
    } else {
        sample_coalitions(m, config.num_coalitions - 2, config.seed)
    };

    let phi = if m == 1 {
        vec![delta]
    } else {
        let k = m - 1;
        let mut xtwx = DMatrix::<f64>::zeros(k, k);
        let mut xtwy = DVector::<f64>::zeros(k);
        let mut row = vec![0.0; k];
        for (mask, weight) in &rows {
            let y = coalition_value(model, beat, &refs, &groups, mask, class)? - v_empty;
            let last = f64::from(u8::from(mask[m - 1]));
            let target = y - last * delta;
            for j in 0..k {
                row[j] = f64::from(u8::from(mask[j])) - last;
            }
            for a in 0..k {
                if row[a] == 0.0 {
                    continue;
                }
                xtwy[a] += weight * row[a] * target;
                for b in 0..k {
                    xtwx[(a, b)] += weight * row[a] * row[b];
                }
            }
        }
        let lu = xtwx.lu();
        let sol = lu.solve(&xtwy).ok_or(ExplainError::Singular)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(ExplainError::Singular);
        }
        let mut phi: Vec<f64> = sol.iter().copied().collect();
        phi.push(delta - phi.iter().sum::<f64>());
        phi
    };

    let mut scores = vec![0.0; beat.len()];
    for (g, &p) in groups.iter().zip(&phi) {
        for &i in g {
            scores[i] = p / g.len() as f64;
        }
    }
    let mut a = Attribution::new(Method::Kernel, class, baseline, scores);
    a.score_input = v_full;
    a.score_baseline = v_empty;
    a.group_values = Some(phi);
    Ok(a)
}

/// Every proper non-empty coalition with its Shapley kernel weight.
fn enumerate_all(m: usize) -> BTreeMap<Vec<bool>, f64> {
    let mut rows = BTreeMap::new();
    for bits in 1..(1u64 << m) - 1 {
        let mask: Vec<bool> = (0..m).map(|j| bits >> j & 1 == 1).collect();
        let s = mask.iter().filter(|&&b| b).count();
        let w = (m - 1) as f64 / (binomial(m, s) * s as f64 * (m - s) as f64);
        rows.insert(mask, w);
    }
    rows
}

/// Coalitions drawn from the Shapley kernel's size distribution, in complementary
/// pairs. Repeated draws accumulate weight.
fn sample_coalitions(m: usize, budget: usize, seed: u64) -> BTreeMap<Vec<bool>, f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size_weights: Vec<f64> = (1..m)
        .map(|s| (m - 1) as f64 / (s * (m - s)) as f64)
        .collect();
    let total: f64 = size_weights.iter().sum();
    let mut rows: BTreeMap<Vec<bool>, f64> = BTreeMap::new();
    let mut drawn = 0;
    let mut positions: Vec<usize> = (0..m).collect();
    while drawn < budget {
        let mut u = rng.random::<f64>() * total;
        let mut size = m - 1;
        for (i, w) in size_weights.iter().enumerate() {
            if u < *w {
                size = i + 1;
                break;
            }
            u -= w;
        }
        // Partial Fisher-Yates for a uniform subset of `size` players.
        for i in 0..size {
            let j = rng.random_range(i..m);
            positions.swap(i, j);
        }
        let mut mask = vec![false; m];
        for &p in &positions[..size] {
            mask[p] = true;
        }
        let complement: Vec<bool> = mask.iter().map(|b| !b).collect();
        *rows.entry(mask).or_insert(0.0) += 1.0;
        *rows.entry(complement).or_insert(0.0) += 1.0;
        drawn += 2;
    }
    rows
}
