use super::{check_input, Attribution, Baseline, ExplainError, Method, Result, ScoreModel};

pub const MAX_EXACT_GROUPS: usize = 16;

/// Exact Shapley values of each group by enumerating all `2^M` coalitions. Absent
/// groups take baseline values (averaged over a sample set); positions outside
/// every group keep their input values.
pub fn exact_shapley<M: ScoreModel + ?Sized>(
    model: &M,
    beat: &[f64],
    class: usize,
    baseline: &Baseline,
    groups: &[Vec<usize>],
) -> Result<Attribution> {
    check_input(model, beat, class)?;
    let m = groups.len();
    if m == 0 {
        return Err(ExplainError::InvalidGroups("no groups".into()));
    }
    if m > MAX_EXACT_GROUPS {
        return Err(ExplainError::TooManyGroups {
            groups: m,
            max: MAX_EXACT_GROUPS,
        });
    }
    let mut seen = vec![false; beat.len()];
    for g in groups {
        if g.is_empty() {
            return Err(ExplainError::InvalidGroups("empty group".into()));
        }
        for &i in g {
            if i >= beat.len() || seen[i] {
                return Err(ExplainError::InvalidGroups(format!(
                    "position {i} is out of range or in two groups"
                )));
            }
            seen[i] = true;
        }
    }
    let refs = baseline.references(beat.len())?;

    let n_coalitions = 1usize << m;
    let mut values = Vec::with_capacity(n_coalitions);
    for bits in 0..n_coalitions {
        let mut total = 0.0;
        for r in &refs {
            let mut x = beat.to_vec();
            for (j, g) in groups.iter().enumerate() {
                if bits >> j & 1 == 0 {
                    for &i in g {
                        x[i] = r[i];
                    }
                }
            }
            total += model.score(&x, class)?;
        }
        values.push(total / refs.len() as f64);
    }

    // weight[s] = s! (m - s - 1)! / m!
    let mut weight = vec![0.0; m];
    for (s, w) in weight.iter_mut().enumerate() {
        let mut v = 1.0 / m as f64;
        for k in 1..=s {
            v *= k as f64 / (m - k) as f64;
        }
        *w = v;
    }
    let mut phi = vec![0.0; m];
    for (j, p) in phi.iter_mut().enumerate() {
        for bits in 0..n_coalitions {
            if bits >> j & 1 == 1 {
                continue;
            }
            let s = (bits as u64).count_ones() as usize;
            *p += weight[s] * (values[bits | 1 << j] - values[bits]);
        }
    }

    let mut scores = vec![0.0; beat.len()];
    for (g, &p) in groups.iter().zip(&phi) {
        for &i in g {
            scores[i] = p / g.len() as f64;
        }
    }
    let mut a = Attribution::new(Method::Exact, class, baseline, scores);
    a.score_input = values[n_coalitions - 1];
    a.score_baseline = values[0];
    a.group_values = Some(phi);
    Ok(a)
}
