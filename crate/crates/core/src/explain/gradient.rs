use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    check_input, mean_score, Attribution, Baseline, ExplainError, GradientModel, Method, Result,
};

/// Expected-gradients estimator: each draw picks a reference `b` and `u ~ U[0, 1]`
/// and adds `(x - b) * grad f(b + u (x - b))`; scores are the mean over draws.
pub fn gradient_shap<M: GradientModel + ?Sized>(
    model: &M,
    beat: &[f64],
    class: usize,
    baseline: &Baseline,
    num_samples: usize,
    seed: u64,
) -> Result<Attribution> {
    check_input(model, beat, class)?;
    if num_samples == 0 {
        return Err(ExplainError::ZeroCount("num_samples"));
    }
    let refs = baseline.references(beat.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = vec![0.0; beat.len()];
    let mut point = vec![0.0; beat.len()];
    for _ in 0..num_samples {
        let b = &refs[rng.random_range(0..refs.len())];
        let u: f64 = rng.random();
        for ((p, &x), &r) in point.iter_mut().zip(beat).zip(b) {
            *p = r + u * (x - r);
        }
        let (_, grad) = model.score_gradient(&point, class)?;
        for (i, s) in scores.iter_mut().enumerate() {
            *s += (beat[i] - b[i]) * grad[i];
        }
    }
    scores.iter_mut().for_each(|s| *s /= num_samples as f64);
    let mut a = Attribution::new(Method::Gradient, class, baseline, scores);
    a.score_input = model.score(beat, class)?;
    a.score_baseline = mean_score(model, &refs, class)?;
    Ok(a)
}
