use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    check_input, mean_score, Attribution, Baseline, ExplainError, Method, Result, ScoreModel,
};

/// `score[i]` is the mean drop in the target score when position `i` alone is
/// replaced by the same position of a randomly drawn background beat.
pub fn permutation_importance<M: ScoreModel + ?Sized>(
    model: &M,
    beat: &[f64],
    class: usize,
    background: &[Vec<f64>],
    repeats: usize,
    seed: u64,
) -> Result<Attribution> {
    check_input(model, beat, class)?;
    if repeats == 0 {
        return Err(ExplainError::ZeroCount("repeats"));
    }
    let baseline = Baseline::SampleSet {
        beats: background.to_vec(),
    };
    let refs = baseline.references(beat.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fx = model.score(beat, class)?;

    let mut scores = vec![0.0; beat.len()];
    let mut x = beat.to_vec();
    for (i, s) in scores.iter_mut().enumerate() {
        let mut acc = 0.0;
        for _ in 0..repeats {
            let b = &refs[rng.random_range(0..refs.len())];
            x[i] = b[i];
            acc += fx - model.score(&x, class)?;
        }
        x[i] = beat[i];
        *s = acc / repeats as f64;
    }
    let mut a = Attribution::new(Method::Permutation, class, &baseline, scores);
    a.score_input = fx;
    a.score_baseline = mean_score(model, &refs, class)?;
    Ok(a)
}
