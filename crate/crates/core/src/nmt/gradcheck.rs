//! Finite-difference check of the analytic gradients of a full model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::model::{Batch, Model};
use super::vocab::Vocabulary;
use crate::Result;

/// Relative error floor so that entries with tiny true gradients do not blow up.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Checks up to `per_tensor` randomly chosen entries of every parameter tensor
/// with central differences of step `eps`. Dropout is disabled.
pub fn grad_check_batch(
    config: &ModelConfig,
    src_vocab: usize,
    tgt_vocab: usize,
    batch: &Batch,
    eps: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut cfg = config.clone();
    cfg.dropout = 0.0;
    let sv = Vocabulary::from_symbols((0..src_vocab).map(|i| format!("s{i}")).collect());
    let tv = Vocabulary::from_symbols((0..tgt_vocab).map(|i| format!("t{i}")).collect());
    let mut model = Model::new(cfg, sv, tv, seed)?;
    let (_, grads) = model.loss_and_grads(batch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for id in model.params().ids().collect::<Vec<_>>() {
        let n = model.params().get(id).len();
        let picks: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| rng.gen_range(0..n)).collect()
        };
        for flat in picks {
            let analytic = grads[id.index()]
                .as_ref()
                .map_or(0.0, |g| g.as_slice().expect("standard layout")[flat]);
            let orig = model.params().get(id).as_slice().unwrap()[flat];
            model.params_mut().get_mut(id).as_slice_mut().unwrap()[flat] = orig + eps;
            let up = model.loss(batch)?;
            model.params_mut().get_mut(id).as_slice_mut().unwrap()[flat] = orig - eps;
            let down = model.loss(batch)?;
            model.params_mut().get_mut(id).as_slice_mut().unwrap()[flat] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(analytic, numeric));
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        checked,
    })
}

/// Gradient check on a small random batch.
pub fn grad_check(config: &ModelConfig, eps: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (sv, tv) = (9, 8);
    let mut batch = Batch::default();
    for _ in 0..3 {
        let ls = rng.gen_range(2..6);
        let lt = rng.gen_range(2..6);
        batch.src.push((0..ls).map(|_| rng.gen_range(4..4 + sv)).collect());
        batch.tgt.push((0..lt).map(|_| rng.gen_range(4..4 + tv)).collect());
    }
    grad_check_batch(config, sv, tv, &batch, eps, 12, 11)
}
