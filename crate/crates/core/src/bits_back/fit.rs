//! Fitting and fine-tuning of latent chain models on code blocks.

use super::coding::CodingTables;
use super::model::{LatentChainModel, Table};
use crate::error::{invalid, Result};

/// Settings for [`fit`] and [`finetune`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    /// Number of coordinate-ascent iterations.
    pub iterations: usize,
    /// Pseudo-count added to every cell of the expected-count tables.
    pub smoothing: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { iterations: 10, smoothing: 1e-3 }
    }
}

/// Mean ELBO per block, in bits, after initialization and after every iteration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitReport {
    pub elbo_history: Vec<f64>,
}

/// Mean ELBO (bits per block) of `model` on `blocks`.
pub fn mean_elbo(model: &LatentChainModel, blocks: &[Vec<u16>]) -> Result<f64> {
    if blocks.is_empty() {
        return invalid("no blocks to evaluate");
    }
    let tables = CodingTables::new(model)?;
    let mut total = 0.0;
    for b in blocks {
        total += tables.elbo(b)?;
    }
    Ok(total / blocks.len() as f64)
}

/// Fits `model` to `blocks`; see [`fit_with_report`].
pub fn fit(model: &LatentChainModel, blocks: &[Vec<u16>], cfg: &FitConfig) -> Result<LatentChainModel> {
    fit_with_report(model, blocks, cfg).map(|(m, _)| m)
}

/// Coordinate ascent on the quantized ELBO.
///
/// Each iteration tries two updates: re-estimating the generative tables from expected
/// counts under `q`, then resetting `q` to the exact posterior of the new generative
/// tables. An update is kept only if the mean ELBO does not go down, so the history is
/// non-decreasing. Iteration stops early once neither update is kept.
pub fn fit_with_report(
    model: &LatentChainModel,
    blocks: &[Vec<u16>],
    cfg: &FitConfig,
) -> Result<(LatentChainModel, FitReport)> {
    if blocks.is_empty() {
        return invalid("cannot fit a model to zero blocks");
    }
    if !(cfg.smoothing > 0.0 && cfg.smoothing.is_finite()) {
        return invalid(format!("smoothing must be positive, got {}", cfg.smoothing));
    }
    let mut current = model.clone();
    let mut score = mean_elbo(&current, blocks)?;
    let mut report = FitReport { elbo_history: vec![score] };
    for _ in 0..cfg.iterations {
        let mut improved = false;

        let candidate = maximize_generative(&current, blocks, cfg.smoothing)?;
        let s = mean_elbo(&candidate, blocks)?;
        if s >= score {
            improved |= s > score;
            current = candidate;
            score = s;
        }

        let mut candidate = current.clone();
        candidate.set_exact_inference();
        let s = mean_elbo(&candidate, blocks)?;
        if s >= score {
            improved |= s > score;
            current = candidate;
            score = s;
        }

        report.elbo_history.push(score);
        if !improved {
            break;
        }
    }
    Ok((current, report))
}

/// Expected-count re-estimate of `p` with `q` held fixed.
fn maximize_generative(model: &LatentChainModel, blocks: &[Vec<u16>], alpha: f64) -> Result<LatentChainModel> {
    let tables = CodingTables::new(model)?;
    let a = model.latent_alphabets();
    let k = model.observation_alphabet();
    let depth = a.len();

    let mut emission = vec![alpha; a[0] * k];
    let mut level_mass = vec![0.0; a[0]];
    for x in blocks {
        let q1 = tables.posterior(x)?;
        for (z, mass) in level_mass.iter_mut().enumerate() {
            let w = q1.probability(z);
            if w == 0.0 {
                continue;
            }
            *mass += w;
            for &s in x {
                emission[z * k + usize::from(s)] += w;
            }
        }
    }

    let mut transitions = Vec::with_capacity(depth - 1);
    for i in 0..depth - 1 {
        let (lower, upper) = (a[i], a[i + 1]);
        let mut counts = vec![alpha; upper * lower];
        let mut next_mass = vec![0.0; upper];
        for (zl, &m) in level_mass.iter().enumerate() {
            let q = tables.inference(i, zl);
            for (zu, nm) in next_mass.iter_mut().enumerate() {
                let w = m * q.probability(zu);
                counts[zu * lower + zl] += w;
                *nm += w;
            }
        }
        transitions.push(Table::from_weights(upper, lower, counts)?);
        level_mass = next_mass;
    }
    let prior = Table::from_weights(1, a[depth - 1], level_mass.iter().map(|m| m + alpha).collect())?;

    let mut out = model.clone();
    out.emission = Table::from_weights(a[0], k, emission)?;
    out.transitions = transitions;
    out.prior = prior;
    Ok(out)
}

/// Updates a deployed model on the union of a new task's blocks and the blocks still
/// held in the buffer. The result carries the next version number.
///
/// With zero iterations the tables are returned unchanged, even for an empty union.
pub fn finetune(
    model: &LatentChainModel,
    new_blocks: &[Vec<u16>],
    buffered_blocks: &[Vec<u16>],
    cfg: &FitConfig,
) -> Result<LatentChainModel> {
    let version = model.version().wrapping_add(1);
    if cfg.iterations == 0 {
        return Ok(model.clone().with_version(version));
    }
    let union: Vec<Vec<u16>> = new_blocks.iter().chain(buffered_blocks).cloned().collect();
    Ok(fit(model, &union, cfg)?.with_version(version))
}
