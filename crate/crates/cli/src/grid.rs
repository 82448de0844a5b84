//! Staged hyper-parameter search: BPE operations, then tied embeddings, then
//! network sizes, each stage holding the earlier winners fixed.

use std::collections::BTreeMap;
use std::path::Path;

use tagmt::nmt::config::{RECURRENT_GRID, TRANSFORMER_GRID};
use tagmt::nmt::{Family, Sizes};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::fsio;
use crate::run::run_experiment;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSpace {
    pub bpe_ops: Vec<usize>,
    pub tied: Vec<bool>,
    pub sizes: Vec<Sizes>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankRow {
    pub stage: usize,
    pub point: String,
    pub dev_bleu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub best: ExperimentConfig,
    /// One row per evaluated point, in evaluation order.
    pub ranking: Vec<RankRow>,
}

impl GridSpace {
    /// The published search space for a model family.
    pub fn published(family: Family) -> Self {
        let sizes = match family {
            Family::Recurrent => RECURRENT_GRID
                .iter()
                .map(|&(hidden, embedding)| Sizes::Recurrent { hidden, embedding })
                .collect(),
            Family::Transformer => TRANSFORMER_GRID
                .iter()
                .map(|&(dim, layers, heads)| Sizes::Transformer { dim, layers, heads })
                .collect(),
        };
        Self {
            bpe_ops: vec![5000, 10000, 20000, 40000],
            tied: vec![true, false],
            sizes,
        }
    }

    /// Reads `grid.bpe_ops`, `grid.tied` and `grid.sizes` (comma-separated;
    /// sizes as `HIDDENxEMBEDDING` or `DIMxLAYERSxHEADS`), falling back to the
    /// published space for missing keys.
    pub fn from_kv(kv: &BTreeMap<String, String>, family: Family) -> CliResult<Self> {
        let mut space = Self::published(family);
        let list = |key: &str| kv.get(key).map(|v| v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect::<Vec<_>>());
        let bad = |key: &str, v: &str| CliError::Config(format!("invalid {key} entry {v:?}"));
        if let Some(items) = list("grid.bpe_ops") {
            space.bpe_ops = items
                .iter()
                .map(|v| v.parse().map_err(|_| bad("grid.bpe_ops", v)))
                .collect::<CliResult<_>>()?;
        }
        if let Some(items) = list("grid.tied") {
            space.tied = items
                .iter()
                .map(|v| v.parse().map_err(|_| bad("grid.tied", v)))
                .collect::<CliResult<_>>()?;
        }
        if let Some(items) = list("grid.sizes") {
            space.sizes = items
                .iter()
                .map(|v| parse_sizes(v, family).ok_or_else(|| bad("grid.sizes", v)))
                .collect::<CliResult<_>>()?;
        }
        Ok(space)
    }

    pub fn num_points(&self) -> usize {
        self.bpe_ops.len() + self.tied.len() + self.sizes.len()
    }
}

fn parse_sizes(s: &str, family: Family) -> Option<Sizes> {
    let nums: Vec<usize> = s.split('x').map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
    match (family, nums.as_slice()) {
        (Family::Recurrent, &[hidden, embedding]) => Some(Sizes::Recurrent { hidden, embedding }),
        (Family::Transformer, &[dim, layers, heads]) => Some(Sizes::Transformer { dim, layers, heads }),
        _ => None,
    }
}

fn sizes_label(s: &Sizes) -> String {
    match *s {
        Sizes::Recurrent { hidden, embedding } => format!("{hidden}x{embedding}"),
        Sizes::Transformer { dim, layers, heads } => format!("{dim}x{layers}x{heads}"),
    }
}

/// Evaluates the stages in order with `eval` returning dev BLEU. Within a
/// stage the first point wins ties.
pub fn grid_search<F>(space: &GridSpace, base: &ExperimentConfig, mut eval: F) -> CliResult<GridOutcome>
where
    F: FnMut(&ExperimentConfig, usize, &str) -> CliResult<f64>,
{
    if !base.arm.is_baseline() {
        return Err(CliError::Config(format!(
            "the grid search runs on the untagged baseline, not {}",
            base.arm
        )));
    }
    if space.bpe_ops.is_empty() || space.tied.is_empty() || space.sizes.is_empty() {
        return Err(CliError::Config("every grid stage needs at least one point".into()));
    }
    if space.sizes.iter().any(|s| !same_family(s, &base.model.sizes)) {
        return Err(CliError::Config("grid sizes must match the configured model family".into()));
    }

    type Apply<'a> = Box<dyn Fn(&mut ExperimentConfig) + 'a>;
    let stages: Vec<Vec<(String, Apply)>> = vec![
        space
            .bpe_ops
            .iter()
            .map(|&n| {
                let f: Apply = Box::new(move |c: &mut ExperimentConfig| {
                    c.bpe_src_ops = n;
                    c.bpe_tgt_ops = n;
                });
                (format!("bpe_ops={n}"), f)
            })
            .collect(),
        space
            .tied
            .iter()
            .map(|&t| {
                let f: Apply = Box::new(move |c: &mut ExperimentConfig| c.model.tied_embeddings = t);
                (format!("tied_embeddings={t}"), f)
            })
            .collect(),
        space
            .sizes
            .iter()
            .map(|s| {
                let f: Apply = Box::new(move |c: &mut ExperimentConfig| c.model.sizes = *s);
                (format!("sizes={}", sizes_label(s)), f)
            })
            .collect(),
    ];

    let mut best = base.clone();
    let mut ranking = Vec::with_capacity(space.num_points());
    for (stage, points) in stages.iter().enumerate() {
        let mut winner: Option<(f64, ExperimentConfig)> = None;
        for (label, apply) in points {
            let mut cfg = best.clone();
            apply(&mut cfg);
            let score = eval(&cfg, stage + 1, label)?;
            log::info!("grid stage {}: {label} -> dev BLEU {score:.2}", stage + 1);
            ranking.push(RankRow {
                stage: stage + 1,
                point: label.clone(),
                dev_bleu: score,
            });
            if winner.as_ref().map_or(true, |(s, _)| score > *s) {
                winner = Some((score, cfg));
            }
        }
        best = winner.expect("non-empty stage").1;
    }
    Ok(GridOutcome { best, ranking })
}

fn same_family(a: &Sizes, b: &Sizes) -> bool {
    std::mem::discriminant(a) == std::mem::discriminant(b)
}

/// Grid search where every point is a full pipeline run under `out_dir/grid`;
/// writes the ranking table and the winning configuration to `out_dir`.
pub fn run_grid(space: &GridSpace, base: &ExperimentConfig, out_dir: &Path) -> CliResult<GridOutcome> {
    let mut n = 0;
    let outcome = grid_search(space, base, |cfg, stage, label| {
        n += 1;
        let dir = out_dir.join("grid").join(format!("{n:02}-stage{stage}-{}", label.replace('=', "-")));
        Ok(run_experiment(cfg, &dir)?.best_dev_bleu)
    })?;
    let mut rows = vec![["stage".to_string(), "point".into(), "dev_bleu".into()]];
    rows.extend(
        outcome
            .ranking
            .iter()
            .map(|r| [r.stage.to_string(), r.point.clone(), fsio::fmt_metric(r.dev_bleu)]),
    );
    fsio::write_tsv(&out_dir.join("reports/grid_ranking.tsv"), rows)?;
    fsio::write_text(&out_dir.join("best_config.txt"), &outcome.best.to_text())?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_parse_per_family() {
        assert_eq!(
            parse_sizes("256x4x4", Family::Transformer),
            Some(Sizes::Transformer { dim: 256, layers: 4, heads: 4 })
        );
        assert_eq!(parse_sizes("256x4x4", Family::Recurrent), None);
        assert_eq!(
            parse_sizes("512x256", Family::Recurrent),
            Some(Sizes::Recurrent { hidden: 512, embedding: 256 })
        );
    }

    #[test]
    fn published_space_point_count() {
        assert_eq!(GridSpace::published(Family::Recurrent).num_points(), 4 + 2 + 4);
        assert_eq!(GridSpace::published(Family::Transformer).num_points(), 4 + 2 + 3);
    }
}
