use serde::{Deserialize, Serialize};

use super::{run_episode, Encoders, Episode, EpisodeConfig, EpisodeReport};
use crate::encoders::ImageTensor;
use crate::error::{FclError, Result};
use crate::numerics::stats::{mann_whitney, mean, pearson, spearman};

/// One decoded, labelled (or unlabelled) test image.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub id: String,
    pub label: Option<usize>,
    pub image: ImageTensor,
}

/// Dataset-level aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionOutcome {
    pub n_episodes: usize,
    pub n_labeled: usize,
    /// Inputs that could not be read and were left out.
    pub n_skipped: usize,
    pub n_degraded: usize,
    pub accuracy: Option<f64>,
    pub zero_shot_accuracy: Option<f64>,
    pub mean_ecec_correct: Option<f64>,
    pub mean_ecec_incorrect: Option<f64>,
    /// One-sided rank-test p-value for ECEC(incorrect) > ECEC(correct).
    pub ecec_rank_p: Option<f64>,
    /// Correlation between EUEC and view-0 candidate entropy.
    pub euec_entropy_pearson: Option<f64>,
    pub euec_entropy_spearman: Option<f64>,
}

fn fraction(hits: impl Iterator<Item = bool>) -> Option<f64> {
    let (mut n, mut k) = (0usize, 0usize);
    for h in hits {
        n += 1;
        k += usize::from(h);
    }
    (n > 0).then(|| k as f64 / n as f64)
}

/// Sorts `reports` by image id and aggregates them.
pub fn summarize(reports: &mut [EpisodeReport], n_skipped: usize) -> Result<PredictionOutcome> {
    if reports.is_empty() {
        return Err(FclError::Degenerate("no episodes to summarize".into()));
    }
    reports.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let labeled: Vec<&EpisodeReport> = reports.iter().filter(|r| r.label.is_some()).collect();
    let ecec_where = |want: bool| -> Vec<f64> {
        labeled
            .iter()
            .filter(|r| r.correct() == Some(want))
            .filter_map(|r| r.ecec)
            .collect()
    };
    let (ecec_ok, ecec_bad) = (ecec_where(true), ecec_where(false));
    let ecec_rank_p = mann_whitney(&ecec_bad, &ecec_ok).ok().map(|t| t.p_greater);
    let (euec, ent): (Vec<f64>, Vec<f64>) = reports
        .iter()
        .filter_map(|r| r.euec.map(|e| (e, r.base_entropy)))
        .unzip();
    Ok(PredictionOutcome {
        n_episodes: reports.len(),
        n_labeled: labeled.len(),
        n_skipped,
        n_degraded: reports.iter().filter(|r| r.degraded.is_some()).count(),
        accuracy: fraction(labeled.iter().filter_map(|r| r.correct())),
        zero_shot_accuracy: fraction(labeled.iter().filter_map(|r| r.zero_shot_correct())),
        mean_ecec_correct: mean(&ecec_ok),
        mean_ecec_incorrect: mean(&ecec_bad),
        ecec_rank_p,
        euec_entropy_pearson: pearson(&euec, &ent),
        euec_entropy_spearman: spearman(&euec, &ent),
    })
}

/// Runs every item serially and aggregates; reports come back sorted by id.
pub fn evaluate_dataset(
    items: &[DatasetItem],
    cfg: &EpisodeConfig,
    enc: Encoders<'_>,
    seed: u64,
) -> Result<(PredictionOutcome, Vec<EpisodeReport>)> {
    if items.is_empty() {
        return Err(FclError::Degenerate("empty dataset".into()));
    }
    let mut reports = items
        .iter()
        .map(|item| {
            run_episode(
                Episode {
                    id: &item.id,
                    image: &item.image,
                    label: item.label,
                },
                cfg,
                enc,
                seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let outcome = summarize(&mut reports, 0)?;
    Ok((outcome, reports))
}
