//! One test-time episode per image: explore, localize, calibrate, predict.
//!
//! Episodes share nothing; every random draw comes from streams keyed by the
//! run seed and the image id, so reports do not depend on the order or thread
//! episodes run on.

mod dataset;
pub mod metrics;

pub use dataset::{evaluate_dataset, summarize, DatasetItem, PredictionOutcome};
pub use metrics::{compute_ecec, compute_euec, Competitor};

use serde::{Deserialize, Serialize};

use crate::augment::{generate_views, AugmentConfig};
use crate::calibrate::{calibrate_context, CalibConfig, CalibTrace, PairSet};
use crate::encoders::{EncoderConfig, ImageTensor, PromptMode, TextEncoder, VisualEncoder};
use crate::error::{FclError, Result};
use crate::evidence::{common_evidence_embedding, localize, unique_evidence_embedding, EvidenceConfig};
use crate::explore::{explore_topk, restricted_posterior, CandidateSet, ExploreConfig, ScoreMatrix};
use crate::numerics::{argmax, dot, entropy, stable_hash, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub augment: AugmentConfig,
    pub explore: ExploreConfig,
    pub evidence: EvidenceConfig,
    pub calib: CalibConfig,
    pub encoder: EncoderConfig,
    /// Per-term denominator floor of ECEC.
    pub epsilon_ecec: f64,
    pub prompt_mode: PromptMode,
    pub ensemble_templates: Option<Vec<String>>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            augment: AugmentConfig::default(),
            explore: ExploreConfig::default(),
            evidence: EvidenceConfig::default(),
            calib: CalibConfig::default(),
            encoder: EncoderConfig::default(),
            epsilon_ecec: 1e-6,
            prompt_mode: PromptMode::SoftContext,
            ensemble_templates: None,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        self.explore.validate()?;
        self.evidence.validate()?;
        self.calib.validate()?;
        self.encoder.validate()?;
        if !(self.epsilon_ecec > 0.0 && self.epsilon_ecec.is_finite()) {
            return Err(FclError::invalid("epsilon_ecec", "must be > 0"));
        }
        if let Some(t) = &self.ensemble_templates {
            if t.is_empty() {
                return Err(FclError::invalid(
                    "ensemble_templates",
                    "must list at least one template",
                ));
            }
        }
        Ok(())
    }
}

/// The two encoders an episode runs against.
#[derive(Clone, Copy)]
pub struct Encoders<'a> {
    pub visual: &'a dyn VisualEncoder,
    pub text: &'a dyn TextEncoder,
}

impl Encoders<'_> {
    fn check(&self, cfg: &EpisodeConfig) -> Result<()> {
        if self.visual.dim() != self.text.dim() {
            return Err(FclError::shape(
                "text/visual embedding width",
                self.visual.dim(),
                self.text.dim(),
            ));
        }
        if self.visual.dim() != cfg.encoder.d {
            return Err(FclError::shape("encoder.d", cfg.encoder.d, self.visual.dim()));
        }
        if self.text.num_classes() == 0 {
            return Err(FclError::Degenerate("empty vocabulary".into()));
        }
        Ok(())
    }
}

/// A single test image.
#[derive(Debug, Clone, Copy)]
pub struct Episode<'a> {
    pub id: &'a str,
    pub image: &'a ImageTensor,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub template_predictions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub image_id: String,
    pub label: Option<usize>,
    pub prediction: usize,
    /// View 0 at `delta_0` over the full label space.
    pub zero_shot: usize,
    pub exploration: CandidateSet,
    /// Second pass over the candidates at the calibrated context.
    pub final_ranking: Option<CandidateSet>,
    pub calibration: CalibTrace,
    pub ecec: Option<f64>,
    pub euec: Option<f64>,
    /// Entropy of view 0's posterior over the candidates at `delta_0`.
    pub base_entropy: f64,
    /// Per-view entropies over the full label space at `delta_0`.
    pub view_entropies: Vec<f64>,
    /// Competitors whose unique-evidence weights fell back to `S` alone.
    pub unique_fallbacks: usize,
    /// Set when a stage failed and the zero-shot prediction was reported.
    pub degraded: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleSummary>,
}

impl EpisodeReport {
    pub fn correct(&self) -> Option<bool> {
        self.label.map(|l| l == self.prediction)
    }

    pub fn zero_shot_correct(&self) -> Option<bool> {
        self.label.map(|l| l == self.zero_shot)
    }

    /// Vote fraction of `class` in the final ranking (or the exploration
    /// ranking when calibration did not run).
    pub fn vote_fraction(&self, class: usize) -> f64 {
        let ranking = self.final_ranking.as_ref().unwrap_or(&self.exploration);
        ranking
            .classes
            .iter()
            .position(|&c| c == class)
            .map_or(0.0, |p| ranking.vote_fractions[p])
    }
}

/// Random streams of one episode, keyed by seed and image id.
pub fn episode_rng(seed: u64, image_id: &str, purpose: &str) -> RngStream {
    RngStream::for_purpose(seed, stable_hash(image_id.as_bytes()), purpose)
}

struct Adapted {
    prediction: usize,
    final_ranking: Option<CandidateSet>,
    calibration: CalibTrace,
    ecec: Option<f64>,
    euec: Option<f64>,
    unique_fallbacks: usize,
}

pub fn run_episode(episode: Episode<'_>, cfg: &EpisodeConfig, enc: Encoders<'_>, seed: u64) -> Result<EpisodeReport> {
    cfg.validate()?;
    enc.check(cfg)?;
    let beta = cfg.encoder.beta;
    let views = generate_views(
        episode.image,
        &cfg.augment,
        enc.visual.input_size(),
        &mut episode_rng(seed, episode.id, "views"),
    )?;
    let z = enc.visual.encode_batch(&views.views)?;
    let ctx0 = enc.text.initial_context(cfg.prompt_mode);
    let all: Vec<usize> = (0..enc.text.num_classes()).collect();
    let tau0 = enc.text.encode_all(&all, &ctx0)?;
    let full = ScoreMatrix::compute(&z, &tau0, &all, beta)?;
    let zero_shot = argmax(full.row(0));
    let explore_cfg = ExploreConfig {
        top_k: cfg.explore.top_k.min(all.len()),
        ..cfg.explore
    };
    let exploration = explore_topk(&full, &explore_cfg)?;
    let ck = exploration.classes.clone();
    let tau0_ck: Vec<Vec<f64>> = ck.iter().map(|&c| tau0[c].clone()).collect();
    let base_scores: Vec<f64> = tau0_ck.iter().map(|t| beta * dot(&z[0], t)).collect();
    let base_entropy = entropy(&restricted_posterior(&base_scores)?);

    let adapted = adapt(episode, cfg, enc, seed, &views.views[0], &z, &ctx0, &ck, &tau0_ck);
    let (adapted, degraded) = match adapted {
        Ok(a) => (a, None),
        Err(e) => {
            log::warn!("episode {}: {e}; reporting the zero-shot prediction", episode.id);
            let fallback = Adapted {
                prediction: zero_shot,
                final_ranking: None,
                calibration: CalibTrace {
                    fell_back: true,
                    ..CalibTrace::skipped()
                },
                ecec: None,
                euec: None,
                unique_fallbacks: 0,
            };
            (fallback, Some(e.to_string()))
        }
    };
    Ok(EpisodeReport {
        image_id: episode.id.to_string(),
        label: episode.label,
        prediction: adapted.prediction,
        zero_shot,
        exploration,
        final_ranking: adapted.final_ranking,
        calibration: adapted.calibration,
        ecec: adapted.ecec,
        euec: adapted.euec,
        base_entropy,
        view_entropies: full.entropies(),
        unique_fallbacks: adapted.unique_fallbacks,
        degraded,
        wall_time_ms: None,
        ensemble: None,
    })
}

#[allow(clippy::too_many_arguments)]
fn adapt(
    episode: Episode<'_>,
    cfg: &EpisodeConfig,
    enc: Encoders<'_>,
    seed: u64,
    original: &ImageTensor,
    z: &[Vec<f64>],
    ctx0: &crate::encoders::ContextParams,
    ck: &[usize],
    tau0_ck: &[Vec<f64>],
) -> Result<Adapted> {
    let beta = cfg.encoder.beta;
    if ck.len() < 2 {
        return Ok(Adapted {
            prediction: ck[0],
            final_ranking: None,
            calibration: CalibTrace::skipped(),
            ecec: None,
            euec: None,
            unique_fallbacks: 0,
        });
    }
    let evidence = localize(
        enc.visual,
        original,
        ck,
        tau0_ck,
        beta,
        &cfg.evidence,
        &mut episode_rng(seed, episode.id, "masks"),
    )?;
    let commons = PairSet::pair_positions(ck.len())
        .into_iter()
        .map(|(a, b)| common_evidence_embedding(enc.visual, original, &evidence.common(ck[a], ck[b])?))
        .collect::<Result<Vec<_>>>()?;
    let pairs = PairSet::new(ck.to_vec(), commons, z[0].clone())?;
    let (ctx_star, calibration) = calibrate_context(enc.text, ctx0, &pairs, beta, &cfg.calib)?;

    let tau_star = enc.text.encode_all(ck, &ctx_star)?;
    let second = ScoreMatrix::compute(z, &tau_star, ck, beta)?;
    let final_ranking = explore_topk(
        &second,
        &ExploreConfig {
            top_k: ck.len(),
            ..cfg.explore
        },
    )?;
    let prediction = final_ranking.top();

    let yhat = ck
        .iter()
        .position(|&c| c == prediction)
        .expect("prediction is a candidate");
    let competitors: Vec<Competitor<'_>> = pairs
        .pairs
        .iter()
        .filter(|p| p.a == yhat || p.b == yhat)
        .map(|p| Competitor {
            text: &tau0_ck[if p.a == yhat { p.b } else { p.a }],
            common: &p.z_common,
        })
        .collect();
    let ecec = compute_ecec(&z[0], &tau0_ck[yhat], &competitors, cfg.epsilon_ecec)?;

    let s_hat = evidence.spatial_for(prediction)?;
    let mut uniques = Vec::with_capacity(ck.len() - 1);
    let mut unique_fallbacks = 0;
    for &other in ck.iter().filter(|&&c| c != prediction) {
        let q = evidence.common(prediction, other)?;
        let (u, fell_back) = unique_evidence_embedding(enc.visual, original, s_hat, &q)?;
        unique_fallbacks += usize::from(fell_back);
        uniques.push(u);
    }
    let euec = compute_euec(&tau0_ck[yhat], &uniques)?;

    Ok(Adapted {
        prediction,
        final_ranking: Some(final_ranking),
        calibration,
        ecec: Some(ecec),
        euec: Some(euec),
        unique_fallbacks,
    })
}

/// Runs the full episode once per template encoder and takes a majority vote
/// over the per-template predictions. Ties go to the larger summed vote
/// fraction, then the lower class index.
///
/// The returned report is the first template's report whose prediction won,
/// with the per-template predictions attached.
pub fn prompt_ensemble_predict(
    episode: Episode<'_>,
    cfg: &EpisodeConfig,
    visual: &dyn VisualEncoder,
    texts: &[&dyn TextEncoder],
    seed: u64,
) -> Result<EpisodeReport> {
    if texts.is_empty() {
        return Err(FclError::invalid("ensemble_templates", "need at least one template"));
    }
    let reports = texts
        .iter()
        .map(|&text| run_episode(episode, cfg, Encoders { visual, text }, seed))
        .collect::<Result<Vec<_>>>()?;
    let predictions: Vec<usize> = reports.iter().map(|r| r.prediction).collect();
    let winner = ensemble_vote(&reports);
    let mut chosen = reports
        .into_iter()
        .find(|r| r.prediction == winner)
        .expect("the winner is some template's prediction");
    chosen.ensemble = Some(EnsembleSummary {
        template_predictions: predictions,
    });
    Ok(chosen)
}

fn ensemble_vote(reports: &[EpisodeReport]) -> usize {
    let mut tally: Vec<(usize, usize, f64)> = Vec::new();
    for r in reports {
        match tally.iter_mut().find(|(c, _, _)| *c == r.prediction) {
            Some(entry) => entry.1 += 1,
            None => tally.push((r.prediction, 1, 0.0)),
        }
    }
    for entry in &mut tally {
        entry.2 = reports.iter().map(|r| r.vote_fraction(entry.0)).sum();
    }
    tally.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.total_cmp(&a.2)).then(a.0.cmp(&b.0)));
    tally[0].0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{ToyTextConfig, ToyTextEncoder, ToyVisualConfig, ToyVisualEncoder};
    use crate::explore::predict_single;

    fn backend(n_classes: usize, template: &str) -> (ToyVisualEncoder, ToyTextEncoder) {
        let visual = ToyVisualEncoder::new(ToyVisualConfig {
            height: 16,
            width: 16,
            d: 32,
            seed: 1,
            ..Default::default()
        })
        .unwrap();
        let tcfg = ToyTextConfig {
            d: 32,
            d_class: 32,
            seed: 2,
            ..Default::default()
        };
        let names = (0..n_classes).map(|i| format!("class {i}")).collect();
        let vocab = ToyTextEncoder::hashed_vocabulary(&tcfg, names, template).unwrap();
        (visual, ToyTextEncoder::new(tcfg, vocab).unwrap())
    }

    fn small_config() -> EpisodeConfig {
        EpisodeConfig {
            augment: AugmentConfig {
                n_views: 16,
                ..Default::default()
            },
            explore: ExploreConfig {
                top_k: 4,
                ..Default::default()
            },
            evidence: EvidenceConfig {
                n_masks: 24,
                grid_sizes: vec![2, 4],
                gamma: 0.5,
            },
            encoder: EncoderConfig { beta: 20.0, d: 32 },
            ..Default::default()
        }
    }

    fn image(seed: u64) -> ImageTensor {
        let mut rng = RngStream::new(seed, 0);
        ImageTensor::new(20, 24, (0..20 * 24 * 3).map(|_| rng.uniform()).collect()).unwrap()
    }

    #[test]
    fn episode_is_deterministic_and_predicts_a_candidate() {
        let (v, t) = backend(8, crate::encoders::DEFAULT_TEMPLATE);
        let enc = Encoders { visual: &v, text: &t };
        let img = image(1);
        let ep = Episode {
            id: "img-1",
            image: &img,
            label: Some(3),
        };
        let a = run_episode(ep, &small_config(), enc, 7).unwrap();
        let b = run_episode(ep, &small_config(), enc, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.exploration.contains(a.prediction));
        assert_eq!(a.exploration.len(), 4);
        assert!(a.degraded.is_none());
        assert!(a.ecec.unwrap() >= 0.0);
        assert!((-1.0..=1.0).contains(&a.euec.unwrap()));
        assert_eq!(a.calibration.l_total.len(), 3);
        assert_eq!(a.view_entropies.len(), 16);
    }

    #[test]
    fn k1_skips_calibration() {
        let (v, t) = backend(6, crate::encoders::DEFAULT_TEMPLATE);
        let mut cfg = small_config();
        cfg.explore.top_k = 1;
        let img = image(2);
        let r = run_episode(
            Episode {
                id: "x",
                image: &img,
                label: None,
            },
            &cfg,
            Encoders { visual: &v, text: &t },
            3,
        )
        .unwrap();
        assert!(r.calibration.skipped);
        assert_eq!(r.prediction, r.exploration.top());
        assert_eq!(r.ecec, None);
    }

    #[test]
    fn zero_steps_equals_two_pass_exploration() {
        let (v, t) = backend(8, crate::encoders::DEFAULT_TEMPLATE);
        let mut cfg = small_config();
        cfg.calib.steps = 0;
        for seed in 0..4 {
            let img = image(10 + seed);
            let id = format!("img{seed}");
            let r = run_episode(
                Episode {
                    id: &id,
                    image: &img,
                    label: None,
                },
                &cfg,
                Encoders { visual: &v, text: &t },
                seed,
            )
            .unwrap();
            // Oracle: rebuild the views and run both passes at delta_0.
            let views = generate_views(&img, &cfg.augment, (16, 16), &mut episode_rng(seed, &id, "views")).unwrap();
            let z = v.encode_batch(&views.views).unwrap();
            let ctx = t.initial_context(PromptMode::SoftContext);
            let all: Vec<usize> = (0..8).collect();
            let first = explore_topk(
                &ScoreMatrix::compute(&z, &t.encode_all(&all, &ctx).unwrap(), &all, 20.0).unwrap(),
                &cfg.explore,
            )
            .unwrap();
            let ck = first.classes;
            let second = ScoreMatrix::compute(&z, &t.encode_all(&ck, &ctx).unwrap(), &ck, 20.0).unwrap();
            assert_eq!(
                r.prediction,
                predict_single(&second, cfg.explore.rho, cfg.explore.aggregation).unwrap()
            );
        }
    }

    /// Refuses any image containing a black pixel, i.e. every occluded one.
    struct NoBlack<'a>(&'a ToyVisualEncoder);

    impl VisualEncoder for NoBlack<'_> {
        fn dim(&self) -> usize {
            self.0.dim()
        }

        fn input_size(&self) -> (usize, usize) {
            self.0.input_size()
        }

        fn encode(&self, image: &ImageTensor) -> Result<Vec<f64>> {
            if image.data().chunks(3).any(|px| px.iter().all(|&v| v == 0.0)) {
                return Err(FclError::Backend("black pixel".into()));
            }
            self.0.encode(image)
        }
    }

    #[test]
    fn stage_failure_degrades_to_zero_shot() {
        let (v, t) = backend(5, crate::encoders::DEFAULT_TEMPLATE);
        let strict = NoBlack(&v);
        let img = image(4);
        let ep = Episode {
            id: "bad",
            image: &img,
            label: Some(1),
        };
        let r = run_episode(
            ep,
            &small_config(),
            Encoders {
                visual: &strict,
                text: &t,
            },
            0,
        )
        .unwrap();
        assert!(r.degraded.as_deref().unwrap().contains("black pixel"));
        assert_eq!(r.prediction, r.zero_shot);
        assert!(r.calibration.fell_back);
    }

    #[test]
    fn ensemble_with_one_template_matches_single_run() {
        let (v, t) = backend(6, crate::encoders::DEFAULT_TEMPLATE);
        let img = image(5);
        let ep = Episode {
            id: "e",
            image: &img,
            label: None,
        };
        let cfg = small_config();
        let single = run_episode(ep, &cfg, Encoders { visual: &v, text: &t }, 9).unwrap();
        let ens = prompt_ensemble_predict(ep, &cfg, &v, &[&t], 9).unwrap();
        assert_eq!(ens.prediction, single.prediction);
        assert_eq!(ens.ensemble.unwrap().template_predictions, vec![single.prediction]);
    }

    fn stub_report(prediction: usize, fractions: &[(usize, f64)]) -> EpisodeReport {
        EpisodeReport {
            image_id: "s".into(),
            label: None,
            prediction,
            zero_shot: prediction,
            exploration: CandidateSet {
                classes: fractions.iter().map(|f| f.0).collect(),
                vote_fractions: fractions.iter().map(|f| f.1).collect(),
                mean_probs: vec![0.0; fractions.len()],
                retained_views: vec![0],
            },
            final_ranking: None,
            calibration: CalibTrace::skipped(),
            ecec: None,
            euec: None,
            base_entropy: 0.0,
            view_entropies: vec![],
            unique_fallbacks: 0,
            degraded: None,
            wall_time_ms: None,
            ensemble: None,
        }
    }

    #[test]
    fn ensemble_vote_majority_and_ties() {
        let a = stub_report(0, &[(0, 0.6), (1, 0.4)]);
        let b = stub_report(1, &[(1, 0.5), (0, 0.5)]);
        assert_eq!(ensemble_vote(&[a.clone(), a.clone(), b.clone()]), 0);
        // One vote each; class 1 has the larger summed fraction (0.9 vs 1.1).
        let c = stub_report(1, &[(1, 0.7), (0, 0.3)]);
        assert_eq!(ensemble_vote(&[a.clone(), c]), 1);
        // Full tie goes to the lower index.
        let d = stub_report(1, &[(1, 0.6), (0, 0.4)]);
        assert_eq!(ensemble_vote(&[a, d]), 0);
    }
}
