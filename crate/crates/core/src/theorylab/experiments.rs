//! Reproducible synthetic experiments: the common-evidence failure modes,
//! calibration efficacy, and the ECEC / EUEC trends.
//!
//! Episodes live at the embedding level: views are [`SyntheticView`]s of a
//! planted world, text embeddings come from a toy text encoder planted to
//! match the world at `delta_0`, and common-evidence embeddings are the
//! shared component plus a little jitter. Everything downstream (exploration,
//! calibration, the second pass) is the production code path.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::world::{SyntheticView, SyntheticWorld, WorldSpec};
use crate::calibrate::{calibrate_context, CalibConfig, PairSet};
use crate::encoders::{ContextParams, PromptMode, TextEncoder, ToyTextConfig};
use crate::error::{FclError, Result};
use crate::explore::{explore_topk, filter_low_entropy, predict_single, ExploreConfig, ScoreMatrix};
use crate::numerics::stats::{mann_whitney, mean, pearson, spearman};
use crate::numerics::{adamw_step, dot, l2_normalize, softmax, stable_hash, AdamWConfig, AdamWState, RngStream};
use crate::pipeline::metrics::{compute_ecec, Competitor};

/// A world where a fraction of views is dominated by shared evidence that
/// the text embedding of a wrong class aligns with more strongly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasedWorldConfig {
    pub world: WorldSpec,
    pub text: ToyTextConfig,
    pub prompt_mode: PromptMode,
    pub true_class: usize,
    pub biased_class: usize,
    pub n_views: usize,
    /// Fraction of views carrying only shared evidence plus a trace of the
    /// true class.
    pub biased_fraction: f64,
    /// Range of the true-class unique magnitude in biased views.
    pub biased_unique: (f64, f64),
    /// Shared magnitude of the remaining, class-specific views.
    pub unbiased_common: f64,
    /// True-class unique magnitude of the class-specific views.
    pub unbiased_unique: f64,
    /// Range of the distractor-unique clutter in class-specific views.
    pub clutter: (f64, f64),
    /// True-class unique magnitude of view 0 (the full image, shared
    /// magnitude 1).
    pub full_unique: f64,
    /// Jitter added to the shared component to form each pair's
    /// common-evidence embedding.
    pub common_jitter: f64,
    pub beta: f64,
}

impl Default for BiasedWorldConfig {
    fn default() -> Self {
        Self {
            world: WorldSpec {
                d: 64,
                n_classes: 5,
                common_alignment: vec![0.4, 0.55, 0.4],
                unique_alignment: 0.6,
                cross_unique_alignment: 0.0,
                noise: 0.05,
                seed: 0x6269_6173,
            },
            text: ToyTextConfig {
                context_gain: 25.0,
                ..ToyTextConfig::default()
            },
            prompt_mode: PromptMode::SoftContext,
            true_class: 0,
            biased_class: 1,
            n_views: 64,
            biased_fraction: 0.7,
            biased_unique: (0.0, 0.1),
            unbiased_common: 0.5,
            unbiased_unique: 0.45,
            clutter: (0.3, 0.7),
            full_unique: 0.5,
            common_jitter: 0.05,
            beta: 20.0,
        }
    }
}

impl BiasedWorldConfig {
    /// Same layout with the wrong class no more aligned with the shared
    /// component than the true class.
    /// Same world with the common bias removed. Distractor clutter is halved
    /// so that the class-specific views are clearly won by the true class;
    /// at full clutter a handful of episodes sit on a near-tie with a
    /// distractor and any context update can tip them.
    pub fn unbiased_control() -> Self {
        let mut cfg = Self::default();
        cfg.world.common_alignment[1] = cfg.world.common_alignment[0];
        cfg.clutter = (cfg.clutter.0 / 2.0, cfg.clutter.1 / 2.0);
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        let c = self.world.n_classes;
        if self.true_class >= c || self.biased_class >= c || self.true_class == self.biased_class {
            return Err(FclError::invalid(
                "failure_modes",
                "true and biased class must be distinct classes",
            ));
        }
        if self.n_views < 2 {
            return Err(FclError::invalid("failure_modes.n_views", "need at least two views"));
        }
        if !(0.0..=1.0).contains(&self.biased_fraction) {
            return Err(FclError::invalid("failure_modes.biased_fraction", "must lie in [0, 1]"));
        }
        if !(self.beta > 0.0) {
            return Err(FclError::invalid("failure_modes.beta", "must be > 0"));
        }
        Ok(())
    }
}

/// One embedding-level episode. View 0 plays the role of the full image.
#[derive(Debug, Clone)]
pub struct SyntheticEpisode {
    pub views: Vec<SyntheticView>,
    pub biased: Vec<bool>,
    /// Common-evidence embedding per class pair, keyed by the lower and
    /// higher class index.
    pub common: Vec<Vec<Vec<f64>>>,
}

impl SyntheticEpisode {
    pub fn embeddings(&self) -> Vec<Vec<f64>> {
        self.views.iter().map(|v| v.embedding.clone()).collect()
    }

    pub fn common_for(&self, a: usize, b: usize) -> &[f64] {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        &self.common[lo][hi]
    }
}

fn uniform_in(rng: &mut RngStream, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.uniform()
}

/// Generates episode `trial` of the biased world.
pub fn sample_biased_episode(
    world: &SyntheticWorld,
    cfg: &BiasedWorldConfig,
    seed: u64,
    trial: u64,
) -> Result<SyntheticEpisode> {
    let mut rng = RngStream::for_purpose(seed, trial, "failure-mode-views");
    let c = world.n_classes();
    let n_biased = (cfg.biased_fraction * cfg.n_views as f64).round() as usize;
    let mut views = Vec::with_capacity(cfg.n_views);
    let mut biased = Vec::with_capacity(cfg.n_views);
    let class_specific = |rng: &mut RngStream, a_common: f64, a_true: f64| -> Result<SyntheticView> {
        let mut a = vec![0.0; c];
        for (k, v) in a.iter_mut().enumerate() {
            if k != cfg.true_class && k != cfg.biased_class {
                *v = uniform_in(rng, cfg.clutter) / (c - 2).max(1) as f64 * 2.0;
            }
        }
        a[cfg.true_class] = a_true;
        world.view(a_common, &a, rng)
    };
    // The full image shows everything at once.
    views.push(class_specific(&mut rng, 1.0, cfg.full_unique)?);
    biased.push(false);
    for k in 1..cfg.n_views {
        let is_biased = k <= n_biased;
        let view = if is_biased {
            let mut a = vec![0.0; c];
            a[cfg.true_class] = uniform_in(&mut rng, cfg.biased_unique);
            world.view(1.0, &a, &mut rng)?
        } else {
            class_specific(&mut rng, cfg.unbiased_common, cfg.unbiased_unique)?
        };
        views.push(view);
        biased.push(is_biased);
    }
    let mut common = vec![vec![Vec::new(); c]; c];
    for a in 0..c {
        for b in a + 1..c {
            let jittered: Vec<f64> = world
                .common
                .iter()
                .map(|v| v + cfg.common_jitter / (world.d() as f64).sqrt() * rng.gaussian())
                .collect();
            common[a][b] = l2_normalize(&jittered)?;
        }
    }
    Ok(SyntheticEpisode { views, biased, common })
}

/// Mean-entropy minimization over retained views with the calibration
/// optimizer. Returns the mean probability of `watch` over the retained
/// views, before and after every step.
#[allow(clippy::too_many_arguments)]
pub fn entropy_minimization<T: TextEncoder + ?Sized>(
    text: &T,
    base_context: &ContextParams,
    views: &[Vec<f64>],
    classes: &[usize],
    rho: f64,
    beta: f64,
    steps: usize,
    optimizer: AdamWConfig,
    watch: usize,
) -> Result<Vec<f64>> {
    let watch_pos = classes
        .iter()
        .position(|&c| c == watch)
        .ok_or(FclError::UnknownClass(watch))?;
    let mut ctx = base_context.clone();
    let taus = text.encode_all(classes, &ctx)?;
    let retained = filter_low_entropy(&ScoreMatrix::compute(views, &taus, classes, beta)?, rho);
    let mut state = AdamWState::new(ctx.len(), optimizer);
    let mut trace = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let taus = text.encode_all(classes, &ctx)?;
        let sm = ScoreMatrix::compute(views, &taus, classes, beta)?;
        let mut watched = 0.0;
        let mut upstream = vec![vec![0.0; text.dim()]; classes.len()];
        for &k in &retained {
            let p = sm.posterior(k);
            let p = p.probs();
            watched += p[watch_pos];
            let h: f64 = -p.iter().filter(|&&q| q > 0.0).map(|q| q * q.ln()).sum::<f64>();
            for (ci, &pc) in p.iter().enumerate() {
                if pc <= 0.0 {
                    continue;
                }
                // dH/ds_c = -p_c (ln p_c + H), and ds_c/dtau_c = beta z_k.
                let g = -pc * (pc.ln() + h) * beta / retained.len() as f64;
                for (u, z) in upstream[ci].iter_mut().zip(&views[k]) {
                    *u += g * z;
                }
            }
        }
        trace.push(watched / retained.len() as f64);
        if step == steps {
            break;
        }
        let mut grad = vec![0.0; ctx.len()];
        for (ci, &class) in classes.iter().enumerate() {
            let g = text.vjp(class, &ctx, &upstream[ci])?;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        adamw_step(&mut ctx.tokens, &grad, &mut state)?;
    }
    Ok(trace)
}

/// Outcome of one failure-mode episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureTrial {
    pub trial: u64,
    pub vote_prediction: usize,
    /// Mean retained-view probability of the biased class before and after
    /// every entropy-minimization step.
    pub entmin_biased_prob: Vec<f64>,
    /// Final probability strictly above the initial one.
    pub entmin_amplified: bool,
    /// Every individual step raised the probability.
    pub entmin_monotone: bool,
    pub fcl_prediction: usize,
    pub l_cal: (f64, f64),
    /// `|<z_com, tau_true> - <z_com, tau_biased>|` before and after calibration.
    pub biased_pair_gap: (f64, f64),
    pub mean_common_gap: (f64, f64),
    /// Prediction of the second pass with the planted optimum: text
    /// embeddings whose shared alignments are all equalized.
    pub oracle_prediction: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureModeReport {
    pub config: BiasedWorldConfig,
    pub trials: Vec<FailureTrial>,
    pub n_trials: usize,
    /// Share of trials where entropy minimization raised the biased-class
    /// probability.
    pub entmin_amplifies: f64,
    pub entmin_monotone: f64,
    pub vote_wrong: f64,
    pub vote_correct: f64,
    /// Among trials where voting was wrong, the share FCL turned correct.
    pub fcl_flip_rate: f64,
    pub fcl_correct: f64,
    pub oracle_correct: f64,
    pub gap_reduced: f64,
    pub l_cal_reduced: f64,
}

/// Text embeddings with the shared alignment of every class set to the mean
/// over classes, keeping everything else planted.
fn equalized_text(world: &SyntheticWorld) -> Result<Vec<Vec<f64>>> {
    let c = world.n_classes();
    let target = (0..c).map(|k| world.spec.common_alignment_of(k)).sum::<f64>() / c as f64;
    world
        .text
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let shift = target - world.spec.common_alignment_of(k);
            let moved: Vec<f64> = t.iter().zip(&world.common).map(|(a, b)| a + shift * b).collect();
            l2_normalize(&moved)
        })
        .collect()
}

pub fn run_failure_mode_experiments(
    cfg: &BiasedWorldConfig,
    explore: &ExploreConfig,
    calib: &CalibConfig,
    entmin_steps: usize,
    n_trials: usize,
    seed: u64,
) -> Result<FailureModeReport> {
    cfg.validate()?;
    explore.validate()?;
    calib.validate()?;
    let world = SyntheticWorld::new(cfg.world.clone())?;
    let text = world.planted_text_encoder(cfg.text.clone(), cfg.prompt_mode)?;
    let ctx0 = text.initial_context(cfg.prompt_mode);
    let all: Vec<usize> = (0..world.n_classes()).collect();
    let tau0 = text.encode_all(&all, &ctx0)?;
    let oracle_text = equalized_text(&world)?;
    let (y, j) = (cfg.true_class, cfg.biased_class);

    let mut trials = Vec::with_capacity(n_trials);
    for trial in 0..n_trials as u64 {
        let episode = sample_biased_episode(&world, cfg, seed, trial)?;
        let z = episode.embeddings();
        let cands = explore_topk(&ScoreMatrix::compute(&z, &tau0, &all, cfg.beta)?, explore)?;
        let entmin = entropy_minimization(
            &text,
            &ctx0,
            &z,
            &cands.classes,
            explore.rho,
            cfg.beta,
            entmin_steps,
            calib.optimizer(),
            j,
        )?;

        let ck = &cands.classes;
        let commons = PairSet::pair_positions(ck.len())
            .into_iter()
            .map(|(a, b)| episode.common_for(ck[a], ck[b]).to_vec())
            .collect();
        let pairs = PairSet::new(ck.clone(), commons, z[0].clone())?;
        let (ctx_star, trace) = calibrate_context(&text, &ctx0, &pairs, cfg.beta, calib)?;
        let tau_star = text.encode_all(ck, &ctx_star)?;
        let fcl = predict_single(
            &ScoreMatrix::compute(&z, &tau_star, ck, cfg.beta)?,
            explore.rho,
            explore.aggregation,
        )?;

        let tau_base = text.encode_all(ck, &ctx0)?;
        let pair_gap = |taus: &[Vec<f64>]| -> f64 {
            match (ck.iter().position(|&c| c == y), ck.iter().position(|&c| c == j)) {
                (Some(a), Some(b)) => {
                    let zc = episode.common_for(y, j);
                    (dot(zc, &taus[a]) - dot(zc, &taus[b])).abs()
                }
                _ => f64::NAN,
            }
        };
        let oracle_taus: Vec<Vec<f64>> = ck.iter().map(|&c| oracle_text[c].clone()).collect();
        let oracle = predict_single(
            &ScoreMatrix::compute(&z, &oracle_taus, ck, cfg.beta)?,
            explore.rho,
            explore.aggregation,
        )?;

        trials.push(FailureTrial {
            trial,
            vote_prediction: cands.top(),
            entmin_amplified: entmin.last() > entmin.first(),
            entmin_monotone: entmin.windows(2).all(|w| w[1] > w[0]),
            entmin_biased_prob: entmin,
            fcl_prediction: fcl,
            l_cal: (trace.l_cal[0], *trace.l_cal.last().expect("non-empty")),
            biased_pair_gap: (pair_gap(&tau_base), pair_gap(&tau_star)),
            mean_common_gap: (trace.common_gap[0], *trace.common_gap.last().expect("non-empty")),
            oracle_prediction: oracle,
        });
    }
    let share =
        |f: &dyn Fn(&FailureTrial) -> bool| trials.iter().filter(|t| f(t)).count() as f64 / trials.len().max(1) as f64;
    let wrong: Vec<&FailureTrial> = trials.iter().filter(|t| t.vote_prediction == j).collect();
    let fcl_flip_rate = if wrong.is_empty() {
        0.0
    } else {
        wrong.iter().filter(|t| t.fcl_prediction == y).count() as f64 / wrong.len() as f64
    };
    Ok(FailureModeReport {
        config: cfg.clone(),
        n_trials: trials.len(),
        entmin_amplifies: share(&|t| t.entmin_amplified),
        entmin_monotone: share(&|t| t.entmin_monotone),
        vote_wrong: share(&|t| t.vote_prediction == j),
        vote_correct: share(&|t| t.vote_prediction == y),
        fcl_flip_rate,
        fcl_correct: share(&|t| t.fcl_prediction == y),
        oracle_correct: share(&|t| t.oracle_prediction == y),
        gap_reduced: share(&|t| t.biased_pair_gap.1 < t.biased_pair_gap.0),
        l_cal_reduced: share(&|t| t.l_cal.1 < t.l_cal.0),
        trials,
    })
}

/// Calibration on episodes drawn from independently seeded biased worlds
/// with a random amount of bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEfficacy {
    pub n_episodes: usize,
    /// `L_cal` before and after calibration, per episode.
    pub l_cal: Vec<(f64, f64)>,
    /// Biased-pair common-evidence gap before and after, per episode.
    pub pair_gap: Vec<(f64, f64)>,
    pub l_cal_reduced: usize,
    pub gap_reduced: usize,
}

pub fn calibration_efficacy(
    base: &BiasedWorldConfig,
    explore: &ExploreConfig,
    calib: &CalibConfig,
    bias_range: (f64, f64),
    n_episodes: usize,
    seed: u64,
) -> Result<CalibrationEfficacy> {
    base.validate()?;
    let (y, j) = (base.true_class, base.biased_class);
    let mut l_cal = Vec::with_capacity(n_episodes);
    let mut pair_gap = Vec::with_capacity(n_episodes);
    for trial in 0..n_episodes as u64 {
        let mut rng = RngStream::for_purpose(seed, trial, "calibration-world");
        let mut cfg = base.clone();
        cfg.world.seed = seed ^ rng.next_u64();
        let mut alignment: Vec<f64> = (0..cfg.world.n_classes)
            .map(|k| base.world.common_alignment_of(k))
            .collect();
        alignment[j] = alignment[y] + uniform_in(&mut rng, bias_range);
        cfg.world.common_alignment = alignment;
        let world = SyntheticWorld::new(cfg.world.clone())?;
        let text = world.planted_text_encoder(cfg.text.clone(), cfg.prompt_mode)?;
        let ctx0 = text.initial_context(cfg.prompt_mode);
        let all: Vec<usize> = (0..world.n_classes()).collect();
        let episode = sample_biased_episode(&world, &cfg, seed, trial)?;
        let z = episode.embeddings();
        let cands = explore_topk(
            &ScoreMatrix::compute(&z, &text.encode_all(&all, &ctx0)?, &all, cfg.beta)?,
            explore,
        )?;
        let ck = &cands.classes;
        let (Some(a), Some(b)) = (ck.iter().position(|&c| c == y), ck.iter().position(|&c| c == j)) else {
            return Err(FclError::Degenerate(format!(
                "episode {trial}: biased pair not among the candidates"
            )));
        };
        let commons = PairSet::pair_positions(ck.len())
            .into_iter()
            .map(|(p, q)| episode.common_for(ck[p], ck[q]).to_vec())
            .collect();
        let pairs = PairSet::new(ck.clone(), commons, z[0].clone())?;
        let (ctx_star, trace) = calibrate_context(&text, &ctx0, &pairs, cfg.beta, calib)?;
        let zc = episode.common_for(y, j);
        let gap = |ctx: &ContextParams| -> Result<f64> {
            let t = text.encode_all(&[ck[a], ck[b]], ctx)?;
            Ok((dot(zc, &t[0]) - dot(zc, &t[1])).abs())
        };
        l_cal.push((trace.l_cal[0], *trace.l_cal.last().expect("non-empty")));
        pair_gap.push((gap(&ctx0)?, gap(&ctx_star)?));
    }
    Ok(CalibrationEfficacy {
        n_episodes,
        l_cal_reduced: l_cal.iter().filter(|(a, b)| b < a).count(),
        gap_reduced: pair_gap.iter().filter(|(a, b)| b < a).count(),
        l_cal,
        pair_gap,
    })
}

/// Per-episode ECEC under the zero-shot prediction at `delta_0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcecRow {
    pub trial: u64,
    pub label: usize,
    pub prediction: usize,
    pub ecec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcecTrend {
    pub rows: Vec<EcecRow>,
    pub n_correct: usize,
    pub n_incorrect: usize,
    pub mean_correct: Option<f64>,
    pub mean_incorrect: Option<f64>,
    /// Two-sided Mann-Whitney p-value, incorrect against correct.
    pub p_two_sided: Option<f64>,
}

/// ECEC over single-view episodes of the biased world: random true class,
/// random shared and unique magnitudes, faint clutter from the others.
pub fn ecec_trend(
    cfg: &BiasedWorldConfig,
    unique_range: (f64, f64),
    epsilon: f64,
    n_episodes: usize,
    seed: u64,
) -> Result<EcecTrend> {
    cfg.validate()?;
    let world = SyntheticWorld::new(cfg.world.clone())?;
    let c = world.n_classes();
    let all: Vec<usize> = (0..c).collect();
    let mut rows = Vec::with_capacity(n_episodes);
    for trial in 0..n_episodes as u64 {
        let mut rng = RngStream::for_purpose(seed, trial, "ecec-trend");
        let label = (rng.next_u64() % c as u64) as usize;
        let mut a: Vec<f64> = (0..c).map(|_| 0.1 * rng.uniform()).collect();
        a[label] = uniform_in(&mut rng, unique_range);
        let view = world.view(uniform_in(&mut rng, (0.5, 1.0)), &a, &mut rng)?;
        let z = &view.embedding;
        let sm = ScoreMatrix::compute(std::slice::from_ref(z), &world.text, &all, cfg.beta)?;
        let prediction = crate::numerics::argmax(sm.row(0));
        let commons: Vec<Vec<f64>> = all
            .iter()
            .filter(|&&k| k != prediction)
            .map(|_| {
                let jittered: Vec<f64> = world
                    .common
                    .iter()
                    .map(|v| v + cfg.common_jitter / (world.d() as f64).sqrt() * rng.gaussian())
                    .collect();
                l2_normalize(&jittered)
            })
            .collect::<Result<_>>()?;
        let competitors: Vec<Competitor<'_>> = all
            .iter()
            .filter(|&&k| k != prediction)
            .zip(&commons)
            .map(|(&k, common)| Competitor {
                text: &world.text[k],
                common,
            })
            .collect();
        let ecec = compute_ecec(z, &world.text[prediction], &competitors, epsilon)?;
        rows.push(EcecRow {
            trial,
            label,
            prediction,
            ecec,
        });
    }
    let correct: Vec<f64> = rows
        .iter()
        .filter(|r| r.prediction == r.label)
        .map(|r| r.ecec)
        .collect();
    let incorrect: Vec<f64> = rows
        .iter()
        .filter(|r| r.prediction != r.label)
        .map(|r| r.ecec)
        .collect();
    let p_two_sided = mann_whitney(&incorrect, &correct).ok().map(|t| t.p_two_sided);
    Ok(EcecTrend {
        n_correct: correct.len(),
        n_incorrect: incorrect.len(),
        mean_correct: mean(&correct),
        mean_incorrect: mean(&incorrect),
        p_two_sided,
        rows,
    })
}

/// How the unique coefficient of the measured class behaves across views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EuecSweep {
    /// Linearly from 0 to 1 over the views.
    Swept,
    /// The class is absent from every view, so its realized component is
    /// pure noise while the entropy is still driven by another class's sweep.
    Null,
    /// Every view has the same coefficients and no noise.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EuecCorrelation {
    pub n_views: usize,
    pub entropy: Vec<f64>,
    /// `<z_k, z_uniq_y> <z_uniq_y, tau_y>` per view.
    pub alignment: Vec<f64>,
    pub pearson: f64,
    pub spearman: f64,
}

/// Correlation between per-view entropy and planted-unique alignment.
pub fn euec_entropy_correlation(
    spec: &WorldSpec,
    sweep: EuecSweep,
    n_views: usize,
    beta: f64,
    seed: u64,
) -> Result<EuecCorrelation> {
    if n_views < 30 {
        return Err(FclError::invalid("n_views", "need at least 30 views"));
    }
    let mut spec = spec.clone();
    if sweep == EuecSweep::Constant {
        spec.noise = 0.0;
    }
    let world = SyntheticWorld::new(spec)?;
    let c = world.n_classes();
    let all: Vec<usize> = (0..c).collect();
    let (measured, driver) = match sweep {
        EuecSweep::Null => (1, 0),
        _ => (0, 0),
    };
    let mut rng = RngStream::for_purpose(seed, 0, "euec-sweep");
    let mut entropy = Vec::with_capacity(n_views);
    let mut alignment = Vec::with_capacity(n_views);
    for k in 0..n_views {
        let t = match sweep {
            EuecSweep::Constant => 0.5,
            _ => k as f64 / (n_views - 1) as f64,
        };
        let mut a = vec![0.2; c];
        a[measured] = 0.0;
        a[driver] = t;
        let view = world.view(1.0, &a, &mut rng)?;
        let sm = ScoreMatrix::compute(std::slice::from_ref(&view.embedding), &world.text, &all, beta)?;
        entropy.push(sm.entropies()[0]);
        let u = &world.unique[measured];
        alignment.push(dot(&view.embedding, u) * dot(u, &world.text[measured]));
    }
    let degenerate = || FclError::Degenerate("entropy or alignment has zero variance".into());
    Ok(EuecCorrelation {
        n_views,
        pearson: pearson(&entropy, &alignment).ok_or_else(degenerate)?,
        spearman: spearman(&entropy, &alignment).ok_or_else(degenerate)?,
        entropy,
        alignment,
    })
}

/// Result of checking the softmax lower bound on random score rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub instances: usize,
    pub violations: usize,
    /// Instances with untied competitors where the bound was not strict.
    pub non_strict: usize,
    pub max_two_class_error: f64,
    pub max_tied_error: f64,
}

pub fn check_softmax_bound(n_instances: usize, max_classes: usize, seed: u64) -> Result<BoundCheck> {
    use super::margin::{margin, softmax_lower_bound};
    let max_classes = max_classes.max(2);
    let mut rng = RngStream::new(seed, stable_hash(b"bound-suite"));
    let mut out = BoundCheck {
        instances: n_instances,
        violations: 0,
        non_strict: 0,
        max_two_class_error: 0.0,
        max_tied_error: 0.0,
    };
    for i in 0..n_instances {
        let c = 2 + (rng.next_u64() % (max_classes - 1) as u64) as usize;
        let scale = 10.0 * rng.uniform();
        let y = (rng.next_u64() % c as u64) as usize;
        // Every tenth instance ties all competitors, where the bound is exact.
        let tied = i % 10 == 0;
        let shared = scale * rng.gaussian();
        let scores: Vec<f64> = (0..c)
            .map(|k| if tied && k != y { shared } else { scale * rng.gaussian() })
            .collect();
        let m = margin(&scores, y)?;
        let bound = softmax_lower_bound(m, c);
        let p = softmax(&scores)?.probs()[y];
        if p < bound - 1e-12 {
            out.violations += 1;
        }
        if c == 2 {
            out.max_two_class_error = out.max_two_class_error.max((p - bound).abs());
        } else if tied {
            out.max_tied_error = out.max_tied_error.max((p - bound).abs());
        } else if p <= bound && bound < 1.0 {
            out.non_strict += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failure_modes_reproduce() {
        let r = run_failure_mode_experiments(
            &BiasedWorldConfig::default(),
            &ExploreConfig::default(),
            &CalibConfig::default(),
            5,
            30,
            11,
        )
        .unwrap();
        assert_eq!(r.entmin_amplifies, 1.0);
        assert_eq!(r.vote_wrong, 1.0);
        assert!(r.fcl_flip_rate >= 0.6, "{}", r.fcl_flip_rate);
        assert_eq!(r.oracle_correct, 1.0);
        assert_eq!(r.gap_reduced, 1.0);
    }

    #[test]
    fn unbiased_control_stays_correct() {
        let r = run_failure_mode_experiments(
            &BiasedWorldConfig::unbiased_control(),
            &ExploreConfig::default(),
            &CalibConfig::default(),
            5,
            20,
            3,
        )
        .unwrap();
        assert_eq!(r.vote_correct, 1.0);
        assert_eq!(r.fcl_correct, 1.0);
        for t in &r.trials {
            // Entropy minimization does not amplify the (absent) bias.
            assert!(t.entmin_biased_prob[0] < 0.5);
            assert_eq!(t.fcl_prediction, t.vote_prediction);
        }
    }

    #[test]
    fn episodes_are_reproducible() {
        let cfg = BiasedWorldConfig::default();
        let w = SyntheticWorld::new(cfg.world.clone()).unwrap();
        let a = sample_biased_episode(&w, &cfg, 5, 2).unwrap();
        let b = sample_biased_episode(&w, &cfg, 5, 2).unwrap();
        assert_eq!(a.embeddings(), b.embeddings());
        assert_eq!(a.biased.iter().filter(|&&v| v).count(), 45);
        assert!(!a.biased[0]);
        let c = sample_biased_episode(&w, &cfg, 5, 3).unwrap();
        assert_ne!(a.embeddings(), c.embeddings());
    }

    #[test]
    fn calibration_reduces_loss_and_gap() {
        let r = calibration_efficacy(
            &BiasedWorldConfig::default(),
            &ExploreConfig::default(),
            &CalibConfig::default(),
            (0.1, 0.2),
            20,
            4,
        )
        .unwrap();
        assert!(r.l_cal_reduced >= 19, "{}", r.l_cal_reduced);
        assert!(r.gap_reduced >= 19, "{}", r.gap_reduced);
    }

    #[test]
    fn ecec_is_higher_when_wrong() {
        let r = ecec_trend(&BiasedWorldConfig::default(), (0.0, 0.6), 1e-6, 200, 8).unwrap();
        assert!(
            r.n_correct > 20 && r.n_incorrect > 20,
            "{} {}",
            r.n_correct,
            r.n_incorrect
        );
        assert!(r.mean_incorrect.unwrap() > r.mean_correct.unwrap());
        assert!(r.p_two_sided.unwrap() < 0.01);
        assert!(r.rows.iter().all(|row| row.ecec >= 0.0 && row.ecec.is_finite()));
    }

    #[test]
    fn euec_correlations() {
        let spec = WorldSpec {
            noise: 0.1,
            ..Default::default()
        };
        let swept = euec_entropy_correlation(&spec, EuecSweep::Swept, 200, 20.0, 1).unwrap();
        assert!(swept.spearman < -0.5, "{}", swept.spearman);
        let null = euec_entropy_correlation(&spec, EuecSweep::Null, 500, 20.0, 1).unwrap();
        assert!(
            null.pearson.abs() < 0.2 && null.spearman.abs() < 0.2,
            "{} {}",
            null.pearson,
            null.spearman
        );
        assert!(matches!(
            euec_entropy_correlation(&spec, EuecSweep::Constant, 50, 20.0, 1),
            Err(FclError::Degenerate(_))
        ));
        assert!(euec_entropy_correlation(&spec, EuecSweep::Swept, 10, 20.0, 1).is_err());
    }

    #[test]
    fn bound_holds() {
        let r = check_softmax_bound(2000, 100, 3).unwrap();
        assert_eq!(r.violations, 0);
        assert_eq!(r.non_strict, 0);
        assert!(r.max_two_class_error < 1e-12);
        assert!(r.max_tied_error < 1e-12);
    }
}
