//! Embedded property suites with independent brute-force oracles.
//!
//! Shared by the `selftest` command and the acceptance tests. Every suite is
//! seeded, so a run is reproducible bit for bit.

use std::time::Instant;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::calibrate::{CalibConfig, CalibProblem, PairSet};
use crate::encoders::{PromptMode, TextEncoder, ToyTextConfig, ToyTextEncoder};
use crate::error::{FclError, Result};
use crate::evidence::{
    class_evidence_map, common_evidence_map, is_probability_map, spatial_softmax, EvidenceMap, MaskSpec, SpatialProbMap,
};
use crate::explore::{explore_topk, filter_low_entropy, retained_count, vote, Aggregation, ExploreConfig, ScoreMatrix};
use crate::numerics::{l2_normalize, softmax, stable_hash, RngStream, PROB_SUM_TOL};
use crate::theorylab::experiments::{
    calibration_efficacy, check_softmax_bound, ecec_trend, euec_entropy_correlation, run_failure_mode_experiments,
    BiasedWorldConfig, EuecSweep,
};
use crate::theorylab::proxy::{proxy_reconstruction, ProxyConfig};
use crate::theorylab::WorldSpec;

/// Suite names in execution order.
pub const SUITES: &[&str] = &[
    "bound",
    "gradient",
    "oracle-equivalence",
    "normalization",
    "calibration-efficacy",
    "failure-modes",
    "metric-trend",
    "proxy",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
    pub budget_seconds: f64,
}

impl SuiteOutcome {
    pub fn within_budget(&self) -> bool {
        self.seconds < self.budget_seconds
    }

    pub fn ok(&self) -> bool {
        self.passed && self.within_budget()
    }
}

fn budget(name: &str) -> f64 {
    match name {
        "bound" => 5.0,
        "gradient" | "oracle-equivalence" | "normalization" => 30.0,
        _ => 120.0,
    }
}

/// Runs one suite by name.
pub fn run_suite(name: &str, seed: u64) -> Result<SuiteOutcome> {
    let start = Instant::now();
    let (passed, detail) = match name {
        "bound" => bound_suite(seed)?,
        "gradient" => gradient_suite(seed)?,
        "oracle-equivalence" => oracle_suite(seed)?,
        "normalization" => normalization_suite(seed)?,
        "calibration-efficacy" => calibration_suite(seed)?,
        "failure-modes" => failure_mode_suite(seed)?,
        "metric-trend" => metric_trend_suite(seed)?,
        "proxy" => proxy_suite(seed)?,
        other => return Err(FclError::invalid("suite", format!("unknown suite '{other}'"))),
    };
    Ok(SuiteOutcome {
        name: name.to_string(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
        budget_seconds: budget(name),
    })
}

/// Runs every suite; a suite that errors is reported as failed.
pub fn run_all(seed: u64) -> Vec<SuiteOutcome> {
    SUITES
        .iter()
        .map(|&name| {
            let start = Instant::now();
            run_suite(name, seed).unwrap_or_else(|e| SuiteOutcome {
                name: name.to_string(),
                passed: false,
                detail: format!("error: {e}"),
                seconds: start.elapsed().as_secs_f64(),
                budget_seconds: budget(name),
            })
        })
        .collect()
}

fn bound_suite(seed: u64) -> Result<(bool, String)> {
    let r = check_softmax_bound(10_000, 100, seed)?;
    let passed = r.violations == 0 && r.non_strict == 0 && r.max_two_class_error <= 1e-12 && r.max_tied_error <= 1e-12;
    Ok((
        passed,
        format!(
            "{} instances, {} violations, {} non-strict, two-class error {:.1e}, tied error {:.1e}",
            r.instances, r.violations, r.non_strict, r.max_two_class_error, r.max_tied_error
        ),
    ))
}

fn gradient_suite(seed: u64) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for episode in 0..50u64 {
        let mut rng = RngStream::for_purpose(seed, episode, "gradient-suite");
        let k = 2 + (rng.next_u64() % 5) as usize;
        let mode = if episode % 2 == 0 {
            PromptMode::SoftContext
        } else {
            PromptMode::HardPromptPrefix
        };
        let cfg = ToyTextConfig {
            seed: rng.next_u64(),
            ..Default::default()
        };
        let names = (0..k).map(|i| format!("class{i}")).collect();
        let vocab = ToyTextEncoder::hashed_vocabulary(&cfg, names, "a photo of a {}.")?;
        let text = ToyTextEncoder::new(cfg, vocab)?;
        let d = text.dim();
        let common = PairSet::pair_positions(k)
            .iter()
            .map(|_| l2_normalize(&rng.gaussian_vec(d)))
            .collect::<Result<_>>()?;
        let pairs = PairSet::new((0..k).collect(), common, l2_normalize(&rng.gaussian_vec(d))?)?;
        let calib = CalibConfig {
            lambda_cal: 0.2 + rng.uniform(),
            lambda_align: rng.uniform() * 2.0,
            ..CalibConfig::default()
        };
        let ctx0 = text.initial_context(mode);
        let problem = CalibProblem::new(&text, &pairs, &ctx0, 20.0, calib)?;
        // Off delta_0 the alignment term contributes as well.
        let mut ctx = ctx0.clone();
        for t in ctx.tokens.iter_mut() {
            *t += 0.01 * rng.gaussian();
        }
        let grad = problem.evaluate(&ctx, true)?.gradient.expect("requested");
        let h = 1e-5;
        for (i, &g) in grad.iter().enumerate() {
            let plus = problem.evaluate(&ctx.perturbed(i, h), false)?.l_total;
            let minus = problem.evaluate(&ctx.perturbed(i, -h), false)?.l_total;
            let fd = (plus - minus) / (2.0 * h);
            worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-8));
            checked += 1;
        }
    }
    Ok((
        worst < 1e-4,
        format!("50 episodes, {checked} coordinates, max relative error {worst:.2e}"),
    ))
}

// Brute-force oracles. They avoid the production helpers on purpose.

/// `-sum p (c - ln sum e^c)` on the centered, sorted row, so permuted or
/// shifted copies of a row get bit-identical entropies.
fn oracle_entropy(row: &[f64]) -> f64 {
    let mut sorted = row.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let max = sorted[0];
    let centered: Vec<f64> = sorted.iter().map(|s| s - max).collect();
    let log_total = centered.iter().map(|c| c.exp()).sum::<f64>().ln();
    -centered
        .iter()
        .map(|c| {
            let log_p = c - log_total;
            log_p.exp() * log_p
        })
        .sum::<f64>()
}

fn oracle_filter(rows: &[Vec<f64>], rho: f64) -> Vec<usize> {
    let h: Vec<f64> = rows.iter().map(|r| oracle_entropy(r)).collect();
    let keep = retained_count(rows.len(), rho);
    // Rank of view i = number of views strictly before it in (entropy, index) order.
    let mut ranked = vec![usize::MAX; rows.len()];
    for i in 0..rows.len() {
        let rank = (0..rows.len())
            .filter(|&j| h[j] < h[i] || (h[j] == h[i] && j < i))
            .count();
        ranked[rank] = i;
    }
    ranked.truncate(keep);
    ranked
}

fn oracle_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..row.len() {
        if row[i] > row[best] {
            best = i;
        }
    }
    best
}

fn oracle_vote(rows: &[Vec<f64>], retained: &[usize]) -> Vec<f64> {
    let c = rows[0].len();
    (0..c)
        .map(|k| retained.iter().filter(|&&v| oracle_argmax(&rows[v]) == k).count() as f64 / retained.len() as f64)
        .collect()
}

fn oracle_mean_probs(rows: &[Vec<f64>], retained: &[usize]) -> Vec<f64> {
    let c = rows[0].len();
    let mut out = vec![0.0; c];
    for &v in retained {
        let row = &rows[v];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = e.iter().sum();
        for (o, x) in out.iter_mut().zip(&e) {
            *o += x / total;
        }
    }
    out.iter().map(|v| v / retained.len() as f64).collect()
}

/// Repeatedly extracts the best remaining class.
fn oracle_topk(classes: &[usize], agg: &[f64], means: &[f64], k: usize) -> Vec<usize> {
    let better = |a: usize, b: usize| -> bool {
        if agg[a] != agg[b] {
            return agg[a] > agg[b];
        }
        if means[a] != means[b] {
            return means[a] > means[b];
        }
        classes[a] < classes[b]
    };
    let mut left: Vec<usize> = (0..classes.len()).collect();
    let mut out = Vec::new();
    while out.len() < k.min(classes.len()) {
        let mut best = 0;
        for i in 1..left.len() {
            if better(left[i], left[best]) {
                best = i;
            }
        }
        out.push(classes[left.remove(best)]);
    }
    out
}

fn oracle_evidence(masks: &[MaskSpec], deltas: &[f64], h: usize, w: usize) -> Vec<f64> {
    let cell_of = |p: usize, n: usize, g: usize| {
        (0..g)
            .find(|&b| b * n / g <= p && p < (b + 1) * n / g)
            .expect("covered")
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (m, &d) in masks.iter().zip(deltas) {
                let cell = cell_of(y, h, m.grid) * m.grid + cell_of(x, w, m.grid);
                if m.cells.contains(&cell) {
                    acc += d;
                }
            }
            out[y * w + x] = acc / masks.len() as f64;
        }
    }
    out
}

fn random_rows(rng: &mut RngStream, n: usize, c: usize) -> Vec<Vec<f64>> {
    let scale = 0.5 + 8.0 * rng.uniform();
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..c).map(|_| scale * rng.gaussian()).collect())
        .collect();
    // Duplicate some rows and quantize some scores so ties occur.
    if rng.uniform() < 0.3 && n > 1 {
        let src = (rng.next_u64() % n as u64) as usize;
        let dst = (rng.next_u64() % n as u64) as usize;
        rows[dst] = rows[src].clone();
    }
    if rng.uniform() < 0.3 {
        for r in rows.iter_mut() {
            r.iter_mut().for_each(|v| *v = v.round());
        }
    }
    rows
}

fn oracle_suite(seed: u64) -> Result<(bool, String)> {
    let n_instances = 250;
    let mut failures: Vec<String> = Vec::new();
    let mut rng = RngStream::new(seed, stable_hash(b"oracle-suite"));
    for inst in 0..n_instances {
        let n = 1 + (rng.next_u64() % 12) as usize;
        let c = 1 + (rng.next_u64() % 7) as usize;
        let rows = random_rows(&mut rng, n, c);
        let classes: Vec<usize> = (0..c).map(|k| k * 3 + 1).collect();
        let sm = ScoreMatrix::from_scores(classes.clone(), n, rows.concat())?;
        let rho = [0.1, 0.3, 0.5, 1.0][inst % 4];

        let retained = filter_low_entropy(&sm, rho);
        if retained != oracle_filter(&rows, rho) {
            failures.push(format!("filter_low_entropy #{inst}"));
        }
        let votes = vote(&sm, &retained, Aggregation::Voting);
        if votes != oracle_vote(&rows, &retained) {
            failures.push(format!("vote #{inst}"));
        }
        let means = oracle_mean_probs(&rows, &retained);
        let mean_vote = vote(&sm, &retained, Aggregation::Mean);
        if mean_vote.iter().zip(&means).any(|(a, b)| (a - b).abs() > 1e-12) {
            failures.push(format!("vote(mean) #{inst}"));
        }
        let top_k = 1 + (rng.next_u64() % 8) as usize;
        let cands = explore_topk(
            &sm,
            &ExploreConfig {
                rho,
                top_k,
                aggregation: Aggregation::Voting,
            },
        )?;
        let expect = oracle_topk(&classes, &oracle_vote(&rows, &retained), &means, top_k);
        if cands.classes != expect {
            failures.push(format!("explore_topk #{inst}"));
        }

        let h = 1 + (rng.next_u64() % 8) as usize;
        let w = 1 + (rng.next_u64() % 8) as usize;
        let n_masks = 1 + (rng.next_u64() % 16) as usize;
        let masks: Vec<MaskSpec> = (0..n_masks)
            .map(|_| {
                let g = 2 + (rng.next_u64() % 4) as usize;
                let cells = (0..g * g).filter(|_| rng.uniform() < 0.5).collect();
                MaskSpec::new(g, cells, h, w)
            })
            .collect::<Result<_>>()?;
        let deltas: Vec<f64> = (0..n_masks).map(|_| rng.gaussian()).collect();
        let e = class_evidence_map(&masks, &deltas)?;
        let oracle = oracle_evidence(&masks, &deltas, h, w);
        if e.values.iter().zip(&oracle).any(|(a, b)| (a - b).abs() > 1e-12) {
            failures.push(format!("class_evidence_map #{inst}"));
        }

        let s_i = spatial_softmax(&e)?;
        let other = EvidenceMap {
            height: h,
            width: w,
            values: (0..h * w).map(|_| 3.0 * rng.gaussian()).collect(),
        };
        let s_j = spatial_softmax(&other)?;
        let q = common_evidence_map((0, 1), &s_i, &s_j)?;
        let prod: Vec<f64> = s_i.values.iter().zip(&s_j.values).map(|(a, b)| a * b).collect();
        let total: f64 = prod.iter().sum();
        if q.values.iter().zip(&prod).any(|(a, b)| (a - b / total).abs() > 1e-12) {
            failures.push(format!("common_evidence_map #{inst}"));
        }
    }
    let detail = if failures.is_empty() {
        format!("{n_instances} instances each for filter, vote, explore_topk, class and common evidence maps")
    } else {
        format!("{} mismatches, first: {}", failures.len(), failures[0])
    };
    Ok((failures.is_empty(), detail))
}

fn normalization_suite(seed: u64) -> Result<(bool, String)> {
    let mut rng = RngStream::new(seed, stable_hash(b"normalization-suite"));
    let mut bad = 0usize;
    let mut worst: f64 = 0.0;
    let mut track = |values: &[f64]| {
        worst = worst.max((values.iter().sum::<f64>() - 1.0).abs());
        if !is_probability_map(values) {
            bad += 1;
        }
    };
    for _ in 0..1000 {
        let h = 1 + (rng.next_u64() % 32) as usize;
        let w = 1 + (rng.next_u64() % 32) as usize;
        let scale = 50.0 * rng.uniform();
        let mut map = || EvidenceMap {
            height: h,
            width: w,
            values: (0..h * w).map(|_| scale * rng.gaussian()).collect(),
        };
        let (a, b) = (map(), map());
        let s_a: SpatialProbMap = spatial_softmax(&a)?;
        let s_b = spatial_softmax(&b)?;
        let q = common_evidence_map((0, 1), &s_a, &s_b)?;
        let c = 1 + (rng.next_u64() % 1000) as usize;
        let p = softmax(&(0..c).map(|_| scale * rng.gaussian()).collect::<Vec<_>>())?;
        track(&s_a.values);
        track(&s_b.values);
        track(&q.values);
        track(p.probs());
    }
    Ok((
        bad == 0 && worst <= PROB_SUM_TOL,
        format!("1000 inputs x 4 distributions, {bad} invalid, max |sum - 1| {worst:.1e}"),
    ))
}

fn calibration_suite(seed: u64) -> Result<(bool, String)> {
    let r = calibration_efficacy(
        &BiasedWorldConfig::default(),
        &ExploreConfig::default(),
        &CalibConfig::default(),
        (0.1, 0.2),
        100,
        seed,
    )?;
    Ok((
        r.l_cal_reduced >= 95 && r.gap_reduced >= 95,
        format!(
            "L_cal reduced in {}/100, biased-pair common gap reduced in {}/100",
            r.l_cal_reduced, r.gap_reduced
        ),
    ))
}

fn failure_mode_suite(seed: u64) -> Result<(bool, String)> {
    let r = run_failure_mode_experiments(
        &BiasedWorldConfig::default(),
        &ExploreConfig::default(),
        &CalibConfig::default(),
        5,
        100,
        seed,
    )?;
    let control = run_failure_mode_experiments(
        &BiasedWorldConfig::unbiased_control(),
        &ExploreConfig::default(),
        &CalibConfig::default(),
        5,
        20,
        seed,
    )?;
    let passed = r.entmin_amplifies == 1.0
        && r.vote_wrong == 1.0
        && r.fcl_flip_rate >= 0.6
        && r.oracle_correct >= 0.6
        && control.vote_correct == 1.0
        && control.fcl_correct == 1.0;
    Ok((
        passed,
        format!(
            "(a) entropy minimization raised the wrong class in {:.0}% of episodes; (b) voting wrong in {:.0}%; (c) FCL flipped {:.0}% (planted optimum {:.0}%); control correct {:.0}%/{:.0}%",
            100.0 * r.entmin_amplifies,
            100.0 * r.vote_wrong,
            100.0 * r.fcl_flip_rate,
            100.0 * r.oracle_correct,
            100.0 * control.vote_correct,
            100.0 * control.fcl_correct
        ),
    ))
}

fn metric_trend_suite(seed: u64) -> Result<(bool, String)> {
    let ecec = ecec_trend(&BiasedWorldConfig::default(), (0.0, 0.6), 1e-6, 200, seed)?;
    let spec = WorldSpec {
        noise: 0.1,
        seed,
        ..Default::default()
    };
    let euec = euec_entropy_correlation(&spec, EuecSweep::Swept, 200, 20.0, seed)?;
    let (mc, mi, p) = (
        ecec.mean_correct.unwrap_or(f64::NAN),
        ecec.mean_incorrect.unwrap_or(f64::NAN),
        ecec.p_two_sided.unwrap_or(f64::NAN),
    );
    let finite = ecec.rows.iter().all(|r| r.ecec.is_finite() && r.ecec >= 0.0);
    Ok((
        mi > mc && p < 0.01 && euec.spearman < -0.5 && finite,
        format!(
            "ECEC correct {mc:.4} (n={}) vs incorrect {mi:.4} (n={}), two-sided p {p:.2e}; EUEC-entropy Spearman {:.3}",
            ecec.n_correct, ecec.n_incorrect, euec.spearman
        ),
    ))
}

fn proxy_suite(seed: u64) -> Result<(bool, String)> {
    let r = proxy_reconstruction(&ProxyConfig::default(), 200, seed)?;
    Ok((
        r.n_reconstructing >= 180,
        format!(
            "proxy sum beats every component in {}/200; mean cosines common {:.4}, unique {:.4}/{:.4}, proxy sum {:.4}",
            r.n_reconstructing, r.mean_component[0], r.mean_component[1], r.mean_component[2], r.mean_proxy_sum
        ),
    ))
}
