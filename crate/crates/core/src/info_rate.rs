//! Mutual information rate of a constrained input over a memoryless AWGN
//! channel, estimated by Monte Carlo with GBP output probabilities.
//!
//! Inputs are uniform over the admissible arrays and BPSK mapped
//! (0 -> -1, 1 -> +1). For each simulated output `y`, `ln p(y)` is the log
//! partition function of the constraint graph with Gaussian evidence
//! attached, minus the log partition function without evidence.

use std::f64::consts::{E, LN_2, PI};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::constraint::{BinaryArray, RllSpec};
use crate::error::{Error, Result};
use crate::free_energy::{region_free_energy, CompensatedSum};
use crate::gbp::{BeliefSet, GbpConfig, GbpPlan, MessageSet};
use crate::grid::{attach_evidence, build_factor_graph, EvidenceTable, FactorGraph};
use crate::region::{build_region_graph_with, plan_basic_regions, RegionGraph, RegionGraphOptions};
use crate::sampler::{draw_samples, sample_rng};
use crate::shape::GridShape;

/// Offset separating noise streams from input-sampling streams.
const NOISE_STREAM_BASE: usize = 1 << 40;

/// Smallest likelihood ratio kept in an evidence table.
const MIN_LIKELIHOOD: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AwgnChannel {
    pub sigma2: f64,
    pub snr_db: f64,
}

impl AwgnChannel {
    pub fn from_sigma2(sigma2: f64) -> Result<AwgnChannel> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidEvidence(format!(
                "noise variance must be positive, got {sigma2}"
            )));
        }
        Ok(AwgnChannel {
            sigma2,
            snr_db: -10.0 * sigma2.log10(),
        })
    }

    /// `snr_db = 10 log10(1 / sigma2)`.
    pub fn from_snr_db(snr_db: f64) -> Result<AwgnChannel> {
        if !snr_db.is_finite() {
            return Err(Error::InvalidEvidence(format!("SNR must be finite, got {snr_db}")));
        }
        Ok(AwgnChannel {
            sigma2: 10f64.powf(-snr_db / 10.0),
            snr_db,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    /// `ln N(y; mean, sigma2)`.
    fn log_density(&self, y: f64, mean: f64) -> f64 {
        -0.5 * (2.0 * PI * self.sigma2).ln() - (y - mean) * (y - mean) / (2.0 * self.sigma2)
    }
}

/// `h(Y|X) = (N/2) log2(2 pi e sigma2)` bits.
pub fn conditional_entropy(channel: &AwgnChannel, n: usize) -> f64 {
    0.5 * n as f64 * (2.0 * PI * E * channel.sigma2).log2()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSample {
    pub values: Vec<f64>,
    /// Index of the input array this output was produced from.
    pub input_index: usize,
    pub seed: u64,
}

/// Standard normal noise of output `index`; shared by every SNR of a sweep.
fn noise(seed: u64, index: usize, n: usize) -> Vec<f64> {
    let mut rng = sample_rng(seed, NOISE_STREAM_BASE + index);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// `y = x + sigma z` with `z` i.i.d. standard normal, one stream per input.
pub fn simulate_outputs(inputs: &[Vec<f64>], channel: &AwgnChannel, seed: u64) -> Vec<OutputSample> {
    let sigma = channel.sigma();
    inputs
        .iter()
        .enumerate()
        .map(|(i, x)| OutputSample {
            values: x
                .iter()
                .zip(noise(seed, i, x.len()))
                .map(|(&x, z)| x + sigma * z)
                .collect(),
            input_index: i,
            seed,
        })
        .collect()
}

/// Evidence tables for `y`, each scaled so its larger entry is 1, and the
/// total log of the removed scale factors.
fn evidence_tables(y: &[f64], channel: &AwgnChannel) -> (Vec<EvidenceTable>, f64) {
    let mut scale = CompensatedSum::default();
    let tables = y
        .iter()
        .map(|&v| {
            let l0 = channel.log_density(v, -1.0);
            let l1 = channel.log_density(v, 1.0);
            let top = l0.max(l1);
            scale.add(top);
            EvidenceTable(
                (l0 - top).exp().max(MIN_LIKELIHOOD),
                (l1 - top).exp().max(MIN_LIKELIHOOD),
            )
        })
        .collect();
    (tables, scale.value())
}

/// Reusable output-probability evaluator for one (spec, shape).
///
/// The region graph and message layout are built once; each output only
/// swaps the evidence tables. Every run warm-starts from the previous
/// output's messages and falls back to uniform messages if that run does
/// not converge.
pub struct OutputEvaluator {
    graph: FactorGraph,
    rg: RegionGraph,
    plan: GbpPlan,
    cfg: GbpConfig,
    noiseless_ln_z: f64,
    noiseless: BeliefSet,
    warm: Option<MessageSet>,
    /// Runs that needed the cold-start fallback.
    pub cold_restarts: usize,
    /// GBP iterations summed over all evaluated outputs.
    pub iterations: usize,
    pub evaluations: usize,
}

impl OutputEvaluator {
    pub fn new(spec: &RllSpec, shape: &GridShape, cfg: &GbpConfig) -> Result<OutputEvaluator> {
        Self::with_options(spec, shape, cfg, RegionGraphOptions::default())
    }

    pub fn with_options(
        spec: &RllSpec,
        shape: &GridShape,
        cfg: &GbpConfig,
        options: RegionGraphOptions,
    ) -> Result<OutputEvaluator> {
        let base = build_factor_graph(shape, spec)?;
        // Unit evidence leaves the constraint graph's beliefs and free
        // energy unchanged, so this graph also serves the noiseless run.
        let graph = attach_evidence(&base, &vec![EvidenceTable::UNIT; shape.cell_count()])?;
        let rg = build_region_graph_with(graph.clone(), &plan_basic_regions(spec), options)?;
        let plan = GbpPlan::new(&rg)?;
        let noiseless = plan.run(&rg, cfg, None)?;
        if !noiseless.converged() {
            return Err(Error::NonConverged {
                iterations: noiseless.report.iterations,
                residual: noiseless.report.residual,
            });
        }
        let noiseless_ln_z = -region_free_energy(&noiseless, &rg)?.f_hat;
        Ok(OutputEvaluator {
            graph,
            rg,
            plan,
            cfg: *cfg,
            noiseless_ln_z,
            noiseless,
            warm: None,
            cold_restarts: 0,
            iterations: 0,
            evaluations: 0,
        })
    }

    /// GBP estimate of `ln Z` without evidence.
    pub fn noiseless_ln_z(&self) -> f64 {
        self.noiseless_ln_z
    }

    /// `log2 Z / N` without evidence.
    pub fn noiseless_capacity(&self) -> f64 {
        self.noiseless_ln_z / LN_2 / self.rg.shape().cell_count() as f64
    }

    pub fn region_graph(&self) -> &RegionGraph {
        &self.rg
    }

    pub fn noiseless_beliefs(&self) -> &BeliefSet {
        &self.noiseless
    }

    /// Forgets the warm-start messages.
    pub fn reset_warm_start(&mut self) {
        self.warm = None;
    }

    /// `ln p(y)` (a density) under the given channel.
    pub fn log_probability(&mut self, y: &[f64], channel: &AwgnChannel) -> Result<f64> {
        if y.len() != self.rg.shape().cell_count() {
            return Err(Error::InvalidEvidence(format!(
                "{} outputs for grid {}",
                y.len(),
                self.rg.shape()
            )));
        }
        let (tables, ln_scale) = evidence_tables(y, channel);
        self.graph.set_evidence(&tables)?;
        self.rg.set_factor_graph(self.graph.clone())?;
        let mut bs = self.plan.run(&self.rg, &self.cfg, self.warm.as_ref())?;
        self.iterations += bs.report.iterations;
        if !bs.converged() && self.warm.is_some() {
            self.cold_restarts += 1;
            bs = self.plan.run(&self.rg, &self.cfg, None)?;
            self.iterations += bs.report.iterations;
        }
        self.evaluations += 1;
        if !bs.converged() {
            self.warm = None;
            return Err(Error::NonConverged {
                iterations: bs.report.iterations,
                residual: bs.report.residual,
            });
        }
        let ln_z = -region_free_energy(&bs, &self.rg)?.f_hat;
        self.warm = Some(bs.messages().clone());
        Ok(ln_z + ln_scale - self.noiseless_ln_z)
    }
}

/// One-shot `ln p(y)`; `noiseless_ln_z` is the GBP estimate of `ln Z`
/// for the same grid without evidence.
pub fn output_log_probability(
    y: &OutputSample,
    spec: &RllSpec,
    shape: &GridShape,
    channel: &AwgnChannel,
    noiseless_ln_z: f64,
    cfg: &GbpConfig,
) -> Result<f64> {
    let mut eval = OutputEvaluator::new(spec, shape, cfg)?;
    eval.noiseless_ln_z = noiseless_ln_z;
    eval.log_probability(&y.values, channel)
        .map_err(|e| e.at_sample(y.input_index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoRateEstimate {
    pub snr_db: f64,
    pub sigma2: f64,
    pub rate_bits_per_symbol: f64,
    /// Estimated `h(Y)` in bits for the whole grid.
    pub h_y_estimate: f64,
    /// `h(Y|X)` in bits for the whole grid.
    pub h_y_given_x: f64,
    /// Standard error of the rate.
    pub std_error: f64,
    pub samples: usize,
    pub cells: usize,
    /// GBP estimate of `log2 Z / N` for the noiseless grid.
    pub noiseless_capacity_reference: f64,
    pub mean_iterations: f64,
    pub cold_restarts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InfoRateOptions {
    pub gbp: GbpConfig,
    pub regions: RegionGraphOptions,
}

/// Draws `samples` inputs and estimates the rate at every channel in
/// `channels`. Inputs and the standard normal noise are shared across
/// channels, so differences between points reflect the SNR rather than
/// the draw. Each entry is that point's estimate or error.
pub fn estimate_info_rate_sweep(
    spec: &RllSpec,
    shape: &GridShape,
    channels: &[AwgnChannel],
    samples: usize,
    seed: u64,
    options: &InfoRateOptions,
) -> Result<Vec<Result<InfoRateEstimate>>> {
    let mut out = Vec::with_capacity(channels.len());
    info_rate_sweep_with(spec, shape, channels, samples, seed, options, |_, r| out.push(r))?;
    Ok(out)
}

/// Streaming form of [`estimate_info_rate_sweep`]: `on_point` receives each
/// channel's index and result as soon as it is done.
pub fn info_rate_sweep_with<F>(
    spec: &RllSpec,
    shape: &GridShape,
    channels: &[AwgnChannel],
    samples: usize,
    seed: u64,
    options: &InfoRateOptions,
    mut on_point: F,
) -> Result<()>
where
    F: FnMut(usize, Result<InfoRateEstimate>),
{
    if shape.ndim() != 2 {
        return Err(Error::Unsupported(format!(
            "information rates need a 2-D grid, got {shape}"
        )));
    }
    if samples == 0 {
        return Err(Error::InvalidEvidence("need at least one sample".into()));
    }
    let mut eval = OutputEvaluator::with_options(spec, shape, &options.gbp, options.regions)?;
    let inputs: Vec<Vec<f64>> = draw_samples(eval.region_graph(), eval.noiseless_beliefs(), samples, seed)?
        .iter()
        .map(BinaryArray::to_bpsk)
        .collect();
    let noises: Vec<Vec<f64>> = (0..samples)
        .map(|i| noise(seed, i, shape.cell_count()))
        .collect();
    for (i, channel) in channels.iter().enumerate() {
        on_point(i, rate_at(&mut eval, &inputs, &noises, channel));
    }
    Ok(())
}

fn rate_at(
    eval: &mut OutputEvaluator,
    inputs: &[Vec<f64>],
    noises: &[Vec<f64>],
    channel: &AwgnChannel,
) -> Result<InfoRateEstimate> {
    let n = eval.region_graph().shape().cell_count();
    let sigma = channel.sigma();
    let (iter0, cold0, eval0) = (eval.iterations, eval.cold_restarts, eval.evaluations);
    eval.reset_warm_start();
    let mut neg_log2: Vec<f64> = Vec::with_capacity(inputs.len());
    for (i, (x, z)) in inputs.iter().zip(noises).enumerate() {
        let y: Vec<f64> = x.iter().zip(z).map(|(&x, &z)| x + sigma * z).collect();
        let ln_p = eval.log_probability(&y, channel).map_err(|e| e.at_sample(i))?;
        neg_log2.push(-ln_p / LN_2);
    }
    let l = neg_log2.len() as f64;
    let mut sum = CompensatedSum::default();
    neg_log2.iter().for_each(|&v| sum.add(v));
    let h_y = sum.value() / l;
    let var = if neg_log2.len() > 1 {
        neg_log2.iter().map(|v| (v - h_y) * (v - h_y)).sum::<f64>() / (l - 1.0)
    } else {
        0.0
    };
    let h_ygx = conditional_entropy(channel, n);
    let runs = (eval.evaluations - eval0).max(1);
    Ok(InfoRateEstimate {
        snr_db: channel.snr_db,
        sigma2: channel.sigma2,
        rate_bits_per_symbol: (h_y - h_ygx) / n as f64,
        h_y_estimate: h_y,
        h_y_given_x: h_ygx,
        std_error: (var / l).sqrt() / n as f64,
        samples: neg_log2.len(),
        cells: n,
        noiseless_capacity_reference: eval.noiseless_capacity(),
        mean_iterations: (eval.iterations - iter0) as f64 / runs as f64,
        cold_restarts: eval.cold_restarts - cold0,
    })
}

/// Single-SNR form of [`estimate_info_rate_sweep`].
pub fn estimate_info_rate(
    spec: &RllSpec,
    shape: &GridShape,
    channel: &AwgnChannel,
    samples: usize,
    seed: u64,
    options: &InfoRateOptions,
) -> Result<InfoRateEstimate> {
    estimate_info_rate_sweep(spec, shape, &[*channel], samples, seed, options)?
        .pop()
        .expect("one channel")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::exact_output_log_probability;

    fn spec(text: &str) -> RllSpec {
        RllSpec::parse(text, 2).unwrap()
    }

    #[test]
    fn conditional_entropy_examples() {
        let unit = AwgnChannel::from_sigma2(1.0).unwrap();
        assert!((conditional_entropy(&unit, 1) - 2.0471).abs() < 1e-4);
        assert!((conditional_entropy(&unit, 900) - 1842.4).abs() < 0.1);
        let tiny = AwgnChannel::from_sigma2(1.0 / (2.0 * PI * E)).unwrap();
        assert!(conditional_entropy(&tiny, 1).abs() < 1e-15);
    }

    #[test]
    fn channel_fields_agree() {
        let c = AwgnChannel::from_snr_db(10.0).unwrap();
        assert!((c.sigma2 - 0.1).abs() < 1e-15);
        let d = AwgnChannel::from_sigma2(c.sigma2).unwrap();
        assert!((d.snr_db - 10.0).abs() < 1e-12);
        assert!(AwgnChannel::from_sigma2(0.0).is_err());
        assert!(AwgnChannel::from_snr_db(f64::NAN).is_err());
    }

    #[test]
    fn outputs_reproducible_and_noiseless_limit() {
        let x = vec![vec![-1.0, 1.0, 1.0, -1.0]; 3];
        let c = AwgnChannel::from_sigma2(0.5).unwrap();
        assert_eq!(simulate_outputs(&x, &c, 4), simulate_outputs(&x, &c, 4));
        let quiet = AwgnChannel::from_sigma2(1e-300).unwrap();
        for (y, x) in simulate_outputs(&x, &quiet, 4).iter().zip(&x) {
            for (a, b) in y.values.iter().zip(x) {
                assert!((a - b).abs() < 1e-140);
            }
        }
    }

    #[test]
    fn noise_variance_matches() {
        let c = AwgnChannel::from_sigma2(0.7).unwrap();
        let x = vec![vec![1.0; 1000]; 100];
        let d: Vec<f64> = simulate_outputs(&x, &c, 8)
            .iter()
            .flat_map(|y| y.values.iter().map(|v| v - 1.0).collect::<Vec<_>>())
            .collect();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        // Standard error of a sample variance: sigma2 * sqrt(2 / (n - 1)).
        let se = 0.7 * (2.0 / (n - 1.0)).sqrt();
        assert!((var - 0.7).abs() < 3.0 * se, "{var}");
    }

    #[test]
    fn single_cell_closed_form() {
        let shape = GridShape::new(vec![1, 1]).unwrap();
        let c = AwgnChannel::from_sigma2(1.0).unwrap();
        let mut eval = OutputEvaluator::new(&spec("0,inf"), &shape, &GbpConfig::default()).unwrap();
        let ln_p = eval.log_probability(&[0.0], &c).unwrap();
        let expected = (-0.5f64).exp() / (2.0 * PI).sqrt();
        assert!((ln_p - expected.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_matches_oracle() {
        let shape = GridShape::new(vec![2, 2]).unwrap();
        let s = spec("1,inf");
        let c = AwgnChannel::from_sigma2(1.0).unwrap();
        let mut eval = OutputEvaluator::new(&s, &shape, &GbpConfig::default()).unwrap();
        let x = vec![vec![-1.0, 1.0, 1.0, -1.0]; 10];
        for y in simulate_outputs(&x, &c, 21) {
            let gbp = eval.log_probability(&y.values, &c).unwrap();
            let exact = exact_output_log_probability(&s, &shape, &y.values, 1.0).unwrap();
            assert!(((gbp - exact) / exact).abs() < 1e-9, "{gbp} vs {exact}");
        }
    }

    #[test]
    fn three_by_three_close_to_oracle() {
        let shape = GridShape::new(vec![3, 3]).unwrap();
        let s = spec("1,inf");
        let c = AwgnChannel::from_snr_db(3.0).unwrap();
        let mut eval = OutputEvaluator::new(&s, &shape, &GbpConfig::default()).unwrap();
        let rg = eval.region_graph().clone();
        let bs = eval.noiseless_beliefs().clone();
        let x: Vec<Vec<f64>> = draw_samples(&rg, &bs, 10, 2).unwrap().iter().map(BinaryArray::to_bpsk).collect();
        for y in simulate_outputs(&x, &c, 5) {
            let gbp = eval.log_probability(&y.values, &c).unwrap();
            let exact = exact_output_log_probability(&s, &shape, &y.values, c.sigma()).unwrap();
            assert!((gbp - exact).abs() < 1e-3, "{gbp} vs {exact}");
        }
    }

    #[test]
    fn uniform_evidence_scaling_cancels() {
        // Shifting every output by the same amount changes the evidence,
        // but rescaling the tables must not: compare against the oracle
        // directly through the one-shot path.
        let shape = GridShape::new(vec![2, 2]).unwrap();
        let s = spec("1,inf");
        let c = AwgnChannel::from_sigma2(0.8).unwrap();
        let y = OutputSample {
            values: vec![0.3, -1.2, 0.9, 0.1],
            input_index: 0,
            seed: 0,
        };
        let eval = OutputEvaluator::new(&s, &shape, &GbpConfig::default()).unwrap();
        let a = output_log_probability(&y, &s, &shape, &c, eval.noiseless_ln_z(), &GbpConfig::default()).unwrap();
        let (tables, scale) = evidence_tables(&y.values, &c);
        let doubled: Vec<EvidenceTable> = tables.iter().map(|t| EvidenceTable(2.0 * t.0, 2.0 * t.1)).collect();
        let mut g = attach_evidence(&build_factor_graph(&shape, &s).unwrap(), &doubled).unwrap();
        g.set_evidence(&doubled).unwrap();
        let rg = build_region_graph_with(g, &plan_basic_regions(&s), RegionGraphOptions::default()).unwrap();
        let bs = GbpPlan::new(&rg).unwrap().run(&rg, &GbpConfig::default(), None).unwrap();
        let ln_z = -region_free_energy(&bs, &rg).unwrap().f_hat;
        let b = ln_z - 4.0 * 2f64.ln() + scale - eval.noiseless_ln_z();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_rate_matches_oracle_rate() {
        let shape = GridShape::new(vec![2, 2]).unwrap();
        let s = spec("1,inf");
        let c = AwgnChannel::from_snr_db(0.0).unwrap();
        let est = estimate_info_rate(&s, &shape, &c, 200, 17, &InfoRateOptions::default()).unwrap();
        // Same inputs and noise, exact ln p(y).
        let mut eval = OutputEvaluator::new(&s, &shape, &GbpConfig::default()).unwrap();
        let rg = eval.region_graph().clone();
        let bs = eval.noiseless_beliefs().clone();
        let inputs: Vec<Vec<f64>> = draw_samples(&rg, &bs, 200, 17).unwrap().iter().map(BinaryArray::to_bpsk).collect();
        let h: f64 = simulate_outputs(&inputs, &c, 17)
            .iter()
            .map(|y| -exact_output_log_probability(&s, &shape, &y.values, c.sigma()).unwrap() / LN_2)
            .sum::<f64>()
            / 200.0;
        let exact_rate = (h - conditional_entropy(&c, 4)) / 4.0;
        assert!((est.rate_bits_per_symbol - exact_rate).abs() <= 3.0 * est.std_error);
        assert!((est.rate_bits_per_symbol - exact_rate).abs() < 1e-9);
        let _ = eval.log_probability(&[0.0; 4], &c).unwrap();
    }

    #[test]
    fn rate_bounds_and_monotonic_sweep() {
        let shape = GridShape::new(vec![6, 6]).unwrap();
        let s = spec("1,inf");
        let channels: Vec<AwgnChannel> = [-6.0, 0.0, 6.0, 12.0]
            .iter()
            .map(|&d| AwgnChannel::from_snr_db(d).unwrap())
            .collect();
        let rows = estimate_info_rate_sweep(&s, &shape, &channels, 60, 3, &InfoRateOptions::default()).unwrap();
        let rows: Vec<InfoRateEstimate> = rows.into_iter().map(|r| r.unwrap()).collect();
        for r in &rows {
            assert!(r.rate_bits_per_symbol >= -3.0 * r.std_error);
            assert!(r.rate_bits_per_symbol <= r.noiseless_capacity_reference + 3.0 * r.std_error);
            assert_eq!(r.samples, 60);
        }
        for w in rows.windows(2) {
            let band = 2.0 * (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
            assert!(w[1].rate_bits_per_symbol >= w[0].rate_bits_per_symbol - band);
        }
    }

    #[test]
    fn rejects_bad_requests() {
        let c = AwgnChannel::from_sigma2(1.0).unwrap();
        let opts = InfoRateOptions::default();
        let s3 = RllSpec::parse("1,inf", 3).unwrap();
        assert!(estimate_info_rate(&s3, &GridShape::cube(3, 2).unwrap(), &c, 1, 0, &opts).is_err());
        assert!(estimate_info_rate(&spec("1,inf"), &GridShape::cube(2, 2).unwrap(), &c, 0, 0, &opts).is_err());
    }
}
