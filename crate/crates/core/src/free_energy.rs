//! Region-based free energy and the capacity estimates derived from it.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::constraint::RllSpec;
use crate::error::{Error, Result};
use crate::gbp::{belief_of, BeliefSet, ConvergenceReport, GbpConfig, GbpPlan};
use crate::grid::build_factor_graph;
use crate::region::{build_region_graph_with, plan_basic_regions, RegionGraph, RegionGraphOptions};
use crate::shape::GridShape;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Average energy and entropy of one region's belief, in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionTerm {
    pub counting_number: i64,
    /// `-sum b ln prod f`.
    pub energy: f64,
    /// `-sum b ln b`.
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyEstimate {
    /// Region-based free energy in nats; `exp(-f_hat)` estimates `Z`.
    pub f_hat: f64,
    pub log2_z: f64,
    pub regions: Vec<RegionTerm>,
}

impl FreeEnergyEstimate {
    pub fn ln_z(&self) -> f64 {
        -self.f_hat
    }
}

/// `sum_R c_R sum_x b_R(x) (ln b_R(x) - ln prod_{a in A_R} f_a(x_a))`.
pub fn region_free_energy(bs: &BeliefSet, rg: &RegionGraph) -> Result<FreeEnergyEstimate> {
    if bs.region_count() != rg.len() {
        return Err(Error::UnknownRegion(rg.len().min(bs.region_count())));
    }
    let factors = rg.factor_graph().factors();
    let mut total = CompensatedSum::default();
    let mut terms = Vec::with_capacity(rg.len());
    for region in rg.regions() {
        let belief = belief_of(bs, region.id)?;
        let lookups: Vec<(Vec<usize>, &[f64])> = region
            .factors
            .iter()
            .map(|&f| {
                let f = &factors[f as usize];
                let pos = f
                    .scope
                    .iter()
                    .map(|&v| {
                        region
                            .vars
                            .binary_search(&(v as u32))
                            .expect("factor scope inside region")
                    })
                    .collect();
                (pos, f.table.as_slice())
            })
            .collect();
        let mut energy = CompensatedSum::default();
        let mut entropy = CompensatedSum::default();
        for (&config, &b) in belief.support.configs.iter().zip(belief.probs) {
            if b <= 0.0 {
                continue;
            }
            let mut ln_f = 0.0;
            for (pos, table) in &lookups {
                let sub = pos
                    .iter()
                    .enumerate()
                    .fold(0usize, |acc, (j, &p)| acc | ((((config >> p) & 1) as usize) << j));
                let v = table[sub];
                if v <= 0.0 {
                    return Err(Error::BeliefSupport { region: region.id });
                }
                ln_f += v.ln();
            }
            energy.add(-b * ln_f);
            entropy.add(-b * b.ln());
        }
        let term = RegionTerm {
            counting_number: region.counting_number,
            energy: energy.value(),
            entropy: entropy.value(),
        };
        if term.counting_number != 0 {
            total.add(term.counting_number as f64 * (term.energy - term.entropy));
        }
        terms.push(term);
    }
    let f_hat = total.value();
    Ok(FreeEnergyEstimate {
        f_hat,
        log2_z: -f_hat / LN_2,
        regions: terms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CapacityOptions {
    pub gbp: GbpConfig,
    pub regions: RegionGraphOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityEstimate {
    pub spec: RllSpec,
    pub shape: GridShape,
    pub capacity_bits_per_symbol: f64,
    pub log2_z: f64,
    pub cells: usize,
    pub regions: usize,
    pub report: ConvergenceReport,
    pub options: CapacityOptions,
}

/// Runs the full pipeline (factor graph, region graph, GBP, free energy)
/// and returns the estimated `log2 Z / N`.
///
/// A run that stops at `max_iterations` is still returned, with
/// `report.converged == false`.
pub fn capacity_estimate(
    spec: &RllSpec,
    shape: &GridShape,
    options: &CapacityOptions,
) -> Result<CapacityEstimate> {
    let (estimate, _, _) = capacity_with_beliefs(spec, shape, options)?;
    Ok(estimate)
}

/// Like [`capacity_estimate`], also handing back the region graph and the
/// beliefs (the sampler draws from them).
pub fn capacity_with_beliefs(
    spec: &RllSpec,
    shape: &GridShape,
    options: &CapacityOptions,
) -> Result<(CapacityEstimate, RegionGraph, BeliefSet)> {
    let g = build_factor_graph(shape, spec)?;
    let rg = build_region_graph_with(g, &plan_basic_regions(spec), options.regions)?;
    let bs = GbpPlan::new(&rg)?.run(&rg, &options.gbp, None)?;
    let fe = region_free_energy(&bs, &rg)?;
    let cells = shape.cell_count();
    let estimate = CapacityEstimate {
        spec: spec.clone(),
        shape: shape.clone(),
        capacity_bits_per_symbol: fe.log2_z / cells as f64,
        log2_z: fe.log2_z,
        cells,
        regions: rg.len(),
        report: bs.report,
        options: *options,
    };
    Ok((estimate, rg, bs))
}

/// Guard-band sandwich on the infinite-grid capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShannonBounds {
    pub lower: f64,
    pub upper: f64,
    /// Widest guard band over all axes.
    pub guard_width: usize,
    /// Guard band per axis (the axis's `d`).
    pub guard_widths: Vec<usize>,
}

/// Tiling with `m`-sized blocks gives `C <= C(m,...,m)`; separating the
/// blocks by `d` all-zero guard cells along each axis gives
/// `prod_a (m / (m + d_a)) * C(m,...,m) <= C`.
pub fn shannon_bounds(ce: &CapacityEstimate) -> Result<ShannonBounds> {
    if !ce.spec.all_k_infinite() {
        return Err(Error::FiniteKUnsupported);
    }
    let ext = ce.shape.extents();
    let m = ext[0];
    if ext.iter().any(|&e| e != m) {
        return Err(Error::NonCubicShape(ext.to_vec()));
    }
    let guard_widths: Vec<usize> = ce.spec.axes().iter().map(|a| a.d).collect();
    let ratio: f64 = guard_widths
        .iter()
        .map(|&d| m as f64 / (m + d) as f64)
        .product();
    let upper = ce.capacity_bits_per_symbol;
    Ok(ShannonBounds {
        lower: ratio * upper,
        upper,
        guard_width: guard_widths.iter().copied().max().unwrap_or(0),
        guard_widths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbp::run_gbp;
    use crate::grid::{attach_evidence, EvidenceTable};
    use crate::region::build_region_graph;

    fn estimate_for(spec: &str, dims: usize, m: usize, capacity: f64) -> CapacityEstimate {
        CapacityEstimate {
            spec: RllSpec::parse(spec, dims).unwrap(),
            shape: GridShape::cube(dims, m).unwrap(),
            capacity_bits_per_symbol: capacity,
            log2_z: capacity * (m * m) as f64,
            cells: m * m,
            regions: 0,
            report: ConvergenceReport {
                iterations: 0,
                residual: 0.0,
                converged: true,
                consistency: 0.0,
            },
            options: CapacityOptions::default(),
        }
    }

    #[test]
    fn single_region_free_energy_is_exact() {
        let shape = GridShape::new(vec![2, 2]).unwrap();
        let spec = RllSpec::parse("1,inf", 2).unwrap();
        let g = build_factor_graph(&shape, &spec).unwrap();
        let rg = build_region_graph(g.clone(), &plan_basic_regions(&spec)).unwrap();
        let bs = run_gbp(&rg, &GbpConfig::default()).unwrap();
        let fe = region_free_energy(&bs, &rg).unwrap();
        assert!((fe.f_hat + 7f64.ln()).abs() < 1e-12);
        assert!((fe.log2_z - 7f64.log2()).abs() < 1e-12);

        // Evidence (0.5, 0.5) on all four cells multiplies Z by 1/16.
        let e = attach_evidence(&g, &[EvidenceTable(0.5, 0.5); 4]).unwrap();
        let rg = build_region_graph(e, &plan_basic_regions(&spec)).unwrap();
        let bs = run_gbp(&rg, &GbpConfig::default()).unwrap();
        let shifted = region_free_energy(&bs, &rg).unwrap();
        assert!((shifted.f_hat - fe.f_hat - 4.0 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn free_single_variable() {
        let shape = GridShape::new(vec![1]).unwrap();
        let spec = RllSpec::uniform(1, 0, None).unwrap();
        let g = build_factor_graph(&shape, &spec).unwrap();
        let rg = build_region_graph(g, &plan_basic_regions(&spec)).unwrap();
        let bs = run_gbp(&rg, &GbpConfig::default()).unwrap();
        let fe = region_free_energy(&bs, &rg).unwrap();
        assert!((fe.f_hat + LN_2).abs() < 1e-15);
    }

    #[test]
    fn two_by_two_capacity() {
        let ce = capacity_estimate(
            &RllSpec::parse("1,inf", 2).unwrap(),
            &GridShape::cube(2, 2).unwrap(),
            &CapacityOptions::default(),
        )
        .unwrap();
        assert!((ce.capacity_bits_per_symbol - 7f64.log2() / 4.0).abs() < 1e-12);
    }

    #[test]
    fn bounds_examples() {
        let b = shannon_bounds(&estimate_for("1,inf", 2, 300, 0.5884)).unwrap();
        assert!((b.lower - 0.5844).abs() < 1e-4);
        assert_eq!(b.upper, 0.5884);
        assert_eq!(b.guard_width, 1);
        let b = shannon_bounds(&estimate_for("1,inf", 2, 1, 1.0)).unwrap();
        assert_eq!(b.lower, 0.25);
        assert_eq!(b.upper, 1.0);
        assert!(matches!(
            shannon_bounds(&estimate_for("1,inf,2,4", 2, 10, 0.3)),
            Err(Error::FiniteKUnsupported)
        ));
        let b = shannon_bounds(&estimate_for("1,inf", 3, 10, 0.5)).unwrap();
        assert!((b.lower / b.upper - (10.0f64 / 11.0).powi(3)).abs() < 1e-15);
    }

    #[test]
    fn bounds_need_square_shape() {
        let mut ce = estimate_for("1,inf", 2, 4, 0.6);
        ce.shape = GridShape::new(vec![4, 5]).unwrap();
        assert!(matches!(shannon_bounds(&ce), Err(Error::NonCubicShape(_))));
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let mut s = CompensatedSum::default();
        s.add(1.0);
        for _ in 0..10 {
            s.add(1e-16);
        }
        s.add(-1.0);
        assert!((s.value() - 1e-15).abs() < 1e-28);
    }
}
