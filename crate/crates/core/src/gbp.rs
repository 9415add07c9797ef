//! Parent-to-child generalized belief propagation.
//!
//! Messages run along region-graph edges `P -> R` and are tables over the
//! configurations of `R`. With `E(X)` denoting `X` together with all of its
//! descendants, the update is
//!
//! ```text
//! m(P->R)(x_R) = sum over x_{P\R} of  prod_{a in A_P \ A_R} f_a(x_a) * prod_{(I,J) in N(P,R)} m(I->J)(x_J)
//!                ---------------------------------------------------------------------------------------
//!                                     prod_{(I,J) in D(P,R)} m(I->J)(x_J)
//! ```
//!
//! where `N(P,R)` holds the edges `(I,J)` with `J` in `E(P) \ E(R)` and `I`
//! outside `E(P)`, and `D(P,R)` holds the edges with `I` in `E(P) \ {P}`
//! minus `E(R)` and `J` in `E(R)`. Region beliefs are the product of the
//! region's factors and every message entering `E(R)` from outside.
//!
//! Tables are indexed by the configurations a region's constraint factors
//! allow (its support) and stored as natural logs; `-inf` marks an entry with
//! no support. Configurations outside the support never carry belief, so
//! nothing is lost by not storing them.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::FactorKind;
use crate::region::RegionGraph;

/// Regions with more variables than this are rejected.
pub const MAX_REGION_VARS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Synchronous,
    Sequential,
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "synchronous" | "sync" => Ok(Schedule::Synchronous),
            "sequential" | "seq" => Ok(Schedule::Sequential),
            _ => Err(Error::Parse(format!("unknown schedule {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbpConfig {
    /// Weight of the previous message in the (log-domain) damped update.
    pub damping: f64,
    /// Convergence threshold on the largest change of any log-message entry.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub schedule: Schedule,
    /// Seeds the edge order of the sequential schedule.
    pub seed: u64,
    /// Switch to Newton-Krylov steps when a short damped relaxation has not
    /// converged.
    #[serde(default = "enabled")]
    pub newton_krylov: bool,
}

fn enabled() -> bool {
    true
}

impl Default for GbpConfig {
    fn default() -> Self {
        GbpConfig {
            damping: 0.5,
            tolerance: 1e-9,
            max_iterations: 10_000,
            schedule: Schedule::Synchronous,
            seed: 0,
            newton_krylov: true,
        }
    }
}

impl GbpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Parse(format!(
                "damping must lie in [0, 1), got {}",
                self.damping
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Parse(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Parse("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Configurations of a region allowed by its constraint factors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Support {
    pub nvars: usize,
    /// Full configuration indices (bit `j` = value of the region's `j`-th
    /// variable), ascending.
    pub configs: Vec<u32>,
}

impl Support {
    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn position(&self, config: u32) -> Option<usize> {
        self.configs.binary_search(&config).ok()
    }
}

/// Log-domain messages, one table per edge over the child's support.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageSet {
    offsets: Arc<Vec<usize>>,
    values: Vec<f64>,
}

impl MessageSet {
    /// Log-message of edge `e`; `-inf` entries are unsupported.
    pub fn edge(&self, e: usize) -> &[f64] {
        &self.values[self.offsets[e]..self.offsets[e + 1]]
    }

    pub fn edge_count(&self) -> usize {
        self.offsets.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub iterations: usize,
    /// Largest log-message change in the last iteration.
    pub residual: f64,
    pub converged: bool,
    /// Largest absolute gap between a parent belief marginalized onto a
    /// child and the child belief.
    pub consistency: f64,
}

/// Normalized belief of one region over its support.
#[derive(Debug, Clone, Copy)]
pub struct BeliefTable<'a> {
    pub vars: &'a [u32],
    pub support: &'a Support,
    pub probs: &'a [f64],
}

impl BeliefTable<'_> {
    /// Probability of a full region configuration.
    pub fn prob(&self, config: u32) -> f64 {
        self.support.position(config).map_or(0.0, |i| self.probs[i])
    }

    /// Table over all `2^n` configurations.
    pub fn dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; 1 << self.vars.len()];
        for (&c, &p) in self.support.configs.iter().zip(self.probs) {
            out[c as usize] = p;
        }
        out
    }

    /// Marginal probability that the region variable `var` equals 1.
    pub fn marginal_one(&self, var: u32) -> Option<f64> {
        let j = self.vars.iter().position(|&v| v == var)?;
        Some(
            self.support
                .configs
                .iter()
                .zip(self.probs)
                .filter(|(&c, _)| (c >> j) & 1 == 1)
                .map(|(_, &p)| p)
                .sum(),
        )
    }
}

/// Converged (or last-iterate) beliefs of every region.
#[derive(Debug, Clone)]
pub struct BeliefSet {
    plan: Arc<PlanCore>,
    region_vars: Arc<Vec<Vec<u32>>>,
    probs: Vec<Vec<f64>>,
    messages: MessageSet,
    pub report: ConvergenceReport,
    pub config: GbpConfig,
}

impl BeliefSet {
    pub fn region_count(&self) -> usize {
        self.probs.len()
    }

    pub fn messages(&self) -> &MessageSet {
        &self.messages
    }

    pub fn converged(&self) -> bool {
        self.report.converged
    }

    pub fn support(&self, region: usize) -> &Support {
        &self.plan.supports[self.plan.region_support[region] as usize]
    }
}

/// Stored belief table of `region_id`.
pub fn belief_of(bs: &BeliefSet, region_id: usize) -> Result<BeliefTable<'_>> {
    let probs = bs
        .probs
        .get(region_id)
        .ok_or(Error::UnknownRegion(region_id))?;
    Ok(BeliefTable {
        vars: &bs.region_vars[region_id],
        support: bs.support(region_id),
        probs,
    })
}

/// Runs GBP on `rg` from uniform messages.
pub fn run_gbp(rg: &RegionGraph, cfg: &GbpConfig) -> Result<BeliefSet> {
    GbpPlan::new(rg)?.run(rg, cfg, None)
}

#[derive(Debug)]
struct PlanCore {
    supports: Vec<Support>,
    region_support: Vec<u32>,
    projections: Vec<Vec<u32>>,
    /// Projection from parent support to child support, per edge.
    edge_proj: Vec<u32>,
    n_offsets: Vec<u32>,
    n_items: Vec<(u32, u32)>,
    d_offsets: Vec<u32>,
    d_items: Vec<(u32, u32)>,
    msg_offsets: Arc<Vec<usize>>,
    edge_parent: Vec<u32>,
    edge_child: Vec<u32>,
}

/// Precomputed message-passing layout of a region graph.
///
/// The layout depends only on the region topology and on the constraint
/// factors, so one plan serves every evidence instantiation of a graph
/// obtained with [`RegionGraph::rebind`].
#[derive(Debug, Clone)]
pub struct GbpPlan {
    core: Arc<PlanCore>,
    region_vars: Arc<Vec<Vec<u32>>>,
    regions: usize,
}

struct ProjectionCache<'a> {
    supports: &'a [Support],
    tables: Vec<Vec<u32>>,
    index: HashMap<(u32, u32, Vec<u8>), u32>,
}

impl ProjectionCache<'_> {
    /// Table mapping support positions of the outer region to support
    /// positions of the inner one, whose variables sit at `positions`.
    fn get(&mut self, outer: u32, inner: u32, positions: Vec<u8>) -> u32 {
        let key = (outer, inner, positions);
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let (outer_s, inner_s) = (
            &self.supports[outer as usize],
            &self.supports[inner as usize],
        );
        let table = outer_s
            .configs
            .iter()
            .map(|&c| {
                let sub = key
                    .2
                    .iter()
                    .enumerate()
                    .fold(0u32, |acc, (j, &p)| acc | (((c >> p) & 1) << j));
                inner_s
                    .position(sub)
                    .expect("restriction of a supported configuration is supported")
                    as u32
            })
            .collect();
        let id = self.tables.len() as u32;
        self.tables.push(table);
        self.index.insert(key, id);
        id
    }
}

fn positions_in(outer: &[u32], inner: &[u32]) -> Vec<u8> {
    inner
        .iter()
        .map(|v| outer.binary_search(v).expect("inner region is a subset") as u8)
        .collect()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Shifts a log table so that its entries sum to one; `false` if the table
/// has no supported entry.
fn normalize_log(values: &mut [f64]) -> bool {
    let z = log_sum_exp(values);
    if z == f64::NEG_INFINITY {
        return false;
    }
    for v in values.iter_mut() {
        *v -= z;
    }
    true
}

impl GbpPlan {
    pub fn new(rg: &RegionGraph) -> Result<GbpPlan> {
        let g = rg.factor_graph();
        let factors = g.factors();

        // Supports, deduplicated by the placement of constraint factors.
        let mut supports: Vec<Support> = Vec::new();
        let mut support_index: HashMap<(usize, Vec<(Vec<u8>, Vec<bool>)>), u32> = HashMap::new();
        let mut region_support = Vec::with_capacity(rg.len());
        for r in rg.regions() {
            let n = r.vars.len();
            if n > MAX_REGION_VARS {
                return Err(Error::RegionTooLarge {
                    region: r.id,
                    vars: n,
                    limit: MAX_REGION_VARS,
                });
            }
            let key_factors: Vec<(Vec<u8>, Vec<bool>)> = r
                .factors
                .iter()
                .map(|&f| &factors[f as usize])
                .filter(|f| f.kind == FactorKind::Constraint)
                .map(|f| {
                    let pos = positions_in(&r.vars, &f.scope.iter().map(|&v| v as u32).collect::<Vec<_>>());
                    (pos, f.table.iter().map(|&t| t > 0.0).collect())
                })
                .collect();
            let key = (n, key_factors);
            let id = match support_index.get(&key) {
                Some(&id) => id,
                None => {
                    let configs: Vec<u32> = (0..1u32 << n)
                        .filter(|&c| {
                            key.1.iter().all(|(pos, allowed)| {
                                let sub = pos
                                    .iter()
                                    .enumerate()
                                    .fold(0usize, |acc, (j, &p)| acc | (((c >> p) & 1) as usize) << j);
                                allowed[sub]
                            })
                        })
                        .collect();
                    if configs.is_empty() {
                        return Err(Error::EmptySupport { region: r.id });
                    }
                    let id = supports.len() as u32;
                    supports.push(Support { nvars: n, configs });
                    support_index.insert(key, id);
                    id
                }
            };
            region_support.push(id);
        }

        let mut cache = ProjectionCache {
            supports: &supports,
            tables: Vec::new(),
            index: HashMap::new(),
        };
        let in_closure = |x: usize, y: usize| -> bool {
            // Is y in E(x)?
            x == y || rg.descendants(x).binary_search(&(y as u32)).is_ok()
        };
        let edge_count = rg.edge_count();
        let mut edge_proj = Vec::with_capacity(edge_count);
        let mut n_offsets = vec![0u32];
        let mut n_items = Vec::new();
        let mut d_offsets = vec![0u32];
        let mut d_items = Vec::new();
        let mut edge_parent = Vec::with_capacity(edge_count);
        let mut edge_child = Vec::with_capacity(edge_count);
        let mut msg_offsets = vec![0usize];
        let regions = rg.regions();
        for e in 0..edge_count {
            let p = rg.edge_parent(e);
            let r = rg.edge_child(e);
            edge_parent.push(p as u32);
            edge_child.push(r as u32);
            let (pv, rv) = (&regions[p].vars, &regions[r].vars);
            let (ps, rs) = (region_support[p], region_support[r]);
            edge_proj.push(cache.get(ps, rs, positions_in(pv, rv)));
            msg_offsets.push(msg_offsets[e] + supports[rs as usize].len());

            // N(P,R)
            let closure_p = std::iter::once(p as u32).chain(rg.descendants(p).iter().copied());
            for j in closure_p {
                let j = j as usize;
                if in_closure(r, j) {
                    continue;
                }
                for &i in rg.parents(j) {
                    if in_closure(p, i as usize) {
                        continue;
                    }
                    let edge = rg.edge_id(i as usize, j).expect("parent edge exists");
                    let proj = cache.get(
                        ps,
                        region_support[j],
                        positions_in(pv, &regions[j].vars),
                    );
                    n_items.push((edge as u32, proj));
                }
            }
            n_offsets.push(n_items.len() as u32);

            // D(P,R)
            for &i in rg.descendants(p) {
                let i = i as usize;
                if in_closure(r, i) {
                    continue;
                }
                for &j in rg.children(i) {
                    let j = j as usize;
                    if !in_closure(r, j) {
                        continue;
                    }
                    let edge = rg.edge_id(i, j).expect("child edge exists");
                    let proj = cache.get(
                        rs,
                        region_support[j],
                        positions_in(rv, &regions[j].vars),
                    );
                    d_items.push((edge as u32, proj));
                }
            }
            d_offsets.push(d_items.len() as u32);
        }
        let projections = cache.tables;

        Ok(GbpPlan {
            core: Arc::new(PlanCore {
                supports,
                region_support,
                projections,
                edge_proj,
                n_offsets,
                n_items,
                d_offsets,
                d_items,
                msg_offsets: Arc::new(msg_offsets),
                edge_parent,
                edge_child,
            }),
            region_vars: Arc::new(regions.iter().map(|r| r.vars.clone()).collect()),
            regions: rg.len(),
        })
    }

    pub fn support(&self, region: usize) -> &Support {
        &self.core.supports[self.core.region_support[region] as usize]
    }

    /// Uniform messages over each child's support.
    pub fn uniform_messages(&self) -> MessageSet {
        let core = &self.core;
        let mut values = vec![0.0; *core.msg_offsets.last().unwrap()];
        for e in 0..core.edge_child.len() {
            let len = core.msg_offsets[e + 1] - core.msg_offsets[e];
            let v = -(len as f64).ln();
            values[core.msg_offsets[e]..core.msg_offsets[e + 1]].fill(v);
        }
        MessageSet {
            offsets: core.msg_offsets.clone(),
            values,
        }
    }

    /// Log of the product of each region's factors over its support, or
    /// `None` for regions whose factors are all 0/1 indicators.
    fn log_weights(&self, rg: &RegionGraph) -> Vec<Option<Vec<f64>>> {
        let factors = rg.factor_graph().factors();
        let plain: Vec<bool> = factors
            .iter()
            .map(|f| f.table.iter().all(|&t| t == 0.0 || t == 1.0))
            .collect();
        rg.regions()
            .iter()
            .map(|r| {
                let weighted: Vec<usize> = r
                    .factors
                    .iter()
                    .map(|&f| f as usize)
                    .filter(|&f| !plain[f])
                    .collect();
                if weighted.is_empty() {
                    return None;
                }
                let support = self.support(r.id);
                let lookups: Vec<(Vec<u8>, &[f64])> = weighted
                    .iter()
                    .map(|&f| {
                        let scope: Vec<u32> = factors[f].scope.iter().map(|&v| v as u32).collect();
                        (positions_in(&r.vars, &scope), factors[f].table.as_slice())
                    })
                    .collect();
                Some(
                    support
                        .configs
                        .iter()
                        .map(|&c| {
                            lookups
                                .iter()
                                .map(|(pos, table)| {
                                    let sub = pos.iter().enumerate().fold(0usize, |acc, (j, &p)| {
                                        acc | ((((c >> p) & 1) as usize) << j)
                                    });
                                    table[sub].ln()
                                })
                                .sum()
                        })
                        .collect(),
                )
            })
            .collect()
    }

    /// Runs GBP, starting from `warm` messages when given.
    pub fn run(
        &self,
        rg: &RegionGraph,
        cfg: &GbpConfig,
        warm: Option<&MessageSet>,
    ) -> Result<BeliefSet> {
        cfg.validate()?;
        if rg.len() != self.regions || rg.edge_count() != self.core.edge_child.len() {
            return Err(Error::InvalidEvidence(
                "region graph does not match this message plan".into(),
            ));
        }
        let weights = self.log_weights(rg);
        let mut msgs = match warm {
            Some(m) if m.offsets == self.core.msg_offsets => m.clone(),
            _ => self.uniform_messages(),
        };

        let mut solver = Solver {
            plan: self,
            weights: &weights,
            scratch: Scratch::default(),
            sweeps: 0,
        };
        let (iterations, residual) = solver.solve(&mut msgs.values, cfg)?;

        let probs = self.beliefs(rg, &msgs, &weights)?;
        let consistency = self.consistency(&probs);
        Ok(BeliefSet {
            plan: self.core.clone(),
            region_vars: self.region_vars.clone(),
            probs,
            messages: msgs,
            report: ConvergenceReport {
                iterations,
                residual,
                converged: residual <= cfg.tolerance,
                consistency,
            },
            config: *cfg,
        })
    }

    /// Computes the damped, normalized new message of edge `e` from the
    /// messages in `old` into `scratch.fresh`. Returns the largest change.
    fn update_edge(
        &self,
        e: usize,
        old: &[f64],
        weights: &[Option<Vec<f64>>],
        damping: f64,
        scratch: &mut Scratch,
    ) -> Result<f64> {
        let core = &*self.core;
        let p = core.edge_parent[e] as usize;
        let r = core.edge_child[e] as usize;
        let proj = &core.projections[core.edge_proj[e] as usize];
        let n_items = &core.n_items[core.n_offsets[e] as usize..core.n_offsets[e + 1] as usize];
        let d_items = &core.d_items[core.d_offsets[e] as usize..core.d_offsets[e + 1] as usize];
        let offs = &core.msg_offsets;
        let np = proj.len();
        let nr = offs[e + 1] - offs[e];

        let vals = &mut scratch.vals;
        vals.clear();
        match (&weights[p], &weights[r]) {
            (None, None) => vals.resize(np, 0.0),
            (wp, wr) => vals.extend((0..np).map(|s| {
                wp.as_ref().map_or(0.0, |w| w[s]) - wr.as_ref().map_or(0.0, |w| w[proj[s] as usize])
            })),
        }
        for &(edge, table) in n_items {
            let m = &old[offs[edge as usize]..];
            let t = &core.projections[table as usize];
            for (v, &i) in vals.iter_mut().zip(t.iter()) {
                *v += m[i as usize];
            }
        }

        let max = &mut scratch.max;
        max.clear();
        max.resize(nr, f64::NEG_INFINITY);
        for (v, &i) in vals.iter().zip(proj.iter()) {
            let slot = &mut max[i as usize];
            if *v > *slot {
                *slot = *v;
            }
        }
        let sum = &mut scratch.sum;
        sum.clear();
        sum.resize(nr, 0.0);
        for (v, &i) in vals.iter().zip(proj.iter()) {
            let m = max[i as usize];
            if m > f64::NEG_INFINITY {
                sum[i as usize] += (v - m).exp();
            }
        }
        let fresh = &mut scratch.fresh;
        fresh.clear();
        fresh.extend((0..nr).map(|x| {
            if max[x] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                max[x] + sum[x].ln()
            }
        }));
        for &(edge, table) in d_items {
            let m = &old[offs[edge as usize]..];
            let t = &core.projections[table as usize];
            for (v, &i) in fresh.iter_mut().zip(t.iter()) {
                let den = m[i as usize];
                *v = if den == f64::NEG_INFINITY || *v == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    *v - den
                };
            }
        }
        if !normalize_log(fresh) {
            return Err(Error::EmptySupport { region: r });
        }

        let prev = &old[offs[e]..offs[e + 1]];
        if damping > 0.0 {
            for (v, &o) in fresh.iter_mut().zip(prev) {
                if v.is_finite() && o.is_finite() {
                    *v = (1.0 - damping) * *v + damping * o;
                }
            }
            normalize_log(fresh);
        }
        let mut change = 0.0f64;
        for (&v, &o) in fresh.iter().zip(prev) {
            let d = match (v.is_finite(), o.is_finite()) {
                (true, true) => (v - o).abs(),
                (false, false) => 0.0,
                _ => f64::INFINITY,
            };
            change = change.max(d);
        }
        Ok(change)
    }

    /// Normalized beliefs of all regions from the given messages.
    fn beliefs(
        &self,
        rg: &RegionGraph,
        msgs: &MessageSet,
        weights: &[Option<Vec<f64>>],
    ) -> Result<Vec<Vec<f64>>> {
        let core = &*self.core;
        let mut cache = ProjectionCache {
            supports: &core.supports,
            tables: Vec::new(),
            index: HashMap::new(),
        };
        let regions = rg.regions();
        let mut out = Vec::with_capacity(rg.len());
        for (id, region) in regions.iter().enumerate() {
            let rs = core.region_support[id];
            let mut logb = weights[id]
                .clone()
                .unwrap_or_else(|| vec![0.0; core.supports[rs as usize].len()]);
            let closure = std::iter::once(id as u32).chain(rg.descendants(id).iter().copied());
            for j in closure {
                let j = j as usize;
                let mut proj = None;
                for &i in rg.parents(j) {
                    let i = i as usize;
                    if i == id || rg.descendants(id).binary_search(&(i as u32)).is_ok() {
                        continue;
                    }
                    let table = *proj.get_or_insert_with(|| {
                        cache.get(rs, core.region_support[j], positions_in(&region.vars, &regions[j].vars))
                    });
                    let edge = rg.edge_id(i, j).expect("parent edge exists");
                    let m = msgs.edge(edge);
                    for (b, &t) in logb.iter_mut().zip(&cache.tables[table as usize]) {
                        *b += m[t as usize];
                    }
                }
            }
            if !normalize_log(&mut logb) {
                return Err(Error::EmptySupport { region: id });
            }
            out.push(logb.into_iter().map(f64::exp).collect());
        }
        Ok(out)
    }

    fn consistency(&self, probs: &[Vec<f64>]) -> f64 {
        let core = &*self.core;
        let mut worst = 0.0f64;
        let mut marg = Vec::new();
        for e in 0..core.edge_child.len() {
            let p = core.edge_parent[e] as usize;
            let r = core.edge_child[e] as usize;
            let proj = &core.projections[core.edge_proj[e] as usize];
            marg.clear();
            marg.resize(probs[r].len(), 0.0);
            for (&b, &i) in probs[p].iter().zip(proj) {
                marg[i as usize] += b;
            }
            for (a, b) in marg.iter().zip(&probs[r]) {
                worst = worst.max((a - b).abs());
            }
        }
        worst
    }
}

/// The Jacobian of the update at one point: conditional weights of parent
/// configurations per edge, and the new message probabilities.
#[derive(Default)]
struct Linearization {
    offsets: Vec<usize>,
    q: Vec<f64>,
    p: Vec<f64>,
}

#[derive(Default)]
struct Scratch {
    vals: Vec<f64>,
    max: Vec<f64>,
    sum: Vec<f64>,
    fresh: Vec<f64>,
}

/// Damped sweeps tried before Newton steps take over.
const RELAX_SWEEPS: usize = 40;

/// Smallest bound on the largest entry of a Newton step, in nats; the bound
/// grows with the size of the messages themselves.
const MAX_STEP: f64 = 10.0;

/// Linearized passes (each one Jacobian product and one transposed product)
/// allowed per Newton step.
const LSQR_ITERATIONS: usize = 1000;

/// Relative accuracy at which LSQR declares the residual orthogonal to the
/// range of the linearized system.
const ORTHOGONALITY: f64 = 1e-4;

/// Finds a fixed point of the message update.
///
/// The plain iteration is only a contraction on small grids: on larger
/// grids the linearized update has eigenvalues with real part above one,
/// which no damping factor can pull inside the unit circle. The solver
/// therefore runs a short damped relaxation and then takes Newton steps on
/// `G(v) = F(v) - v`, where `F` is the undamped synchronous update.
///
/// The fixed points are not isolated. Messages can be traded against each
/// other without changing any belief, so the Jacobian of `G` has a large null
/// space, and the eigenvalues of the rest surround the origin. Each step is
/// therefore the least-squares solution of the linearized system, found by
/// LSQR with exact Jacobian and transposed-Jacobian products, and is
/// globalized by a backtracking line search on `|G|`. The fixed points are
/// those of the plain iteration, so beliefs and free energy are unchanged.
struct Solver<'a> {
    plan: &'a GbpPlan,
    weights: &'a [Option<Vec<f64>>],
    scratch: Scratch,
    sweeps: usize,
}

impl Solver<'_> {
    fn edge_count(&self) -> usize {
        self.plan.core.edge_child.len()
    }

    /// One damped sweep in place; returns the largest change.
    fn relax(
        &mut self,
        v: &mut Vec<f64>,
        next: &mut Vec<f64>,
        cfg: &GbpConfig,
        order: &mut [usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        self.sweeps += 1;
        let offs = &self.plan.core.msg_offsets;
        let mut worst = 0.0f64;
        match cfg.schedule {
            Schedule::Synchronous => {
                next.clone_from(v);
                for e in 0..self.edge_count() {
                    let r = self.plan.update_edge(e, v, self.weights, cfg.damping, &mut self.scratch)?;
                    next[offs[e]..offs[e + 1]].copy_from_slice(&self.scratch.fresh);
                    worst = worst.max(r);
                }
                std::mem::swap(v, next);
            }
            Schedule::Sequential => {
                order.shuffle(rng);
                for &e in order.iter() {
                    let r = self.plan.update_edge(e, v, self.weights, cfg.damping, &mut self.scratch)?;
                    v[offs[e]..offs[e + 1]].copy_from_slice(&self.scratch.fresh);
                    worst = worst.max(r);
                }
            }
        }
        Ok(worst)
    }

    /// Writes the undamped synchronous update of `v` to `out`.
    fn map(&mut self, v: &[f64], out: &mut [f64]) -> Result<()> {
        self.sweeps += 1;
        let offs = &self.plan.core.msg_offsets;
        for e in 0..self.edge_count() {
            self.plan.update_edge(e, v, self.weights, 0.0, &mut self.scratch)?;
            out[offs[e]..offs[e + 1]].copy_from_slice(&self.scratch.fresh);
        }
        Ok(())
    }

    /// Conditional weights of every parent configuration given its
    /// projection, for every edge, at `v`. These define the Jacobian of the
    /// update there.
    fn linearize(&mut self, v: &[f64], lin: &mut Linearization) -> Result<()> {
        self.sweeps += 1;
        let core = &*self.plan.core;
        lin.offsets.clear();
        lin.offsets.push(0);
        lin.q.clear();
        lin.p.clear();
        lin.p.resize(v.len(), 0.0);
        let offs = &core.msg_offsets;
        for e in 0..self.edge_count() {
            self.plan.update_edge(e, v, self.weights, 0.0, &mut self.scratch)?;
            let s = &self.scratch;
            let proj = &core.projections[core.edge_proj[e] as usize];
            lin.q.extend(s.vals.iter().zip(proj.iter()).map(|(&val, &x)| {
                let x = x as usize;
                if val == f64::NEG_INFINITY || s.max[x] == f64::NEG_INFINITY {
                    0.0
                } else {
                    (val - s.max[x]).exp() / s.sum[x]
                }
            }));
            lin.offsets.push(lin.q.len());
            for (p, f) in lin.p[offs[e]..offs[e + 1]].iter_mut().zip(&s.fresh) {
                *p = if f.is_finite() { f.exp() } else { 0.0 };
            }
        }
        Ok(())
    }

    /// `out = (J - I) w` for the Jacobian `J` captured in `lin`. Entries
    /// outside `mask` are treated as absent on both sides.
    fn apply(&mut self, lin: &Linearization, mask: &[bool], w: &[f64], out: &mut [f64]) {
        self.sweeps += 1;
        let core = &*self.plan.core;
        let offs = &core.msg_offsets;
        let (mut du, mut acc) = (Vec::new(), Vec::new());
        for e in 0..self.edge_count() {
            let proj = &core.projections[core.edge_proj[e] as usize];
            let n_items = &core.n_items[core.n_offsets[e] as usize..core.n_offsets[e + 1] as usize];
            let d_items = &core.d_items[core.d_offsets[e] as usize..core.d_offsets[e + 1] as usize];
            let q = &lin.q[lin.offsets[e]..lin.offsets[e + 1]];
            acc.clear();
            acc.resize(q.len(), 0.0);
            for &(edge, table) in n_items {
                let m = &w[offs[edge as usize]..];
                for (a, &t) in acc.iter_mut().zip(core.projections[table as usize].iter()) {
                    *a += m[t as usize];
                }
            }
            du.clear();
            du.resize(offs[e + 1] - offs[e], 0.0);
            for ((&qk, &a), &x) in q.iter().zip(&acc).zip(proj.iter()) {
                du[x as usize] += qk * a;
            }
            for &(edge, table) in d_items {
                let t = &core.projections[table as usize];
                for (d, &i) in du.iter_mut().zip(t.iter()) {
                    *d -= w[offs[edge as usize] + i as usize];
                }
            }
            let p = &lin.p[offs[e]..offs[e + 1]];
            let mean: f64 = p.iter().zip(&du).map(|(p, d)| p * d).sum();
            for (x, i) in (offs[e]..offs[e + 1]).enumerate() {
                out[i] = if mask[i] { du[x] - mean - w[i] } else { 0.0 };
            }
        }
    }

    /// `out = (J - I)^T y` for the Jacobian captured in `lin`.
    fn apply_transpose(&mut self, lin: &Linearization, mask: &[bool], y: &[f64], out: &mut [f64]) {
        self.sweeps += 1;
        let core = &*self.plan.core;
        let offs = &core.msg_offsets;
        for i in 0..out.len() {
            out[i] = if mask[i] { -y[i] } else { 0.0 };
        }
        let (mut ubar, mut acc) = (Vec::new(), Vec::new());
        for e in 0..self.edge_count() {
            let proj = &core.projections[core.edge_proj[e] as usize];
            let n_items = &core.n_items[core.n_offsets[e] as usize..core.n_offsets[e + 1] as usize];
            let d_items = &core.d_items[core.d_offsets[e] as usize..core.d_offsets[e + 1] as usize];
            let q = &lin.q[lin.offsets[e]..lin.offsets[e + 1]];
            let p = &lin.p[offs[e]..offs[e + 1]];
            let ye = &y[offs[e]..offs[e + 1]];
            let me = &mask[offs[e]..offs[e + 1]];
            let total: f64 = ye.iter().zip(me).filter(|(_, &m)| m).map(|(y, _)| y).sum();
            ubar.clear();
            ubar.extend(
                ye.iter()
                    .zip(me)
                    .zip(p)
                    .map(|((y, &m), p)| if m { y - p * total } else { 0.0 }),
            );
            acc.clear();
            acc.extend(q.iter().zip(proj.iter()).map(|(&qk, &x)| ubar[x as usize] * qk));
            for &(edge, table) in n_items {
                let o = &mut out[offs[edge as usize]..];
                for (&a, &t) in acc.iter().zip(core.projections[table as usize].iter()) {
                    o[t as usize] += a;
                }
            }
            for &(edge, table) in d_items {
                let t = &core.projections[table as usize];
                for (u, &i) in ubar.iter().zip(t.iter()) {
                    out[offs[edge as usize] + i as usize] -= u;
                }
            }
        }
        for i in 0..out.len() {
            if !mask[i] {
                out[i] = 0.0;
            }
        }
    }

    /// Renormalizes every message of `v`.
    fn normalize(&self, v: &mut [f64]) {
        let offs = &self.plan.core.msg_offsets;
        for e in 0..self.edge_count() {
            normalize_log(&mut v[offs[e]..offs[e + 1]]);
        }
    }

    fn solve(&mut self, v: &mut Vec<f64>, cfg: &GbpConfig) -> Result<(usize, f64)> {
        if self.edge_count() == 0 {
            return Ok((0, 0.0));
        }
        let mut order: Vec<usize> = (0..self.edge_count()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut next = Vec::new();
        let relax_budget = if cfg.newton_krylov {
            RELAX_SWEEPS.min(cfg.max_iterations)
        } else {
            cfg.max_iterations
        };
        let mut residual = f64::INFINITY;
        let mut best = (f64::INFINITY, v.clone());
        while residual > cfg.tolerance && self.sweeps < relax_budget {
            let before = v.clone();
            residual = match self.relax(v, &mut next, cfg, &mut order, &mut rng) {
                Ok(r) => r,
                // A sweep that runs off into an empty table is a divergence
                // symptom when an earlier iterate was sound.
                Err(_) if cfg.newton_krylov && best.0.is_finite() => {
                    *v = best.1.clone();
                    break;
                }
                Err(e) => return Err(e),
            };
            if cfg.newton_krylov {
                // The change measures the state the sweep started from.
                if residual < best.0 {
                    best = (residual, before);
                } else if residual > 1e3 * best.0 {
                    *v = best.1.clone();
                    break;
                }
            }
        }
        if residual <= cfg.tolerance || !cfg.newton_krylov || self.sweeps >= cfg.max_iterations {
            return Ok((self.sweeps, residual));
        }
        self.newton(v, cfg)
    }

    fn newton(&mut self, v: &mut Vec<f64>, cfg: &GbpConfig) -> Result<(usize, f64)> {
        let n = v.len();
        let mut fv = vec![0.0; n];
        self.map(v, &mut fv)?;
        // Entries the update rules out are settled for good.
        let mut mask = vec![false; n];
        for i in 0..n {
            if v[i].is_finite() && fv[i].is_finite() {
                mask[i] = true;
            } else {
                v[i] = f64::NEG_INFINITY;
            }
        }
        self.normalize(v);
        self.map(v, &mut fv)?;
        let mut g = vec![0.0; n];
        let mut trial = vec![0.0; n];
        let mut ft = vec![0.0; n];
        let mut gt = vec![0.0; n];
        let mut lin = Linearization::default();
        let mut residual = residual_into(v, &fv, &mask, &mut g);
        let mut gnorm = norm2(&g);
        while residual > cfg.tolerance && self.sweeps < cfg.max_iterations {
            let forcing = 0.1f64.min(gnorm.sqrt()).max(1e-6);
            let budget = LSQR_ITERATIONS.min(cfg.max_iterations.saturating_sub(self.sweeps) / 2);
            self.linearize(v, &mut lin)?;
            // Solves (J - I) x = g; the Newton step is -x.
            let mut step = {
                let (lin, mask) = (&lin, &mask);
                lsqr(&g, budget, forcing, |w, out, transpose| {
                    if transpose {
                        self.apply_transpose(lin, mask, w, out)
                    } else {
                        self.apply(lin, mask, w, out)
                    }
                })
            };
            scale_into(&mut step, -1.0);

            // Near-singular directions of the linearized update leave the
            // beliefs alone but can ask for enormous message changes, which
            // would wreck the precision of every later log-domain sum.
            let vmax = v
                .iter()
                .zip(&mask)
                .filter(|(_, &m)| m)
                .fold(0.0f64, |a, (x, _)| a.max(x.abs()));
            let size = step.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            let cap = MAX_STEP.max(vmax);
            let mut alpha = if size > cap { cap / size } else { 1.0 };
            let mut accepted = false;
            for _ in 0..12 {
                if self.sweeps >= cfg.max_iterations {
                    break;
                }
                for i in 0..n {
                    trial[i] = if mask[i] { v[i] + alpha * step[i] } else { v[i] };
                }
                self.normalize(&mut trial);
                if self.map(&trial, &mut ft).is_ok() {
                    let r = residual_into(&trial, &ft, &mask, &mut gt);
                    let norm = norm2(&gt);
                    if norm <= (1.0 - 1e-4 * alpha) * gnorm {
                        std::mem::swap(v, &mut trial);
                        std::mem::swap(&mut fv, &mut ft);
                        std::mem::swap(&mut g, &mut gt);
                        residual = r;
                        gnorm = norm;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                // Fall back on one damped relaxation step from the current point.
                let damping = cfg.damping.max(0.5);
                for i in 0..n {
                    trial[i] = if mask[i] { (1.0 - damping) * fv[i] + damping * v[i] } else { v[i] };
                }
                self.normalize(&mut trial);
                std::mem::swap(v, &mut trial);
                if self.sweeps >= cfg.max_iterations {
                    break;
                }
                self.map(v, &mut fv)?;
                residual = residual_into(v, &fv, &mask, &mut g);
                gnorm = norm2(&g);
            }
        }
        Ok((self.sweeps, residual))
    }
}

/// `g = F(v) - v` on the supported entries; returns its largest magnitude.
fn residual_into(v: &[f64], fv: &[f64], mask: &[bool], g: &mut [f64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..v.len() {
        g[i] = if mask[i] && fv[i].is_finite() {
            fv[i] - v[i]
        } else {
            0.0
        };
        worst = worst.max(g[i].abs());
    }
    worst
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn scale_into(x: &mut [f64], factor: f64) {
    x.iter_mut().for_each(|v| *v *= factor);
}

/// LSQR (Paige and Saunders) for `min |A x - b|` from `x = 0`, where
/// `apply(w, out, transpose)` writes `A w` or `A^T w` into `out`. Stops once
/// the residual drops below `rtol * |b|`, once the residual is orthogonal to
/// the range of `A` to relative accuracy `ORTHOGONALITY`, or after `budget`
/// iterations.
fn lsqr<F>(b: &[f64], budget: usize, rtol: f64, mut apply: F) -> Vec<f64>
where
    F: FnMut(&[f64], &mut [f64], bool),
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut u = b.to_vec();
    let mut beta = norm2(&u);
    if beta == 0.0 {
        return x;
    }
    let bnorm = beta;
    scale_into(&mut u, 1.0 / beta);
    let mut v = vec![0.0; n];
    apply(&u, &mut v, true);
    let mut alpha = norm2(&v);
    if alpha == 0.0 {
        return x;
    }
    scale_into(&mut v, 1.0 / alpha);
    let mut w = v.clone();
    let mut phibar = beta;
    let mut rhobar = alpha;
    let mut anorm2 = 0.0;
    let mut tmp = vec![0.0; n];
    for _ in 0..budget {
        apply(&v, &mut tmp, false);
        for i in 0..n {
            u[i] = tmp[i] - alpha * u[i];
        }
        beta = norm2(&u);
        anorm2 += alpha * alpha + beta * beta;
        if beta > 0.0 {
            scale_into(&mut u, 1.0 / beta);
            apply(&u, &mut tmp, true);
            for i in 0..n {
                v[i] = tmp[i] - beta * v[i];
            }
            alpha = norm2(&v);
            if alpha > 0.0 {
                scale_into(&mut v, 1.0 / alpha);
            }
        } else {
            alpha = 0.0;
        }
        let rho = rhobar.hypot(beta);
        let c = rhobar / rho;
        let s = beta / rho;
        let theta = s * alpha;
        rhobar = -c * alpha;
        let phi = c * phibar;
        phibar *= s;
        for i in 0..n {
            x[i] += (phi / rho) * w[i];
            w[i] = v[i] - (theta / rho) * w[i];
        }
        let normal = phibar * alpha * c.abs();
        if phibar <= rtol * bnorm || normal <= ORTHOGONALITY * anorm2.sqrt() * phibar || alpha == 0.0 {
            break;
        }
    }
    x
}
