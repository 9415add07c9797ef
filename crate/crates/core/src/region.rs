//! Region graphs built with the cluster variation method.
//!
//! Basic regions are all placements of a window whose size follows the
//! constraint parameters. The region set is then closed under pairwise
//! intersection, edges form the Hasse diagram of strict containment, and
//! counting numbers follow the Möbius recursion `c_R = 1 - sum of c_A over
//! all strict ancestors A`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::constraint::RllSpec;
use crate::error::{Error, Result};
use crate::grid::FactorGraph;
use crate::shape::GridShape;

/// Axis-aligned box of grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cuboid {
    pub origin: [usize; 3],
    pub extent: [usize; 3],
}

impl Cuboid {
    pub fn volume(&self) -> usize {
        self.extent.iter().product()
    }

    pub fn contains(&self, other: &Cuboid) -> bool {
        (0..3).all(|a| {
            other.origin[a] >= self.origin[a]
                && other.origin[a] + other.extent[a] <= self.origin[a] + self.extent[a]
        })
    }

    pub fn contains_cell(&self, coords: [usize; 3]) -> bool {
        (0..3).all(|a| coords[a] >= self.origin[a] && coords[a] < self.origin[a] + self.extent[a])
    }

    pub fn intersect(&self, other: &Cuboid) -> Option<Cuboid> {
        let mut origin = [0; 3];
        let mut extent = [0; 3];
        for a in 0..3 {
            let lo = self.origin[a].max(other.origin[a]);
            let hi = (self.origin[a] + self.extent[a]).min(other.origin[a] + other.extent[a]);
            if hi <= lo {
                return None;
            }
            origin[a] = lo;
            extent[a] = hi - lo;
        }
        Some(Cuboid { origin, extent })
    }

    /// Cell indices in ascending raster order.
    pub fn cells(&self, shape: &GridShape) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.volume());
        for z in 0..self.extent[2] {
            for y in 0..self.extent[1] {
                for x in 0..self.extent[0] {
                    out.push(shape.index([
                        self.origin[0] + x,
                        self.origin[1] + y,
                        self.origin[2] + z,
                    ]));
                }
            }
        }
        out
    }

    /// Every sub-box, including `self`.
    fn sub_boxes(&self) -> impl Iterator<Item = Cuboid> + '_ {
        let e = self.extent;
        (0..e[2]).flat_map(move |oz| {
            (0..e[1]).flat_map(move |oy| {
                (0..e[0]).flat_map(move |ox| {
                    (1..=e[2] - oz).flat_map(move |ez| {
                        (1..=e[1] - oy).flat_map(move |ey| {
                            (1..=e[0] - ox).map(move |ex| Cuboid {
                                origin: [
                                    self.origin[0] + ox,
                                    self.origin[1] + oy,
                                    self.origin[2] + oz,
                                ],
                                extent: [ex, ey, ez],
                            })
                        })
                    })
                })
            })
        })
    }
}

/// Window size of the basic regions, one extent per axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasicRegionPlan {
    pub extents: Vec<usize>,
}

impl BasicRegionPlan {
    fn padded(&self) -> [usize; 3] {
        let mut out = [1; 3];
        out[..self.extents.len()].copy_from_slice(&self.extents);
        out
    }
}

/// Basic region extent per axis: `k + 1` for finite `k`, otherwise `d + 1`.
pub fn plan_basic_regions(spec: &RllSpec) -> BasicRegionPlan {
    BasicRegionPlan {
        extents: spec
            .axes()
            .iter()
            .map(|a| match a.k {
                Some(k) => k + 1,
                None => a.d + 1,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: usize,
    pub cuboid: Cuboid,
    /// Cells of the region, ascending.
    pub vars: Vec<u32>,
    /// Factors whose scope lies inside the region, ascending.
    pub factors: Vec<u32>,
    pub counting_number: i64,
    /// Depth in the Hasse diagram (basic regions are level 0).
    pub level: usize,
}

/// Compressed adjacency lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct Csr {
    offsets: Vec<u32>,
    items: Vec<u32>,
}

impl Csr {
    fn from_rows(rows: impl IntoIterator<Item = Vec<u32>>) -> Csr {
        let mut offsets = vec![0u32];
        let mut items = Vec::new();
        for row in rows {
            items.extend_from_slice(&row);
            offsets.push(items.len() as u32);
        }
        Csr { offsets, items }
    }

    pub(crate) fn row(&self, i: usize) -> &[u32] {
        &self.items[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }

    pub(crate) fn start(&self, i: usize) -> usize {
        self.offsets[i] as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RegionGraphOptions {
    /// Remove regions whose counting number is zero and rebuild the Hasse
    /// diagram over the remaining ones. Counting-number sums are unchanged.
    pub drop_zero_counting: bool,
}

/// Regions, Hasse edges and counting numbers for one factor graph.
///
/// Edge `e` of the graph is the `j`-th child of its parent `p`, with
/// `e = edge_offset(p) + j`; edges are therefore grouped by parent.
#[derive(Debug, Clone)]
pub struct RegionGraph {
    factor_graph: Arc<FactorGraph>,
    plan: BasicRegionPlan,
    regions: Vec<Region>,
    children: Csr,
    parents: Csr,
    descendants: Csr,
    edge_child: Vec<u32>,
    edge_parent: Vec<u32>,
}

fn factors_by_anchor(g: &FactorGraph) -> Vec<Vec<u32>> {
    let mut by_anchor = vec![Vec::new(); g.variable_count()];
    for f in g.factors() {
        by_anchor[f.anchor].push(f.id as u32);
    }
    by_anchor
}

/// Closes the basic windows under pairwise intersection.
fn intersection_closure(windows: Vec<Cuboid>, max_extent: [usize; 3]) -> Vec<Cuboid> {
    let mut known: HashSet<Cuboid> = windows.iter().copied().collect();
    let mut by_origin: HashMap<[usize; 3], Vec<Cuboid>> = HashMap::new();
    for w in &windows {
        by_origin.entry(w.origin).or_default().push(*w);
    }
    let mut all = windows.clone();
    let mut frontier = windows;
    while !frontier.is_empty() {
        let mut fresh = Vec::new();
        for a in &frontier {
            let lo: [usize; 3] =
                std::array::from_fn(|ax| a.origin[ax].saturating_sub(max_extent[ax] - 1));
            let hi: [usize; 3] = std::array::from_fn(|ax| a.origin[ax] + a.extent[ax] - 1);
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    for x in lo[0]..=hi[0] {
                        let Some(list) = by_origin.get(&[x, y, z]) else {
                            continue;
                        };
                        for b in list {
                            if let Some(c) = a.intersect(b) {
                                if known.insert(c) {
                                    fresh.push(c);
                                }
                            }
                        }
                    }
                }
            }
        }
        for c in &fresh {
            by_origin.entry(c.origin).or_default().push(*c);
        }
        all.extend_from_slice(&fresh);
        frontier = fresh;
    }
    all
}

/// Strict sub-boxes of every box that are present in `index`.
fn descendant_lists(boxes: &[Cuboid], index: &HashMap<Cuboid, u32>) -> Vec<Vec<u32>> {
    boxes
        .iter()
        .map(|b| {
            let mut d: Vec<u32> = b
                .sub_boxes()
                .filter(|s| s != b)
                .filter_map(|s| index.get(&s).copied())
                .collect();
            d.sort_unstable();
            d
        })
        .collect()
}

/// Maximal elements of each descendant list.
fn hasse_children(boxes: &[Cuboid], descendants: &[Vec<u32>]) -> Vec<Vec<u32>> {
    descendants
        .iter()
        .map(|desc| {
            desc.iter()
                .copied()
                .filter(|&q| {
                    let qb = &boxes[q as usize];
                    !desc
                        .iter()
                        .any(|&r| r != q && boxes[r as usize].contains(qb))
                })
                .collect()
        })
        .collect()
}

fn sort_key(b: &Cuboid) -> (std::cmp::Reverse<usize>, [usize; 3], [usize; 3]) {
    let e = b.extent;
    let o = b.origin;
    (std::cmp::Reverse(b.volume()), [e[2], e[1], e[0]], [o[2], o[1], o[0]])
}

/// Builds the cluster-variation region graph of `g` for the given plan.
pub fn build_region_graph(
    g: impl Into<Arc<FactorGraph>>,
    plan: &BasicRegionPlan,
) -> Result<RegionGraph> {
    build_region_graph_with(g, plan, RegionGraphOptions::default())
}

pub fn build_region_graph_with(
    g: impl Into<Arc<FactorGraph>>,
    plan: &BasicRegionPlan,
    options: RegionGraphOptions,
) -> Result<RegionGraph> {
    let g: Arc<FactorGraph> = g.into();
    let shape = g.shape().clone();
    if plan.extents.len() != shape.ndim() {
        return Err(Error::DimensionMismatch {
            spec: plan.extents.len(),
            grid: shape.ndim(),
        });
    }
    let pe = plan.padded();
    let ge = shape.padded();
    if (0..3).any(|a| pe[a] > ge[a] || pe[a] == 0) {
        return Err(Error::PlanLargerThanGrid {
            plan: plan.extents.clone(),
            grid: shape.extents().to_vec(),
        });
    }

    let mut windows = Vec::new();
    for z in 0..=ge[2] - pe[2] {
        for y in 0..=ge[1] - pe[1] {
            for x in 0..=ge[0] - pe[0] {
                windows.push(Cuboid {
                    origin: [x, y, z],
                    extent: pe,
                });
            }
        }
    }

    let mut boxes = intersection_closure(windows, pe);
    boxes.sort_by_key(sort_key);
    let mut index: HashMap<Cuboid, u32> = boxes
        .iter()
        .enumerate()
        .map(|(i, b)| (*b, i as u32))
        .collect();
    let mut descendants = descendant_lists(&boxes, &index);

    // Boxes are sorted by decreasing volume, so every ancestor of a box is
    // settled before the box itself.
    let mut ancestor_sum = vec![0i64; boxes.len()];
    let mut counting = vec![0i64; boxes.len()];
    for i in 0..boxes.len() {
        counting[i] = 1 - ancestor_sum[i];
        for &d in &descendants[i] {
            ancestor_sum[d as usize] += counting[i];
        }
    }

    if options.drop_zero_counting {
        let keep: Vec<usize> = (0..boxes.len()).filter(|&i| counting[i] != 0).collect();
        boxes = keep.iter().map(|&i| boxes[i]).collect();
        counting = keep.iter().map(|&i| counting[i]).collect();
        index = boxes
            .iter()
            .enumerate()
            .map(|(i, b)| (*b, i as u32))
            .collect();
        descendants = descendant_lists(&boxes, &index);
    }

    let children = hasse_children(&boxes, &descendants);
    let mut parents = vec![Vec::new(); boxes.len()];
    for (p, ch) in children.iter().enumerate() {
        for &c in ch {
            parents[c as usize].push(p as u32);
        }
    }
    let mut level = vec![0usize; boxes.len()];
    for i in 0..boxes.len() {
        level[i] = parents[i]
            .iter()
            .map(|&p| level[p as usize] + 1)
            .max()
            .unwrap_or(0);
    }

    let by_anchor = factors_by_anchor(&g);
    let factor_list = g.factors();
    let regions: Vec<Region> = boxes
        .iter()
        .enumerate()
        .map(|(id, b)| {
            let vars = b.cells(&shape);
            let mut factors: Vec<u32> = Vec::new();
            for &v in &vars {
                for &f in &by_anchor[v] {
                    let fi = &factor_list[f as usize];
                    let fb = Cuboid {
                        origin: shape.coords(fi.anchor),
                        extent: fi.extent,
                    };
                    if b.contains(&fb) {
                        factors.push(f);
                    }
                }
            }
            factors.sort_unstable();
            Region {
                id,
                cuboid: *b,
                vars: vars.into_iter().map(|v| v as u32).collect(),
                factors,
                counting_number: counting[id],
                level: level[id],
            }
        })
        .collect();

    let mut edge_child = Vec::new();
    let mut edge_parent = Vec::new();
    for (p, ch) in children.iter().enumerate() {
        for &c in ch {
            edge_parent.push(p as u32);
            edge_child.push(c);
        }
    }

    Ok(RegionGraph {
        factor_graph: g,
        plan: plan.clone(),
        regions,
        children: Csr::from_rows(children),
        parents: Csr::from_rows(parents),
        descendants: Csr::from_rows(descendants),
        edge_child,
        edge_parent,
    })
}

impl RegionGraph {
    pub fn factor_graph(&self) -> &FactorGraph {
        &self.factor_graph
    }

    pub fn plan(&self) -> &BasicRegionPlan {
        &self.plan
    }

    pub fn shape(&self) -> &GridShape {
        self.factor_graph.shape()
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, id: usize) -> Result<&Region> {
        self.regions.get(id).ok_or(Error::UnknownRegion(id))
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_child.len()
    }

    /// `(parent, child)` pairs, grouped by parent.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edge_parent
            .iter()
            .zip(&self.edge_child)
            .map(|(&p, &c)| (p as usize, c as usize))
    }

    pub fn children(&self, id: usize) -> &[u32] {
        self.children.row(id)
    }

    pub fn parents(&self, id: usize) -> &[u32] {
        self.parents.row(id)
    }

    /// All strict descendants, ascending.
    pub fn descendants(&self, id: usize) -> &[u32] {
        self.descendants.row(id)
    }

    /// Id of the edge from `parent` to its `j`-th child.
    pub fn edge_offset(&self, parent: usize) -> usize {
        self.children.start(parent)
    }

    pub(crate) fn edge_id(&self, parent: usize, child: usize) -> Option<usize> {
        self.children(parent)
            .iter()
            .position(|&c| c as usize == child)
            .map(|j| self.edge_offset(parent) + j)
    }

    pub(crate) fn edge_parent(&self, e: usize) -> usize {
        self.edge_parent[e] as usize
    }

    pub(crate) fn edge_child(&self, e: usize) -> usize {
        self.edge_child[e] as usize
    }

    /// Basic regions in raster order of their origin (z, then y, then x).
    pub fn basic_regions(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self
            .regions
            .iter()
            .filter(|r| r.level == 0)
            .map(|r| r.id)
            .collect();
        ids.sort_by_key(|&i| {
            let o = self.regions[i].cuboid.origin;
            [o[2], o[1], o[0]]
        });
        ids
    }

    /// Replaces the factor tables with those of `g`, which must have the
    /// same factor layout. Region topology is kept.
    pub fn rebind(&self, g: impl Into<Arc<FactorGraph>>) -> Result<RegionGraph> {
        let g: Arc<FactorGraph> = g.into();
        if !self.factor_graph.same_layout(&g) {
            return Err(Error::InvalidEvidence(
                "factor graph layout differs from the one the region graph was built for".into(),
            ));
        }
        let mut out = self.clone();
        out.factor_graph = g;
        Ok(out)
    }

    /// In-place form of [`RegionGraph::rebind`].
    pub fn set_factor_graph(&mut self, g: impl Into<Arc<FactorGraph>>) -> Result<()> {
        let g: Arc<FactorGraph> = g.into();
        if !self.factor_graph.same_layout(&g) {
            return Err(Error::InvalidEvidence(
                "factor graph layout differs from the one the region graph was built for".into(),
            ));
        }
        self.factor_graph = g;
        Ok(())
    }

    /// Overrides one counting number; meant for fault injection in checks.
    pub fn set_counting_number(&mut self, id: usize, c: i64) -> Result<()> {
        let r = self.regions.get_mut(id).ok_or(Error::UnknownRegion(id))?;
        r.counting_number = c;
        Ok(())
    }

    /// Id of the region covering exactly `cuboid`, if present.
    pub fn find(&self, cuboid: &Cuboid) -> Option<usize> {
        self.regions.iter().position(|r| &r.cuboid == cuboid)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    VariableSum { variable: usize, sum: i64 },
    FactorSum { factor: usize, sum: i64 },
    NotStrictSubset { parent: usize, child: usize },
    NotCovering { parent: usize, child: usize, between: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub variable_sums: Vec<i64>,
    pub factor_sums: Vec<i64>,
    pub violations: Vec<Violation>,
}

impl ValidityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the counting-number sums and the Hasse-diagram structure.
pub fn validate_region_graph(rg: &RegionGraph) -> ValidityReport {
    let mut variable_sums = vec![0i64; rg.factor_graph().variable_count()];
    let mut factor_sums = vec![0i64; rg.factor_graph().factors().len()];
    for r in rg.regions() {
        for &v in &r.vars {
            variable_sums[v as usize] += r.counting_number;
        }
        for &f in &r.factors {
            factor_sums[f as usize] += r.counting_number;
        }
    }
    let mut violations = Vec::new();
    for (variable, &sum) in variable_sums.iter().enumerate() {
        if sum != 1 {
            violations.push(Violation::VariableSum { variable, sum });
        }
    }
    for (factor, &sum) in factor_sums.iter().enumerate() {
        if sum != 1 {
            violations.push(Violation::FactorSum { factor, sum });
        }
    }
    for (parent, child) in rg.edges() {
        let pb = rg.regions[parent].cuboid;
        let cb = rg.regions[child].cuboid;
        if pb == cb || !pb.contains(&cb) {
            violations.push(Violation::NotStrictSubset { parent, child });
            continue;
        }
        for &d in rg.descendants(parent) {
            let db = rg.regions[d as usize].cuboid;
            if db != cb && db.contains(&cb) {
                violations.push(Violation::NotCovering {
                    parent,
                    child,
                    between: d as usize,
                });
            }
        }
    }
    ValidityReport {
        variable_sums,
        factor_sums,
        violations,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelCensus {
    pub level: usize,
    pub regions: usize,
    /// Region count per (extent, counting number) pair, e.g. `"2x1:-1"`.
    pub kinds: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionCensus {
    pub shape: Vec<usize>,
    pub basic_region: Vec<usize>,
    pub regions: usize,
    pub edges: usize,
    pub levels: Vec<LevelCensus>,
    pub valid: bool,
    pub violations: usize,
}

pub fn region_census(rg: &RegionGraph) -> RegionCensus {
    let ndim = rg.shape().ndim();
    let mut levels: Vec<LevelCensus> = Vec::new();
    for r in rg.regions() {
        while levels.len() <= r.level {
            levels.push(LevelCensus {
                level: levels.len(),
                regions: 0,
                kinds: BTreeMap::new(),
            });
        }
        let l = &mut levels[r.level];
        l.regions += 1;
        let ext: Vec<String> = r.cuboid.extent[..ndim].iter().map(|e| e.to_string()).collect();
        *l.kinds
            .entry(format!("{}:{:+}", ext.join("x"), r.counting_number))
            .or_default() += 1;
    }
    let report = validate_region_graph(rg);
    RegionCensus {
        shape: rg.shape().extents().to_vec(),
        basic_region: rg.plan().extents.clone(),
        regions: rg.len(),
        edges: rg.edge_count(),
        levels,
        valid: report.passed(),
        violations: report.violations.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_factor_graph;

    fn rg(extents: Vec<usize>, spec: &str) -> RegionGraph {
        let shape = GridShape::new(extents).unwrap();
        let spec = RllSpec::parse(spec, shape.ndim()).unwrap();
        let g = build_factor_graph(&shape, &spec).unwrap();
        build_region_graph(g, &plan_basic_regions(&spec)).unwrap()
    }

    fn count(rg: &RegionGraph, vars: usize, c: i64) -> usize {
        rg.regions()
            .iter()
            .filter(|r| r.vars.len() == vars && r.counting_number == c)
            .count()
    }

    #[test]
    fn plans() {
        let p = |s: &str, dims| plan_basic_regions(&RllSpec::parse(s, dims).unwrap()).extents;
        assert_eq!(p("1,inf", 2), vec![2, 2]);
        assert_eq!(p("1,inf,2,4", 2), vec![2, 5]);
        assert_eq!(p("1,inf", 3), vec![2, 2, 2]);
        assert_eq!(p("2,inf", 2), vec![3, 3]);
        assert_eq!(p("1,inf,2,3", 2), vec![2, 4]);
    }

    #[test]
    fn three_by_three_matches_drawn_graph() {
        let g = rg(vec![3, 3], "1,inf");
        assert_eq!(g.len(), 9);
        assert_eq!(count(&g, 4, 1), 4);
        assert_eq!(count(&g, 2, -1), 4);
        assert_eq!(count(&g, 1, 1), 1);
        let center = g.regions().iter().find(|r| r.vars.len() == 1).unwrap();
        assert_eq!(center.vars, vec![4]);
        assert_eq!(g.edge_count(), 8 + 4);
        // Basic regions hold four pairwise factors, edge regions one.
        for r in g.regions() {
            let expected = match r.vars.len() {
                4 => 4,
                2 => 1,
                _ => 0,
            };
            assert_eq!(r.factors.len(), expected);
        }
        assert!(validate_region_graph(&g).passed());
    }

    #[test]
    fn two_by_two_is_a_single_region() {
        let g = rg(vec![2, 2], "1,inf");
        assert_eq!(g.len(), 1);
        assert_eq!(g.regions()[0].counting_number, 1);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn four_by_three() {
        let g = rg(vec![4, 3], "1,inf");
        assert_eq!(count(&g, 4, 1), 6);
        assert_eq!(count(&g, 2, -1), 7);
        assert_eq!(count(&g, 1, 1), 2);
        assert_eq!(g.len(), 15);
        assert!(validate_region_graph(&g).passed());
    }

    #[test]
    fn injected_fault_is_reported() {
        let mut g = rg(vec![3, 3], "1,inf");
        let edge_region = g.regions().iter().position(|r| r.vars.len() == 2).unwrap();
        g.set_counting_number(edge_region, 1).unwrap();
        let report = validate_region_graph(&g);
        assert!(!report.passed());
        assert_eq!(report.variable_sums[4], 3);
        assert!(report
            .violations
            .contains(&Violation::VariableSum { variable: 4, sum: 3 }));
    }

    #[test]
    fn factor_sums_on_drawn_graph() {
        let g = rg(vec![3, 3], "1,inf");
        let report = validate_region_graph(&g);
        assert!(report.factor_sums.iter().all(|&s| s == 1));
        // The vertical factor between cells 1 and 4 (f_D in the drawing)
        // sits in two basic regions and one edge region.
        let fd = g
            .factor_graph()
            .factors()
            .iter()
            .find(|f| f.scope == vec![1, 4])
            .unwrap()
            .id as u32;
        let holders: Vec<i64> = g
            .regions()
            .iter()
            .filter(|r| r.factors.contains(&fd))
            .map(|r| r.counting_number)
            .collect();
        assert_eq!(holders.len(), 3);
        assert_eq!(holders.iter().sum::<i64>(), 1);
    }

    #[test]
    fn plan_larger_than_grid() {
        let shape = GridShape::new(vec![1, 1]).unwrap();
        let spec = RllSpec::parse("1,inf", 2).unwrap();
        let g = build_factor_graph(&shape, &spec).unwrap();
        assert!(matches!(
            build_region_graph(g, &plan_basic_regions(&spec)),
            Err(Error::PlanLargerThanGrid { .. })
        ));
    }

    #[test]
    fn deterministic_construction() {
        let a = rg(vec![6, 5], "2,inf");
        let b = rg(vec![6, 5], "2,inf");
        assert_eq!(a.regions(), b.regions());
        assert_eq!(a.edges().collect::<Vec<_>>(), b.edges().collect::<Vec<_>>());
    }

    #[test]
    fn zero_counting_regions_can_be_dropped() {
        let full = rg(vec![7, 6], "2,inf");
        assert!(full.regions().iter().any(|r| r.counting_number == 0));
        let shape = GridShape::new(vec![7, 6]).unwrap();
        let spec = RllSpec::parse("2,inf", 2).unwrap();
        let g = build_factor_graph(&shape, &spec).unwrap();
        let pruned = build_region_graph_with(
            g,
            &plan_basic_regions(&spec),
            RegionGraphOptions {
                drop_zero_counting: true,
            },
        )
        .unwrap();
        assert!(pruned.regions().iter().all(|r| r.counting_number != 0));
        assert!(pruned.len() < full.len());
        let a = validate_region_graph(&full);
        let b = validate_region_graph(&pruned);
        assert!(a.passed() && b.passed());
        assert_eq!(a.variable_sums, b.variable_sums);
    }

    #[test]
    fn levels_strictly_shrink() {
        let g = rg(vec![5, 5, 4], "1,inf");
        for (p, c) in g.edges() {
            assert!(g.regions()[c].vars.len() < g.regions()[p].vars.len());
            assert!(g.regions()[c].level > g.regions()[p].level);
        }
        assert!(validate_region_graph(&g).passed());
    }
}
