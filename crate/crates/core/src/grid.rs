//! Factor graph of a constraint placed on a concrete grid, optionally with
//! per-cell channel evidence.

use serde::{Deserialize, Serialize};

use crate::constraint::{build_kernels, RllSpec, WindowKernel};
use crate::error::{Error, Result};
use crate::shape::GridShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FactorKind {
    Constraint,
    Evidence,
}

/// One factor of the graph.
///
/// `table[c]` is the factor value for the scope configuration whose bit `j`
/// is the value of `scope[j]`. Every factor covers an axis-aligned box of
/// cells starting at `anchor` with the given `extent`, which lets region
/// construction decide containment without scanning scopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorInstance {
    pub id: usize,
    pub scope: Vec<usize>,
    pub table: Vec<f64>,
    pub kind: FactorKind,
    /// Index of the kernel template, `None` for evidence.
    pub template: Option<usize>,
    pub anchor: usize,
    pub extent: [usize; 3],
}

/// Likelihood pair `(p(y | x = 0), p(y | x = 1))` for one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidenceTable(pub f64, pub f64);

impl EvidenceTable {
    pub const UNIT: EvidenceTable = EvidenceTable(1.0, 1.0);

    fn check(&self, cell: usize) -> Result<()> {
        for v in [self.0, self.1] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidEvidence(format!(
                    "cell {cell}: likelihoods must be finite and positive, got ({}, {})",
                    self.0, self.1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorGraph {
    shape: GridShape,
    spec: RllSpec,
    kernels: Vec<WindowKernel>,
    factors: Vec<FactorInstance>,
}

/// Places every kernel of `spec` at every anchor where its window fits.
pub fn build_factor_graph(shape: &GridShape, spec: &RllSpec) -> Result<FactorGraph> {
    spec.check_shape(shape)?;
    let kernels = build_kernels(spec);
    let ext = shape.padded();
    let mut factors = Vec::new();
    for (template, kernel) in kernels.iter().enumerate() {
        let stride = shape.stride(kernel.axis);
        for anchor in 0..shape.cell_count() {
            if shape.coords(anchor)[kernel.axis] + kernel.window_length > ext[kernel.axis] {
                continue;
            }
            let scope = (0..kernel.window_length)
                .map(|j| anchor + j * stride)
                .collect();
            let mut extent = [1; 3];
            extent[kernel.axis] = kernel.window_length;
            factors.push(FactorInstance {
                id: factors.len(),
                scope,
                table: kernel.table.iter().map(|&v| f64::from(v)).collect(),
                kind: FactorKind::Constraint,
                template: Some(template),
                anchor,
                extent,
            });
        }
    }
    Ok(FactorGraph {
        shape: shape.clone(),
        spec: spec.clone(),
        kernels,
        factors,
    })
}

/// Returns a copy of `g` with one evidence factor per cell.
pub fn attach_evidence(g: &FactorGraph, tables: &[EvidenceTable]) -> Result<FactorGraph> {
    if tables.len() != g.variable_count() {
        return Err(Error::InvalidEvidence(format!(
            "expected {} tables, got {}",
            g.variable_count(),
            tables.len()
        )));
    }
    let mut out = g.clone();
    for (cell, t) in tables.iter().enumerate() {
        t.check(cell)?;
        out.factors.push(FactorInstance {
            id: out.factors.len(),
            scope: vec![cell],
            table: vec![t.0, t.1],
            kind: FactorKind::Evidence,
            template: None,
            anchor: cell,
            extent: [1; 3],
        });
    }
    Ok(out)
}

impl FactorGraph {
    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn spec(&self) -> &RllSpec {
        &self.spec
    }

    pub fn kernels(&self) -> &[WindowKernel] {
        &self.kernels
    }

    pub fn factors(&self) -> &[FactorInstance] {
        &self.factors
    }

    pub fn variable_count(&self) -> usize {
        self.shape.cell_count()
    }

    pub fn has_evidence(&self) -> bool {
        self.factors.iter().any(|f| f.kind == FactorKind::Evidence)
    }

    /// Overwrites the evidence tables in place, keeping the factor layout.
    /// Requires a graph produced by [`attach_evidence`].
    pub fn set_evidence(&mut self, tables: &[EvidenceTable]) -> Result<()> {
        if tables.len() != self.variable_count() {
            return Err(Error::InvalidEvidence(format!(
                "expected {} tables, got {}",
                self.variable_count(),
                tables.len()
            )));
        }
        let mut seen = 0;
        for f in self.factors.iter_mut().filter(|f| f.kind == FactorKind::Evidence) {
            let t = tables[f.anchor];
            t.check(f.anchor)?;
            f.table[0] = t.0;
            f.table[1] = t.1;
            seen += 1;
        }
        if seen != tables.len() {
            return Err(Error::InvalidEvidence(
                "graph does not carry one evidence factor per cell".into(),
            ));
        }
        Ok(())
    }

    /// Adds a constraint factor forcing `cell` to `value`.
    pub fn clamp(&mut self, cell: usize, value: u8) -> Result<()> {
        if cell >= self.variable_count() || value > 1 {
            return Err(Error::InvalidShape(format!(
                "cannot clamp cell {cell} to {value}"
            )));
        }
        let table = if value == 1 { vec![0.0, 1.0] } else { vec![1.0, 0.0] };
        self.factors.push(FactorInstance {
            id: self.factors.len(),
            scope: vec![cell],
            table,
            kind: FactorKind::Constraint,
            template: None,
            anchor: cell,
            extent: [1; 3],
        });
        Ok(())
    }

    /// Product of all factors at a full assignment (`cells[i]` in {0,1}).
    pub fn weight(&self, cells: &[u8]) -> f64 {
        self.factors
            .iter()
            .map(|f| {
                let c = f
                    .scope
                    .iter()
                    .enumerate()
                    .fold(0usize, |acc, (j, &v)| acc | (usize::from(cells[v]) << j));
                f.table[c]
            })
            .product()
    }

    /// True when two graphs have identical factor scopes and kinds, so a
    /// region graph built for one can be reused for the other.
    pub fn same_layout(&self, other: &FactorGraph) -> bool {
        self.shape == other.shape
            && self.factors.len() == other.factors.len()
            && self
                .factors
                .iter()
                .zip(&other.factors)
                .all(|(a, b)| a.scope == b.scope && a.kind == b.kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(extents: Vec<usize>, spec: &str) -> FactorGraph {
        let shape = GridShape::new(extents).unwrap();
        build_factor_graph(&shape, &RllSpec::parse(spec, shape.ndim()).unwrap()).unwrap()
    }

    fn brute_z(g: &FactorGraph) -> f64 {
        let n = g.variable_count();
        (0..1u64 << n)
            .map(|bits| {
                let cells: Vec<u8> = (0..n).map(|i| ((bits >> i) & 1) as u8).collect();
                g.weight(&cells)
            })
            .sum()
    }

    #[test]
    fn fig_one_factor_count() {
        let g = graph(vec![4, 4], "1,inf");
        assert_eq!(g.factors().len(), 24);
        assert!(g.factors().iter().all(|f| f.scope.len() == 2));
    }

    #[test]
    fn single_cell_has_no_factors() {
        let g = graph(vec![1, 1], "1,inf");
        assert!(g.factors().is_empty());
        assert_eq!(brute_z(&g), 2.0);
    }

    #[test]
    fn two_infinity_three_by_three() {
        let g = graph(vec![3, 3], "2,inf");
        // 3 rows x 1 placement + 3 columns x 1 placement.
        let mut placements = 0;
        for axis in 0..2 {
            for anchor in 0..9 {
                let c = g.shape().coords(anchor);
                if c[axis] + 3 <= 3 {
                    placements += 1;
                }
            }
        }
        assert_eq!(placements, 6);
        assert_eq!(g.factors().len(), 6);
        assert!(g.factors().iter().all(|f| f.scope.len() == 3));
    }

    #[test]
    fn evidence_examples() {
        let g = graph(vec![1, 1], "0,inf");
        let e = attach_evidence(&g, &[EvidenceTable(0.3, 0.7)]).unwrap();
        assert!((brute_z(&e) - 1.0).abs() < 1e-15);

        let g = graph(vec![2, 2], "1,inf");
        let e = attach_evidence(&g, &[EvidenceTable(0.5, 0.5); 4]).unwrap();
        assert!((brute_z(&e) - 0.4375).abs() < 1e-15);
        let unit = attach_evidence(&g, &[EvidenceTable::UNIT; 4]).unwrap();
        assert_eq!(brute_z(&unit), 7.0);
        assert_eq!(g.factors().len(), 4, "original graph is untouched");
    }

    #[test]
    fn evidence_validation() {
        let g = graph(vec![2, 1], "0,inf");
        assert!(attach_evidence(&g, &[EvidenceTable::UNIT]).is_err());
        assert!(attach_evidence(&g, &[EvidenceTable::UNIT, EvidenceTable(0.0, 1.0)]).is_err());
        assert!(attach_evidence(&g, &[EvidenceTable::UNIT, EvidenceTable(f64::NAN, 1.0)]).is_err());
    }

    #[test]
    fn scaling_one_cell_scales_z() {
        let g = graph(vec![3, 2], "1,inf");
        let mut tables = vec![EvidenceTable(0.4, 0.9); 6];
        let z0 = brute_z(&attach_evidence(&g, &tables).unwrap());
        tables[3] = EvidenceTable(0.4 * 2.5, 0.9 * 2.5);
        let z1 = brute_z(&attach_evidence(&g, &tables).unwrap());
        assert!((z1 / z0 - 2.5).abs() < 1e-12);
    }

    #[test]
    fn set_evidence_in_place() {
        let g = graph(vec![2, 2], "1,inf");
        let mut e = attach_evidence(&g, &[EvidenceTable::UNIT; 4]).unwrap();
        e.set_evidence(&[EvidenceTable(0.5, 0.5); 4]).unwrap();
        assert!((brute_z(&e) - 0.4375).abs() < 1e-15);
        assert!(e.same_layout(&attach_evidence(&g, &[EvidenceTable::UNIT; 4]).unwrap()));
        assert!(!e.same_layout(&g));
    }
}
