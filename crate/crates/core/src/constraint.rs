//! Run-length-limited constraint specifications, their factorization into
//! sliding-window kernels, and exact admissibility checks.
//!
//! A `(d, k)` rule on an axis asks that, along every line parallel to that
//! axis, successive 1s are separated by at least `d` zeros and no run of zeros
//! is longer than `k`. On a finite grid the rule is enforced through windows:
//! every window of `d + 1` consecutive cells holds at most one 1, and every
//! window of `k + 1` consecutive cells holds at least one 1. Windows that do
//! not fit inside the grid impose nothing, so a line shorter than `d + 1`
//! carries no `d` restriction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shape::GridShape;

/// `(d, k)` rule for one axis; `k = None` stands for an unbounded run length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AxisRule {
    pub d: usize,
    pub k: Option<usize>,
}

impl AxisRule {
    pub fn new(d: usize, k: Option<usize>) -> Result<Self> {
        if let Some(k) = k {
            if k == 0 || d >= k {
                return Err(Error::InvalidSpec(format!(
                    "need 0 <= d < k, got d = {d}, k = {k}"
                )));
            }
        }
        Ok(AxisRule { d, k })
    }

    pub fn unbounded(d: usize) -> Self {
        AxisRule { d, k: None }
    }

    /// True when the rule imposes nothing, i.e. `(0, inf)`.
    pub fn is_trivial(&self) -> bool {
        self.d == 0 && self.k.is_none()
    }
}

/// Per-axis run-length parameters of a 1-, 2- or 3-D constraint.
///
/// Axis 0 is the horizontal rule `(d1, k1)`, axis 1 the vertical rule
/// `(d2, k2)`, axis 2 the depth rule `(d3, k3)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RllSpec {
    axes: Vec<AxisRule>,
}

impl RllSpec {
    pub fn new(axes: Vec<AxisRule>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 3 {
            return Err(Error::InvalidSpec(format!(
                "expected 1 to 3 axes, got {}",
                axes.len()
            )));
        }
        for a in &axes {
            AxisRule::new(a.d, a.k)?;
        }
        Ok(RllSpec { axes })
    }

    /// The same `(d, k)` rule along each of `dims` axes.
    pub fn uniform(dims: usize, d: usize, k: Option<usize>) -> Result<Self> {
        let rule = AxisRule::new(d, k)?;
        RllSpec::new(vec![rule; dims])
    }

    /// Parses `"d,k"` (applied to all `default_dims` axes) or a full
    /// per-axis list such as `"1,inf,2,4"`. Infinite `k` is written `inf`.
    pub fn parse(text: &str, default_dims: usize) -> Result<Self> {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        if parts.len() % 2 != 0 || parts.is_empty() || parts.len() > 6 {
            return Err(Error::Parse(format!(
                "constraint {text:?}: expected comma-separated (d,k) pairs"
            )));
        }
        let mut axes = Vec::with_capacity(parts.len() / 2);
        for pair in parts.chunks(2) {
            let d = pair[0].parse::<usize>().map_err(|_| {
                Error::Parse(format!("constraint {text:?}: bad d value {:?}", pair[0]))
            })?;
            let k = match pair[1].to_ascii_lowercase().as_str() {
                "inf" | "infinity" => None,
                s => Some(s.parse::<usize>().map_err(|_| {
                    Error::Parse(format!("constraint {text:?}: bad k value {:?}", pair[1]))
                })?),
            };
            axes.push(AxisRule::new(d, k)?);
        }
        if axes.len() == 1 {
            axes = vec![axes[0]; default_dims];
        }
        RllSpec::new(axes)
    }

    pub fn axes(&self) -> &[AxisRule] {
        &self.axes
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    /// Swaps the first two axes.
    pub fn transpose(&self) -> RllSpec {
        let mut axes = self.axes.clone();
        if axes.len() >= 2 {
            axes.swap(0, 1);
        }
        RllSpec { axes }
    }

    pub fn all_k_infinite(&self) -> bool {
        self.axes.iter().all(|a| a.k.is_none())
    }

    pub fn check_shape(&self, shape: &GridShape) -> Result<()> {
        if shape.ndim() != self.ndim() {
            return Err(Error::DimensionMismatch {
                spec: self.ndim(),
                grid: shape.ndim(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for RllSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .axes
            .iter()
            .map(|a| match a.k {
                Some(k) => format!("{},{}", a.d, k),
                None => format!("{},inf", a.d),
            })
            .collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for RllSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RllSpec::parse(s, 2)
    }
}

/// A binary array over a grid, cells in raster order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryArray {
    shape: GridShape,
    cells: Vec<u8>,
}

impl BinaryArray {
    pub fn new(shape: GridShape, cells: Vec<u8>) -> Result<Self> {
        if cells.len() != shape.cell_count() {
            return Err(Error::InvalidShape(format!(
                "{} cells given for shape {shape}",
                cells.len()
            )));
        }
        if cells.iter().any(|&c| c > 1) {
            return Err(Error::InvalidShape("cells must be 0 or 1".into()));
        }
        Ok(BinaryArray { shape, cells })
    }

    pub fn zeros(shape: GridShape) -> Self {
        let n = shape.cell_count();
        BinaryArray {
            shape,
            cells: vec![0; n],
        }
    }

    /// Array whose cell `i` is bit `i` of `bits`.
    pub fn from_bits(shape: GridShape, bits: u64) -> Self {
        let cells = (0..shape.cell_count())
            .map(|i| ((bits >> i) & 1) as u8)
            .collect();
        BinaryArray { shape, cells }
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub(crate) fn cells_mut(&mut self) -> &mut [u8] {
        &mut self.cells
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, coords: [usize; 3]) -> u8 {
        self.cells[self.shape.index(coords)]
    }

    pub fn count_ones(&self) -> usize {
        self.cells.iter().filter(|&&c| c == 1).count()
    }

    /// Swaps axes 0 and 1.
    pub fn transpose(&self) -> BinaryArray {
        let shape = self.shape.transpose();
        let mut cells = vec![0; self.cells.len()];
        for (i, &v) in self.cells.iter().enumerate() {
            let [x, y, z] = self.shape.coords(i);
            cells[shape.index([y, x, z])] = v;
        }
        BinaryArray { shape, cells }
    }

    /// BPSK channel symbols: 0 maps to -1, 1 maps to +1.
    pub fn to_bpsk(&self) -> Vec<f64> {
        self.cells
            .iter()
            .map(|&c| if c == 1 { 1.0 } else { -1.0 })
            .collect()
    }

    /// Parses rows of `0`/`1` characters. 3-D arrays list their layers
    /// separated by blank lines. Whitespace inside a row is ignored.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut layers: Vec<Vec<Vec<u8>>> = vec![Vec::new()];
        for line in text.lines() {
            let row: Vec<char> = line.chars().filter(|c| !c.is_whitespace()).collect();
            if row.is_empty() {
                if !layers.last().unwrap().is_empty() {
                    layers.push(Vec::new());
                }
                continue;
            }
            let parsed = row
                .iter()
                .map(|c| match c {
                    '0' => Ok(0u8),
                    '1' => Ok(1u8),
                    other => Err(Error::Parse(format!("unexpected character {other:?}"))),
                })
                .collect::<Result<Vec<u8>>>()?;
            layers.last_mut().unwrap().push(parsed);
        }
        if layers.last().is_some_and(|l| l.is_empty()) {
            layers.pop();
        }
        if layers.is_empty() {
            return Err(Error::Parse("empty array".into()));
        }
        let width = layers[0][0].len();
        let height = layers[0].len();
        for layer in &layers {
            if layer.len() != height || layer.iter().any(|r| r.len() != width) {
                return Err(Error::Parse("rows or layers have unequal lengths".into()));
            }
        }
        let extents = if layers.len() > 1 {
            vec![width, height, layers.len()]
        } else {
            vec![width, height]
        };
        let cells = layers.into_iter().flatten().flatten().collect();
        BinaryArray::new(GridShape::new(extents)?, cells)
    }

    /// Inverse of [`BinaryArray::parse_text`]; 1-D arrays print as one row.
    pub fn to_text(&self) -> String {
        let [w, h, q] = self.shape.padded();
        let mut out = String::with_capacity(self.cells.len() + h * q + q);
        for z in 0..q {
            if z > 0 {
                out.push('\n');
            }
            for y in 0..h {
                for x in 0..w {
                    out.push(if self.get([x, y, z]) == 1 { '1' } else { '0' });
                }
                out.push('\n');
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum KernelKind {
    /// d-kernel: the window holds at most one 1.
    AtMostOneOne,
    /// k-kernel: the window holds at least one 1.
    AtLeastOneOne,
}

/// Indicator on a window of consecutive cells along one axis.
///
/// `table[c]` is the kernel value for the window configuration whose bit `j`
/// is the value of the `j`-th cell of the window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowKernel {
    pub axis: usize,
    pub window_length: usize,
    pub kind: KernelKind,
    pub table: Vec<u8>,
}

impl WindowKernel {
    pub fn new(axis: usize, window_length: usize, kind: KernelKind) -> Self {
        let table = (0..1usize << window_length)
            .map(|c| match kind {
                KernelKind::AtMostOneOne => u8::from(c.count_ones() <= 1),
                KernelKind::AtLeastOneOne => u8::from(c != 0),
            })
            .collect();
        WindowKernel {
            axis,
            window_length,
            kind,
            table,
        }
    }

    pub fn eval(&self, config: usize) -> u8 {
        self.table[config]
    }
}

/// Kernel templates whose placements factor the indicator of `spec`.
pub fn build_kernels(spec: &RllSpec) -> Vec<WindowKernel> {
    let mut kernels = Vec::new();
    for (axis, rule) in spec.axes().iter().enumerate() {
        if rule.d > 0 {
            kernels.push(WindowKernel::new(axis, rule.d + 1, KernelKind::AtMostOneOne));
        }
        if let Some(k) = rule.k {
            kernels.push(WindowKernel::new(axis, k + 1, KernelKind::AtLeastOneOne));
        }
    }
    kernels
}

/// Checks one line of cells against a `(d, k)` rule, enforcing only what the
/// windows that fit inside the line can see.
pub(crate) fn line_admissible(line: impl ExactSizeIterator<Item = u8>, rule: AxisRule) -> bool {
    let len = line.len();
    let d = if len > rule.d { rule.d } else { 0 };
    let mut last_one: Option<usize> = None;
    let mut zeros = 0usize;
    for (i, v) in line.enumerate() {
        if v == 1 {
            if let Some(p) = last_one {
                if i - p - 1 < d {
                    return false;
                }
            }
            last_one = Some(i);
            zeros = 0;
        } else {
            zeros += 1;
            if rule.k.is_some_and(|k| zeros > k) {
                return false;
            }
        }
    }
    true
}

/// Exact admissibility: every axis-aligned line satisfies its axis rule.
pub fn is_admissible(x: &BinaryArray, spec: &RllSpec) -> Result<bool> {
    spec.check_shape(x.shape())?;
    let shape = x.shape();
    let ext = shape.padded();
    for (axis, rule) in spec.axes().iter().enumerate() {
        if rule.is_trivial() {
            continue;
        }
        let stride = shape.stride(axis);
        let len = ext[axis];
        let (a, b) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for u in 0..ext[b] {
            for v in 0..ext[a] {
                let mut c = [0; 3];
                c[a] = v;
                c[b] = u;
                let start = shape.index(c);
                let line = (0..len).map(|t| x.cells[start + t * stride]);
                if !line_admissible(line, *rule) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Product of all kernel placements that fit inside the array.
pub fn kernel_product(x: &BinaryArray, kernels: &[WindowKernel]) -> u8 {
    let shape = x.shape();
    let ext = shape.padded();
    for kernel in kernels {
        let stride = shape.stride(kernel.axis);
        if ext[kernel.axis] < kernel.window_length {
            continue;
        }
        for anchor in 0..shape.cell_count() {
            if shape.coords(anchor)[kernel.axis] + kernel.window_length > ext[kernel.axis] {
                continue;
            }
            let config = (0..kernel.window_length).fold(0usize, |acc, j| {
                acc | (usize::from(x.cells[anchor + j * stride]) << j)
            });
            if kernel.eval(config) == 0 {
                return 0;
            }
        }
    }
    1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(s: &str) -> RllSpec {
        RllSpec::parse(s, 2).unwrap()
    }

    #[test]
    fn parse_and_display() {
        let s = spec("1,inf,2,4");
        assert_eq!(s.axes()[0], AxisRule::unbounded(1));
        assert_eq!(s.axes()[1], AxisRule { d: 2, k: Some(4) });
        assert_eq!(s.to_string(), "1,inf,2,4");
        assert_eq!(spec("1,inf").ndim(), 2);
        assert_eq!(RllSpec::parse("1,inf", 3).unwrap().ndim(), 3);
        assert_eq!(spec("0,inf,1,INF,2,inf").ndim(), 3);
    }

    #[test]
    fn rejects_invalid_rules() {
        assert!(RllSpec::parse("2,2", 2).is_err());
        assert!(RllSpec::parse("3,1", 2).is_err());
        assert!(RllSpec::parse("1", 2).is_err());
        assert!(RllSpec::parse("1,x", 2).is_err());
        assert!(RllSpec::parse("a,inf", 2).is_err());
        assert!(AxisRule::new(0, Some(0)).is_err());
    }

    #[test]
    fn hard_square_kernels() {
        let kernels = build_kernels(&spec("1,inf"));
        assert_eq!(kernels.len(), 2);
        for (axis, k) in kernels.iter().enumerate() {
            assert_eq!(k.axis, axis);
            assert_eq!(k.window_length, 2);
            assert_eq!(k.kind, KernelKind::AtMostOneOne);
            assert_eq!(k.table, vec![1, 1, 1, 0]);
        }
    }

    #[test]
    fn unconstrained_spec_has_no_kernels() {
        assert!(build_kernels(&spec("0,inf")).is_empty());
    }

    #[test]
    fn finite_k_adds_run_kernel() {
        let kernels = build_kernels(&spec("1,3"));
        assert_eq!(kernels.len(), 4);
        let k = &kernels[1];
        assert_eq!(k.kind, KernelKind::AtLeastOneOne);
        assert_eq!(k.window_length, 4);
        assert_eq!(k.table[0], 0);
        assert!(k.table[1..].iter().all(|&v| v == 1));
    }

    #[test]
    fn kernels_match_run_scan_on_short_sequences() {
        // 1-D (1,3): every sequence of length <= 8.
        let s = RllSpec::uniform(1, 1, Some(3)).unwrap();
        let kernels = build_kernels(&s);
        for len in 1..=8 {
            let shape = GridShape::new(vec![len]).unwrap();
            for bits in 0..1u64 << len {
                let x = BinaryArray::from_bits(shape.clone(), bits);
                let direct = reference_runs_ok(x.cells(), 1, 3);
                assert_eq!(kernel_product(&x, &kernels) == 1, direct, "{bits:b}");
                assert_eq!(is_admissible(&x, &s).unwrap(), direct);
            }
        }
    }

    // Direct run-length reading of the rule, valid when the line is at least
    // as long as both windows.
    fn reference_runs_ok(cells: &[u8], d: usize, k: usize) -> bool {
        let text: String = cells.iter().map(|c| char::from(b'0' + c)).collect();
        let runs: Vec<&str> = text.split('1').collect();
        let max_run = runs.iter().map(|r| r.len()).max().unwrap_or(0);
        let inner_ok = runs.len() < 3
            || runs[1..runs.len() - 1]
                .iter()
                .all(|r| r.len() >= d || cells.len() <= d);
        let k_ok = max_run <= k;
        inner_ok && k_ok
    }

    #[test]
    fn admissibility_examples() {
        let hs = spec("1,inf");
        let zeros = BinaryArray::zeros(GridShape::new(vec![2, 2]).unwrap());
        assert!(is_admissible(&zeros, &hs).unwrap());
        let adjacent = BinaryArray::parse_text("11\n00\n").unwrap();
        assert!(!is_admissible(&adjacent, &hs).unwrap());
        let diagonal = BinaryArray::parse_text("10\n01\n").unwrap();
        assert!(is_admissible(&diagonal, &hs).unwrap());
    }

    #[test]
    fn displayed_two_infinity_segment_is_admissible() {
        let text = "0100100001001000100000100010\n\
                    1000010000100010000100000100\n\
                    0001000010000001000000010001\n\
                    0100100100010000001000100000\n";
        let x = BinaryArray::parse_text(text).unwrap();
        assert_eq!(x.shape().extents(), &[28, 4]);
        assert!(is_admissible(&x, &spec("2,inf")).unwrap());
        assert_eq!(kernel_product(&x, &build_kernels(&spec("2,inf"))), 1);
        // Not (3,inf): the first row has "1001".
        assert!(!is_admissible(&x, &spec("3,inf")).unwrap());
    }

    #[test]
    fn short_lines_carry_no_d_rule() {
        // A 2-cell line cannot hold a 3-cell window.
        let x = BinaryArray::parse_text("11\n").unwrap();
        let s = RllSpec::new(vec![AxisRule::unbounded(2), AxisRule::unbounded(0)]).unwrap();
        assert!(is_admissible(&x, &s).unwrap());
    }

    #[test]
    fn dimension_mismatch() {
        let x = BinaryArray::zeros(GridShape::new(vec![3]).unwrap());
        assert!(matches!(
            is_admissible(&x, &spec("1,inf")),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn text_round_trip_3d() {
        let text = "10\n00\n\n01\n11\n";
        let x = BinaryArray::parse_text(text).unwrap();
        assert_eq!(x.shape().extents(), &[2, 2, 2]);
        assert_eq!(x.to_text(), text);
    }

    #[test]
    fn bpsk_mapping() {
        let x = BinaryArray::parse_text("10\n").unwrap();
        assert_eq!(x.to_bpsk(), vec![1.0, -1.0]);
    }
}
