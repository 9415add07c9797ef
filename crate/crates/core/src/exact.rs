//! Exact counting: brute-force enumeration for tiny grids and a
//! transfer-matrix count for 2-D strips, both with big-integer results.

use std::collections::HashMap;
use std::fmt;

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::constraint::{is_admissible, AxisRule, BinaryArray, RllSpec};
use crate::error::{Error, Result};
use crate::shape::GridShape;

/// Largest grid (in cells) the enumerating routines accept.
pub const BRUTE_FORCE_LIMIT: usize = 24;

/// Default cap on live transfer-matrix states.
pub const DEFAULT_STATE_BUDGET: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CountMethod {
    #[serde(rename = "brute")]
    BruteForce,
    #[serde(rename = "transfer")]
    TransferMatrix,
}

impl std::str::FromStr for CountMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "brute" | "brute-force" => Ok(CountMethod::BruteForce),
            "transfer" | "transfer-matrix" => Ok(CountMethod::TransferMatrix),
            _ => Err(Error::Parse(format!("unknown counting method {s:?}"))),
        }
    }
}

impl fmt::Display for CountMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CountMethod::BruteForce => "brute",
            CountMethod::TransferMatrix => "transfer",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactCount {
    pub value: BigUint,
    pub method: CountMethod,
}

impl ExactCount {
    pub fn log2(&self) -> f64 {
        log2_big(&self.value)
    }
}

/// `log2(v)` from the bit length and the leading 64 bits.
pub fn log2_big(v: &BigUint) -> f64 {
    if v.is_zero() {
        return f64::NEG_INFINITY;
    }
    let bits = v.bits();
    if bits <= 64 {
        return (v.to_u64().expect("fits in 64 bits") as f64).log2();
    }
    let shift = bits - 64;
    let top = (v >> shift).to_u64().expect("top 64 bits");
    (top as f64).log2() + shift as f64
}

fn guard(shape: &GridShape) -> Result<()> {
    let cells = shape.cell_count();
    if cells > BRUTE_FORCE_LIMIT {
        return Err(Error::SizeGuard {
            cells,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    Ok(())
}

/// Calls `visit` with the cells of every admissible array, in order of
/// the array's bit pattern.
fn for_each_admissible(spec: &RllSpec, shape: &GridShape, mut visit: impl FnMut(&[u8])) -> Result<()> {
    guard(shape)?;
    spec.check_shape(shape)?;
    let n = shape.cell_count();
    let mut x = BinaryArray::zeros(shape.clone());
    for bits in 0..1u64 << n {
        for (i, c) in x.cells_mut().iter_mut().enumerate() {
            *c = ((bits >> i) & 1) as u8;
        }
        if is_admissible(&x, spec)? {
            visit(x.cells());
        }
    }
    Ok(())
}

/// Counts admissible arrays by checking all `2^N` of them.
pub fn brute_force_count(spec: &RllSpec, shape: &GridShape) -> Result<ExactCount> {
    let mut count = 0u64;
    for_each_admissible(spec, shape, |_| count += 1)?;
    Ok(ExactCount {
        value: BigUint::from(count),
        method: CountMethod::BruteForce,
    })
}

/// Zero-run tracker along one line, stored as a small code.
///
/// A line either has not seen a 1 yet (leading run, no `d` rule) or has,
/// and then the run since the last 1 matters. Leading runs of length at
/// least `d` behave like ordinary runs and share their code; with `k = inf`
/// runs longer than `d` are indistinguishable and are capped.
#[derive(Debug, Clone, Copy)]
struct RunTracker {
    d: usize,
    k: Option<usize>,
}

impl RunTracker {
    /// `line_len` decides whether the `d` window fits at all.
    fn new(rule: AxisRule, line_len: usize) -> RunTracker {
        RunTracker {
            d: if line_len > rule.d { rule.d } else { 0 },
            k: rule.k,
        }
    }

    fn zmax(&self) -> usize {
        self.k.unwrap_or(self.d)
    }

    fn state_count(&self) -> usize {
        self.zmax() + 1 + self.d
    }

    fn encode(&self, leading: bool, z: usize) -> u32 {
        if leading && z < self.d {
            (self.zmax() + 1 + z) as u32
        } else {
            z.min(self.zmax()) as u32
        }
    }

    fn decode(&self, code: u32) -> (bool, usize) {
        let code = code as usize;
        if code > self.zmax() {
            (true, code - self.zmax() - 1)
        } else {
            (false, code)
        }
    }

    fn start(&self) -> u32 {
        self.encode(true, 0)
    }

    fn push(&self, code: u32, v: u8) -> Option<u32> {
        let (leading, z) = self.decode(code);
        if v == 1 {
            (leading || z >= self.d).then(|| self.encode(false, 0))
        } else {
            let z = z + 1;
            if self.k.is_some_and(|k| z > k) {
                None
            } else {
                Some(self.encode(leading, z))
            }
        }
    }
}

fn bits_for(states: usize) -> u32 {
    usize::BITS - (states.max(2) - 1).leading_zeros()
}

/// Counts admissible `m x n` arrays (`m` along axis 0, `n` rows along
/// axis 1) with [`DEFAULT_STATE_BUDGET`].
pub fn transfer_matrix_count(spec: &RllSpec, m: usize, n: usize) -> Result<ExactCount> {
    transfer_matrix_count_with_budget(spec, m, n, DEFAULT_STATE_BUDGET)
}

/// Transfer-matrix count applied one cell at a time.
///
/// The state holds, per column, the vertical zero-run tracker of the rows
/// seen so far, plus the horizontal tracker of the row being filled. A full
/// row of cell steps is one application of the row transition.
pub fn transfer_matrix_count_with_budget(
    spec: &RllSpec,
    m: usize,
    n: usize,
    budget: usize,
) -> Result<ExactCount> {
    if spec.ndim() != 2 {
        return Err(Error::Unsupported(format!(
            "transfer-matrix counting needs a 2-D constraint, got {} axes",
            spec.ndim()
        )));
    }
    let shape = GridShape::new(vec![m, n])?;
    spec.check_shape(&shape)?;
    // Sweep along the shorter side to keep the profile small.
    let (spec, m, n) = if n < m {
        (spec.transpose(), n, m)
    } else {
        (spec.clone(), m, n)
    };
    let horizontal = RunTracker::new(spec.axes()[0], m);
    let vertical = RunTracker::new(spec.axes()[1], n);
    let cb = bits_for(vertical.state_count());
    let hb = bits_for(horizontal.state_count());
    if m as u32 * cb + hb > 128 {
        return Err(Error::Unsupported(format!(
            "width {m} does not fit the packed profile state"
        )));
    }
    let cmask = (1u128 << cb) - 1;
    let hshift = m as u32 * cb;

    let mut init = u128::from(horizontal.start()) << hshift;
    for x in 0..m {
        init |= u128::from(vertical.start()) << (x as u32 * cb);
    }
    let mut cur: HashMap<u128, BigUint> = HashMap::from([(init, BigUint::from(1u32))]);
    for _y in 0..n {
        for x in 0..m {
            let shift = x as u32 * cb;
            let mut next: HashMap<u128, BigUint> = HashMap::with_capacity(cur.len() * 2);
            for (key, count) in cur.drain() {
                let col = ((key >> shift) & cmask) as u32;
                let h = if x == 0 {
                    horizontal.start()
                } else {
                    (key >> hshift) as u32
                };
                for v in 0..2u8 {
                    let (Some(nc), Some(nh)) = (vertical.push(col, v), horizontal.push(h, v)) else {
                        continue;
                    };
                    let mut nk = key & !(cmask << shift) & ((1u128 << hshift) - 1);
                    nk |= u128::from(nc) << shift;
                    nk |= u128::from(nh) << hshift;
                    match next.get_mut(&nk) {
                        Some(c) => *c += &count,
                        None => {
                            next.insert(nk, count.clone());
                        }
                    }
                }
            }
            if next.len() > budget {
                return Err(Error::StateBudget {
                    states: next.len(),
                    budget,
                });
            }
            cur = next;
        }
    }
    let value = cur.into_values().fold(BigUint::zero(), |acc, c| acc + c);
    Ok(ExactCount {
        value,
        method: CountMethod::TransferMatrix,
    })
}

/// Probability that `cell` is 1 under the uniform law on admissible arrays.
pub fn exact_marginal(spec: &RllSpec, shape: &GridShape, cell: usize) -> Result<f64> {
    if cell >= shape.cell_count() {
        return Err(Error::InvalidShape(format!(
            "cell {cell} outside grid {shape}"
        )));
    }
    Ok(exact_marginals(spec, shape)?[cell])
}

/// Every cell's probability of being 1, from a single enumeration.
pub fn exact_marginals(spec: &RllSpec, shape: &GridShape) -> Result<Vec<f64>> {
    let mut ones = vec![0u64; shape.cell_count()];
    let mut total = 0u64;
    for_each_admissible(spec, shape, |cells| {
        total += 1;
        for (o, &c) in ones.iter_mut().zip(cells) {
            *o += u64::from(c);
        }
    })?;
    Ok(ones.iter().map(|&o| o as f64 / total as f64).collect())
}

/// `ln p(y)` for inputs uniform over the admissible arrays, BPSK-mapped
/// (0 -> -1, 1 -> +1) and observed through i.i.d. Gaussian noise of
/// standard deviation `sigma`.
pub fn exact_output_log_probability(
    spec: &RllSpec,
    shape: &GridShape,
    y: &[f64],
    sigma: f64,
) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidEvidence(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if y.len() != shape.cell_count() {
        return Err(Error::InvalidEvidence(format!(
            "{} outputs for grid {shape}",
            y.len()
        )));
    }
    let var2 = 2.0 * sigma * sigma;
    let norm = -0.5 * (std::f64::consts::PI * var2).ln();
    // Per-cell log-likelihoods for x = 0 and x = 1.
    let ll: Vec<[f64; 2]> = y
        .iter()
        .map(|&v| {
            [
                norm - (v + 1.0) * (v + 1.0) / var2,
                norm - (v - 1.0) * (v - 1.0) / var2,
            ]
        })
        .collect();
    let mut terms = Vec::new();
    for_each_admissible(spec, shape, |cells| {
        terms.push(
            cells
                .iter()
                .zip(&ll)
                .map(|(&c, l)| l[c as usize])
                .sum::<f64>(),
        );
    })?;
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    Ok(max + sum.ln() - (terms.len() as f64).ln())
}

/// Density `p(y)`; see [`exact_output_log_probability`].
pub fn exact_output_probability(
    spec: &RllSpec,
    shape: &GridShape,
    y: &[f64],
    sigma: f64,
) -> Result<f64> {
    exact_output_log_probability(spec, shape, y, sigma).map(f64::exp)
}
