//! Approximately uniform draws from the admissible arrays, built region by
//! region from converged region beliefs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constraint::{is_admissible, BinaryArray, RllSpec};
use crate::error::{Error, Result};
use crate::gbp::{belief_of, BeliefSet};
use crate::region::RegionGraph;

/// Redraws of the previous basic region allowed before a global restart.
const LOCAL_RETRIES: usize = 16;

/// Global restarts allowed per sample.
const RESTART_BUDGET: usize = 1000;

/// RNG for sample `index`: one ChaCha stream per sample, so samples can be
/// drawn in any order (or in parallel) with identical results.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Draws `count` arrays.
///
/// Basic regions are visited in raster order. In each one, the variables
/// not yet fixed by earlier regions are drawn jointly from the region's
/// belief conditioned on the fixed ones, which is the same law as drawing
/// them one at a time by the chain rule. When the conditioning leaves no
/// mass, the previous region is redrawn (a bounded number of times) and
/// after that the sample starts over.
pub fn draw_samples(
    rg: &RegionGraph,
    bs: &BeliefSet,
    count: usize,
    seed: u64,
) -> Result<Vec<BinaryArray>> {
    let sampler = Sampler::new(rg, bs)?;
    (0..count)
        .map(|i| {
            sampler
                .draw(&mut sample_rng(seed, i))
                .map_err(|e| e.at_sample(i))
        })
        .collect()
}

struct Sampler<'a> {
    rg: &'a RegionGraph,
    bs: &'a BeliefSet,
    spec: RllSpec,
    order: Vec<usize>,
}

impl<'a> Sampler<'a> {
    fn new(rg: &'a RegionGraph, bs: &'a BeliefSet) -> Result<Self> {
        if bs.region_count() != rg.len() {
            return Err(Error::UnknownRegion(rg.len().min(bs.region_count())));
        }
        Ok(Sampler {
            rg,
            bs,
            spec: rg.factor_graph().spec().clone(),
            order: rg.basic_regions(),
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<BinaryArray> {
        let n = self.rg.shape().cell_count();
        let mut last_region = 0;
        for _ in 0..=RESTART_BUDGET {
            let mut cells: Vec<i8> = vec![-1; n];
            // Cells fixed by each visited region, for undoing.
            let mut fixed: Vec<Vec<u32>> = Vec::with_capacity(self.order.len());
            let mut retries = 0;
            let mut t = 0;
            let mut dead = false;
            while t < self.order.len() {
                let region = self.order[t];
                match self.draw_region(region, &mut cells, rng)? {
                    Some(newly) => {
                        fixed.push(newly);
                        t += 1;
                    }
                    None if t > 0 && retries < LOCAL_RETRIES => {
                        retries += 1;
                        for v in fixed.pop().expect("previous region") {
                            cells[v as usize] = -1;
                        }
                        t -= 1;
                    }
                    None => {
                        last_region = region;
                        dead = true;
                        break;
                    }
                }
            }
            if dead {
                continue;
            }
            let cells: Vec<u8> = cells.iter().map(|&c| c.max(0) as u8).collect();
            let x = BinaryArray::new(self.rg.shape().clone(), cells)?;
            if is_admissible(&x, &self.spec)? {
                return Ok(x);
            }
        }
        Err(Error::RestartBudgetExceeded {
            restarts: RESTART_BUDGET,
            region: last_region,
        })
    }

    /// Draws the free variables of `region`; `None` if the fixed ones have
    /// zero belief mass.
    fn draw_region(
        &self,
        region: usize,
        cells: &mut [i8],
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<Vec<u32>>> {
        let b = belief_of(self.bs, region)?;
        let (mut mask, mut value) = (0u32, 0u32);
        for (j, &v) in b.vars.iter().enumerate() {
            let c = cells[v as usize];
            if c >= 0 {
                mask |= 1 << j;
                value |= (c as u32) << j;
            }
        }
        let total: f64 = b
            .support
            .configs
            .iter()
            .zip(b.probs)
            .filter(|(&c, _)| c & mask == value)
            .map(|(_, &p)| p)
            .sum();
        if !(total > 0.0) {
            return Ok(None);
        }
        let mut u = rng.random::<f64>() * total;
        let mut chosen = None;
        for (&c, &p) in b.support.configs.iter().zip(b.probs) {
            if c & mask != value || p <= 0.0 {
                continue;
            }
            chosen = Some(c);
            if u < p {
                break;
            }
            u -= p;
        }
        let config = chosen.expect("positive mass has a configuration");
        let mut newly = Vec::new();
        for (j, &v) in b.vars.iter().enumerate() {
            if mask >> j & 1 == 0 {
                cells[v as usize] = ((config >> j) & 1) as i8;
                newly.push(v);
            }
        }
        Ok(Some(newly))
    }
}
