//! Harmonic hole filling.
//!
//! Unknown pixels converge to the mean of their in-bounds 4-neighbours under
//! Jacobi iteration. A coarse pyramid supplies the starting values, clamped
//! per connected region to the range of its known border pixels, so every
//! iterate stays inside that range.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{round_u8, BinaryMask, Image};

/// Default stopping threshold: largest per-iteration channel change, in
/// 8-bit levels (0.1/255 of full scale).
pub const DEFAULT_TOL: f64 = 0.1;
pub const DEFAULT_MAX_ITER: usize = 5000;

/// Float RGBA grid with a known/unknown flag per pixel.
struct Grid {
    w: usize,
    h: usize,
    values: Vec<[f64; 4]>,
    known: Vec<bool>,
}

impl Grid {
    fn neighbours(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        let (x, y) = (k % self.w, k / self.w);
        let w = self.w;
        [
            (x > 0).then(|| k - 1),
            (x + 1 < self.w).then(|| k + 1),
            (y > 0).then(|| k - w),
            (y + 1 < self.h).then(|| k + w),
        ]
        .into_iter()
        .flatten()
    }

    /// 2×2 box reduction; a coarse pixel is known if any child is.
    fn coarsen(&self) -> Grid {
        let (cw, ch) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let mut values = vec![[0.0; 4]; cw * ch];
        let mut known = vec![false; cw * ch];
        for cy in 0..ch {
            for cx in 0..cw {
                let mut acc = [0.0; 4];
                let mut n = 0.0;
                for y in 2 * cy..(2 * cy + 2).min(self.h) {
                    for x in 2 * cx..(2 * cx + 2).min(self.w) {
                        let k = y * self.w + x;
                        if self.known[k] {
                            for (a, v) in acc.iter_mut().zip(self.values[k]) {
                                *a += v;
                            }
                            n += 1.0;
                        }
                    }
                }
                if n > 0.0 {
                    values[cy * cw + cx] = acc.map(|v| v / n);
                    known[cy * cw + cx] = true;
                }
            }
        }
        Grid {
            w: cw,
            h: ch,
            values,
            known,
        }
    }
}

/// Pixel indices plus per-channel lower and upper bounds.
type Region = (Vec<usize>, [f64; 4], [f64; 4]);

/// Connected regions (4-neighbour) of unknown pixels, each with the
/// per-channel range of the known pixels bordering it.
fn regions(g: &Grid) -> Result<Vec<Region>> {
    let mut seen = vec![false; g.w * g.h];
    let mut out = Vec::new();
    for start in 0..g.w * g.h {
        if g.known[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut members = Vec::new();
        let mut lo = [f64::INFINITY; 4];
        let mut hi = [f64::NEG_INFINITY; 4];
        while let Some(k) = stack.pop() {
            members.push(k);
            for n in g.neighbours(k) {
                if g.known[n] {
                    for c in 0..4 {
                        lo[c] = lo[c].min(g.values[n][c]);
                        hi[c] = hi[c].max(g.values[n][c]);
                    }
                } else if !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
        if lo[0] > hi[0] {
            return Err(Error::UnboundedRegion {
                x: (start % g.w) as u32,
                y: (start / g.w) as u32,
            });
        }
        members.sort_unstable();
        out.push((members, lo, hi));
    }
    Ok(out)
}

/// Jacobi sweeps over `unknown` until the largest change is below `tol`.
fn relax(g: &mut Grid, unknown: &[usize], tol: f64, max_iter: usize) -> usize {
    let nbrs: Vec<([usize; 4], usize)> = unknown
        .iter()
        .map(|&k| {
            let mut a = [0; 4];
            let mut n = 0;
            for m in g.neighbours(k) {
                a[n] = m;
                n += 1;
            }
            (a, n)
        })
        .collect();
    let mut next = vec![[0.0; 4]; unknown.len()];
    for iter in 0..max_iter {
        let values = &g.values;
        let change = next
            .par_iter_mut()
            .zip(nbrs.par_iter())
            .zip(unknown.par_iter())
            .map(|((out, (a, n)), &k)| {
                let mut acc = [0.0; 4];
                for &m in &a[..*n] {
                    for c in 0..4 {
                        acc[c] += values[m][c];
                    }
                }
                let mut d: f64 = 0.0;
                for c in 0..4 {
                    out[c] = acc[c] / *n as f64;
                    d = d.max((out[c] - values[k][c]).abs());
                }
                d
            })
            .reduce(|| 0.0, f64::max);
        for (&k, v) in unknown.iter().zip(&next) {
            g.values[k] = *v;
        }
        if change < tol {
            return iter + 1;
        }
    }
    max_iter
}

fn solve(g: &mut Grid, tol: f64, max_iter: usize) -> Result<()> {
    let regions = regions(g)?;
    if regions.is_empty() {
        return Ok(());
    }
    let unknown_count: usize = regions.iter().map(|r| r.0.len()).sum();
    if g.w > 4 && g.h > 4 && unknown_count > 64 {
        let mut coarse = g.coarsen();
        solve(&mut coarse, tol, max_iter)?;
        let cw = coarse.w;
        for (members, _, _) in &regions {
            for &k in members {
                let (x, y) = (k % g.w, k / g.w);
                g.values[k] = coarse.values[(y / 2) * cw + x / 2];
            }
        }
    } else {
        for (members, lo, hi) in &regions {
            let mid: [f64; 4] = std::array::from_fn(|c| 0.5 * (lo[c] + hi[c]));
            for &k in members {
                g.values[k] = mid;
            }
        }
    }
    for (members, lo, hi) in &regions {
        for &k in members {
            for c in 0..4 {
                g.values[k][c] = g.values[k][c].clamp(lo[c], hi[c]);
            }
        }
    }
    let unknown: Vec<usize> = {
        let mut all: Vec<usize> = regions.into_iter().flat_map(|r| r.0).collect();
        all.sort_unstable();
        all
    };
    relax(g, &unknown, tol, max_iter);
    Ok(())
}

/// Replaces masked pixels with the harmonic interpolant of their
/// surroundings; unmasked pixels are returned unchanged.
///
/// `tol` is in 8-bit levels. A masked region with no unmasked 4-neighbour
/// anywhere on its border is an error.
pub fn inpaint(image: &Image, mask: &BinaryMask, tol: f64, max_iter: usize) -> Result<Image> {
    if image.dims() != mask.dims() {
        return Err(Error::DimensionMismatch {
            expected: image.dims(),
            found: mask.dims(),
        });
    }
    if mask.is_empty() {
        return Ok(image.clone());
    }
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut grid = Grid {
        w,
        h,
        values: image.pixels().map(|p| p.map(|c| c as f64)).collect(),
        known: mask.bits().iter().map(|b| !b).collect(),
    };
    solve(&mut grid, tol, max_iter)?;
    let mut out = image.clone();
    for (k, &m) in mask.bits().iter().enumerate() {
        if m {
            out.put((k % w) as u32, (k / w) as u32, grid.values[k].map(round_u8));
        }
    }
    Ok(out)
}
