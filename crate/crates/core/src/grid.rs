//! Periodic 2D fields, kernel correlation, mesh restriction and error metrics.
//!
//! Values are stored row-major as `values[ix * ny + iy]`, with `ix` running
//! along x and `iy` along y. Kernel taps are addressed by offsets
//! `k1, k2 ∈ -(N-1)/2 ..= (N-1)/2` with `k1 ↔ x` and `k2 ↔ y`. All index
//! arithmetic wraps periodically.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Uniform periodic grid metadata.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::invalid(format!(
                "grid dimensions must be positive, got {nx}x{ny}"
            )));
        }
        if !(dx > 0.0 && dy > 0.0 && dx.is_finite() && dy.is_finite()) {
            return Err(Error::invalid(format!(
                "grid spacings must be positive, got dx={dx}, dy={dy}"
            )));
        }
        Ok(Grid { nx, ny, dx, dy })
    }

    /// Square grid covering the periodic box `[0, 2π)²`.
    pub fn periodic_square(n: usize) -> Self {
        assert!(n > 0, "grid size must be positive");
        let h = 2.0 * PI / n as f64;
        Grid {
            nx: n,
            ny: n,
            dx: h,
            dy: h,
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        ix * self.ny + iy
    }

    pub fn x(&self, ix: usize) -> f64 {
        ix as f64 * self.dx
    }

    pub fn y(&self, iy: usize) -> f64 {
        iy as f64 * self.dy
    }

    /// Same node counts and spacings up to a relative tolerance of 1e-12.
    pub fn matches(&self, other: &Grid) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
        self.nx == other.nx
            && self.ny == other.ny
            && close(self.dx, other.dx)
            && close(self.dy, other.dy)
    }
}

/// A scalar quantity sampled on a periodic grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Grid) -> Self {
        Field {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Field {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::shape(format!(
                "expected {} values for a {}x{} grid, got {}",
                grid.len(),
                grid.nx,
                grid.ny,
                values.len()
            )));
        }
        Ok(Field { grid, values })
    }

    /// Samples `f(x, y)` at the grid nodes `(ix·dx, iy·dy)`.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for ix in 0..grid.nx {
            let x = grid.x(ix);
            for iy in 0..grid.ny {
                values.push(f(x, grid.y(iy)));
            }
        }
        Field { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[self.grid.index(ix, iy)]
    }

    pub fn set(&mut self, ix: usize, iy: usize, v: f64) {
        let i = self.grid.index(ix, iy);
        self.values[i] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Periodic translation: `out[ix, iy] = self[ix + sx, iy + sy]`.
    pub fn shift(&self, sx: isize, sy: isize) -> Field {
        let g = self.grid;
        let mut out = Field::zeros(g);
        for ix in 0..g.nx {
            let jx = wrap(ix as isize + sx, g.nx);
            for iy in 0..g.ny {
                let jy = wrap(iy as isize + sy, g.ny);
                out.values[g.index(ix, iy)] = self.values[g.index(jx, jy)];
            }
        }
        out
    }

    /// `self * a + other * b`, both on the same grid.
    pub fn lincomb(&self, a: f64, other: &Field, b: f64) -> Result<Field> {
        check_same_grid(&self.grid, &other.grid)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Field {
            grid: self.grid,
            values,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Ordered components sharing one grid at a given time.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub components: Vec<Field>,
    pub time: f64,
}

impl State {
    pub fn new(components: Vec<Field>, time: f64) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::invalid("a state needs at least one component"))?;
        let grid = *first.grid();
        for c in &components[1..] {
            check_same_grid(&grid, c.grid())?;
        }
        Ok(State { components, time })
    }

    pub fn grid(&self) -> &Grid {
        self.components[0].grid()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().all(Field::is_finite)
    }
}

/// An `N×N` correlation kernel with `N` odd.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    size: usize,
    taps: Vec<f64>,
}

impl Kernel {
    pub fn zeros(size: usize) -> Result<Self> {
        check_odd(size)?;
        Ok(Kernel {
            size,
            taps: vec![0.0; size * size],
        })
    }

    pub fn delta(size: usize) -> Result<Self> {
        let mut k = Kernel::zeros(size)?;
        k.set(0, 0, 1.0);
        Ok(k)
    }

    /// Builds a kernel from rows indexed by `k1` (outer) and `k2` (inner).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let size = rows.len();
        check_odd(size)?;
        let mut taps = Vec::with_capacity(size * size);
        for r in rows {
            if r.len() != size {
                return Err(Error::shape(format!(
                    "kernel rows must have length {size}, got {}",
                    r.len()
                )));
            }
            taps.extend_from_slice(r);
        }
        Ok(Kernel { size, taps })
    }

    pub fn from_taps(size: usize, taps: Vec<f64>) -> Result<Self> {
        check_odd(size)?;
        if taps.len() != size * size {
            return Err(Error::shape(format!(
                "expected {} taps, got {}",
                size * size,
                taps.len()
            )));
        }
        Ok(Kernel { size, taps })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// `(N-1)/2`.
    pub fn radius(&self) -> isize {
        (self.size / 2) as isize
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    #[inline]
    fn offset(&self, k1: isize, k2: isize) -> usize {
        let r = self.radius();
        debug_assert!(k1.abs() <= r && k2.abs() <= r);
        ((k1 + r) as usize) * self.size + (k2 + r) as usize
    }

    pub fn get(&self, k1: isize, k2: isize) -> f64 {
        self.taps[self.offset(k1, k2)]
    }

    pub fn set(&mut self, k1: isize, k2: isize, v: f64) {
        let o = self.offset(k1, k2);
        self.taps[o] = v;
    }

    /// Rows indexed by `k1`, for serialization and display.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.taps.chunks(self.size).map(|r| r.to_vec()).collect()
    }

    /// `q[-k1, -k2]`.
    pub fn reflected(&self) -> Kernel {
        let mut taps = self.taps.clone();
        taps.reverse();
        Kernel {
            size: self.size,
            taps,
        }
    }
}

fn check_odd(size: usize) -> Result<()> {
    if size == 0 || size % 2 == 0 {
        return Err(Error::invalid(format!(
            "kernel size must be odd, got {size}"
        )));
    }
    Ok(())
}

pub(crate) fn check_same_grid(a: &Grid, b: &Grid) -> Result<()> {
    if !a.matches(b) {
        return Err(Error::shape(format!(
            "grid mismatch: {}x{} (dx={}, dy={}) vs {}x{} (dx={}, dy={})",
            a.nx, a.ny, a.dx, a.dy, b.nx, b.ny, b.dx, b.dy
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

pub(crate) fn check_kernel_fits(grid: &Grid, size: usize) -> Result<()> {
    if size > grid.nx || size > grid.ny {
        return Err(Error::invalid(format!(
            "kernel of size {size} does not fit a {}x{} grid",
            grid.nx, grid.ny
        )));
    }
    Ok(())
}

/// `out[l] += scale · Σ_k q[k] f[l + k]` over raw row-major buffers.
pub(crate) fn correlate_acc(
    f: &[f64],
    nx: usize,
    ny: usize,
    q: &Kernel,
    scale: f64,
    out: &mut [f64],
) {
    let r = q.radius();
    for k1 in -r..=r {
        for k2 in -r..=r {
            let w = q.get(k1, k2) * scale;
            if w == 0.0 {
                continue;
            }
            let s = wrap(k2, ny);
            for ix in 0..nx {
                let src = &f[wrap(ix as isize + k1, nx) * ny..][..ny];
                let dst = &mut out[ix * ny..][..ny];
                let (dst_a, dst_b) = dst.split_at_mut(ny - s);
                for (d, v) in dst_a.iter_mut().zip(&src[s..]) {
                    *d += w * v;
                }
                for (d, v) in dst_b.iter_mut().zip(&src[..s]) {
                    *d += w * v;
                }
            }
        }
    }
}

/// Adjoint of [`correlate_acc`] with respect to the field:
/// `fbar[l + k] += scale · q[k] ybar[l]`.
pub(crate) fn correlate_adjoint_acc(
    ybar: &[f64],
    nx: usize,
    ny: usize,
    q: &Kernel,
    scale: f64,
    fbar: &mut [f64],
) {
    correlate_acc(ybar, nx, ny, &q.reflected(), scale, fbar);
}

/// Adjoint with respect to the kernel: `qbar[k] += scale · Σ_l ybar[l] f[l + k]`.
pub(crate) fn kernel_gradient_acc(
    ybar: &[f64],
    f: &[f64],
    nx: usize,
    ny: usize,
    scale: f64,
    qbar: &mut Kernel,
) {
    let r = qbar.radius();
    for k1 in -r..=r {
        for k2 in -r..=r {
            let s = wrap(k2, ny);
            let mut acc = 0.0;
            for ix in 0..nx {
                let src = &f[wrap(ix as isize + k1, nx) * ny..][..ny];
                let yb = &ybar[ix * ny..][..ny];
                let (ya, yb2) = yb.split_at(ny - s);
                acc += ya.iter().zip(&src[s..]).map(|(a, b)| a * b).sum::<f64>();
                acc += yb2.iter().zip(&src[..s]).map(|(a, b)| a * b).sum::<f64>();
            }
            let o = qbar.offset(k1, k2);
            qbar.taps[o] += scale * acc;
        }
    }
}

/// Periodic correlation `(f ⊛ q)[l1, l2] = Σ q[k1, k2] f[l1 + k1, l2 + k2]`.
pub fn correlate(f: &Field, q: &Kernel) -> Result<Field> {
    check_kernel_fits(f.grid(), q.size())?;
    let g = *f.grid();
    let mut out = vec![0.0; g.len()];
    correlate_acc(f.values(), g.nx, g.ny, q, 1.0, &mut out);
    Ok(Field {
        grid: g,
        values: out,
    })
}

/// Pointwise subsampling `out[i, j] = f[s·i, s·j]` with stride `s`.
pub fn restrict_by(f: &Field, stride: usize) -> Result<Field> {
    let g = f.grid();
    if stride == 0 || g.nx % stride != 0 || g.ny % stride != 0 {
        return Err(Error::invalid(format!(
            "cannot restrict a {}x{} grid by stride {stride}",
            g.nx, g.ny
        )));
    }
    let coarse = Grid::new(
        g.nx / stride,
        g.ny / stride,
        g.dx * stride as f64,
        g.dy * stride as f64,
    )?;
    let mut out = Field::zeros(coarse);
    for i in 0..coarse.nx {
        for j in 0..coarse.ny {
            out.values[coarse.index(i, j)] = f.get(stride * i, stride * j);
        }
    }
    Ok(out)
}

/// Fine-to-coarse restriction by stride 4 (e.g. 128×128 → 32×32).
pub fn restrict(f: &Field) -> Result<Field> {
    restrict_by(f, 4)
}

pub fn restrict_state(s: &State, stride: usize) -> Result<State> {
    let components = s
        .components
        .iter()
        .map(|c| restrict_by(c, stride))
        .collect::<Result<Vec<_>>>()?;
    Ok(State {
        components,
        time: s.time,
    })
}

/// `‖pred − truth‖² / ‖truth − mean(truth)‖²`, with norms summed over
/// components and each component centred by its own spatial mean.
pub fn relative_error(truth: &State, pred: &State) -> Result<f64> {
    if truth.n_components() != pred.n_components() {
        return Err(Error::shape(format!(
            "component count mismatch: {} vs {}",
            truth.n_components(),
            pred.n_components()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, p) in truth.components.iter().zip(&pred.components) {
        check_same_grid(t.grid(), p.grid())?;
        let mean = t.mean();
        for (a, b) in t.values().iter().zip(p.values()) {
            num += (b - a) * (b - a);
            den += (a - mean) * (a - mean);
        }
    }
    if den == 0.0 {
        return Err(Error::Degenerate(
            "reference state is spatially constant".into(),
        ));
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(n: usize) -> Grid {
        Grid::periodic_square(n)
    }

    fn sample(g: Grid, seed: u64) -> Field {
        let mut s = seed;
        Field::from_fn(g, |_, _| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
    }

    #[test]
    fn delta_kernel_is_identity() {
        let f = sample(grid(8), 1);
        let out = correlate(&f, &Kernel::delta(3).unwrap()).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn zero_sum_kernel_kills_constants() {
        let f = Field::constant(grid(8), 3.5);
        let q = Kernel::from_rows(&[
            vec![1.0, -2.0, 0.5],
            vec![0.0, 0.25, 0.0],
            vec![0.0, 0.0, 0.25],
        ])
        .unwrap();
        let out = correlate(&f, &q).unwrap();
        assert!(out.values().iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn correlation_matches_definition() {
        let g = grid(6);
        let f = sample(g, 7);
        let q = Kernel::from_taps(3, (0..9).map(|i| i as f64 - 3.0).collect()).unwrap();
        let out = correlate(&f, &q).unwrap();
        for l1 in 0..6 {
            for l2 in 0..6 {
                let mut s = 0.0;
                for k1 in -1..=1isize {
                    for k2 in -1..=1isize {
                        s += q.get(k1, k2)
                            * f.get(wrap(l1 as isize + k1, 6), wrap(l2 as isize + k2, 6));
                    }
                }
                assert_abs_diff_eq!(out.get(l1, l2), s, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn even_or_oversized_kernels_rejected() {
        assert!(Kernel::zeros(4).is_err());
        let f = Field::zeros(Grid::new(3, 8, 1.0, 1.0).unwrap());
        assert!(correlate(&f, &Kernel::delta(5).unwrap()).is_err());
    }

    #[test]
    fn adjoints_satisfy_inner_product_identity() {
        let g = grid(7);
        let f = sample(g, 3);
        let y = sample(g, 4);
        let q =
            Kernel::from_taps(5, (0..25).map(|i| ((i * 7) % 11) as f64 - 5.0).collect()).unwrap();
        // <y, f ⊛ q> = <adjoint(y), f>
        let cf = correlate(&f, &q).unwrap();
        let lhs: f64 = y.values().iter().zip(cf.values()).map(|(a, b)| a * b).sum();
        let mut fb = vec![0.0; g.len()];
        correlate_adjoint_acc(y.values(), 7, 7, &q, 1.0, &mut fb);
        let rhs: f64 = fb.iter().zip(f.values()).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10);
        // <y, f ⊛ q> = <qbar, q>
        let mut qb = Kernel::zeros(5).unwrap();
        kernel_gradient_acc(y.values(), f.values(), 7, 7, 1.0, &mut qb);
        let rhs2: f64 = qb.taps().iter().zip(q.taps()).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(lhs, rhs2, epsilon = 1e-10);
    }

    #[test]
    fn restrict_subsamples() {
        let fine = Grid::periodic_square(128);
        let one = restrict(&Field::constant(fine, 1.0)).unwrap();
        assert_eq!(one.grid().nx, 32);
        assert!(one.values().iter().all(|&v| v == 1.0));

        let ramp = Field::from_fn(Grid::new(128, 128, 1.0, 1.0).unwrap(), |x, _| x);
        let r = restrict(&ramp).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                assert_eq!(r.get(i, j), 4.0 * i as f64);
            }
        }

        let s = restrict(&Field::from_fn(fine, |x, _| x.sin())).unwrap();
        let expect = Field::from_fn(Grid::periodic_square(32), |x, _| x.sin());
        for (a, b) in s.values().iter().zip(expect.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(s.grid().dx, expect.grid().dx, epsilon = 1e-15);
    }

    #[test]
    fn restrict_rejects_nondivisible() {
        assert!(restrict(&Field::zeros(Grid::new(30, 32, 1.0, 1.0).unwrap())).is_err());
    }

    #[test]
    fn relative_error_cases() {
        let g = grid(16);
        let truth = State::new(vec![Field::from_fn(g, |x, _| x.sin())], 0.0).unwrap();
        assert_eq!(relative_error(&truth, &truth).unwrap(), 0.0);

        let mean = truth.components[0].mean();
        let flat = State::new(vec![Field::constant(g, mean)], 0.0).unwrap();
        assert_abs_diff_eq!(relative_error(&truth, &flat).unwrap(), 1.0, epsilon = 1e-14);

        let zero = State::new(vec![Field::zeros(g)], 0.0).unwrap();
        // Σ sin² / Σ (sin − mean)² with mean of sin over a full period = 0.
        let direct: f64 = truth.components[0].values().iter().map(|v| v * v).sum();
        assert!(mean.abs() < 1e-15);
        assert_abs_diff_eq!(
            relative_error(&truth, &zero).unwrap(),
            direct / direct,
            epsilon = 1e-12
        );

        let constant = State::new(vec![Field::constant(g, 2.0)], 0.0).unwrap();
        assert!(matches!(
            relative_error(&constant, &truth),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn relative_error_invariant_under_common_offset() {
        let g = grid(12);
        let t = sample(g, 11);
        let p = sample(g, 12);
        let e0 = relative_error(
            &State::new(vec![t.clone()], 0.0).unwrap(),
            &State::new(vec![p.clone()], 0.0).unwrap(),
        )
        .unwrap();
        let e1 = relative_error(
            &State::new(vec![t.map(|v| v + 4.25)], 0.0).unwrap(),
            &State::new(vec![p.map(|v| v + 4.25)], 0.0).unwrap(),
        )
        .unwrap();
        assert_abs_diff_eq!(e0, e1, epsilon = 1e-12 * e0);
    }
}
