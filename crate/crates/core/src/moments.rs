//! Moment matrices of correlation kernels and moment-constrained filters.
//!
//! For an `N×N` kernel `q` the moment matrix is
//! `m[i, j] = 1/(i! j!) Σ k1^i k2^j q[k1, k2]`, i.e. `M = A Q Aᵀ` with
//! `A[i, k] = k^i / i!`. `A` is a Vandermonde matrix on the integer nodes
//! `-(N-1)/2 ..= (N-1)/2`, so the map is invertible and its inverse is
//! assembled from the Lagrange basis on those nodes.
//!
//! A filter approximating `∂^{i*+j*}/∂x^{i*}∂y^{j*}` with accuracy order `a`
//! fixes every moment with `i + j < i* + j* + a` (1 at the target, 0
//! elsewhere); the remaining moments are the trainable variables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{correlate, Field, Kernel};

/// Moment matrix `m[i, j]`, `i, j = 0..N`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl MomentMatrix {
    pub fn zeros(size: usize) -> Self {
        MomentMatrix {
            size,
            entries: vec![0.0; size * size],
        }
    }

    pub fn from_entries(size: usize, entries: Vec<f64>) -> Result<Self> {
        if size % 2 == 0 || entries.len() != size * size {
            return Err(Error::shape(format!(
                "need {} entries for odd size {size}",
                size * size
            )));
        }
        Ok(MomentMatrix { size, entries })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.size + j] = v;
    }
}

/// The linear map between kernels and moment matrices for one kernel size.
#[derive(Clone, Debug)]
pub struct MomentTransform {
    size: usize,
    /// `A[i, k] = k^i / i!`, row-major.
    forward: Vec<f64>,
    /// `A⁻¹[k, i]`, row-major.
    inverse: Vec<f64>,
}

impl MomentTransform {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::invalid(format!(
                "kernel size must be odd, got {size}"
            )));
        }
        let r = (size / 2) as i64;
        let nodes: Vec<i64> = (-r..=r).collect();
        let mut forward = vec![0.0; size * size];
        let mut fact = 1.0;
        for i in 0..size {
            if i > 0 {
                fact *= i as f64;
            }
            for (kk, &k) in nodes.iter().enumerate() {
                forward[i * size + kk] = (k as f64).powi(i as i32) / fact;
            }
        }
        // A⁻¹[k, i] = i! · [t^i] L_k(t), with L_k the Lagrange basis polynomial
        // of node k. Numerator coefficients are integers, so this is exact up
        // to the final division.
        let mut inverse = vec![0.0; size * size];
        for (kk, &k) in nodes.iter().enumerate() {
            let mut coeffs: Vec<i64> = vec![1];
            let mut denom: i64 = 1;
            for &j in nodes.iter().filter(|&&j| j != k) {
                let mut next = vec![0i64; coeffs.len() + 1];
                for (p, &c) in coeffs.iter().enumerate() {
                    next[p + 1] += c;
                    next[p] -= j * c;
                }
                coeffs = next;
                denom *= k - j;
            }
            let mut fact = 1.0;
            for (i, &c) in coeffs.iter().enumerate() {
                if i > 0 {
                    fact *= i as f64;
                }
                inverse[kk * size + i] = fact * c as f64 / denom as f64;
            }
        }
        Ok(MomentTransform {
            size,
            forward,
            inverse,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// `out = L · X · Lᵀ` for square row-major `N×N` matrices.
    fn sandwich(l: &[f64], x: &[f64], n: usize) -> Vec<f64> {
        let mut tmp = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                tmp[a * n + b] = (0..n).map(|c| l[a * n + c] * x[c * n + b]).sum();
            }
        }
        let mut out = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                out[a * n + b] = (0..n).map(|c| tmp[a * n + c] * l[b * n + c]).sum();
            }
        }
        out
    }

    /// `out = Lᵀ · X · L`.
    fn sandwich_t(l: &[f64], x: &[f64], n: usize) -> Vec<f64> {
        let mut lt = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                lt[a * n + b] = l[b * n + a];
            }
        }
        Self::sandwich(&lt, x, n)
    }

    pub fn moments(&self, q: &Kernel) -> Result<MomentMatrix> {
        self.check(q.size())?;
        Ok(MomentMatrix {
            size: self.size,
            entries: Self::sandwich(&self.forward, q.taps(), self.size),
        })
    }

    pub fn kernel(&self, m: &MomentMatrix) -> Result<Kernel> {
        self.check(m.size())?;
        Kernel::from_taps(
            self.size,
            Self::sandwich(&self.inverse, &m.entries, self.size),
        )
    }

    /// Pulls a kernel-space gradient back to moment space: `M̄ = A⁻ᵀ Q̄ A⁻¹`.
    pub fn pullback(&self, qbar: &Kernel) -> Result<MomentMatrix> {
        self.check(qbar.size())?;
        Ok(MomentMatrix {
            size: self.size,
            entries: Self::sandwich_t(&self.inverse, qbar.taps(), self.size),
        })
    }

    fn check(&self, size: usize) -> Result<()> {
        if size != self.size {
            return Err(Error::shape(format!(
                "transform is for size {}, got {size}",
                self.size
            )));
        }
        Ok(())
    }
}

/// `m[i, j] = 1/(i! j!) Σ k1^i k2^j q[k1, k2]`.
pub fn moment_matrix(q: &Kernel) -> MomentMatrix {
    MomentTransform::new(q.size())
        .and_then(|t| t.moments(q))
        .expect("kernel sizes are always odd")
}

/// Inverse of [`moment_matrix`].
pub fn filter_from_moments(m: &MomentMatrix) -> Kernel {
    MomentTransform::new(m.size())
        .and_then(|t| t.kernel(m))
        .expect("moment matrix sizes are always odd")
}

/// Target derivative order `(i*, j*)`: the filter approximates `∂^{i*}_x ∂^{j*}_y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DerivOrder {
    pub x: usize,
    pub y: usize,
}

impl DerivOrder {
    pub const fn new(x: usize, y: usize) -> Self {
        DerivOrder { x, y }
    }

    pub fn total(&self) -> usize {
        self.x + self.y
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MaskEntry {
    Fixed(f64),
    Free,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintMask {
    size: usize,
    order: DerivOrder,
    accuracy: usize,
}

impl ConstraintMask {
    pub fn new(size: usize, order: DerivOrder, accuracy: usize) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::invalid(format!(
                "filter size must be odd, got {size}"
            )));
        }
        if accuracy < 1 {
            return Err(Error::invalid("accuracy order must be at least 1"));
        }
        if order.x >= size || order.y >= size {
            return Err(Error::invalid(format!(
                "order ({}, {}) does not fit a {size}x{size} filter",
                order.x, order.y
            )));
        }
        Ok(ConstraintMask {
            size,
            order,
            accuracy,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn order(&self) -> DerivOrder {
        self.order
    }

    pub fn accuracy(&self) -> usize {
        self.accuracy
    }

    pub fn entry(&self, i: usize, j: usize) -> MaskEntry {
        if i + j < self.order.total() + self.accuracy {
            MaskEntry::Fixed(if (i, j) == (self.order.x, self.order.y) {
                1.0
            } else {
                0.0
            })
        } else {
            MaskEntry::Free
        }
    }

    pub fn fixed_count(&self) -> usize {
        self.size * self.size - self.free_count()
    }

    pub fn free_count(&self) -> usize {
        self.free_positions().count()
    }

    /// Free `(i, j)` positions in row-major order; this is the parameter order.
    pub fn free_positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.size;
        (0..n * n)
            .map(move |p| (p / n, p % n))
            .filter(move |&(i, j)| self.entry(i, j) == MaskEntry::Free)
    }

    pub fn assemble(&self, free: &[f64]) -> Result<MomentMatrix> {
        if free.len() != self.free_count() {
            return Err(Error::shape(format!(
                "mask has {} free entries, got {}",
                self.free_count(),
                free.len()
            )));
        }
        let mut m = MomentMatrix::zeros(self.size);
        let mut it = free.iter();
        for i in 0..self.size {
            for j in 0..self.size {
                let v = match self.entry(i, j) {
                    MaskEntry::Fixed(v) => v,
                    MaskEntry::Free => *it.next().expect("length checked"),
                };
                m.set(i, j, v);
            }
        }
        Ok(m)
    }

    /// Free entries of `m`, in parameter order.
    pub fn extract_free(&self, m: &MomentMatrix) -> Vec<f64> {
        self.free_positions().map(|(i, j)| m.get(i, j)).collect()
    }

    /// Whether `m` satisfies every fixed entry to within `tol`.
    pub fn is_satisfied_by(&self, m: &MomentMatrix, tol: f64) -> bool {
        (0..self.size).all(|i| {
            (0..self.size).all(|j| match self.entry(i, j) {
                MaskEntry::Fixed(v) => (m.get(i, j) - v).abs() <= tol,
                MaskEntry::Free => true,
            })
        })
    }
}

/// A kernel parameterized by the free entries of its constrained moment matrix.
#[derive(Clone, Debug)]
pub struct MomentFilter {
    mask: ConstraintMask,
    transform: MomentTransform,
    free: Vec<f64>,
    kernel: Kernel,
}

impl MomentFilter {
    pub fn new(mask: ConstraintMask, free: Vec<f64>) -> Result<Self> {
        let transform = MomentTransform::new(mask.size())?;
        let kernel = transform.kernel(&mask.assemble(&free)?)?;
        Ok(MomentFilter {
            mask,
            transform,
            free,
            kernel,
        })
    }

    /// Projects an arbitrary kernel onto the mask: fixed moments are
    /// overwritten, free moments are taken from the kernel.
    pub fn from_kernel(mask: ConstraintMask, q: &Kernel) -> Result<Self> {
        let transform = MomentTransform::new(mask.size())?;
        let free = mask.extract_free(&transform.moments(q)?);
        Self::new(mask, free)
    }

    pub fn mask(&self) -> &ConstraintMask {
        &self.mask
    }

    pub fn order(&self) -> DerivOrder {
        self.mask.order()
    }

    pub fn free(&self) -> &[f64] {
        &self.free
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn transform(&self) -> &MomentTransform {
        &self.transform
    }

    pub fn set_free(&mut self, free: &[f64]) -> Result<()> {
        let m = self.mask.assemble(free)?;
        self.kernel = self.transform.kernel(&m)?;
        self.free.copy_from_slice(free);
        Ok(())
    }

    pub fn moments(&self) -> MomentMatrix {
        self.mask
            .assemble(&self.free)
            .expect("free entries always match the mask")
    }

    /// Gradient with respect to the free moments given a kernel-space gradient.
    pub fn free_gradient(&self, qbar: &Kernel) -> Vec<f64> {
        let mbar = self.transform.pullback(qbar).expect("sizes match");
        self.mask.extract_free(&mbar)
    }

    /// Physical scaling `1 / (dx^{i*} dy^{j*})`.
    pub fn scale(&self, dx: f64, dy: f64) -> f64 {
        1.0 / (dx.powi(self.order().x as i32) * dy.powi(self.order().y as i32))
    }

    pub fn to_record(&self) -> FilterRecord {
        FilterRecord {
            size: self.mask.size(),
            target_order: [self.order().x, self.order().y],
            accuracy: self.mask.accuracy(),
            free_entries: self.free.clone(),
            derived_kernel: self.kernel.rows(),
        }
    }

    pub fn from_record(rec: &FilterRecord) -> Result<Self> {
        let mask = ConstraintMask::new(
            rec.size,
            DerivOrder::new(rec.target_order[0], rec.target_order[1]),
            rec.accuracy,
        )?;
        Self::new(mask, rec.free_entries.clone())
    }
}

/// JSON form of a filter. `derived_kernel` is informational; loading
/// regenerates it from the free entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterRecord {
    pub size: usize,
    pub target_order: [usize; 2],
    pub accuracy: usize,
    pub free_entries: Vec<f64>,
    pub derived_kernel: Vec<Vec<f64>>,
}

/// `correlate(f, q) / (dx^{i*} dy^{j*})`.
pub fn apply_derivative_operator(f: &Field, d: &MomentFilter) -> Result<Field> {
    let g = *f.grid();
    let scale = d.scale(g.dx, g.dy);
    Ok(correlate(f, d.kernel())?.map(|v| v * scale))
}

/// Huber-type penalty `ℓ₁ˢ`: `|x| − s/2` beyond the knee, `x²/(2s)` inside.
#[inline]
pub fn huber(x: f64, s: f64) -> f64 {
    let a = x.abs();
    if a > s {
        a - 0.5 * s
    } else {
        x * x / (2.0 * s)
    }
}

#[inline]
pub fn huber_grad(x: f64, s: f64) -> f64 {
    if x > s {
        1.0
    } else if x < -s {
        -1.0
    } else {
        x / s
    }
}

/// Sum of `ℓ₁ˢ` over every moment entry (fixed and free) of every filter.
pub fn moment_loss<'a>(filters: impl IntoIterator<Item = &'a MomentFilter>, s: f64) -> f64 {
    filters
        .into_iter()
        .map(|f| {
            f.moments()
                .entries()
                .iter()
                .map(|&m| huber(m, s))
                .sum::<f64>()
        })
        .sum()
}
