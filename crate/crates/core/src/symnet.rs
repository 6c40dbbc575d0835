//! Symbolic network `SymNet_m^k`.
//!
//! Hidden layer `i` (1-based) sees the `m` inputs plus the `i − 1` products
//! produced so far, forms two affine combinations `(η_i, ξ_i)` of them and
//! appends `f_i = η_i · ξ_i`. The output is affine in all `m + k` values.
//! Since every unit is a product of two affine forms, the learned function is
//! a polynomial that can be read out exactly.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::moments::{huber, huber_grad};

#[derive(Clone, Debug, PartialEq)]
pub struct HiddenLayer {
    /// Two rows of length `width`, row-major.
    pub w: Vec<f64>,
    pub b: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymNetParams {
    m: usize,
    hidden: Vec<HiddenLayer>,
    out_w: Vec<f64>,
    out_b: f64,
}

impl SymNetParams {
    pub fn zeros(m: usize, k: usize) -> Self {
        let hidden = (0..k)
            .map(|i| HiddenLayer {
                w: vec![0.0; 2 * (m + i)],
                b: [0.0; 2],
            })
            .collect();
        SymNetParams {
            m,
            hidden,
            out_w: vec![0.0; m + k],
            out_b: 0.0,
        }
    }

    /// `Σ_{i=1..k} [2(m+i−1) + 2] + (m + k + 1)`.
    pub fn param_count_for(m: usize, k: usize) -> usize {
        (1..=k).map(|i| 2 * (m + i - 1) + 2).sum::<usize>() + m + k + 1
    }

    pub fn n_inputs(&self) -> usize {
        self.m
    }

    pub fn depth(&self) -> usize {
        self.hidden.len()
    }

    pub fn param_count(&self) -> usize {
        Self::param_count_for(self.m, self.depth())
    }

    pub fn hidden(&self) -> &[HiddenLayer] {
        &self.hidden
    }

    pub fn hidden_mut(&mut self) -> &mut [HiddenLayer] {
        &mut self.hidden
    }

    pub fn output_weights(&self) -> &[f64] {
        &self.out_w
    }

    pub fn output_weights_mut(&mut self) -> &mut [f64] {
        &mut self.out_w
    }

    pub fn output_bias(&self) -> f64 {
        self.out_b
    }

    pub fn set_output_bias(&mut self, b: f64) {
        self.out_b = b;
    }

    /// Flat parameter order: per hidden layer `W` (row-major) then `b`, then
    /// the output weights and bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.hidden {
            v.extend_from_slice(&l.w);
            v.extend_from_slice(&l.b);
        }
        v.extend_from_slice(&self.out_w);
        v.push(self.out_b);
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.param_count() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                v.len()
            )));
        }
        let mut p = 0;
        for l in &mut self.hidden {
            let n = l.w.len();
            l.w.copy_from_slice(&v[p..p + n]);
            p += n;
            l.b = [v[p], v[p + 1]];
            p += 2;
        }
        let n = self.out_w.len();
        self.out_w.copy_from_slice(&v[p..p + n]);
        self.out_b = v[p + n];
        Ok(())
    }

    pub fn from_flat(m: usize, k: usize, v: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(m, k);
        p.set_flat(v)?;
        Ok(p)
    }

    /// Scratch length for [`Self::eval_traced`]: `m + k` activations followed
    /// by the `2k` affine forms.
    pub fn trace_len(&self) -> usize {
        self.m + 3 * self.depth()
    }

    /// Evaluates the network, recording activations in `trace`.
    #[inline]
    pub(crate) fn eval_traced(&self, x: &[f64], trace: &mut [f64]) -> f64 {
        let m = self.m;
        let k = self.depth();
        let (z, ab) = trace.split_at_mut(m + k);
        z[..m].copy_from_slice(x);
        for (i, l) in self.hidden.iter().enumerate() {
            let w = m + i;
            let (r0, r1) = l.w.split_at(w);
            let mut eta = l.b[0];
            let mut xi = l.b[1];
            for c in 0..w {
                eta += r0[c] * z[c];
                xi += r1[c] * z[c];
            }
            ab[2 * i] = eta;
            ab[2 * i + 1] = xi;
            z[w] = eta * xi;
        }
        self.out_b
            + self
                .out_w
                .iter()
                .zip(z.iter())
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    /// Reverse pass for one evaluation with output adjoint `gbar`.
    ///
    /// Adds `gbar · ∂F/∂θ` into `grad` (flat order) when given, and writes
    /// `gbar · ∂F/∂x` into `xbar`. `zbar` is scratch of length `m + k`.
    #[inline]
    pub(crate) fn backward_traced(
        &self,
        trace: &[f64],
        gbar: f64,
        grad: Option<&mut [f64]>,
        xbar: &mut [f64],
        zbar: &mut [f64],
    ) {
        let m = self.m;
        let k = self.depth();
        let (z, ab) = trace.split_at(m + k);
        for (zb, w) in zbar.iter_mut().zip(&self.out_w) {
            *zb = gbar * w;
        }
        match grad {
            Some(grad) => {
                let out_off = grad.len() - (m + k + 1);
                for (g, zv) in grad[out_off..out_off + m + k].iter_mut().zip(z) {
                    *g += gbar * zv;
                }
                grad[out_off + m + k] += gbar;
                let mut off = out_off;
                for i in (0..k).rev() {
                    let w = m + i;
                    off -= 2 * w + 2;
                    let fbar = zbar[w];
                    if fbar == 0.0 {
                        continue;
                    }
                    let eta_bar = fbar * ab[2 * i + 1];
                    let xi_bar = fbar * ab[2 * i];
                    let l = &self.hidden[i];
                    let (r0, r1) = l.w.split_at(w);
                    let (g0, rest) = grad[off..off + 2 * w + 2].split_at_mut(w);
                    let (g1, gb) = rest.split_at_mut(w);
                    for c in 0..w {
                        g0[c] += eta_bar * z[c];
                        g1[c] += xi_bar * z[c];
                        zbar[c] += eta_bar * r0[c] + xi_bar * r1[c];
                    }
                    gb[0] += eta_bar;
                    gb[1] += xi_bar;
                }
            }
            None => {
                for i in (0..k).rev() {
                    let w = m + i;
                    let fbar = zbar[w];
                    if fbar == 0.0 {
                        continue;
                    }
                    let eta_bar = fbar * ab[2 * i + 1];
                    let xi_bar = fbar * ab[2 * i];
                    let (r0, r1) = self.hidden[i].w.split_at(w);
                    for c in 0..w {
                        zbar[c] += eta_bar * r0[c] + xi_bar * r1[c];
                    }
                }
            }
        }
        xbar.copy_from_slice(&zbar[..m]);
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let mut trace = vec![0.0; self.trace_len()];
        Ok(self.eval_traced(x, &mut trace))
    }

    /// `∂F/∂x` at `x`.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut trace = vec![0.0; self.trace_len()];
        self.eval_traced(x, &mut trace);
        let mut xbar = vec![0.0; self.m];
        let mut zbar = vec![0.0; self.m + self.depth()];
        self.backward_traced(&trace, 1.0, None, &mut xbar, &mut zbar);
        Ok(xbar)
    }

    /// `∂F/∂θ` at `x`, in flat order.
    pub fn param_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut trace = vec![0.0; self.trace_len()];
        self.eval_traced(x, &mut trace);
        let mut grad = vec![0.0; self.param_count()];
        let mut xbar = vec![0.0; self.m];
        let mut zbar = vec![0.0; self.m + self.depth()];
        self.backward_traced(&trace, 1.0, Some(&mut grad), &mut xbar, &mut zbar);
        Ok(grad)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.m {
            return Err(Error::shape(format!(
                "SymNet expects {} inputs, got {}",
                self.m,
                x.len()
            )));
        }
        Ok(())
    }

    /// Floating-point operations per evaluation: `4(m+i−1) + 1` per hidden
    /// layer (two affine forms and one product), `2(m+k)` for the output.
    pub fn flop_count(&self) -> usize {
        let m = self.m;
        (0..self.depth()).map(|i| 4 * (m + i) + 1).sum::<usize>() + 2 * (m + self.depth())
    }

    /// Expands the network into an exact polynomial in its `m` inputs.
    pub fn to_polynomial(&self) -> Polynomial {
        self.to_polynomial_pruned(0.0)
    }

    /// Like [`Self::to_polynomial`], but drops monomials with
    /// `|coefficient| <= tol` after every product. `tol = 0` keeps all
    /// nonzero terms. Dense deep networks expand combinatorially, so a small
    /// positive tolerance is needed for trained models.
    pub fn to_polynomial_pruned(&self, tol: f64) -> Polynomial {
        let m = self.m;
        let mut z: Vec<Polynomial> = (0..m).map(|i| Polynomial::variable(m, i)).collect();
        for l in &self.hidden {
            let w = z.len();
            let eta = Polynomial::affine(&z, &l.w[..w], l.b[0]);
            let xi = Polynomial::affine(&z, &l.w[w..], l.b[1]);
            let mut f = eta.mul(&xi);
            f.prune(tol);
            z.push(f);
        }
        let mut out = Polynomial::affine(&z, &self.out_w, self.out_b);
        out.prune(0.0);
        out
    }

    /// Like [`to_polynomial_pruned`](Self::to_polynomial_pruned), but keeps
    /// at most `max_terms` terms in every intermediate polynomial by
    /// dropping the smallest ones. The returned cutoff is the largest
    /// magnitude dropped anywhere (at least `tol`), so the expansion is exact
    /// down to that level of intermediate terms.
    pub fn expand(&self, tol: f64, max_terms: usize) -> Expansion {
        let m = self.m;
        let mut cutoff = tol;
        let mut z: Vec<Polynomial> = (0..m).map(|i| Polynomial::variable(m, i)).collect();
        for l in &self.hidden {
            let w = z.len();
            let mut eta = Polynomial::affine(&z, &l.w[..w], l.b[0]);
            let mut xi = Polynomial::affine(&z, &l.w[w..], l.b[1]);
            cutoff = cutoff
                .max(eta.truncate(max_terms))
                .max(xi.truncate(max_terms));
            let mut f = eta.mul(&xi);
            f.prune(tol);
            cutoff = cutoff.max(f.truncate(max_terms));
            z.push(f);
        }
        let mut polynomial = Polynomial::affine(&z, &self.out_w, self.out_b);
        polynomial.prune(0.0);
        Expansion { polynomial, cutoff }
    }

    pub fn to_record(&self) -> SymNetRecord {
        let mut layers: Vec<LayerRecord> = self
            .hidden
            .iter()
            .map(|l| {
                let w = l.w.len() / 2;
                LayerRecord {
                    w: vec![l.w[..w].to_vec(), l.w[w..].to_vec()],
                    b: l.b.to_vec(),
                }
            })
            .collect();
        layers.push(LayerRecord {
            w: vec![self.out_w.clone()],
            b: vec![self.out_b],
        });
        SymNetRecord {
            m: self.m,
            k: self.depth(),
            layers,
        }
    }

    pub fn from_record(rec: &SymNetRecord) -> Result<Self> {
        let (m, k) = (rec.m, rec.k);
        if rec.layers.len() != k + 1 {
            return Err(Error::shape(format!(
                "expected {} layers, got {}",
                k + 1,
                rec.layers.len()
            )));
        }
        let mut p = Self::zeros(m, k);
        for (i, l) in rec.layers[..k].iter().enumerate() {
            let w = m + i;
            if l.w.len() != 2 || l.w.iter().any(|r| r.len() != w) || l.b.len() != 2 {
                return Err(Error::shape(format!(
                    "hidden layer {} must have W 2x{w} and b of length 2",
                    i + 1
                )));
            }
            p.hidden[i].w = [l.w[0].clone(), l.w[1].clone()].concat();
            p.hidden[i].b = [l.b[0], l.b[1]];
        }
        let out = &rec.layers[k];
        if out.w.len() != 1 || out.w[0].len() != m + k || out.b.len() != 1 {
            return Err(Error::shape(format!(
                "output layer must have W 1x{} and one bias",
                m + k
            )));
        }
        p.out_w = out.w[0].clone();
        p.out_b = out.b[0];
        Ok(p)
    }

    /// Builds parameters that reproduce `Σ c · Π x_v` exactly.
    ///
    /// Each term lists its variable indices with repetition (`[0, 0, 3]` is
    /// `x_0² x_3`). A degree-`d` term uses `d − 1` hidden layers, chaining
    /// products left to right; constants and linear terms go straight to the
    /// output. Errors when the total multiplication count exceeds `k`.
    pub fn represent(m: usize, k: usize, terms: &[(Vec<usize>, f64)]) -> Result<Self> {
        let mut p = Self::zeros(m, k);
        let mut layer = 0;
        for (vars, coef) in terms {
            if let Some(&v) = vars.iter().find(|&&v| v >= m) {
                return Err(Error::invalid(format!(
                    "variable index {v} out of range for {m} inputs"
                )));
            }
            match vars.len() {
                0 => p.out_b += coef,
                1 => p.out_w[vars[0]] += coef,
                d => {
                    if layer + d - 1 > k {
                        return Err(Error::invalid(format!(
                            "polynomial needs more than {k} multiplications"
                        )));
                    }
                    let mut prev = vars[0];
                    for &v in &vars[1..] {
                        let w = m + layer;
                        let l = &mut p.hidden[layer];
                        l.w[prev] = 1.0;
                        l.w[w + v] = 1.0;
                        prev = w;
                        layer += 1;
                    }
                    p.out_w[prev] += coef;
                }
            }
        }
        Ok(p)
    }
}

/// JSON form: `{m, k, layers: [{W, b}, …]}`, the last layer being the output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymNetRecord {
    pub m: usize,
    pub k: usize,
    pub layers: Vec<LayerRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// `Σ ℓ₁ˢ(p)` over all weights and biases.
pub fn symnet_sparsity_loss<'a>(nets: impl IntoIterator<Item = &'a SymNetParams>, s: f64) -> f64 {
    nets.into_iter()
        .map(|n| n.to_flat().iter().map(|&p| huber(p, s)).sum::<f64>())
        .sum()
}

pub(crate) fn symnet_sparsity_grad(net: &SymNetParams, s: f64) -> Vec<f64> {
    net.to_flat().iter().map(|&p| huber_grad(p, s)).collect()
}

/// Exponent vector of a monomial.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Monomial(pub Vec<u16>);

impl Monomial {
    pub fn one(nvars: usize) -> Self {
        Monomial(vec![0; nvars])
    }

    pub fn degree(&self) -> usize {
        self.0.iter().map(|&e| e as usize).sum()
    }

    /// Builds a monomial from variable indices with repetition.
    pub fn from_vars(nvars: usize, vars: &[usize]) -> Self {
        let mut e = vec![0; nvars];
        for &v in vars {
            e[v] += 1;
        }
        Monomial(e)
    }

    fn mul(&self, other: &Monomial) -> Monomial {
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .map(|(&e, &v)| v.powi(e as i32))
            .product()
    }

    /// `u*u_x`, `u^2*v`, or `1` for the constant monomial.
    pub fn display(&self, labels: &[String]) -> String {
        let parts: Vec<String> = self
            .0
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > 0)
            .map(|(i, &e)| {
                if e == 1 {
                    labels[i].clone()
                } else {
                    format!("{}^{e}", labels[i])
                }
            })
            .collect();
        if parts.is_empty() {
            "1".into()
        } else {
            parts.join("*")
        }
    }
}

/// Sparse polynomial with monomials in a fixed (sorted) order.
/// A budgeted expansion: intermediate terms at or below `cutoff` were
/// dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct Expansion {
    pub polynomial: Polynomial,
    pub cutoff: f64,
}

/// Default per-polynomial term budget for readouts of trained networks.
pub const DEFAULT_MAX_TERMS: usize = 2048;

#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn variable(nvars: usize, i: usize) -> Self {
        let mut p = Self::zero(nvars);
        p.terms.insert(Monomial::from_vars(nvars, &[i]), 1.0);
        p
    }

    fn affine(z: &[Polynomial], w: &[f64], b: f64) -> Polynomial {
        let nvars = z[0].nvars;
        let mut acc: HashMap<Monomial, f64> = HashMap::new();
        if b != 0.0 {
            acc.insert(Monomial::one(nvars), b);
        }
        for (p, &c) in z.iter().zip(w) {
            if c == 0.0 {
                continue;
            }
            for (mono, v) in &p.terms {
                *acc.entry(mono.clone()).or_insert(0.0) += c * v;
            }
        }
        Polynomial {
            nvars,
            terms: acc.into_iter().collect(),
        }
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut acc: HashMap<Monomial, f64> =
            HashMap::with_capacity(self.terms.len() * other.terms.len());
        for (ma, a) in &self.terms {
            for (mb, b) in &other.terms {
                *acc.entry(ma.mul(mb)).or_insert(0.0) += a * b;
            }
        }
        Polynomial {
            nvars: self.nvars,
            terms: acc.into_iter().collect(),
        }
    }

    /// Removes terms with `|c| <= tol` (exact zeros always go).
    pub fn prune(&mut self, tol: f64) {
        self.terms.retain(|_, c| *c != 0.0 && c.abs() > tol);
    }

    /// Keeps the `max_terms` largest-magnitude terms and returns the largest
    /// dropped magnitude (0 if nothing was dropped).
    fn truncate(&mut self, max_terms: usize) -> f64 {
        if self.terms.len() <= max_terms {
            return 0.0;
        }
        let mut mags: Vec<f64> = self.terms.values().map(|c| c.abs()).collect();
        let k = mags.len() - max_terms - 1;
        let (_, &mut threshold, _) = mags.select_nth_unstable_by(k, f64::total_cmp);
        self.terms.retain(|_, c| c.abs() > threshold);
        threshold
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn coefficient(&self, mono: &Monomial) -> f64 {
        self.terms.get(mono).copied().unwrap_or(0.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(m, c)| c * m.eval(x)).sum()
    }

    /// Terms ordered by decreasing magnitude, skipping `|c| < threshold`.
    pub fn display(&self, labels: &[String], threshold: f64) -> String {
        let mut terms: Vec<(&Monomial, f64)> =
            self.terms().filter(|(_, c)| c.abs() >= threshold).collect();
        terms.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| b.0.cmp(a.0)));
        if terms.is_empty() {
            return "0".into();
        }
        let mut s = String::new();
        for (i, (mono, c)) in terms.iter().enumerate() {
            let sign = if *c < 0.0 { "-" } else { "+" };
            if i == 0 {
                if *c < 0.0 {
                    s.push('-');
                }
            } else {
                let _ = write!(s, " {sign} ");
            }
            let body = mono.display(labels);
            if body == "1" {
                let _ = write!(s, "{:.4}", c.abs());
            } else {
                let _ = write!(s, "{:.4}*{body}", c.abs());
            }
        }
        s
    }

    /// `monomial,coefficient` rows with a header, in monomial order.
    pub fn to_csv(&self, labels: &[String]) -> String {
        let mut s = String::from("monomial,coefficient\n");
        for (mono, c) in self.terms() {
            let _ = writeln!(s, "{},{:e}", mono.display(labels), c);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn alg1_params() -> SymNetParams {
        // inputs (u, u_x, u_y, v, v_x, v_y)
        let mut p = SymNetParams::zeros(6, 2);
        p.hidden[0].w[0] = 1.0; // η1 = u
        p.hidden[0].w[6 + 1] = 1.0; // ξ1 = u_x
        p.hidden[1].w[2] = 1.0; // η2 = u_y
        p.hidden[1].w[7 + 3] = 1.0; // ξ2 = v
        p.out_w[6] = -1.0;
        p.out_w[7] = -1.0;
        p
    }

    fn labels6() -> Vec<String> {
        ["u", "u_x", "u_y", "v", "v_x", "v_y"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn random_params(m: usize, k: usize, seed: u64) -> SymNetParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = SymNetParams::param_count_for(m, k);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        SymNetParams::from_flat(m, k, &v).unwrap()
    }

    #[test]
    fn burgers_inviscid_weights() {
        let p = alg1_params();
        assert_eq!(p.forward(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(), -14.0);
        let poly = p.to_polynomial();
        assert_eq!(poly.len(), 2);
        assert_eq!(poly.coefficient(&Monomial::from_vars(6, &[0, 1])), -1.0);
        assert_eq!(poly.coefficient(&Monomial::from_vars(6, &[2, 3])), -1.0);
        assert_eq!(
            poly.display(&labels6(), 1e-3),
            "-1.0000*u*u_x - 1.0000*u_y*v"
        );
    }

    #[test]
    fn zero_params() {
        let p = SymNetParams::zeros(4, 3);
        assert_eq!(p.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), 0.0);
        assert!(p.to_polynomial().is_empty());
        assert_eq!(symnet_sparsity_loss([&p], 0.001), 0.0);
    }

    #[test]
    fn single_layer_square() {
        let mut p = SymNetParams::zeros(1, 1);
        p.hidden[0].w = vec![1.0, 1.0];
        p.out_w = vec![0.0, 1.0];
        for x in [-2.0, 0.3, 5.0] {
            assert_abs_diff_eq!(p.forward(&[x]).unwrap(), x * x, epsilon = 1e-14);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        assert!(SymNetParams::zeros(3, 2).forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn param_counts() {
        assert_eq!(SymNetParams::param_count_for(12, 5), 168);
        assert_eq!(2 * SymNetParams::param_count_for(12, 5), 336);
        for m in 1..=20 {
            for k in 1..=20 {
                let p = SymNetParams::zeros(m, k);
                assert_eq!(p.to_flat().len(), SymNetParams::param_count_for(m, k));
                let direct: usize = (1..=k).map(|i| 2 * (m + i - 1) + 2).sum::<usize>() + m + k + 1;
                assert_eq!(p.param_count(), direct);
            }
        }
    }

    #[test]
    fn flop_count_within_bound() {
        for m in 1..=20 {
            for k in 1..=20 {
                let p = SymNetParams::zeros(m, k);
                assert!(p.flop_count() <= 8 * k * (m + k), "m={m} k={k}");
            }
        }
    }

    #[test]
    fn polynomial_matches_forward_random() {
        let p = random_params(3, 2, 42);
        let poly = p.to_polynomial();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = p.forward(&x).unwrap();
            let b = poly.eval(&x);
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn sparsity_loss_values() {
        let mut p = SymNetParams::zeros(1, 1);
        p.out_b = 0.001;
        assert_abs_diff_eq!(symnet_sparsity_loss([&p], 0.001), 0.0005, epsilon = 1e-18);
        p.out_b = 1.0;
        assert_abs_diff_eq!(symnet_sparsity_loss([&p], 0.001), 0.9995, epsilon = 1e-15);
    }

    #[test]
    fn representability_constructive() {
        // −u·u_x − v·u_y with k = 2
        let p = SymNetParams::represent(6, 2, &[(vec![0, 1], -1.0), (vec![3, 2], -1.0)]).unwrap();
        assert_eq!(p.forward(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(), -14.0);
        // u²v with k = 2
        let q = SymNetParams::represent(6, 2, &[(vec![0, 0, 3], 1.0)]).unwrap();
        let poly = q.to_polynomial();
        assert_eq!(poly.len(), 1);
        assert_eq!(poly.coefficient(&Monomial::from_vars(6, &[0, 0, 3])), 1.0);
        assert!(SymNetParams::represent(6, 1, &[(vec![0, 0, 3], 1.0)]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let p = random_params(4, 3, 5);
        let x = [0.3, -0.7, 1.1, 0.2];
        let g = p.param_gradient(&x).unwrap();
        let flat = p.to_flat();
        for i in 0..flat.len() {
            let h = 1e-6;
            let mut a = flat.clone();
            a[i] += h;
            let mut b = flat.clone();
            b[i] -= h;
            let fa = SymNetParams::from_flat(4, 3, &a)
                .unwrap()
                .forward(&x)
                .unwrap();
            let fb = SymNetParams::from_flat(4, 3, &b)
                .unwrap()
                .forward(&x)
                .unwrap();
            assert_abs_diff_eq!(g[i], (fa - fb) / (2.0 * h), epsilon = 1e-7);
        }
        let gx = p.input_gradient(&x).unwrap();
        for i in 0..4 {
            let h = 1e-6;
            let mut a = x;
            a[i] += h;
            let mut b = x;
            b[i] -= h;
            let fd = (p.forward(&a).unwrap() - p.forward(&b).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(gx[i], fd, epsilon = 1e-7);
        }
    }

    #[test]
    fn record_round_trip() {
        let p = random_params(5, 3, 9);
        let json = serde_json::to_string(&p.to_record()).unwrap();
        assert!(json.contains("\"W\""));
        let back = SymNetParams::from_record(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
