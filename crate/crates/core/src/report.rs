//! Identification tables and prediction-error curves.

use std::fmt::Write as _;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::relative_error;
use crate::model::{ModelSpec, PdeNetModel};
use crate::simulator::{derive_seed, generate_sample, PdeSpec, SamplePair, SystemKind};
use crate::symnet::{Monomial, Polynomial, SymNetParams, DEFAULT_MAX_TERMS};

/// Default pruning tolerance when expanding trained SymNets.
pub const DEFAULT_PRUNE_TOL: f64 = 1e-8;

/// Ground-truth right-hand side of one component as `(factors, coefficient)`
/// pairs, factors named by input label (`["u", "u_x"]` is `u·u_x`).
pub type TruthTerms = Vec<(Vec<&'static str>, f64)>;

/// Truth terms for each component of `system`.
pub fn truth_terms(system: &SystemKind) -> Vec<TruthTerms> {
    let transport =
        |cx: &'static str, cy: &'static str, cxx: &'static str, cyy: &'static str, nu| {
            vec![
                (vec!["u", cx], -1.0),
                (vec!["v", cy], -1.0),
                (vec![cxx], nu),
                (vec![cyy], nu),
            ]
        };
    match *system {
        SystemKind::Heat { c } => vec![vec![(vec!["u_xx"], c), (vec!["u_yy"], c)]],
        SystemKind::Burgers { nu } => vec![
            transport("u_x", "u_y", "u_xx", "u_yy", nu),
            transport("v_x", "v_y", "v_xx", "v_yy", nu),
        ],
        SystemKind::Rcd { nu, beta } => {
            let mut u = transport("u_x", "u_y", "u_xx", "u_yy", nu);
            u.extend([
                (vec!["u"], 1.0),
                (vec!["u", "u", "u"], -1.0),
                (vec!["u", "v", "v"], -1.0),
                (vec!["u", "u", "v"], beta),
                (vec!["v", "v", "v"], beta),
            ]);
            let mut v = transport("v_x", "v_y", "v_xx", "v_yy", nu);
            v.extend([
                (vec!["v"], 1.0),
                (vec!["u", "u", "v"], -1.0),
                (vec!["v", "v", "v"], -1.0),
                (vec!["u", "u", "u"], -beta),
                (vec!["u", "v", "v"], -beta),
            ]);
            vec![u, v]
        }
    }
}

fn monomial_of(labels: &[String], factors: &[&str]) -> Result<Monomial> {
    let vars = factors
        .iter()
        .map(|f| {
            labels
                .iter()
                .position(|l| l == f)
                .ok_or_else(|| Error::invalid(format!("model has no input named {f}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Monomial::from_vars(labels.len(), &vars))
}

/// A model whose SymNets reproduce the truth system exactly, with filters
/// at their finite-difference initialization.
pub fn exact_model(spec: &PdeSpec, mspec: &ModelSpec) -> Result<PdeNetModel> {
    let mspec = ModelSpec {
        components: spec.system.components(),
        dt: spec.snapshot_dt,
        ..mspec.clone()
    };
    let mut model = PdeNetModel::with_zero_symnets(spec.coarse_grid(), &mspec)?;
    let labels = model.input_labels();
    let m = labels.len();
    let k = mspec.symnet_depth;
    let idx = |name: &str| labels.iter().position(|l| l == name).expect("known label");
    match spec.system {
        SystemKind::Heat { .. } | SystemKind::Burgers { .. } => {
            for (net, terms) in model.symnets.iter_mut().zip(truth_terms(&spec.system)) {
                let t: Vec<(Vec<usize>, f64)> = terms
                    .iter()
                    .map(|(f, c)| (f.iter().map(|n| idx(n)).collect(), *c))
                    .collect();
                *net = SymNetParams::represent(m, k, &t)?;
            }
        }
        SystemKind::Rcd { nu, beta } => {
            if k < 5 {
                return Err(Error::invalid(
                    "the exact reaction-convection-diffusion model needs 5 hidden layers",
                ));
            }
            // z_m = u², z_{m+1} = v², z_{m+2} = A²·(±βv ∓ u), then the two
            // convection products.
            for (c, net) in model.symnets.iter_mut().enumerate() {
                let (own, other, ox, oy, oxx, oyy) = if c == 0 {
                    ("u", "v", "u_x", "u_y", "u_xx", "u_yy")
                } else {
                    ("v", "u", "v_x", "v_y", "v_xx", "v_yy")
                };
                let h = net.hidden_mut();
                let set =
                    |l: &mut crate::symnet::HiddenLayer, row: usize, i: usize, w: usize, v: f64| {
                        l.w[row * w + i] = v;
                    };
                set(&mut h[0], 0, idx("u"), m, 1.0);
                set(&mut h[0], 1, idx("u"), m, 1.0);
                set(&mut h[1], 0, idx("v"), m + 1, 1.0);
                set(&mut h[1], 1, idx("v"), m + 1, 1.0);
                set(&mut h[2], 0, m, m + 2, 1.0);
                set(&mut h[2], 0, m + 1, m + 2, 1.0);
                // u: A²(βv − u); v: A²(−βu − v)
                let sign = if c == 0 { 1.0 } else { -1.0 };
                set(&mut h[2], 1, idx(other), m + 2, sign * beta);
                set(&mut h[2], 1, idx(own), m + 2, -1.0);
                set(&mut h[3], 0, idx("u"), m + 3, 1.0);
                set(&mut h[3], 1, idx(ox), m + 3, 1.0);
                set(&mut h[4], 0, idx("v"), m + 4, 1.0);
                set(&mut h[4], 1, idx(oy), m + 4, 1.0);
                let out = net.output_weights_mut();
                out[idx(own)] = 1.0;
                out[idx(oxx)] = nu;
                out[idx(oyy)] = nu;
                out[m + 2] = 1.0;
                out[m + 3] = -1.0;
                out[m + 4] = -1.0;
            }
        }
    }
    Ok(model)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TermRow {
    pub term: String,
    pub truth: f64,
    pub recovered: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComponentIdentification {
    pub component: String,
    /// Full recovered right-hand side, largest terms first.
    pub equation: String,
    pub aligned: Vec<TermRow>,
    /// Recovered monomials absent from the truth, largest first.
    pub remainder: Vec<(String, f64)>,
    /// Intermediate expansion terms at or below this magnitude were dropped.
    pub cutoff: f64,
}

impl ComponentIdentification {
    pub fn max_remainder(&self) -> f64 {
        self.remainder
            .iter()
            .map(|(_, c)| c.abs())
            .fold(0.0, f64::max)
    }

    pub fn coefficient(&self, term: &str) -> Option<f64> {
        self.aligned
            .iter()
            .find(|r| r.term == term)
            .map(|r| r.recovered)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub system: String,
    pub components: Vec<ComponentIdentification>,
}

impl IdentificationReport {
    pub fn max_remainder(&self) -> f64 {
        self.components
            .iter()
            .map(ComponentIdentification::max_remainder)
            .fold(0.0, f64::max)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "system: {}", self.system);
        for c in &self.components {
            let _ = writeln!(s, "\n{}_t = {}", c.component, c.equation);
            let _ = writeln!(s, "  {:<14} {:>10} {:>12}", "term", "truth", "recovered");
            for r in &c.aligned {
                let _ = writeln!(
                    s,
                    "  {:<14} {:>10.4} {:>12.6}",
                    r.term, r.truth, r.recovered
                );
            }
            match c.remainder.first() {
                Some((t, v)) => {
                    let _ = writeln!(
                        s,
                        "  remainder: {} terms, largest {v:.3e} ({t})",
                        c.remainder.len()
                    );
                }
                None => {
                    let _ = writeln!(s, "  remainder: none");
                }
            }
            let _ = writeln!(s, "  expansion cutoff: {:.1e}", c.cutoff);
        }
        s
    }

    /// `component,term,truth,recovered` rows; remainder terms have truth 0.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("component,term,truth,recovered\n");
        for c in &self.components {
            for r in &c.aligned {
                let _ = writeln!(
                    s,
                    "{},{},{},{:e}",
                    c.component, r.term, r.truth, r.recovered
                );
            }
            for (t, v) in &c.remainder {
                let _ = writeln!(s, "{},{},0,{:e}", c.component, t, v);
            }
        }
        s
    }
}

/// Expands each SymNet (dropping intermediate terms at or below `prune_tol`,
/// more if the term budget is exceeded) and
/// splits it into truth-aligned coefficients and remainder terms.
pub fn identify(
    model: &PdeNetModel,
    truth: &SystemKind,
    prune_tol: f64,
) -> Result<IdentificationReport> {
    let labels = model.input_labels();
    let terms = truth_terms(truth);
    if terms.len() != model.n_components() {
        return Err(Error::shape(format!(
            "{} has {} components, model has {}",
            truth.name(),
            terms.len(),
            model.n_components()
        )));
    }
    let mut components = Vec::new();
    for ((net, comp), truth_c) in model.symnets.iter().zip(&model.components).zip(&terms) {
        let exp = net.expand(prune_tol, DEFAULT_MAX_TERMS);
        if exp.cutoff > prune_tol {
            warn!(
                "{comp}: expansion exceeded {DEFAULT_MAX_TERMS} terms; intermediate terms up to {:.2e} dropped",
                exp.cutoff
            );
        }
        components.push(split(&exp.polynomial, comp, truth_c, &labels, exp.cutoff)?);
    }
    Ok(IdentificationReport {
        system: truth.name().into(),
        components,
    })
}

fn split(
    poly: &Polynomial,
    comp: &str,
    truth: &TruthTerms,
    labels: &[String],
    cutoff: f64,
) -> Result<ComponentIdentification> {
    let mut aligned = Vec::new();
    let mut known = Vec::new();
    for (factors, c) in truth {
        let mono = monomial_of(labels, factors)?;
        aligned.push(TermRow {
            term: mono.display(labels),
            truth: *c,
            recovered: poly.coefficient(&mono),
        });
        known.push(mono);
    }
    let mut remainder: Vec<(String, f64)> = poly
        .terms()
        .filter(|(m, _)| !known.contains(m))
        .map(|(m, c)| (m.display(labels), c))
        .collect();
    remainder.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(&b.0)));
    Ok(ComponentIdentification {
        component: comp.into(),
        equation: poly.display(labels, 1e-3),
        aligned,
        remainder,
        cutoff,
    })
}

/// Nearest-rank percentile (`p ∈ (0, 100]`) of unsorted values; `+∞`
/// entries sort last.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty() && p > 0.0 && p <= 100.0);
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

/// Held-out trajectories: noisy coarse initial states and clean coarse
/// reference solutions.
#[derive(Clone, Debug)]
pub struct TestSet {
    pub spec: PdeSpec,
    pub steps: usize,
    pub samples: Vec<SamplePair>,
}

impl TestSet {
    pub fn generate(spec: &PdeSpec, n_tests: usize, steps: usize, seed: u64) -> Result<Self> {
        if n_tests == 0 || steps == 0 {
            return Err(Error::invalid(
                "need at least one test and one prediction step",
            ));
        }
        let samples = (0..n_tests as u64)
            .into_par_iter()
            .map(|j| generate_sample(spec, steps, derive_seed(seed, j)))
            .collect::<Result<Vec<_>>>()?;
        Ok(TestSet {
            spec: *spec,
            steps,
            samples,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionReport {
    pub times: Vec<f64>,
    pub p25: Vec<f64>,
    pub p75: Vec<f64>,
    pub p100: Vec<f64>,
    /// `errors[test][i]` is ε at `times[i]`; `+∞` after a divergence.
    pub errors: Vec<Vec<f64>>,
}

impl PredictionReport {
    /// Nearest-rank percentile over tests at snapshot `i`.
    pub fn percentile_at(&self, i: usize, p: f64) -> f64 {
        let col: Vec<f64> = self.errors.iter().map(|e| e[i]).collect();
        percentile(&col, p)
    }

    pub fn final_median(&self) -> f64 {
        self.percentile_at(self.times.len() - 1, 50.0)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,p25,p75,p100\n");
        for i in 0..self.times.len() {
            let _ = writeln!(
                s,
                "{:.4},{:e},{:e},{:e}",
                self.times[i], self.p25[i], self.p75[i], self.p100[i]
            );
        }
        s
    }

    /// Static page with the three percentile curves on a log scale.
    pub fn to_html(&self, title: &str) -> String {
        let (w, h, pad) = (720.0, 360.0, 48.0);
        let finite: Vec<f64> = [&self.p25, &self.p75, &self.p100]
            .iter()
            .flat_map(|v| v.iter().copied())
            .filter(|v| v.is_finite() && *v > 0.0)
            .collect();
        let lo = finite
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
            .max(1e-12)
            .log10()
            .floor();
        let hi = finite
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
            .max(1e-12)
            .log10()
            .ceil()
            .max(lo + 1.0);
        let tmax = self.times.last().copied().unwrap_or(1.0);
        let px = |t: f64| pad + (w - 2.0 * pad) * t / tmax;
        let py = |v: f64| {
            let l = if v.is_finite() && v > 0.0 {
                v.log10().clamp(lo, hi)
            } else {
                hi
            };
            h - pad - (h - 2.0 * pad) * (l - lo) / (hi - lo)
        };
        let line = |vals: &[f64], color: &str| {
            let pts: Vec<String> = self
                .times
                .iter()
                .zip(vals)
                .map(|(&t, &v)| format!("{:.1},{:.1}", px(t), py(v)))
                .collect();
            format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
                pts.join(" ")
            )
        };
        let mut svg =
            format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">");
        let _ = write!(
            svg,
            "<rect x=\"{pad}\" y=\"{pad}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>",
            w - 2.0 * pad,
            h - 2.0 * pad
        );
        for e in lo as i32..=hi as i32 {
            let y = py(10f64.powi(e));
            let _ = write!(
                svg,
                "<text x=\"4\" y=\"{:.1}\" font-size=\"11\">1e{e}</text>",
                y + 4.0
            );
        }
        let _ = write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\">t = {tmax}</text>",
            w - pad - 40.0,
            h - 12.0
        );
        svg.push_str(&line(&self.p100, "#c0392b"));
        svg.push_str(&line(&self.p75, "#e67e22"));
        svg.push_str(&line(&self.p25, "#2980b9"));
        svg.push_str("</svg>");
        format!(
            "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{title}</title></head><body>\n\
             <h3>{title}</h3>\n<p>Relative prediction error: 25% (blue), 75% (orange) and 100% (red) percentiles.</p>\n{svg}\n</body></html>\n"
        )
    }
}

/// Rolls the model out from every test's noisy initial state and compares
/// against the clean reference at each snapshot.
pub fn evaluate_prediction(model: &PdeNetModel, tests: &TestSet) -> Result<PredictionReport> {
    let n = tests.steps;
    let errors = tests
        .samples
        .par_iter()
        .map(|s| -> Result<Vec<f64>> {
            let r = model.rollout(&s.noisy[0], n)?;
            let mut e = vec![f64::INFINITY; n];
            for (i, pred) in r.states.iter().enumerate() {
                e[i] = relative_error(&s.clean[i + 1], pred)?;
            }
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    let times: Vec<f64> = (1..=n).map(|i| i as f64 * tests.spec.snapshot_dt).collect();
    let mut report = PredictionReport {
        times,
        p25: vec![],
        p75: vec![],
        p100: vec![],
        errors,
    };
    for i in 0..n {
        report.p25.push(report.percentile_at(i, 25.0));
        report.p75.push(report.percentile_at(i, 75.0));
        report.p100.push(report.percentile_at(i, 100.0));
    }
    Ok(report)
}
