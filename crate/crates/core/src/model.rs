//! The δt-block model: learnable derivative filters feeding one SymNet per
//! state component, stepped with forward Euler.
//!
//! Every component is correlated with the six filters `D00, D01, D10, D02,
//! D11, D20` (`Dij ≈ ∂x^i ∂y^j`), giving `6d` inputs shared by all SymNets.
//! Input slot `6c + f` holds filter `f` applied to component `c`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_kernel_fits, check_same_grid, correlate_acc, Field, Grid, Kernel, State};
use crate::moments::{ConstraintMask, DerivOrder, FilterRecord, MomentFilter};
use crate::symnet::{SymNetParams, SymNetRecord};

/// Filter orders in bank (and input slot) order.
pub const BANK_ORDERS: [DerivOrder; 6] = [
    DerivOrder::new(0, 0),
    DerivOrder::new(0, 1),
    DerivOrder::new(1, 0),
    DerivOrder::new(0, 2),
    DerivOrder::new(1, 1),
    DerivOrder::new(2, 0),
];
pub const FILTERS_PER_COMPONENT: usize = BANK_ORDERS.len();
/// Bank index of `D01 ≈ ∂y`.
pub const SLOT_DY: usize = 1;
/// Bank index of `D10 ≈ ∂x`.
pub const SLOT_DX: usize = 2;

/// `flip_x(q)[k1, k2] = −q[−k1, k2]`.
pub fn flip_x(q: &Kernel) -> Kernel {
    let r = q.radius();
    let mut out = Kernel::zeros(q.size()).expect("odd size");
    for k1 in -r..=r {
        for k2 in -r..=r {
            out.set(k1, k2, -q.get(-k1, k2));
        }
    }
    out
}

/// `flip_y(q)[k1, k2] = −q[k1, −k2]`.
pub fn flip_y(q: &Kernel) -> Kernel {
    let r = q.radius();
    let mut out = Kernel::zeros(q.size()).expect("odd size");
    for k1 in -r..=r {
        for k2 in -r..=r {
            out.set(k1, k2, -q.get(k1, -k2));
        }
    }
    out
}

/// Label of input slot `(component, filter)`: `u`, `u_y`, `u_x`, `u_yy`, `u_xy`, `u_xx`.
pub fn slot_label(component: &str, order: DerivOrder) -> String {
    if order.total() == 0 {
        return component.to_string();
    }
    format!("{component}_{}{}", "x".repeat(order.x), "y".repeat(order.y))
}

/// Settings for a freshly initialized model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub components: Vec<String>,
    pub filter_size: usize,
    pub accuracy: usize,
    pub symnet_depth: usize,
    pub dt: f64,
    pub pseudo_upwind: bool,
    pub frozen: bool,
    /// Standard deviation of the Gaussian SymNet weight initialization.
    pub init_std: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            components: vec!["u".into(), "v".into()],
            filter_size: 5,
            accuracy: 2,
            symnet_depth: 5,
            dt: 0.01,
            pseudo_upwind: true,
            frozen: false,
            init_std: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PdeNetModel {
    pub grid: Grid,
    pub dt: f64,
    pub filters: Vec<MomentFilter>,
    pub symnets: Vec<SymNetParams>,
    pub pseudo_upwind: bool,
    pub frozen: bool,
    pub components: Vec<String>,
}

/// Finite-difference kernel used to initialize filter `order`.
///
/// `D10`/`D01` get the one-sided second-order stencil `(−3, 4, −1)/2` when
/// pseudo-upwind is on (the flip supplies the other side) and the central
/// stencil otherwise; all other orders use central differences and `D00` the
/// delta.
pub fn initial_kernel(size: usize, order: DerivOrder, one_sided: bool) -> Result<Kernel> {
    let mut q = Kernel::zeros(size)?;
    let one_sided = one_sided && size >= 5;
    let line = |q: &mut Kernel, taps: &[(isize, f64)], along_x: bool| {
        for &(k, v) in taps {
            if along_x {
                q.set(k, 0, v);
            } else {
                q.set(0, k, v);
            }
        }
    };
    let first: &[(isize, f64)] = if one_sided {
        &[(0, -1.5), (1, 2.0), (2, -0.5)]
    } else {
        &[(-1, -0.5), (1, 0.5)]
    };
    let second: &[(isize, f64)] = &[(-1, 1.0), (0, -2.0), (1, 1.0)];
    match (order.x, order.y) {
        (0, 0) => q.set(0, 0, 1.0),
        (1, 0) => line(&mut q, first, true),
        (0, 1) => line(&mut q, first, false),
        (2, 0) => line(&mut q, second, true),
        (0, 2) => line(&mut q, second, false),
        (1, 1) => {
            for (a, b, v) in [(1, 1, 0.25), (-1, -1, 0.25), (1, -1, -0.25), (-1, 1, -0.25)] {
                q.set(a, b, v);
            }
        }
        _ => {
            return Err(Error::invalid(format!(
                "no initial stencil for order ({}, {})",
                order.x, order.y
            )))
        }
    }
    Ok(q)
}

impl PdeNetModel {
    /// Filters from finite-difference stencils, SymNet weights ~ N(0, init_std²), biases 0.
    pub fn initialize<R: Rng + ?Sized>(grid: Grid, spec: &ModelSpec, rng: &mut R) -> Result<Self> {
        let mut model = Self::with_zero_symnets(grid, spec)?;
        if spec.init_std > 0.0 {
            let normal =
                Normal::new(0.0, spec.init_std).map_err(|e| Error::invalid(e.to_string()))?;
            for net in &mut model.symnets {
                for l in net.hidden_mut() {
                    for w in &mut l.w {
                        *w = normal.sample(rng);
                    }
                }
                for w in net.output_weights_mut() {
                    *w = normal.sample(rng);
                }
            }
        }
        Ok(model)
    }

    /// Initial filters with all SymNet parameters zero.
    pub fn with_zero_symnets(grid: Grid, spec: &ModelSpec) -> Result<Self> {
        if spec.components.is_empty() {
            return Err(Error::invalid("model needs at least one component"));
        }
        if !(spec.dt > 0.0) {
            return Err(Error::invalid(format!(
                "dt must be positive, got {}",
                spec.dt
            )));
        }
        check_kernel_fits(&grid, spec.filter_size)?;
        let filters = BANK_ORDERS
            .iter()
            .map(|&o| {
                let mask = ConstraintMask::new(spec.filter_size, o, spec.accuracy)?;
                MomentFilter::from_kernel(
                    mask,
                    &initial_kernel(spec.filter_size, o, spec.pseudo_upwind)?,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let m = FILTERS_PER_COMPONENT * spec.components.len();
        let symnets = spec
            .components
            .iter()
            .map(|_| SymNetParams::zeros(m, spec.symnet_depth))
            .collect();
        Ok(PdeNetModel {
            grid,
            dt: spec.dt,
            filters,
            symnets,
            pseudo_upwind: spec.pseudo_upwind,
            frozen: spec.frozen,
            components: spec.components.clone(),
        })
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn n_inputs(&self) -> usize {
        FILTERS_PER_COMPONENT * self.n_components()
    }

    /// Input labels in slot order.
    pub fn input_labels(&self) -> Vec<String> {
        self.components
            .iter()
            .flat_map(|c| BANK_ORDERS.iter().map(move |&o| slot_label(c, o)))
            .collect()
    }

    pub fn filter(&self, order: DerivOrder) -> Option<&MomentFilter> {
        self.filters.iter().find(|f| f.order() == order)
    }

    fn validate(&self) -> Result<()> {
        if self.filters.len() != FILTERS_PER_COMPONENT
            || self
                .filters
                .iter()
                .zip(BANK_ORDERS)
                .any(|(f, o)| f.order() != o)
        {
            return Err(Error::invalid(
                "filter bank must hold D00, D01, D10, D02, D11, D20 in that order",
            ));
        }
        if self.symnets.len() != self.n_components() {
            return Err(Error::invalid("one SymNet per component is required"));
        }
        if self.symnets.iter().any(|s| s.n_inputs() != self.n_inputs()) {
            return Err(Error::invalid(format!(
                "every SymNet must take {} inputs",
                self.n_inputs()
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::invalid("dt must be positive"));
        }
        Ok(())
    }

    fn check_state(&self, u: &State) -> Result<()> {
        if u.n_components() != self.n_components() {
            return Err(Error::shape(format!(
                "model has {} components, state has {}",
                self.n_components(),
                u.n_components()
            )));
        }
        check_same_grid(&self.grid, u.grid())
    }

    /// One forward-Euler step `U + δt · SymNet(D U)`.
    pub fn dt_block(&self, u: &State) -> Result<State> {
        self.check_state(u)?;
        let input: Vec<Vec<f64>> = u.components.iter().map(|f| f.values().to_vec()).collect();
        let out = self
            .block_forward(&input, None)?
            .ok_or(Error::Divergence { block: 1 })?;
        let components = out
            .into_iter()
            .map(|v| Field::from_values(self.grid, v))
            .collect::<Result<Vec<_>>>()?;
        Ok(State {
            components,
            time: u.time + self.dt,
        })
    }

    /// `n` chained blocks sharing this model's parameters.
    pub fn rollout(&self, u0: &State, n: usize) -> Result<Rollout> {
        if n == 0 {
            return Err(Error::invalid("rollout needs at least one block"));
        }
        self.check_state(u0)?;
        let mut states = Vec::with_capacity(n);
        let mut cur: Vec<Vec<f64>> = u0.components.iter().map(|f| f.values().to_vec()).collect();
        for i in 1..=n {
            match self.block_forward(&cur, None)? {
                Some(next) => {
                    let components = next
                        .iter()
                        .map(|v| Field::from_values(self.grid, v.clone()))
                        .collect::<Result<Vec<_>>>()?;
                    states.push(State {
                        components,
                        time: u0.time + i as f64 * self.dt,
                    });
                    cur = next;
                }
                None => {
                    return Ok(Rollout {
                        states,
                        diverged_at: Some(i),
                    })
                }
            }
        }
        Ok(Rollout {
            states,
            diverged_at: None,
        })
    }

    /// Forward pass of one block over raw component buffers. Returns `None`
    /// when the output is not finite. When `tape` is given, records what the
    /// reverse pass needs.
    pub(crate) fn block_forward(
        &self,
        input: &[Vec<f64>],
        tape: Option<&mut BlockTape>,
    ) -> Result<Option<Vec<Vec<f64>>>> {
        self.validate()?;
        let g = self.grid;
        let (nx, ny) = (g.nx, g.ny);
        let npts = g.len();
        let d = self.n_components();
        let m = self.n_inputs();

        // slots[p * m + s]
        let mut slots = vec![0.0; npts * m];
        let mut field = vec![0.0; npts];
        for c in 0..d {
            for (f, filt) in self.filters.iter().enumerate() {
                field.iter_mut().for_each(|v| *v = 0.0);
                correlate_acc(
                    &input[c],
                    nx,
                    ny,
                    filt.kernel(),
                    filt.scale(g.dx, g.dy),
                    &mut field,
                );
                let s = c * FILTERS_PER_COMPONENT + f;
                for (p, v) in field.iter().enumerate() {
                    slots[p * m + s] = *v;
                }
            }
        }

        // Flip decisions: flips[(p * d + c) * 2 + {0: x, 1: y}]
        let mut flips = Vec::new();
        if self.pseudo_upwind {
            let fx = flip_x(self.filters[SLOT_DX].kernel());
            let fy = flip_y(self.filters[SLOT_DY].kernel());
            let sx = self.filters[SLOT_DX].scale(g.dx, g.dy);
            let sy = self.filters[SLOT_DY].scale(g.dx, g.dy);
            let mut flipped = vec![vec![0.0; npts]; 2 * d];
            for c in 0..d {
                correlate_acc(&input[c], nx, ny, &fx, sx, &mut flipped[2 * c]);
                correlate_acc(&input[c], nx, ny, &fy, sy, &mut flipped[2 * c + 1]);
            }
            flips = vec![false; npts * d * 2];
            let tl = self.symnets[0].trace_len();
            let mut trace = vec![0.0; tl];
            let mut xbar = vec![0.0; m];
            let mut zbar = vec![0.0; m + self.symnets[0].depth()];
            let mut x0 = vec![0.0; m];
            for p in 0..npts {
                x0.copy_from_slice(&slots[p * m..(p + 1) * m]);
                for (c, net) in self.symnets.iter().enumerate() {
                    net.eval_traced(&x0, &mut trace);
                    net.backward_traced(&trace, 1.0, None, &mut xbar, &mut zbar);
                    let base = c * FILTERS_PER_COMPONENT;
                    if xbar[base + SLOT_DX] <= 0.0 {
                        flips[(p * d + c) * 2] = true;
                        slots[p * m + base + SLOT_DX] = flipped[2 * c][p];
                    }
                    if xbar[base + SLOT_DY] <= 0.0 {
                        flips[(p * d + c) * 2 + 1] = true;
                        slots[p * m + base + SLOT_DY] = flipped[2 * c + 1][p];
                    }
                }
            }
        }

        let tl = self.symnets[0].trace_len();
        let mut traces = if tape.is_some() {
            vec![0.0; npts * d * tl]
        } else {
            Vec::new()
        };
        let mut scratch = vec![0.0; tl];
        let mut out: Vec<Vec<f64>> = input.to_vec();
        let mut finite = true;
        for p in 0..npts {
            let x = &slots[p * m..(p + 1) * m];
            for (c, net) in self.symnets.iter().enumerate() {
                let tr = if tape.is_some() {
                    &mut traces[(p * d + c) * tl..(p * d + c + 1) * tl]
                } else {
                    &mut scratch[..]
                };
                let f = net.eval_traced(x, tr);
                let v = out[c][p] + self.dt * f;
                finite &= v.is_finite();
                out[c][p] = v;
            }
        }
        if let Some(t) = tape {
            t.input = input.to_vec();
            t.slots = slots;
            t.flips = flips;
            t.traces = traces;
        }
        Ok(finite.then_some(out))
    }

    pub fn to_record(&self) -> ModelRecord {
        ModelRecord {
            grid: self.grid,
            dt: self.dt,
            pseudo_upwind: self.pseudo_upwind,
            frozen: self.frozen,
            components: self.components.clone(),
            filters: self.filters.iter().map(MomentFilter::to_record).collect(),
            symnets: self.symnets.iter().map(SymNetParams::to_record).collect(),
        }
    }

    pub fn from_record(rec: &ModelRecord) -> Result<Self> {
        let model = PdeNetModel {
            grid: Grid::new(rec.grid.nx, rec.grid.ny, rec.grid.dx, rec.grid.dy)?,
            dt: rec.dt,
            filters: rec
                .filters
                .iter()
                .map(MomentFilter::from_record)
                .collect::<Result<Vec<_>>>()?,
            symnets: rec
                .symnets
                .iter()
                .map(SymNetParams::from_record)
                .collect::<Result<Vec<_>>>()?,
            pseudo_upwind: rec.pseudo_upwind,
            frozen: rec.frozen,
            components: rec.components.clone(),
        };
        model.validate()?;
        check_kernel_fits(&model.grid, model.filters[0].mask().size())?;
        Ok(model)
    }
}

/// Checkpoint form of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub grid: Grid,
    pub dt: f64,
    pub pseudo_upwind: bool,
    pub frozen: bool,
    pub components: Vec<String>,
    pub filters: Vec<FilterRecord>,
    pub symnets: Vec<SymNetRecord>,
}

/// States after blocks `1..=n`; on divergence, the states before it and the
/// 1-based index of the failing block.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub states: Vec<State>,
    pub diverged_at: Option<usize>,
}

/// Per-block record for the reverse pass.
#[derive(Clone, Debug, Default)]
pub(crate) struct BlockTape {
    pub input: Vec<Vec<f64>>,
    pub slots: Vec<f64>,
    pub flips: Vec<bool>,
    pub traces: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::moment_matrix;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_kernel(seed: u64) -> Kernel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Kernel::from_taps(5, (0..25).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn flip_delta() {
        let d = Kernel::delta(5).unwrap();
        let f = flip_x(&d);
        assert_eq!(f.get(0, 0), -1.0);
        assert_eq!(flip_y(&d).get(0, 0), -1.0);
    }

    #[test]
    fn flip_forward_row_gives_backward_row() {
        let q = initial_kernel(5, DerivOrder::new(1, 0), true).unwrap();
        let f = flip_x(&q);
        let row: Vec<f64> = (-2..=2).map(|k| f.get(k, 0)).collect();
        assert_eq!(row, vec![0.5, -2.0, 1.5, 0.0, 0.0]);
        assert_abs_diff_eq!(moment_matrix(&f).get(1, 0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn flips_are_involutions() {
        for seed in 0..100 {
            let q = random_kernel(seed);
            assert_eq!(flip_x(&flip_x(&q)), q);
            assert_eq!(flip_y(&flip_y(&q)), q);
        }
    }

    #[test]
    fn initial_filters_satisfy_masks() {
        for upwind in [true, false] {
            for &o in &BANK_ORDERS {
                let q = initial_kernel(5, o, upwind).unwrap();
                let mask = ConstraintMask::new(5, o, 2).unwrap();
                assert!(
                    mask.is_satisfied_by(&moment_matrix(&q), 1e-14),
                    "{o:?} upwind={upwind}"
                );
                let f = MomentFilter::from_kernel(mask, &q).unwrap();
                for (a, b) in f.kernel().taps().iter().zip(q.taps()) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-13);
                }
            }
        }
    }

    #[test]
    fn slot_labels() {
        let g = Grid::periodic_square(16);
        let m = PdeNetModel::with_zero_symnets(g, &ModelSpec::default()).unwrap();
        assert_eq!(
            m.input_labels(),
            vec![
                "u", "u_y", "u_x", "u_yy", "u_xy", "u_xx", "v", "v_y", "v_x", "v_yy", "v_xy",
                "v_xx"
            ]
        );
    }

    #[test]
    fn zero_symnet_is_identity() {
        let g = Grid::periodic_square(16);
        let m = PdeNetModel::with_zero_symnets(g, &ModelSpec::default()).unwrap();
        let u = State::new(
            vec![
                Field::from_fn(g, |x, y| x.sin() * y.cos()),
                Field::from_fn(g, |x, _| x.cos()),
            ],
            0.0,
        )
        .unwrap();
        let r = m.rollout(&u, 9).unwrap();
        assert_eq!(r.states.len(), 9);
        for s in &r.states {
            assert_eq!(s.components, u.components);
        }
    }
}
