//! Reference solvers for the benchmark systems and dataset generation.
//!
//! Fine-grid solves use explicit-midpoint RK2 with second-order upwind
//! convection and a centred Laplacian on a periodic box, then subsample to
//! the coarse grid and add multiplicative-scale Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{restrict_state, Field, Grid, State};

/// Largest Fourier mode `|k|, |l| ≤ 4` in random initial conditions.
pub const MAX_MODE: i32 = 4;
const MODES: usize = (2 * MAX_MODE + 1) as usize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SystemKind {
    /// `U_t = −U·∇U + ν ΔU`, `U = (u, v)`.
    Burgers { nu: f64 },
    /// `u_t = c Δu`.
    Heat { c: f64 },
    /// Burgers plus the reaction `λ(A)U + ω(A) J U` with `A² = u² + v²`,
    /// `λ = 1 − A²`, `ω = −βA²`.
    Rcd { nu: f64, beta: f64 },
}

impl SystemKind {
    pub fn components(&self) -> Vec<String> {
        match self {
            SystemKind::Heat { .. } => vec!["u".into()],
            _ => vec!["u".into(), "v".into()],
        }
    }

    pub fn n_components(&self) -> usize {
        match self {
            SystemKind::Heat { .. } => 1,
            _ => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SystemKind::Burgers { .. } => "burgers",
            SystemKind::Heat { .. } => "heat",
            SystemKind::Rcd { .. } => "rcd",
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        let fine = match *self {
            SystemKind::Burgers { nu } => ok(nu),
            SystemKind::Heat { c } => ok(c),
            SystemKind::Rcd { nu, beta } => ok(nu) && beta.is_finite(),
        };
        if fine {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "{} coefficients must be finite and non-negative",
                self.name()
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeSpec {
    pub system: SystemKind,
    pub fine_n: usize,
    pub coarse_n: usize,
    pub internal_dt: f64,
    pub snapshot_dt: f64,
    pub horizon: f64,
    pub noise: f64,
}

impl PdeSpec {
    pub fn burgers() -> Self {
        PdeSpec {
            system: SystemKind::Burgers { nu: 0.05 },
            fine_n: 128,
            coarse_n: 32,
            internal_dt: 1.0 / 1600.0,
            snapshot_dt: 0.01,
            horizon: 4.0,
            noise: 0.001,
        }
    }

    pub fn heat() -> Self {
        PdeSpec {
            system: SystemKind::Heat { c: 0.1 },
            horizon: 1.5,
            ..Self::burgers()
        }
    }

    pub fn rcd() -> Self {
        PdeSpec {
            system: SystemKind::Rcd { nu: 0.1, beta: 1.0 },
            internal_dt: 1.0 / 10000.0,
            horizon: 2.0,
            ..Self::burgers()
        }
    }

    pub fn fine_grid(&self) -> Grid {
        Grid::periodic_square(self.fine_n)
    }

    pub fn coarse_grid(&self) -> Grid {
        Grid::periodic_square(self.coarse_n)
    }

    pub fn stride(&self) -> usize {
        self.fine_n / self.coarse_n
    }

    /// Internal steps per snapshot interval.
    pub fn steps_per_snapshot(&self) -> usize {
        (self.snapshot_dt / self.internal_dt).round() as usize
    }

    /// Snapshots after `t0` up to the horizon.
    pub fn horizon_steps(&self) -> usize {
        (self.horizon / self.snapshot_dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        if self.fine_n < 3 || self.coarse_n == 0 || self.fine_n % self.coarse_n != 0 {
            return Err(Error::invalid(format!(
                "fine grid {} must be a multiple of coarse grid {}",
                self.fine_n, self.coarse_n
            )));
        }
        if !(self.internal_dt > 0.0 && self.snapshot_dt > 0.0) {
            return Err(Error::invalid("time steps must be positive"));
        }
        let ratio = self.snapshot_dt / self.internal_dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio.round() < 1.0 {
            return Err(Error::invalid(format!(
                "snapshot stride {} is not an integer multiple of the internal step {}",
                self.snapshot_dt, self.internal_dt
            )));
        }
        if !(self.horizon >= 0.0) || !(self.noise >= 0.0) {
            return Err(Error::invalid(
                "horizon and noise level must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Noisy coarse-grid trajectories. `samples[j][i]` is sample `j` at
/// `t_0 + i·dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySet {
    pub grid: Grid,
    pub dt: f64,
    pub components: Vec<String>,
    pub samples: Vec<Vec<State>>,
}

impl TrajectorySet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Snapshots per sample (the shortest, if ragged).
    pub fn n_snapshots(&self) -> usize {
        self.samples.iter().map(Vec::len).min().unwrap_or(0)
    }
}

/// Coefficients of `w = 2 w₀ / max|w₀| + c`, with
/// `w₀ = Σ_{|k|,|l|≤4} λ_{k,l} cos(kx + ly) + γ_{k,l} sin(kx + ly)`.
/// `lambda[k + 4][l + 4]` holds `λ_{k,l}`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierInitial {
    pub lambda: [[f64; MODES]; MODES],
    pub gamma: [[f64; MODES]; MODES],
    pub c: f64,
}

impl FourierInitial {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut lambda = [[0.0; MODES]; MODES];
        let mut gamma = [[0.0; MODES]; MODES];
        for row in lambda.iter_mut() {
            for v in row.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
        }
        for row in gamma.iter_mut() {
            for v in row.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
        }
        let c = Uniform::new(-2.0, 2.0).expect("valid range").sample(rng);
        FourierInitial { lambda, gamma, c }
    }

    /// Unnormalised Fourier sum `w₀`, evaluated separably.
    pub fn raw(&self, grid: Grid) -> Field {
        let (nx, ny) = (grid.nx, grid.ny);
        let trig = |n: usize, h: f64| -> (Vec<f64>, Vec<f64>) {
            let mut c = vec![0.0; MODES * n];
            let mut s = vec![0.0; MODES * n];
            for m in 0..MODES {
                let k = m as f64 - MAX_MODE as f64;
                for i in 0..n {
                    let a = k * i as f64 * h;
                    c[m * n + i] = a.cos();
                    s[m * n + i] = a.sin();
                }
            }
            (c, s)
        };
        let (cx, sx) = trig(nx, grid.dx);
        let (cy, sy) = trig(ny, grid.dy);
        // cos(kx+ly) = cos kx cos ly − sin kx sin ly
        // sin(kx+ly) = sin kx cos ly + cos kx sin ly
        let mut a = vec![0.0; MODES * ny];
        let mut b = vec![0.0; MODES * ny];
        for k in 0..MODES {
            for l in 0..MODES {
                let (lam, gam) = (self.lambda[k][l], self.gamma[k][l]);
                for iy in 0..ny {
                    let (c, s) = (cy[l * ny + iy], sy[l * ny + iy]);
                    a[k * ny + iy] += lam * c + gam * s;
                    b[k * ny + iy] += gam * c - lam * s;
                }
            }
        }
        let mut out = Field::zeros(grid);
        let vals = out.values_mut();
        for ix in 0..nx {
            let row = &mut vals[ix * ny..(ix + 1) * ny];
            for k in 0..MODES {
                let (c, s) = (cx[k * nx + ix], sx[k * nx + ix]);
                for iy in 0..ny {
                    row[iy] += c * a[k * ny + iy] + s * b[k * ny + iy];
                }
            }
        }
        out
    }

    pub fn field(&self, grid: Grid) -> Result<Field> {
        let w0 = self.raw(grid);
        let m = w0.max_abs();
        if !(m > 1e-300) {
            return Err(Error::Degenerate("Fourier sum vanishes on the grid".into()));
        }
        Ok(w0.map(|v| 2.0 * v / m + self.c))
    }
}

/// A random initial state on `grid`: each component independently drawn
/// as a normalised random Fourier sum plus a uniform offset.
pub fn random_initial<R: Rng + ?Sized>(
    grid: Grid,
    n_components: usize,
    rng: &mut R,
) -> Result<State> {
    let mut comps = Vec::with_capacity(n_components);
    for _ in 0..n_components {
        loop {
            match FourierInitial::sample(rng).field(grid) {
                Ok(f) => {
                    comps.push(f);
                    break;
                }
                Err(Error::Degenerate(_)) => continue,
                Err(e) => return Err(e),
            }
        }
    }
    State::new(comps, 0.0)
}

/// `Û = U + intensity·M·W` with `W ~ N(0,1)` i.i.d. per node and `M` the
/// maximum of each component over the whole trajectory.
pub fn add_noise(traj: &[State], intensity: f64, seed: u64) -> Result<Vec<State>> {
    if traj.is_empty() || intensity == 0.0 {
        return Ok(traj.to_vec());
    }
    let d = traj[0].n_components();
    if traj.iter().any(|s| s.n_components() != d) {
        return Err(Error::shape("trajectory has inconsistent component counts"));
    }
    let scale: Vec<f64> = (0..d)
        .map(|c| {
            traj.iter()
                .map(|s| s.components[c].max())
                .fold(f64::NEG_INFINITY, f64::max)
                .abs()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(traj
        .iter()
        .map(|s| {
            let components = s
                .components
                .iter()
                .zip(&scale)
                .map(|(f, &m)| {
                    let mut out = f.clone();
                    for v in out.values_mut() {
                        let w: f64 = StandardNormal.sample(&mut rng);
                        *v += intensity * m * w;
                    }
                    out
                })
                .collect();
            State {
                components,
                time: s.time,
            }
        })
        .collect())
}

/// Second-order upwind first derivative along one axis at node `i`, with
/// `fm2, fm1, f0, fp1, fp2` the values at offsets −2…2.
#[inline]
fn upwind(a: f64, fm2: f64, fm1: f64, f0: f64, fp1: f64, fp2: f64, inv2h: f64) -> f64 {
    if a > 0.0 {
        (3.0 * f0 - 4.0 * fm1 + fm2) * inv2h
    } else {
        (-3.0 * f0 + 4.0 * fp1 - fp2) * inv2h
    }
}

/// Semi-discrete right-hand side on raw buffers.
fn rhs(system: &SystemKind, grid: &Grid, u: &[Vec<f64>], out: &mut [Vec<f64>]) {
    let (nx, ny) = (grid.nx, grid.ny);
    let (ix2h, iy2h) = (0.5 / grid.dx, 0.5 / grid.dy);
    let (idx2, idy2) = (1.0 / (grid.dx * grid.dx), 1.0 / (grid.dy * grid.dy));
    let w = |i: isize, n: usize| i.rem_euclid(n as isize) as usize;

    let lap = |f: &[f64], ix: usize, iy: usize, xm: usize, xp: usize, ym: usize, yp: usize| {
        let c = f[ix * ny + iy];
        (f[xm * ny + iy] - 2.0 * c + f[xp * ny + iy]) * idx2
            + (f[ix * ny + ym] - 2.0 * c + f[ix * ny + yp]) * idy2
    };

    for ix in 0..nx {
        let xs = [-2isize, -1, 1, 2].map(|o| w(ix as isize + o, nx));
        for iy in 0..ny {
            let ys = [-2isize, -1, 1, 2].map(|o| w(iy as isize + o, ny));
            let p = ix * ny + iy;
            match *system {
                SystemKind::Heat { c } => {
                    out[0][p] = c * lap(&u[0], ix, iy, xs[1], xs[2], ys[1], ys[2]);
                }
                SystemKind::Burgers { nu } | SystemKind::Rcd { nu, .. } => {
                    let (a, b) = (u[0][p], u[1][p]);
                    for c in 0..2 {
                        let f = &u[c];
                        let fx = upwind(
                            a,
                            f[xs[0] * ny + iy],
                            f[xs[1] * ny + iy],
                            f[p],
                            f[xs[2] * ny + iy],
                            f[xs[3] * ny + iy],
                            ix2h,
                        );
                        let fy = upwind(
                            b,
                            f[ix * ny + ys[0]],
                            f[ix * ny + ys[1]],
                            f[p],
                            f[ix * ny + ys[2]],
                            f[ix * ny + ys[3]],
                            iy2h,
                        );
                        out[c][p] =
                            -a * fx - b * fy + nu * lap(f, ix, iy, xs[1], xs[2], ys[1], ys[2]);
                    }
                    if let SystemKind::Rcd { beta, .. } = *system {
                        let (ru, rv) = rcd_reaction(a, b, beta);
                        out[0][p] += ru;
                        out[1][p] += rv;
                    }
                }
            }
        }
    }
}

/// Reaction part of the RCD system: `(λu − ωv, ωu + λv)`.
pub fn rcd_reaction(u: f64, v: f64, beta: f64) -> (f64, f64) {
    let a2 = u * u + v * v;
    let lam = 1.0 - a2;
    let omega = -beta * a2;
    (lam * u - omega * v, omega * u + lam * v)
}

fn state_buffers(u: &State) -> Vec<Vec<f64>> {
    u.components.iter().map(|f| f.values().to_vec()).collect()
}

fn check_state(spec: &PdeSpec, u: &State) -> Result<()> {
    if u.n_components() != spec.system.n_components() {
        return Err(Error::shape(format!(
            "{} needs {} components, state has {}",
            spec.system.name(),
            spec.system.n_components(),
            u.n_components()
        )));
    }
    let g = u.grid();
    if g.nx < 5 || g.ny < 5 {
        return Err(Error::invalid(
            "reference solver needs at least 5 nodes per axis",
        ));
    }
    Ok(())
}

/// In-place RK2 steps on raw buffers.
struct Stepper {
    system: SystemKind,
    grid: Grid,
    dt: f64,
    k: Vec<Vec<f64>>,
    mid: Vec<Vec<f64>>,
}

impl Stepper {
    fn new(system: SystemKind, grid: Grid, dt: f64, d: usize) -> Self {
        Stepper {
            system,
            grid,
            dt,
            k: vec![vec![0.0; grid.len()]; d],
            mid: vec![vec![0.0; grid.len()]; d],
        }
    }

    fn step(&mut self, u: &mut [Vec<f64>]) {
        rhs(&self.system, &self.grid, u, &mut self.k);
        let h = 0.5 * self.dt;
        for ((m, uc), kc) in self.mid.iter_mut().zip(u.iter()).zip(&self.k) {
            for ((a, b), c) in m.iter_mut().zip(uc).zip(kc) {
                *a = b + h * c;
            }
        }
        rhs(&self.system, &self.grid, &self.mid, &mut self.k);
        for (uc, kc) in u.iter_mut().zip(&self.k) {
            for (a, c) in uc.iter_mut().zip(kc) {
                *a += self.dt * c;
            }
        }
    }
}

fn cfl_check(spec: &PdeSpec, u: &State) {
    if matches!(spec.system, SystemKind::Heat { .. }) {
        return;
    }
    let g = u.grid();
    let vmax = u.components.iter().map(Field::max_abs).fold(0.0, f64::max);
    let cfl = vmax * spec.internal_dt / g.dx.min(g.dy);
    if cfl > 1.0 {
        log::warn!("CFL number {cfl:.3} exceeds 1; the reference solve may be unstable");
    }
}

/// One internal explicit-midpoint step of the reference discretisation.
pub fn reference_step(spec: &PdeSpec, u: &State) -> Result<State> {
    check_state(spec, u)?;
    cfl_check(spec, u);
    let g = *u.grid();
    let mut buf = state_buffers(u);
    Stepper::new(spec.system, g, spec.internal_dt, buf.len()).step(&mut buf);
    let components = buf
        .into_iter()
        .map(|v| Field::from_values(g, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(State {
        components,
        time: u.time + spec.internal_dt,
    })
}

/// Integrates from `u0` and returns the states at `t0, t0 + δt, …, t0 + n·δt`
/// on `u0`'s grid.
pub fn solve(spec: &PdeSpec, u0: &State, n: usize) -> Result<Vec<State>> {
    spec.validate()?;
    check_state(spec, u0)?;
    cfl_check(spec, u0);
    let g = *u0.grid();
    let per = spec.steps_per_snapshot();
    let mut stepper = Stepper::new(spec.system, g, spec.internal_dt, u0.n_components());
    let mut buf = state_buffers(u0);
    let mut out = Vec::with_capacity(n + 1);
    out.push(u0.clone());
    for i in 1..=n {
        for _ in 0..per {
            stepper.step(&mut buf);
        }
        if buf.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { block: i });
        }
        let components = buf
            .iter()
            .map(|v| Field::from_values(g, v.clone()))
            .collect::<Result<Vec<_>>>()?;
        out.push(State {
            components,
            time: u0.time + i as f64 * spec.snapshot_dt,
        });
    }
    Ok(out)
}

/// Deterministic per-sample seed derived from a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    // splitmix64 over a golden-ratio-spaced sequence
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A coarse-grid trajectory before and after noise.
#[derive(Clone, Debug)]
pub struct SamplePair {
    pub clean: Vec<State>,
    pub noisy: Vec<State>,
}

/// One sample: random fine-grid initial condition, reference solve for `n`
/// snapshot intervals, restriction, noise.
pub fn generate_sample(spec: &PdeSpec, n: usize, seed: u64) -> Result<SamplePair> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u0 = random_initial(spec.fine_grid(), spec.system.n_components(), &mut rng)?;
    let fine = solve(spec, &u0, n)?;
    let clean = fine
        .iter()
        .map(|s| restrict_state(s, spec.stride()))
        .collect::<Result<Vec<_>>>()?;
    let noisy = add_noise(&clean, spec.noise, rng.random())?;
    Ok(SamplePair { clean, noisy })
}

/// `count` independent noisy samples with snapshots `t_0 … t_n`.
pub fn generate_batch(spec: &PdeSpec, count: usize, n: usize, seed: u64) -> Result<TrajectorySet> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::invalid("batch must contain at least one sample"));
    }
    let samples = (0..count as u64)
        .into_par_iter()
        .map(|j| generate_sample(spec, n, derive_seed(seed, j)).map(|p| p.noisy))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectorySet {
        grid: spec.coarse_grid(),
        dt: spec.snapshot_dt,
        components: spec.system.components(),
        samples,
    })
}
