//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run everything with `cargo test --release --test acceptance`, or pick
//! criteria by number: `cargo test --release --test acceptance -- 1 2 8`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use pdenet::diff::{check_gradient, ParamLayout, ParamVector};
use pdenet::loss::LossWeights;
use pdenet::model::{ModelSpec, BANK_ORDERS};
use pdenet::moments::{ConstraintMask, MomentTransform};
use pdenet::report::{
    evaluate_prediction, exact_model, identify, IdentificationReport, TestSet, DEFAULT_PRUNE_TOL,
};
use pdenet::simulator::{derive_seed, generate_batch, random_initial, reference_step, solve};
use pdenet::symnet::{Monomial, SymNetParams};
use pdenet::trainer::{train, TrainConfig};
use pdenet::{Field, Grid, Kernel, PdeNetModel, PdeSpec, State, SystemKind};

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = fn() -> Verdict;

fn within_budget(v: Verdict, elapsed: Duration, budget: Duration) -> Verdict {
    let ok = elapsed <= budget;
    Verdict::new(
        v.pass && ok,
        format!(
            "{}; {:.1} s of {:.0} s budget",
            v.detail,
            elapsed.as_secs_f64(),
            budget.as_secs_f64()
        ),
    )
}

// 1. Filter <-> moment identity and constraint counts.
fn moments() -> Verdict {
    let t = MomentTransform::new(5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let taps: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
        let q = Kernel::from_taps(5, taps).unwrap();
        let back = t.kernel(&t.moments(&q).unwrap()).unwrap();
        for (a, b) in back.taps().iter().zip(q.taps()) {
            worst = worst.max((a - b).abs());
        }
    }
    let masks: Vec<ConstraintMask> = BANK_ORDERS
        .iter()
        .map(|&o| ConstraintMask::new(5, o, 2).unwrap())
        .collect();
    let fixed: usize = masks.iter().map(ConstraintMask::fixed_count).sum();
    let free: usize = masks.iter().map(ConstraintMask::free_count).sum();
    Verdict::new(
        worst < 1e-12 && fixed == 45 && free == 105,
        format!("max round-trip error {worst:.2e}, {fixed} fixed / {free} free"),
    )
}

// 2. Constructive SymNet weights reproduce the Burgers transport term.
fn symnet_exactness() -> Verdict {
    // inputs: u, u_y, u_x, u_yy, u_xy, u_xx, v, v_y, v_x, v_yy, v_xy, v_xx
    let (u, u_y, u_x, v) = (0, 1, 2, 6);
    let net =
        SymNetParams::represent(12, 5, &[(vec![u, u_x], -1.0), (vec![v, u_y], -1.0)]).unwrap();
    let poly = net.to_polynomial();
    let uux = Monomial::from_vars(12, &[u, u_x]);
    let vuy = Monomial::from_vars(12, &[v, u_y]);
    let others = poly
        .terms()
        .filter(|(m, _)| **m != uux && **m != vuy)
        .count();
    let exact = poly.coefficient(&uux) == -1.0 && poly.coefficient(&vuy) == -1.0 && others == 0;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        let oracle = -x[u] * x[u_x] - x[v] * x[u_y];
        worst = worst.max((net.forward(&x).unwrap() - oracle).abs());
    }
    let per = SymNetParams::param_count_for(12, 5);
    let model =
        PdeNetModel::with_zero_symnets(Grid::periodic_square(8), &ModelSpec::default()).unwrap();
    let total = ParamLayout::of(&model).symnets_range().len();
    Verdict::new(
        exact && worst < 1e-12 && per == 168 && total == 336,
        format!(
            "{} nonzero terms, {others} spurious, forward error {worst:.1e}, {per} per net, {total} for two",
            poly.len()
        ),
    )
}

// 3. Reverse-mode gradient against central finite differences.
fn gradient() -> Verdict {
    let spec = PdeSpec {
        fine_n: 64,
        coarse_n: 16,
        ..PdeSpec::burgers()
    };
    let batch = generate_batch(&spec, 2, 2, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut model =
        PdeNetModel::initialize(spec.coarse_grid(), &ModelSpec::default(), &mut rng).unwrap();
    // move the filters off their initial stencils so the moment penalty is active
    let mut p = ParamVector::pack(&model);
    let noise = Normal::new(0.0, 0.02).unwrap();
    for v in &mut p.values[p.layout.filters_range()] {
        *v += noise.sample(&mut rng);
    }
    p.unpack_into(&mut model).unwrap();
    let chk = check_gradient(&model, &batch, 2, &LossWeights::default(), 1e-5, 0.0, None).unwrap();
    Verdict::new(
        chk.max_rel_error < 1e-5,
        format!(
            "{} coordinates, max relative error {:.2e} (coordinate {})",
            chk.analytic.len(),
            chk.max_rel_error,
            chk.worst_index
        ),
    )
}

// 4. Heat solver convergence order and mass conservation.
fn simulator_fidelity() -> Verdict {
    let c = 0.1;
    let t_end = 1.0;
    let errors: Vec<f64> = [16, 32, 64]
        .iter()
        .map(|&n| {
            let spec = PdeSpec {
                system: SystemKind::Heat { c },
                fine_n: n,
                coarse_n: n,
                internal_dt: 1.0 / 1600.0,
                snapshot_dt: 0.01,
                horizon: t_end,
                noise: 0.0,
            };
            let g = Grid::periodic_square(n);
            let u0 = State::new(vec![Field::from_fn(g, |x, y| x.sin() * y.sin())], 0.0).unwrap();
            let end = solve(&spec, &u0, spec.horizon_steps())
                .unwrap()
                .pop()
                .unwrap();
            let decay = (-2.0 * c * t_end).exp();
            let exact = Field::from_fn(g, |x, y| decay * x.sin() * y.sin());
            end.components[0]
                .values()
                .iter()
                .zip(exact.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let orders: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();

    let spec = PdeSpec::heat();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut u = random_initial(spec.fine_grid(), 1, &mut rng).unwrap();
    let mut drift = 0.0f64;
    for _ in 0..200 {
        let next = reference_step(&spec, &u).unwrap();
        drift = drift.max((next.components[0].mean() - u.components[0].mean()).abs());
        u = next;
    }
    Verdict::new(
        orders.iter().all(|o| (1.7..=2.3).contains(o)) && drift < 1e-10,
        format!(
            "errors {:.2e}/{:.2e}/{:.2e}, orders {:.3}/{:.3}, mass drift {drift:.1e} per step",
            errors[0], errors[1], errors[2], orders[0], orders[1]
        ),
    )
}

fn desk_config(max_blocks: usize, iterations: usize, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        max_blocks,
        seed,
        ..TrainConfig::default()
    };
    cfg.optimizer.max_iterations = iterations;
    cfg.warmup_optimizer.max_iterations = iterations;
    cfg
}

/// Recovered coefficients of the truth terms selected by `truth`, all components.
fn coefficients(rep: &IdentificationReport, truth: impl Fn(f64) -> bool) -> Vec<f64> {
    rep.components
        .iter()
        .flat_map(|c| {
            c.aligned
                .iter()
                .filter(|r| truth(r.truth))
                .map(|r| r.recovered)
        })
        .collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.4}"))
        .collect::<Vec<_>>()
        .join(", ")
}

// 5. Burgers identification at desk scale.
fn burgers_identification() -> Verdict {
    let spec = PdeSpec::burgers();
    let (model, _) = train(&spec, &desk_config(5, 500, 1)).unwrap();
    let rep = identify(&model, &spec.system, DEFAULT_PRUNE_TOL).unwrap();
    let conv = coefficients(&rep, |t| t == -1.0);
    let diff = coefficients(&rep, |t| t > 0.0);
    let rem = rep.max_remainder();
    let pass = conv.len() == 4
        && conv.iter().all(|c| (-1.10..=-0.85).contains(c))
        && diff.len() == 4
        && diff.iter().all(|c| (0.03..=0.07).contains(c))
        && rem < 0.05;
    Verdict::new(
        pass,
        format!(
            "convection [{}], diffusion [{}], max remainder {rem:.4}",
            fmt_list(&conv),
            fmt_list(&diff)
        ),
    )
}

// 6. Heat identification.
fn heat_identification() -> Verdict {
    let spec = PdeSpec::heat();
    let (model, _) = train(&spec, &desk_config(5, 500, 1)).unwrap();
    let rep = identify(&model, &spec.system, DEFAULT_PRUNE_TOL).unwrap();
    let diff = coefficients(&rep, |t| t > 0.0);
    let pass = diff.len() == 2 && diff.iter().all(|c| (0.07..=0.13).contains(c));
    Verdict::new(
        pass,
        format!(
            "diffusion [{}], max remainder {:.4}",
            fmt_list(&diff),
            rep.max_remainder()
        ),
    )
}

// 7. Ablation ordering over seeds, with the default training schedule and
// errors compared at the Burgers prediction horizon t = 4. Shorter schedules
// or horizons leave the sparsity gap inside seed-to-seed noise.
const ABLATION_SEEDS: u64 = 5;
const ABLATION_TESTS: usize = 100;

fn ablation_ordering() -> Verdict {
    let spec = PdeSpec::burgers();
    let variants: [(&str, fn(&mut TrainConfig)); 4] = [
        ("pde-net", |_| {}),
        ("frozen", |c| c.frozen = true),
        ("no-sparsity", |c| c.sparsity = false),
        ("no-upwind", |c| c.pseudo_upwind = false),
    ];
    let mut wins = [0usize; 3];
    let mut rows = Vec::new();
    for s in 1..=ABLATION_SEEDS {
        let steps = spec.horizon_steps();
        let tests =
            TestSet::generate(&spec, ABLATION_TESTS, steps, derive_seed(s, 0x7e57)).unwrap();
        let medians: Vec<f64> = variants
            .iter()
            .map(|(_, tweak)| {
                let mut cfg = TrainConfig {
                    seed: derive_seed(s, 0x7a1),
                    ..TrainConfig::default()
                };
                tweak(&mut cfg);
                match train(&spec, &cfg) {
                    Ok((model, _)) => evaluate_prediction(&model, &tests).unwrap().final_median(),
                    // a variant whose training blows up loses the comparison
                    Err(_) => f64::INFINITY,
                }
            })
            .collect();
        for (w, other) in wins.iter_mut().zip(&medians[1..]) {
            if medians[0] < *other {
                *w += 1;
            }
        }
        let row = format!(
            "seed {s}: {}",
            medians
                .iter()
                .map(|m| format!("{m:.3e}"))
                .collect::<Vec<_>>()
                .join("/")
        );
        eprintln!("  ablation {row}");
        rows.push(row);
    }
    let needed = 4;
    Verdict::new(
        wins.iter().all(|&w| w >= needed),
        format!(
            "wins vs frozen {}, vs no-sparsity {}, vs no-upwind {} of {ABLATION_SEEDS}; medians pde-net/frozen/no-sparsity/no-upwind: {}",
            wins[0],
            wins[1],
            wins[2],
            rows.join("; ")
        ),
    )
}

// 8. Reaction-only radial dynamics of the reaction-convection-diffusion system.
fn rcd_smoke() -> Verdict {
    let spec = PdeSpec {
        fine_n: 8,
        coarse_n: 8,
        ..PdeSpec::rcd()
    };
    let g = spec.fine_grid();
    let (a0, theta) = (0.5, 0.7);
    let u0 = State::new(
        vec![
            Field::constant(g, a0 * f64::cos(theta)),
            Field::constant(g, a0 * f64::sin(theta)),
        ],
        0.0,
    )
    .unwrap();
    let t_end = 5.0;
    let steps = (t_end / spec.snapshot_dt).round() as usize;
    let amplitude = |s: &State| s.components[0].get(3, 5).hypot(s.components[1].get(3, 5));
    // radial ODE A' = A(1 − A²) has A(t) = 1/sqrt(1 + (1/A0² − 1) e^{−2t})
    let oracle = 1.0 / (1.0 + (1.0 / (a0 * a0) - 1.0) * (-2.0 * t_end).exp()).sqrt();

    let sim = amplitude(&solve(&spec, &u0, steps).unwrap()[steps]);
    let mspec = ModelSpec {
        components: spec.system.components(),
        dt: spec.snapshot_dt,
        ..ModelSpec::default()
    };
    let model = exact_model(&spec, &mspec).unwrap();
    let net = amplitude(model.rollout(&u0, steps).unwrap().states.last().unwrap());
    let pass = (sim - 1.0).abs() < 0.01 && (net - 1.0).abs() < 0.01 && (sim - oracle).abs() < 1e-6;
    Verdict::new(
        pass,
        format!("A(5): simulator {sim:.6}, exact network {net:.6}, closed form {oracle:.6}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(usize, &str, Check, Option<Duration>); 8] = [
        (1, "moment machinery", moments, Some(Duration::from_secs(1))),
        (
            2,
            "SymNet exactness",
            symnet_exactness,
            Some(Duration::from_secs(1)),
        ),
        (
            3,
            "gradient correctness",
            gradient,
            Some(Duration::from_secs(120)),
        ),
        (
            4,
            "simulator fidelity",
            simulator_fidelity,
            Some(Duration::from_secs(120)),
        ),
        (
            5,
            "Burgers identification",
            burgers_identification,
            Some(Duration::from_secs(3600)),
        ),
        (
            6,
            "heat identification",
            heat_identification,
            Some(Duration::from_secs(1800)),
        ),
        (7, "ablation ordering", ablation_ordering, None),
        (8, "RCD reaction smoke test", rcd_smoke, None),
    ];
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (n, name, check, budget) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let mut v = check();
        let elapsed = start.elapsed();
        v = match budget {
            Some(b) => within_budget(v, elapsed, b),
            None => Verdict::new(
                v.pass,
                format!("{}; {:.1} s", v.detail, elapsed.as_secs_f64()),
            ),
        };
        ran += 1;
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {n} ({name}): {} — {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
