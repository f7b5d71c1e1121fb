//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach stdout.

use std::sync::Arc;
use std::time::{Duration, Instant};

use ppde::affine::fk_solve;
use ppde::calculus::{check_catalogue, heat_functional, ppde_residual, DerivativeConfig};
use ppde::control::{
    default_perturbations, homogeneity_pair, optimal_process, phi_p, verify_optimality,
    ControlProblem, VerifyOptions,
};
use ppde::diffusion::{
    martingale_check, stochastic_exponential, DiffusionSpec, MartingaleOptions, SimConfig,
};
use ppde::error::Result;
use ppde::functional::{Functional, VectorFunctional};
use ppde::mild::{solve_ode, solve_point, Backend, MildProblem, SolverConfig};
use ppde::nonlinearity::{
    make_affine, make_power, validate_conditions, DomainInterval, Evidence, Nonlinearity,
    ValidateOptions,
};
use ppde::path::{DiscretePath, TimeGrid};
use ppde::viscosity::{
    consistency_battery, residual_at_test_function, shifted_in_time, BatteryOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_240_601;

struct Outcome {
    passed: bool,
    detail: String,
    /// Numbers that must reproduce bit for bit.
    fingerprint: Vec<f64>,
    /// Set when the stated target is out of reach of the stated method; the
    /// check that replaces it must still hold.
    unattainable: Option<(String, bool)>,
}

impl Outcome {
    fn new(passed: bool, detail: String, fingerprint: Vec<f64>) -> Self {
        Self {
            passed,
            detail,
            fingerprint,
            unattainable: None,
        }
    }
}

fn grid(m: usize) -> Arc<TimeGrid> {
    Arc::new(TimeGrid::uniform(1.0, m).unwrap())
}

fn origin(g: &Arc<TimeGrid>) -> DiscretePath {
    DiscretePath::constant(g.clone(), &[0.0]).unwrap()
}

fn x_squared_at_t() -> Functional {
    Functional::new("x(T)^2", |t, p: &DiscretePath| p.coord_at(t, 0).powi(2))
}

fn timed<T>(limit: Duration, f: impl FnOnce() -> T) -> (T, Duration, bool) {
    let t0 = Instant::now();
    let out = f();
    let el = t0.elapsed();
    (out, el, el < limit)
}

fn riccati() -> Result<Outcome> {
    let g = grid(100);
    let prob = MildProblem::new(
        DiffusionSpec::brownian(1),
        make_power(Functional::constant(1.0), 2.0)?,
        Functional::constant(1.0),
    );
    let ode = solve_ode(&prob, g.clone(), 1e-3)?.at(0.0);
    let ode_ok = (ode - 0.5).abs() <= 1e-6;
    let mut cfg = SolverConfig::new(Backend::NestedMc, g.clone(), SEED);
    cfg.picard_iters = 3;
    cfg.inner_budget = vec![1024, 128, 32];
    let (sol, el, fast) = timed(Duration::from_secs(60), || {
        solve_point(0.0, &origin(&g), &prob, &cfg)
    });
    let est = sol?.estimate;
    let tol = f64::max(0.02, 3.0 * est.std_error);
    let nested_ok = (est.value - 0.5).abs() <= tol;
    // Third Picard iterate from u_0 = g: u_1(s) = s, u_2(s) = 1 - (1 - s^3)/3,
    // u_3(0) = 1 - ∫ u_2^2 = 3/7.
    let picard3 = 3.0 / 7.0;
    let picard_ok = (est.value - picard3).abs() <= tol;
    let mut out = Outcome::new(
        ode_ok && nested_ok && fast,
        format!(
            "ode u(0) = {ode:.9} (|err| {:.1e}); nested_mc N=3 u(0) = {:.4} ± {:.4} (target 0.5 ± {tol:.3}); {:.1}s",
            (ode - 0.5).abs(),
            est.value,
            est.std_error,
            el.as_secs_f64()
        ),
        vec![ode, est.value, est.std_error],
    );
    if ode_ok && fast && !nested_ok {
        out.unattainable = Some((
            format!("three Picard steps from E[g] converge to 3/7, not 0.5; estimate vs 3/7 within {tol:.3}"),
            picard_ok,
        ));
    }
    Ok(out)
}

fn feynman_kac() -> Result<Outcome> {
    let g = grid(100);
    let (alpha, beta) = (Functional::constant(0.2), Functional::constant(0.5));
    let spec = DiffusionSpec::brownian(1);
    let prob = MildProblem::new(
        spec.clone(),
        make_affine(alpha.clone(), beta.clone()),
        x_squared_at_t(),
    );
    let mut cfg = SolverConfig::new(Backend::Regression, g.clone(), SEED);
    cfg.outer_paths = 10_000;
    let x = origin(&g);
    let ((a, b), el, fast) = timed(Duration::from_secs(60), || {
        let a = solve_point(0.0, &x, &prob, &cfg).map(|s| s.estimate);
        let b = fk_solve(
            0.0,
            &x,
            &alpha,
            &beta,
            &prob.g,
            &spec,
            &SimConfig::new(10_000, g.clone(), SEED + 1),
        );
        (a, b)
    });
    let (a, b) = (a?, b?.estimate);
    let diff = (a.value - b.value).abs();
    let bound = 3.0 * a.combined_se(&b);
    Ok(Outcome::new(
        diff <= bound && fast,
        format!(
            "solve_point {:.4} vs fk {:.4}: |diff| {diff:.4} <= {bound:.4}; {:.1}s",
            a.value,
            b.value,
            el.as_secs_f64()
        ),
        vec![a.value, a.std_error, b.value, b.std_error],
    ))
}

fn linear_closed_form() -> Result<Outcome> {
    let g = grid(100);
    let mut cfg = SolverConfig::new(Backend::Regression, g.clone(), SEED);
    cfg.outer_paths = 10_000;
    let prob = MildProblem::new(
        DiffusionSpec::brownian(1),
        Nonlinearity::zero(),
        x_squared_at_t(),
    );
    let a = solve_point(0.0, &origin(&g), &prob, &cfg)?.estimate;
    let a_ok = a.within(1.0, 3.0, 0.0);
    let integral = Functional::new("∫x", |t, p: &DiscretePath| p.integral(t, 0));
    let spec = DiffusionSpec::constant(1, vec![0.05], vec![1.0])?;
    let prob = MildProblem::new(spec, Nonlinearity::zero(), integral);
    let b = solve_point(0.0, &origin(&g), &prob, &cfg)?.estimate;
    let dt = 1.0 / 100.0;
    let b_ok = b.within(0.5, 3.0, dt);
    Ok(Outcome::new(
        a_ok && b_ok,
        format!(
            "E[x(T)^2] = {:.4} ± {:.4} (target 1); E[∫x] = {:.5} ± {:.5} (target 0.5, +Δ {dt})",
            a.value, a.std_error, b.value, b.std_error
        ),
        vec![a.value, a.std_error, b.value, b.std_error],
    ))
}

fn martingale() -> Result<Outcome> {
    let g = grid(100);
    let spec = DiffusionSpec::brownian(1);
    let cfg = SimConfig::new(10_000, g.clone(), SEED);
    let mut passed = true;
    let mut detail = Vec::new();
    let mut fp = Vec::new();
    let phis = [
        Functional::new("x(t)", |t, p: &DiscretePath| p.coord_at(t, 0)),
        Functional::new("x(t)^2", |t, p: &DiscretePath| p.coord_at(t, 0).powi(2)),
    ];
    for phi in &phis {
        let rep = martingale_check(
            phi,
            &spec,
            0.0,
            &origin(&g),
            &cfg,
            &DerivativeConfig::default(),
            &MartingaleOptions::default(),
        )?;
        passed &= rep.passed && rep.checkpoints.len() == 5;
        let worst = rep
            .checkpoints
            .iter()
            .map(|c| c.drift.value.abs() / c.threshold)
            .fold(0.0, f64::max);
        detail.push(format!(
            "{}: {} checkpoints, max |drift|/threshold {worst:.2}",
            phi.label(),
            rep.checkpoints.len()
        ));
        fp.extend(
            rep.checkpoints
                .iter()
                .flat_map(|c| [c.drift.value, c.drift.std_error]),
        );
    }
    Ok(Outcome::new(passed, detail.join("; "), fp))
}

fn doleans() -> Result<Outcome> {
    let g = grid(100);
    let spec = DiffusionSpec::brownian(1);
    let cfg = SimConfig::new(10_000, g.clone(), SEED);
    let m = stochastic_exponential(
        &VectorFunctional::constant(vec![0.8]),
        0.0,
        &origin(&g),
        &spec,
        &cfg,
    )?;
    let z = stochastic_exponential(
        &VectorFunctional::constant(vec![0.0]),
        0.0,
        &origin(&g),
        &spec,
        &cfg,
    )?;
    let ok = m.within(1.0, 3.0, 0.0) && z.value == 1.0 && z.std_error == 0.0;
    Ok(Outcome::new(
        ok,
        format!(
            "beta 0.8: {:.4} ± {:.4}; beta 0: {} (SE {})",
            m.value, m.std_error, z.value, z.std_error
        ),
        vec![m.value, m.std_error, z.value],
    ))
}

fn phi_properties() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut negative, mut false_zero, mut checksum) = (0usize, 0usize, 0.0);
    for _ in 0..100_000 {
        let p = 1.0 + rng.gen_range(f64::EPSILON..=4.0);
        let y = rng.gen_range(0.0..=10.0);
        let z = rng.gen_range(0.0..=10.0);
        let v = phi_p(p, y, z)?;
        negative += usize::from(v < 0.0);
        false_zero += usize::from(v <= 1e-12 && (y - z).abs() > 1e-4);
        checksum += v;
    }
    let mut worst2: f64 = 0.0;
    for _ in 0..10_000 {
        let (y, z) = (rng.gen_range(0.0..=10.0), rng.gen_range(0.0..=10.0));
        worst2 = worst2.max((phi_p(2.0, y, z)? - (y - z).powi(2)).abs());
    }
    let diag = (0..1000).all(|k| {
        let y = k as f64 / 100.0;
        phi_p(3.0, y, y).is_ok_and(|v| v.abs() <= 1e-12)
    });
    Ok(Outcome::new(
        negative == 0 && false_zero == 0 && worst2 <= 1e-12 && diag,
        format!("1e5 samples: {negative} negative, {false_zero} zero off-diagonal; max |Φ_2 - (y-z)^2| = {worst2:.1e}"),
        vec![checksum, worst2],
    ))
}

fn control_problem(g: f64, p: f64) -> Result<ControlProblem> {
    ControlProblem::new(
        p,
        Functional::constant(0.2),
        Functional::constant(1.0),
        Functional::constant(g),
        1.0,
        DiffusionSpec::brownian(1),
    )
}

fn control_verification() -> Result<Outcome> {
    let g = grid(100);
    let prob = control_problem(0.5, 2.0)?;
    let ((rep, el), _, _) = timed(Duration::from_secs(120), || {
        let t0 = Instant::now();
        let rep = (|| {
            let u = solve_ode(&prob.dual_problem()?, g.clone(), 1e-3)?.as_functional();
            let perturbations = default_perturbations(&prob, &u);
            verify_optimality(
                &prob,
                &u,
                &perturbations,
                &origin(&g),
                &SimConfig::new(10_000, g.clone(), SEED),
                &VerifyOptions::default(),
            )
        })();
        (rep, t0.elapsed())
    });
    let rep = rep?;
    let fast = el < Duration::from_secs(120);
    let worst = rep
        .perturbations
        .iter()
        .min_by(|a, b| a.excess_cost.value.total_cmp(&b.excess_cost.value))
        .map(|c| c.excess_cost);
    let mut fp = vec![
        rep.j_star.value,
        rep.j_star.std_error,
        rep.identity_gap.value,
    ];
    fp.extend(
        rep.perturbations
            .iter()
            .flat_map(|c| [c.excess_cost.value, c.excess_cost.std_error]),
    );
    fp.extend(
        rep.decompositions
            .iter()
            .flat_map(|d| [d.gap.value, d.phi_integral.value]),
    );
    Ok(Outcome::new(
        rep.passed && rep.perturbations.len() == 3 && fast,
        format!(
            "J(ν*) = {:.5} ± {:.5} vs ν0^2 u(0) = {:.5} (gap {:.2e}, allowed {:.2e}); min excess {:.2e} ± {:.1e}; {} decompositions ok: {}; {:.1}s",
            rep.j_star.value,
            rep.j_star.std_error,
            rep.value_term.value,
            rep.identity_gap.value,
            rep.identity_threshold,
            worst.map_or(f64::NAN, |w| w.value),
            worst.map_or(f64::NAN, |w| w.std_error),
            rep.decompositions.len(),
            rep.decompositions.iter().all(|d| d.passed),
            el.as_secs_f64()
        ),
        fp,
    ))
}

fn homogeneity() -> Result<Outcome> {
    let g = grid(100);
    let cfg = SimConfig::new(2_000, g.clone(), SEED);
    let mut worst: f64 = 0.0;
    let mut fp = Vec::new();
    for p in [2.0, 3.0] {
        let prob = control_problem(0.5, p)?;
        let u = solve_ode(&prob.dual_problem()?, g.clone(), 1e-3)?.as_functional();
        let mut processes = vec![optimal_process(&prob, &u)];
        processes.extend(default_perturbations(&prob, &u));
        for nu in &processes {
            let (j2, j1) = homogeneity_pair(nu, 2.0, &prob, &origin(&g), &cfg)?;
            let target = 2f64.powf(p) * j1.value;
            worst = worst.max((j2.value - target).abs() / target.abs());
            fp.extend([j2.value, j1.value]);
        }
    }
    Ok(Outcome::new(
        worst <= 1e-10,
        format!("max relative |J(2ν) - 2^p J(ν)| = {worst:.1e} over p = 2, 3"),
        fp,
    ))
}

fn derivative_catalogue() -> Result<Outcome> {
    let g = grid(100);
    let p1 = DiscretePath::scalar(g.clone(), |s| (3.0 * s).sin() + s)?;
    let p2 = DiscretePath::from_fn(g.clone(), 2, |s| vec![s.cos() - 0.5, (2.0 * s).sin()])?;
    let mut worst_ratio: f64 = 0.0;
    let mut rows = 0;
    let mut fp = Vec::new();
    for step in [1e-3, 1e-4] {
        let cfg = DerivativeConfig::with_steps(step, step);
        for row in check_catalogue(1.0, 0.5, (&p1, &p2), &cfg)? {
            let tol = if row.derivative == "d_t" {
                10.0 * step
            } else {
                10.0 * step * step
            };
            worst_ratio = worst_ratio.max(row.abs_error / tol);
            rows += 1;
            fp.push(row.numeric);
        }
    }
    let heat = ppde_residual(
        &DiffusionSpec::brownian(1),
        &Nonlinearity::zero(),
        &heat_functional(1.0),
        0.5,
        &p1,
        &DerivativeConfig::default(),
    )?;
    fp.push(heat);
    Ok(Outcome::new(
        worst_ratio <= 1.0 && heat.abs() <= 1e-3,
        format!("{rows} rows, max |error|/tolerance {worst_ratio:.2e}; heat residual {heat:.1e}"),
        fp,
    ))
}

fn validator() -> Result<Outcome> {
    let g = grid(100);
    let samples: Vec<(f64, DiscretePath)> = [0.0, 0.5].iter().map(|&t| (t, origin(&g))).collect();
    let opts = ValidateOptions {
        seed: SEED,
        ..ValidateOptions::default()
    };
    let square = validate_conditions(
        &make_power(Functional::constant(1.0), 2.0)?,
        &samples,
        &opts,
    );
    let one = Nonlinearity::custom("1", DomainInterval::nonnegative(), true, |_, _, _| Ok(1.0));
    let one = validate_conditions(&one, &samples, &opts);
    let ok = square.local_lipschitz.evidence == Evidence::Pass
        && square.boundary.evidence == Evidence::Pass
        && one.boundary.evidence == Evidence::Fail;
    let limit = one
        .boundary
        .constants
        .get("lower_limit")
        .copied()
        .unwrap_or(f64::NAN);
    Ok(Outcome::new(
        ok,
        format!(
            "z^2: (i) {:?}, (iii) {:?}; f = 1: (iii) {:?} (limit {limit})",
            square.local_lipschitz.evidence, square.boundary.evidence, one.boundary.evidence
        ),
        vec![limit],
    ))
}

fn viscosity() -> Result<Outcome> {
    let g = grid(100);
    let u = heat_functional(1.0);
    let spec = DiffusionSpec::brownian(1);
    let (r, x) = (0.5, origin(&g));
    let dcfg = DerivativeConfig::default();
    let rep = consistency_battery(
        &u,
        &Nonlinearity::zero(),
        &spec,
        r,
        &x,
        &SimConfig::new(4_000, g.clone(), SEED),
        &dcfg,
        &BatteryOptions::new(0.1),
    )?;
    let tol = 1e-3;
    let mut residuals = Vec::new();
    for c in [1.0, -1.0] {
        let phi = shifted_in_time(&u, r, c);
        residuals.push(
            residual_at_test_function(&phi, &spec, &Nonlinearity::zero(), &u, r, &x, &dcfg, tol)?
                .residual,
        );
    }
    let shifts_ok = (residuals[0] - 1.0).abs() <= tol && (residuals[1] + 1.0).abs() <= tol;
    let mut fp = residuals.clone();
    fp.extend(rep.entries.iter().map(|e| e.residual.residual));
    fp.extend(rep.entries.iter().flat_map(|e| {
        e.memberships
            .iter()
            .flat_map(|m| m.rules.iter().map(|r| r.gap.value))
    }));
    Ok(Outcome::new(
        rep.passed && rep.findings.is_empty() && shifts_ok,
        format!(
            "{} battery functions, {} contradictions; shifted residuals {:+.6} / {:+.6}",
            rep.entries.len(),
            rep.findings.len(),
            residuals[0],
            residuals[1]
        ),
        fp,
    ))
}

type Criterion = (usize, &'static str, fn() -> Result<Outcome>);

const CRITERIA: [Criterion; 11] = [
    (1, "Riccati oracle", riccati),
    (2, "Feynman-Kac cross-check", feynman_kac),
    (3, "linear closed form", linear_closed_form),
    (4, "martingale property", martingale),
    (5, "Doleans normalization", doleans),
    (6, "Phi_p properties", phi_properties),
    (7, "control verification", control_verification),
    (8, "homogeneity", homogeneity),
    (9, "derivative catalogue", derivative_catalogue),
    (10, "existence-condition validator", validator),
    (12, "viscosity harness", viscosity),
];

const DETERMINISM: usize = 11;

fn run_all() -> Vec<Result<Outcome>> {
    CRITERIA.iter().map(|(_, _, f)| f()).collect()
}

fn fingerprints(results: &[Result<Outcome>]) -> Vec<Option<Vec<u64>>> {
    results
        .iter()
        .map(|r| {
            r.as_ref()
                .ok()
                .map(|o| o.fingerprint.iter().map(|v| v.to_bits()).collect())
        })
        .collect()
}

struct Line {
    id: usize,
    text: String,
}

fn main() {
    let mut failures = 0;
    let mut unattainable = Vec::new();
    let mut lines = Vec::new();
    let line = |id: usize, name: &str, passed: bool, detail: &str| Line {
        id,
        text: format!(
            "{} {id:>2}. {name}: {detail}",
            if passed { "PASS" } else { "FAIL" }
        ),
    };

    let results = run_all();
    for ((id, name, _), res) in CRITERIA.iter().zip(&results) {
        match res {
            Ok(o) => {
                let mut l = line(*id, name, o.passed, &o.detail);
                match (&o.unattainable, o.passed) {
                    (_, true) => {}
                    (Some((why, replacement_ok)), false) => {
                        l.text.push_str(&format!(
                            "\n      recorded as unattainable: {why}: {}",
                            if *replacement_ok {
                                "holds"
                            } else {
                                "DOES NOT HOLD"
                            }
                        ));
                        if *replacement_ok {
                            unattainable.push(*id);
                        } else {
                            failures += 1;
                        }
                    }
                    (None, false) => failures += 1,
                }
                lines.push(l);
            }
            Err(e) => {
                lines.push(line(*id, name, false, &format!("error: {e}")));
                failures += 1;
            }
        }
    }

    let reference = fingerprints(&results);
    let mut mismatches = Vec::new();
    for threads in [1, 2, 8] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let again = fingerprints(&pool.install(run_all));
        for ((id, _, _), (a, b)) in CRITERIA.iter().zip(reference.iter().zip(&again)) {
            if a.is_none() || a != b {
                mismatches.push(format!("criterion {id} with {threads} threads"));
            }
        }
    }
    let det_ok = mismatches.is_empty();
    let det_detail = if det_ok {
        "all other criteria reproduce bitwise with 1, 2 and 8 threads".to_string()
    } else {
        format!("mismatch: {}", mismatches.join(", "))
    };
    lines.push(line(DETERMINISM, "determinism", det_ok, &det_detail));
    failures += usize::from(!det_ok);

    lines.sort_by_key(|l| l.id);
    for l in &lines {
        println!("{}", l.text);
    }
    println!(
        "summary: {} of 12 PASS; unattainable: {:?}; unexpected failures: {failures}",
        12 - failures - unattainable.len(),
        unattainable
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
