//! Acceptance criteria, run sequentially so the runtime budgets measure one
//! workload at a time. Each criterion prints a single PASS/FAIL line; the
//! test fails at the end if any criterion failed.

mod common;

use std::time::{Duration, Instant};

use common::*;
use mixspec::altmin::AltMinSolver;
use mixspec::eval::align_raw;
use mixspec::linalg::{spectral_norm, subspace_distance, sym_eigen_desc};
use mixspec::model::zero_block_diagonal;
use mixspec::moments::third_contraction_of;
use mixspec::power::decompose;
use mixspec::tensorls::isometry_lower_bound;
use mixspec::{
    align, altmin_complete, assemble_parameters, build_nu_contracted, clamp_to_valid, cluster_map,
    cluster_projected, clustering_accuracy, fit, fit_exact, kl_exact, masked_second_moment, oracle_m2, oracle_m3,
    sample, AltMinConfig, CoreTensor, FitConfig, MaskedMatrix, MixtureModel, PowerConfig, RandomModelSpec,
    RawEstimate, WhiteningOperator,
};
use nalgebra::{DMatrix, DVector};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn top_eigen(m: &DMatrix<f64>, r: usize) -> (DMatrix<f64>, DVector<f64>) {
    let (vals, vecs) = sym_eigen_desc(m);
    (vecs.columns(0, r).into_owned(), DVector::from_iterator(r, vals.iter().take(r).cloned()))
}

fn c1_exact_identity() -> Outcome {
    let start = Instant::now();
    let model = reference_model();
    let r = model.r();
    let (u, sigma) = top_eigen(&oracle_m2(&model), r);
    let white = WhiteningOperator::new(&u, &sigma, model.ell()).unwrap();
    let g = oracle_m3(&model).multilinear(&white.q_down).symmetrized();
    let result = decompose(&g, r, &PowerConfig::for_rank(r), 0)
        .and_then(|d| assemble_parameters(&u, &sigma, &d))
        .and_then(|raw| align_raw(&model, &raw));
    let elapsed = start.elapsed();
    match result {
        Ok(a) => {
            let err = a.pi_max_abs.max(a.max_w_error);
            outcome(
                err <= 1e-6 && elapsed < Duration::from_secs(5),
                format!("max-abs error {err:.2e} (≤ 1e-6), {elapsed:.2?} (< 5 s)"),
            )
        }
        Err(e) => outcome(false, format!("pipeline error: {e}")),
    }
}

fn c2_consistency() -> Outcome {
    let start = Instant::now();
    let model = reference_model();
    let mut cfg = FitConfig::new(3, 0);
    cfg.altmin = AltMinConfig::new(3).with_max_iters(60);
    let result = fit_exact(&model, &cfg).and_then(|rep| align_raw(&model, &rep.raw_model).map(|a| (a, rep)));
    let elapsed = start.elapsed();
    match result {
        Ok((a, rep)) => {
            let err = a.pi_max_abs.max(a.max_w_error);
            outcome(
                err <= 1e-6 && elapsed < Duration::from_secs(30),
                format!(
                    "max-abs error {err:.2e} (≤ 1e-6) after {} completion iterations, {elapsed:.2?} (< 30 s)",
                    rep.diagnostics.altmin_iters
                ),
            )
        }
        Err(e) => outcome(false, format!("pipeline error: {e}")),
    }
}

fn c3_altmin_contraction() -> Outcome {
    let model = reference_model();
    let r = model.r();
    let m2 = oracle_m2(&model);
    let (u_true, sigma) = top_eigen(&m2, r);

    let exact = MaskedMatrix::mask(m2.clone(), model.ell()).unwrap();
    let mut solver = AltMinSolver::new(&exact, AltMinConfig::new(r)).unwrap();
    let mut dists = vec![subspace_distance(&u_true, solver.basis())];
    while *dists.last().unwrap() > 1e-10 && dists.len() <= 60 {
        solver.step().unwrap();
        dists.push(subspace_distance(&u_true, solver.basis()));
    }
    let worst_ratio = dists.windows(2).map(|w| w[0] / w[1]).fold(f64::INFINITY, f64::min);
    let reached = *dists.last().unwrap() <= 1e-10;
    let mut ok = reached && worst_ratio >= 2.0;
    let mut detail = format!(
        "reached {:.1e} in {} steps, slowest contraction {worst_ratio:.2}× (≥ 2×)",
        dists.last().unwrap(),
        dists.len() - 1
    );

    let frob = m2.norm();
    for (seed, eta) in [(1u64, 1e-4), (2, 1e-3)] {
        // symmetric noise scaled so its observed part has spectral norm η
        let raw = uniform_matrix(m2.nrows(), m2.nrows(), seed);
        let mut e = &raw + raw.transpose();
        zero_block_diagonal(&mut e, model.ell());
        e *= eta / spectral_norm(&e);
        let noisy = MaskedMatrix::mask(&m2 + &e, model.ell()).unwrap();
        let done = altmin_complete(&noisy, AltMinConfig::new(r)).unwrap();
        let err = spectral_norm(&(done.m2_hat() - &m2));
        let bound = 9.0 * frob * (r as f64).sqrt() * eta / sigma[r - 1] + 1e-8;
        ok &= err <= bound;
        detail += &format!("; η={eta:.0e}: ‖M̂2−M2‖₂ {err:.2e} ≤ {bound:.2e}");
    }
    outcome(ok, detail)
}

fn c4_isometry() -> Outcome {
    let mut ok = true;
    let mut detail = String::new();
    // reference model first, then r = 1 instances where the bound is informative
    let mut models = vec![reference_model()];
    for (n, seed) in [(100usize, 1u64), (300, 2)] {
        models.push(RandomModelSpec::new(n, 3, 1, seed).build().unwrap());
    }
    for model in models {
        let (n, r) = (model.n(), model.r());
        let (u, sigma) = top_eigen(&oracle_m2(&model), r);
        let white = WhiteningOperator::new(&u, &sigma, model.ell()).unwrap();
        let sv = build_nu_contracted(&white).unwrap().singular_values();
        let smin = sv[sv.len() - 1];
        let bound = isometry_lower_bound(n, r, sigma[0], sigma[r - 1]);
        if bound > 0.0 {
            ok &= smin >= bound;
            detail += &format!("(n={n}, r={r}) σ_min {smin:.3} ≥ {bound:.3}; ");
        } else {
            detail += &format!("(n={n}, r={r}) σ_min {smin:.3}, bound {bound:.0} vacuous; ");
        }
    }
    outcome(ok, detail.trim_end_matches("; ").to_string())
}

fn c5_tiny_oracles() -> Outcome {
    let (mut contraction_err, mut operator_err) = (0.0f64, 0.0f64);
    let (mut contraction_cases, mut operator_cases) = (0, 0);
    for (idx, &(n, ell)) in tiny_shapes().iter().enumerate() {
        for r in 1..=3.min(n * ell) {
            let seed = (idx * 10 + r) as u64 + 500;
            if ell >= 2 {
                let model = RandomModelSpec::new(n, ell, r, seed).build().unwrap();
                let samples = sample(&model, 20, seed);
                let q = uniform_matrix(n * ell, r, seed);
                let xs: Vec<DVector<f64>> = (0..samples.len()).map(|t| samples.encode(t)).collect();
                let fast = third_contraction_of(&samples, &q).unwrap();
                contraction_err = contraction_err.max(max_abs_diff(&fast, &direct_contraction(&xs, &q, ell)));
                contraction_cases += 1;
            }
            let u = random_orthonormal(n * ell, r, seed);
            let sigma = DVector::from_fn(r, |q, _| 1.0 + q as f64);
            let white = WhiteningOperator::new(&u, &sigma, ell).unwrap();
            let a = build_nu_contracted(&white).unwrap();
            let z = CoreTensor::from_fn(r, |i, j, k| ((i + 3 * j + 7 * k + seed as usize) as f64).cos());
            operator_err = operator_err.max(max_abs_diff(&a.apply(&z), &definitional_a(&white, &z, ell)));
            operator_cases += 1;
        }
    }
    outcome(
        contraction_err <= 1e-12 && operator_err <= 1e-12 && contraction_cases >= 20 && operator_cases >= 20,
        format!(
            "contraction {contraction_err:.1e} over {contraction_cases} instances, \
             operator {operator_err:.1e} over {operator_cases} instances (≤ 1e-12)"
        ),
    )
}

fn vector_and_value_errors(t: &CoreTensor, lambdas: &[f64], v: &DMatrix<f64>, seed: u64) -> (f64, f64) {
    let d = decompose(t, lambdas.len(), &PowerConfig::for_rank(lambdas.len()), seed).unwrap();
    let (mut le, mut ve) = (0.0f64, 0.0f64);
    for (q, &lambda) in lambdas.iter().enumerate() {
        let best = (0..lambdas.len())
            .max_by(|&a, &b| v.column(q).dot(&d.vectors.column(a)).abs().total_cmp(&v.column(q).dot(&d.vectors.column(b)).abs()))
            .unwrap();
        le = le.max((d.lambdas[best] - lambda).abs());
        ve = ve.max((d.vectors.column(best) - v.column(q)).norm());
    }
    (le, ve)
}

fn c6_power_method() -> Outcome {
    let lambdas = [4.0, 3.0, 2.0, 1.0];
    let (t, v) = orthogonal_tensor(&lambdas, 6);
    let (le0, ve0) = vector_and_value_errors(&t, &lambdas, &v, 0);
    let mut noisy = t.clone();
    // Frobenius norm 1e-3 bounds the spectral norm by 1e-3
    noisy.add_assign(&symmetric_noise(4, 1e-3, 6));
    let (le, ve) = vector_and_value_errors(&noisy, &lambdas, &v, 0);
    outcome(
        le0 <= 1e-8 && ve0 <= 1e-8 && le <= 5e-3 && ve <= 8e-3 / 1.0,
        format!("exact: {le0:.1e}/{ve0:.1e} (≤ 1e-8); perturbed: eigenvalue {le:.2e} (≤ 5e-3), vector {ve:.2e} (≤ 8e-3)"),
    )
}

const SCALING_REPLICATES: u64 = 3;

fn c7_scaling() -> Outcome {
    let start = Instant::now();
    let model = reference_model();
    let sizes = [1_000usize, 10_000, 100_000];
    let mut pi_err = vec![];
    let mut w_err = vec![];
    for &size in &sizes {
        let (mut p, mut w) = (0.0, 0.0);
        for rep in 0..SCALING_REPLICATES {
            let s = sample(&model, size, 1000 * rep + size as u64);
            match fit(&s, &FitConfig::new(3, rep)).and_then(|f| align(&model, &f.valid_model)) {
                Ok(a) => {
                    p += a.max_pi_error;
                    w += a.max_w_error;
                }
                Err(e) => return outcome(false, format!("|S|={size}: {e}")),
            }
        }
        pi_err.push(p / SCALING_REPLICATES as f64);
        w_err.push(w / SCALING_REPLICATES as f64);
    }
    let elapsed = start.elapsed();
    let ratio = pi_err[1] / pi_err[2];
    let w_ratio = w_err[1] / w_err[2];
    let decreasing = |e: &[f64]| e.windows(2).all(|w| w[1] < w[0]);
    outcome(
        (2.0..=5.0).contains(&ratio)
            && (2.0..=5.0).contains(&w_ratio)
            && decreasing(&pi_err)
            && decreasing(&w_err)
            && elapsed < Duration::from_secs(300),
        format!(
            "mean max π error {:.4} → {:.4} → {:.4}, 10⁴/10⁵ ratio {ratio:.2}; \
             mean max w error {:.4} → {:.4} → {:.4}, ratio {w_ratio:.2} (ratios in [2, 5]); {elapsed:.1?} (< 5 min)",
            pi_err[0], pi_err[1], pi_err[2], w_err[0], w_err[1], w_err[2]
        ),
    )
}

fn as_raw(m: &MixtureModel) -> RawEstimate {
    RawEstimate { w: m.weights().iter().cloned().collect(), pi: m.pi().clone() }
}

fn c8_kl() -> Outcome {
    let model = RandomModelSpec::new(4, 2, 2, 0).build().unwrap();
    let s = sample(&model, 100_000, 8);
    let report = match fit(&s, &FitConfig::new(2, 0)) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("fit failed: {e}")),
    };
    let kl = kl_exact(&model, &report.valid_model).unwrap();
    let d = &report.diagnostics;
    let again = clamp_to_valid(&as_raw(&report.valid_model), 4, 2, d.eps_w, d.eps_pi).unwrap();
    let idempotent = again == report.valid_model;
    outcome(kl <= 0.05 && idempotent, format!("KL {kl:.2e} nats (≤ 0.05), clamp idempotent: {idempotent}"))
}

fn c9_clustering() -> Outcome {
    let model = well_separated_model();
    let held_out = sample(&model, 20_000, 77);
    let truth = held_out.types().unwrap();
    let mut ok = true;
    let mut rates = vec![];
    let mut detail = String::new();
    for size in [1_000usize, 10_000, 100_000] {
        let s = sample(&model, size, 9);
        let fitted = match fit(&s, &FitConfig::new(3, 0)) {
            Ok(r) => r.valid_model,
            Err(e) => return outcome(false, format!("|S|={size}: {e}")),
        };
        let rate = 1.0 - clustering_accuracy(&cluster_map(&held_out, &fitted).unwrap().labels, truth).unwrap();
        rates.push(rate);
        if size == 100_000 {
            let own = 1.0 - clustering_accuracy(&cluster_projected(&s, &fitted).unwrap().labels, s.types().unwrap()).unwrap();
            ok &= own <= 0.01 && rate <= 0.01;
            detail += &format!("|S|=10⁵: projected {:.2}%, posterior {:.2}% (≤ 1%); ", 100.0 * own, 100.0 * rate);
        }
    }
    let monotone = rates.windows(2).all(|w| w[1] <= w[0]);
    ok &= monotone;
    detail += &format!(
        "held-out posterior error {:.3}% → {:.3}% → {:.3}% (non-increasing: {monotone})",
        100.0 * rates[0],
        100.0 * rates[1],
        100.0 * rates[2]
    );
    outcome(ok, detail)
}

fn c10_concentration() -> Outcome {
    let model = reference_model();
    let (n, ell) = (model.n() as f64, model.ell() as f64);
    let mut target = oracle_m2(&model);
    zero_block_diagonal(&mut target, model.ell());
    let size = 10_000usize;
    let delta: f64 = 0.01;
    let bound = 8.0 * (n * n * (n * ell / delta).ln() / size as f64).sqrt();
    let mut within = 0;
    let mut worst: f64 = 0.0;
    for trial in 0..100u64 {
        let s2 = masked_second_moment(&sample(&model, size, 5000 + trial)).unwrap();
        let dev = spectral_norm(&(s2.s2_masked.data() - &target));
        worst = worst.max(dev);
        within += (dev <= bound) as usize;
    }
    outcome(within >= 99, format!("{within}/100 trials within {bound:.2} (worst {worst:.3})"))
}

type Criterion = (&'static str, fn() -> Outcome);

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("exact-decomposition identity", c1_exact_identity),
        ("consistency on exact moments", c2_consistency),
        ("alternating-minimization contraction", c3_altmin_contraction),
        ("near-isometry of the core operator", c4_isometry),
        ("tiny-instance oracle equivalence", c5_tiny_oracles),
        ("tensor power method", c6_power_method),
        ("finite-sample scaling", c7_scaling),
        ("KL after clamping", c8_kl),
        ("clustering", c9_clustering),
        ("concentration envelope", c10_concentration),
    ];
    let mut failed = vec![];
    for (k, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        println!("{} {:>2} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, k + 1, o.detail);
        if !o.passed {
            failed.push(k + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
