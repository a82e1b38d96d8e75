//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//! Runs without the libtest harness so the lines always reach the terminal.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use obsent::dynamics::{recovery_check, reversed_protocol, time_reverse_state, trotter_propagator, Protocol};
use obsent::entropy::{decompose_obs_entropy, equilibrium_state, is_equilibrium_member, obs_entropy, vn_entropy};
use obsent::experiment::{execute, ExperimentConfig};
use obsent::fluct::{fluctuation_setup, forward_two_point, ift_average, run_fluctuation, FluctuationReport};
use obsent::graining::{energy_graining, product_graining, CoarseGraining, OutcomeLabel};
use obsent::lawsuite::{run_isolated, run_open, run_particle, IsolatedInitial, IsolatedOptions, OpenOptions, ThermoLedger};
use obsent::linalg::{ComplexMatrix, DensityMatrix, HermitianOperator, C64};
use obsent::models::Model;
use obsent::thermo::{effective_beta, effective_beta_for_spectrum, effective_beta_mu_for_spectrum, grand_weights};
use obsent::tol;
use rand::Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what())
    }
}

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::from_path(&path).unwrap()
}

fn max_over(v: impl Iterator<Item = f64>) -> f64 {
    v.fold(0.0, |a, b| a.max(b.abs()))
}

const CASES: usize = 200;

fn entropy_properties() -> Check {
    let start = Instant::now();
    let mut r = common::rng(0x0b5e);
    let mut worst = [0.0f64; 5];
    for case in 0..CASES {
        let n = common::dim(&mut r, 4, 64);
        let rank = r.gen_range(1..=n);
        let rho = common::density(&mut r, n, rank);
        let x = common::graining(&mut r, n);
        let s = obs_entropy(&rho, &x).unwrap();
        let excess = (vn_entropy(&rho).unwrap() - s).max(s - (n as f64).ln());
        ensure(excess <= 1e-9, || format!("bounds, case {case}: excess {excess:e}"))?;
        worst[0] = worst[0].max(excess.max(0.0));

        let n1 = common::dim(&mut r, 2, 8);
        let n2 = common::dim(&mut r, 2, (64 / n1).max(2));
        let (a, b) = (common::mixed_density(&mut r, n1), common::mixed_density(&mut r, n2));
        let (xa, xb) = (common::graining(&mut r, n1), common::graining(&mut r, n2));
        let ab = DensityMatrix::product(&[&a, &b]).unwrap();
        let xab = product_graining(&[&xa, &xb], &[n1, n2]).unwrap();
        let e = (obs_entropy(&ab, &xab).unwrap() - obs_entropy(&a, &xa).unwrap() - obs_entropy(&b, &xb).unwrap()).abs();
        ensure(e <= 1e-9, || format!("extensivity, case {case}: {e:e}"))?;
        worst[1] = worst[1].max(e);

        let d = decompose_obs_entropy(&rho, &x).unwrap();
        let e = (d.dephased_vn + d.avg_relative - s).abs();
        ensure(e <= 1e-9, || format!("decomposition, case {case}: {e:e}"))?;
        worst[2] = worst[2].max(e);

        let m = common::member(&mut r, &x);
        ensure(is_equilibrium_member(&m, &x, tol::MEMBERSHIP).unwrap().member, || format!("membership of a member, case {case}"))?;
        let e = (obs_entropy(&m, &x).unwrap() - vn_entropy(&m).unwrap()).abs();
        ensure(e <= 1e-9, || format!("member entropies, case {case}: {e:e}"))?;
        let other = common::mixed_density(&mut r, n);
        let mix = DensityMatrix::new(m.matrix().scale_real(1.0 - 1e-3).add(&other.matrix().scale_real(1e-3)), vec![n]).unwrap();
        let gap = (obs_entropy(&mix, &x).unwrap() - vn_entropy(&mix).unwrap()).abs();
        if gap <= 1e-10 {
            ensure(is_equilibrium_member(&mix, &x, 1e-6).unwrap().member, || format!("equal entropies without membership, case {case}"))?;
        }
        worst[3] = worst[3].max(e);

        let xt = common::graining(&mut r, n);
        let u = common::unitary(&mut r, n);
        let drop = obs_entropy(&m, &x).unwrap() - obs_entropy(&m.unitary_image(&u).unwrap(), &xt).unwrap();
        ensure(drop <= 1e-9, || format!("member second law, case {case}: drop {drop:e}"))?;
        worst[4] = worst[4].max(drop.max(0.0));
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    let worst: Vec<String> = worst.iter().map(|w| format!("{w:.1e}")).collect();
    Ok(format!("{CASES} cases x 5 properties, worst residuals [{}], {:.1} s", worst.join(", "), elapsed.as_secs_f64()))
}

struct Reference {
    model: Model,
    rho_s: DensityMatrix,
    cfg: ExperimentConfig,
    ledger: ThermoLedger,
    elapsed: Duration,
}

fn reference() -> Reference {
    let cfg = ExperimentConfig::default();
    let model = cfg.validate().unwrap();
    let rho_s = cfg.system_state(model.system_dim()).unwrap();
    let start = Instant::now();
    let ledger = run_open(&model, &OpenOptions::new(cfg.grid.steps, cfg.delta), &rho_s, cfg.betas[0]).unwrap();
    Reference { model, rho_s, cfg, ledger, elapsed: start.elapsed() }
}

fn closure_residual(l: &ThermoLedger, stride: usize) -> f64 {
    let h = &l.hierarchy;
    max_over((0..l.len()).step_by(stride).map(|k| h.gap_cd_tilde[k] - h.gap_cd_tilde_expected[k]))
}

fn hierarchy(r: &Reference) -> Check {
    let l = &r.ledger;
    let h = &l.hierarchy;
    let dim: usize = l.dims.iter().product();
    ensure(dim == 512 && l.len() == 201, || format!("unexpected run shape: dim {dim}, {} points", l.len()))?;
    for k in 0..l.len() {
        let q = h.quadrature_tolerance[k];
        let steps = [
            ("-slack <= sigma_a", -h.slack - h.sigma_a[k], 0.0),
            ("sigma_a <= sigma_b", h.sigma_a[k] - h.sigma_b[k], tol::GAP_AB),
            ("sigma_b <= sigma_c", h.sigma_b[k] - h.sigma_c[k], h.slack + q),
            ("sigma_c <= sigma_d_tilde", h.sigma_c[k] - h.sigma_d_tilde[k], q),
        ];
        for (name, excess, allowed) in steps {
            ensure(excess <= allowed, || format!("{name} fails at t = {}: excess {excess:e} over {allowed:e}", l.times[k]))?;
        }
    }
    let start = Instant::now();
    let fine = run_open(&r.model, &OpenOptions::new(2 * r.cfg.grid.steps, r.cfg.delta), &r.rho_s, r.cfg.betas[0]).unwrap();
    let elapsed = r.elapsed + start.elapsed();
    let (coarse_res, fine_res) = (closure_residual(l, 1), closure_residual(&fine, 2));
    let ratio = coarse_res / fine_res;
    ensure(ratio >= 3.0, || format!("step halving reduced the closure residual only {ratio:.2}x ({coarse_res:e} -> {fine_res:e})"))?;
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "201 points, slack {:.2e}, closure residual {coarse_res:.2e} -> {fine_res:.2e} ({ratio:.1}x), {:.0} s",
        h.slack,
        elapsed.as_secs_f64()
    ))
}

fn gap_identities(r: &Reference) -> Check {
    let l = &r.ledger;
    let h = &l.hierarchy;
    let ab = max_over((0..l.len()).map(|k| h.gap_ab[k] - h.gap_ab_expected[k]));
    ensure(ab <= tol::GAP_AB, || format!("sigma_b - sigma_a vs information: {ab:e}"))?;
    for k in 0..l.len() {
        let e = (h.gap_cd_tilde[k] - h.gap_cd_tilde_expected[k]).abs();
        let allowed = h.quadrature_tolerance[k] + 2.0 * h.r_delta;
        ensure(e <= allowed, || format!("sigma_d_tilde - sigma_c at t = {}: {e:e} over {allowed:e}", l.times[k]))?;
    }
    Ok(format!("ab residual {ab:.1e}, cd residual {:.1e} (r_delta {:.1e})", closure_residual(l, 1), h.r_delta))
}

fn first_law(r: &Reference) -> Check {
    let worst = |l: &ThermoLedger| max_over(l.first_law_residual.iter().copied());
    let open = worst(&r.ledger);
    ensure(open <= r.ledger.first_law_tolerance(), || format!("open run: {open:e} over {:e}", r.ledger.first_law_tolerance()))?;

    let cfg = config("particle.json");
    let model = cfg.validate().unwrap();
    let rho_s = cfg.system_state(model.system_dim()).unwrap();
    let l = run_particle(&model, &OpenOptions::new(cfg.grid.steps, cfg.delta), &rho_s, &cfg.betas, &cfg.mus).unwrap();
    let particle = worst(&l);
    ensure(particle <= l.first_law_tolerance(), || format!("particle run: {particle:e} over {:e}", l.first_law_tolerance()))?;
    let w_chem = l.energy.last().unwrap().w_chem;

    let mut cfg = config("isolated_minimal.json");
    cfg.model = obsent::models::ModelSpec::Custom(obsent::models::CustomSpec {
        segments: vec![obsent::models::MatrixSpec::Real(vec![
            vec![0.0, 0.3, 0.0, 0.0],
            vec![0.3, 0.5, 0.2, 0.0],
            vec![0.0, 0.2, 1.0, 0.1],
            vec![0.0, 0.0, 0.1, 1.6],
        ])],
        dims: None,
        hold: 1,
    });
    let model = cfg.validate().unwrap();
    let mut rr = common::rng(11);
    let psi = common::mixed_density(&mut rr, 4);
    let iso = run_isolated(&model, &IsolatedOptions { grid_steps: 40, delta: 0.5, anchor: None }, IsolatedInitial::State(psi)).unwrap();
    let drift = max_over(iso.energy.iter().map(|e| e - iso.energy[0]));
    ensure(drift <= tol::ENERGY_CONSERVATION, || format!("undriven energy drift {drift:e}"))?;
    Ok(format!(
        "open {open:.1e}, particle {particle:.1e} (W_chem {w_chem:.3e}) within C dt^2 with C = {:.0e}; undriven drift {drift:.1e}",
        tol::FIRST_LAW_C
    ))
}

fn fluctuation_of(cfg: &ExperimentConfig) -> FluctuationReport {
    let model = cfg.validate().unwrap();
    let rho_s = cfg.system_state(model.system_dim()).unwrap();
    let (rho0, x0, xt) = fluctuation_setup(&model, cfg.delta, &cfg.graining.anchors, Some(&rho_s), &cfg.betas).unwrap();
    run_fluctuation(&model, &rho0, &x0, &xt).unwrap()
}

fn fluctuation_theorems() -> Check {
    let mut parts = Vec::new();
    for (label, cfg) in [("quench dim 32", config("fluctuation_quench.json")), ("reference dim 512", ExperimentConfig::default())] {
        let f = fluctuation_of(&cfg);
        ensure(f.ift.valid, || format!("{label}: preconditions do not hold"))?;
        let ift = (f.ift.value - 1.0).abs();
        ensure(ift <= tol::FLUCTUATION, || format!("{label}: |<e^-ds> - 1| = {ift:e}"))?;
        ensure(f.central_residual <= tol::FLUCTUATION, || format!("{label}: central relation {:e}", f.central_residual))?;
        let ratio = f.detailed.max_relative_error(tol::DETAILED_RATIO_FLOOR);
        ensure(ratio <= tol::DETAILED_RATIO, || format!("{label}: detailed ratio {ratio:e}"))?;
        parts.push(format!("{label}: ift {ift:.1e}, central {:.1e}, ratio {ratio:.1e}", f.central_residual));
    }
    Ok(parts.join("; "))
}

fn real_symmetric(r: &mut impl Rng, n: usize) -> HermitianOperator {
    let a = ComplexMatrix::from_fn(n, n, |_, _| C64::new(r.gen_range(-1.0..1.0), 0.0));
    HermitianOperator::new(a.add(&a.adjoint()).scale_real(0.5)).unwrap()
}

fn time_reversal() -> Check {
    let mut r = common::rng(0x7e7a);
    let n = 16;
    let segs = (0..3).map(|_| (common::hermitian(&mut r, n), 2)).collect();
    let p = Protocol::from_segments(2.5, segs, "three segments").unwrap();
    let u = trotter_propagator(&p).unwrap().matrix;
    let u_theta = trotter_propagator(&reversed_protocol(&p)).unwrap().matrix;
    let theta = u_theta.conj().max_abs_diff(&u.adjoint());
    ensure(theta <= 1e-9, || format!("conjugated reversed propagator differs from the adjoint by {theta:e}"))?;
    let recovery = recovery_check(&common::mixed_density(&mut r, n), &p).unwrap();
    ensure(recovery <= 1e-8, || format!("recovery residual {recovery:e}"))?;
    let h = real_symmetric(&mut r, n);
    let x = energy_graining(&h, 0.5, None).unwrap();
    let member = equilibrium_state(&x, &common::probabilities(&mut r, x.len())).unwrap();
    let inv = time_reverse_state(&member).matrix().max_abs_diff(member.matrix());
    ensure(inv <= 1e-10, || format!("equilibrium state changes under reversal by {inv:e}"))?;
    Ok(format!("propagator {theta:.1e}, recovery {recovery:.1e}, equilibrium state {inv:.1e}"))
}

fn effective_temperature() -> Check {
    let two = effective_beta(&HermitianOperator::from_real_diagonal(&[0.0, 1.0]), 0.25).unwrap().beta_star;
    let e = (two - 3f64.ln()).abs();
    ensure(e <= 1e-8, || format!("two-level inversion off by {e:e}"))?;

    let mut r = common::rng(64);
    let h = common::hermitian(&mut r, 64);
    let levels = h.spectrum().unwrap().values.clone();
    let (lo, hi) = (levels[0], levels[levels.len() - 1]);
    let mut last = f64::INFINITY;
    for i in 1..=100 {
        let target = lo + (hi - lo) * i as f64 / 101.0;
        let b = effective_beta_for_spectrum(&levels, target).unwrap().beta_star;
        ensure(b < last, || format!("beta* not decreasing at grid point {i}"))?;
        last = b;
    }

    let energies: Vec<f64> = (0..40).map(|_| r.gen_range(-2.0..2.0)).collect();
    let particles: Vec<f64> = (0..40).map(|_| r.gen_range(0..4) as f64).collect();
    let (beta, mu) = (0.7, 0.3);
    let w = grand_weights(&energies, &particles, beta, beta * mu);
    let u: f64 = w.iter().zip(&energies).map(|(p, e)| p * e).sum();
    let nn: f64 = w.iter().zip(&particles).map(|(p, k)| p * k).sum();
    let g = effective_beta_mu_for_spectrum(&energies, &particles, u, nn).unwrap();
    let grand = (g.beta_star - beta).abs().max((g.mu_star - mu).abs());
    ensure(grand <= 1e-6, || format!("grand fixed point off by {grand:e}"))?;
    Ok(format!("ln 3 to {e:.1e}, 100-point grid monotone, grand recovery {grand:.1e}"))
}

fn counterexample() -> Check {
    let cfg = config("counterexample.json");
    let outcome = execute(&cfg).unwrap();
    let header: Vec<&str> = outcome.ledger_csv.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|c| *c == "sigma_a").unwrap();
    let min_sigma = outcome
        .ledger_csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(col).unwrap().parse::<f64>().unwrap())
        .fold(f64::INFINITY, f64::min);
    let ift = outcome.summary["fluctuation"]["ift_average"].as_f64().unwrap();
    ensure(min_sigma < -1e-6 || (ift - 1.0).abs() > 1e-6, || format!("no violation: min sigma_a {min_sigma:e}, ift {ift}"))?;

    // Coherence inside one outcome also breaks the integral theorem.
    let n = 4;
    let x = CoarseGraining::from_blocks(ComplexMatrix::identity(n), vec![(0, 2), (2, 2)], vec![OutcomeLabel::Index(0), OutcomeLabel::Index(1)]).unwrap();
    let mut m = ComplexMatrix::from_real_diagonal(&[0.3, 0.3, 0.2, 0.2]);
    m.set(0, 1, C64::new(0.25, 0.0));
    m.set(1, 0, C64::new(0.25, 0.0));
    let rho = DensityMatrix::new(m, vec![n]).unwrap();
    let mut r = common::rng(8);
    let p = Protocol::constant(common::hermitian(&mut r, n), 1.3, 1).unwrap();
    let fwd = forward_two_point(&rho, &trotter_propagator(&p).unwrap(), &x, &x).unwrap();
    let within = (ift_average(&fwd).value - 1.0).abs();
    ensure(within > 1e-6, || format!("within-outcome coherence left the theorem intact ({within:e})"))?;
    Ok(format!("cross-outcome coherence: min sigma_a {min_sigma:.2e}, |ift - 1| {:.1e}; within-outcome: |ift - 1| {within:.2e}", (ift - 1.0).abs()))
}

fn determinism() -> Check {
    let cfg = config("fluctuation_quench.json");
    let (a, b) = (execute(&cfg).unwrap(), execute(&cfg).unwrap());
    ensure(a.ledger_csv == b.ledger_csv, || "ledger CSV differs between runs".into())?;
    ensure(a.ft_csv == b.ft_csv, || "FT CSV differs between runs".into())?;
    let dir = tempfile::tempdir().unwrap();
    let mut c = cfg.clone();
    c.output.dir = dir.path().to_path_buf();
    let first = obsent::experiment::write_artifacts(&c, &a).unwrap();
    let bytes: Vec<Vec<u8>> = first.iter().map(|p| std::fs::read(p).unwrap()).collect();
    let again = obsent::experiment::write_artifacts(&c, &b).unwrap();
    for (p, old) in again.iter().zip(&bytes) {
        ensure(std::fs::read(p).unwrap() == *old, || format!("{} differs", p.display()))?;
    }
    Ok(format!("{} bytes of ledger CSV identical across runs", a.ledger_csv.len()))
}

fn main() {
    let total = Instant::now();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, result: Check| {
        match result {
            Ok(detail) => println!("criterion {n} {name}: PASS ({detail})"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({why})");
            }
        }
    };
    report(1, "entropy properties", entropy_properties());
    let reference = reference();
    report(2, "second-law hierarchy", hierarchy(&reference));
    report(3, "gap identities", gap_identities(&reference));
    report(4, "first law", first_law(&reference));
    report(5, "fluctuation theorems", fluctuation_theorems());
    report(6, "time reversal", time_reversal());
    report(7, "effective temperature", effective_temperature());
    report(8, "counterexample", counterexample());
    report(9, "determinism", determinism());
    println!("acceptance: {} of 9 criteria passed in {:.0} s", 9 - failed, total.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
