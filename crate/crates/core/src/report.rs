//! Frozen CSV column registry and writers for run artifacts.
//!
//! Floats are written with `{:.16e}` (17 significant digits), so a column
//! parses back to the exact `f64` that was computed.

use std::fmt::Write as _;

use crate::fluct::DetailedTable;
use crate::lawsuite::{IsolatedLedger, ThermoLedger};

/// Leading columns of an open-system ledger, in order.
pub const OPEN_COLUMNS: &[&str] = &[
    "time",
    "sigma_a",
    "sigma_b",
    "sigma_c",
    "sigma_d",
    "sigma_d_tilde",
    "gap_ab",
    "gap_ab_expected",
    "gap_bc",
    "gap_bc_expected",
    "gap_cd_tilde",
    "gap_cd_tilde_expected",
    "quadrature_tolerance",
    "r_delta",
    "slack",
    "s_obs_joint",
    "s_sys",
    "s_vn_sys",
    "i_obs",
    "i_quantum",
    "u_s",
    "w",
    "w_chem",
    "q",
    "first_law_residual",
    "line_clausius",
    "line_bath_nonequilibrium",
    "line_correlation",
    "dsigma_d_dt",
];

/// Per-bath columns of an open-system ledger; `{k}` is the 1-based bath index.
pub const BATH_COLUMNS: &[&str] = &["u_b{k}", "q_b{k}", "beta_star_b{k}", "s_obs_b{k}", "clausius_b{k}", "u_binned_b{k}", "epsilon_hat_b{k}"];

/// Extra per-bath columns of particle runs.
pub const PARTICLE_COLUMNS: &[&str] = &["n_b{k}", "mu_star_b{k}", "w_chem_b{k}"];

pub const ISOLATED_COLUMNS: &[&str] = &["time", "u", "w", "s_obs", "sigma", "beta_star", "clausius", "r_delta", "slack", "first_law_residual"];

pub const FT_COLUMNS: &[&str] = &["delta_s", "p_forward", "q_reversed", "ratio", "expected_ratio"];

/// Full header of an open-system ledger with `baths` baths.
pub fn open_header(baths: usize, particles: bool) -> Vec<String> {
    let mut h: Vec<String> = OPEN_COLUMNS.iter().map(|s| s.to_string()).collect();
    for k in 1..=baths {
        let extra = if particles { PARTICLE_COLUMNS } else { &[] };
        h.extend(BATH_COLUMNS.iter().chain(extra).map(|c| c.replace("{k}", &k.to_string())));
    }
    h
}

pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_row(out: &mut String, row: &[f64]) {
    let cells: Vec<String> = row.iter().map(|&x| format_float(x)).collect();
    let _ = writeln!(out, "{}", cells.join(","));
}

fn push_header<S: AsRef<str>>(out: &mut String, header: &[S]) {
    let cells: Vec<&str> = header.iter().map(|s| s.as_ref()).collect();
    let _ = writeln!(out, "{}", cells.join(","));
}

pub fn open_csv(l: &ThermoLedger) -> String {
    let particles = l.baths.iter().any(|b| b.n.is_some());
    let mut out = String::new();
    push_header(&mut out, &open_header(l.baths.len(), particles));
    let h = &l.hierarchy;
    let d = &l.decomposition;
    for k in 0..l.len() {
        let e = &l.energy[k];
        let mut row = vec![
            l.times[k],
            h.sigma_a[k],
            h.sigma_b[k],
            h.sigma_c[k],
            h.sigma_d[k],
            h.sigma_d_tilde[k],
            h.gap_ab[k],
            h.gap_ab_expected[k],
            h.gap_bc[k],
            h.gap_bc_expected[k],
            h.gap_cd_tilde[k],
            h.gap_cd_tilde_expected[k],
            h.quadrature_tolerance[k],
            h.r_delta,
            h.slack,
            l.s_joint[k],
            l.s_sys[k],
            l.s_vn_sys[k],
            l.i_obs[k],
            l.i_quantum[k],
            e.u_s,
            e.w,
            e.w_chem,
            e.q.iter().sum(),
            l.first_law_residual[k],
            d.line_clausius[k],
            d.line_bath_nonequilibrium[k],
            d.line_correlation[k],
            l.dsigma_d_dt[k],
        ];
        for b in &l.baths {
            row.extend([b.u[k], b.q[k], b.beta_star[k], b.s_obs[k], b.clausius[k], b.u_binned[k], b.epsilon_hat[k]]);
            if particles {
                let n = b.n.as_ref().map_or(f64::NAN, |n| n[k]);
                let mu = b.mu_star.as_ref().map_or(f64::NAN, |m| m[k]);
                row.extend([n, mu, b.w_chem[k]]);
            }
        }
        push_row(&mut out, &row);
    }
    out
}

pub fn isolated_csv(l: &IsolatedLedger) -> String {
    let mut out = String::new();
    push_header(&mut out, ISOLATED_COLUMNS);
    for k in 0..l.times.len() {
        push_row(
            &mut out,
            &[
                l.times[k],
                l.energy[k],
                l.work[k],
                l.s_obs[k],
                l.sigma[k],
                l.beta_star[k],
                l.clausius[k],
                l.r_delta[k],
                l.slack[k],
                l.first_law_residual[k],
            ],
        );
    }
    out
}

pub fn ft_csv(t: &DetailedTable) -> String {
    let mut out = String::new();
    push_header(&mut out, FT_COLUMNS);
    for r in &t.rows {
        push_row(&mut out, &[r.delta_s, r.p_forward, r.q_reversed, r.ratio, r.expected_ratio]);
    }
    out
}
