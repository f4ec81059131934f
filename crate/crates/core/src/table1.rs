//! Published measurement and post-processing figures, recomputed.
//!
//! The published counts, error rates and correction efficiencies are baked in
//! as constants; the finite-key and bias-optimization code is run on them and
//! each result is set against the published value.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bias::{improvement, optimize_bias, RateModel};
use crate::error::Result;
use crate::finite_key::{key_length, key_rate, FiniteKeyInput};

pub const RAW_KEY: u64 = 34_644;
pub const N_X: u64 = 1_395;
pub const N_Z: u64 = 22_300;
pub const F_X: f64 = 1.1;
pub const F_Z: f64 = 1.12;
pub const EPS_PER_BASIS: f64 = 0.003;
pub const EPS_PH: f64 = 6e-3;
pub const THETA_X: f64 = 0.02;
pub const THETA_Z: f64 = 0.019;
pub const E_BX: f64 = 0.069;
pub const E_BZ: f64 = 0.065;
pub const Q_ACT: f64 = 0.8;
pub const Q_OPT: f64 = 0.79;
pub const FINAL_KEY: u64 = 4_293;
pub const IMPROVEMENT_PCT: f64 = 14.8;
pub const RATE_PER_RAW: f64 = 0.124;
pub const UNBIASED_RATE_PER_RAW: f64 = 0.108;
pub const EFFECTIVE_TIME_S: f64 = 10_206.0;
pub const RATE_PER_S: f64 = 0.42;
pub const ASYMPTOTIC_IMPROVEMENT_PCT: f64 = 36.0;
pub const PROJECTED_RAW: u64 = 1_000_000;
pub const PROJECTED_Q_OPT: f64 = 0.96;
pub const PROJECTED_IMPROVEMENT_PCT: f64 = 71.0;

/// Measured inputs.
pub fn reference_input() -> FiniteKeyInput<f64> {
    FiniteKeyInput {
        n_x: N_X,
        n_z: N_Z,
        e_bx: E_BX,
        e_bz: E_BZ,
        f_x: F_X,
        f_z: F_Z,
        eps_per_basis: EPS_PER_BASIS,
    }
}

/// The same raw key sifted without bias: half survives, split evenly.
pub fn unbiased_input() -> FiniteKeyInput<f64> {
    FiniteKeyInput {
        n_x: RAW_KEY / 4,
        n_z: RAW_KEY / 4,
        ..reference_input()
    }
}

/// Count model over the measured raw key.
pub fn reference_model(raw_count: u64, asymptotic: bool) -> RateModel<f64> {
    RateModel {
        raw_count,
        e_bx: E_BX,
        e_bz: E_BZ,
        f_x: F_X,
        f_z: F_Z,
        eps_per_basis: EPS_PER_BASIS,
        asymptotic,
    }
}

/// Symmetric asymptotic model: both bases share the mean error rate and
/// efficiency, so the key is proportional to the sift factor.
pub fn symmetric_asymptotic_model(raw_count: u64) -> RateModel<f64> {
    let e = (E_BX + E_BZ) / 2.0;
    let f = (F_X + F_Z) / 2.0;
    RateModel {
        raw_count,
        e_bx: e,
        e_bz: e,
        f_x: f,
        f_z: f,
        eps_per_basis: EPS_PER_BASIS,
        asymptotic: true,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table1Options {
    pub asymptotic: bool,
    /// Also project the optimum for this raw key size.
    pub raw: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub quantity: String,
    pub published: Option<f64>,
    pub computed: f64,
}

impl Table1Row {
    fn new(quantity: impl Into<String>, published: Option<f64>, computed: f64) -> Self {
        Table1Row {
            quantity: quantity.into(),
            published,
            computed,
        }
    }

    pub fn delta(&self) -> Option<f64> {
        self.published.map(|p| self.computed - p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Report {
    pub rows: Vec<Table1Row>,
}

impl Table1Report {
    pub fn get(&self, quantity: &str) -> Option<&Table1Row> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<42} {:>12} {:>12} {:>10}", "quantity", "published", "computed", "delta");
        for r in &self.rows {
            let published = r.published.map_or("-".into(), |p| format!("{p:.4}"));
            let delta = r.delta().map_or("-".into(), |d| format!("{d:+.4}"));
            let _ = writeln!(out, "{:<42} {:>12} {:>12.4} {:>10}", r.quantity, published, r.computed, delta);
        }
        out
    }
}

pub fn table1(options: &Table1Options) -> Result<Table1Report> {
    let measured = key_length(&reference_input())?;
    let unbiased = key_length(&unbiased_input())?;
    let model = reference_model(RAW_KEY, false);
    let optimum = optimize_bias(&model)?;

    let mut rows = vec![
        Table1Row::new("final key [bits]", Some(FINAL_KEY as f64), measured.final_key_len as f64),
        Table1Row::new("key rate [bit/raw]", Some(RATE_PER_RAW), key_rate(&measured, RAW_KEY)),
        Table1Row::new(
            "key rate [bit/s]",
            Some(RATE_PER_S),
            measured.final_key_len as f64 / EFFECTIVE_TIME_S,
        ),
        Table1Row::new("theta_x", Some(THETA_X), measured.theta_x),
        Table1Row::new("theta_z", Some(THETA_Z), measured.theta_z),
        Table1Row::new("eps_ph", Some(EPS_PH), measured.eps_ph),
        Table1Row::new(
            "unbiased key rate [bit/raw]",
            Some(UNBIASED_RATE_PER_RAW),
            key_rate(&unbiased, RAW_KEY),
        ),
        Table1Row::new(
            "improvement, measured counts [%]",
            Some(IMPROVEMENT_PCT),
            100.0 * (measured.secure_bits / unbiased.secure_bits - 1.0),
        ),
        Table1Row::new(
            "improvement at q_act, count model [%]",
            Some(IMPROVEMENT_PCT),
            improvement(&model, Q_ACT)?,
        ),
        Table1Row::new("q_opt", Some(Q_OPT), optimum.q_opt),
        Table1Row::new("final key at q_opt [bits]", None, optimum.final_key_len as f64),
    ];

    if options.asymptotic {
        rows.push(Table1Row::new(
            "asymptotic improvement at q_act [%]",
            Some(ASYMPTOTIC_IMPROVEMENT_PCT),
            improvement(&symmetric_asymptotic_model(RAW_KEY), Q_ACT)?,
        ));
        rows.push(Table1Row::new(
            "asymptotic improvement, measured error rates [%]",
            None,
            improvement(&reference_model(RAW_KEY, true), Q_ACT)?,
        ));
    }

    if let Some(raw) = options.raw {
        let projected = reference_model(raw, false);
        let opt = optimize_bias(&projected)?;
        let (q_pub, imp_pub) = if raw == PROJECTED_RAW {
            (Some(PROJECTED_Q_OPT), Some(PROJECTED_IMPROVEMENT_PCT))
        } else {
            (None, None)
        };
        rows.push(Table1Row::new(format!("q_opt, raw {raw}"), q_pub, opt.q_opt));
        rows.push(Table1Row::new(
            format!("improvement at q_opt, raw {raw} [%]"),
            imp_pub,
            improvement(&projected, opt.q_opt)?,
        ));
    }

    Ok(Table1Report { rows })
}
