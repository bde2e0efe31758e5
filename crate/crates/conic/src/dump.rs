//! Plain-text dump of an [`SdpProblem`] for cross-checking with other solvers.
//!
//! ```text
//! hris-sdp 1
//! blocks <count> <order>...
//! nonneg <count>
//! free <count>
//! objective max <nterms>
//! <var> <coef>
//! constraint <index> <le|ge|eq> <rhs> <nterms>
//! <var> <coef>
//! ```
//!
//! `<var>` is `psd <block> <row> <col>`, `nonneg <i>` or `free <i>`, and
//! floats are written with full round-trip precision.

use std::fmt::Write as _;

use crate::{SdpProblem, Sense, Var};

fn var_str(v: Var) -> String {
    match v {
        Var::Psd { block, row, col } => format!("psd {block} {row} {col}"),
        Var::Nonneg(i) => format!("nonneg {i}"),
        Var::Free(i) => format!("free {i}"),
    }
}

pub fn to_text(p: &SdpProblem) -> String {
    let mut s = String::new();
    let orders: Vec<String> = p.psd_orders().iter().map(|n| n.to_string()).collect();
    let _ = writeln!(s, "hris-sdp 1");
    let _ = writeln!(s, "blocks {} {}", orders.len(), orders.join(" ")) ;
    let _ = writeln!(s, "nonneg {}", p.n_nonneg());
    let _ = writeln!(s, "free {}", p.n_free());
    let _ = writeln!(s, "objective max {}", p.objective().len());
    for &(v, c) in p.objective() {
        let _ = writeln!(s, "{} {:e}", var_str(v), c);
    }
    for (i, con) in p.constraints().iter().enumerate() {
        let sense = match con.sense {
            Sense::Le => "le",
            Sense::Ge => "ge",
            Sense::Eq => "eq",
        };
        let _ = writeln!(s, "constraint {i} {sense} {:e} {}", con.rhs, con.terms.len());
        for &(v, c) in &con.terms {
            let _ = writeln!(s, "{} {:e}", var_str(v), c);
        }
    }
    s
}
