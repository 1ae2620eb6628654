//! The maxout expectation `F_q(rho) = E[max(h) * max(h')]` for two `q`-vectors
//! of standard normals whose like-indexed coordinates have correlation `rho`.

pub mod oracle;
pub mod quadrature;
pub mod table;

pub use oracle::{closed_form_f2, mc_oracle_fq, McEstimate};
pub use quadrature::{
    argmax_probabilities, fq_at_minus_one, fq_at_plus_one, fq_interior, term_diff_argmax,
    term_same_argmax, QuadratureGrid, Scheme,
};
pub use table::{build_table, rho_grid, FqTable, TableMeta};
