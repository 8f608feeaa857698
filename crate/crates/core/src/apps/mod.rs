//! Applications built on the rounders: online multigraph edge coloring and
//! multi-stage multi-cover.

pub mod coloring;
pub mod cover;
