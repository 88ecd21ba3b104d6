//! Computational calculus for the invertible Fourier integral operator group
//! on the flat cotangent model `T*R^n \ 0`.
//!
//! The crate is organised around one chain of structures:
//!
//! * [`expr`] — expression-tree scalar fields with exact symbolic
//!   differentiation and homogeneity bookkeeping; the substrate for
//!   everything else.
//! * [`geometry`] — exterior calculus on the flat contact models
//!   `R^{2n+1}` and `T*R^n`: forms, Lie derivatives, Reeb fields, associated
//!   metrics and the deformation operators `A`, `B`.
//! * [`contact`] — the group of degree-one homogeneous contact
//!   transformations of `T*R^n \ 0`: Hamiltonian flows, the phase-function
//!   chart `f <-> H_f` and its round trips.
//! * [`symbol`] — truncated polyhomogeneous symbols: graded composition,
//!   adjoints, parametrices and Sobolev distances on the cosphere bundle.
//! * [`fio`] — the invertible FIO group assembled from a contact
//!   transformation and an elliptic symbol through the exact sequence
//!   `I -> (UPsi^{0,k})* -> (UF^{0,k})* -> D_theta -> e`.
//! * [`oracle`] — direct quadrature of the operator integrals, used as
//!   independent ground truth for the symbolic layer.
//! * [`scenario`] — declarative scenario files and the report machinery
//!   behind the `fiocalc` command line tool.

pub mod contact;
pub mod expr;
pub mod fio;
pub mod geometry;
pub mod oracle;
pub mod scenario;
pub mod symbol;

pub use expr::{HomogeneousField, ScalarField, Space};
