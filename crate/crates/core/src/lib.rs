//! Adaptive nonconforming finite elements for planar Laplace eigenvalue
//! problems.
//!
//! The crate discretizes `-Δu = λu` with homogeneous Dirichlet conditions on
//! polygonal domains using the lowest-order Crouzeix–Raviart (CR) element,
//! whose degrees of freedom sit on edge midpoints and whose discrete
//! eigenvalues approximate the exact ones from below on fine enough meshes.
//! A conforming piecewise-linear space on the same mesh is kept alongside as
//! a certified upper-bound companion and as the target of gap measurements.
//!
//! The pieces fit together like this:
//!
//! * [`mesh`] — conforming triangulations with newest-vertex bisection;
//! * [`sparse`] — symmetric CSR matrices and a sparse LDLᵀ factorization;
//! * [`spaces`] — CR and conforming P1 spaces, assembly, interpolation and
//!   gradient-averaging postprocessing;
//! * [`eigensolve`] — a shift-inverted block iteration for the smallest
//!   eigenpairs of `A x = λ M x`;
//! * [`estimators`] — per-element error indicators driving adaptivity;
//! * [`subspace`] — energy-norm gaps between discrete invariant subspaces
//!   and auditable eigenvalue error bounds;
//! * [`adapt`] — cluster detection, Dörfler marking and the adaptive loop,
//!   designed to stay robust when eigenvalues are multiple or clustered.

pub mod adapt;
pub mod eigensolve;
pub mod estimators;
pub mod mesh;
pub mod spaces;
pub mod sparse;
pub mod subspace;
