//! Criterion benchmarks for residual and Jacobian assembly, the sparse solve and a full time step; see `benches/`.
