//! An abstract machine for a small dynamically typed IR with multiple
//! dispatch, a specializing JIT compiler, type inference, stability
//! analyses and a differential fuzzer comparing the two semantics.

pub mod analysis;
pub mod fuzz;
pub mod infer;
pub mod interp;
pub mod ir;
pub mod jit;
pub mod textio;
pub mod typesys;
