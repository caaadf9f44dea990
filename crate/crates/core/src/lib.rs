//! Mixed-precision quantization co-exploration: bitwidth-scheme search under
//! latency-proxy constraints, parametric hardware simulators, bit-exact packed
//! kernels and bare-metal deployment code generation.

pub mod codegen;
pub mod container;
pub mod engine;
pub mod eval;
pub mod explorer;
pub mod hwsim;
pub mod kernels;
pub mod model_ir;
pub mod proxy;
pub mod quant;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod surrogate;
