//! C ABI surface. Populated alongside the core pipeline.
