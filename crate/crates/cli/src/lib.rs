//! Configuration, caching, and stage orchestration behind the `rebase`
//! binary. Everything the binary does is callable from here, so integration
//! tests drive the pipeline in-process.

pub mod config;
pub mod events;
pub mod pipeline;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VALIDATION: i32 = 1;
    pub const STAGE: i32 = 2;
    pub const EXTERNAL: i32 = 3;
}
