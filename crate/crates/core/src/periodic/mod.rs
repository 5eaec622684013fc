//! Periodic solutions: DAE time stepping in raw or fixed-frame coordinates,
//! single shooting, and branches of `T`-pairs emanating from zeros of the seed map.

mod continuation;
mod integrate;

pub use continuation::{
    branch_seeds, check_seed, continue_branch, find_tpair, shooting_residual, verify_pair, Branch,
    ContinuationConfig, Seed, SeedMap, Shot, ShootingConfig, TPair, Termination, DEFAULT_STEPS,
};
pub use integrate::{Flow, Mode, INIT_TOL};
