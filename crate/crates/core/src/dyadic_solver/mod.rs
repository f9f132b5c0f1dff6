//! One-step dyadic Bellman equation, the λ-ladder across levels and the
//! resulting stationary impulse policy.

mod bellman;
mod ladder;
mod policy;

pub use bellman::{
    bellman_operator, solve_dyadic_bellman, solve_dyadic_bellman_with, verify_fixed_point,
    verify_fixed_point_with, DyadicSolution, SolveMethod, SolverOptions,
};
pub use ladder::{lambda_ladder, lambda_ladder_with, Case, LadderLevel, LambdaLadder, LADDER_TOLERANCE};
pub use policy::{enumerate_policies, extract_policy, policy_operator, policy_rate, ImpulsePolicy, PolicyCheck};
