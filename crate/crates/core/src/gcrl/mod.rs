//! Soft actor-critic with a goal-conditioned replay buffer, and the training
//! and evaluation loops for both levels of the hierarchy.

mod buffer;
mod eval;
mod policy;
mod sac;
mod train;

pub use buffer::{load_transitions, read_transitions, save_transitions, write_transitions, Mixing, ReplayBuffer, Source, Transition};
pub use eval::{
    apply, evaluate, run_episode, Command, EpisodeOutcome, EvalSummary, HighLevelPolicy, HoldPolicy, LearnedHighPolicy, RandomHighPolicy,
};
pub use policy::{GaussianPolicy, PolicySample, LOG_STD_MAX, LOG_STD_MIN};
pub use sac::{actor_loss_and_grad, critic_loss_and_grad, load_policy, sac_update, InputNorm, soft_target, SacAgent, SacConfig, SacDiagnostics};
pub use train::{
    high_policy_input, train_high, train_low, HighActionMap, HighCurveRow, HighTraining, LowCurveRow, LowPolicyController, LowTraining,
    CURVE_WINDOW,
};
