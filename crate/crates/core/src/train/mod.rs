//! Centralised-training, decentralised-execution learner.

mod env;
mod gae;
mod ppo;
mod reward;
mod rollout;
mod trainer;

pub use env::{episode_scenario, free_flow_probe, TrainingEnv};
pub use gae::{gae, normalize};
pub use ppo::{actor_loss, actor_loss_grad, critic_loss_grad, ActorSample, ActorStats, CriticSample};
pub use reward::{agent_reward, components, RewardConfig};
pub use rollout::{run_episode, AgentStep, Behaviour, Episode, EpisodeStats, StepRecord};
pub use trainer::{
    collect, evaluate, train, train_with_progress, write_curve_csv, CurvePoint, TrainConfig, TrainOutcome,
    VALIDATION_SEED_BASE,
};
