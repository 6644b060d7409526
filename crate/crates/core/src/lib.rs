pub mod agent;
pub mod diff;
pub mod envs;
pub mod koopman;
pub mod metrics;
pub mod rollout;
pub mod trainer;
