//! Prompt assembly, plan parsing and decision backends.

mod backend;
mod plan;
mod policy;
mod prompt;
mod remote;

pub use backend::{decide, make_backend, BackendConfig, BackendKind, Decision, DecisionBackend};
pub use plan::{parse_action_plan, parse_reply_json, ActionPlan, AvoidStep, TetrisMove, TetrisStep};
pub use policy::{
    first_safe_decide, first_safe_index, plan_for, scripted_decide, scripted_decide_with, scripted_index, TetrisWeights,
};
pub use prompt::{assemble_prompt, render, PromptBundle, TemplateId};
pub use remote::{remote_decide, RemoteClient, RemoteReply, API_KEY_ENV};
