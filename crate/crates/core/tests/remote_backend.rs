#[path = "support/mock_chat.rs"]
mod mock_chat;

use std::collections::BTreeMap;

use apex_core::decision::{
    assemble_prompt, decide, make_backend, remote_decide, ActionPlan, BackendConfig, PromptBundle, TemplateId, API_KEY_ENV,
};
use apex_core::Error;
use mock_chat::{Behavior, MockChat};

fn bundle() -> PromptBundle {
    let ctx: BTreeMap<String, String> = [("state".to_string(), "{}".to_string()), ("available_move".to_string(), "stay".to_string())]
        .into_iter()
        .collect();
    assemble_prompt(TemplateId::Avoid, &ctx, "No salient interactions detected.", "- stay: Safe").unwrap()
}

fn config(server: &MockChat) -> BackendConfig {
    let mut cfg = BackendConfig::remote(server.base_url.clone(), "mock-model");
    cfg.timeout_s = 0.5;
    cfg.retries = 2;
    cfg.backoff_ms = 10;
    cfg
}

fn with_key() {
    std::env::set_var(API_KEY_ENV, "test-key");
}

#[test]
fn echoed_plan_round_trips() {
    with_key();
    let server = MockChat::start(Behavior::Reply("```json\n{\"move\": \"NE\", \"duration\": 1.0}\n```".into()));
    let reply = remote_decide(&bundle(), &config(&server)).unwrap();
    assert!(reply.latency_s > 0.0);
    assert_eq!(reply.attempts, 1);

    let mut backend = make_backend(&config(&server)).unwrap();
    let d = decide(backend.as_mut(), &bundle(), &[]);
    assert_eq!(d.plan.unwrap().to_json(), r#"{"move":"NE","duration":1.0}"#);
    assert!(d.raw_text.unwrap().starts_with("```json"));

    let body = server.last_body.lock().unwrap().clone().unwrap();
    assert_eq!(body["model"], "mock-model");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][0]["content"], "You are an AI robot that avoids dynamic obstacles.");
    assert_eq!(body["messages"][1]["role"], "user");
    assert_eq!(server.last_auth.lock().unwrap().as_deref(), Some("Bearer test-key"));
}

#[test]
fn unreachable_server_gives_up_after_three_attempts() {
    with_key();
    let server = MockChat::start(Behavior::Drop);
    let err = remote_decide(&bundle(), &config(&server)).unwrap_err();
    assert!(matches!(err, Error::Backend(_)), "{err}");
    assert_eq!(server.hits(), 3);
}

#[test]
fn timeout_is_a_backend_error() {
    with_key();
    let server = MockChat::start(Behavior::Hang);
    let mut cfg = config(&server);
    cfg.retries = 0;
    cfg.timeout_s = 0.2;
    let err = remote_decide(&bundle(), &cfg).unwrap_err();
    assert!(matches!(err, Error::Backend(_)));
}

#[test]
fn server_errors_are_retried() {
    with_key();
    let server = MockChat::start(Behavior::FlakyThenReply(2, r#"{"move":"stay","duration":1.0}"#.into()));
    let reply = remote_decide(&bundle(), &config(&server)).unwrap();
    assert_eq!(reply.attempts, 3);
    let mut backend = make_backend(&config(&server)).unwrap();
    assert_eq!(decide(backend.as_mut(), &bundle(), &[]).plan.unwrap(), ActionPlan::stay(1.0));
}

#[test]
fn client_errors_are_not_retried() {
    with_key();
    let server = MockChat::start(Behavior::Status(400));
    assert!(matches!(remote_decide(&bundle(), &config(&server)), Err(Error::Backend(_))));
    assert_eq!(server.hits(), 1);
}

#[test]
fn unparsable_reply_is_kept_verbatim() {
    with_key();
    let server = MockChat::start(Behavior::Reply("I would go north.".into()));
    let mut backend = make_backend(&config(&server)).unwrap();
    let d = decide(backend.as_mut(), &bundle(), &[]);
    assert!(matches!(d.plan, Err(Error::PlanParse(_))));
    assert_eq!(d.raw_text.as_deref(), Some("I would go north."));
}
