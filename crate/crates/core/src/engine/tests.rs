use std::collections::BTreeMap;

use super::*;
use crate::episode::{serialize_episode, Terminal};
use crate::provider::{FnProvider, ProviderError, Recorder, ScriptedPolicy, ScriptedProvider};
use crate::sandbox::{Behavior, BehaviorKind, PassCondition, Scenario};
use crate::types::{args_digest, ObservationStatus, ParamSpec, State};

fn call(tool: &str, args: &str) -> String {
    format!(r#"{{"thought":"use {tool}","action":"{tool}","args":{args}}}"#)
}

fn finish(answer: &str) -> String {
    format!(r#"{{"thought":"done","action":"Finish","args":{{"Answer":"{answer}"}}}}"#)
}

fn scenario(behaviors: Vec<(&str, Vec<Behavior>)>) -> Scenario {
    Scenario {
        id: "t".into(),
        instruction: Instruction::new("t", "What is the weather in Miami?"),
        tools: vec![
            ToolSpec::new("tool_a", "Primary weather service.")
                .with_param(ParamSpec::required("city", "City")),
            ToolSpec::new("tool_b", "Backup weather service.")
                .with_param(ParamSpec::required("city", "City")),
        ],
        behaviors: behaviors
            .into_iter()
            .map(|(k, v)| (k.to_owned(), v))
            .collect::<BTreeMap<_, _>>(),
        pass_condition: PassCondition::ContainsAll(vec!["29".into()]),
        policy: None,
        solvable: true,
    }
}

fn success(payload: &str) -> Behavior {
    Behavior::forever(BehaviorKind::Success {
        payload: payload.into(),
    })
}

fn error(code: u16) -> Behavior {
    Behavior::forever(BehaviorKind::Error {
        code,
        message: "Internal Server Error".into(),
    })
}

fn run(method: Method, provider: &dyn Provider, s: &Scenario, config: &EngineConfig) -> Episode {
    let mut session = s.session();
    let ep = run_episode(
        method,
        provider,
        &PromptSet::default(),
        &s.instruction,
        &s.tools,
        config,
        &mut session,
    )
    .unwrap();
    ep.validate().unwrap();
    ep
}

fn happy_policy() -> ScriptedPolicy {
    ScriptedPolicy::new()
        .on(
            "### ROLE: state_manager",
            r#"{"verdict":"success","summary":"Miami: sunny 29C"}"#,
        )
        .on_regex(
            r"(?s)ROLE: router.*(sunny 29C)",
            finish("Sunny, 29C in Miami"),
        )
        .on("ROLE: router", call("tool_a", r#"{"city":"Miami"}"#))
}

#[test]
fn happy_path_all_methods() {
    let s = scenario(vec![("tool_a", vec![success("sunny 29C")])]);
    let provider = ScriptedProvider::new(happy_policy());
    for method in Method::ALL {
        let ep = run(method, &provider, &s, &EngineConfig::for_method(method));
        assert_eq!(ep.steps.len(), 2, "{method}");
        assert_eq!(
            ep.terminal,
            Some(Terminal::Finished {
                answer: "Sunny, 29C in Miami".into()
            })
        );
        assert_eq!(ep.method_label, method.label());
    }
}

#[test]
fn never_finishing_policy_hits_budget() {
    let s = scenario(vec![("tool_a", vec![success("cloudy")])]);
    let provider = ScriptedProvider::new(
        ScriptedPolicy::new()
            .on(
                "ROLE: state_manager",
                r#"{"verdict":"success","summary":"cloudy"}"#,
            )
            .with_default(call("tool_a", r#"{"city":"Miami"}"#)),
    );
    for method in Method::ALL {
        let config = EngineConfig::for_method(method);
        let ep = run(method, &provider, &s, &config);
        assert_eq!(ep.steps.len() as u32, config.step_budget, "{method}");
        assert_eq!(ep.terminal, Some(Terminal::BudgetExhausted));
    }
    assert_eq!(EngineConfig::for_method(Method::Sum2Act).step_budget, 30);
    assert_eq!(EngineConfig::for_method(Method::Dfsdt).step_budget, 200);
}

#[test]
fn failing_tool_then_backup() {
    let s = scenario(vec![
        ("tool_a", vec![error(500)]),
        ("tool_b", vec![success("sunny 29C")]),
    ]);
    let policy = ScriptedPolicy::new()
        .on_regex(
            r"(?s)ROLE: state_manager.*Status: ToolError",
            r#"{"verdict":"failure","reason":"primary service is down (HTTP 500)"}"#,
        )
        .on(
            "ROLE: state_manager",
            r#"{"verdict":"success","summary":"Miami: sunny 29C"}"#,
        )
        .on_regex(
            r"(?s)ROLE: router.*sunny 29C",
            finish("Sunny, 29C in Miami"),
        )
        .on_regex(
            r"(?s)ROLE: router.*Failure history:\n1\. \[step 1\] tool_a\(",
            call("tool_b", r#"{"city":"Miami"}"#),
        )
        .on("ROLE: router", call("tool_a", r#"{"city":"Miami"}"#));
    let ep = run(
        Method::Sum2Act,
        &ScriptedProvider::new(policy),
        &s,
        &EngineConfig::default(),
    );
    assert_eq!(ep.steps.len(), 3);
    assert_eq!(ep.steps[0].action.name(), "tool_a");
    assert_eq!(
        ep.steps[0].observation.as_ref().unwrap().status,
        ObservationStatus::ToolError
    );
    assert_eq!(ep.steps[1].action.name(), "tool_b");
    assert!(ep.steps[2].action.is_finish());
    let last = &ep.steps[2].state;
    assert_eq!(last.failure_history.len(), 1);
    let f = &last.failure_history[0];
    assert_eq!((f.tool_name.as_str(), f.step), ("tool_a", 1));
    assert_eq!(f.reason, "primary service is down (HTTP 500)");
    assert_eq!(
        f.args_digest,
        args_digest(&crate::types::args([("city", "Miami")]))
    );
    assert_eq!(last.current_results.len(), 1);
    assert!(ep.is_finished());
}

#[test]
fn router_sees_every_earlier_failure() {
    let s = scenario(vec![
        ("tool_a", vec![error(503)]),
        ("tool_b", vec![error(502)]),
    ]);
    let recorder = Recorder::new(ScriptedProvider::new(
        ScriptedPolicy::new()
            .on("ROLE: state_manager", "not json")
            .on_regex(
                r"(?s)ROLE: router.*tool_a\(",
                call("tool_b", r#"{"city":"Miami"}"#),
            )
            .on("ROLE: router", call("tool_a", r#"{"city":"Miami"}"#)),
    ));
    let ep = run(
        Method::Sum2Act,
        &recorder,
        &s,
        &EngineConfig::default().with_budget(6),
    );
    let router_prompts: Vec<String> = recorder
        .prompts()
        .into_iter()
        .filter(|p| p.starts_with("### ROLE: router") && !p.contains("### CORRECTION"))
        .collect();
    assert_eq!(router_prompts.len(), 6);
    for (t, prompt) in router_prompts.iter().enumerate() {
        let before = if t == 0 {
            State::initial()
        } else {
            ep.steps[t - 1].state.clone()
        };
        for f in &before.failure_history {
            assert!(
                prompt.contains(&f.render()),
                "step {} lacks {}",
                t + 1,
                f.render()
            );
        }
    }
    assert_eq!(ep.steps.last().unwrap().state.failure_history.len(), 2);
}

#[test]
fn react_window_drops_oldest_entries() {
    let s = scenario(vec![(
        "tool_a",
        vec![success(&format!("MARK-{}", "x".repeat(1000)))],
    )]);
    let recorder = Recorder::new(ScriptedProvider::new(
        ScriptedPolicy::new().with_default(call("tool_a", r#"{"city":"Miami"}"#)),
    ));
    let mut config = EngineConfig::for_method(Method::React).with_budget(6);
    config.react_memory_window_chars = 2500;
    let ep = run(Method::React, &recorder, &s, &config);
    assert_eq!(ep.terminal, Some(Terminal::BudgetExhausted));
    let prompts = recorder.prompts();
    assert_eq!(prompts.len(), 6);
    // Each entry is a bit over 1000 chars: only the two newest fit.
    assert_eq!(prompts[5].matches("MARK-").count(), 2);
    assert_eq!(prompts[1].matches("MARK-").count(), 1);
    assert!(prompts[0].contains("(no actions yet)"));
    for step in &ep.steps {
        assert!(step.state.is_initial());
    }
}

#[test]
fn dfsdt_tries_sibling_after_failure() {
    let s = scenario(vec![
        ("tool_a", vec![error(500)]),
        ("tool_b", vec![success("sunny 29C")]),
    ]);
    let recorder = Recorder::new(ScriptedProvider::new(
        ScriptedPolicy::new()
            .on(
                "Depth 0, branch 1 of 3",
                call("tool_a", r#"{"city":"Miami"}"#),
            )
            .on(
                "Depth 0, branch 2 of 3",
                call("tool_b", r#"{"city":"Miami"}"#),
            )
            .on("Depth 1, branch 1 of 3", finish("Sunny, 29C")),
    ));
    let ep = run(
        Method::Dfsdt,
        &recorder,
        &s,
        &EngineConfig::for_method(Method::Dfsdt),
    );
    assert_eq!(ep.steps.len(), 3);
    let positions: Vec<(u32, u32)> = ep
        .steps
        .iter()
        .map(|st| st.search.map(|p| (p.depth, p.branch)).unwrap())
        .collect();
    assert_eq!(positions, [(0, 1), (0, 2), (1, 1)]);
    assert!(ep.is_finished());
    let prompts = recorder.prompts();
    // The sibling's prompt carries nothing from the failed branch.
    assert!(!prompts[1].contains("Internal Server Error"));
    assert!(!prompts[1].contains("Action: tool_a"));
    assert!(prompts[2].contains("sunny 29C"));
}

#[test]
fn dfsdt_single_child_exhausts_tree() {
    let s = scenario(vec![("tool_a", vec![error(500)])]);
    let provider = ScriptedProvider::new(
        ScriptedPolicy::new().with_default(call("tool_a", r#"{"city":"Miami"}"#)),
    );
    let mut config = EngineConfig::for_method(Method::Dfsdt);
    config.dfsdt_max_children = 1;
    let ep = run(Method::Dfsdt, &provider, &s, &config);
    assert_eq!(ep.steps.len(), 1);
    assert_eq!(ep.terminal, Some(Terminal::BudgetExhausted));
}

#[test]
fn dfsdt_restart_backtracks_to_parent() {
    let s = scenario(vec![
        ("tool_a", vec![success("partial")]),
        ("tool_b", vec![success("sunny 29C")]),
    ]);
    let provider = ScriptedProvider::new(
        ScriptedPolicy::new()
            .on(
                "Depth 0, branch 1 of 2",
                call("tool_a", r#"{"city":"Miami"}"#),
            )
            .on("Depth 1, branch", r#"{"action":"Restart","args":{}}"#)
            .on(
                "Depth 0, branch 2 of 2",
                call("tool_b", r#"{"city":"Miami"}"#),
            )
            .on("Depth 2", finish("never reached")),
    );
    let mut config = EngineConfig::for_method(Method::Dfsdt);
    config.dfsdt_max_children = 2;
    let ep = run(Method::Dfsdt, &provider, &s, &config);
    let positions: Vec<(u32, u32)> = ep
        .steps
        .iter()
        .map(|st| st.search.map(|p| (p.depth, p.branch)).unwrap())
        .collect();
    // Two restarts use up the child's branches, then the root's second branch
    // is tried and its child restarts twice as well.
    assert_eq!(positions, [(0, 1), (1, 1), (1, 2), (0, 2), (1, 1), (1, 2)]);
    assert_eq!(ep.terminal, Some(Terminal::BudgetExhausted));
}

#[test]
fn unparseable_router_aborts() {
    let s = scenario(vec![("tool_a", vec![success("x")])]);
    let provider = ScriptedProvider::new(
        ScriptedPolicy::new().with_default("I think we should call the weather API."),
    );
    for method in Method::ALL {
        let ep = run(method, &provider, &s, &EngineConfig::for_method(method));
        assert!(ep.steps.is_empty());
        match ep.terminal {
            Some(Terminal::AbortedParseFailure { ref reason }) => {
                assert!(reason.contains("action"))
            }
            ref other => panic!("{other:?}"),
        }
    }
}

#[test]
fn provider_errors_become_terminal_status() {
    let s = scenario(vec![("tool_a", vec![success("x")])]);
    let provider = FnProvider(
        |_: &crate::provider::CompletionRequest| -> Result<String, ProviderError> {
            Err(ProviderError::Unavailable {
                attempts: 4,
                last_error: "connection refused".into(),
            })
        },
    );
    let ep = run(Method::Sum2Act, &provider, &s, &EngineConfig::default());
    assert!(matches!(
        ep.terminal,
        Some(Terminal::AbortedParseFailure { .. })
    ));
}

#[test]
fn replay_is_byte_identical() {
    let s = scenario(vec![
        ("tool_a", vec![error(500)]),
        ("tool_b", vec![success("sunny 29C")]),
    ]);
    let provider = ScriptedProvider::new(
        ScriptedPolicy::new()
            .on_regex(
                r"(?s)ROLE: router.*tool_a\(",
                call("tool_b", r#"{"city":"Miami"}"#),
            )
            .on("ROLE: router", call("tool_a", r#"{"city":"Miami"}"#))
            .with_default(r#"{"verdict":"failure","reason":"no"}"#),
    );
    for method in Method::ALL {
        let config = EngineConfig::for_method(method).with_budget(8);
        let a = serialize_episode(&run(method, &provider, &s, &config)).unwrap();
        let b = serialize_episode(&run(method, &provider, &s, &config)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn config_validation() {
    let s = scenario(vec![]);
    let provider = ScriptedProvider::new(ScriptedPolicy::new());
    let mut session = s.session();
    for config in [
        EngineConfig::default().with_budget(0),
        EngineConfig {
            state_cap_chars: 100,
            ..EngineConfig::default()
        },
        EngineConfig {
            dfsdt_max_children: 0,
            ..EngineConfig::default()
        },
    ] {
        let r = run_episode(
            Method::Sum2Act,
            &provider,
            &PromptSet::default(),
            &s.instruction,
            &s.tools,
            &config,
            &mut session,
        );
        assert!(matches!(r, Err(EpisodeError::Config(_))));
    }
    assert!(run_episode(
        Method::React,
        &provider,
        &PromptSet::default(),
        &s.instruction,
        &[],
        &EngineConfig::default(),
        &mut session
    )
    .is_err());
}

#[test]
fn method_labels_round_trip() {
    for m in Method::ALL {
        assert_eq!(m.label().parse::<Method>().unwrap(), m);
    }
    assert!("bfs".parse::<Method>().is_err());
}
