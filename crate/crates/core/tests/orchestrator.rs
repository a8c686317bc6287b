mod common;

use std::sync::Arc;
use std::time::Duration;

use common::*;
use modelport::metadata::{ComponentSpec, ErrorCode};
use modelport::orchestrator::{OrchestratorError, VersionSelector};
use modelport::registry::PublishPackage;
use modelport::runner::FixtureHandlerSpec;
use modelport::samples;
use serde_json::json;

fn publish_vqg(s: &Svc, slug: &str) -> u64 {
    s.service
        .registry
        .publish_package(KEY_ALICE, slug, "v", None, &samples::vqg_package())
        .unwrap()
        .version_id
}

#[test]
fn vqg_session_matches_fixture_oracle() {
    let s = svc();
    publish_vqg(&s, "vqg");
    let orch = &s.service.orchestrator;
    let oracle = vqg_oracle(&vqg_images(), first_two);

    let session = orch.create_session("vqg", VersionSelector::Live).unwrap();
    assert_eq!((session.cursor, session.step_count, session.version_id), (1, 3, 1));
    assert_eq!(canonical(&session.results[0].components), canonical(&oracle[0]));

    let detected = orch.submit_step(&session.session_id, 0, vec![vqg_images()]).unwrap();
    assert_eq!(canonical(&detected.components), canonical(&oracle[1]));
    assert!(detected.state_token.is_some());

    let selection = samples::selection_payload(&detected.components[0], first_two);
    let questions = orch.submit_step(&session.session_id, 1, vec![selection]).unwrap();
    assert_eq!(canonical(&questions.components), canonical(&oracle[2]));

    let done = orch.session(&session.session_id).unwrap();
    assert!(done.is_complete());
    assert_eq!(done.results.len(), 3);
    assert_eq!(done.payloads.len(), 2);

    // The park image maps to dog and frisbee; questions follow the template.
    let park = &questions.components[0].embedded_data.as_ref().unwrap()["images"][0];
    assert_eq!(park["name"], "park.jpg");
    assert_eq!(park["text"], "What is the dog doing?\nWhat is the frisbee doing?");
}

#[test]
fn invalid_payloads_never_reach_a_worker() {
    let s = svc();
    publish_vqg(&s, "vqg");
    let orch = &s.service.orchestrator;
    let session = orch.create_session("vqg", VersionSelector::Live).unwrap();
    let spawned = orch.launcher().spawn_count();
    let executed = orch.execution_count();

    let six: Vec<(String, &[u8])> = (0..6).map(|i| (format!("{i}.jpg"), PARK)).collect();
    let six: Vec<(&str, &[u8])> = six.iter().map(|(n, b)| (n.as_str(), *b)).collect();
    let err = orch
        .submit_step(&session.session_id, 0, vec![samples::upload_payload(&six)])
        .unwrap_err();
    let OrchestratorError::ValidationFailed(errors) = &err else {
        panic!("expected ValidationFailed, got {err:?}");
    };
    assert!(errors.has(ErrorCode::CardinalityViolation), "{errors:?}");
    assert_eq!(err.http_status(), 422);

    let wrong_type = samples::upload_payload(&[("notes.txt", b"x")]);
    assert!(matches!(
        orch.submit_step(&session.session_id, 0, vec![wrong_type]),
        Err(OrchestratorError::ValidationFailed(_))
    ));
    assert!(matches!(
        orch.submit_step(&session.session_id, 0, vec![]),
        Err(OrchestratorError::ValidationFailed(_))
    ));

    assert_eq!(orch.launcher().spawn_count(), spawned);
    assert_eq!(orch.execution_count(), executed);
    assert_eq!(orch.session(&session.session_id).unwrap().cursor, 1);
}

#[test]
fn steps_must_follow_the_cursor() {
    let s = svc();
    publish_vqg(&s, "vqg");
    let orch = &s.service.orchestrator;
    let sid = orch.create_session("vqg", VersionSelector::Live).unwrap().session_id;

    let err = orch.submit_step(&sid, 1, vec![json!({"images": []})]).unwrap_err();
    assert!(matches!(err, OrchestratorError::StepOutOfOrder(_)), "{err:?}");
    assert_eq!(err.http_status(), 409);
    assert!(matches!(orch.rerun_step(&sid, 1, vec![]), Err(OrchestratorError::StepOutOfOrder(_))));

    let detected = orch.submit_step(&sid, 0, vec![vqg_images()]).unwrap();
    assert!(matches!(
        orch.submit_step(&sid, 0, vec![vqg_images()]),
        Err(OrchestratorError::StepOutOfOrder(_))
    ));
    let selection = samples::selection_payload(&detected.components[0], first_two);
    orch.submit_step(&sid, 1, vec![selection]).unwrap();
    // The final step renders outputs only; there is nothing left to submit.
    assert!(matches!(orch.submit_step(&sid, 2, vec![]), Err(OrchestratorError::StepOutOfOrder(_))));
    assert!(matches!(
        orch.submit_step("nope", 0, vec![]),
        Err(OrchestratorError::SessionNotFound(_))
    ));
}

#[test]
fn rerun_discards_everything_downstream() {
    let s = svc();
    publish_vqg(&s, "vqg");
    let orch = &s.service.orchestrator;
    let sid = orch.create_session("vqg", VersionSelector::Live).unwrap().session_id;
    let detected = orch.submit_step(&sid, 0, vec![vqg_images()]).unwrap();
    let selection = samples::selection_payload(&detected.components[0], first_two);
    orch.submit_step(&sid, 1, vec![selection]).unwrap();
    let before = orch.session(&sid).unwrap();

    // Re-running the selection step keeps step 0 and replaces step 2.
    let only_first = |_: &str, items: &[String]| items.iter().take(1).cloned().collect();
    let selection = samples::selection_payload(&detected.components[0], only_first);
    let rerun = orch.rerun_step(&sid, 1, vec![selection]).unwrap();
    let after = orch.session(&sid).unwrap();
    assert_eq!(after.cursor, 3);
    assert_eq!(after.results[..2], before.results[..2]);
    assert_ne!(after.results[2], before.results[2]);
    assert_eq!(after.results[2], rerun);

    // Re-running step 0 drops every later payload, result and state token.
    let kitchen_only = samples::upload_payload(&[("kitchen.jpg", KITCHEN)]);
    orch.rerun_step(&sid, 0, vec![kitchen_only.clone()]).unwrap();
    let after = orch.session(&sid).unwrap();
    assert_eq!(after.cursor, 2);
    assert_eq!(after.results.len(), 2);
    assert_eq!(after.payloads, vec![vec![kitchen_only]]);
    assert_eq!(after.state_tokens().len(), 2);
    assert_ne!(after.results[1].state_token, before.results[1].state_token);
    assert!(!after.is_complete());
}

#[test]
fn sessions_pin_the_selected_version() {
    let s = svc();
    let reg = &s.service.registry;
    publish_vqg(&s, "vqg");
    let mut handlers = samples::vqg_handlers();
    if let FixtureHandlerSpec::Template { template, .. } = &mut handlers[2].1 {
        *template = "Where is the {item}?".into();
    }
    let v2 = PublishPackage::fixture(&samples::vqg_metadata(), handlers);
    reg.publish_package(KEY_ALICE, "vqg", "v2", None, &v2).unwrap();
    reg.promote_version(KEY_ALICE, "vqg", 2).unwrap();

    let orch = &s.service.orchestrator;
    let run = |selector| {
        let session = orch.create_session("vqg", selector).unwrap();
        let detected = orch.submit_step(&session.session_id, 0, vec![vqg_images()]).unwrap();
        let selection = samples::selection_payload(&detected.components[0], first_two);
        let out = orch.submit_step(&session.session_id, 1, vec![selection]).unwrap();
        (session.version_id, out.components[0].embedded_data.clone().unwrap())
    };
    let (v, live) = run(VersionSelector::Live);
    assert_eq!(v, 2);
    assert_eq!(live["images"][0]["text"], "Where is the dog?\nWhere is the frisbee?");

    // Rolling back is a promotion; explicit versions stay reachable.
    reg.promote_version(KEY_ALICE, "vqg", 1).unwrap();
    let (v, rolled_back) = run(VersionSelector::Live);
    assert_eq!(v, 1);
    assert_eq!(rolled_back["images"][0]["text"], "What is the dog doing?\nWhat is the frisbee doing?");
    assert_eq!(run(VersionSelector::Version(2)).1, live);

    assert!(matches!(
        orch.create_session("vqg", VersionSelector::Version(9)),
        Err(OrchestratorError::VersionNotFinalized(_, 9))
    ));
    assert!(matches!(
        orch.create_session("missing", VersionSelector::Live),
        Err(OrchestratorError::NotFound(_))
    ));
}

#[test]
fn direct_invocation_reproduces_the_session() {
    let s = svc();
    publish_vqg(&s, "vqg");
    let orch = &s.service.orchestrator;
    let sid = orch.create_session("vqg", VersionSelector::Live).unwrap().session_id;
    let detected = orch.submit_step(&sid, 0, vec![vqg_images()]).unwrap();
    let selection = samples::selection_payload(&detected.components[0], first_two);
    orch.submit_step(&sid, 1, vec![selection.clone()]).unwrap();
    let session = orch.session(&sid).unwrap();
    let sessions_before = orch.session_count();

    let d0 = orch.invoke_direct("vqg", 1, 0, vec![], None).unwrap();
    let d1 = orch.invoke_direct("vqg", 1, 1, vec![vqg_images()], None).unwrap();
    let d2 = orch
        .invoke_direct("vqg", 1, 2, vec![selection.clone()], d1.state_token.as_deref())
        .unwrap();
    for (direct, stored) in [&d0, &d1, &d2].into_iter().zip(&session.results) {
        assert!(direct.same_outcome(stored));
    }
    assert_eq!(orch.session_count(), sessions_before);
    assert_eq!(orch.session(&sid).unwrap(), session);

    let token = d1.state_token.as_deref();
    let mismatch = |r: Result<_, OrchestratorError>| matches!(r, Err(OrchestratorError::StateTokenMismatch));
    // Token from the wrong step, a forged token, and state on step 0.
    assert!(mismatch(orch.invoke_direct("vqg", 1, 1, vec![vqg_images()], token)));
    let forged = token.unwrap().replacen("vqg:1:1:", "vqg:1:2:", 1);
    assert!(mismatch(orch.invoke_direct("vqg", 1, 2, vec![selection.clone()], Some(&forged))));
    assert!(mismatch(orch.invoke_direct("vqg", 1, 0, vec![], token)));
    assert!(matches!(
        orch.invoke_direct("vqg", 1, 0, vec![vqg_images()], None),
        Err(OrchestratorError::ValidationFailed(_))
    ));
    assert!(matches!(
        orch.invoke_direct("vqg", 1, 3, vec![], None),
        Err(OrchestratorError::NoSuchStep(3))
    ));

    // A token is bound to its version as well as its step.
    s.service
        .registry
        .publish_package(KEY_ALICE, "vqg", "again", None, &samples::vqg_package())
        .unwrap();
    assert!(mismatch(orch.invoke_direct("vqg", 2, 2, vec![selection], token)));
}

fn slow_package(millis: u64) -> PublishPackage {
    let meta = metadata(json!({
        "model_name": "slow",
        "steps": [
            {"name": "upload", "inputs": [{"component": "File.Upload", "props": {"title": "files", "types": [".jpg"]}}]},
            {"name": "result", "inputs": [{"component": "Text.View", "props": {"title": "done"}}]}
        ]
    }));
    let first = meta.steps[0].inputs[0].clone();
    let last: ComponentSpec = meta.steps[1].inputs[0].clone();
    PublishPackage::fixture(
        &meta,
        vec![
            ("render".into(), FixtureHandlerSpec::Static { components: vec![first], state: None }),
            ("wait".into(), FixtureHandlerSpec::Sleep { millis, components: vec![last] }),
        ],
    )
}

#[test]
fn one_step_at_a_time_per_session() {
    let s = svc();
    s.service
        .registry
        .publish_package(KEY_ALICE, "slow", "v", None, &slow_package(1500))
        .unwrap();
    let orch = s.service.orchestrator.clone();
    let sid = orch.create_session("slow", VersionSelector::Live).unwrap().session_id;
    let upload = samples::upload_payload(&[("a.jpg", PARK)]);

    let bg = {
        let (orch, sid, upload) = (Arc::clone(&orch), sid.clone(), upload.clone());
        std::thread::spawn(move || orch.submit_step(&sid, 0, vec![upload]))
    };
    std::thread::sleep(Duration::from_millis(300));
    let err = orch.rerun_step(&sid, 0, vec![upload]).unwrap_err();
    assert!(matches!(err, OrchestratorError::SessionBusy), "{err:?}");
    assert_eq!(err.http_status(), 409);
    bg.join().unwrap().unwrap();
    assert!(orch.session(&sid).unwrap().is_complete());
}

#[test]
fn timeouts_and_failures_are_reported_and_contained() {
    let s = svc_with(|c| c.step_timeout = Duration::from_millis(700));
    let reg = &s.service.registry;
    reg.publish_package(KEY_ALICE, "slow", "v", None, &slow_package(10_000)).unwrap();
    let meta = metadata(json!({
        "model_name": "broken",
        "steps": [{"name": "s", "inputs": [{"component": "Text.View", "props": {"title": "t"}}]}]
    }));
    let fails = PublishPackage::fixture(&meta, vec![("h".into(), FixtureHandlerSpec::Fail { message: "boom".into() })]);
    let crashes = PublishPackage::fixture(&meta, vec![("h".into(), FixtureHandlerSpec::Crash)]);
    reg.publish_package(KEY_ALICE, "fails", "v", None, &fails).unwrap();
    reg.publish_package(KEY_ALICE, "crashes", "v", None, &crashes).unwrap();
    publish_vqg(&s, "vqg");
    let orch = &s.service.orchestrator;

    let sid = orch.create_session("slow", VersionSelector::Live).unwrap().session_id;
    let started = std::time::Instant::now();
    let err = orch
        .submit_step(&sid, 0, vec![samples::upload_payload(&[("a.jpg", PARK)])])
        .unwrap_err();
    assert!(matches!(err, OrchestratorError::Timeout(700)), "{err:?}");
    assert_eq!(err.http_status(), 504);
    assert!(started.elapsed() < Duration::from_secs(5));
    assert_eq!(orch.session(&sid).unwrap().cursor, 1);

    let err = orch.create_session("fails", VersionSelector::Live).unwrap_err();
    let OrchestratorError::RunnerFailure { message, .. } = &err else {
        panic!("expected RunnerFailure, got {err:?}");
    };
    assert!(message.contains("boom"), "{message}");
    assert_eq!(err.http_status(), 502);
    assert!(matches!(
        orch.create_session("crashes", VersionSelector::Live),
        Err(OrchestratorError::RunnerFailure { .. })
    ));

    // The service keeps serving.
    let session = orch.create_session("vqg", VersionSelector::Live).unwrap();
    orch.submit_step(&session.session_id, 0, vec![vqg_images()]).unwrap();
}

#[test]
fn failure_details_never_leak_host_paths() {
    let s = svc();
    let meta = metadata(json!({
        "model_name": "leaky",
        "steps": [{"name": "s", "inputs": [{"component": "Text.View", "props": {"title": "t"}}]}]
    }));
    let data_dir = s.dir.path().join("data").canonicalize().unwrap();
    let message = format!("cannot open {}/state/x with secret {}", data_dir.display(), String::from_utf8_lossy(SECRET));
    let pkg = PublishPackage::fixture(&meta, vec![("h".into(), FixtureHandlerSpec::Fail { message })]);
    s.service.registry.publish_package(KEY_ALICE, "leaky", "v", None, &pkg).unwrap();
    let err = s
        .service
        .orchestrator
        .create_session("leaky", VersionSelector::Live)
        .unwrap_err();
    let shown = format!("{err} {:?}", err.details());
    assert!(!shown.contains(&data_dir.display().to_string()), "{shown}");
    assert!(!shown.contains(std::str::from_utf8(SECRET).unwrap()), "{shown}");
    assert!(shown.contains("cannot open"), "{shown}");
}

#[test]
fn models_with_equal_dependencies_share_one_runner() {
    let s = svc();
    publish_vqg(&s, "vqg-a");
    publish_vqg(&s, "vqg-b");
    let orch = &s.service.orchestrator;
    orch.create_session("vqg-a", VersionSelector::Live).unwrap();
    orch.create_session("vqg-b", VersionSelector::Live).unwrap();
    orch.invoke_direct("vqg-a", 1, 0, vec![], None).unwrap();
    assert_eq!(orch.runners().build_count(), 1);
    assert_eq!(orch.runners().images().len(), 1);
}

#[test]
fn idle_sessions_expire() {
    let s = svc();
    publish_vqg(&s, "vqg");
    let orch = &s.service.orchestrator;
    let sid = orch.create_session("vqg", VersionSelector::Live).unwrap().session_id;
    s.clock.advance(chrono::Duration::minutes(30));
    assert_eq!(orch.collect_idle(), 0);
    s.clock.advance(chrono::Duration::minutes(31));
    assert_eq!(orch.collect_idle(), 1);
    assert!(matches!(orch.session(&sid), Err(OrchestratorError::SessionNotFound(_))));
}
