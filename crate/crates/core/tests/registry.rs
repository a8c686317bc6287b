mod common;

use common::{Env, KEY_ALICE, KEY_BOB};
use modelport::blob::SignedUploadUrl;
use modelport::metadata::{generate_api_doc, parse_metadata, ErrorCode};
use modelport::registry::{
    ManifestFile, PublishPackage, RegistryError, TokenState, UploadTicket, Visibility,
};
use modelport::samples::{noop_package, vqg_package};
use modelport::BlobDigest;
use proptest::prelude::*;
use serde_json::json;

fn upload_all(env: &Env, pkg: &PublishPackage, tickets: &[UploadTicket]) {
    for t in tickets {
        if let UploadTicket::Upload { path, url, .. } = t {
            let url = SignedUploadUrl::parse(url).unwrap();
            env.blobs.receive_upload(&url, &pkg.files[path]).unwrap();
        }
    }
}

#[test]
fn first_publish_creates_model_and_goes_live() {
    let env = Env::new();
    let pkg = vqg_package();
    let begin = env.registry.begin_publish(KEY_ALICE, "vqg-demo", "v1", None).unwrap();
    assert_eq!(begin.version_id, 1);
    let m = env
        .registry
        .submit_manifest(&begin.token, &pkg.metadata, &pkg.manifest_files())
        .unwrap();
    assert_eq!(m.uploads.len(), pkg.files.len());
    assert!(m.uploads.iter().all(|u| matches!(u, UploadTicket::Upload { .. })));
    upload_all(&env, &pkg, &m.uploads);
    let record = env.registry.finalize_publish(&begin.token).unwrap();
    assert_eq!(record.version_id, 1);
    assert_eq!(record.label, "v1");
    assert_eq!(record.dependency_hash, pkg.parsed_metadata().dependency_hash());
    for a in &record.artifacts {
        assert_eq!(env.blobs.read_published(&a.digest).unwrap(), pkg.files[&a.path]);
    }
    let model = env.registry.model_record("vqg-demo").unwrap();
    assert_eq!(model.live, Some(1));
    assert_eq!(model.owner, "alice");
    assert_eq!(env.registry.token_state(&begin.token), Some(TokenState::Finalized));
}

#[test]
fn auth_and_slug_rules() {
    let env = Env::new();
    let e = env.registry.begin_publish("nope", "x", "v1", None).unwrap_err();
    assert!(matches!(e, RegistryError::AuthFailed));
    assert_eq!(e.http_status(), 401);
    for bad in ["", "Caps", "-lead", "has space", "under_score", &"a".repeat(64)] {
        let e = env.registry.begin_publish(KEY_ALICE, bad, "v1", None).unwrap_err();
        assert!(matches!(e, RegistryError::InvalidSlug(_)), "{bad}");
    }
    env.registry.begin_publish(KEY_ALICE, "mine", "v1", None).unwrap();
    let e = env.registry.begin_publish(KEY_BOB, "mine", "v1", None).unwrap_err();
    assert!(matches!(e, RegistryError::SlugOwnedByOther(_)));
    assert_eq!(e.http_status(), 403);
}

#[test]
fn republishing_same_label_allocates_next_version() {
    let env = Env::new();
    let v1 = env.registry.publish_package(KEY_ALICE, "vqg-demo", "v1", None, &vqg_package()).unwrap();
    let before = serde_json::to_vec(&v1).unwrap();
    let v2 = env.registry.publish_package(KEY_ALICE, "vqg-demo", "v1", None, &vqg_package()).unwrap();
    assert_eq!(v2.version_id, 2);
    assert_eq!(v2.label, "v1");
    let model = env.registry.model_record("vqg-demo").unwrap();
    assert_eq!(serde_json::to_vec(model.version(1).unwrap()).unwrap(), before);
    assert_eq!(model.live, Some(1));
}

#[test]
fn manifest_skips_already_published_content() {
    let env = Env::new();
    let pkg = vqg_package().with_file("weights.bin", b"w1".to_vec());
    env.registry.publish_package(KEY_ALICE, "m", "v1", None, &pkg).unwrap();

    let pkg2 = pkg.clone().with_file("extra.bin", b"new content".to_vec());
    let begin = env.registry.begin_publish(KEY_ALICE, "m", "v2", None).unwrap();
    let m = env.registry.submit_manifest(&begin.token, &pkg2.metadata, &pkg2.manifest_files()).unwrap();
    let fresh: Vec<&str> = m
        .uploads
        .iter()
        .filter(|u| matches!(u, UploadTicket::Upload { .. }))
        .map(|u| u.path())
        .collect();
    // Only the new file and the regenerated manifest differ from v1.
    assert_eq!(fresh, ["bundle.json", "extra.bin"]);
    assert!(m
        .uploads
        .iter()
        .any(|u| matches!(u, UploadTicket::AlreadyPresent { path, already_present: true } if path == "weights.bin")));
    upload_all(&env, &pkg2, &m.uploads);
    assert_eq!(env.registry.finalize_publish(&begin.token).unwrap().version_id, 2);
}

#[test]
fn invalid_metadata_keeps_token_open() {
    let env = Env::new();
    let pkg = vqg_package();
    let begin = env.registry.begin_publish(KEY_ALICE, "m", "v1", None).unwrap();
    let mut bad = pkg.metadata.clone();
    bad["steps"][0]["inputs"][0]["props"]["max_files"] = json!(0);
    bad["steps"][0]["inputs"][0]["props"]["min_files"] = json!(0);
    match env.registry.submit_manifest(&begin.token, &bad, &pkg.manifest_files()) {
        Err(RegistryError::MetadataInvalid(errors)) => {
            let v = errors.find(ErrorCode::PropConstraintViolation).unwrap();
            assert!(v.path.starts_with("steps[0].inputs[0].props"), "{}", v.path);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(env.registry.token_state(&begin.token), Some(TokenState::Open));
    env.registry.submit_manifest(&begin.token, &pkg.metadata, &pkg.manifest_files()).unwrap();
    assert_eq!(env.registry.token_state(&begin.token), Some(TokenState::ManifestReceived));
}

#[test]
fn manifest_must_be_well_formed() {
    let env = Env::new();
    let pkg = vqg_package();
    let begin = env.registry.begin_publish(KEY_ALICE, "m", "v1", None).unwrap();
    let mut files = pkg.manifest_files();
    files.push(ManifestFile { path: "../escape".into(), digest: BlobDigest::of(b"x"), size: 1 });
    let e = env.registry.submit_manifest(&begin.token, &pkg.metadata, &files).unwrap_err();
    assert!(matches!(e, RegistryError::ManifestInvalid(_)));
    let files: Vec<_> = pkg.manifest_files().into_iter().filter(|f| f.path != "bundle.json").collect();
    let e = env.registry.submit_manifest(&begin.token, &pkg.metadata, &files).unwrap_err();
    assert!(matches!(e, RegistryError::ManifestInvalid(_)));
}

#[test]
fn missing_upload_blocks_finalize_without_side_effects() {
    let env = Env::new();
    let pkg = vqg_package();
    let begin = env.registry.begin_publish(KEY_ALICE, "m", "v1", None).unwrap();
    let m = env.registry.submit_manifest(&begin.token, &pkg.metadata, &pkg.manifest_files()).unwrap();
    let published_before = env.blobs.published_digests().unwrap();
    let partial: Vec<UploadTicket> = m.uploads.iter().filter(|u| u.path() != "fixture.json").cloned().collect();
    upload_all(&env, &pkg, &partial);
    match env.registry.finalize_publish(&begin.token) {
        Err(RegistryError::MissingArtifact(paths)) => assert_eq!(paths, ["fixture.json"]),
        other => panic!("{other:?}"),
    }
    assert_eq!(env.blobs.published_digests().unwrap(), published_before);
    assert!(env.registry.model_record("m").unwrap().versions.is_empty());
    assert_eq!(env.registry.token_state(&begin.token), Some(TokenState::ManifestReceived));

    upload_all(&env, &pkg, &m.uploads);
    env.registry.finalize_publish(&begin.token).unwrap();
    let e = env.registry.finalize_publish(&begin.token).unwrap_err();
    assert!(matches!(e, RegistryError::AlreadyFinalized));
    let e = env.registry.submit_manifest(&begin.token, &pkg.metadata, &pkg.manifest_files()).unwrap_err();
    assert!(matches!(e, RegistryError::TokenReplayed));
}

#[test]
fn bundle_must_match_metadata() {
    let env = Env::new();
    // Handlers for a one-step model, metadata for three steps.
    let mut pkg = noop_package();
    pkg.metadata = vqg_package().metadata;
    let e = env.registry.publish_package(KEY_ALICE, "m", "v1", None, &pkg).unwrap_err();
    match e {
        RegistryError::BundleInvalid(msg) => assert!(msg.contains("1 handler(s) for 3 step(s)"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn expired_and_superseded_tokens() {
    let env = Env::new();
    let pkg = vqg_package();
    let begin = env.registry.begin_publish(KEY_ALICE, "m", "v1", None).unwrap();
    env.clock.advance(chrono::Duration::hours(2));
    let e = env.registry.submit_manifest(&begin.token, &pkg.metadata, &pkg.manifest_files()).unwrap_err();
    assert!(matches!(e, RegistryError::TokenExpired));

    let a = env.registry.begin_publish(KEY_ALICE, "m", "v2", None).unwrap();
    let b = env.registry.begin_publish(KEY_ALICE, "m", "v3", None).unwrap();
    assert!(b.version_id > a.version_id && a.version_id > begin.version_id);
    let e = env.registry.submit_manifest(&a.token, &pkg.metadata, &pkg.manifest_files()).unwrap_err();
    assert!(matches!(e, RegistryError::TokenExpired));
    let m = env.registry.submit_manifest(&b.token, &pkg.metadata, &pkg.manifest_files()).unwrap();
    upload_all(&env, &pkg, &m.uploads);
    assert_eq!(env.registry.finalize_publish(&b.token).unwrap().version_id, 3);
    assert!(matches!(env.registry.finalize_publish("unknown"), Err(RegistryError::UnknownToken)));
}

#[test]
fn promotion_moves_only_the_live_pointer() {
    let env = Env::new();
    for label in ["v1", "v2"] {
        env.registry.publish_package(KEY_ALICE, "vqg-demo", label, None, &vqg_package()).unwrap();
    }
    env.registry.promote_version(KEY_ALICE, "vqg-demo", 2).unwrap();
    let before = env.registry.model_record("vqg-demo").unwrap();
    assert_eq!(before.live, Some(2));
    let after = env.registry.promote_version(KEY_ALICE, "vqg-demo", 1).unwrap();
    assert_eq!(after.live, Some(1));
    let mut patched = before.clone();
    patched.live = Some(1);
    assert_eq!(after, patched);
    assert_eq!(after.versions.len(), 2);

    let again = env.registry.promote_version(KEY_ALICE, "vqg-demo", 1).unwrap();
    assert_eq!(again, after);
    assert!(matches!(
        env.registry.promote_version(KEY_ALICE, "vqg-demo", 9),
        Err(RegistryError::NoSuchVersion(_, 9))
    ));
    assert!(matches!(
        env.registry.promote_version(KEY_BOB, "vqg-demo", 1),
        Err(RegistryError::NotOwner(_))
    ));
    assert!(matches!(env.registry.promote_version("bad", "vqg-demo", 1), Err(RegistryError::AuthFailed)));
}

#[test]
fn listing_respects_visibility_and_docs_match_stored_metadata() {
    let env = Env::new();
    env.registry.publish_package(KEY_ALICE, "vqg-demo", "v1", None, &vqg_package()).unwrap();
    env.registry
        .publish_package(KEY_ALICE, "hidden", "v1", Some(Visibility::Unlisted), &noop_package())
        .unwrap();
    let listed: Vec<String> = env.registry.list_models().unwrap().into_iter().map(|m| m.slug).collect();
    assert_eq!(listed, ["vqg-demo"]);
    assert!(env.registry.get_model("hidden").is_ok());

    let detail = env.registry.get_model("vqg-demo").unwrap();
    // Oracle: read the published metadata blob directly and document it.
    let record = detail.record.live_version().unwrap();
    let stored = parse_metadata(&env.blobs.read_published(&record.metadata_digest).unwrap()).unwrap();
    assert_eq!(detail.api.unwrap(), generate_api_doc(&stored));
    assert_eq!(detail.metadata.unwrap(), stored.to_json());
    assert!(matches!(env.registry.get_model("nope"), Err(RegistryError::NotFound(_))));
}

#[test]
fn state_survives_restart() {
    let env = Env::new();
    env.registry.publish_package(KEY_ALICE, "vqg-demo", "v1", None, &vqg_package()).unwrap();
    env.registry.publish_package(KEY_ALICE, "vqg-demo", "v2", None, &vqg_package()).unwrap();
    env.registry.promote_version(KEY_ALICE, "vqg-demo", 2).unwrap();
    // An abandoned publish still consumes its id.
    env.registry.begin_publish(KEY_ALICE, "vqg-demo", "v3", None).unwrap();
    let before = env.registry.model_record("vqg-demo").unwrap();
    let env = env.reopen();
    assert_eq!(env.registry.model_record("vqg-demo").unwrap(), before);
    assert_eq!(env.registry.begin_publish(KEY_ALICE, "vqg-demo", "v4", None).unwrap().version_id, 4);
}

#[derive(Debug, Clone)]
enum Op {
    Begin,
    Manifest(usize),
    Upload(usize),
    Finalize(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        Just(Op::Begin),
        (0usize..4).prop_map(Op::Manifest),
        (0usize..4).prop_map(Op::Upload),
        (0usize..4).prop_map(Op::Finalize),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Any interleaving of handshake calls, including replays, yields
    /// strictly increasing finalized ids and at most one success per token.
    #[test]
    fn versions_only_grow_and_tokens_are_single_use(ops in proptest::collection::vec(op(), 1..30)) {
        let env = Env::new();
        let pkg = noop_package();
        let mut tokens: Vec<String> = Vec::new();
        let mut tickets = std::collections::HashMap::new();
        let mut successes = std::collections::HashMap::new();
        let mut finalized = Vec::new();
        for op in ops {
            match op {
                Op::Begin => tokens.push(env.registry.begin_publish(KEY_ALICE, "m", "x", None).unwrap().token),
                Op::Manifest(i) if !tokens.is_empty() => {
                    let t = &tokens[i % tokens.len()];
                    if let Ok(m) = env.registry.submit_manifest(t, &pkg.metadata, &pkg.manifest_files()) {
                        prop_assert!(tickets.insert(t.clone(), m.uploads).is_none(), "manifest accepted twice");
                    }
                }
                Op::Upload(i) if !tokens.is_empty() => {
                    let t = &tokens[i % tokens.len()];
                    if let Some(u) = tickets.get(t) {
                        for ticket in u {
                            if let UploadTicket::Upload { path, url, .. } = ticket {
                                let _ = env.blobs.receive_upload(&SignedUploadUrl::parse(url).unwrap(), &pkg.files[path]);
                            }
                        }
                    }
                }
                Op::Finalize(i) if !tokens.is_empty() => {
                    let t = &tokens[i % tokens.len()];
                    if let Ok(r) = env.registry.finalize_publish(t) {
                        *successes.entry(t.clone()).or_insert(0) += 1;
                        finalized.push(r.version_id);
                    }
                }
                _ => {}
            }
        }
        prop_assert!(successes.values().all(|n| *n == 1));
        prop_assert!(finalized.windows(2).all(|w| w[0] < w[1]), "{:?}", finalized);
        let ids: Vec<u64> = env.registry.model_record("m").map(|m| m.versions.iter().map(|v| v.version_id).collect()).unwrap_or_default();
        prop_assert_eq!(ids, finalized);
    }
}
