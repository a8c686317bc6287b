use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use parking_lot::{Mutex, RwLock};
use serde_json::Value;

use super::error::RegistryError;
use super::log::{EventLog, LogEvent};
use super::records::{
    ArtifactEntry, BeginResponse, ManifestFile, ManifestResponse, ModelDetail, ModelRecord, ModelSummary, TokenState,
    UploadTicket, VersionRecord, Visibility,
};
use crate::blob::BlobStore;
use crate::canonical;
use crate::clock::Clock;
use crate::digest::BlobDigest;
use crate::metadata::{generate_api_doc, parse_metadata, ModelMetadata};
use crate::runner::bundle::{is_safe_path, BundleKind, BundleManifest, MANIFEST_FILE};
use crate::runner::fixture::FIXTURE_FILE;

#[derive(Debug, Clone)]
pub struct RegistryConfig {
    /// Base URL clients use to reach the blob endpoints.
    pub public_url: String,
    /// Lifetime of a publish token.
    pub publish_ttl: Duration,
    /// Lifetime of each signed upload URL, capped by the token's expiry.
    pub upload_ttl: Duration,
}

impl Default for RegistryConfig {
    fn default() -> Self {
        RegistryConfig {
            public_url: "http://127.0.0.1:8080".into(),
            publish_ttl: Duration::hours(1),
            upload_ttl: Duration::minutes(15),
        }
    }
}

/// Parses an API keys file: one `owner:key` pair per line, `#` comments.
pub fn load_api_keys(path: &Path) -> std::io::Result<HashMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut keys = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((owner, key)) = line.split_once(':') else {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("{}:{}: expected `owner:key`", path.display(), n + 1),
            ));
        };
        keys.insert(key.trim().to_string(), owner.trim().to_string());
    }
    Ok(keys)
}

pub fn valid_slug(slug: &str) -> bool {
    let b = slug.as_bytes();
    !b.is_empty()
        && b.len() <= 63
        && (b[0].is_ascii_lowercase() || b[0].is_ascii_digit())
        && b.iter().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || *c == b'-')
}

struct PendingManifest {
    metadata: Arc<ModelMetadata>,
    metadata_digest: BlobDigest,
    files: Vec<ManifestFile>,
}

struct PublishToken {
    slug: String,
    version_id: u64,
    label: String,
    scope: String,
    expires_at: i64,
    state: TokenState,
    manifest: Option<PendingManifest>,
}

#[derive(Default)]
struct State {
    models: BTreeMap<String, ModelRecord>,
    /// Next version id to allocate, per model.
    next_version: HashMap<String, u64>,
    tokens: HashMap<String, PublishToken>,
    metadata_cache: HashMap<(String, u64), Arc<ModelMetadata>>,
}

impl State {
    fn apply(&mut self, event: &LogEvent) {
        match event {
            LogEvent::ModelCreated { slug, owner, visibility, .. } => {
                self.models.insert(
                    slug.clone(),
                    ModelRecord {
                        slug: slug.clone(),
                        owner: owner.clone(),
                        visibility: *visibility,
                        versions: Vec::new(),
                        live: None,
                    },
                );
                self.next_version.insert(slug.clone(), 1);
            }
            LogEvent::VersionAllocated { slug, version_id } => {
                let next = self.next_version.entry(slug.clone()).or_insert(1);
                *next = (*next).max(version_id + 1);
            }
            LogEvent::VersionFinalized { slug, record } => {
                if let Some(m) = self.models.get_mut(slug) {
                    m.versions.push(record.clone());
                    if m.live.is_none() {
                        m.live = Some(record.version_id);
                    }
                }
            }
            LogEvent::LivePromoted { slug, version_id } => {
                if let Some(m) = self.models.get_mut(slug) {
                    m.live = Some(*version_id);
                }
            }
        }
    }
}

/// Model and version records, the publish handshake and live promotion.
pub struct Registry {
    blobs: Arc<BlobStore>,
    clock: Arc<dyn Clock>,
    config: RegistryConfig,
    api_keys: HashMap<String, String>,
    state: RwLock<State>,
    log: Mutex<EventLog>,
    model_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry").field("log", &self.log.lock().path()).finish()
    }
}

impl Registry {
    /// Opens the registry whose log lives at `log_path`, replaying it.
    pub fn open(
        log_path: impl Into<PathBuf>,
        blobs: Arc<BlobStore>,
        clock: Arc<dyn Clock>,
        api_keys: HashMap<String, String>,
        config: RegistryConfig,
    ) -> Result<Self, RegistryError> {
        let (log, events) = EventLog::open(log_path)?;
        let mut state = State::default();
        for ev in &events {
            state.apply(ev);
        }
        Ok(Registry {
            blobs,
            clock,
            config,
            api_keys,
            state: RwLock::new(state),
            log: Mutex::new(log),
            model_locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn blobs(&self) -> &Arc<BlobStore> {
        &self.blobs
    }

    pub fn config(&self) -> &RegistryConfig {
        &self.config
    }

    /// Returns the owner the key belongs to.
    pub fn authenticate(&self, api_key: &str) -> Result<String, RegistryError> {
        self.api_keys.get(api_key).cloned().ok_or(RegistryError::AuthFailed)
    }

    fn model_lock(&self, slug: &str) -> Arc<Mutex<()>> {
        self.model_locks.lock().entry(slug.to_string()).or_default().clone()
    }

    /// Appends to the log, then applies to memory, under the state lock.
    fn commit(&self, state: &mut State, events: &[LogEvent]) -> Result<(), RegistryError> {
        let mut log = self.log.lock();
        for ev in events {
            log.append(ev)?;
            state.apply(ev);
        }
        Ok(())
    }

    fn expire_token(&self, tok: &mut PublishToken) {
        if matches!(tok.state, TokenState::Open | TokenState::ManifestReceived) {
            tok.state = TokenState::Expired;
            let _ = self.blobs.discard_scope(&tok.scope);
        }
    }

    pub fn begin_publish(
        &self,
        api_key: &str,
        slug: &str,
        label: &str,
        visibility: Option<Visibility>,
    ) -> Result<BeginResponse, RegistryError> {
        let owner = self.authenticate(api_key)?;
        if !valid_slug(slug) {
            return Err(RegistryError::InvalidSlug(slug.to_string()));
        }
        let lock = self.model_lock(slug);
        let _serial = lock.lock();
        let now = self.clock.now();
        let mut state = self.state.write();
        let mut events = Vec::new();
        match state.models.get(slug) {
            Some(m) if m.owner != owner => return Err(RegistryError::SlugOwnedByOther(slug.to_string())),
            Some(_) => {}
            None => events.push(LogEvent::ModelCreated {
                slug: slug.to_string(),
                owner,
                visibility: visibility.unwrap_or_default(),
                at: now,
            }),
        }
        // A newer publish supersedes any still-pending one for the model, so
        // finalized ids can only grow.
        let stale: Vec<String> = state
            .tokens
            .iter()
            .filter(|(_, t)| t.slug == slug && matches!(t.state, TokenState::Open | TokenState::ManifestReceived))
            .map(|(k, _)| k.clone())
            .collect();
        for k in stale {
            let mut tok = state.tokens.remove(&k).expect("present");
            self.expire_token(&mut tok);
            state.tokens.insert(k, tok);
        }
        let version_id = state.next_version.get(slug).copied().unwrap_or(1);
        events.push(LogEvent::VersionAllocated {
            slug: slug.to_string(),
            version_id,
        });

        let token = hex::encode(rand::random::<[u8; 24]>());
        let scope = format!("p{}", hex::encode(rand::random::<[u8; 12]>()));
        let expires = now + self.config.publish_ttl;
        self.blobs.register_scope(&scope, expires.timestamp())?;
        if let Err(e) = self.commit(&mut state, &events) {
            let _ = self.blobs.discard_scope(&scope);
            return Err(e);
        }
        state.tokens.insert(
            token.clone(),
            PublishToken {
                slug: slug.to_string(),
                version_id,
                label: label.to_string(),
                scope,
                expires_at: expires.timestamp(),
                state: TokenState::Open,
                manifest: None,
            },
        );
        Ok(BeginResponse {
            token,
            version_id,
            expires_at: expires,
        })
    }

    /// Token lookup shared by the later handshake steps; expires it lazily.
    fn live_token<'a>(&self, state: &'a mut State, token: &str) -> Result<&'a mut PublishToken, RegistryError> {
        let now = self.clock.unix();
        let tok = state.tokens.get_mut(token).ok_or(RegistryError::UnknownToken)?;
        if now >= tok.expires_at {
            self.expire_token(tok);
        }
        Ok(tok)
    }

    pub fn submit_manifest(
        &self,
        token: &str,
        metadata: &Value,
        files: &[ManifestFile],
    ) -> Result<ManifestResponse, RegistryError> {
        let slug = {
            let mut state = self.state.write();
            let tok = self.live_token(&mut state, token)?;
            tok.slug.clone()
        };
        let lock = self.model_lock(&slug);
        let _serial = lock.lock();
        let mut state = self.state.write();
        let tok = self.live_token(&mut state, token)?;
        match tok.state {
            TokenState::Open => {}
            TokenState::Expired => return Err(RegistryError::TokenExpired),
            TokenState::ManifestReceived | TokenState::Finalized => return Err(RegistryError::TokenReplayed),
        }

        let raw = canonical::value_to_string(metadata);
        let parsed = parse_metadata(raw.as_bytes()).map_err(RegistryError::MetadataInvalid)?;
        check_files(files)?;

        let stored = parsed.to_canonical_bytes();
        let metadata_digest = self.blobs.stage(&tok.scope, &stored)?;
        let exp_cap = tok.expires_at;
        let mut uploads = Vec::with_capacity(files.len());
        for f in files {
            if self.blobs.is_published(&f.digest) {
                uploads.push(UploadTicket::AlreadyPresent {
                    path: f.path.clone(),
                    already_present: true,
                });
                continue;
            }
            let mut url = self.blobs.issue_upload_url(&tok.scope, &f.digest, self.config.upload_ttl)?;
            if url.exp > exp_cap {
                url = self.blobs.issue_upload_url(
                    &tok.scope,
                    &f.digest,
                    Duration::seconds(exp_cap - self.clock.unix()),
                )?;
            }
            uploads.push(UploadTicket::Upload {
                path: f.path.clone(),
                url: url.url(&self.config.public_url),
                exp: url.exp,
                sig: url.sig,
            });
        }
        tok.state = TokenState::ManifestReceived;
        tok.manifest = Some(PendingManifest {
            metadata: Arc::new(parsed),
            metadata_digest,
            files: files.to_vec(),
        });
        Ok(ManifestResponse { uploads })
    }

    pub fn finalize_publish(&self, token: &str) -> Result<VersionRecord, RegistryError> {
        let slug = {
            let mut state = self.state.write();
            self.live_token(&mut state, token)?.slug.clone()
        };
        let lock = self.model_lock(&slug);
        let _serial = lock.lock();

        // Snapshot what is needed, then do the blob work without holding the
        // state lock; the model lock keeps other publishes of this model out.
        let (scope, version_id, label, metadata, metadata_digest, files) = {
            let mut state = self.state.write();
            let tok = self.live_token(&mut state, token)?;
            match tok.state {
                TokenState::ManifestReceived => {}
                TokenState::Open => return Err(RegistryError::NoManifest),
                TokenState::Expired => return Err(RegistryError::TokenExpired),
                TokenState::Finalized => return Err(RegistryError::AlreadyFinalized),
            }
            let m = tok.manifest.as_ref().expect("manifest-received carries a manifest");
            (
                tok.scope.clone(),
                tok.version_id,
                tok.label.clone(),
                m.metadata.clone(),
                m.metadata_digest.clone(),
                m.files.clone(),
            )
        };

        let missing: Vec<String> = files
            .iter()
            .filter(|f| !self.blobs.is_published(&f.digest) && !self.blobs.is_staged(&scope, &f.digest))
            .map(|f| f.path.clone())
            .collect();
        if !missing.is_empty() {
            return Err(RegistryError::MissingArtifact(missing));
        }
        let artifacts: BTreeMap<String, BlobDigest> =
            files.iter().map(|f| (f.path.clone(), f.digest.clone())).collect();
        self.check_bundle(&scope, &metadata, &artifacts)?;

        let mut digests: Vec<BlobDigest> = files.iter().map(|f| f.digest.clone()).collect();
        digests.push(metadata_digest.clone());
        digests.sort();
        digests.dedup();
        self.blobs.promote_to_published(&scope, &digests).map_err(|e| match e {
            crate::blob::BlobError::MissingArtifact(ds) => RegistryError::MissingArtifact(
                files
                    .iter()
                    .filter(|f| ds.contains(&f.digest))
                    .map(|f| f.path.clone())
                    .collect(),
            ),
            other => other.into(),
        })?;

        let mut artifacts: Vec<ArtifactEntry> = files
            .iter()
            .map(|f| ArtifactEntry {
                path: f.path.clone(),
                digest: f.digest.clone(),
                size: f.size,
            })
            .collect();
        artifacts.sort();
        let record = VersionRecord {
            version_id,
            label,
            metadata_digest,
            artifacts,
            created_at: self.clock.now(),
            dependency_hash: metadata.dependency_hash(),
        };

        let mut state = self.state.write();
        self.commit(
            &mut state,
            &[LogEvent::VersionFinalized {
                slug: slug.clone(),
                record: record.clone(),
            }],
        )?;
        state.metadata_cache.insert((slug, version_id), metadata);
        if let Some(tok) = state.tokens.get_mut(token) {
            tok.state = TokenState::Finalized;
            tok.manifest = None;
        }
        Ok(record)
    }

    fn read_any(&self, scope: &str, digest: &BlobDigest) -> Result<Vec<u8>, RegistryError> {
        if self.blobs.is_staged(scope, digest) {
            Ok(self.blobs.read_staged(scope, digest)?)
        } else {
            Ok(self.blobs.read_published(digest)?)
        }
    }

    fn check_bundle(
        &self,
        scope: &str,
        metadata: &ModelMetadata,
        artifacts: &BTreeMap<String, BlobDigest>,
    ) -> Result<(), RegistryError> {
        let invalid = |e: crate::runner::BundleError| RegistryError::BundleInvalid(e.to_string());
        let manifest_bytes = self.read_any(scope, &artifacts[MANIFEST_FILE])?;
        let manifest = BundleManifest::parse(&manifest_bytes).map_err(invalid)?;
        manifest.check_consistency(metadata, artifacts).map_err(invalid)?;
        if manifest.kind == BundleKind::Fixture {
            let fixture = self.read_any(scope, &artifacts[FIXTURE_FILE])?;
            manifest.check_fixture(&fixture).map_err(invalid)?;
        }
        Ok(())
    }

    pub fn promote_version(&self, api_key: &str, slug: &str, version_id: u64) -> Result<ModelRecord, RegistryError> {
        let owner = self.authenticate(api_key)?;
        let lock = self.model_lock(slug);
        let _serial = lock.lock();
        let mut state = self.state.write();
        let model = state
            .models
            .get(slug)
            .ok_or_else(|| RegistryError::NotFound(slug.to_string()))?;
        if model.owner != owner {
            return Err(RegistryError::NotOwner(slug.to_string()));
        }
        if model.version(version_id).is_none() {
            return Err(RegistryError::NoSuchVersion(slug.to_string(), version_id));
        }
        if model.live != Some(version_id) {
            self.commit(
                &mut state,
                &[LogEvent::LivePromoted {
                    slug: slug.to_string(),
                    version_id,
                }],
            )?;
        }
        Ok(state.models[slug].clone())
    }

    /// Public models with a live version, by slug.
    pub fn list_models(&self) -> Result<Vec<ModelSummary>, RegistryError> {
        let listed: Vec<ModelRecord> = self
            .state
            .read()
            .models
            .values()
            .filter(|m| m.visibility == Visibility::Public && m.live.is_some())
            .cloned()
            .collect();
        listed
            .into_iter()
            .map(|m| {
                let live = m.live_version().expect("listed models are live");
                let meta = self.version_metadata(&m.slug, live.version_id)?;
                Ok(ModelSummary {
                    slug: m.slug.clone(),
                    model_name: meta.model_name.clone(),
                    owner: m.owner.clone(),
                    live: m.live,
                    live_label: Some(live.label.clone()),
                    version_count: m.versions.len(),
                    step_count: meta.steps.len(),
                })
            })
            .collect()
    }

    pub fn model_record(&self, slug: &str) -> Result<ModelRecord, RegistryError> {
        self.state
            .read()
            .models
            .get(slug)
            .cloned()
            .ok_or_else(|| RegistryError::NotFound(slug.to_string()))
    }

    pub fn get_model(&self, slug: &str) -> Result<ModelDetail, RegistryError> {
        let record = self.model_record(slug)?;
        let (metadata, api) = match record.live {
            Some(v) => {
                let meta = self.version_metadata(slug, v)?;
                (Some(meta.to_json()), Some(generate_api_doc(&meta)))
            }
            None => (None, None),
        };
        Ok(ModelDetail { record, metadata, api })
    }

    pub fn version_record(&self, slug: &str, version_id: u64) -> Result<VersionRecord, RegistryError> {
        self.model_record(slug)?
            .version(version_id)
            .cloned()
            .ok_or_else(|| RegistryError::NoSuchVersion(slug.to_string(), version_id))
    }

    /// Metadata of a finalized version, read from the published area once
    /// and cached (versions are immutable).
    pub fn version_metadata(&self, slug: &str, version_id: u64) -> Result<Arc<ModelMetadata>, RegistryError> {
        if let Some(m) = self.state.read().metadata_cache.get(&(slug.to_string(), version_id)) {
            return Ok(m.clone());
        }
        let record = self.version_record(slug, version_id)?;
        let bytes = self.blobs.read_published(&record.metadata_digest)?;
        let meta = Arc::new(
            parse_metadata(&bytes).map_err(|e| RegistryError::Storage(format!("stored metadata unreadable: {e}")))?,
        );
        self.state
            .write()
            .metadata_cache
            .insert((slug.to_string(), version_id), meta.clone());
        Ok(meta)
    }

    pub fn token_state(&self, token: &str) -> Option<TokenState> {
        let mut state = self.state.write();
        self.live_token(&mut state, token).ok().map(|t| t.state)
    }

    /// Expires overdue publish tokens and drops their staging areas.
    /// Returns how many tokens expired.
    pub fn collect_expired(&self) -> Result<usize, RegistryError> {
        let now = self.clock.unix();
        let mut n = 0;
        {
            let mut state = self.state.write();
            for tok in state.tokens.values_mut() {
                if now >= tok.expires_at && matches!(tok.state, TokenState::Open | TokenState::ManifestReceived) {
                    self.expire_token(tok);
                    n += 1;
                }
            }
            state.tokens.retain(|_, t| now < t.expires_at + 86_400);
        }
        self.blobs.collect_expired()?;
        Ok(n)
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }
}

fn check_files(files: &[ManifestFile]) -> Result<(), RegistryError> {
    let mut problems = Vec::new();
    let mut seen = BTreeSet::new();
    for f in files {
        if !is_safe_path(&f.path) {
            problems.push(format!("`{}` is not a safe relative path", f.path));
        }
        if !seen.insert(f.path.as_str()) {
            problems.push(format!("`{}` is listed twice", f.path));
        }
    }
    if !seen.contains(MANIFEST_FILE) {
        problems.push(format!("`{MANIFEST_FILE}` is required"));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(RegistryError::ManifestInvalid(problems))
    }
}
