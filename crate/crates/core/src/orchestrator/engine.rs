use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::error::OrchestratorError;
use super::runners::RunnerRegistry;
use super::state::{StateProvenance, StateStore};
use crate::clock::Clock;
use crate::metadata::{validate_step_payloads, ComponentSpec, ErrorCode, ModelMetadata, ValidationErrors, Violation};
use crate::registry::Registry;
use crate::runner::{BundleCache, InvokeRequest, InvokeStatus, Launcher, Limits, StateBlob};

#[derive(Debug, Clone)]
pub struct OrchestratorConfig {
    pub step_timeout: Duration,
    pub memory_bytes: u64,
    pub session_idle_ttl: chrono::Duration,
    /// Upper bound on concurrently running workers.
    pub pool_size: usize,
    /// Whether handler logs are returned to callers.
    pub expose_logs: bool,
    /// Strings scrubbed from anything returned to callers (paths, secrets).
    pub redact: Vec<String>,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig {
            step_timeout: Duration::from_secs(60),
            memory_bytes: 1 << 30,
            session_idle_ttl: chrono::Duration::hours(1),
            pool_size: 8,
            expose_logs: true,
            redact: Vec::new(),
        }
    }
}

/// What one handler execution produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub components: Vec<ComponentSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_token: Option<String>,
    pub logs: String,
    pub duration_ms: u64,
}

impl StepResult {
    /// Equality ignoring wall-clock timing.
    pub fn same_outcome(&self, other: &StepResult) -> bool {
        self.components == other.components && self.state_token == other.state_token && self.logs == other.logs
    }
}

/// Which version a new session runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum VersionSelector {
    #[default]
    Live,
    Version(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSession {
    pub session_id: String,
    pub model: String,
    pub version_id: u64,
    /// Index of the next handler to run; handlers `0..cursor` have results.
    pub cursor: usize,
    pub step_count: usize,
    /// `payloads[k]` is what was submitted for step `k`.
    pub payloads: Vec<Vec<Value>>,
    /// `results[j]` is the output of handler `j`.
    pub results: Vec<StepResult>,
    pub created_at: DateTime<Utc>,
    pub last_active: DateTime<Utc>,
}

impl RunSession {
    pub fn state_tokens(&self) -> Vec<Option<String>> {
        self.results.iter().map(|r| r.state_token.clone()).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.cursor >= self.step_count
    }
}

struct Pool {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Pool);

impl Pool {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock();
        while *free == 0 {
            self.cv.wait(&mut free);
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock() += 1;
        self.0.cv.notify_one();
    }
}

/// Runs published models: sessions, re-runs and direct invocation.
pub struct Orchestrator {
    registry: Arc<Registry>,
    bundles: BundleCache,
    runners: RunnerRegistry,
    launcher: Launcher,
    states: StateStore,
    clock: Arc<dyn Clock>,
    config: OrchestratorConfig,
    sessions: Mutex<HashMap<String, Arc<Mutex<RunSession>>>>,
    pool: Pool,
    executions: AtomicU64,
}

impl std::fmt::Debug for Orchestrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Orchestrator").field("config", &self.config).finish()
    }
}

impl Orchestrator {
    pub fn new(
        registry: Arc<Registry>,
        bundles: BundleCache,
        runners: RunnerRegistry,
        launcher: Launcher,
        states: StateStore,
        clock: Arc<dyn Clock>,
        config: OrchestratorConfig,
    ) -> Self {
        let pool = Pool {
            free: Mutex::new(config.pool_size.max(1)),
            cv: Condvar::new(),
        };
        Orchestrator {
            registry,
            bundles,
            runners,
            launcher,
            states,
            clock,
            config,
            sessions: Mutex::new(HashMap::new()),
            pool,
            executions: AtomicU64::new(0),
        }
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn runners(&self) -> &RunnerRegistry {
        &self.runners
    }

    pub fn launcher(&self) -> &Launcher {
        &self.launcher
    }

    pub fn bundles(&self) -> &BundleCache {
        &self.bundles
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    /// Number of handler executions attempted (each spawns one worker).
    pub fn execution_count(&self) -> u64 {
        self.executions.load(Ordering::Relaxed)
    }

    fn redact(&self, text: &str) -> String {
        let mut out = text.to_string();
        for needle in self.config.redact.iter().filter(|s| !s.is_empty()) {
            out = out.replace(needle.as_str(), "<redacted>");
        }
        out
    }

    /// Runs handler `handler` of a finalized version with the given inputs.
    pub fn execute(
        &self,
        model: &str,
        version_id: u64,
        handler: usize,
        payloads: Vec<Value>,
        state: Option<Vec<u8>>,
    ) -> Result<StepResult, OrchestratorError> {
        let record = self.registry.version_record(model, version_id)?;
        let metadata = self.registry.version_metadata(model, version_id)?;
        if handler >= metadata.steps.len() {
            return Err(OrchestratorError::NoSuchStep(handler));
        }
        let bundle = self
            .bundles
            .materialize(model, version_id, &record.artifact_map())
            .map_err(|e| OrchestratorError::Internal(self.redact(&e.to_string())))?;
        let image = self.runners.resolve_runner(&metadata.dependencies)?;
        let request = InvokeRequest {
            model: model.to_string(),
            version_id,
            step: handler,
            handler: bundle
                .manifest
                .handlers
                .get(handler)
                .cloned()
                .ok_or(OrchestratorError::NoSuchStep(handler))?,
            payloads,
            state: state.map(StateBlob),
            limits: Limits {
                timeout_ms: self.config.step_timeout.as_millis() as u64,
                memory_bytes: self.config.memory_bytes,
            },
        };
        let response = {
            let _permit = self.pool.acquire();
            self.executions.fetch_add(1, Ordering::Relaxed);
            self.launcher.invoke(&bundle.dir, bundle.manifest.kind, &image.dir, &request)
        };
        let logs = self.redact(&response.logs);
        let failure = |message: String| OrchestratorError::RunnerFailure {
            message: self.redact(message.lines().next().unwrap_or_default()),
            detail: self.config.expose_logs.then(|| format!("{}\n{}", self.redact(&message), logs)),
        };
        match response.status {
            InvokeStatus::Ok => {}
            InvokeStatus::Timeout => return Err(OrchestratorError::Timeout(request.limits.timeout_ms)),
            InvokeStatus::HandlerError | InvokeStatus::ProtocolError => {
                return Err(failure(response.error.unwrap_or_else(|| "worker failed".into())))
            }
        }
        let components = check_rendered(&metadata, handler, response.components.unwrap_or_default()).map_err(failure)?;
        let state_token = match response.state {
            Some(blob) => Some(
                self.states
                    .put(
                        &StateProvenance {
                            model: model.to_string(),
                            version_id,
                            step: handler,
                        },
                        &blob.0,
                    )
                    .map_err(|e| OrchestratorError::Internal(e.to_string()))?,
            ),
            None => None,
        };
        Ok(StepResult {
            components,
            state_token,
            logs: if self.config.expose_logs { logs } else { String::new() },
            duration_ms: response.duration_ms,
        })
    }

    fn resolve_version(&self, model: &str, selector: VersionSelector) -> Result<(u64, Arc<ModelMetadata>), OrchestratorError> {
        let record = self.registry.model_record(model)?;
        let version_id = match selector {
            VersionSelector::Live => record.live.ok_or_else(|| OrchestratorError::NoLiveVersion(model.to_string()))?,
            VersionSelector::Version(v) => record
                .version(v)
                .map(|r| r.version_id)
                .ok_or_else(|| OrchestratorError::VersionNotFinalized(model.to_string(), v))?,
        };
        Ok((version_id, self.registry.version_metadata(model, version_id)?))
    }

    /// Starts a session by running handler 0, which renders step 0.
    pub fn create_session(&self, model: &str, selector: VersionSelector) -> Result<RunSession, OrchestratorError> {
        self.collect_idle();
        let (version_id, metadata) = self.resolve_version(model, selector)?;
        let first = self.execute(model, version_id, 0, Vec::new(), None)?;
        let now = self.clock.now();
        let session = RunSession {
            session_id: hex::encode(rand::random::<[u8; 16]>()),
            model: model.to_string(),
            version_id,
            cursor: 1,
            step_count: metadata.steps.len(),
            payloads: Vec::new(),
            results: vec![first],
            created_at: now,
            last_active: now,
        };
        self.sessions
            .lock()
            .insert(session.session_id.clone(), Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    pub fn session(&self, session_id: &str) -> Result<RunSession, OrchestratorError> {
        let slot = self.session_slot(session_id)?;
        let s = slot.lock().clone();
        Ok(s)
    }

    fn session_slot(&self, session_id: &str) -> Result<Arc<Mutex<RunSession>>, OrchestratorError> {
        self.sessions
            .lock()
            .get(session_id)
            .cloned()
            .ok_or_else(|| OrchestratorError::SessionNotFound(session_id.to_string()))
    }

    /// Submits the payloads for the step whose components were last
    /// rendered (`cursor - 1`) and runs the next handler.
    pub fn submit_step(&self, session_id: &str, step: usize, payloads: Vec<Value>) -> Result<StepResult, OrchestratorError> {
        self.advance(session_id, step, payloads, false)
    }

    /// Re-submits an earlier step, discarding everything after it.
    pub fn rerun_step(&self, session_id: &str, step: usize, payloads: Vec<Value>) -> Result<StepResult, OrchestratorError> {
        self.advance(session_id, step, payloads, true)
    }

    fn advance(&self, session_id: &str, step: usize, payloads: Vec<Value>, rerun: bool) -> Result<StepResult, OrchestratorError> {
        let slot = self.session_slot(session_id)?;
        let mut session = slot.try_lock().ok_or(OrchestratorError::SessionBusy)?;
        let expected = session.cursor - 1;
        if rerun {
            if step >= session.cursor {
                return Err(OrchestratorError::StepOutOfOrder(format!(
                    "step {step} has not been rendered yet; the session is at step {expected}"
                )));
            }
        } else if step != expected {
            return Err(OrchestratorError::StepOutOfOrder(format!(
                "the session expects payloads for step {expected}, not step {step}"
            )));
        }
        if step + 1 >= session.step_count {
            return Err(OrchestratorError::StepOutOfOrder(format!(
                "step {step} is the final step; there is nothing to submit"
            )));
        }
        let metadata = self.registry.version_metadata(&session.model, session.version_id)?;
        validate_step_payloads(&metadata.steps[step], &payloads).map_err(OrchestratorError::ValidationFailed)?;

        let state = match &session.results[step].state_token {
            Some(token) => Some(
                self.states
                    .get(token)
                    .map(|(_, bytes)| bytes)
                    .ok_or_else(|| OrchestratorError::Internal("session state is no longer available".into()))?,
            ),
            None => None,
        };
        let result = self.execute(&session.model, session.version_id, step + 1, payloads.clone(), state)?;

        session.payloads.truncate(step);
        session.payloads.push(payloads);
        session.results.truncate(step + 1);
        session.results.push(result.clone());
        session.cursor = step + 2;
        session.last_active = self.clock.now();
        Ok(result)
    }

    /// Runs handler `step` without a session. `payloads` are those of step
    /// `step - 1`; `state_token` must come from handler `step - 1` of the
    /// same model version.
    pub fn invoke_direct(
        &self,
        model: &str,
        version_id: u64,
        step: usize,
        payloads: Vec<Value>,
        state_token: Option<&str>,
    ) -> Result<StepResult, OrchestratorError> {
        self.registry.version_record(model, version_id)?;
        let metadata = self.registry.version_metadata(model, version_id)?;
        if step >= metadata.steps.len() {
            return Err(OrchestratorError::NoSuchStep(step));
        }
        if step == 0 {
            if !payloads.is_empty() {
                return Err(OrchestratorError::ValidationFailed(ValidationErrors(vec![Violation::new(
                    ErrorCode::CardinalityViolation,
                    "payloads",
                    "step 0 takes no payloads",
                )])));
            }
            if state_token.is_some() {
                return Err(OrchestratorError::StateTokenMismatch);
            }
        } else {
            validate_step_payloads(&metadata.steps[step - 1], &payloads).map_err(OrchestratorError::ValidationFailed)?;
        }
        let state = match state_token {
            Some(token) => {
                let (origin, bytes) = self.states.get(token).ok_or(OrchestratorError::StateTokenMismatch)?;
                let expected = StateProvenance {
                    model: model.to_string(),
                    version_id,
                    step: step.wrapping_sub(1),
                };
                if origin != expected {
                    return Err(OrchestratorError::StateTokenMismatch);
                }
                Some(bytes)
            }
            None => None,
        };
        self.execute(model, version_id, step, payloads, state)
    }

    /// Drops sessions idle for longer than the configured TTL.
    pub fn collect_idle(&self) -> usize {
        let cutoff = self.clock.now() - self.config.session_idle_ttl;
        let mut sessions = self.sessions.lock();
        let before = sessions.len();
        sessions.retain(|_, s| s.try_lock().map_or(true, |s| s.last_active > cutoff));
        before - sessions.len()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().len()
    }
}

/// Parses the worker's components and checks them against the metadata of
/// the step the handler renders.
fn check_rendered(metadata: &ModelMetadata, handler: usize, raw: Vec<Value>) -> Result<Vec<ComponentSpec>, String> {
    let declared = &metadata.steps[handler];
    if raw.len() != declared.inputs.len() {
        return Err(format!(
            "handler rendered {} component(s); step `{}` declares {}",
            raw.len(),
            declared.name,
            declared.inputs.len()
        ));
    }
    let mut out = Vec::with_capacity(raw.len());
    for (i, (value, spec)) in raw.iter().zip(&declared.inputs).enumerate() {
        let c = ComponentSpec::from_json(value).map_err(|e| format!("rendered component {i} is invalid: {e}"))?;
        if c.props != spec.props {
            return Err(format!(
                "rendered component {i} ({}) does not match the declared {} of step `{}`",
                c.kind(),
                spec.kind(),
                declared.name
            ));
        }
        out.push(c);
    }
    Ok(out)
}
