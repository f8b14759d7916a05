use std::collections::{HashMap, VecDeque};

use parking_lot::Mutex;

use super::{BackendError, ChatBackend, LlmRequest};

type Responder = Box<dyn Fn(&LlmRequest) -> Result<String, BackendError> + Send + Sync>;

/// Deterministic backend for tests and fixtures.
///
/// Queued failures are returned first, one per call. After that a request is answered
/// by exact prompt match, then by the fallback responder; anything else is a fatal error.
/// Every call is logged.
#[derive(Default)]
pub struct ScriptedBackend {
    responses: HashMap<String, String>,
    responder: Option<Responder>,
    failures: Mutex<VecDeque<BackendError>>,
    calls: Mutex<Vec<LlmRequest>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_response(mut self, prompt: impl Into<String>, text: impl Into<String>) -> Self {
        self.responses.insert(prompt.into(), text.into());
        self
    }

    pub fn with_responder<F>(mut self, f: F) -> Self
    where
        F: Fn(&LlmRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        self.responder = Some(Box::new(f));
        self
    }

    pub fn with_failures(self, failures: Vec<BackendError>) -> Self {
        *self.failures.lock() = failures.into();
        self
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().len()
    }

    pub fn calls(&self) -> Vec<LlmRequest> {
        self.calls.lock().clone()
    }
}

impl ChatBackend for ScriptedBackend {
    fn send(&self, request: &LlmRequest) -> Result<String, BackendError> {
        self.calls.lock().push(request.clone());
        if let Some(err) = self.failures.lock().pop_front() {
            return Err(err);
        }
        if let Some(text) = self.responses.get(request.prompt()) {
            return Ok(text.clone());
        }
        match &self.responder {
            Some(f) => f(request),
            None => Err(BackendError::Fatal(format!(
                "no scripted response for prompt {:?}",
                request.prompt()
            ))),
        }
    }
}
