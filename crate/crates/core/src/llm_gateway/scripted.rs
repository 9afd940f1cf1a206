use std::sync::Mutex;

use super::{ChatProvider, CompletionRequest, GatewayError, ModelResponse};

/// Replays canned responses in order and records every request.
#[derive(Debug)]
pub struct ScriptedProvider {
    id: String,
    native_tools: bool,
    state: Mutex<ScriptState>,
}

#[derive(Debug)]
struct ScriptState {
    script: Vec<ModelResponse>,
    cursor: usize,
    log: Vec<CompletionRequest>,
}

impl ScriptedProvider {
    pub fn new(script: Vec<ModelResponse>) -> Self {
        ScriptedProvider {
            id: "scripted".into(),
            native_tools: false,
            state: Mutex::new(ScriptState {
                script,
                cursor: 0,
                log: Vec::new(),
            }),
        }
    }

    /// Convenience for all-text scripts (tool calls included as fenced blocks).
    pub fn from_texts<S: AsRef<str>>(texts: &[S]) -> Self {
        Self::new(texts.iter().map(|t| ModelResponse::text(t.as_ref())).collect())
    }

    pub fn with_native_tools(mut self, native: bool) -> Self {
        self.native_tools = native;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.state.lock().expect("script lock").log.clone()
    }

    pub fn served(&self) -> usize {
        self.state.lock().expect("script lock").cursor
    }

    pub fn remaining(&self) -> usize {
        let s = self.state.lock().expect("script lock");
        s.script.len() - s.cursor
    }
}

impl ChatProvider for ScriptedProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn supports_native_tools(&self) -> bool {
        self.native_tools
    }

    fn send(&self, request: &CompletionRequest) -> Result<ModelResponse, GatewayError> {
        let mut s = self.state.lock().expect("script lock");
        s.log.push(request.clone());
        let served = s.cursor;
        let reply = s.script.get(served).cloned().ok_or(GatewayError::ScriptExhausted { served })?;
        s.cursor += 1;
        Ok(reply)
    }
}
