//! Access to language-model completions: prompt templates, providers,
//! cassette record/replay and the run transcript.

pub mod cassette;
pub mod gateway;
pub mod parse;
pub mod provider;
pub mod template;

pub use cassette::{
    open_cassette, record_cassette, CassetteError, CassetteProvider, CassetteRecord,
};
pub use gateway::{
    vars, CallOptions, Exchange, GatewayConfig, LlmGateway, RetryPolicy, Transcript, Vars,
};
pub use provider::{
    CompletionRequest, Decoding, FnProvider, HttpProvider, LiveConfig, Provider, ProviderError,
    ProviderKind, ScriptedProvider,
};
pub use template::{ids, PromptTemplate, RenderedPrompt, TemplateRegistry};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("unknown prompt template {0:?}")]
    UnknownTemplate(String),
    #[error("template {template} needs variable {var:?}")]
    MissingVar { template: String, var: String },
    #[error("cassette has no response for {template_id} (hash {hash}, lane {lane})")]
    CassetteMiss {
        template_id: String,
        hash: String,
        lane: u32,
    },
    #[error("provider error: {0}")]
    Provider(String),
}
