use std::path::{Path, PathBuf};

use legalprompt::embedding::{EmbeddingProviderConfig, KeyMode};
use legalprompt::ensemble::EnsembleConfig;
use legalprompt::llm::{ChatSettings, RetryPolicy, TransportRetry};
use legalprompt::prompting::Strategy;
use legalprompt::retrieval::RetrievalConfig;
use legalprompt::window::DEFAULT_WORD_LIMIT;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ChatProviderKind {
    #[default]
    Mock,
    Remote,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum WindowClassifierKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub fixed_shots: Option<PathBuf>,
    /// TOML prompt template; the built-in template when absent.
    pub template: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatConfig {
    pub provider: ChatProviderKind,
    pub endpoint: Option<String>,
    /// JSON-lines `{"digest", "response"}` answers for the mock provider.
    pub mock_script: Option<PathBuf>,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub transport: TransportRetry,
    pub model_name: String,
    pub temperature: f64,
    pub cot_max_tokens: u32,
    pub label_max_tokens: u32,
}

impl Default for ChatConfig {
    fn default() -> Self {
        let defaults = ChatSettings::default();
        Self {
            provider: ChatProviderKind::Mock,
            endpoint: None,
            mock_script: None,
            max_in_flight: 4,
            timeout_secs: 120,
            transport: TransportRetry::default(),
            model_name: defaults.model_name,
            temperature: defaults.temperature,
            cot_max_tokens: defaults.cot_max_tokens,
            label_max_tokens: defaults.label_max_tokens,
        }
    }
}

impl ChatConfig {
    pub fn settings(&self) -> ChatSettings {
        ChatSettings {
            model_name: self.model_name.clone(),
            temperature: self.temperature,
            cot_max_tokens: self.cot_max_tokens,
            label_max_tokens: self.label_max_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub limit: usize,
    pub classifier: WindowClassifierKind,
    pub endpoint: Option<String>,
    pub true_keywords: Vec<String>,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            limit: DEFAULT_WORD_LIMIT,
            classifier: WindowClassifierKind::Mock,
            endpoint: None,
            true_keywords: Vec::new(),
            max_in_flight: 4,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    /// Response cache; `<output_dir>/cache` when absent.
    pub cache_dir: Option<PathBuf>,
    /// Index file; `<output_dir>/index/examples.lpix` when absent.
    pub index_path: Option<PathBuf>,
    pub jobs: usize,
    pub strategies: Vec<Strategy>,
    pub key_mode: KeyMode,
    /// Warn when a rendered prompt exceeds this many words.
    pub word_budget: Option<usize>,
    pub data: DataPaths,
    pub embedding: EmbeddingProviderConfig,
    pub retrieval: RetrievalConfig,
    pub chat: ChatConfig,
    pub retry: RetryPolicy,
    pub ensemble: EnsembleConfig,
    pub window: WindowConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            cache_dir: None,
            index_path: None,
            jobs: 1,
            strategies: Strategy::ALL.to_vec(),
            key_mode: KeyMode::Triplet,
            word_budget: None,
            data: DataPaths::default(),
            embedding: EmbeddingProviderConfig::default(),
            retrieval: RetrievalConfig::default(),
            chat: ChatConfig::default(),
            retry: RetryPolicy::default(),
            ensemble: EnsembleConfig::default(),
            window: WindowConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Relative paths in a config file resolve against the file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            config.rebase(base);
        }
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in [
            &mut self.cache_dir,
            &mut self.index_path,
            &mut self.data.train,
            &mut self.data.validation,
            &mut self.data.test,
            &mut self.data.fixed_shots,
            &mut self.data.template,
            &mut self.chat.mock_script,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.jobs == 0 {
            return Err("jobs must be at least 1".into());
        }
        if self.strategies.is_empty() {
            return Err("strategies must not be empty".into());
        }
        if self.retrieval.per_class_k == 0 {
            return Err("retrieval.per_class_k must be at least 1".into());
        }
        self.ensemble.validate().map_err(|e| format!("ensemble: {e}"))?;
        self.chat
            .settings()
            .params_for(legalprompt::prompting::TerminalField::Analysis)
            .validate()
            .map_err(|e| format!("chat: {e}"))?;
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.output_dir.join("cache"))
    }

    pub fn index_path(&self) -> PathBuf {
        self.index_path
            .clone()
            .unwrap_or_else(|| self.output_dir.join("index").join("examples.lpix"))
    }
}
