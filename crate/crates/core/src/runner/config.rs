use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Result, RunnerError};
use crate::corpus::{Granularity, SourceFormat, DEFAULT_MIN_DOMAIN_SIZE, SPLIT_PART_SIZE};
use crate::embed::DEFAULT_DIMENSION;
use crate::modelclient::{EndpointConfig, DEFAULT_MAX_OUTPUT_TOKENS};
use crate::prompt::{self, Style, Task, DEFAULT_BUDGET, DEFAULT_MAX_DEMOS, DEFAULT_ORDERS, DEFAULT_OUTPUT_MARGIN};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ZeroShot,
    IclRandom,
    IclId,
    IclRet4,
    IclRet8,
    IclSampledFromRet,
    ExportFtId,
    ExportFtRandom,
    ExportRetK,
    ExportCombinedK,
    ExportVotek,
    ExportIsoscore,
}

impl Method {
    pub const ALL: [Method; 12] = [
        Method::ZeroShot,
        Method::IclRandom,
        Method::IclId,
        Method::IclRet4,
        Method::IclRet8,
        Method::IclSampledFromRet,
        Method::ExportFtId,
        Method::ExportFtRandom,
        Method::ExportRetK,
        Method::ExportCombinedK,
        Method::ExportVotek,
        Method::ExportIsoscore,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::ZeroShot => "zero_shot",
            Method::IclRandom => "icl_random",
            Method::IclId => "icl_id",
            Method::IclRet4 => "icl_ret4",
            Method::IclRet8 => "icl_ret8",
            Method::IclSampledFromRet => "icl_sampled_from_ret",
            Method::ExportFtId => "export_ft_id",
            Method::ExportFtRandom => "export_ft_random",
            Method::ExportRetK => "export_ret_k",
            Method::ExportCombinedK => "export_combined_k",
            Method::ExportVotek => "export_votek",
            Method::ExportIsoscore => "export_isoscore",
        }
    }

    /// Name written into exported rows and file names.
    pub fn export_label(self) -> Option<&'static str> {
        match self {
            Method::ExportFtId => Some("ft_id"),
            Method::ExportFtRandom => Some("ft_random"),
            Method::ExportRetK => Some("ret"),
            Method::ExportCombinedK => Some("combined"),
            Method::ExportVotek => Some("votek"),
            Method::ExportIsoscore => Some("isoscore"),
            _ => None,
        }
    }

    pub fn is_export(self) -> bool {
        self.export_label().is_some()
    }
}

impl std::str::FromStr for Method {
    type Err = RunnerError;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| RunnerError::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub style: Style,
    /// Indices into the template catalog for the chosen style.
    pub variants: Vec<usize>,
    pub budget: usize,
    pub max_demos: usize,
    pub output_margin: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            style: Style::Completion,
            variants: vec![0],
            budget: DEFAULT_BUDGET,
            max_demos: DEFAULT_MAX_DEMOS,
            output_margin: DEFAULT_OUTPUT_MARGIN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingBackend {
    Hashed,
    Remote,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub provider: EmbeddingBackend,
    pub dimension: usize,
    pub url: Option<String>,
    pub model: Option<String>,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            provider: EmbeddingBackend::Hashed,
            dimension: DEFAULT_DIMENSION,
            url: None,
            model: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelBackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backend: ModelBackendKind,
    pub name: String,
    pub max_output_tokens: u32,
    pub temperature: f64,
    pub endpoint: Option<EndpointConfig>,
    pub cache: bool,
    /// Defaults to `<output_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backend: ModelBackendKind::Mock,
            name: "mock".into(),
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            temperature: 0.0,
            endpoint: None,
            cache: true,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// CodeSearchNet-style JSONL files, relative to the config file.
    pub corpus: Vec<PathBuf>,
    pub format: SourceFormat,
    /// Generated corpus, merged with any files.
    pub synthetic: Option<SynthConfig>,
    pub output_dir: PathBuf,
    pub granularities: Vec<Granularity>,
    pub methods: Vec<Method>,
    pub tasks: Vec<Task>,
    pub split_seeds: Vec<u64>,
    pub n_orders: usize,
    /// Use order `i` only with the `i`-th split seed instead of crossing
    /// every seed with every order.
    pub pair_orders: bool,
    pub min_domain_size: usize,
    /// Cap on domains per granularity, 0 for all.
    pub max_domains: usize,
    pub icl_shots: usize,
    /// Training-set sizes for the fine-tuning exports.
    pub shots: Vec<usize>,
    pub ret_ks: Vec<usize>,
    pub sampled_demos: Vec<usize>,
    pub sampled_pool_k: usize,
    pub prompt: PromptConfig,
    pub embedding: EmbeddingConfig,
    pub model: ModelConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: Vec::new(),
            format: SourceFormat::CodeSearchNet,
            synthetic: None,
            output_dir: PathBuf::from("out"),
            granularities: vec![Granularity::Folder, Granularity::Repo, Granularity::Org],
            methods: vec![Method::ZeroShot, Method::IclRandom, Method::IclId, Method::IclRet4],
            tasks: Task::ALL.to_vec(),
            split_seeds: (0..5).collect(),
            n_orders: DEFAULT_ORDERS,
            pair_orders: false,
            min_domain_size: DEFAULT_MIN_DOMAIN_SIZE,
            max_domains: 0,
            icl_shots: 8,
            shots: vec![8, 16, 32],
            ret_ks: vec![4, 8, 32],
            sampled_demos: vec![4, 8],
            sampled_pool_k: 4,
            prompt: PromptConfig::default(),
            embedding: EmbeddingConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML config; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| RunnerError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.corpus = cfg.corpus.iter().map(|p| resolve(base, p)).collect();
        cfg.output_dir = resolve(base, &cfg.output_dir);
        cfg.model.cache_dir = cfg.model.cache_dir.as_deref().map(|p| resolve(base, p));
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RunnerError::Config(m));
        if self.corpus.is_empty() && self.synthetic.is_none() {
            return bad("no corpus files and no synthetic corpus".into());
        }
        if self.methods.is_empty() || self.tasks.is_empty() || self.granularities.is_empty() {
            return bad("methods, tasks and granularities must be non-empty".into());
        }
        if self.split_seeds.is_empty() || self.n_orders == 0 {
            return bad("need at least one split seed and one demo order".into());
        }
        if self.min_domain_size < 3 * SPLIT_PART_SIZE {
            return bad(format!("min_domain_size must be at least {}", 3 * SPLIT_PART_SIZE));
        }
        if self.icl_shots > SPLIT_PART_SIZE {
            return bad(format!("icl_shots must be at most {SPLIT_PART_SIZE}"));
        }
        if self.methods.contains(&Method::ExportFtId) && self.shots.iter().any(|&n| n > SPLIT_PART_SIZE) {
            return bad(format!("export_ft_id shots must be at most {SPLIT_PART_SIZE}"));
        }
        if self.ret_ks.contains(&0) || self.sampled_pool_k == 0 {
            return bad("retrieval k must be positive".into());
        }
        if self.prompt.variants.is_empty() {
            return bad("prompt.variants must be non-empty".into());
        }
        for &task in &self.tasks {
            for &v in &self.prompt.variants {
                prompt::variant(task, self.prompt.style, v)?;
            }
        }
        if self.model.backend == ModelBackendKind::Http && self.model.endpoint.is_none() {
            return bad("model.backend = \"http\" needs a [model.endpoint] table".into());
        }
        if self.embedding.provider == EmbeddingBackend::Remote && self.embedding.url.is_none() {
            return bad("embedding.provider = \"remote\" needs embedding.url".into());
        }
        Ok(())
    }

    /// Hash of everything that affects results. Output and cache locations
    /// are left out so a run can be repeated elsewhere.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.model.cache_dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(format!("run-{}", &self.hash()[..12]))
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.model.cache_dir.clone().unwrap_or_else(|| self.output_dir.join("cache"))
    }

    pub fn has(&self, m: Method) -> bool {
        self.methods.contains(&m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        methods = ["zero_shot", "icl_ret4", "export_votek"]
        [synthetic]
        seed = 3
    "#;

    #[test]
    fn defaults_fill_a_minimal_config() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.methods, vec![Method::ZeroShot, Method::IclRet4, Method::ExportVotek]);
        assert_eq!(cfg.split_seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(cfg.n_orders, 5);
        assert_eq!(cfg.synthetic.as_ref().unwrap().seed, 3);
        assert_eq!(cfg.synthetic.as_ref().unwrap().test_orgs, 2);
    }

    #[test]
    fn hash_ignores_locations_only() {
        let a = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output_dir = "/elsewhere".into();
        b.model.cache_dir = Some("/tmp/c".into());
        assert_eq!(a.hash(), b.hash());
        b.split_seeds = vec![0];
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "methods = [\"zero_shot\"]",
            "methods = [\"nope\"]\n[synthetic]",
            "methods = [\"zero_shot\"]\nmin_domain_size = 10\n[synthetic]",
            "methods = [\"zero_shot\"]\n[synthetic]\n[prompt]\nvariants = [99]",
            "methods = [\"zero_shot\"]\n[synthetic]\n[model]\nbackend = \"http\"",
            "methods = [\"zero_shot\"]\nunknown = 1\n[synthetic]",
        ] {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.as_str()));
        }
    }
}
