//! Command line. Exit codes: 0 success, 1 domain error, 2 config or usage
//! error, 3 environment error (files, sockets).

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use radassist_core::corpus::{
    build_triplet, extract_organ_section, from_jsonl, generate_synthetic_corpus, parse_report_sections, split,
    to_jsonl, Condition, CorpusError, SplitSpec, SyntheticManifest, SyntheticParams, TrainingTriplet, TripletSource,
};
use radassist_core::imaging::{parse_nifti, parse_raw, ParseAs, Parsed};
use radassist_core::metrics::{evaluate_dataset, EvalPair, EvalReport, Label};
use radassist_core::promptgen::{render_prompt, split_side, Side};
use radassist_core::radiomics::{compute_organ, paired_ratio};
use radassist_core::router::OrganDictionary;
use radassist_core::{
    Backend, BackendParams, ImagingError, LabelMask, LateralityRatio, Modality, OrganFeatureSet, VoxelVolume,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{BackendConfig, BackendKind, Config, ConfigError};
use crate::mock::{MockChatServer, MockReply};
use crate::service::{self, AppState, StartError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{name}: {message}")]
    Domain { name: &'static str, message: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Environment(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Domain { .. } => 1,
            Self::Usage(_) | Self::Config(_) => 2,
            Self::Io { .. } | Self::Environment(_) => 3,
        }
    }

    fn domain(name: &'static str, message: impl ToString) -> Self {
        Self::Domain {
            name,
            message: message.to_string(),
        }
    }
}

impl From<ImagingError> for CliError {
    fn from(e: ImagingError) -> Self {
        Self::domain(e.name(), e)
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::InvalidFraction(_) => Self::Usage(e.to_string()),
            _ => Self::domain(e.name(), e),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn read(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn read_text(path: &Path) -> CliResult<String> {
    String::from_utf8(read(path)?).map_err(|e| CliError::domain("InvalidUtf8", format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_owned(),
            source,
        })?;
    }
    std::fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Writes to `path`, or stdout when absent.
fn emit(path: Option<&Path>, bytes: &[u8]) -> CliResult {
    match path {
        Some(p) => write(p, bytes),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(|source| CliError::Io {
                    path: "<stdout>".into(),
                    source,
                })
        }
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_slice(&read(path)?).map_err(|e| CliError::domain("InvalidJson", format!("{}: {e}", path.display())))
}

/// Feature file written by `analyze` and `dataset synth`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisFile {
    pub features: BTreeMap<String, OrganFeatureSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<LateralityRatio>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

impl AnalysisFile {
    /// Feature sets belonging to `organ` (either side) and the ratio when
    /// both sides are present.
    pub fn for_organ(&self, organ: &str) -> CliResult<(Vec<OrganFeatureSet>, Option<LateralityRatio>, String)> {
        let (_, base) = split_side(organ);
        let features: Vec<_> = self
            .features
            .values()
            .filter(|f| split_side(&f.organ).1 == base)
            .cloned()
            .collect();
        if features.is_empty() {
            return Err(CliError::domain("EmptyFeatures", format!("no feature sets for {organ:?}")));
        }
        let ratio = self.ratio.filter(|_| features.len() == 2);
        Ok((features, ratio, base))
    }
}

#[derive(Debug, Parser)]
#[command(name = "radassist", version, about = "Radiomics-informed radiology report completion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute organ features from an image and its segmentation mask.
    Analyze(AnalyzeArgs),
    /// Render the informative prompt for an organ.
    Prompt(PromptArgs),
    /// Build and split instruction-tuning corpora.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Generate a suggestion for one prompt or for every item of a dataset.
    Complete(CompleteArgs),
    /// Score predictions against references (BLEU-1..4, ROUGE-L).
    Eval(EvalArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Run a local chat-completions server backed by the rule table.
    MockServer(MockArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// NIfTI-1 file, or a raw header `.json` with the data in a sibling `.raw`.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    /// JSON object mapping label id to organ name. Required for NIfTI masks.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long = "organ", required = true, num_args = 1..)]
    pub organs: Vec<String>,
    #[arg(long, value_enum, default_value_t = ModalityArg::Ct)]
    pub modality: ModalityArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModalityArg {
    Ct,
    Xr,
    Other,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Ct => Modality::CT,
            ModalityArg::Xr => Modality::XR,
            ModalityArg::Other => Modality::OTHER,
        }
    }
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub organ: String,
    #[arg(long, default_value = "")]
    pub prefix: String,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Generate a seeded synthetic kidney corpus.
    Synth(SynthArgs),
    /// Turn reports and feature files into instruction triplets.
    Build(BuildArgs),
    /// Seeded train/test split of a JSONL file.
    Split(SplitArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConditionArg {
    With,
    Prefix,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub reports: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub organ: String,
    #[arg(long, value_enum)]
    pub condition: ConditionArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.9)]
    pub ratio: f64,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Rule,
    Remote,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[arg(long, required_unless_present = "dataset", conflicts_with = "dataset")]
    pub features: Option<PathBuf>,
    #[arg(long, required_unless_present = "dataset")]
    pub organ: Option<String>,
    #[arg(long, default_value = "")]
    pub prefix: String,
    /// Triplet JSONL; every item's input is completed, output is JSONL.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, requires = "dataset")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    /// Service config file whose backend section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, default_value = "RADASSIST_API_KEY")]
    pub api_key_env: String,
    #[arg(long)]
    pub timeout_s: Option<f64>,
    #[arg(long, default_value_t = 64)]
    pub max_tokens: u32,
    /// Worker threads for `--dataset`; defaults to the core count.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Model name recorded in the report.
    #[arg(long, default_value = "rule")]
    pub model: String,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct MockArgs {
    #[arg(long, default_value = "127.0.0.1:0")]
    pub addr: String,
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Prompt(a) => prompt(a),
        Command::Dataset(DatasetCommand::Synth(a)) => synth(a),
        Command::Dataset(DatasetCommand::Build(a)) => build(a),
        Command::Dataset(DatasetCommand::Split(a)) => split_cmd(a),
        Command::Complete(a) => complete(a),
        Command::Eval(a) => eval(a),
        Command::Serve(a) => serve(a),
        Command::MockServer(a) => mock_server(a),
    }
}

// ---- analyze / prompt ------------------------------------------------------

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.starts_with(&[0x1f, 0x8b])
}

/// Raw when the path is a `.json` header, NIfTI otherwise.
fn load(path: &Path, target: ParseAs) -> CliResult<Parsed> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let mut header: Value = parse_json(path)?;
        if let ParseAs::Mask(table) = &target {
            if !table.is_empty() {
                let labels: BTreeMap<String, &String> = table.iter().map(|(k, v)| (k.to_string(), v)).collect();
                header["labels"] = serde_json::json!(labels);
            }
        }
        let data = read(&path.with_extension("raw"))?;
        return Ok(parse_raw(header.to_string().as_bytes(), &data)?);
    }
    let bytes = read(path)?;
    if is_gzip(&bytes) {
        return Err(CliError::domain("UnsupportedFormat", "gzip-compressed NIfTI; decompress first"));
    }
    Ok(parse_nifti(&bytes, target)?)
}

pub fn load_study(image: &Path, mask: &Path, labels: Option<&Path>, modality: Modality) -> CliResult<(VoxelVolume, LabelMask)> {
    let table = match labels {
        Some(p) => {
            let raw: BTreeMap<String, String> = parse_json(p)?;
            raw.into_iter()
                .map(|(k, v)| {
                    k.parse::<u32>()
                        .map(|id| (id, v))
                        .map_err(|_| CliError::domain("MalformedHeader", format!("label key {k:?}")))
                })
                .collect::<CliResult<BTreeMap<_, _>>>()?
        }
        None => BTreeMap::new(),
    };
    let Parsed::Volume(volume) = load(image, ParseAs::Image(modality))? else {
        return Err(CliError::domain("WrongKind", format!("{} holds a mask", image.display())));
    };
    let Parsed::Mask(mask) = load(mask, ParseAs::Mask(table))? else {
        return Err(CliError::domain("WrongKind", format!("{} holds an image", mask.display())));
    };
    Ok((volume, mask))
}

pub fn analyze_study(volume: &VoxelVolume, mask: &LabelMask, organs: &[String]) -> CliResult<AnalysisFile> {
    let mut out = AnalysisFile::default();
    for organ in organs {
        let f = compute_organ(volume, mask, organ).map_err(|e| CliError::domain(e.name(), e))?;
        out.features.insert(organ.clone(), f);
    }
    let left = organs.iter().find(|o| split_side(o).0 == Some(Side::Left));
    let right = left.and_then(|l| {
        organs
            .iter()
            .find(|o| split_side(o).0 == Some(Side::Right) && split_side(o).1 == split_side(l).1)
    });
    if let (Some(l), Some(r)) = (left, right) {
        out.ratio = Some(paired_ratio(&out.features[l], &out.features[r]).map_err(|e| CliError::domain(e.name(), e))?);
    }
    Ok(out)
}

fn analyze(a: AnalyzeArgs) -> CliResult {
    let (volume, mask) = load_study(&a.image, &a.mask, a.labels.as_deref(), a.modality.into())?;
    let file = analyze_study(&volume, &mask, &a.organs)?;
    let mut json = serde_json::to_vec_pretty(&file).expect("features serialize");
    json.push(b'\n');
    emit(a.out.as_deref(), &json)
}

fn prompt(a: PromptArgs) -> CliResult {
    let file: AnalysisFile = parse_json(&a.features)?;
    let (features, ratio, base) = file.for_organ(&a.organ)?;
    let p = render_prompt(&features, ratio.as_ref(), &base, &a.prefix).map_err(|e| CliError::domain("PromptError", e))?;
    emit(None, format!("{}\n", p.rendered).as_bytes())
}

// ---- dataset ---------------------------------------------------------------

fn synth(a: SynthArgs) -> CliResult {
    let cases = generate_synthetic_corpus(a.n, a.seed);
    let manifest = SyntheticManifest::new(a.seed, a.n, SyntheticParams::default());
    write(&a.out.join("manifest.json"), &serde_json::to_vec_pretty(&manifest).expect("manifest serializes"))?;
    for case in &cases {
        write(&a.out.join("reports").join(format!("{}.txt", case.case_id)), case.report.as_bytes())?;
        let file = AnalysisFile {
            features: case.features().into_iter().map(|f| (f.organ.clone(), f)).collect(),
            ratio: Some(case.ratio),
            label: Some(case.label),
        };
        write(
            &a.out.join("features").join(format!("{}.json", case.case_id)),
            &serde_json::to_vec_pretty(&file).expect("features serialize"),
        )?;
    }
    eprintln!("wrote {} cases to {}", cases.len(), a.out.display());
    Ok(())
}

fn sorted_files(dir: &Path, ext: &str) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|source| CliError::Io {
        path: dir.to_owned(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    files.sort();
    Ok(files)
}

fn build(a: BuildArgs) -> CliResult {
    let dict = OrganDictionary::default();
    let (_, organ) = split_side(&a.organ);
    let mut triplets: Vec<TrainingTriplet> = Vec::new();
    let mut skipped = 0usize;
    for path in sorted_files(&a.reports, "txt")? {
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_owned();
        let doc = parse_report_sections(&id, &read_text(&path)?);
        let target = match extract_organ_section(&doc, &organ, None, &dict) {
            Ok(t) => t,
            Err(CorpusError::OrganNotMentioned(_)) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let features_path = a.features.join(format!("{id}.json"));
        let file: Option<AnalysisFile> = match a.condition {
            ConditionArg::With => Some(parse_json(&features_path)?),
            // only the label is needed; missing files mean Unknown
            ConditionArg::Prefix => features_path.exists().then(|| parse_json(&features_path)).transpose()?,
        };
        let label = file.as_ref().and_then(|f| f.label).unwrap_or_default();
        let triplet = match a.condition {
            ConditionArg::With => {
                let (features, ratio, _) = file.as_ref().expect("loaded above").for_organ(&organ)?;
                let source = TripletSource::Radiomics {
                    features: &features,
                    ratio: ratio.as_ref(),
                };
                build_triplet(source, &target, &organ, &id, label)?
            }
            ConditionArg::Prefix => build_triplet(TripletSource::Prefix, &target, &organ, &id, label)?,
        };
        triplets.push(triplet);
    }
    if skipped > 0 {
        eprintln!("skipped {skipped} reports that do not mention the {organ}");
    }
    write(&a.out, to_jsonl(&triplets).as_bytes())?;
    eprintln!("wrote {} triplets to {}", triplets.len(), a.out.display());
    Ok(())
}

fn split_cmd(a: SplitArgs) -> CliResult {
    let items: Vec<Value> = from_jsonl(&read_text(&a.input)?)?;
    let (train, test) = split(
        &items,
        &SplitSpec {
            train_fraction: a.ratio,
            seed: a.seed,
        },
    )?;
    write(&a.train, to_jsonl(&train).as_bytes())?;
    write(&a.test, to_jsonl(&test).as_bytes())?;
    eprintln!("train {} / test {}", train.len(), test.len());
    Ok(())
}

// ---- complete / eval -------------------------------------------------------

fn backend_for(a: &CompleteArgs) -> CliResult<Arc<dyn Backend>> {
    let mut cfg = match &a.config {
        Some(p) => Config::load(p)?.backend,
        None => BackendConfig::default(),
    };
    if let Some(kind) = a.backend {
        cfg.kind = match kind {
            BackendArg::Rule => BackendKind::Rule,
            BackendArg::Remote => BackendKind::Remote,
        };
    }
    if a.rules.is_some() {
        cfg.rules_path = a.rules.clone();
    }
    if a.base_url.is_some() {
        cfg.base_url = a.base_url.clone();
    }
    if a.model.is_some() {
        cfg.model = a.model.clone();
    }
    if a.timeout_s.is_some() {
        cfg.timeout_s = a.timeout_s;
    }
    if cfg.kind == BackendKind::Remote && cfg.api_key_env.is_none() {
        cfg.api_key_env = Some(a.api_key_env.clone());
    }
    Ok(cfg.build()?)
}

/// Runs the backend to completion and returns the concatenated tokens.
pub fn complete_text(backend: &dyn Backend, prompt: &str, params: &BackendParams) -> Result<String, radassist_core::BackendError> {
    let mut text = String::new();
    let mut sink = |t: &str| {
        text.push_str(t);
        ControlFlow::Continue(())
    };
    backend.generate(prompt, params, &mut sink)?;
    Ok(text)
}

/// One line of `complete --dataset` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub report_id: String,
    pub condition: Condition,
    pub prediction: String,
    pub target: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn complete(a: CompleteArgs) -> CliResult {
    if a.max_tokens == 0 {
        return Err(CliError::Usage("--max-tokens must be at least 1".into()));
    }
    let backend = backend_for(&a)?;
    let params = BackendParams::with_max_tokens(a.max_tokens);
    let Some(dataset) = &a.dataset else {
        let file: AnalysisFile = parse_json(a.features.as_deref().expect("clap enforces"))?;
        let (features, ratio, base) = file.for_organ(a.organ.as_deref().expect("clap enforces"))?;
        let p = render_prompt(&features, ratio.as_ref(), &base, &a.prefix).map_err(|e| CliError::domain("PromptError", e))?;
        let text = complete_text(&*backend, &p.rendered, &params).map_err(|e| CliError::domain(e.name(), e))?;
        return emit(None, format!("{text}\n").as_bytes());
    };
    let triplets: Vec<TrainingTriplet> = from_jsonl(&read_text(dataset)?)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Environment(e.to_string()))?;
    // par_iter + collect keeps input order
    let predictions: Vec<Prediction> = pool.install(|| {
        triplets
            .par_iter()
            .map(|t| {
                let result = complete_text(&*backend, &t.input, &params);
                Prediction {
                    report_id: t.meta.report_id.clone(),
                    condition: t.meta.condition,
                    prediction: result.as_ref().map(|s| s.trim().to_owned()).unwrap_or_default(),
                    target: t.target.clone(),
                    label: t.meta.label,
                    error: result.err().map(|e| e.name().to_owned()),
                }
            })
            .collect()
    });
    let failed = predictions.iter().filter(|p| p.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} of {} items failed; their predictions are empty", predictions.len());
    }
    emit(a.out.as_deref(), to_jsonl(&predictions).as_bytes())
}

fn field<'a>(v: &'a Value, keys: &[&str]) -> Option<&'a str> {
    keys.iter().find_map(|k| v.get(k).and_then(Value::as_str))
}

/// Pairs predictions with references line by line. Candidate text is read
/// from `prediction`/`candidate`/`text`, reference text from
/// `target`/`reference`/`text`, and the label from `label` or `meta.label`.
pub fn eval_pairs(pred: &[Value], refs: &[Value]) -> CliResult<Vec<EvalPair>> {
    if pred.len() != refs.len() {
        let e = radassist_core::metrics::MetricsError::LengthMismatch {
            candidates: pred.len(),
            references: refs.len(),
        };
        return Err(CliError::domain(e.name(), e));
    }
    pred.iter()
        .zip(refs)
        .enumerate()
        .map(|(i, (p, r))| {
            let candidate = field(p, &["prediction", "candidate", "text"])
                .ok_or_else(|| CliError::domain("MissingField", format!("prediction line {} has no text", i + 1)))?;
            let reference = field(r, &["target", "reference", "text"])
                .ok_or_else(|| CliError::domain("MissingField", format!("reference line {} has no text", i + 1)))?;
            let label = r
                .get("label")
                .or_else(|| r.pointer("/meta/label"))
                .and_then(|l| serde_json::from_value(l.clone()).ok())
                .unwrap_or_default();
            Ok(EvalPair {
                candidate: candidate.to_owned(),
                reference: reference.to_owned(),
                label,
            })
        })
        .collect()
}

fn eval(a: EvalArgs) -> CliResult {
    let pred: Vec<Value> = from_jsonl(&read_text(&a.pred)?)?;
    let refs: Vec<Value> = from_jsonl(&read_text(&a.reference)?)?;
    let pairs = eval_pairs(&pred, &refs)?;
    let results = evaluate_dataset(&pairs).map_err(|e| CliError::domain(e.name(), e))?;
    let report = EvalReport::new(&a.reference.display().to_string(), &a.model, &results);
    eprint!("{}", report.to_table());
    let mut json = serde_json::to_vec_pretty(&report).expect("report serializes");
    json.push(b'\n');
    emit(a.out.as_deref(), &json)
}

// ---- serve -----------------------------------------------------------------

fn serve(a: ServeArgs) -> CliResult {
    let config = Config::load(&a.config)?;
    let state = AppState::from_config(&config).map_err(|e| match e {
        StartError::Config(c) => CliError::Config(c),
        StartError::Store(s) => CliError::Environment(s.to_string()),
    })?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Environment(e.to_string()))?;
    runtime.block_on(async {
        let addr = format!("{}:{}", config.server.host, config.server.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Environment(format!("cannot listen on {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| CliError::Environment(e.to_string()))?;
        println!("listening on http://{local}");
        let _ = std::io::stdout().flush();
        service::run(listener, state)
            .await
            .map_err(|e| CliError::Environment(e.to_string()))
    })
}

fn mock_server(a: MockArgs) -> CliResult {
    let server = MockChatServer::bind(&a.addr, |_| MockReply::Rules)
        .map_err(|e| CliError::Environment(format!("cannot listen on {}: {e}", a.addr)))?;
    println!("listening on {}", server.base_url());
    let _ = std::io::stdout().flush();
    server.wait();
    Ok(())
}
