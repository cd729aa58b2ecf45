// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "frametrace", version, about = "Frame corpora, zero-shot recognition, causal tracing and sparse probing")]
pub struct Cli {
    /// Flat key=value file of flag defaults; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for sweeps and extraction; 1 runs serially.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the frame registry as CSV.
    Frames(FramesArgs),
    /// Ask a chat endpoint to write frame-evoking stories.
    Generate(GenerateArgs),
    /// Ask a chat endpoint how strongly stories evoke SF and NP, then tally.
    Zeroshot(ZeroshotArgs),
    /// Intercoder agreement between two annotation files.
    Agreement(AgreementArgs),
    /// Correct and faithful counts per generator and source.
    ReportCorrectness(ReportArgs),
    /// Write the synthetic model's config, weights and tokenizer.
    SynthModel(SynthArgs),
    /// Causal trace: corrupt the subject, restore one state at a time.
    Trace(TraceArgs),
    /// Capture hidden states of stories at one layer.
    Extract(ExtractArgs),
    /// Fit sparse probes for one frame against the rest.
    Probe(ProbeArgs),
    /// Convert a saved JSON trace grid to SVG, CSV or JSON.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct FramesArgs {
    /// Write here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EndpointArgs {
    /// Base URL of an OpenAI-compatible server.
    #[arg(long)]
    pub endpoint: String,
    /// Environment variable holding the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
    /// Model name sent in each request.
    #[arg(long)]
    pub remote_model: String,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub timeout: f64,
    #[arg(long, default_value_t = 3)]
    pub max_retries: u32,
    /// First retry delay in seconds; doubles each retry.
    #[arg(long, default_value_t = 1.0)]
    pub backoff: f64,
    /// Requests in flight at once.
    #[arg(long, default_value_t = 4)]
    pub in_flight: usize,
    /// JSON-lines log of every request and reply.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Optional system message sent before each prompt.
    #[arg(long)]
    pub system_prompt: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub endpoint: EndpointArgs,
    /// Comma-separated frame names; all ten when omitted.
    #[arg(long, value_delimiter = ',')]
    pub frames: Vec<String>,
    /// Comma-separated sources.
    #[arg(long, value_delimiter = ',', default_value = "original,bible,scifi")]
    pub sources: Vec<String>,
    /// Stories per (frame, source).
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Story file (JSON lines) to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ZeroshotArgs {
    /// Stories to classify; their frame labels also define the SF/NP/control groups.
    #[arg(long)]
    pub stories: PathBuf,
    /// Tally these saved answers instead of querying an endpoint.
    #[arg(long, conflicts_with = "endpoint")]
    pub records: Option<PathBuf>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long)]
    pub remote_model: Option<String>,
    #[arg(long, default_value_t = 60.0)]
    pub timeout: f64,
    #[arg(long, default_value_t = 3)]
    pub max_retries: u32,
    #[arg(long, default_value_t = 1.0)]
    pub backoff: f64,
    #[arg(long, default_value_t = 4)]
    pub in_flight: usize,
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    #[arg(long)]
    pub system_prompt: Option<String>,
    /// Answers at or above this percentage count.
    #[arg(long, default_value_t = 80)]
    pub threshold: u32,
    /// Where to save the answers (JSON lines).
    #[arg(long)]
    pub save_records: Option<PathBuf>,
    /// Tally table CSV; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AgreementArgs {
    /// First annotator's file (JSON lines).
    #[arg(long)]
    pub a: PathBuf,
    /// Second annotator's file.
    #[arg(long)]
    pub b: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub stories: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory for config.json, model.safetensors and tokenizer.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// `synthetic` for the built-in model.
    #[arg(long)]
    pub model: Option<String>,
    /// Directory with config.json, tokenizer.json and safetensors weights.
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
    /// Weights file or shard directory; needs --model-config and --tokenizer.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Model config.json for --weights.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// tokenizer.json for --weights.
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Synthetic prompt for this frame (SF or NP).
    #[arg(long)]
    pub prompt_frame: Option<String>,
    /// Prompt text, for models other than the synthetic one.
    #[arg(long)]
    pub prompt: Option<String>,
    /// Subject text to corrupt inside the prompt.
    #[arg(long)]
    pub subject: Option<String>,
    /// 0-based occurrence when the subject appears more than once.
    #[arg(long)]
    pub occurrence: Option<usize>,
    /// Completion whose first token is the target.
    #[arg(long)]
    pub target: Option<String>,
    /// Noise scale; 3 x the embedding standard deviation when omitted.
    #[arg(long)]
    pub sigma: Option<f32>,
    /// Noise samples averaged per cell.
    #[arg(long, default_value_t = 10)]
    pub samples: usize,
    /// Base seed; sample s uses seed + s.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// resid_post, attn_out or mlp_out.
    #[arg(long, default_value = "resid_post")]
    pub hook: String,
    /// Layers restored together for attn_out and mlp_out.
    #[arg(long, default_value_t = 1)]
    pub window: usize,
    /// Grid file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// csv, json or svg; taken from the extension when omitted.
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub stories: PathBuf,
    /// Stories with this frame are label 1, all others label 0.
    #[arg(long)]
    pub frame: String,
    /// 0-based layer whose resid_post is captured.
    #[arg(long, default_value_t = 17)]
    pub layer: usize,
    /// Text wrapper with `{text}` where the story goes.
    #[arg(long)]
    pub template: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Saved activations; otherwise --stories is extracted with the model.
    #[arg(long, conflicts_with = "stories")]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub stories: Option<PathBuf>,
    #[arg(long)]
    pub frame: String,
    #[arg(long, default_value_t = 17)]
    pub layer: usize,
    #[arg(long)]
    pub template: Option<String>,
    /// Fraction of each class held out for testing.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// L2 penalty on the probe weights.
    #[arg(long, default_value_t = 1e-2)]
    pub l2: f64,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iters: usize,
    /// Report CSV; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// JSON grid written by `trace --format json`.
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub format: Option<String>,
}
