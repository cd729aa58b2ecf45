// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use frametrace::corpus::{
    agreement, correctness_csv, correctness_report, frame_registry, giveaway_scan, load_annotations, load_stories,
    load_zeroshot, registry_csv, resolve_frame, save_stories, save_zeroshot, tally_by_model, tally_csv, Group,
    Source, StoryRecord, NURTURING_PARENT, STRICT_FATHER,
};
use frametrace::llmclient::{generate_stories, zeroshot_records, Endpoint, GenerationRequest, LlmClient, Transcript};
use frametrace::model::synthetic::{shipped_frames, shipped_synthetic_model, build_named_synthetic_model, synthetic_prompt};
use frametrace::model::{load_bundle, HookKind, ModelBundle};
use frametrace::probing::{
    extract_activations, probe_frame, write_report, ActivationDataset, ExtractOptions, ProbeConfig, ReportMetadata,
    StoryInput,
};
use frametrace::trace::emit::grid_from_json;
use frametrace::trace::{emit_grid, locate_subject_text, restore_sweep, target_token_for, GridFormat, TraceParams};
use frametrace::{Error, Execution, Result};

use crate::args::*;

/// Writes to `out`, or prints when no path is given.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn frames(a: FramesArgs) -> Result<()> {
    emit(a.out.as_deref(), &registry_csv())
}

#[allow(clippy::too_many_arguments)]
fn client(
    base_url: &str,
    model: &str,
    api_key_env: Option<&str>,
    timeout: f64,
    max_retries: u32,
    backoff: f64,
    transcript: Option<&Path>,
    system_prompt: Option<&str>,
) -> Result<LlmClient> {
    let endpoint = Endpoint {
        api_key_env: api_key_env.map(str::to_owned),
        timeout_secs: timeout,
        max_retries,
        backoff_base_secs: backoff,
        ..Endpoint::new(base_url, model)
    };
    let mut c = LlmClient::new(endpoint)?;
    if let Some(path) = transcript {
        c = c.with_transcript(Transcript::open(path)?);
    }
    if let Some(s) = system_prompt {
        c = c.with_system_prompt(s);
    }
    Ok(c)
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for ch in s.chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_owned()
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let e = &a.endpoint;
    let c = client(
        &e.endpoint,
        &e.remote_model,
        e.api_key_env.as_deref(),
        e.timeout,
        e.max_retries,
        e.backoff,
        e.transcript.as_deref(),
        e.system_prompt.as_deref(),
    )?;
    let frames: Vec<String> = if a.frames.is_empty() {
        frame_registry().into_iter().map(|f| f.name).collect()
    } else {
        a.frames.iter().map(|f| resolve_frame(f).map(str::to_owned)).collect::<Result<_>>()?
    };
    let sources: Vec<Source> = a.sources.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    let mut requests = Vec::new();
    for f in &frames {
        for &s in &sources {
            for i in 0..a.count {
                requests.push(GenerationRequest {
                    id: format!("{}-{}-{}-{i:03}", slug(&e.remote_model), slug(f), s),
                    frame: f.clone(),
                    source: s,
                });
            }
        }
    }
    let stories: Vec<StoryRecord> = generate_stories(&c, &requests, e.in_flight).into_iter().collect::<Result<_>>()?;
    for s in &stories {
        if matches!(resolve_frame(&s.frame_label)?, STRICT_FATHER | NURTURING_PARENT) {
            let hits = giveaway_scan(&s.text, &s.frame_label)?;
            if !hits.is_empty() {
                let words: Vec<&str> = hits.iter().map(|h| h.word.as_str()).collect();
                eprintln!("note: {} contains giveaway words: {}", s.id, words.join(", "));
            }
        }
    }
    save_stories(&a.out, &stories)?;
    eprintln!("wrote {} stories to {}", stories.len(), a.out.display());
    Ok(())
}

pub fn zeroshot(a: ZeroshotArgs) -> Result<()> {
    let stories = load_stories(&a.stories)?;
    let group_of: BTreeMap<String, Group> =
        stories.iter().map(|s| Ok((s.id.clone(), Group::for_frame(&s.frame_label)?))).collect::<Result<_>>()?;
    let records = match (&a.records, &a.endpoint) {
        (Some(path), _) => load_zeroshot(path)?,
        (None, Some(url)) => {
            let model = a
                .remote_model
                .as_deref()
                .ok_or_else(|| Error::Config("--remote-model is required with --endpoint".into()))?;
            let c = client(
                url,
                model,
                a.api_key_env.as_deref(),
                a.timeout,
                a.max_retries,
                a.backoff,
                a.transcript.as_deref(),
                a.system_prompt.as_deref(),
            )?;
            zeroshot_records(&c, &stories, &[STRICT_FATHER, NURTURING_PARENT], a.in_flight)?
                .into_iter()
                .collect::<Result<_>>()?
        }
        (None, None) => return Err(Error::Config("pass --endpoint to query or --records to tally".into())),
    };
    if let Some(path) = &a.save_records {
        save_zeroshot(path, &records)?;
    }
    let tables = tally_by_model(&records, &group_of, a.threshold)?;
    emit(a.out.as_deref(), &tally_csv(&tables)?)
}

pub fn agreement_cmd(a: AgreementArgs) -> Result<()> {
    let pct = agreement(&load_annotations(&a.a)?, &load_annotations(&a.b)?)?;
    println!("{pct}");
    Ok(())
}

pub fn report_correctness(a: ReportArgs) -> Result<()> {
    let rows = correctness_report(&load_stories(&a.stories)?)?;
    emit(a.out.as_deref(), &correctness_csv(&rows)?)
}

pub fn synth_model(a: SynthArgs) -> Result<()> {
    let bundle = build_named_synthetic_model(&shipped_frames(), a.seed)?;
    bundle.save_dir(&a.out)
}

fn load_model(m: &ModelArgs) -> Result<ModelBundle> {
    match (&m.model, &m.model_dir, &m.weights) {
        (Some(name), None, None) if name == "synthetic" => Ok(shipped_synthetic_model()),
        (Some(name), None, None) => Err(Error::Config(format!("unknown built-in model `{name}` (try `synthetic`)"))),
        (None, Some(dir), None) => ModelBundle::load_dir(dir),
        (None, None, Some(weights)) => {
            let (Some(cfg), Some(tok)) = (&m.model_config, &m.tokenizer) else {
                return Err(Error::Config("--weights needs --model-config and --tokenizer".into()));
            };
            load_bundle(cfg, weights, tok)
        }
        (None, None, None) => Err(Error::Config("choose a model with --model, --model-dir or --weights".into())),
        _ => Err(Error::Config("--model, --model-dir and --weights are mutually exclusive".into())),
    }
}

fn grid_format(explicit: Option<&str>, out: &Path) -> Result<GridFormat> {
    match explicit {
        Some(f) => f.parse(),
        None => GridFormat::from_path(out)
            .ok_or_else(|| Error::Config(format!("cannot tell the format of {}; pass --format", out.display()))),
    }
}

/// Synthetic frames can be named by their code or by the full frame name.
fn synthetic_frame(name: &str) -> Result<(String, char)> {
    let code = match name.to_ascii_uppercase().as_str() {
        "SF" | "ALPHA" | "STRICT FATHER" => "SF",
        "NP" | "BETA" | "NURTURING PARENT" => "NP",
        _ => return Err(Error::Config(format!("the synthetic model knows SF and NP, not `{name}`"))),
    };
    let f = shipped_frames().into_iter().find(|f| f.name == code).expect("shipped frame");
    Ok((f.name, f.target))
}

pub fn trace(a: TraceArgs, execution: Execution) -> Result<()> {
    let format = grid_format(a.format.as_deref(), &a.out)?;
    let bundle = load_model(&a.model)?;
    let (prompt, subject, target) = match (&a.prompt_frame, &a.prompt) {
        (Some(frame), None) => {
            let (name, target) = synthetic_frame(frame)?;
            (synthetic_prompt(&name), a.subject.clone().unwrap_or(name), a.target.clone().unwrap_or(target.into()))
        }
        (None, Some(p)) => {
            let subject = a.subject.clone().ok_or_else(|| Error::Config("--prompt needs --subject".into()))?;
            let target = a.target.clone().ok_or_else(|| Error::Config("--prompt needs --target".into()))?;
            (p.clone(), subject, target)
        }
        _ => return Err(Error::Config("pass exactly one of --prompt-frame and --prompt".into())),
    };
    let tokens = bundle.tokenizer().tokenize(&prompt)?;
    let span = locate_subject_text(&bundle, &tokens, &subject, a.occurrence)?;
    let target = target_token_for(&bundle, &target)?;
    let defaults = TraceParams::defaults_for(&bundle);
    let params = TraceParams {
        sigma: a.sigma.unwrap_or(defaults.sigma),
        n_samples: a.samples,
        base_seed: a.seed,
        hook_kind: a.hook.parse::<HookKind>()?,
        window: a.window,
        execution,
    };
    let grid = restore_sweep(&bundle, &tokens, &span, target, &params)?;
    emit_grid(&grid, format, &a.out)?;
    eprintln!(
        "clean {:.4}, corrupted {:.4}, {} x {} cells -> {}",
        grid.clean_prob,
        grid.corrupted_prob,
        grid.token_strings.len(),
        grid.n_layers,
        a.out.display()
    );
    Ok(())
}

fn story_inputs(path: &Path, frame: &str) -> Result<Vec<StoryInput>> {
    let frame = resolve_frame(frame)?;
    load_stories(path)?
        .into_iter()
        .map(|s| {
            let label = resolve_frame(&s.frame_label)? == frame;
            Ok(StoryInput { id: s.id, text: s.text, label })
        })
        .collect::<Result<_>>()
}

fn extract_with(
    model: &ModelArgs,
    stories: &Path,
    frame: &str,
    layer: usize,
    template: Option<String>,
    execution: Execution,
) -> Result<ActivationDataset> {
    let inputs = story_inputs(stories, frame)?;
    let bundle = load_model(model)?;
    let opts = ExtractOptions { layer, template, execution, ..ExtractOptions::default() };
    extract_activations(&bundle, &inputs, &opts)
}

pub fn extract(a: ExtractArgs, execution: Execution) -> Result<()> {
    let ds = extract_with(&a.model, &a.stories, &a.frame, a.layer, a.template, execution)?;
    ds.save(&a.out)?;
    let (neg, pos) = ds.class_counts();
    eprintln!("{} rows ({pos} frame, {neg} other) x {} dims -> {}", ds.len(), ds.dims(), a.out.display());
    Ok(())
}

pub fn probe(a: ProbeArgs, execution: Execution) -> Result<()> {
    let ds = match (&a.dataset, &a.stories) {
        (Some(path), None) => ActivationDataset::load(path)?,
        (None, Some(stories)) => extract_with(&a.model, stories, &a.frame, a.layer, a.template.clone(), execution)?,
        _ => return Err(Error::Config("pass --dataset or --stories".into())),
    };
    let config = ProbeConfig { l2: a.l2, learning_rate: a.learning_rate, max_iters: a.max_iters, ..ProbeConfig::default() };
    let frame = resolve_frame(&a.frame)?;
    let result = probe_frame(&ds, frame, &config, a.holdout, a.seed)?;
    let meta = ReportMetadata::new(ds.layer, a.holdout, a.seed, config);
    match &a.out {
        Some(path) => write_report(std::slice::from_ref(&result.row), &meta, path),
        None => emit(None, &frametrace::probing::report_csv(std::slice::from_ref(&result.row))?),
    }
}

pub fn render(a: RenderArgs) -> Result<()> {
    let format = grid_format(a.format.as_deref(), &a.out)?;
    let text = std::fs::read_to_string(&a.grid)?;
    let grid = grid_from_json(&text).map_err(|e| match e {
        Error::Json(_) | Error::Format(_) if text.starts_with("token,") => {
            Error::Format("render needs a JSON grid; CSV grids carry no clean/corrupted endpoints".into())
        }
        other => other,
    })?;
    emit_grid(&grid, format, &a.out)
}

