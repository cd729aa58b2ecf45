// SPDX-License-Identifier: Apache-2.0

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::corpus::registry::resolve_frame;
use crate::corpus::stories::{Source, StoryRecord};
use crate::corpus::zeroshot::ZeroShotRecord;
use crate::error::{Error, Result};
use crate::llmclient::client::LlmClient;
use crate::llmclient::prompts::{
    build_description_prompt, build_generation_prompt, build_open_frames_prompt, build_percentage_prompt,
    parse_open_frames, parse_percentage, DescriptionKind, GENERATION_TEMPERATURE, RECOGNITION_TEMPERATURE,
};

pub const DEFAULT_IN_FLIGHT: usize = 4;
pub const GENERATION_MAX_TOKENS: u32 = 512;
pub const RECOGNITION_MAX_TOKENS: u32 = 64;

/// Runs `f` over `items` with at most `in_flight` calls outstanding.
/// Results come back in input order.
pub fn run_batch<T: Sync, R: Send>(items: &[T], in_flight: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = in_flight.max(1).min(items.len());
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap_or_else(|p| p.into_inner()).into_iter().map(|r| r.expect("every slot filled")).collect()
}

pub fn generate_story(client: &LlmClient, frame_name: &str, source: Source) -> Result<String> {
    let prompt = build_generation_prompt(frame_name, source)?;
    let reply = client.ask(&prompt, GENERATION_TEMPERATURE, GENERATION_MAX_TOKENS)?;
    Ok(reply.text.trim().to_owned())
}

pub fn query_frame_percentage(client: &LlmClient, text: &str, frame_name: &str) -> Result<u32> {
    let prompt = build_percentage_prompt(frame_name, text)?;
    parse_percentage(&client.ask(&prompt, RECOGNITION_TEMPERATURE, RECOGNITION_MAX_TOKENS)?.text)
}

pub fn query_open_frames(client: &LlmClient, text: &str) -> Result<Vec<String>> {
    let prompt = build_open_frames_prompt(text)?;
    parse_open_frames(&client.ask(&prompt, RECOGNITION_TEMPERATURE, RECOGNITION_MAX_TOKENS)?.text)
}

pub fn describe_frame(client: &LlmClient, frame_name: &str, kind: DescriptionKind) -> Result<String> {
    let prompt = build_description_prompt(frame_name, kind)?;
    Ok(client.ask(&prompt, RECOGNITION_TEMPERATURE, GENERATION_MAX_TOKENS)?.text.trim().to_owned())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenerationRequest {
    pub id: String,
    pub frame: String,
    pub source: Source,
}

/// One story per request, unannotated, credited to the endpoint's model.
pub fn generate_stories(
    client: &LlmClient,
    requests: &[GenerationRequest],
    in_flight: usize,
) -> Vec<Result<StoryRecord>> {
    run_batch(requests, in_flight, |r| {
        let text = generate_story(client, &r.frame, r.source)?;
        Ok(StoryRecord {
            id: r.id.clone(),
            frame_label: resolve_frame(&r.frame)?.to_owned(),
            source: r.source,
            generator: client.endpoint().model.clone(),
            text,
            annotation: None,
            rephrased: false,
        })
    })
}

/// Asks about every (story, frame) pair.
pub fn zeroshot_records(
    client: &LlmClient,
    stories: &[StoryRecord],
    frames: &[&str],
    in_flight: usize,
) -> Result<Vec<Result<ZeroShotRecord>>> {
    let frames: Vec<&'static str> = frames.iter().map(|f| resolve_frame(f)).collect::<Result<_>>()?;
    if frames.is_empty() {
        return Err(Error::Config("no frames to ask about".into()));
    }
    let jobs: Vec<(&StoryRecord, &str)> = stories.iter().flat_map(|s| frames.iter().map(move |f| (s, *f))).collect();
    Ok(run_batch(&jobs, in_flight, |(s, f)| {
        let percent = query_frame_percentage(client, &s.text, f)?;
        Ok(ZeroShotRecord {
            story_id: s.id.clone(),
            frame_asked: (*f).to_owned(),
            percent,
            model: client.endpoint().model.clone(),
        })
    }))
}
