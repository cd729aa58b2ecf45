// SPDX-License-Identifier: Apache-2.0

//! Client for OpenAI-compatible chat-completion endpoints, with the story
//! generation and frame recognition prompts.

pub mod client;
pub mod mock;
pub mod prompts;
pub mod tasks;

pub use client::{ChatMessage, Completion, Endpoint, LlmClient, Role, Transcript};
pub use mock::{LoggedRequest, MockReply, MockServer};
pub use prompts::{
    build_description_prompt, build_generation_prompt, build_open_frames_prompt, build_percentage_prompt,
    parse_open_frames, parse_percentage, DescriptionKind, GENERATION_TEMPERATURE, RECOGNITION_TEMPERATURE,
};
pub use tasks::{
    describe_frame, generate_stories, generate_story, query_frame_percentage, query_open_frames, run_batch,
    zeroshot_records, GenerationRequest, DEFAULT_IN_FLIGHT,
};
