//! JSON bodies of the model-shim wire protocol.
//!
//! ```text
//! POST /v1/token_probs        {image_b64, prompt, generated_ids, targets} -> {probs, model_id}
//! POST /v1/token_probs_batch  {images_b64, prompt, generated_ids, targets} -> {probs: [[..]], model_id}
//! POST /v1/generate           {image_b64, prompt, max_tokens} -> {text, token_ids}
//! POST /v1/tokenize           {text} -> {token_ids, offsets: [[start, end]]}
//! ```
//!
//! Images travel as base64-encoded PNG. Failures answer with a non-2xx
//! status and `{error}`.

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use eagle_core::{Image, Target};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::imaging::{decode_image, encode_png};

pub const TOKEN_PROBS_PATH: &str = "/v1/token_probs";
pub const TOKEN_PROBS_BATCH_PATH: &str = "/v1/token_probs_batch";
pub const GENERATE_PATH: &str = "/v1/generate";
pub const TOKENIZE_PATH: &str = "/v1/tokenize";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenProbsRequest {
    pub image_b64: String,
    pub prompt: String,
    pub generated_ids: Vec<u32>,
    pub targets: Vec<Target>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenProbsResponse {
    pub probs: Vec<f64>,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenProbsBatchRequest {
    pub images_b64: Vec<String>,
    pub prompt: String,
    pub generated_ids: Vec<u32>,
    pub targets: Vec<Target>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenProbsBatchResponse {
    pub probs: Vec<Vec<f64>>,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequestBody {
    pub image_b64: String,
    pub prompt: String,
    pub max_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateResponseBody {
    pub text: String,
    pub token_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizeRequest {
    pub text: String,
}

/// Token ids with `[start, end)` character offsets into the request text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizeResponse {
    pub token_ids: Vec<u32>,
    pub offsets: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

pub fn image_to_b64(image: &Image) -> String {
    STANDARD.encode(encode_png(image))
}

pub fn image_from_b64(text: &str) -> Result<Image> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| crate::error::Error::Image {
            context: "base64 image".into(),
            message: e.to_string(),
        })?;
    decode_image(&bytes, "base64 image")
}
