//! Blocking HTTP client for a model shim.

use std::time::Duration;

use eagle_core::{GenerateRequest, Generation, OracleError, ProbOracle, ProbQuery, ProbResponse};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::protocol::{
    image_to_b64, ErrorBody, GenerateRequestBody, GenerateResponseBody, TokenProbsBatchRequest,
    TokenProbsBatchResponse, TokenProbsRequest, TokenProbsResponse, TokenizeRequest,
    TokenizeResponse, GENERATE_PATH, TOKENIZE_PATH, TOKEN_PROBS_BATCH_PATH, TOKEN_PROBS_PATH,
};
use crate::targets::Tokenizer;

type OracleResult<T> = Result<T, OracleError>;

#[derive(Debug, Clone)]
pub struct HttpOracle {
    base_url: String,
    agent: ureq::Agent,
    bearer_token: Option<String>,
    use_batch_endpoint: bool,
}

impl HttpOracle {
    pub fn new(base_url: &str, timeout: Duration, bearer_token: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent,
            bearer_token,
            use_batch_endpoint: true,
        }
    }

    /// Sends every query to the single-image endpoint instead of batching.
    pub fn without_batch_endpoint(mut self) -> Self {
        self.use_batch_endpoint = false;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> OracleResult<R> {
        let payload =
            serde_json::to_string(body).map_err(|e| OracleError::Transport(e.to_string()))?;
        let mut request = self
            .agent
            .post(format!("{}{path}", self.base_url))
            .header("content-type", "application/json");
        if let Some(token) = &self.bearer_token {
            request = request.header("authorization", format!("Bearer {token}"));
        }
        let mut response = request.send(payload).map_err(|e| match e {
            ureq::Error::Timeout(_) => OracleError::Timeout,
            other => OracleError::Transport(format!("{path}: {other}")),
        })?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(|e| match e {
            ureq::Error::Timeout(_) => OracleError::Timeout,
            other => OracleError::Transport(format!("{path}: {other}")),
        })?;
        if !(200..300).contains(&status) {
            let message = serde_json::from_str::<ErrorBody>(&text)
                .map(|b| b.error)
                .unwrap_or(text);
            return Err(OracleError::Shim(format!(
                "{path} returned {status}: {message}"
            )));
        }
        serde_json::from_str(&text).map_err(|e| OracleError::Malformed(format!("{path}: {e}")))
    }

    fn score_one(&self, query: &ProbQuery<'_>) -> OracleResult<ProbResponse> {
        let body = TokenProbsRequest {
            image_b64: image_to_b64(&query.image),
            prompt: query.targets.prompt.clone(),
            generated_ids: query.targets.generated_ids.clone(),
            targets: query.targets.targets.clone(),
        };
        let r: TokenProbsResponse = self.post(TOKEN_PROBS_PATH, &body)?;
        let response = ProbResponse {
            probs: r.probs,
            model_id: r.model_id,
        };
        response.validate(query.targets.len())?;
        Ok(response)
    }

    fn score_group(&self, group: &[ProbQuery<'_>]) -> Vec<OracleResult<ProbResponse>> {
        let targets = group[0].targets;
        let body = TokenProbsBatchRequest {
            images_b64: group.iter().map(|q| image_to_b64(&q.image)).collect(),
            prompt: targets.prompt.clone(),
            generated_ids: targets.generated_ids.clone(),
            targets: targets.targets.clone(),
        };
        let r: TokenProbsBatchResponse = match self.post(TOKEN_PROBS_BATCH_PATH, &body) {
            Ok(r) => r,
            Err(e) => return vec![Err(e); group.len()],
        };
        if r.probs.len() != group.len() {
            let e = OracleError::Malformed(format!(
                "{} probability rows for {} images",
                r.probs.len(),
                group.len()
            ));
            return vec![Err(e); group.len()];
        }
        r.probs
            .into_iter()
            .map(|probs| {
                let response = ProbResponse {
                    probs,
                    model_id: r.model_id.clone(),
                };
                response.validate(targets.len())?;
                Ok(response)
            })
            .collect()
    }
}

impl ProbOracle for HttpOracle {
    fn score_batch(&self, queries: &[ProbQuery<'_>]) -> Vec<OracleResult<ProbResponse>> {
        let mut out = Vec::with_capacity(queries.len());
        let mut start = 0;
        while start < queries.len() {
            let mut end = start + 1;
            while end < queries.len() && queries[end].targets == queries[start].targets {
                end += 1;
            }
            let group = &queries[start..end];
            if self.use_batch_endpoint && group.len() > 1 {
                out.extend(self.score_group(group));
            } else {
                out.extend(group.iter().map(|q| self.score_one(q)));
            }
            start = end;
        }
        out
    }

    fn generate(&self, request: &GenerateRequest<'_>) -> OracleResult<Generation> {
        if request.max_tokens == 0 {
            return Err(OracleError::Shim("max_tokens must be at least 1".into()));
        }
        let body = GenerateRequestBody {
            image_b64: image_to_b64(&request.image),
            prompt: request.prompt.to_string(),
            max_tokens: request.max_tokens,
        };
        let r: GenerateResponseBody = self.post(GENERATE_PATH, &body)?;
        Ok(Generation {
            text: r.text,
            token_ids: r.token_ids,
        })
    }
}

impl Tokenizer for HttpOracle {
    fn tokenize(&self, text: &str) -> OracleResult<TokenizeResponse> {
        let r: TokenizeResponse = self.post(
            TOKENIZE_PATH,
            &TokenizeRequest {
                text: text.to_string(),
            },
        )?;
        if r.offsets.len() != r.token_ids.len() {
            return Err(OracleError::Malformed(format!(
                "{} offsets for {} tokens",
                r.offsets.len(),
                r.token_ids.len()
            )));
        }
        Ok(r)
    }
}
