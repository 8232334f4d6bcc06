//! Policy queries, prompt strategies, evidence selection and stance generation.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::debug;

use crate::corpus::Stance;
use crate::error::{Error, Result};
use crate::metrics::{nlcs_chunk, TokenSequence};
use crate::providers::{ChatMessage, ChatProvider, ChatRequest, ChatResponse, Role, ToolSpec};

pub const QUERY_COUNT: u8 = 13;

const QUERIES: [&str; QUERY_COUNT as usize] = [
    "Is the organization supporting policy and legislative measures to address climate change: energy efficiency policy, standards, and targets",
    "Is the organisation transparent about its positions on climate change legislation/policy and its activities to influence it?",
    "Is the organisation supporting policy and legislative measures to address climate change: carbon tax",
    "Is the organization transparent and clear about its position on climate change science?",
    "Is the organization supporting policy and legislative measures to address climate change: Standards, targets, and other regulatory measures directly targeting Greenhouse Gas emissions",
    "Is the organization transparent about its involvement with industry associations that are influencing climate policy, including the extent to which it is aligned with these groups on climate?",
    "Is the organization supporting an IPCC-aligned transition of the economy away from carbon-emitting technologies, including supporting relevant policy and legislative measures to enable this transition?",
    "Is the organization supporting policy and legislative measures to address climate change: Renewable energy legislation, targets, subsidies, and other policy",
    "Is the organization supporting the science-based response to climate change as set out by the IPCC? ",
    "Is the organization supporting the UN FCCC process on climate change?",
    "Is the organisation supporting policy and legislative measures to address climate change: emissions trading.",
    "To what extent does the organization express the need for regulatory intervention to resolve the climate crisis?",
    "Is the organization supporting policy and legislative measures to enhance and protect ecosystems and land where carbon is being stored?",
];

/// Identifier of one of the 13 canonical policy queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct QueryId(u8);

impl QueryId {
    pub fn new(id: i64) -> Result<Self> {
        if (1..=QUERY_COUNT as i64).contains(&id) {
            Ok(QueryId(id as u8))
        } else {
            Err(Error::InvalidInput(format!("query id {id} is not in 1..={QUERY_COUNT}")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = QueryId> {
        (1..=QUERY_COUNT).map(QueryId)
    }

    pub fn query(self) -> PolicyQuery {
        PolicyQuery { query_id: self, text: QUERIES[self.0 as usize - 1] }
    }
}

impl TryFrom<i64> for QueryId {
    type Error = Error;
    fn try_from(v: i64) -> Result<Self> {
        QueryId::new(v)
    }
}

impl From<QueryId> for i64 {
    fn from(q: QueryId) -> i64 {
        q.0 as i64
    }
}

impl fmt::Display for QueryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PolicyQuery {
    pub query_id: QueryId,
    pub text: &'static str,
}

pub fn policy_queries() -> Vec<PolicyQuery> {
    QueryId::all().map(QueryId::query).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStrategy {
    ZsNaive,
    ZsBasic,
    FsOneQueryAllStance,
    FsAllQueryOneStance,
    FsFewQueryFewStance,
}

impl PromptStrategy {
    pub const ALL: [PromptStrategy; 5] = [
        PromptStrategy::ZsNaive,
        PromptStrategy::ZsBasic,
        PromptStrategy::FsOneQueryAllStance,
        PromptStrategy::FsAllQueryOneStance,
        PromptStrategy::FsFewQueryFewStance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptStrategy::ZsNaive => "zs_naive",
            PromptStrategy::ZsBasic => "zs_basic",
            PromptStrategy::FsOneQueryAllStance => "fs_one_query_all_stance",
            PromptStrategy::FsAllQueryOneStance => "fs_all_query_one_stance",
            PromptStrategy::FsFewQueryFewStance => "fs_few_query_few_stance",
        }
    }

    pub fn system_prompt(self) -> &'static str {
        match self {
            PromptStrategy::ZsNaive => include_str!("../assets/prompts/naive.txt"),
            PromptStrategy::ZsBasic => include_str!("../assets/prompts/basic.txt"),
            PromptStrategy::FsOneQueryAllStance => include_str!("../assets/prompts/one_query_all_stance.txt"),
            PromptStrategy::FsAllQueryOneStance => include_str!("../assets/prompts/all_query_one_stance.txt"),
            PromptStrategy::FsFewQueryFewStance => include_str!("../assets/prompts/few_query_few_stance.txt"),
        }
    }
}

impl fmt::Display for PromptStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PromptStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PromptStrategy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown prompt strategy {s:?}")))
    }
}

/// How evidence is picked from a ranked hit list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EvidenceMode {
    /// First retrieved.
    FR,
    /// All retrieved, concatenated.
    AR,
    /// Best match against the gold snippet.
    BM,
    /// The gold snippet itself.
    GT,
}

impl EvidenceMode {
    pub const ALL: [EvidenceMode; 4] = [EvidenceMode::GT, EvidenceMode::FR, EvidenceMode::BM, EvidenceMode::AR];

    pub fn needs_gold(self) -> bool {
        matches!(self, EvidenceMode::BM | EvidenceMode::GT)
    }
}

impl fmt::Display for EvidenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl std::str::FromStr for EvidenceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FR" => Ok(EvidenceMode::FR),
            "AR" => Ok(EvidenceMode::AR),
            "BM" => Ok(EvidenceMode::BM),
            "GT" => Ok(EvidenceMode::GT),
            _ => Err(Error::InvalidInput(format!("unknown evidence mode {s:?}"))),
        }
    }
}

pub const AR_SEPARATOR: &str = "\n\n---\n\n";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSelection {
    pub mode: EvidenceMode,
    pub k: usize,
    pub separator: String,
}

impl EvidenceSelection {
    pub fn new(mode: EvidenceMode, k: usize) -> Self {
        Self { mode, k, separator: AR_SEPARATOR.to_string() }
    }
}

/// Index of the hit with the highest `nlcs_chunk` against the gold; ties go to
/// the earlier rank. Hits with no tokens score 0.
pub fn best_match_index<S: AsRef<str>>(hits: &[S], gold: &str) -> Result<usize> {
    if hits.is_empty() {
        return Err(Error::NoHits);
    }
    let g = TokenSequence::from_text(gold);
    if g.is_empty() {
        return Err(Error::EmptyGold);
    }
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, h) in hits.iter().enumerate() {
        let c = TokenSequence::from_text(h.as_ref());
        let s = if c.is_empty() { 0.0 } else { nlcs_chunk(&c, &g)? };
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(best.0)
}

/// Picks the evidence text for a stance call. `hits` are chunk texts in final
/// rank order.
pub fn select_evidence<S: AsRef<str>>(selection: &EvidenceSelection, hits: &[S], gold: Option<&str>) -> Result<String> {
    match selection.mode {
        EvidenceMode::GT => gold.map(str::to_string).ok_or(Error::MissingGold),
        EvidenceMode::FR => hits.first().map(|h| h.as_ref().to_string()).ok_or(Error::NoHits),
        EvidenceMode::AR => {
            if hits.is_empty() {
                return Err(Error::NoHits);
            }
            let k = selection.k.max(1).min(hits.len());
            Ok(hits[..k].iter().map(AsRef::as_ref).collect::<Vec<_>>().join(&selection.separator))
        }
        EvidenceMode::BM => {
            let gold = gold.ok_or(Error::MissingGold)?;
            let i = best_match_index(hits, gold)?;
            Ok(hits[i].as_ref().to_string())
        }
    }
}

pub const TOOL_NAME: &str = "report_stance";

pub fn report_stance_tool() -> ToolSpec {
    ToolSpec {
        name: TOOL_NAME.into(),
        description: "Report the company's stance on the climate policy query, based on the evidence.".into(),
        parameters: json!({
            "type": "object",
            "properties": {
                "score": {
                    "type": "integer",
                    "minimum": -2,
                    "maximum": 2,
                    "description": "Stance score from -2 (opposes) to 2 (strongly supports)."
                },
                "reason": {
                    "type": "string",
                    "description": "Short justification grounded in the evidence."
                }
            },
            "required": ["score", "reason"]
        }),
    }
}

pub fn user_message(query: &str, evidence: &str) -> String {
    format!("Question: {query}\n\nContext: {evidence}")
}

pub fn build_prompt(strategy: PromptStrategy, query: &PolicyQuery, evidence: &str) -> ChatRequest {
    build_prompt_text(strategy, query.text, evidence)
}

/// Same as [`build_prompt`] for free-text queries.
pub fn build_prompt_text(strategy: PromptStrategy, query: &str, evidence: &str) -> ChatRequest {
    ChatRequest {
        messages: vec![
            ChatMessage { role: Role::System, content: strategy.system_prompt().to_string() },
            ChatMessage { role: Role::User, content: user_message(query, evidence) },
        ],
        tools: vec![report_stance_tool()],
        forced_tool: Some(TOOL_NAME.into()),
        temperature: 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StanceResult {
    pub score: Stance,
    pub reason: String,
    pub strategy: PromptStrategy,
    pub evidence_used: String,
    pub model_id: String,
    /// Arguments of the accepted tool call, verbatim.
    pub provider_raw: String,
    pub attempts: usize,
}

pub const DEFAULT_RETRIES: usize = 2;

enum Parsed {
    Ok(Stance, String),
    OutOfRange(i64),
    Malformed(String),
}

fn parse_tool_call(response: &ChatResponse) -> Parsed {
    let Some(call) = response.tool_calls.iter().find(|c| c.name == TOOL_NAME) else {
        return Parsed::Malformed(match &response.tool_calls[..] {
            [] => "response has no tool call".into(),
            calls => format!("unexpected tool `{}`", calls[0].name),
        });
    };
    let args: Value = match serde_json::from_str(&call.arguments) {
        Ok(v) => v,
        Err(e) => return Parsed::Malformed(format!("arguments are not JSON: {e}")),
    };
    let score = match args.get("score") {
        Some(Value::Number(n)) => match n.as_i64() {
            Some(i) => i,
            None => match n.as_f64() {
                Some(f) if f.fract() == 0.0 && f.abs() < 1e15 => f as i64,
                _ => return Parsed::Malformed(format!("score {n} is not an integer")),
            },
        },
        Some(Value::String(s)) => match s.trim().trim_start_matches('+').parse::<i64>() {
            Ok(i) => i,
            Err(_) => return Parsed::Malformed(format!("score {s:?} is not an integer")),
        },
        _ => return Parsed::Malformed("missing score".into()),
    };
    let reason = match args.get("reason").and_then(Value::as_str).map(str::trim) {
        Some(r) if !r.is_empty() => r.to_string(),
        _ => return Parsed::Malformed("missing or empty reason".into()),
    };
    match Stance::new(score) {
        Ok(s) => Parsed::Ok(s, reason),
        Err(_) => Parsed::OutOfRange(score),
    }
}

/// Calls the provider and validates the `report_stance` call, re-sending the
/// identical request up to `retries` more times on malformed or out-of-range
/// answers. The last failure kind is returned once the budget is spent.
pub fn generate_stance(
    request: &ChatRequest,
    strategy: PromptStrategy,
    provider: &dyn ChatProvider,
    retries: usize,
) -> Result<StanceResult> {
    let evidence_used = request
        .user_message()
        .and_then(|u| u.split_once("\n\nContext: ").map(|(_, e)| e.to_string()))
        .unwrap_or_default();
    let mut last = Error::MalformedToolCall("no attempt made".into());
    for attempt in 1..=retries + 1 {
        let response = provider.complete(request)?;
        match parse_tool_call(&response) {
            Parsed::Ok(score, reason) => {
                let raw = response
                    .tool_calls
                    .iter()
                    .find(|c| c.name == TOOL_NAME)
                    .map(|c| c.arguments.clone())
                    .unwrap_or_default();
                return Ok(StanceResult {
                    score,
                    reason,
                    strategy,
                    evidence_used,
                    model_id: provider.model_id().to_string(),
                    provider_raw: raw,
                    attempts: attempt,
                });
            }
            Parsed::OutOfRange(v) => {
                debug!(attempt, score = v, "stance score out of range");
                last = Error::ScoreOutOfRange(v);
            }
            Parsed::Malformed(m) => {
                debug!(attempt, reason = %m, "malformed tool call");
                last = Error::MalformedToolCall(m);
            }
        }
    }
    Err(last)
}

/// Probability of `stance`'s canonical label forced as the completion after
/// the prompt: the product of its token probabilities.
pub fn score_completion(request: &ChatRequest, stance: Stance, provider: &dyn ChatProvider) -> Result<f64> {
    let logprobs = provider.completion_logprobs(request, &stance.label())?;
    if logprobs.is_empty() {
        return Err(Error::ProviderUnavailable("empty log-probability list".into()));
    }
    let total: f64 = logprobs.iter().sum();
    let p = total.exp();
    if !(p > 0.0 && p <= 1.0 + 1e-12) {
        return Err(Error::NonPositiveProbability(p));
    }
    Ok(p.min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::stub::{text_response, tool_call_response, FnChat, ScriptedChat};
    use proptest::prelude::*;
    use sha2::{Digest, Sha256};

    #[test]
    fn thirteen_queries_verbatim() {
        let q = policy_queries();
        assert_eq!(q.len(), 13);
        assert!(q[1].text.contains("organisation transparent"));
        assert!(q[8].text.ends_with("IPCC? "));
        assert!(q[10].text.ends_with("emissions trading."));
        assert!(QueryId::new(0).is_err());
        assert!(QueryId::new(14).is_err());
        assert_eq!(QueryId::new(13).unwrap().get(), 13);
    }

    #[test]
    fn prompt_assets_match_golden_hashes() {
        let golden = [
            (PromptStrategy::ZsNaive, "79edf1845a27b29851cf52794cc57966c19199329de530fb11f40dd9cae018fd"),
            (PromptStrategy::ZsBasic, "dbc9a14bf9c2d08d2f743fd96456367c3404dcd2ca30a031f03916ef675e8f09"),
            (PromptStrategy::FsOneQueryAllStance, "440b00b420cc7689eb8fd6365093d17e527b34a1f242f2f3877edbbbb3439a14"),
            (PromptStrategy::FsAllQueryOneStance, "2f108c68405dee54824d4054b59efbc13bc07edf0fb76c68beb65ddf87e7861e"),
            (PromptStrategy::FsFewQueryFewStance, "2468c9b078410880b8901792bef33e55250112776d56979535f9a315ff9d8ebd"),
        ];
        for (s, h) in golden {
            let got = Sha256::digest(s.system_prompt().as_bytes());
            let hex: String = got.iter().map(|b| format!("{b:02x}")).collect();
            assert_eq!(hex, h, "{s}");
        }
    }

    #[test]
    fn prompt_shape() {
        let q = QueryId::new(7).unwrap().query();
        let r = build_prompt(PromptStrategy::FsFewQueryFewStance, &q, "…");
        assert_eq!(r.system_prompt(), Some(PromptStrategy::FsFewQueryFewStance.system_prompt()));
        assert_eq!(r.user_message().unwrap(), format!("Question: {}\n\nContext: …", q.text));
        assert_eq!(r.tools.len(), 1);
        assert_eq!(r.forced_tool.as_deref(), Some("report_stance"));

        let r = build_prompt(PromptStrategy::ZsNaive, &QueryId::new(1).unwrap().query(), "");
        assert!(r.user_message().unwrap().ends_with("Context: "));
        assert_eq!(r.tools.len(), 1);
    }

    #[test]
    fn evidence_selection_examples() {
        let hits = ["alpha beta", "gamma delta"];
        let fr = EvidenceSelection::new(EvidenceMode::FR, 5);
        let gt = EvidenceSelection::new(EvidenceMode::GT, 5);
        let bm = EvidenceSelection::new(EvidenceMode::BM, 5);
        let ar = EvidenceSelection::new(EvidenceMode::AR, 5);
        assert_eq!(select_evidence(&gt, &hits, Some("abc")).unwrap(), "abc");
        assert_eq!(select_evidence(&fr, &hits, None).unwrap(), "alpha beta");
        assert_eq!(select_evidence(&bm, &hits, Some("gamma delta")).unwrap(), "gamma delta");
        assert_eq!(select_evidence(&ar, &hits, None).unwrap(), "alpha beta\n\n---\n\ngamma delta");
        assert!(matches!(select_evidence(&gt, &hits, None), Err(Error::MissingGold)));
        assert!(matches!(select_evidence(&bm, &hits, None), Err(Error::MissingGold)));
        assert!(matches!(select_evidence::<&str>(&fr, &[], None), Err(Error::NoHits)));
        assert!(matches!(select_evidence::<&str>(&ar, &[], None), Err(Error::NoHits)));
    }

    #[test]
    fn bm_ties_prefer_earlier_rank() {
        assert_eq!(best_match_index(&["x y", "x y"], "x y").unwrap(), 0);
        assert_eq!(best_match_index(&["q", "x y", "x y"], "x y").unwrap(), 1);
    }

    fn req() -> ChatRequest {
        build_prompt(PromptStrategy::ZsBasic, &QueryId::new(3).unwrap().query(), "The firm supports a carbon tax.")
    }

    #[test]
    fn generate_accepts_valid_call() {
        let chat = ScriptedChat::new([tool_call_response(json!(2), "supports phase-out")]);
        let r = generate_stance(&req(), PromptStrategy::ZsBasic, &chat, DEFAULT_RETRIES).unwrap();
        assert_eq!(r.score.value(), 2);
        assert_eq!(r.reason, "supports phase-out");
        assert_eq!(r.evidence_used, "The firm supports a carbon tax.");
        assert_eq!(r.attempts, 1);
    }

    #[test]
    fn generate_accepts_signed_string_score() {
        let chat = ScriptedChat::new([tool_call_response(json!("+1"), "ok")]);
        assert_eq!(generate_stance(&req(), PromptStrategy::ZsBasic, &chat, 2).unwrap().score.value(), 1);
    }

    #[test]
    fn malformed_is_retried_then_fails() {
        let chat = ScriptedChat::new([text_response("I think it is positive")]);
        let e = generate_stance(&req(), PromptStrategy::ZsBasic, &chat, DEFAULT_RETRIES).unwrap_err();
        assert!(matches!(e, Error::MalformedToolCall(_)));
        assert_eq!(chat.calls(), 3);
    }

    #[test]
    fn out_of_range_is_rejected() {
        let chat = ScriptedChat::new([tool_call_response(json!(5), "very strong")]);
        let e = generate_stance(&req(), PromptStrategy::ZsBasic, &chat, DEFAULT_RETRIES).unwrap_err();
        assert!(matches!(e, Error::ScoreOutOfRange(5)));
        assert_eq!(chat.calls(), 3);
    }

    #[test]
    fn retry_recovers() {
        let chat = ScriptedChat::new([text_response("no"), tool_call_response(json!(-1), "caveats")]);
        let r = generate_stance(&req(), PromptStrategy::ZsBasic, &chat, DEFAULT_RETRIES).unwrap();
        assert_eq!((r.score.value(), r.attempts), (-1, 2));
    }

    #[test]
    fn provider_errors_are_not_retried() {
        let chat = FnChat::new(|_: &ChatRequest| Err(Error::ProviderUnavailable("down".into())));
        assert!(matches!(generate_stance(&req(), PromptStrategy::ZsBasic, &chat, 2), Err(Error::ProviderUnavailable(_))));
    }

    #[test]
    fn completion_probability() {
        let uniform = ScriptedChat::new([]).with_logprobs(vec![0.2f64.ln()]);
        let p = score_completion(&req(), Stance::new(1).unwrap(), &uniform).unwrap();
        assert!((p - 0.2).abs() < 1e-12);
        let certain = ScriptedChat::new([]).with_logprobs(vec![0.0]);
        assert_eq!(score_completion(&req(), Stance::new(2).unwrap(), &certain).unwrap(), 1.0);
        let multi = ScriptedChat::new([]).with_logprobs(vec![0.5f64.ln(), 0.5f64.ln()]);
        assert!((score_completion(&req(), Stance::new(-2).unwrap(), &multi).unwrap() - 0.25).abs() < 1e-12);
        let none = ScriptedChat::new([]);
        assert!(matches!(score_completion(&req(), Stance::new(0).unwrap(), &none), Err(Error::LogprobsUnsupported)));
    }

    proptest! {
        #[test]
        fn bm_dominates_fr(hits in proptest::collection::vec("[a-d]( [a-d]){0,8}", 1..6), gold in "[a-d]( [a-d]){0,8}") {
            let g = TokenSequence::from_text(&gold);
            let score = |t: &str| nlcs_chunk(&TokenSequence::from_text(t), &g).unwrap();
            let fr = select_evidence(&EvidenceSelection::new(EvidenceMode::FR, 5), &hits, Some(&gold)).unwrap();
            let bm = select_evidence(&EvidenceSelection::new(EvidenceMode::BM, 5), &hits, Some(&gold)).unwrap();
            prop_assert!(score(&bm) >= score(&fr));
        }

        #[test]
        fn ar_length(hits in proptest::collection::vec("[a-z]{1,10}", 1..8), k in 1usize..8) {
            let sel = EvidenceSelection::new(EvidenceMode::AR, k);
            let out = select_evidence(&sel, &hits, None).unwrap();
            let used = k.min(hits.len());
            let expected: usize = hits[..used].iter().map(String::len).sum::<usize>() + (used - 1) * AR_SEPARATOR.len();
            prop_assert_eq!(out.len(), expected);
        }

        #[test]
        fn generated_scores_stay_in_set(v in -10i64..10) {
            let chat = ScriptedChat::new([tool_call_response(json!(v), "r")]);
            match generate_stance(&req(), PromptStrategy::ZsNaive, &chat, 0) {
                Ok(r) => prop_assert!((-2..=2).contains(&(r.score.value() as i64))),
                Err(e) => prop_assert!(matches!(e, Error::ScoreOutOfRange(x) if x == v)),
            }
        }
    }
}
