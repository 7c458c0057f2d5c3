"""Two-stage hallucination detection for LLM output.

Stage one regenerates each extracted key fact through a targeted
question and checks the answer still aligns with the original. Stage
two inspects the regeneration's top-k token distribution: an answer
whose probabilities look uniform was a guess, and the fact's flag is
escalated. Flags fold into sentence scores, a passage score, and a
binary label.

    from factprobe import PipelineConfig, detect

    report = detect("Argentina won the World Cup in 1978.",
                    PipelineConfig(endpoint="http://127.0.0.1:8000"))
    print(report.passage_score, report.hallucinated_facts)
"""

from .align import JudgeParseError, f1_align, judge_align, token_f1
from .core import (
    AlignmentMode,
    AlignmentVerdict,
    ConfigError,
    DecodingMode,
    DetectionReport,
    ExtractorMode,
    FactProbeError,
    FactRecord,
    KeyFact,
    Passage,
    PipelineConfig,
    ProbeResult,
    Sentence,
    Stage,
    StageTimings,
    TokenDistribution,
    TokenMode,
    classify,
    passage_score,
    sentence_score,
)
from .evalharness import (
    EvalAborted,
    EvalItem,
    EvalMode,
    EvalResult,
    NoPositives,
    ParseError,
    average_precision,
    eval_to_dict,
    eval_to_json,
    load_dataset,
    run_eval,
)
from .extract import (
    HttpTagger,
    InsufficientTokens,
    StaticTagger,
    SubprocessTagger,
    TaggerUnavailable,
    extract_heuristic,
    extract_llm,
    extract_pos_list,
    extract_random,
)
from .gateway import (
    DEFAULT_API_KEY_ENV,
    ChatRequest,
    ChatResponse,
    GatewayClient,
    GatewayError,
    GatewayErrorKind,
)
from .mockserver import FixtureParseError, MockServer, PortInUse, load_fixture
from .pipeline import build_gateway, detect, report_to_dict, report_to_json
from .qgen import EmptyQuestion, TemplateQuestionGenerator, generate_question
from .segment import load_abbreviations, resolve_coreference, segment_passage, split_sentences
from .uniform import (
    InvalidDistribution,
    NoDistributions,
    NonFiniteInput,
    escalate,
    ks_uniform_pvalue,
    normalize_topk,
    pooled_pvalue,
    uniformity_verdict,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentMode",
    "AlignmentVerdict",
    "ChatRequest",
    "ChatResponse",
    "ConfigError",
    "DEFAULT_API_KEY_ENV",
    "DecodingMode",
    "DetectionReport",
    "EmptyQuestion",
    "EvalAborted",
    "EvalItem",
    "EvalMode",
    "EvalResult",
    "ExtractorMode",
    "FactProbeError",
    "FactRecord",
    "FixtureParseError",
    "GatewayClient",
    "GatewayError",
    "GatewayErrorKind",
    "HttpTagger",
    "InsufficientTokens",
    "InvalidDistribution",
    "JudgeParseError",
    "KeyFact",
    "MockServer",
    "NoDistributions",
    "NonFiniteInput",
    "NoPositives",
    "ParseError",
    "Passage",
    "PipelineConfig",
    "PortInUse",
    "ProbeResult",
    "Sentence",
    "Stage",
    "StageTimings",
    "StaticTagger",
    "SubprocessTagger",
    "TaggerUnavailable",
    "TemplateQuestionGenerator",
    "TokenDistribution",
    "TokenMode",
    "average_precision",
    "build_gateway",
    "classify",
    "detect",
    "escalate",
    "eval_to_dict",
    "eval_to_json",
    "extract_heuristic",
    "extract_llm",
    "extract_pos_list",
    "extract_random",
    "f1_align",
    "generate_question",
    "judge_align",
    "ks_uniform_pvalue",
    "load_abbreviations",
    "load_dataset",
    "load_fixture",
    "normalize_topk",
    "passage_score",
    "pooled_pvalue",
    "report_to_dict",
    "report_to_json",
    "resolve_coreference",
    "run_eval",
    "segment_passage",
    "sentence_score",
    "split_sentences",
    "token_f1",
    "uniformity_verdict",
    "__version__",
]
