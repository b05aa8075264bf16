"""Query-conditioned keyframe retrieval and evaluation.

The pipeline: parse a planner's tool calls and combine expression, score
every sampled frame per call, fuse per-call rankings with boolean operators,
inject judged OCR evidence at the front, then pick frames with greedy
temporal NMS. The eval layer measures HIT@K and QA accuracy against
interval-anchored ground truth.
"""

from .errors import (
    ContractError,
    FrameFuseError,
    MissingDataError,
    PlanParseError,
    PlanValidationError,
    ProviderError,
    RunError,
    StageError,
)
from .eval import (
    CaptionRecord,
    ProviderBundle,
    QuestionRecord,
    RetrievalReport,
    RunConfig,
    combined_query,
    evaluate_dataset,
    hit_at_k,
    normalized_recall,
    oracle_baseline,
    run_question,
    siglipq_baseline,
    uniform_baseline,
)
from .merge import (
    MergedRanking,
    MergeMode,
    RankVector,
    ScoreVector,
    eval_combine,
    eval_combine_raw,
    finalize_ranking,
    scores_to_ranks,
)
from .ocr import (
    OcrEvidence,
    OcrExtraction,
    dedup_ocr,
    edit_similarity,
    group_ocr_frames,
    inject_ocr,
    judge_relevance,
)
from .plan import (
    CombineExpr,
    Leaf,
    Node,
    Op,
    Plan,
    Tool,
    ToolCall,
    filter_plan,
    format_combine,
    format_plan,
    parse_combine,
    parse_plan,
    single_query_plan,
)
from .providers import (
    Backend,
    FileProvider,
    PlanService,
    ProviderConfig,
    RemoteScorer,
    SignalSpec,
    SyntheticProvider,
    SyntheticSpec,
    synth_generate,
)
from .select import SelectionResult, greedy_nms, max_capacity
from .timeline import (
    EvidenceInterval,
    FrameTimeline,
    build_timeline,
    compute_tau,
    in_interval,
)

__version__ = "0.1.0"
