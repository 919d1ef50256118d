from researchflow.evaluation.agreement import category_counts, fleiss_kappa, kendalls_w, load_matrix
from researchflow.evaluation.judge import (
    ErrorGrade,
    ProtocolJudgement,
    ReportQuality,
    SectionJudgement,
    StepJudgement,
    grade_error,
    judge_protocol,
    judge_report_quality,
)
from researchflow.evaluation.metrics import (
    BP_FLOOR,
    REFERENCE_STEP_LENGTH,
    MetricScores,
    ProtocolStats,
    brevity_penalty,
    completeness,
    correctness,
    count_step_length,
    execution_success_rate,
    logical_soundness,
)

__all__ = [
    "BP_FLOOR",
    "REFERENCE_STEP_LENGTH",
    "ErrorGrade",
    "MetricScores",
    "ProtocolJudgement",
    "ProtocolStats",
    "ReportQuality",
    "SectionJudgement",
    "StepJudgement",
    "brevity_penalty",
    "category_counts",
    "completeness",
    "correctness",
    "count_step_length",
    "execution_success_rate",
    "fleiss_kappa",
    "grade_error",
    "judge_protocol",
    "judge_report_quality",
    "kendalls_w",
    "load_matrix",
    "logical_soundness",
]
