"""freqgap: term-frequency statistics vs. few-shot numerical reasoning accuracy.

Counts windowed term co-occurrences over large text corpora, builds the
eleven numerical-reasoning datasets from those statistics, evaluates a
completion endpoint (or offline mock) on k-shot prompts, and reports the
performance gap between the most and least frequent term groups.
"""

__version__ = "0.1.0"

from .analysis import aggregate, bin_accuracy, build_report, performance_gap, trend_fit
from .client import EndpointConfig, EvalRecord, MockPolicy, evaluate, extract_answer
from .counting import CounterConfig, CountTable, count_shard, merge, top_numbers
from .pipeline import RunConfig, run_pipeline, validate_config
from .tasks import (
    PromptBundle,
    TaskInstance,
    build_fewshot_prompts,
    build_task,
    derive_query_sets,
    render_prompt,
)

__all__ = [
    "CounterConfig",
    "CountTable",
    "EndpointConfig",
    "EvalRecord",
    "MockPolicy",
    "PromptBundle",
    "RunConfig",
    "TaskInstance",
    "aggregate",
    "bin_accuracy",
    "build_fewshot_prompts",
    "build_report",
    "build_task",
    "count_shard",
    "derive_query_sets",
    "evaluate",
    "extract_answer",
    "merge",
    "performance_gap",
    "render_prompt",
    "run_pipeline",
    "top_numbers",
    "trend_fit",
    "validate_config",
]

