"""Text-to-SQL orchestration harness.

Prompt serialization, database-content linking, table/column selection,
execution-based candidate selection, synthetic-rewrite filtering and
EX/TS evaluation, with the language model behind a pluggable backend.
"""

__version__ = "0.1.0"

from .content import ContentMatch, ContentMatchSet, MatchConfig, extract_content, extract_keywords, match_score
from .decoding import (Paradigm, PipelineContext, SelectionResult, SqlCandidate, consistency_select,
                       cross_paradigm_select, run_pipeline)
from .evaluation import EvalCase, MetricsReport, eval_ex, eval_ts, report
from .executor import ExecutionOutcome, ResultKey, execute, result_key
from .llm import CompletionRequest, CompletionResponse, ReplayBackend, record_session, replay_session
from .prompts import (PromptBundle, PromptStyle, build_prompt, estimate_token_budget,
                      serialize_schema_concise, serialize_schema_verbose)
from .schema import (ColumnSpec, DatabaseSchema, ForeignKeyLink, QuestionTask, TableSchema,
                     column_identifier, load_question_set, load_schema_catalog)
from .selection import (SelectionMetrics, SelectionSet, apply_selection, build_column_sentence,
                        extract_references, retrieve_columns, score_selection)
from .synth import SynthConfig, SyntheticCandidate, build_synth_prompt, filter_candidates, parse_synth_response
