"""Multi-island evolutionary search over functional forms."""

from .islands import EXPLOIT, EXPLORE, FALLBACK, Island, migrate, migrated_elites, select_parent
from .memory import DeadEnd, MemoryRecord, MemoryStore, synthesize_dead_ends
from .operators import (OPERATORS, OperatorInapplicable, OperatorSpec, Proposal, bounded_descriptor, freeze_graft,
                        fuse, fusion, is_freeze_graft, param_perturbation, rational_wrap_op, sigmoid_gate,
                        zero_init_graft)
from .proposer import (TASK_TEXT, HttpProposer, ProposerRequest, ProposerResponse, ProposerWireError,
                       ScriptedProposer)
from .scoring import J_TARGET, PENALTY, penalized, score
from .search import (Candidate, ConfigError, Evaluation, ReplayResult, SearchConfig, SearchResult,
                     evaluate_candidate, read_log, replay, run_search, running_best, selection_sequence,
                     summarize, write_log)

__all__ = [
    "EXPLOIT", "EXPLORE", "FALLBACK", "Island", "migrate", "migrated_elites", "select_parent",
    "DeadEnd", "MemoryRecord", "MemoryStore", "synthesize_dead_ends",
    "OPERATORS", "OperatorInapplicable", "OperatorSpec", "Proposal", "bounded_descriptor", "freeze_graft",
    "fuse", "fusion", "is_freeze_graft", "param_perturbation", "rational_wrap_op", "sigmoid_gate",
    "zero_init_graft",
    "TASK_TEXT", "HttpProposer", "ProposerRequest", "ProposerResponse", "ProposerWireError", "ScriptedProposer",
    "J_TARGET", "PENALTY", "penalized", "score",
    "Candidate", "ConfigError", "Evaluation", "ReplayResult", "SearchConfig", "SearchResult",
    "evaluate_candidate", "read_log", "replay", "run_search", "running_best", "selection_sequence",
    "summarize", "write_log",
]
