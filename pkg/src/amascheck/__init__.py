"""Explicit-state model checker for strategic and epistemic properties of
asynchronous multi-agent systems."""

__version__ = "0.1.0"

from .core import (
    Amas,
    BuildConfig,
    DeadlineExceeded,
    EPSILON,
    GAnd,
    GCmp,
    GLit,
    GNot,
    GOr,
    LocalAgent,
    LocalTransition,
    Model,
    ModelError,
    StateLimitExceeded,
    UpdateValue,
    build_iis,
    build_undeadlocked,
)
from .approx import TriVerdict, approximate_verify
from .logic import (
    FormulaError,
    StrategySpaceError,
    eval_state_formula,
    formula_to_str,
    validate_formula,
    verify_exact,
)
from .por import classify_events, context_for_formula, reduce, stuttering_equiv_oracle
from .synthesis import SynthesisResult, dfs_synthesize, parallel_synthesize

__all__ = [
    "Amas",
    "BuildConfig",
    "DeadlineExceeded",
    "EPSILON",
    "FormulaError",
    "GAnd",
    "GCmp",
    "GLit",
    "GNot",
    "GOr",
    "LocalAgent",
    "LocalTransition",
    "Model",
    "ModelError",
    "StateLimitExceeded",
    "StrategySpaceError",
    "SynthesisResult",
    "TriVerdict",
    "UpdateValue",
    "approximate_verify",
    "build_iis",
    "build_undeadlocked",
    "classify_events",
    "context_for_formula",
    "dfs_synthesize",
    "eval_state_formula",
    "formula_to_str",
    "parallel_synthesize",
    "reduce",
    "stuttering_equiv_oracle",
    "validate_formula",
    "verify_exact",
    "__version__",
]
