"""Entropy-adaptive multi-trial decoding with exact verification tools.

The engine watches the next-token distribution's uncertainty and, at
uncertain steps, samples several short continuations and keeps the one the
model itself finds most likely. Alongside it: the standard decoding
baselines, finite scripted/character/remote model sources, an exact
enumeration oracle that verifies the engine's dominance and cost
guarantees, and a reproducible CLI harness.
"""

from .baselines import (
    AnswerExtractor,
    VoteTally,
    beam_search_decode,
    best_of_n_whole_ppl,
    greedy_decode,
    self_consistency,
    stochastic_decode,
)
from .core import (
    DEFAULT_PUNCTUATION,
    ConfigError,
    CostLedger,
    DecodeConfig,
    DecodeOutcome,
    Distribution,
    Sequence,
    StepTrace,
    Trial,
    Vocabulary,
    config_from_dict,
    config_to_dict,
    load_config,
    validate_config,
)
from .engine import (
    ConfidenceReading,
    branch_score,
    cntp_decode,
    confidence,
    entropy,
    perplexity,
    read_confidence,
    sample_branch,
    select_best,
    stop_mask,
    trial_count,
)
from .models import (
    KGramModel,
    ModelFileError,
    ModelServer,
    ModelSource,
    ProtocolError,
    RemoteModel,
    ScriptedModel,
    detokenize,
    load_kgram_model,
    load_scripted_model,
    save_kgram_model,
    save_scripted_model,
    train_kgram,
)
from .sampling import (
    Rng,
    apply_temperature,
    derive_seed,
    greedy_token,
    nucleus_truncate,
    prepare_sampling_dist,
    sample_token,
)
from .theory import (
    BUNDLED_FIXTURE_SPECS,
    CntpPolicy,
    EnumerationBudgetError,
    EnumerationNode,
    ReferenceSequence,
    SingleSamplePolicy,
    Theorem1Fixture,
    TheoremReport,
    UniformMultisamplePolicy,
    build_theorem1_fixture,
    bundled_fixtures,
    check_theorem1,
    enumerate_outcomes,
    enumerate_sequences,
    exact_correctness,
    expected_cost,
    load_fixture,
    write_fixture,
)

__version__ = "0.1.0"

__all__ = [
    "AnswerExtractor",
    "BUNDLED_FIXTURE_SPECS",
    "CntpPolicy",
    "ConfidenceReading",
    "ConfigError",
    "CostLedger",
    "DEFAULT_PUNCTUATION",
    "DecodeConfig",
    "DecodeOutcome",
    "Distribution",
    "EnumerationBudgetError",
    "EnumerationNode",
    "KGramModel",
    "ModelFileError",
    "ModelServer",
    "ModelSource",
    "ProtocolError",
    "ReferenceSequence",
    "RemoteModel",
    "Rng",
    "ScriptedModel",
    "Sequence",
    "SingleSamplePolicy",
    "StepTrace",
    "Theorem1Fixture",
    "TheoremReport",
    "Trial",
    "UniformMultisamplePolicy",
    "Vocabulary",
    "VoteTally",
    "apply_temperature",
    "beam_search_decode",
    "best_of_n_whole_ppl",
    "branch_score",
    "build_theorem1_fixture",
    "bundled_fixtures",
    "check_theorem1",
    "cntp_decode",
    "confidence",
    "config_from_dict",
    "config_to_dict",
    "derive_seed",
    "detokenize",
    "entropy",
    "enumerate_outcomes",
    "enumerate_sequences",
    "exact_correctness",
    "expected_cost",
    "greedy_decode",
    "greedy_token",
    "load_config",
    "load_fixture",
    "load_kgram_model",
    "load_scripted_model",
    "nucleus_truncate",
    "perplexity",
    "prepare_sampling_dist",
    "read_confidence",
    "sample_branch",
    "sample_token",
    "save_kgram_model",
    "save_scripted_model",
    "select_best",
    "self_consistency",
    "stochastic_decode",
    "stop_mask",
    "train_kgram",
    "trial_count",
    "validate_config",
    "write_fixture",
]
