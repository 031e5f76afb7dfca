"""Reproducibility surface: task corpus, suite runner, ablations, CLI."""

from .ablation import AblationRow, AblationSpec, parse_values, render_table, run_ablation
from .cli import build_parser, main
from .runner import (
    PRESET_TEMPERATURE,
    ReplayMismatchError,
    RunRecord,
    SuiteAggregate,
    SuiteResult,
    canonical_strategy,
    parse_strategy,
    preset_temperature,
    read_records,
    replay,
    resolve_model,
    run_one,
    run_suite,
    score,
    write_records,
)
from .tasks import (
    Task,
    build_fixture_suite,
    build_kgram_suite,
    bundled_path,
    extractor_to_string,
    load_tasks,
    parse_extractor,
    save_tasks,
    write_bundled_data,
)

__all__ = [
    "AblationRow",
    "AblationSpec",
    "PRESET_TEMPERATURE",
    "ReplayMismatchError",
    "RunRecord",
    "SuiteAggregate",
    "SuiteResult",
    "Task",
    "build_fixture_suite",
    "build_kgram_suite",
    "build_parser",
    "bundled_path",
    "canonical_strategy",
    "extractor_to_string",
    "load_tasks",
    "main",
    "parse_extractor",
    "parse_strategy",
    "parse_values",
    "preset_temperature",
    "read_records",
    "render_table",
    "replay",
    "resolve_model",
    "run_ablation",
    "run_one",
    "run_suite",
    "save_tasks",
    "score",
    "write_bundled_data",
    "write_records",
]
