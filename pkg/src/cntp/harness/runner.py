"""Suite runner: strategy dispatch, run records, replay, and aggregation.

Every run is captured as a RunRecord carrying the complete effective config
(including the per-run seed), the model spec, and the emitted token ids, so
any record replays bit-identically with no other state. Suite runs derive
one seed per (suite seed, task index) pair; otherwise tasks sharing a row
structure would succeed and fail in lockstep and the binomial error bars
would be wrong.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone

from ..baselines import (
    beam_search_decode,
    best_of_n_whole_ppl,
    greedy_decode,
    self_consistency,
    stochastic_decode,
)
from ..core import DecodeConfig, DecodeOutcome, config_from_dict, config_to_dict, validate_config
from ..engine import cntp_decode
from ..models import (
    ModelFileError,
    ModelSource,
    ProtocolError,
    RemoteModel,
    load_kgram_model,
    load_scripted_model,
)
from ..sampling import derive_seed
from .tasks import Task, bundled_path, extractor_to_string, parse_extractor

STRATEGY_ROOTS = ("greedy", "stochastic", "cntp", "beam", "sc", "cntp_sc", "best_of_n")

# Per-strategy default sampling temperatures for suite runs; a CLI
# --temperature flag or an explicit config file wins over these.
PRESET_TEMPERATURE = {
    "greedy": 0.0,
    "stochastic": 0.6,
    "cntp": 1.2,
    "beam": 0.0,
    "sc": 0.6,
    "cntp_sc": 1.2,
    "best_of_n": 0.6,
}

_DEFAULT_WIDTHS = {"beam": 4, "sc": 5, "cntp_sc": 5, "best_of_n": 5}


class ReplayMismatchError(RuntimeError):
    """A replayed run did not reproduce the stored record."""


def parse_strategy(text: str) -> tuple[str, int | None]:
    """Strategy strings: greedy, stochastic, cntp, beam[:B], sc[:n],
    cntp_sc[:n], best_of_n[:n]."""
    root, sep, arg = text.partition(":")
    if root not in STRATEGY_ROOTS:
        raise ValueError(f"unknown strategy {text!r}")
    if root in _DEFAULT_WIDTHS:
        try:
            width = int(arg) if sep else _DEFAULT_WIDTHS[root]
        except ValueError as exc:
            raise ValueError(f"strategy parameter must be an integer: {text!r}") from exc
        if width < 1:
            raise ValueError(f"strategy parameter must be ≥ 1: {text!r}")
        return root, width
    if sep:
        raise ValueError(f"strategy {root} takes no parameter")
    return root, None


def canonical_strategy(text: str) -> str:
    root, width = parse_strategy(text)
    return f"{root}:{width}" if width is not None else root


def preset_temperature(strategy: str) -> float:
    root, _ = parse_strategy(strategy)
    return PRESET_TEMPERATURE[root]


def extract_from_text(extractor, text: str) -> str:
    """Text-mode extraction for score(). last_token falls back to the last
    whitespace-separated field here; token-aware extraction is used wherever
    the generated Sequence is available."""
    if extractor.rule == "full_text":
        return text
    if extractor.rule == "text_after_marker":
        if not extractor.marker or extractor.marker not in text:
            return ""
        return text.rsplit(extractor.marker, 1)[1]
    if extractor.rule == "last_token":
        fields = text.split()
        return fields[-1] if fields else ""
    raise ValueError(f"unknown extractor rule {extractor.rule!r}")


def match_answer(answer: str, reference: str) -> bool:
    """Case-sensitive exact match after whitespace trim on both sides."""
    return answer.strip() == reference.strip()


def score(output: str, task: Task) -> bool:
    return match_answer(extract_from_text(task.extractor, output), task.reference_answer)


@dataclass(frozen=True)
class RunRecord:
    task_id: str
    strategy: str
    model_spec: str
    prompt: str
    reference_answer: str
    extractor: str
    config: dict
    seed: int
    tokens: tuple[int, ...]
    output: str
    answer: str
    correct: bool
    cost: dict
    wall_time: float
    timestamp: str

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["tokens"] = list(self.tokens)
        return data

    @staticmethod
    def from_dict(data: dict) -> "RunRecord":
        fields = {f.name for f in dataclasses.fields(RunRecord)}
        unknown = set(data) - fields
        if unknown:
            raise ModelFileError(f"unknown record fields: {sorted(unknown)}")
        missing = fields - set(data)
        if missing:
            raise ModelFileError(f"missing record fields: {sorted(missing)}")
        data = dict(data)
        data["tokens"] = tuple(data["tokens"])
        return RunRecord(**data)


def run_one(model: ModelSource, task: Task, strategy: str, config: DecodeConfig,
            *, model_spec: str = "") -> tuple[RunRecord, DecodeOutcome | None]:
    """Execute one strategy on one task. The record's seed field holds
    config.seed; suite runs overwrite it with the suite-level seed."""
    root, width = parse_strategy(strategy)
    validate_config(config)
    vocab = model.vocabulary
    try:
        prompt = vocab.sequence(vocab.encode(task.prompt))
    except ValueError as exc:
        raise ModelFileError(f"task {task.id}: prompt not encodable: {exc}") from exc
    start = time.perf_counter()
    outcome: DecodeOutcome | None = None
    try:
        if root == "greedy":
            outcome = greedy_decode(model, prompt, config)
        elif root == "stochastic":
            outcome = stochastic_decode(model, prompt, config)
        elif root == "cntp":
            outcome = cntp_decode(model, prompt, config)
        elif root == "beam":
            outcome = beam_search_decode(model, prompt, config, width)
        elif root == "best_of_n":
            outcome = best_of_n_whole_ppl(model, prompt, config, width)
        else:
            decode_fn = stochastic_decode if root == "sc" else cntp_decode
            answer, cost = self_consistency(decode_fn, model, prompt, config,
                                            width, task.extractor)
    except ProtocolError as exc:
        raise ProtocolError(f"task {task.id}: {exc}") from exc
    wall_time = time.perf_counter() - start
    if outcome is not None:
        generated = vocab.sequence(outcome.sequence.tokens[len(prompt.tokens):])
        answer = task.extractor.extract(generated, vocab)
        cost = outcome.cost
        output = generated.text
        tokens = outcome.sequence.tokens
    else:
        # Self-consistency has no single output sequence; the voted answer
        # is the output and replay compares answers and ledgers instead.
        output = answer
        tokens = ()
    record = RunRecord(
        task_id=task.id,
        strategy=canonical_strategy(strategy),
        model_spec=model_spec,
        prompt=task.prompt,
        reference_answer=task.reference_answer,
        extractor=extractor_to_string(task.extractor),
        config=config_to_dict(config),
        seed=config.seed,
        tokens=tokens,
        output=output,
        answer=answer,
        correct=match_answer(answer, task.reference_answer),
        cost=dataclasses.asdict(cost),
        wall_time=wall_time,
        timestamp=datetime.now(timezone.utc).isoformat(),
    )
    return record, outcome


@dataclass(frozen=True)
class SuiteAggregate:
    strategy: str
    n_tasks: int
    n_seeds: int
    accuracy_mean: float
    accuracy_std: float
    forward_passes_mean: float
    generated_tokens_mean: float


@dataclass(frozen=True)
class SuiteResult:
    records: list
    aggregate: SuiteAggregate
    run_dir: str | None


def aggregate_records(strategy: str, records, n_tasks: int, seeds) -> SuiteAggregate:
    """Mean accuracy over seeds (each seed covers every task, so this equals
    the mean of per-record correctness) plus the sample standard deviation
    across seeds; cost means are over all records."""
    per_seed = []
    for seed in seeds:
        batch = [r for r in records if r.seed == seed]
        per_seed.append(sum(r.correct for r in batch) / len(batch))
    mean = sum(per_seed) / len(per_seed)
    if len(per_seed) > 1:
        var = sum((a - mean) ** 2 for a in per_seed) / (len(per_seed) - 1)
        std = var ** 0.5
    else:
        std = 0.0
    return SuiteAggregate(
        strategy=strategy,
        n_tasks=n_tasks,
        n_seeds=len(seeds),
        accuracy_mean=mean,
        accuracy_std=std,
        forward_passes_mean=sum(r.cost["forward_passes"] for r in records) / len(records),
        generated_tokens_mean=sum(r.cost["generated_tokens"] for r in records) / len(records),
    )


def run_suite(model: ModelSource, tasks, strategy: str, config: DecodeConfig, seeds,
              *, model_spec: str = "", out_dir: str | None = None,
              workers: int = 1) -> SuiteResult:
    """One run per (task, seed). Per-run seeds are derive_seed(seed, task
    index), so runs are independent across tasks and reproducible
    individually. Records come back sorted by (seed, task id) and aggregates
    are order-independent, so parallel and serial execution agree exactly."""
    if not tasks:
        raise ValueError("no tasks to run")
    if not seeds:
        raise ValueError("no seeds given")
    if len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be unique")
    canonical = canonical_strategy(strategy)
    jobs = [(seed, idx, task) for seed in seeds for idx, task in enumerate(tasks)]

    def execute(job):
        seed, idx, task = job
        cfg = dataclasses.replace(config, seed=derive_seed(seed, idx))
        record, _ = run_one(model, task, canonical, cfg, model_spec=model_spec)
        return dataclasses.replace(record, seed=seed)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(execute, jobs))
    else:
        records = [execute(job) for job in jobs]
    records.sort(key=lambda r: (seeds.index(r.seed), r.task_id))
    aggregate = aggregate_records(canonical, records, len(tasks), seeds)

    run_dir = None
    if out_dir is not None:
        stamp = datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S.%f")
        run_dir = os.path.join(out_dir, f"{stamp}-s{seeds[0]}")
        os.makedirs(run_dir, exist_ok=True)
        write_records(os.path.join(run_dir, "records.jsonl"), records)
        with open(os.path.join(run_dir, "aggregate.json"), "w", encoding="utf-8") as fh:
            json.dump(dataclasses.asdict(aggregate), fh, indent=1)
            fh.write("\n")
    return SuiteResult(records, aggregate, run_dir)


def write_records(path: str, records) -> None:
    """Append-only line-delimited record log."""
    with open(path, "a", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict()) + "\n")


def read_records(path: str) -> list[RunRecord]:
    records: list[RunRecord] = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ModelFileError(f"{path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            records.append(RunRecord.from_dict(json.loads(line)))
        except (ValueError, TypeError) as exc:
            raise ModelFileError(f"{path}: line {lineno}: {exc}") from exc
    if not records:
        raise ModelFileError(f"{path}: no records found")
    return records


def expand_model_spec(spec: str) -> str:
    """bundled:<name> shorthands resolve to packaged data files."""
    if spec == "bundled:suite":
        return bundled_path("suite.model")
    if spec == "bundled:kgram":
        return "kgram:" + bundled_path("kgram.kgram")
    if spec == "bundled:theorem1_case":
        return bundled_path("theorem1_case.model")
    return spec


def resolve_model(spec: str) -> ModelSource:
    """Model specs: a scripted-model path, kgram:<path> (or a .kgram path),
    or remote:<host:port>."""
    spec = expand_model_spec(spec)
    if spec.startswith("remote:"):
        return RemoteModel(spec[len("remote:"):])
    if spec.startswith("kgram:"):
        return load_kgram_model(spec[len("kgram:"):])
    if spec.endswith(".kgram"):
        return load_kgram_model(spec)
    return load_scripted_model(spec)


def replay(record: RunRecord, model: ModelSource | None = None) -> DecodeOutcome | None:
    """Re-run a record and demand a bit-identical result.

    Token-producing strategies compare full token sequences and report the
    first diverging step on mismatch. Self-consistency records compare the
    voted answer and the cost ledger. Returns the fresh outcome (None for
    self-consistency)."""
    if model is None:
        if not record.model_spec:
            raise ModelFileError("record carries no model spec; pass a model")
        model = resolve_model(record.model_spec)
    config = config_from_dict(record.config, source="record config")
    task = Task(record.task_id, record.prompt, record.reference_answer,
                parse_extractor(record.extractor))
    fresh, outcome = run_one(model, task, record.strategy, config,
                             model_spec=record.model_spec)
    if record.tokens or fresh.tokens:
        old, new = record.tokens, fresh.tokens
        for step, (a, b) in enumerate(zip(old, new)):
            if a != b:
                raise ReplayMismatchError(
                    f"task {record.task_id}: first diverging step {step}: "
                    f"token {a} became {b}"
                )
        if len(old) != len(new):
            raise ReplayMismatchError(
                f"task {record.task_id}: first diverging step {min(len(old), len(new))}: "
                f"length {len(old)} became {len(new)}"
            )
    for field_name in ("output", "answer", "correct", "cost"):
        a, b = getattr(record, field_name), getattr(fresh, field_name)
        if a != b:
            raise ReplayMismatchError(
                f"task {record.task_id}: replayed {field_name} {b!r} does not "
                f"match recorded {a!r}"
            )
    return outcome
