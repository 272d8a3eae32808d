"""Command-line surface: run strategies, compare reports, corpus stats, cache purge.

Flags mirror the run configuration one-to-one; a JSON config file may
supply defaults, with flags overriding. The API credential is read from
the ``REXGOT_API_KEY`` environment variable, never from the command line.
No command writes outside the configured output and cache directories.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from .backend import (
    CACHE_MODES,
    CACHE_OFF,
    CACHE_RECORD,
    CACHE_REPLAY,
    Backend,
    BackendError,
    CachingBackend,
    HTTPBackend,
    ScriptedBackend,
    purge_cache,
)
from .dataset import FORMATS, Corpus, corpus_stats, load_corpus
from .evaluation import BucketScore, EvalReport, compare_report, evaluate, write_report_files
from .model import MCQInstance, Prediction, RexGotError, Strategy, index_to_letter
from .prompts import template_version
from .reasoner import (
    ReasonerConfig,
    TieBreak,
    VoteKind,
    VotePolicy,
    build_graph,
    build_trace,
    run_strategy,
)

BACKEND_KINDS = ("http", "scripted")


class ConfigError(RexGotError):
    """Invalid run configuration; reported before any backend call."""


@dataclass
class RunConfig:
    corpus: str
    strategy: str
    format: str = "canonical"
    backend: str = "http"
    endpoint: str = ""
    model: str = ""
    scripts: str = ""
    k: int = 3
    temp_step1: float = 0.7
    temp_step2: float = 0.0
    temp_step3: float = 0.0
    vote_policy: str = "per_option_majority"
    tie_break: str = "prefer_exclude"
    workers: int = 1
    cache_mode: str = CACHE_OFF
    cache_dir: str = "cache"
    out: str = "out"
    seed: int = 0
    repeat: int = 1
    max_tokens: int = 512
    max_prompt_tokens: int | None = None

    def validate(self) -> None:
        if self.format not in FORMATS:
            raise ConfigError(f"unknown corpus format {self.format!r}")
        if self.strategy not in {s.value for s in Strategy}:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.backend not in BACKEND_KINDS:
            raise ConfigError(f"unknown backend kind {self.backend!r}")
        if self.cache_mode not in CACHE_MODES:
            raise ConfigError(f"unknown cache mode {self.cache_mode!r}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.repeat < 1:
            raise ConfigError(f"repeat must be >= 1, got {self.repeat}")
        if self.cache_mode == CACHE_REPLAY and not Path(self.cache_dir).is_dir():
            raise ConfigError(
                f"replay mode requires an existing cache directory, {self.cache_dir!r} is missing"
            )
        if self.cache_mode != CACHE_REPLAY:
            if self.backend == "http" and not self.endpoint:
                raise ConfigError("http backend requires --endpoint")
            if self.backend == "scripted" and not self.scripts:
                raise ConfigError("scripted backend requires --scripts")

    def fingerprint(self) -> str:
        """Digest of every result-shaping parameter (paths excluded)."""
        payload = {
            "backend": self.backend,
            "model": self.model,
            "strategy": self.strategy,
            "format": self.format,
            "k": self.k,
            "temperatures": [self.temp_step1, self.temp_step2, self.temp_step3],
            "vote_policy": self.vote_policy,
            "tie_break": self.tie_break,
            "seed": self.seed,
            "repeat": self.repeat,
            "max_tokens": self.max_tokens,
            "max_prompt_tokens": self.max_prompt_tokens,
            "template_version": template_version(),
        }
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def reasoner_config(self) -> ReasonerConfig:
        return ReasonerConfig(
            model_name=self.model,
            k=self.k,
            temperature_step1=self.temp_step1,
            temperature_step2=self.temp_step2,
            temperature_step3=self.temp_step3,
            max_tokens=self.max_tokens,
            vote_policy=VotePolicy(
                kind=VoteKind(self.vote_policy), tie_break=TieBreak(self.tie_break)
            ),
            max_prompt_tokens=self.max_prompt_tokens,
        )


def build_backend(config: RunConfig) -> Backend:
    if config.cache_mode == CACHE_REPLAY:
        return CachingBackend(None, config.cache_dir, mode=CACHE_REPLAY)
    if config.backend == "scripted":
        inner: Backend = _load_scripted(config.scripts)
    else:
        inner = HTTPBackend(base_url=config.endpoint)
    if config.cache_mode == CACHE_RECORD:
        return CachingBackend(inner, config.cache_dir, mode=CACHE_RECORD)
    return inner


def _load_scripted(path: str) -> ScriptedBackend:
    payload = json.loads(Path(path).read_text("utf-8"))
    backend = ScriptedBackend(default_responses=payload.get("default"))
    for entry in payload.get("scripts", []):
        backend.register_script(
            responses=entry["responses"],
            prompt=entry.get("prompt"),
            digest=entry.get("digest"),
        )
    return backend


def _predict_one(
    instance: MCQInstance, config: RunConfig, backend: Backend
) -> tuple[Prediction, dict, bool]:
    strategy = Strategy(config.strategy)
    try:
        prediction = run_strategy(instance, strategy, backend, config.reasoner_config())
        failed = False
    except BackendError:
        # Long batch runs survive per-instance faults: record a degenerate
        # full-set prediction and count the failure in the exit summary.
        prediction = Prediction(
            instance_id=instance.id,
            strategy=strategy,
            chosen=frozenset(range(instance.m)),
            fallback_used=True,
        )
        failed = True
    graph = None
    if strategy is Strategy.REX_GOT and prediction.paths:
        graph = build_graph(instance, prediction.paths)
    return prediction, build_trace(instance, prediction, graph), failed


def _run_once(
    corpus: Corpus, config: RunConfig, backend: Backend
) -> tuple[list[Prediction], list[dict], int]:
    results: dict[str, tuple[Prediction, dict, bool]] = {}
    if config.workers == 1:
        for instance in corpus.instances:
            results[instance.id] = _predict_one(instance, config, backend)
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            futures = {
                instance.id: pool.submit(_predict_one, instance, config, backend)
                for instance in corpus.instances
            }
            for instance_id, future in futures.items():
                results[instance_id] = future.result()
    ordered = [results[iid] for iid in sorted(results)]
    predictions = [r[0] for r in ordered]
    traces = [r[1] for r in ordered]
    failures = sum(1 for r in ordered if r[2])
    return predictions, traces, failures


def _mean(values: Sequence[float]) -> float:
    # Identical repeats must stay byte-identical, so short-circuit them.
    if all(v == values[0] for v in values):
        return values[0]
    return sum(values) / len(values)


def _average_reports(reports: Sequence[EvalReport]) -> EvalReport:
    first = reports[0]
    if len(reports) == 1:
        return first
    buckets = {
        size: BucketScore(
            n=first.by_gold_count[size].n,
            macro_f1=_mean([r.by_gold_count[size].macro_f1 for r in reports]),
            em=_mean([r.by_gold_count[size].em for r in reports]),
        )
        for size in first.by_gold_count
    }
    return EvalReport(
        strategy=first.strategy,
        corpus_name=first.corpus_name,
        n_instances=first.n_instances,
        macro_f1=_mean([r.macro_f1 for r in reports]),
        exact_match=_mean([r.exact_match for r in reports]),
        by_gold_count=buckets,
        config_fingerprint=first.config_fingerprint,
        repeats=len(reports),
    )


def cmd_run(config: RunConfig) -> int:
    try:
        config.validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    corpus = load_corpus(config.corpus, format=config.format)
    backend = build_backend(config)
    fingerprint = config.fingerprint()

    reports = []
    first_predictions: list[Prediction] = []
    first_traces: list[dict] = []
    failures = 0
    for repeat_index in range(config.repeat):
        predictions, traces, repeat_failures = _run_once(corpus, config, backend)
        reports.append(evaluate(predictions, corpus, config_fingerprint=fingerprint))
        if repeat_index == 0:
            first_predictions, first_traces = predictions, traces
        failures += repeat_failures
    report = _average_reports(reports)

    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "predictions.jsonl").open("w", encoding="utf-8") as fh:
        for prediction in first_predictions:
            fh.write(
                json.dumps(
                    {
                        "instance_id": prediction.instance_id,
                        "strategy": prediction.strategy.value,
                        "chosen": sorted(prediction.chosen),
                        "chosen_labels": [
                            index_to_letter(i) for i in sorted(prediction.chosen)
                        ],
                        "vote_tally": {
                            str(i): v for i, v in sorted(prediction.vote_tally.items())
                        },
                        "fallback_used": prediction.fallback_used,
                        "n_paths": len(prediction.paths),
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    traces_dir = out_dir / "traces"
    traces_dir.mkdir(exist_ok=True)
    for trace in first_traces:
        (traces_dir / f"{trace['instance_id']}.json").write_text(
            json.dumps(trace, sort_keys=True, indent=2) + "\n", "utf-8"
        )
    write_report_files(report, out_dir)

    print(
        f"strategy={report.strategy} corpus={report.corpus_name} "
        f"instances={report.n_instances} macro_f1={report.macro_f1:.4f} "
        f"em={report.exact_match:.4f} failures={failures}"
    )
    if failures:
        print(f"{failures} instance run(s) failed; degenerate predictions recorded",
              file=sys.stderr)
        return 1
    return 0


def cmd_compare(report_paths: Sequence[str], as_json: bool = False) -> int:
    reports = []
    for path in report_paths:
        try:
            payload = json.loads(Path(path).read_text("utf-8"))
            reports.append(EvalReport.from_json_dict(payload))
        except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            print(f"cannot read report {path}: {exc}", file=sys.stderr)
            return 2
    table = compare_report(reports)
    if as_json:
        print(json.dumps(table.to_json_dict(), sort_keys=True, indent=2))
    else:
        print(table.to_text(), end="")
    return 0


def cmd_stats(corpus_path: str, format: str, as_json: bool = False) -> int:
    stats = corpus_stats(load_corpus(corpus_path, format=format))
    if as_json:
        print(json.dumps(stats.to_json_dict(), sort_keys=True, indent=2))
        return 0
    print(f"instances: {stats.total}")
    print(f"dialogues: {stats.dialogue_count}")
    print("by gold count:")
    for size, count in sorted(stats.by_gold_count.items()):
        print(f"  {size}: {count}")
    print("by inference type:")
    for name, count in sorted(stats.by_inference_type.items()):
        print(f"  {name}: {count}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rexgot",
        description="Dialogue multi-choice QA reasoning strategies and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one strategy over a corpus and write a report")
    run_p.add_argument("--config", help="JSON file supplying flag defaults")
    run_p.add_argument("--corpus", help="corpus file path")
    run_p.add_argument("--format", choices=FORMATS)
    run_p.add_argument("--strategy", choices=[s.value for s in Strategy])
    run_p.add_argument("--backend", choices=BACKEND_KINDS)
    run_p.add_argument("--endpoint", help="base URL of the chat-completions endpoint")
    run_p.add_argument("--model", help="model name sent to the backend")
    run_p.add_argument("--scripts", help="JSON script file for the scripted backend")
    run_p.add_argument("--k", type=int, help="number of sampled reasoning paths")
    run_p.add_argument("--temp-step1", type=float, dest="temp_step1")
    run_p.add_argument("--temp-step2", type=float, dest="temp_step2")
    run_p.add_argument("--temp-step3", type=float, dest="temp_step3")
    run_p.add_argument("--vote-policy", choices=[k.value for k in VoteKind], dest="vote_policy")
    run_p.add_argument("--tie-break", choices=[t.value for t in TieBreak], dest="tie_break")
    run_p.add_argument("--workers", type=int)
    run_p.add_argument("--cache-mode", choices=CACHE_MODES, dest="cache_mode")
    run_p.add_argument("--cache-dir", dest="cache_dir")
    run_p.add_argument("--out", help="output directory")
    run_p.add_argument("--seed", type=int)
    run_p.add_argument("--repeat", type=int, help="repeat the run and average the metrics")
    run_p.add_argument("--max-tokens", type=int, dest="max_tokens")
    run_p.add_argument("--max-prompt-tokens", type=int, dest="max_prompt_tokens")

    compare_p = sub.add_parser("compare", help="tabulate strategy reports side by side")
    compare_p.add_argument("reports", nargs="+", help="report.json files")
    compare_p.add_argument("--json", action="store_true", dest="as_json")

    stats_p = sub.add_parser("stats", help="summarise a corpus")
    stats_p.add_argument("--corpus", required=True)
    stats_p.add_argument("--format", choices=FORMATS, default="canonical")
    stats_p.add_argument("--json", action="store_true", dest="as_json")

    cache_p = sub.add_parser("cache", help="cache maintenance")
    cache_sub = cache_p.add_subparsers(dest="cache_command", required=True)
    purge_p = cache_sub.add_parser("purge", help="delete all cached completions")
    purge_p.add_argument("--cache-dir", required=True, dest="cache_dir")

    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides: dict[str, Any] = {}
    if args.config:
        overrides.update(json.loads(Path(args.config).read_text("utf-8")))
    for key in RunConfig.__dataclass_fields__:
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    missing = [key for key in ("corpus", "strategy") if key not in overrides]
    if missing:
        raise ConfigError(f"missing required setting(s): {', '.join(missing)}")
    known = {k: v for k, v in overrides.items() if k in RunConfig.__dataclass_fields__}
    unknown = set(overrides) - set(known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    return RunConfig(**known)


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(_config_from_args(args))
        if args.command == "compare":
            return cmd_compare(args.reports, as_json=args.as_json)
        if args.command == "stats":
            return cmd_stats(args.corpus, args.format, as_json=args.as_json)
        if args.command == "cache" and args.cache_command == "purge":
            removed = purge_cache(args.cache_dir)
            print(f"removed {removed} cached completion(s) from {args.cache_dir}")
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (RexGotError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
