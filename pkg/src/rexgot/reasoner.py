"""Strategy orchestration.

Implements the five answer-selection strategies: single-shot standard
and chain-of-thought prompting, iterative forward picking and backward
elimination, and the three-step exclusion pipeline that samples K
reasoning paths, assembles them into a thought graph, and selects the
answer by voting.

Within one instance the three steps run strictly in order; distinct
instances may be processed concurrently by callers. With a replay cache
and fixed config every strategy is a pure function of its inputs.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

from .backend import Backend, BackendError, CompletionRequest
from .model import MCQInstance, Prediction, RexGotError, Strategy, index_to_letter
from .parsing import (
    EmptySet,
    ExclusionResult,
    OptionVerdict,
    Unparseable,
    Verdict,
    parse_exclusions,
    parse_final_set,
    parse_pick,
    parse_verdict,
)
from .prompts import PromptKind, render_prompt


class NoPaths(RexGotError):
    """vote() was called without any reasoning path."""


class InstanceBackendError(BackendError):
    """A backend failure, annotated with the instance being processed."""

    def __init__(self, instance_id: str, cause: BackendError):
        super().__init__(f"instance {instance_id}: {cause}")
        self.instance_id = instance_id
        self.cause = cause


class VoteKind(Enum):
    PER_OPTION_MAJORITY = "per_option_majority"
    PATH_PLURALITY = "path_plurality"


class TieBreak(Enum):
    PREFER_EXCLUDE = "prefer_exclude"
    PREFER_INCLUDE = "prefer_include"


@dataclass(frozen=True)
class VotePolicy:
    kind: VoteKind = VoteKind.PER_OPTION_MAJORITY
    tie_break: TieBreak = TieBreak.PREFER_EXCLUDE


@dataclass(frozen=True)
class ReasonerConfig:
    """All decoding knobs for one run.

    Diversity lives in the exclusion step (sampled at ``temperature_step1``);
    the per-option analysis and the combining step default to greedy
    decoding.
    """

    model_name: str = ""
    k: int = 3
    temperature_step1: float = 0.7
    temperature_step2: float = 0.0
    temperature_step3: float = 0.0
    max_tokens: int = 512
    stop_sequences: tuple[str, ...] = ()
    vote_policy: VotePolicy = field(default_factory=VotePolicy)
    max_prompt_tokens: int | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class ReasoningPath:
    """One sampled traversal: exclusions, per-option verdicts, final set."""

    path_id: int
    a1: ExclusionResult
    a2: Mapping[int, OptionVerdict]
    a3: frozenset[int]
    degenerate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "a2", dict(self.a2))
        object.__setattr__(self, "a3", frozenset(self.a3))
        m = len(self.a2)
        if set(self.a2) != set(range(m)):
            raise ValueError(f"a2 must hold one verdict per option, got keys {sorted(self.a2)}")
        if not self.a3 <= set(range(m)):
            raise ValueError(f"a3 {sorted(self.a3)} outside option range 0..{m - 1}")

    @property
    def m(self) -> int:
        return len(self.a2)


class NodeKind(Enum):
    CENTRAL = "central"
    OPTION = "option"
    EXCLUSION = "exclusion"
    VERDICT = "verdict"
    ANSWER = "answer"


@dataclass(frozen=True)
class GraphNode:
    node_id: str
    kind: NodeKind
    text: str
    path_id: int | None = None
    option_index: int | None = None


@dataclass(frozen=True)
class ThoughtGraph:
    """DAG of reasoning nodes holding K sampled paths.

    One central node, one node per option, and per path one exclusion
    node, one verdict node per option, and one answer node:
    ``1 + m + K*(m + 2)`` nodes in total.
    """

    nodes: tuple[GraphNode, ...]
    edges: tuple[tuple[str, str], ...]
    paths: tuple[ReasoningPath, ...]

    def node(self, node_id: str) -> GraphNode:
        for node in self.nodes:
            if node.node_id == node_id:
                return node
        raise KeyError(node_id)

    def predecessors(self, node_id: str) -> list[str]:
        return [src for src, dst in self.edges if dst == node_id]

    def successors(self, node_id: str) -> list[str]:
        return [dst for src, dst in self.edges if src == node_id]

    def to_json_dict(self) -> dict:
        return {
            "nodes": [
                {
                    "id": n.node_id,
                    "kind": n.kind.value,
                    "text": n.text,
                    "path_id": n.path_id,
                    "option_index": n.option_index,
                }
                for n in self.nodes
            ],
            "edges": [{"src": s, "dst": d} for s, d in self.edges],
        }


def build_graph(instance: MCQInstance, paths: Sequence[ReasoningPath]) -> ThoughtGraph:
    """Assemble the thought graph for an instance from its sampled paths."""
    if not paths:
        raise NoPaths("cannot build a graph without paths")
    seen_ids = [p.path_id for p in paths]
    if len(set(seen_ids)) != len(seen_ids):
        raise ValueError(f"duplicate path ids: {seen_ids}")
    for path in paths:
        if path.m != instance.m:
            raise ValueError(
                f"path {path.path_id} has {path.m} options, instance has {instance.m}"
            )

    nodes = [GraphNode("central", NodeKind.CENTRAL, instance.question)]
    edges: list[tuple[str, str]] = []
    for i, text in enumerate(instance.options):
        nodes.append(GraphNode(f"option:{i}", NodeKind.OPTION, text, option_index=i))
        edges.append(("central", f"option:{i}"))
    for path in paths:
        p = path.path_id
        excl_id = f"path{p}:exclusion"
        nodes.append(GraphNode(excl_id, NodeKind.EXCLUSION, path.a1.raw_text, path_id=p))
        edges.append(("central", excl_id))
        answer_id = f"path{p}:answer"
        for i in range(instance.m):
            verdict_id = f"path{p}:verdict:{i}"
            verdict = path.a2[i]
            nodes.append(
                GraphNode(
                    verdict_id,
                    NodeKind.VERDICT,
                    verdict.raw_text,
                    path_id=p,
                    option_index=i,
                )
            )
            edges.append((f"option:{i}", verdict_id))
            edges.append((excl_id, verdict_id))
            edges.append((verdict_id, answer_id))
        answer_text = ", ".join(index_to_letter(i) for i in sorted(path.a3)) or "none"
        nodes.append(GraphNode(answer_id, NodeKind.ANSWER, answer_text, path_id=p))
    return ThoughtGraph(nodes=tuple(nodes), edges=tuple(edges), paths=tuple(paths))


def _tally_and_choose(
    paths: Sequence[ReasoningPath], policy: VotePolicy
) -> tuple[frozenset[int], dict[int, int], bool]:
    if not paths:
        raise NoPaths("vote needs at least one path")
    ms = {p.m for p in paths}
    if len(ms) != 1:
        raise ValueError(f"paths disagree on option count: {sorted(ms)}")
    m = ms.pop()
    counted = [p for p in paths if not p.degenerate] or list(paths)
    n = len(counted)
    tally = {i: sum(1 for p in counted if i in p.a3) for i in range(m)}

    if policy.kind is VoteKind.PER_OPTION_MAJORITY:
        chosen = {i for i in range(m) if 2 * tally[i] > n}
        if policy.tie_break is TieBreak.PREFER_INCLUDE:
            chosen |= {i for i in range(m) if 2 * tally[i] == n}
    else:
        freq: Counter[frozenset[int]] = Counter(p.a3 for p in counted)
        top = max(freq.values())
        candidates = [s for s, c in freq.items() if c == top]
        candidates.sort(key=lambda s: (-sum(tally[i] for i in s), tuple(sorted(s))))
        chosen = set(candidates[0])

    rescued = False
    if not chosen:
        best = max(tally.values())
        chosen = {min(i for i in range(m) if tally[i] == best)}
        rescued = True
    return frozenset(chosen), tally, rescued


def vote(
    paths: Sequence[ReasoningPath], policy: VotePolicy | None = None
) -> tuple[frozenset[int], dict[int, int]]:
    """Aggregate sampled paths into one chosen option set plus the tally.

    Degenerate paths do not count unless every path is degenerate. An
    empty winning set is replaced by the max-tally option (smallest index
    on ties), so the result is never empty.
    """
    chosen, tally, _ = _tally_and_choose(paths, policy or VotePolicy())
    return chosen, tally


def _complete(
    backend: Backend, request: CompletionRequest, instance_id: str
) -> list[str]:
    try:
        return [c.text for c in backend.complete(request)]
    except BackendError as exc:
        raise InstanceBackendError(instance_id, exc) from exc


def _request(prompt: str, config: ReasonerConfig, n: int, temperature: float) -> CompletionRequest:
    return CompletionRequest(
        prompt=prompt,
        n_samples=n,
        temperature=temperature,
        max_tokens=config.max_tokens,
        model_name=config.model_name,
        stop_sequences=config.stop_sequences,
    )


def run_step1(
    instance: MCQInstance, backend: Backend, config: ReasonerConfig
) -> list[ExclusionResult]:
    """Sample K exclusion hypotheses in one request and parse each one.

    Unparseable completions are retried once individually; a completion
    that stays unparseable is recorded as an empty, parse-failed result.
    """
    prompt = render_prompt(
        instance, PromptKind.STEP1_EXCLUSION, max_prompt_tokens=config.max_prompt_tokens
    )
    texts = _complete(
        backend, _request(prompt, config, config.k, config.temperature_step1), instance.id
    )
    results = []
    for text in texts:
        try:
            results.append(parse_exclusions(text, instance.m))
            continue
        except Unparseable:
            pass
        retry_text = _complete(
            backend, _request(prompt, config, 1, config.temperature_step1), instance.id
        )[0]
        try:
            results.append(parse_exclusions(retry_text, instance.m))
        except Unparseable:
            results.append(
                ExclusionResult(
                    excluded=frozenset(), reasons={}, raw_text=retry_text, parse_failed=True
                )
            )
    return results


def run_step2(
    instance: MCQInstance,
    a1: ExclusionResult,
    backend: Backend,
    config: ReasonerConfig,
) -> dict[int, OptionVerdict]:
    """Ask for a verdict on every option, one prompt per option.

    Options excluded in step 1 are still analysed: the exclusion text
    only conditions the context. A verdict that stays unparseable after
    one retry is recorded as an abstention.
    """
    verdicts: dict[int, OptionVerdict] = {}
    for i in range(instance.m):
        prompt = render_prompt(
            instance,
            PromptKind.STEP2_VERDICT,
            a1=a1.raw_text,
            option_index=i,
            max_prompt_tokens=config.max_prompt_tokens,
        )
        verdicts[i] = _verdict_with_retry(prompt, i, instance.id, backend, config)
    return verdicts


def _verdict_with_retry(
    prompt: str, option_index: int, instance_id: str, backend: Backend, config: ReasonerConfig
) -> OptionVerdict:
    text = _complete(backend, _request(prompt, config, 1, config.temperature_step2), instance_id)[0]
    for attempt in range(2):
        try:
            verdict, reason = parse_verdict(text)
            return OptionVerdict(
                option_index=option_index, verdict=verdict, reason=reason, raw_text=text
            )
        except Unparseable:
            if attempt == 0:
                text = _complete(
                    backend, _request(prompt, config, 1, config.temperature_step2), instance_id
                )[0]
    return OptionVerdict(
        option_index=option_index, verdict=Verdict.ABSTAIN, reason="", raw_text=text
    )


def run_step3(
    instance: MCQInstance,
    a1: ExclusionResult,
    a2: Mapping[int, OptionVerdict],
    backend: Backend,
    config: ReasonerConfig,
) -> tuple[frozenset[int], bool]:
    """Combine the accumulated analysis into one final option set.

    Returns (option set, fallback flag). When the combining answer stays
    unparseable or empty after one retry, fall back to the options judged
    reasonable, then to everything not excluded, then to option A.
    """
    if set(a2) != set(range(instance.m)):
        raise ValueError("step 3 needs one verdict per option")
    a2_texts = {i: v.raw_text for i, v in a2.items()}
    prompt = render_prompt(
        instance,
        PromptKind.STEP3_COMBINE,
        a1=a1.raw_text,
        a2=a2_texts,
        max_prompt_tokens=config.max_prompt_tokens,
    )
    for attempt in range(2):
        text = _complete(
            backend, _request(prompt, config, 1, config.temperature_step3), instance.id
        )[0]
        try:
            chosen = parse_final_set(text, instance.m)
            if chosen:
                return chosen, False
        except (Unparseable, EmptySet):
            pass
    chosen = frozenset(i for i, v in a2.items() if v.verdict is Verdict.REASONABLE)
    if not chosen:
        chosen = frozenset(range(instance.m)) - a1.excluded
    if not chosen:
        chosen = frozenset({0})
    return chosen, True


def _single_shot(
    instance: MCQInstance,
    kind: PromptKind,
    strategy: Strategy,
    backend: Backend,
    config: ReasonerConfig,
) -> Prediction:
    prompt = render_prompt(instance, kind, max_prompt_tokens=config.max_prompt_tokens)
    chosen: frozenset[int] | None = None
    for _ in range(2):
        text = _complete(
            backend, _request(prompt, config, 1, config.temperature_step3), instance.id
        )[0]
        try:
            parsed = parse_final_set(text, instance.m)
            if parsed:
                chosen = parsed
                break
        except (Unparseable, EmptySet):
            pass
    fallback = chosen is None
    if chosen is None:
        chosen = frozenset(range(instance.m))
    return Prediction(
        instance_id=instance.id, strategy=strategy, chosen=chosen, fallback_used=fallback
    )


def _pick_loop(
    instance: MCQInstance,
    kind: PromptKind,
    strategy: Strategy,
    backend: Backend,
    config: ReasonerConfig,
) -> Prediction:
    verb = "pick" if kind is PromptKind.FORWARD_PICK else "remove"
    marked: list[int] = []
    fallback = False
    for _ in range(instance.m):
        prompt = render_prompt(
            instance, kind, taken=marked, max_prompt_tokens=config.max_prompt_tokens
        )
        pick = more = None
        for _attempt in range(2):
            text = _complete(
                backend, _request(prompt, config, 1, config.temperature_step3), instance.id
            )[0]
            try:
                pick, more = parse_pick(text, instance.m, verb)
                break
            except Unparseable:
                continue
        if pick is None:
            fallback = True
            break
        if pick not in marked:
            marked.append(pick)
        if not more or len(marked) == instance.m:
            break
    if kind is PromptKind.FORWARD_PICK:
        chosen = set(marked)
    else:
        chosen = set(range(instance.m)) - set(marked)
    if not chosen:
        chosen = {0}
        fallback = True
    return Prediction(
        instance_id=instance.id,
        strategy=strategy,
        chosen=frozenset(chosen),
        fallback_used=fallback,
    )


def run_strategy(
    instance: MCQInstance,
    strategy: Strategy,
    backend: Backend,
    config: ReasonerConfig | None = None,
) -> Prediction:
    """Produce a prediction for one instance under the given strategy."""
    config = config or ReasonerConfig()
    if strategy is Strategy.STANDARD:
        return _single_shot(instance, PromptKind.STANDARD, strategy, backend, config)
    if strategy is Strategy.COT:
        return _single_shot(instance, PromptKind.VANILLA_COT, strategy, backend, config)
    if strategy is Strategy.FORWARD:
        return _pick_loop(instance, PromptKind.FORWARD_PICK, strategy, backend, config)
    if strategy is Strategy.BACKWARD:
        return _pick_loop(instance, PromptKind.BACKWARD_PICK, strategy, backend, config)

    exclusions = run_step1(instance, backend, config)
    paths = []
    for path_id, a1 in enumerate(exclusions):
        a2 = run_step2(instance, a1, backend, config)
        a3, step3_fallback = run_step3(instance, a1, a2, backend, config)
        degenerate = (
            a1.parse_failed
            or any(v.verdict is Verdict.ABSTAIN for v in a2.values())
            or step3_fallback
        )
        paths.append(ReasoningPath(path_id=path_id, a1=a1, a2=a2, a3=a3, degenerate=degenerate))
    chosen, tally, rescued = _tally_and_choose(paths, config.vote_policy)
    return Prediction(
        instance_id=instance.id,
        strategy=strategy,
        chosen=chosen,
        paths=tuple(paths),
        vote_tally=tally,
        fallback_used=rescued or any(p.degenerate for p in paths),
    )


def build_trace(
    instance: MCQInstance, prediction: Prediction, graph: ThoughtGraph | None = None
) -> dict:
    """One JSON-ready trace document per prediction, for offline inspection."""
    trace: dict = {
        "instance_id": instance.id,
        "strategy": prediction.strategy.value,
        "chosen": sorted(prediction.chosen),
        "chosen_labels": [index_to_letter(i) for i in sorted(prediction.chosen)],
        "gold": sorted(instance.gold),
        "vote_tally": {str(i): v for i, v in sorted(prediction.vote_tally.items())},
        "fallback_used": prediction.fallback_used,
        "paths": [
            {
                "path_id": p.path_id,
                "excluded": sorted(p.a1.excluded),
                "verdicts": {
                    str(i): p.a2[i].verdict.value for i in sorted(p.a2)
                },
                "final_set": sorted(p.a3),
                "degenerate": p.degenerate,
            }
            for p in prediction.paths
        ],
        "graph": graph.to_json_dict() if graph is not None else None,
    }
    return trace
