"""Hierarchical task routing: parse the request, solve with the matching
retrieval tool, refine with the model, with guaranteed termination.

Routing outcomes for the named maintenance object: Known (exact registry
match), Analogous (nearest registered object above a similarity
threshold; the known object's scheme is transferred with an explicit
adaptation notice), or Unknown (refuse rather than fabricate). All
internal failures surface as refusals-with-trace, never exceptions, and
a refusal never contains numbered scheme steps.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .corpus import Chunk
from .embedding import Embedder, cosine
from .errors import (
    EmptyIndex,
    EmptyQuery,
    MaintgenError,
    MaxStepsExceeded,
    PhaseError,
    RetrievalBelowFloor,
    SequenceTooLong,
    UnknownDecision,
)
from .index import ChunkRef, VectorIndex
from .lora import LoraAdapter
from .model import LMParams, SamplerConfig, build_prompt, sample
from .rag import DEFAULT_RETRIEVAL_FLOOR, GeneratedAnswer, generate_answer
from .tokenizer import Tokenizer, split_text

DEFAULT_TAU = 0.35
DEFAULT_MAX_STEPS = 8

_NUMBERED_LINE = re.compile(r"^\s*\d+\s*[.)]", re.MULTILINE)


def has_numbered_steps(text: str) -> bool:
    return bool(_NUMBERED_LINE.search(text))


def numbered_lines(text: str) -> list[str]:
    return [line.strip() for line in text.splitlines() if _NUMBERED_LINE.match(line)]


class Phase(enum.Enum):
    PARSING = "parsing"
    SOLVING = "solving"
    REFINING = "refining"
    DONE = "done"
    REFUSED = "refused"


TERMINAL_PHASES = (Phase.DONE, Phase.REFUSED)


class RoutingKind(enum.Enum):
    KNOWN = "known"
    ANALOGOUS = "analogous"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class RoutingDecision:
    kind: RoutingKind
    object_type: Optional[str] = None       # registry object to answer from
    unknown_name: Optional[str] = None      # query phrase for analogous routing
    similarity: Optional[float] = None
    evidence: str = ""

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind.value}
        if self.object_type is not None:
            out["object"] = self.object_type
        if self.similarity is not None:
            out["similarity"] = self.similarity
        if self.unknown_name is not None:
            out["unknown_name"] = self.unknown_name
        return out


@dataclass(frozen=True)
class RegistryEntry:
    object_type: str
    partition: VectorIndex
    display_name: str
    name_embedding: np.ndarray


class ToolRegistry:
    """Maps each maintenance object type to its retrieval partition."""

    def __init__(self, entries: Mapping[str, RegistryEntry]):
        for object_type, entry in entries.items():
            if len(entry.partition) == 0:
                raise ValueError(f"partition for {object_type!r} is empty")
        self.entries = dict(entries)

    @classmethod
    def build(
        cls,
        index: VectorIndex,
        doc_object_types: Mapping[str, str],
        embedder: Embedder,
    ) -> "ToolRegistry":
        by_object: dict[str, list[str]] = {}
        for doc_id, object_type in doc_object_types.items():
            by_object.setdefault(object_type, []).append(doc_id)
        entries: dict[str, RegistryEntry] = {}
        for object_type, doc_ids in sorted(by_object.items()):
            partition = index.subset(doc_ids)
            if len(partition) == 0:
                continue
            entries[object_type] = RegistryEntry(
                object_type=object_type,
                partition=partition,
                display_name=object_type,
                name_embedding=embedder.embed(object_type),
            )
        return cls(entries)

    @property
    def object_types(self) -> list[str]:
        return sorted(self.entries)

    def __contains__(self, object_type: str) -> bool:
        return object_type in self.entries

    def __getitem__(self, object_type: str) -> RegistryEntry:
        return self.entries[object_type]


@dataclass(frozen=True)
class TraceEvent:
    step: int
    agent: int
    observation: str
    action: str
    environment: str

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "agent": self.agent,
            "observation": self.observation,
            "action": self.action,
            "environment": self.environment,
        }


@dataclass(frozen=True)
class AgentEnv:
    """Immutable snapshot of everything a session needs."""

    registry: ToolRegistry
    chunks: Mapping[ChunkRef, Chunk]
    params: LMParams
    tokenizer: Tokenizer
    embedder: Embedder
    adapters: Optional[Mapping[str, LoraAdapter]] = None
    k: int = 5
    tau: float = DEFAULT_TAU
    floor: float = DEFAULT_RETRIEVAL_FLOOR
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(temperature=0.0))
    max_steps: int = DEFAULT_MAX_STEPS


@dataclass(frozen=True)
class AgentState:
    phase: Phase
    query: str
    decision: Optional[RoutingDecision] = None
    draft: Optional[GeneratedAnswer] = None
    final_text: Optional[str] = None
    refusal_reason: Optional[str] = None
    step: int = 0
    trace: tuple[TraceEvent, ...] = ()

    @classmethod
    def initial(cls, query: str) -> "AgentState":
        return cls(phase=Phase.PARSING, query=query)

    @property
    def terminal(self) -> bool:
        return self.phase in TERMINAL_PHASES


_PHRASE_STOPWORDS = frozenset(
    "the a an has have had is are was were be been new old my our your this "
    "that these those it its of for with and or in on at to from by as".split()
)


def _candidate_spans(tokens: Sequence[str], max_n: int = 3) -> list[tuple[int, int]]:
    """Token n-grams (n <= max_n) that neither start nor end on a
    stopword: the noun-phrase stand-ins scored against object names."""
    spans: list[tuple[int, int]] = []
    for n in range(1, max_n + 1):
        for start in range(0, len(tokens) - n + 1):
            end = start + n
            if tokens[start] in _PHRASE_STOPWORDS or tokens[end - 1] in _PHRASE_STOPWORDS:
                continue
            spans.append((start, end))
    return spans


def agent1_parse(
    query: str,
    registry: ToolRegistry,
    embedder: Embedder,
    tau: float = DEFAULT_TAU,
) -> RoutingDecision:
    """Route the request: exact object-name containment wins, otherwise
    the best phrase-to-name similarity above tau yields Analogous."""
    tokens = split_text(query)
    if not tokens:
        raise EmptyQuery("query contains no tokens")
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must be in (0, 1)")

    matches: list[tuple[int, str]] = []
    for object_type in registry.object_types:
        name_tokens = split_text(object_type)
        span = len(name_tokens)
        for start in range(0, len(tokens) - span + 1):
            if tokens[start : start + span] == name_tokens:
                matches.append((span, object_type))
                break
    if matches:
        # Longest (most specific) name wins, alphabetical among equals.
        matches.sort(key=lambda m: (-m[0], m[1]))
        chosen = matches[0][1]
        return RoutingDecision(
            kind=RoutingKind.KNOWN,
            object_type=chosen,
            evidence=f"object name {chosen!r} occurs in the request",
        )

    spans = _candidate_spans(tokens)
    scored: dict[tuple[int, int], tuple[float, str]] = {}
    best: Optional[tuple[float, tuple[int, int], str]] = None
    for span in spans:
        phrase = " ".join(tokens[span[0] : span[1]])
        vec = embedder.embed(phrase)
        for object_type in registry.object_types:
            sim = cosine(vec, registry[object_type].name_embedding)
            if span not in scored or sim > scored[span][0]:
                scored[span] = (sim, object_type)
            if best is None or sim > best[0]:
                best = (sim, span, object_type)
    if best is not None and best[0] >= tau:
        _, head_span, object_type = best
        # Prefer the maximal phrase around the matched head that still
        # clears the threshold: "hydraulic pump", not just "pump".
        chosen = head_span
        chosen_sim = scored[head_span][0]
        for span in spans:
            if span == chosen:
                continue
            sim, obj = scored[span]
            if obj != object_type or sim < tau:
                continue
            if span[0] <= head_span[0] and span[1] >= head_span[1]:
                wider = span[1] - span[0] > chosen[1] - chosen[0]
                if wider or (span[1] - span[0] == chosen[1] - chosen[0]
                             and sim > chosen_sim):
                    chosen, chosen_sim = span, sim
        phrase = " ".join(tokens[chosen[0] : chosen[1]])
        return RoutingDecision(
            kind=RoutingKind.ANALOGOUS,
            object_type=object_type,
            unknown_name=phrase,
            similarity=chosen_sim,
            evidence=f"{phrase!r} resembles {object_type!r} (cosine {chosen_sim:.3f})",
        )
    top = f"{best[0]:.3f}" if best is not None else "n/a"
    return RoutingDecision(
        kind=RoutingKind.UNKNOWN,
        evidence=f"no registered object matched (best similarity {top})",
    )


def adaptation_notice(unknown_name: str, known_object: str) -> str:
    return (
        f"no dedicated scheme exists for the {unknown_name}; the following "
        f"adapts the known {known_object} scheme."
    )


def agent2_solve(
    decision: RoutingDecision,
    query: str,
    registry: ToolRegistry,
    env: AgentEnv,
) -> GeneratedAnswer:
    """Generate a grounded draft from the routed object's partition."""
    if decision.kind is RoutingKind.UNKNOWN or decision.object_type is None:
        raise UnknownDecision("cannot solve without a routed object")
    entry = registry[decision.object_type]
    answer = generate_answer(
        query=query,
        index=entry.partition,
        chunks=env.chunks,
        params=env.params,
        tokenizer=env.tokenizer,
        embedder=env.embedder,
        k=env.k,
        sampler=env.sampler,
        adapters=env.adapters,
        floor=env.floor,
    )
    if decision.kind is RoutingKind.ANALOGOUS:
        notice = adaptation_notice(decision.unknown_name or "requested object",
                                   decision.object_type)
        answer = answer.with_text(f"{notice}\n{answer.text}")
    return answer


def agent3_refine(
    draft: GeneratedAnswer,
    query: str,
    params: LMParams,
    tokenizer: Tokenizer,
    sampler: SamplerConfig,
    adapters: Optional[Mapping[str, LoraAdapter]] = None,
) -> tuple[str, str]:
    """Re-prompt the model on (draft, query) for a final pass.

    The refined text is accepted only if it preserves every numbered step
    line of the draft (and its adaptation notice, if any); otherwise the
    draft text stands. Returns (final text, note for the trace).
    """
    from .training import _adapter_tensors

    atensors = _adapter_tensors(adapters, trainable=False) if adapters else None
    try:
        prompt = build_prompt(tokenizer, query, context=draft.text)
        ids = sample(params, prompt, sampler, tokenizer.eos_id, atensors)
        refined = tokenizer.decode(ids)
    except SequenceTooLong:
        return draft.text, "refinement skipped: sequence too long; draft kept verbatim"
    required = numbered_lines(draft.text)
    first_line = draft.text.splitlines()[0] if draft.text.splitlines() else ""
    if first_line and not _NUMBERED_LINE.match(first_line):
        required = [first_line.strip()] + required
    if refined.strip() and all(line in refined for line in required):
        return refined, "refined draft accepted"
    return draft.text, "refinement discarded: draft steps not preserved"


_REFUSAL_TEXTS = {
    "empty query": "unable to help: the request was empty.",
    "unknown maintenance object": (
        "unable to help: the request names no known or similar maintenance "
        "object, and guessing a scheme would risk incorrect maintenance."
    ),
    "retrieval floor": (
        "unable to help: no stored scheme matches this request closely "
        "enough, so no maintenance steps are offered."
    ),
    "step budget": "unable to help: the session exceeded its step budget.",
}


def refusal_text(reason: str) -> str:
    return _REFUSAL_TEXTS.get(reason, f"unable to help: {reason}.")


def step(state: AgentState, env: AgentEnv) -> AgentState:
    """Advance exactly one phase, appending exactly one trace event."""
    if state.terminal:
        raise PhaseError(f"step() called on terminal phase {state.phase.value}")
    if state.step >= env.max_steps:
        raise MaxStepsExceeded(f"exceeded {env.max_steps} transitions")
    next_step = state.step + 1

    def with_event(new: AgentState, agent: int, observation: str, action: str,
                   environment: str) -> AgentState:
        event = TraceEvent(next_step, agent, observation, action, environment)
        return replace(new, step=next_step, trace=state.trace + (event,))

    if state.phase is Phase.PARSING:
        try:
            decision = agent1_parse(state.query, env.registry, env.embedder, env.tau)
        except EmptyQuery:
            return with_event(
                replace(state, phase=Phase.REFUSED, refusal_reason="empty query",
                        final_text=refusal_text("empty query")),
                1, "empty request", "refuse", "no tokens to parse",
            )
        if decision.kind is RoutingKind.UNKNOWN:
            return with_event(
                replace(state, phase=Phase.REFUSED, decision=decision,
                        refusal_reason="unknown maintenance object",
                        final_text=refusal_text("unknown maintenance object")),
                1, f"request: {state.query!r}", "refuse: unknown object",
                decision.evidence,
            )
        return with_event(
            replace(state, phase=Phase.SOLVING, decision=decision),
            1, f"request: {state.query!r}", f"route {decision.kind.value}",
            decision.evidence,
        )

    if state.phase is Phase.SOLVING:
        assert state.decision is not None
        try:
            draft = agent2_solve(state.decision, state.query, env.registry, env)
        except (RetrievalBelowFloor, EmptyIndex) as exc:
            reason = ("retrieval floor" if isinstance(exc, RetrievalBelowFloor)
                      else "no indexed schemes")
            return with_event(
                replace(state, phase=Phase.REFUSED, refusal_reason=reason,
                        final_text=refusal_text(reason)),
                2, f"tool: {state.decision.object_type}",
                "refuse: no usable scheme in the selected tool", str(exc),
            )
        return with_event(
            replace(state, phase=Phase.REFINING, draft=draft),
            2, f"tool: {state.decision.object_type}",
            f"drafted scheme with {len(draft.citations)} citations",
            f"marginal log-probability {draft.marginal_log_prob:.3f}",
        )

    assert state.phase is Phase.REFINING and state.draft is not None
    final, note = agent3_refine(state.draft, state.query, env.params,
                                env.tokenizer, env.sampler, env.adapters)
    return with_event(
        replace(state, phase=Phase.DONE, final_text=final),
        3, "draft scheme", "final pass over draft", note,
    )


@dataclass(frozen=True)
class RunResult:
    state: AgentState

    @property
    def text(self) -> str:
        return self.state.final_text or ""

    @property
    def done(self) -> bool:
        return self.state.phase is Phase.DONE

    @property
    def refused(self) -> bool:
        return self.state.phase is Phase.REFUSED

    @property
    def trace(self) -> tuple[TraceEvent, ...]:
        return self.state.trace


def run(query: str, env: AgentEnv) -> RunResult:
    """Drive step() to a terminal phase; never raises.

    Domain errors escaping a step become refusals with a trace entry;
    only genuine programming errors may propagate.
    """
    state = AgentState.initial(query)
    while not state.terminal:
        try:
            state = step(state, env)
        except MaxStepsExceeded as exc:
            event = TraceEvent(state.step, 0, "step budget", "refuse", str(exc))
            state = replace(
                state, phase=Phase.REFUSED, refusal_reason="step budget",
                final_text=refusal_text("step budget"),
                trace=state.trace + (event,),
            )
        except MaintgenError as exc:
            event = TraceEvent(state.step, 0, "internal error", "refuse",
                               f"{exc.code}: {exc}")
            state = replace(
                state, phase=Phase.REFUSED, refusal_reason=exc.code,
                final_text=refusal_text(f"no scheme could be produced ({exc.code})"),
                trace=state.trace + (event,),
            )
    return RunResult(state=state)
