"""Production representation, matching, conflict resolution, and learning.

Matching is strictly binary: a production is in the conflict set exactly
when every condition holds, and bindings come from single definite sources
(a buffer's one chunk, or the top-ranked middle-memory entry) with no
backtracking.  Conflict resolution is argmax by utility with a
lexicographic tie-break, so runs are deterministic.  Utilities learn by a
time-discounted delta rule, and sufficiently active middle-memory entries
spawn provisional retrieval productions that survive only if rewarded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .chunks import WILDCARD, Chunk, ChunkFactory, Query, match_query
from .errors import BindingError
from .memory import MiddleMemory, WorkingMemory

DEFAULT_LEARNING_RATE = 0.2
DEFAULT_TIME_COST = 0.0
DEFAULT_FORMATION_THRESHOLD = 2.0
DEFAULT_PROVISIONAL_TTL = 60.0

ACTION_KINDS = ("write-buffer", "clear-buffer", "post-query", "emit-reward", "halt")


@dataclass(frozen=True)
class Condition:
    """One test: a pattern against a buffer or against tagged middle memory.

    Exactly one of ``buffer``/``mm_tags`` is set.  A ``None`` pattern tests
    bare presence.  Negated conditions invert satisfaction and never bind.
    """

    pattern: Query | None
    buffer: str | None = None
    mm_tags: tuple[str, ...] | None = None
    negated: bool = False


@dataclass(frozen=True)
class Template:
    """Chunk- or query-shaped action payload.

    Values may be literal symbols, ``"?"`` (stays a wildcard; query
    templates only), or ``"?name"`` references to bindings produced by the
    production's non-negated conditions.
    """

    ctype: str
    slots: tuple[tuple[str, str], ...]

    @classmethod
    def from_chunk(cls, chunk: Chunk) -> Template:
        return cls(chunk.ctype, chunk.slots)


@dataclass(frozen=True)
class Action:
    kind: str
    target: str | None = None
    template: Template | None = None
    amount: float = 0.0
    urgent: bool = False


@dataclass
class Production:
    """Condition/action rule with a learned utility.

    Model-declared productions are permanent; productions formed at run
    time start provisional (``permanent=False``) with a creation time and
    are made permanent only by a positive effective reward.
    """

    name: str
    owner: str
    conditions: tuple[Condition, ...]
    actions: tuple[Action, ...]
    utility: float = 0.0
    permanent: bool = True
    created_at: float | None = None
    fired_at: list[float] = field(default_factory=list)


def _resolve_value(value: str, bindings: dict[str, str], production: str,
                   *, allow_wildcard: bool) -> str:
    if value == WILDCARD:
        if not allow_wildcard:
            raise BindingError(
                f"production {production!r}: bare wildcard in a chunk template")
        return value
    if value.startswith(WILDCARD):
        ref = value[1:]
        try:
            return bindings[ref]
        except KeyError:
            raise BindingError(
                f"production {production!r}: unresolved binding reference {value!r}") from None
    return value


def instantiate_chunk(template: Template, bindings: dict[str, str],
                      factory: ChunkFactory, production: str) -> Chunk:
    ctype = _resolve_value(template.ctype, bindings, production, allow_wildcard=False)
    slots = [(n, _resolve_value(v, bindings, production, allow_wildcard=False))
             for n, v in template.slots]
    return factory.make(ctype, slots)


def instantiate_query(template: Template, bindings: dict[str, str],
                      factory: ChunkFactory, production: str) -> Query:
    ctype = template.ctype
    if ctype != WILDCARD:
        ctype = _resolve_value(ctype, bindings, production, allow_wildcard=False)
    slots = [(n, _resolve_value(v, bindings, production, allow_wildcard=True))
             for n, v in template.slots]
    return factory.make_query(ctype, slots)


class MatchView:
    """Everything one engine step matches against, plus the test counter.

    ``inflows`` (pipeline mode only) maps buffer names to the unbounded
    lists of directly-routed predictions the engine must also scan;
    ``candidates`` counts every content test this view evaluated.
    """

    def __init__(self, wm: WorkingMemory, mm: MiddleMemory | None, now: float,
                 default_tags: tuple[str, ...] | None = None,
                 inflows: dict[str, list[Chunk]] | None = None):
        self.wm = wm
        self.mm = mm
        self.now = now
        self.default_tags = default_tags
        self.inflows = inflows
        self.candidates = 0


@dataclass
class Match:
    production: Production
    bindings: dict[str, str]
    # (buffer name, chunk id) pairs whose content the conditions matched
    sources: list[tuple[str, int]]


def _test_content(pattern: Query | None, content) -> dict[str, str] | None:
    """Binary test of a condition pattern against one buffer content item."""
    if content is None:
        return None
    if pattern is None:
        return {}
    if not isinstance(content, Chunk):
        return None  # pending queries never satisfy a shaped pattern
    return match_query(pattern, content)


def _eval_buffer_condition(cond: Condition, view: MatchView):
    buf = view.wm.buffer(cond.buffer)
    matched_bindings = None
    matched_chunk_id = None
    if buf.content is not None:
        view.candidates += 1
        matched_bindings = _test_content(cond.pattern, buf.content)
        if matched_bindings is not None and isinstance(buf.content, Chunk):
            matched_chunk_id = buf.content.id
    if view.inflows is not None:
        # Ungated pipeline routing: every retained prediction is scanned.
        # The buffer's content is preferred for bindings; failing that, the
        # most recent matching retained prediction supplies them.
        inflow_bindings = None
        inflow_chunk_id = None
        for item in view.inflows.get(cond.buffer, ()):
            view.candidates += 1
            got = _test_content(cond.pattern, item)
            if got is not None:
                inflow_bindings = got
                inflow_chunk_id = item.id
        if matched_bindings is None and inflow_bindings is not None:
            matched_bindings = inflow_bindings
            matched_chunk_id = inflow_chunk_id
    if cond.negated:
        return (matched_bindings is None), {}, None
    if matched_bindings is None:
        return False, {}, None
    return True, matched_bindings, matched_chunk_id


def _eval_mm_condition(cond: Condition, view: MatchView):
    tags = cond.mm_tags if cond.mm_tags is not None else view.default_tags
    hits = view.mm.retrieve(view.wm, view.now, pattern=cond.pattern,
                            tags=frozenset(tags) if tags is not None else None, k=1)
    if cond.negated:
        return (not hits), {}, None
    if not hits:
        return False, {}, None
    _, _, bindings = hits[0]
    return True, bindings, None


def match_production(production: Production, view: MatchView) -> Match | None:
    """All-conditions test with cross-condition unification of bindings."""
    merged: dict[str, str] = {}
    sources: list[tuple[str, int]] = []
    for cond in production.conditions:
        if cond.buffer is not None:
            ok, bindings, chunk_id = _eval_buffer_condition(cond, view)
        else:
            ok, bindings, chunk_id = _eval_mm_condition(cond, view)
        if not ok:
            return None
        for key, value in bindings.items():
            if merged.get(key, value) != value:
                return None  # same binding key must unify across conditions
            merged[key] = value
        if chunk_id is not None:
            sources.append((cond.buffer, chunk_id))
    return Match(production, merged, sources)


def match_all(productions, view: MatchView) -> list[Match]:
    """Conflict set, in production declaration order."""
    out = []
    for production in productions:
        match = match_production(production, view)
        if match is not None:
            out.append(match)
    return out


def resolve(conflict: list[Match]) -> Match | None:
    """Highest utility wins; exact ties go to the smaller production name."""
    if not conflict:
        return None
    return min(conflict, key=lambda m: (-m.production.utility, m.production.name))


@dataclass
class Effect:
    kind: str
    target: str | None = None
    content: object = None  # Chunk | Query for writes/queries
    amount: float = 0.0
    urgent: bool = False


def fire(production: Production, bindings: dict[str, str],
         factory: ChunkFactory, now: float) -> list[Effect]:
    """Instantiate the production's actions, in listed order.

    Appends the fire time to the production's history; the caller applies
    the returned effects and does the engine-specific bookkeeping.
    """
    effects = []
    for action in production.actions:
        if action.kind == "write-buffer":
            chunk = instantiate_chunk(action.template, bindings, factory, production.name)
            effects.append(Effect("write-buffer", target=action.target,
                                  content=chunk, urgent=action.urgent))
        elif action.kind == "clear-buffer":
            effects.append(Effect("clear-buffer", target=action.target))
        elif action.kind == "post-query":
            query = instantiate_query(action.template, bindings, factory, production.name)
            effects.append(Effect("post-query", target=action.target, content=query))
        elif action.kind == "emit-reward":
            effects.append(Effect("emit-reward", amount=action.amount))
        elif action.kind == "halt":
            effects.append(Effect("halt"))
        else:
            raise ValueError(f"unknown action kind {action.kind!r}")
    production.fired_at.append(now)
    return effects


@dataclass
class UtilityUpdate:
    production: str
    owner: str
    old: float
    new: float
    effective_reward: float
    made_permanent: bool


class UtilityLearner:
    """Delta-rule utility learning with a per-second time cost.

    Central firings accumulate in ``pending`` and are all credited (and
    cleared) at the next reward; shadow productions are credited through
    :meth:`credit` when one of their deposits was consumed.
    """

    def __init__(self, alpha: float = DEFAULT_LEARNING_RATE,
                 rho: float = DEFAULT_TIME_COST):
        if not 0.0 < alpha <= 1.0:
            raise ValueError("learning rate must be in (0, 1]")
        self.alpha = alpha
        self.rho = rho
        self.pending: list[tuple[Production, float]] = []

    def record_fire(self, production: Production, fire_time: float) -> None:
        self.pending.append((production, fire_time))

    def _apply(self, production: Production, effective: float) -> UtilityUpdate:
        old = production.utility
        production.utility = old + self.alpha * (effective - old)
        made_permanent = False
        if effective > 0.0 and not production.permanent:
            production.permanent = True
            made_permanent = True
        return UtilityUpdate(production.name, production.owner, old,
                             production.utility, effective, made_permanent)

    def apply_reward(self, reward: float, reward_time: float) -> list[UtilityUpdate]:
        """Credit every pending firing, time-discounted, then clear."""
        if not math.isfinite(reward):
            raise ValueError("reward must be finite")
        updates = []
        for production, fire_time in self.pending:
            effective = reward - self.rho * (reward_time - fire_time)
            updates.append(self._apply(production, effective))
        self.pending.clear()
        return updates

    def credit(self, production: Production, reward: float, reward_time: float,
               deposit_time: float) -> UtilityUpdate:
        """Same update, anchored at a consumed deposit's time."""
        effective = reward - self.rho * (reward_time - deposit_time)
        return self._apply(production, effective)


def retrieval_pattern(chunk: Chunk) -> Query:
    """Exact-match pattern for a chunk's full content (no wildcards)."""
    return Query(chunk.ctype, chunk.slots, -1)


def form_retrieval_production(entry, activation: float, system: str, buffer: str,
                              existing, now: float,
                              threshold: float = DEFAULT_FORMATION_THRESHOLD) -> Production | None:
    """Spawn a provisional production that retrieves a hot entry.

    Returns ``None`` below the activation threshold, for vector-only
    entries (nothing to pattern-match), or when the owner already has a
    production retrieving the same tagged pattern.
    """
    if activation <= threshold or entry.chunk is None:
        return None
    pattern = retrieval_pattern(entry.chunk)
    tags = (entry.tag,)
    for production in existing:
        if production.owner != system:
            continue
        for cond in production.conditions:
            if (cond.mm_tags == tags and cond.pattern is not None
                    and not cond.negated
                    and cond.pattern.ctype == pattern.ctype
                    and cond.pattern.slots == pattern.slots):
                return None
    return Production(
        name=f"retrieve-{entry.id}",
        owner=system,
        conditions=(Condition(pattern=pattern, mm_tags=tags),),
        actions=(Action("write-buffer", target=buffer,
                        template=Template.from_chunk(entry.chunk)),),
        utility=0.0,
        permanent=False,
        created_at=now,
    )


def prune_provisional(productions, now: float,
                      ttl: float = DEFAULT_PROVISIONAL_TTL) -> tuple[list, list]:
    """Split productions into (kept, pruned) by the provisional lifetime.

    A provisional production older than ``ttl`` whose utility never rose
    above zero is pruned; permanent productions are never touched.
    """
    if ttl <= 0:
        raise ValueError("ttl must be positive")
    kept, pruned = [], []
    for production in productions:
        stale = (not production.permanent
                 and production.created_at is not None
                 and now - production.created_at > ttl
                 and production.utility <= 0.0)
        (pruned if stale else kept).append(production)
    return kept, pruned
