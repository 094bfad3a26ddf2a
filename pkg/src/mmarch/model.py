"""Model definitions: the declarative file format and its validation.

A model file is a JSON document naming the buffers, shadow systems,
productions, predictors, store parameters, reward schedule, and initial
contents of a run.  Loading fills in every default and validates the
whole document, reporting each violation with a path into the document
(e.g. ``shadow_systems[1].productions[0].actions[0]``).  The serializer
uses one canonical key order so load(write(m)) == m.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .chunks import TYPE_SLOT, WILDCARD, validate_symbol
from .errors import ChunkError, ModelValidationError

CENTRAL = "central"

PREDICTOR_KINDS = ("ngram", "associative", "external")


@dataclass(frozen=True)
class PatternDef:
    """Chunk-shaped pattern or template: a type plus ordered slot pairs."""

    ctype: str
    slots: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class ConditionDef:
    pattern: PatternDef | None = None
    buffer: str | None = None
    mm_tags: tuple[str, ...] | None = None
    negated: bool = False


@dataclass(frozen=True)
class ActionDef:
    kind: str
    target: str | None = None
    chunk: PatternDef | None = None
    query: PatternDef | None = None
    amount: float = 0.0
    urgent: bool = False


@dataclass(frozen=True)
class ProductionDef:
    name: str
    conditions: tuple[ConditionDef, ...]
    actions: tuple[ActionDef, ...]
    utility: float = 0.0
    permanent: bool = True


@dataclass(frozen=True)
class BufferDef:
    name: str
    owner: str = CENTRAL


@dataclass(frozen=True)
class ShadowSystemDef:
    name: str
    buffer: str
    subscriptions: tuple[str, ...]
    productions: tuple[ProductionDef, ...] = ()
    steps_per_cycle: int = 1


@dataclass(frozen=True)
class PredictorDef:
    name: str
    kind: str
    tag: str
    rate: int = 1
    seed: int = 0
    order: int = 2
    corpus: tuple[tuple[str, ...], ...] = ()
    pairs: tuple[tuple, ...] = ()
    emit_isa: str = "word"
    emit_slot: str = "value"
    command: tuple[str, ...] | None = None
    host: str | None = None
    port: int | None = None


@dataclass(frozen=True)
class CodebookConfig:
    dimension: int = 1024
    seed: int = 0
    cleanup_threshold: float = 0.2


@dataclass(frozen=True)
class MiddleMemoryConfig:
    decay: float = 0.5
    spread_weight: float = 1.0
    retrieval_threshold: float = -1.0
    forget_threshold: float = -2.5
    noise: float = 0.0
    formation_threshold: float = 2.0


@dataclass(frozen=True)
class LearningConfig:
    rate: float = 0.2
    time_cost: float = 0.0
    provisional_ttl_s: float = 60.0


@dataclass(frozen=True)
class RewardDef:
    cycle: int
    amount: float


@dataclass(frozen=True)
class InitialWMDef:
    buffer: str
    chunk: PatternDef | None = None
    query: PatternDef | None = None


@dataclass(frozen=True)
class InitialMMDef:
    tag: str
    chunk: PatternDef
    presentations: tuple[float, ...] = (0.0,)
    links: tuple[int, ...] = ()


@dataclass(frozen=True)
class ModelDefinition:
    name: str
    codebook: CodebookConfig = CodebookConfig()
    wm_capacity: int = 8
    cycle_length_ms: int = 50
    buffers: tuple[BufferDef, ...] = ()
    shadow_systems: tuple[ShadowSystemDef, ...] = ()
    central_productions: tuple[ProductionDef, ...] = ()
    predictors: tuple[PredictorDef, ...] = ()
    middle_memory: MiddleMemoryConfig = MiddleMemoryConfig()
    learning: LearningConfig = LearningConfig()
    rewards: tuple[RewardDef, ...] = ()
    initial_wm: tuple[InitialWMDef, ...] = ()
    initial_mm: tuple[InitialMMDef, ...] = ()

    def system(self, name: str) -> ShadowSystemDef | None:
        for system in self.shadow_systems:
            if system.name == name:
                return system
        return None


class _Collector:
    """Accumulates (path, message) violations during parse and validation."""

    def __init__(self):
        self.violations: list[tuple[str, str]] = []

    def add(self, path: str, message: str) -> None:
        self.violations.append((path, message))

    def raise_if_any(self) -> None:
        if self.violations:
            raise ModelValidationError(self.violations)


def _expect(value, types, path: str, errors: _Collector, what: str):
    if not isinstance(value, types):
        errors.add(path, f"{what} has wrong type {type(value).__name__}")
        return None
    return value


def _check_keys(obj: dict, allowed: tuple[str, ...], path: str, errors: _Collector) -> None:
    for key in obj:
        if key not in allowed:
            errors.add(f"{path}.{key}", "unknown key")


def _parse_pattern(obj, path: str, errors: _Collector, *,
                   allow_wildcards: bool, allow_refs: bool) -> PatternDef | None:
    if _expect(obj, dict, path, errors, "pattern") is None:
        return None
    _check_keys(obj, ("isa", "slots"), path, errors)
    ctype = obj.get("isa")
    if not isinstance(ctype, str):
        errors.add(f"{path}.isa", "missing or non-string chunk type")
        return None
    if ctype != WILDCARD or not allow_wildcards:
        try:
            if not (allow_refs and ctype.startswith(WILDCARD) and len(ctype) > 1):
                validate_symbol(ctype, what="chunk type")
        except ChunkError as exc:
            errors.add(f"{path}.isa", str(exc))
    slots_obj = obj.get("slots", {})
    if _expect(slots_obj, dict, f"{path}.slots", errors, "slots") is None:
        return PatternDef(ctype)
    pairs = []
    seen = set()
    for name, value in slots_obj.items():
        slot_path = f"{path}.slots.{name}"
        try:
            validate_symbol(name, what="slot name")
            if name == TYPE_SLOT:
                raise ChunkError(f"slot name {TYPE_SLOT!r} is reserved")
        except ChunkError as exc:
            errors.add(slot_path, str(exc))
            continue
        if name in seen:
            errors.add(slot_path, "duplicate slot name")
            continue
        seen.add(name)
        if not isinstance(value, str):
            errors.add(slot_path, "slot value must be a string")
            continue
        if value == WILDCARD:
            if not allow_wildcards:
                errors.add(slot_path, "wildcard not allowed here")
        elif value.startswith(WILDCARD):
            if not allow_refs:
                errors.add(slot_path, "binding reference not allowed here")
        else:
            try:
                validate_symbol(value, what="slot value")
            except ChunkError as exc:
                errors.add(slot_path, str(exc))
        pairs.append((name, value))
    return PatternDef(ctype, tuple(pairs))


def _parse_condition(obj, path: str, errors: _Collector) -> ConditionDef | None:
    if _expect(obj, dict, path, errors, "condition") is None:
        return None
    _check_keys(obj, ("buffer", "mm_tags", "pattern", "negated"), path, errors)
    buffer = obj.get("buffer")
    mm_tags = obj.get("mm_tags")
    if (buffer is None) == (mm_tags is None):
        errors.add(path, "condition needs exactly one of buffer / mm_tags")
        return None
    tags = None
    if mm_tags is not None:
        if _expect(mm_tags, list, f"{path}.mm_tags", errors, "mm_tags") is None:
            return None
        tags = []
        for i, tag in enumerate(mm_tags):
            try:
                tags.append(validate_symbol(tag, what="tag"))
            except ChunkError as exc:
                errors.add(f"{path}.mm_tags[{i}]", str(exc))
        tags = tuple(tags)
    pattern = None
    if obj.get("pattern") is not None:
        pattern = _parse_pattern(obj["pattern"], f"{path}.pattern", errors,
                                 allow_wildcards=True, allow_refs=False)
    negated = bool(obj.get("negated", False))
    return ConditionDef(pattern=pattern, buffer=buffer, mm_tags=tags, negated=negated)


def _parse_action(obj, path: str, errors: _Collector) -> ActionDef | None:
    if _expect(obj, dict, path, errors, "action") is None:
        return None
    _check_keys(obj, ("kind", "target", "chunk", "query", "amount", "urgent"), path, errors)
    kind = obj.get("kind")
    if kind not in ("write-buffer", "clear-buffer", "post-query", "emit-reward", "halt"):
        errors.add(f"{path}.kind", f"unknown action kind {kind!r}")
        return None
    target = obj.get("target")
    chunk = query = None
    amount = 0.0
    urgent = bool(obj.get("urgent", False))
    if kind in ("write-buffer", "clear-buffer", "post-query"):
        if not isinstance(target, str):
            errors.add(f"{path}.target", "action needs a buffer target")
    if kind == "write-buffer":
        if obj.get("chunk") is None:
            errors.add(f"{path}.chunk", "write-buffer needs a chunk template")
        else:
            chunk = _parse_pattern(obj["chunk"], f"{path}.chunk", errors,
                                   allow_wildcards=False, allow_refs=True)
    if kind == "post-query":
        if obj.get("query") is None:
            errors.add(f"{path}.query", "post-query needs a query template")
        else:
            query = _parse_pattern(obj["query"], f"{path}.query", errors,
                                   allow_wildcards=True, allow_refs=True)
    if kind == "emit-reward":
        amount = obj.get("amount")
        if not isinstance(amount, (int, float)) or not math.isfinite(amount):
            errors.add(f"{path}.amount", "emit-reward needs a finite amount")
            amount = 0.0
        amount = float(amount)
    return ActionDef(kind=kind, target=target, chunk=chunk, query=query,
                     amount=amount, urgent=urgent)


def _parse_production(obj, path: str, errors: _Collector) -> ProductionDef | None:
    if _expect(obj, dict, path, errors, "production") is None:
        return None
    _check_keys(obj, ("name", "conditions", "actions", "utility", "permanent"),
                path, errors)
    name = obj.get("name")
    if not isinstance(name, str) or not name:
        errors.add(f"{path}.name", "production needs a name")
        return None
    conditions = []
    for i, cond in enumerate(obj.get("conditions", [])):
        parsed = _parse_condition(cond, f"{path}.conditions[{i}]", errors)
        if parsed is not None:
            conditions.append(parsed)
    actions = []
    for i, action in enumerate(obj.get("actions", [])):
        parsed = _parse_action(action, f"{path}.actions[{i}]", errors)
        if parsed is not None:
            actions.append(parsed)
    utility = obj.get("utility", 0.0)
    if not isinstance(utility, (int, float)) or not math.isfinite(utility):
        errors.add(f"{path}.utility", "utility must be finite")
        utility = 0.0
    return ProductionDef(name=name, conditions=tuple(conditions),
                         actions=tuple(actions), utility=float(utility),
                         permanent=bool(obj.get("permanent", True)))


def _parse_predictor(obj, path: str, errors: _Collector) -> PredictorDef | None:
    if _expect(obj, dict, path, errors, "predictor") is None:
        return None
    _check_keys(obj, ("name", "kind", "tag", "rate", "seed", "order", "corpus",
                      "pairs", "emit_isa", "emit_slot", "command", "host", "port"),
                path, errors)
    name = obj.get("name")
    kind = obj.get("kind")
    tag = obj.get("tag")
    if not isinstance(name, str) or not name:
        errors.add(f"{path}.name", "predictor needs a name")
        return None
    if kind not in PREDICTOR_KINDS:
        errors.add(f"{path}.kind", f"kind must be one of {PREDICTOR_KINDS}")
        return None
    try:
        tag = validate_symbol(tag, what="origin tag")
    except ChunkError as exc:
        errors.add(f"{path}.tag", str(exc))
        return None
    rate = obj.get("rate", 1)
    if not isinstance(rate, int) or rate < 0:
        errors.add(f"{path}.rate", "rate must be a non-negative integer")
        rate = 1
    seed = obj.get("seed", 0)
    order = obj.get("order", 2)
    if not isinstance(order, int) or order < 1:
        errors.add(f"{path}.order", "order must be a positive integer")
        order = 2
    corpus = []
    for i, seq in enumerate(obj.get("corpus", [])):
        if not isinstance(seq, list):
            errors.add(f"{path}.corpus[{i}]", "corpus entries are symbol lists")
            continue
        row = []
        for j, sym in enumerate(seq):
            try:
                row.append(validate_symbol(sym, what="corpus symbol"))
            except ChunkError as exc:
                errors.add(f"{path}.corpus[{i}][{j}]", str(exc))
        corpus.append(tuple(row))
    pairs = []
    for i, pair in enumerate(obj.get("pairs", [])):
        if (not isinstance(pair, list) or len(pair) not in (2, 3)
                or not all(isinstance(x, str) for x in pair[:2])):
            errors.add(f"{path}.pairs[{i}]", "pairs are [a, b] or [a, b, weight]")
            continue
        try:
            validate_symbol(pair[0], what="pair symbol")
            validate_symbol(pair[1], what="pair symbol")
        except ChunkError as exc:
            errors.add(f"{path}.pairs[{i}]", str(exc))
            continue
        if len(pair) == 3 and (not isinstance(pair[2], int) or pair[2] < 1):
            errors.add(f"{path}.pairs[{i}]", "pair weight must be a positive integer")
            continue
        pairs.append(tuple(pair))
    command = obj.get("command")
    if command is not None and (not isinstance(command, list)
                                or not all(isinstance(x, str) for x in command)):
        errors.add(f"{path}.command", "command must be a list of strings")
        command = None
    host = obj.get("host")
    port = obj.get("port")
    if kind == "ngram" and not corpus:
        errors.add(f"{path}.corpus", "ngram predictor needs a corpus")
    if kind == "associative" and not pairs:
        errors.add(f"{path}.pairs", "associative predictor needs pairs")
    if kind == "external":
        if command is None and (host is None or port is None):
            errors.add(path, "external predictor needs command or host+port")
    for key, value in (("emit_isa", obj.get("emit_isa")), ("emit_slot", obj.get("emit_slot"))):
        if value is not None:
            try:
                validate_symbol(value, what=key)
            except ChunkError as exc:
                errors.add(f"{path}.{key}", str(exc))
    return PredictorDef(
        name=name, kind=kind, tag=tag, rate=rate, seed=seed, order=order,
        corpus=tuple(corpus), pairs=tuple(pairs),
        emit_isa=obj.get("emit_isa", "word"), emit_slot=obj.get("emit_slot", "value"),
        command=tuple(command) if command is not None else None,
        host=host, port=port)


def parse_model(document: dict) -> ModelDefinition:
    """Build a :class:`ModelDefinition` from a JSON document and validate it.

    Raises :class:`ModelValidationError` listing every violation found.
    """
    errors = _Collector()
    if not isinstance(document, dict):
        errors.add("", "model document must be a JSON object")
        errors.raise_if_any()
    _check_keys(document, ("name", "codebook", "wm_capacity", "cycle_length_ms",
                           "buffers", "shadow_systems", "central_productions",
                           "predictors", "middle_memory", "learning", "rewards",
                           "initial_wm", "initial_mm"), "", errors)
    name = document.get("name")
    if not isinstance(name, str) or not name:
        errors.add("name", "model needs a non-empty name")
        name = "unnamed"

    cb = document.get("codebook", {})
    if not isinstance(cb, dict):
        errors.add("codebook", "codebook must be an object")
        cb = {}
    _check_keys(cb, ("dimension", "seed", "cleanup_threshold"), "codebook", errors)
    codebook = CodebookConfig(
        dimension=cb.get("dimension", 1024),
        seed=cb.get("seed", 0),
        cleanup_threshold=cb.get("cleanup_threshold", 0.2))
    if (not isinstance(codebook.dimension, int) or codebook.dimension < 2
            or codebook.dimension % 2 != 0):
        errors.add("codebook.dimension", "dimension must be a positive even integer")
    if not isinstance(codebook.seed, int) or codebook.seed < 0:
        errors.add("codebook.seed", "seed must be a non-negative integer")

    wm_capacity = document.get("wm_capacity", 8)
    if not isinstance(wm_capacity, int) or wm_capacity < 1:
        errors.add("wm_capacity", "capacity must be a positive integer")
        wm_capacity = 8
    cycle_length_ms = document.get("cycle_length_ms", 50)
    if not isinstance(cycle_length_ms, int) or cycle_length_ms < 1:
        errors.add("cycle_length_ms", "cycle length must be a positive integer (ms)")
        cycle_length_ms = 50

    buffers = []
    for i, obj in enumerate(document.get("buffers", [])):
        path = f"buffers[{i}]"
        if _expect(obj, dict, path, errors, "buffer") is None:
            continue
        _check_keys(obj, ("name", "owner"), path, errors)
        bname = obj.get("name")
        try:
            bname = validate_symbol(bname, what="buffer name")
        except ChunkError as exc:
            errors.add(f"{path}.name", str(exc))
            continue
        buffers.append(BufferDef(name=bname, owner=obj.get("owner", CENTRAL)))

    systems = []
    for i, obj in enumerate(document.get("shadow_systems", [])):
        path = f"shadow_systems[{i}]"
        if _expect(obj, dict, path, errors, "shadow system") is None:
            continue
        _check_keys(obj, ("name", "buffer", "subscriptions", "productions",
                          "steps_per_cycle"), path, errors)
        sname = obj.get("name")
        try:
            sname = validate_symbol(sname, what="system name")
        except ChunkError as exc:
            errors.add(f"{path}.name", str(exc))
            continue
        subs = []
        for j, tag in enumerate(obj.get("subscriptions", [])):
            try:
                subs.append(validate_symbol(tag, what="subscription tag"))
            except ChunkError as exc:
                errors.add(f"{path}.subscriptions[{j}]", str(exc))
        productions = []
        for j, prod in enumerate(obj.get("productions", [])):
            parsed = _parse_production(prod, f"{path}.productions[{j}]", errors)
            if parsed is not None:
                productions.append(parsed)
        steps = obj.get("steps_per_cycle", 1)
        if not isinstance(steps, int) or steps < 1:
            errors.add(f"{path}.steps_per_cycle", "must be a positive integer")
            steps = 1
        systems.append(ShadowSystemDef(
            name=sname, buffer=obj.get("buffer"), subscriptions=tuple(subs),
            productions=tuple(productions), steps_per_cycle=steps))

    central = []
    for i, prod in enumerate(document.get("central_productions", [])):
        parsed = _parse_production(prod, f"central_productions[{i}]", errors)
        if parsed is not None:
            central.append(parsed)

    predictors = []
    for i, obj in enumerate(document.get("predictors", [])):
        parsed = _parse_predictor(obj, f"predictors[{i}]", errors)
        if parsed is not None:
            predictors.append(parsed)

    mmc = document.get("middle_memory", {})
    if not isinstance(mmc, dict):
        errors.add("middle_memory", "middle_memory must be an object")
        mmc = {}
    _check_keys(mmc, ("decay", "spread_weight", "retrieval_threshold",
                      "forget_threshold", "noise", "formation_threshold"),
                "middle_memory", errors)
    middle_memory = MiddleMemoryConfig(
        decay=float(mmc.get("decay", 0.5)),
        spread_weight=float(mmc.get("spread_weight", 1.0)),
        retrieval_threshold=float(mmc.get("retrieval_threshold", -1.0)),
        forget_threshold=float(mmc.get("forget_threshold", -2.5)),
        noise=float(mmc.get("noise", 0.0)),
        formation_threshold=float(mmc.get("formation_threshold", 2.0)))
    if middle_memory.forget_threshold > middle_memory.retrieval_threshold:
        errors.add("middle_memory.forget_threshold",
                   "forgetting threshold must not exceed retrieval threshold")
    if middle_memory.decay <= 0:
        errors.add("middle_memory.decay", "decay must be positive")
    if middle_memory.noise < 0:
        errors.add("middle_memory.noise", "noise must be non-negative")

    lc = document.get("learning", {})
    if not isinstance(lc, dict):
        errors.add("learning", "learning must be an object")
        lc = {}
    _check_keys(lc, ("rate", "time_cost", "provisional_ttl_s"), "learning", errors)
    learning = LearningConfig(
        rate=float(lc.get("rate", 0.2)),
        time_cost=float(lc.get("time_cost", 0.0)),
        provisional_ttl_s=float(lc.get("provisional_ttl_s", 60.0)))
    if not 0.0 < learning.rate <= 1.0:
        errors.add("learning.rate", "learning rate must be in (0, 1]")
    if learning.time_cost < 0:
        errors.add("learning.time_cost", "time cost must be non-negative")
    if learning.provisional_ttl_s <= 0:
        errors.add("learning.provisional_ttl_s", "ttl must be positive")

    rewards = []
    for i, obj in enumerate(document.get("rewards", [])):
        path = f"rewards[{i}]"
        if _expect(obj, dict, path, errors, "reward") is None:
            continue
        _check_keys(obj, ("cycle", "amount"), path, errors)
        cycle = obj.get("cycle")
        amount = obj.get("amount")
        if not isinstance(cycle, int) or cycle < 0:
            errors.add(f"{path}.cycle", "reward cycle must be a non-negative integer")
            continue
        if not isinstance(amount, (int, float)) or not math.isfinite(amount):
            errors.add(f"{path}.amount", "reward amount must be finite")
            continue
        rewards.append(RewardDef(cycle=cycle, amount=float(amount)))

    initial_wm = []
    for i, obj in enumerate(document.get("initial_wm", [])):
        path = f"initial_wm[{i}]"
        if _expect(obj, dict, path, errors, "initial wm item") is None:
            continue
        _check_keys(obj, ("buffer", "chunk", "query"), path, errors)
        chunk = query = None
        if (obj.get("chunk") is None) == (obj.get("query") is None):
            errors.add(path, "initial wm item needs exactly one of chunk / query")
            continue
        if obj.get("chunk") is not None:
            chunk = _parse_pattern(obj["chunk"], f"{path}.chunk", errors,
                                   allow_wildcards=False, allow_refs=False)
        else:
            query = _parse_pattern(obj["query"], f"{path}.query", errors,
                                   allow_wildcards=True, allow_refs=False)
        initial_wm.append(InitialWMDef(buffer=obj.get("buffer"), chunk=chunk, query=query))

    initial_mm = []
    for i, obj in enumerate(document.get("initial_mm", [])):
        path = f"initial_mm[{i}]"
        if _expect(obj, dict, path, errors, "initial mm item") is None:
            continue
        _check_keys(obj, ("tag", "chunk", "presentations", "links"), path, errors)
        try:
            tag = validate_symbol(obj.get("tag"), what="origin tag")
        except ChunkError as exc:
            errors.add(f"{path}.tag", str(exc))
            continue
        chunk = _parse_pattern(obj.get("chunk"), f"{path}.chunk", errors,
                               allow_wildcards=False, allow_refs=False)
        if chunk is None:
            continue
        presentations = obj.get("presentations", [0.0])
        if (not isinstance(presentations, list) or not presentations
                or not all(isinstance(t, (int, float)) for t in presentations)):
            errors.add(f"{path}.presentations", "presentations must be a non-empty number list")
            presentations = [0.0]
        presentations = [float(t) for t in presentations]
        if presentations != sorted(presentations):
            errors.add(f"{path}.presentations", "presentations must be sorted ascending")
        if presentations and presentations[-1] > 0.0:
            errors.add(f"{path}.presentations", "initial presentations must be at or before time 0")
        links = obj.get("links", [])
        if not isinstance(links, list) or not all(isinstance(x, int) for x in links):
            errors.add(f"{path}.links", "links must be a list of item indices")
            links = []
        initial_mm.append(InitialMMDef(tag=tag, chunk=chunk,
                                       presentations=tuple(presentations),
                                       links=tuple(links)))

    model = ModelDefinition(
        name=name, codebook=codebook, wm_capacity=wm_capacity,
        cycle_length_ms=cycle_length_ms, buffers=tuple(buffers),
        shadow_systems=tuple(systems), central_productions=tuple(central),
        predictors=tuple(predictors), middle_memory=middle_memory,
        learning=learning, rewards=tuple(rewards),
        initial_wm=tuple(initial_wm), initial_mm=tuple(initial_mm))
    _validate_semantics(model, errors)
    errors.raise_if_any()
    return model


def _bindable_keys(production: ProductionDef) -> set[str]:
    keys: set[str] = set()
    for cond in production.conditions:
        if cond.negated or cond.pattern is None:
            continue
        if cond.pattern.ctype == WILDCARD:
            keys.add(TYPE_SLOT)
        for slot, value in cond.pattern.slots:
            if value == WILDCARD:
                keys.add(slot)
    return keys


def _check_production_semantics(production: ProductionDef, path: str, owner: str,
                                model: ModelDefinition, errors: _Collector) -> None:
    buffer_names = {b.name for b in model.buffers}
    system = model.system(owner) if owner != CENTRAL else None
    for i, cond in enumerate(production.conditions):
        cpath = f"{path}.conditions[{i}]"
        if cond.buffer is not None and cond.buffer not in buffer_names:
            errors.add(f"{cpath}.buffer", f"unknown buffer {cond.buffer!r}")
        if cond.mm_tags is not None:
            if owner == CENTRAL:
                errors.add(cpath, "central productions match working memory only")
            elif system is not None:
                extra = set(cond.mm_tags) - set(system.subscriptions)
                if extra:
                    errors.add(f"{cpath}.mm_tags",
                               f"tags {sorted(extra)} outside {owner!r} subscriptions")
    bindable = _bindable_keys(production)
    for i, action in enumerate(production.actions):
        apath = f"{path}.actions[{i}]"
        if owner != CENTRAL and action.kind in ("emit-reward", "halt"):
            errors.add(f"{apath}.kind",
                       f"{action.kind} is reserved for central productions")
        if action.target is not None:
            if action.target not in buffer_names:
                errors.add(f"{apath}.target", f"unknown buffer {action.target!r}")
            elif owner != CENTRAL and system is not None and action.target != system.buffer:
                errors.add(f"{apath}.target",
                           f"shadow system {owner!r} may write only its own buffer "
                           f"{system.buffer!r}, not {action.target!r}")
        for template in (action.chunk, action.query):
            if template is None:
                continue
            refs = []
            if template.ctype.startswith(WILDCARD) and template.ctype != WILDCARD:
                refs.append(template.ctype[1:])
            for _, value in template.slots:
                if value.startswith(WILDCARD) and value != WILDCARD:
                    refs.append(value[1:])
            for ref in refs:
                if ref not in bindable:
                    errors.add(apath, f"binding reference ?{ref} is not bound by "
                                      "any non-negated condition")
        if action.urgent and action.kind != "write-buffer":
            errors.add(apath, "only write-buffer actions can be urgent")


def _validate_semantics(model: ModelDefinition, errors: _Collector) -> None:
    if len(model.buffers) > model.wm_capacity:
        errors.add("buffers", f"{len(model.buffers)} buffers exceed capacity "
                              f"{model.wm_capacity}")
    seen_buffers = set()
    for i, buffer in enumerate(model.buffers):
        if buffer.name in seen_buffers:
            errors.add(f"buffers[{i}].name", f"duplicate buffer {buffer.name!r}")
        seen_buffers.add(buffer.name)
        if buffer.owner != CENTRAL and model.system(buffer.owner) is None:
            errors.add(f"buffers[{i}].owner", f"unknown owner {buffer.owner!r}")

    seen_systems = set()
    owned = {}
    for i, system in enumerate(model.shadow_systems):
        path = f"shadow_systems[{i}]"
        if system.name == CENTRAL:
            errors.add(f"{path}.name", "'central' is reserved")
        if system.name in seen_systems:
            errors.add(f"{path}.name", f"duplicate system {system.name!r}")
        seen_systems.add(system.name)
        if not system.subscriptions:
            errors.add(f"{path}.subscriptions", "subscriptions must be non-empty")
        declared = [b for b in model.buffers if b.owner == system.name]
        if len(declared) != 1 or system.buffer not in {b.name for b in declared}:
            errors.add(f"{path}.buffer",
                       f"system {system.name!r} must own exactly one declared buffer "
                       f"named {system.buffer!r}")

    seen_productions = set()
    for i, production in enumerate(model.central_productions):
        path = f"central_productions[{i}]"
        if production.name in seen_productions:
            errors.add(f"{path}.name", f"duplicate production {production.name!r}")
        seen_productions.add(production.name)
        _check_production_semantics(production, path, CENTRAL, model, errors)
    for i, system in enumerate(model.shadow_systems):
        for j, production in enumerate(system.productions):
            path = f"shadow_systems[{i}].productions[{j}]"
            if production.name in seen_productions:
                errors.add(f"{path}.name", f"duplicate production {production.name!r}")
            seen_productions.add(production.name)
            _check_production_semantics(production, path, system.name, model, errors)

    seen_tags = set()
    seen_names = set()
    for i, predictor in enumerate(model.predictors):
        path = f"predictors[{i}]"
        if predictor.name in seen_names:
            errors.add(f"{path}.name", f"duplicate predictor {predictor.name!r}")
        seen_names.add(predictor.name)
        if predictor.tag in seen_tags:
            errors.add(f"{path}.tag", f"duplicate origin tag {predictor.tag!r}")
        seen_tags.add(predictor.tag)

    buffer_names = {b.name for b in model.buffers}
    seen_initial = set()
    for i, item in enumerate(model.initial_wm):
        path = f"initial_wm[{i}]"
        if item.buffer not in buffer_names:
            errors.add(f"{path}.buffer", f"unknown buffer {item.buffer!r}")
        if item.buffer in seen_initial:
            errors.add(f"{path}.buffer", f"buffer {item.buffer!r} initialized twice")
        seen_initial.add(item.buffer)
    seen_entries = set()
    for i, item in enumerate(model.initial_mm):
        identity = (item.tag, item.chunk)
        if identity in seen_entries:
            errors.add(f"initial_mm[{i}]", "duplicate (tag, content) entry")
        seen_entries.add(identity)
        for j, link in enumerate(item.links):
            if link == i:
                errors.add(f"initial_mm[{i}].links[{j}]", "self-links are not allowed")
            elif not 0 <= link < len(model.initial_mm):
                errors.add(f"initial_mm[{i}].links[{j}]", f"no initial item {link}")


def validate_for_mode(model: ModelDefinition, mode: str) -> None:
    """Mode-dependent checks run just before execution."""
    errors = _Collector()
    if mode not in ("mm", "pipeline"):
        errors.add("mode", f"mode must be 'mm' or 'pipeline', got {mode!r}")
    if mode == "pipeline":
        subscribed = set()
        for system in model.shadow_systems:
            subscribed.update(system.subscriptions)
        for i, predictor in enumerate(model.predictors):
            if predictor.tag not in subscribed:
                errors.add(f"predictors[{i}].tag",
                           f"pipeline mode routes by tag; no shadow system "
                           f"subscribes to {predictor.tag!r}")
    errors.raise_if_any()


# --- canonical serialization -------------------------------------------------

def _pattern_to_dict(pattern: PatternDef) -> dict:
    return {"isa": pattern.ctype, "slots": dict(pattern.slots)}


def _condition_to_dict(cond: ConditionDef) -> dict:
    out: dict = {}
    if cond.buffer is not None:
        out["buffer"] = cond.buffer
    else:
        out["mm_tags"] = list(cond.mm_tags)
    out["pattern"] = None if cond.pattern is None else _pattern_to_dict(cond.pattern)
    out["negated"] = cond.negated
    return out


def _action_to_dict(action: ActionDef) -> dict:
    out: dict = {"kind": action.kind}
    if action.target is not None:
        out["target"] = action.target
    if action.chunk is not None:
        out["chunk"] = _pattern_to_dict(action.chunk)
    if action.query is not None:
        out["query"] = _pattern_to_dict(action.query)
    if action.kind == "emit-reward":
        out["amount"] = action.amount
    if action.kind == "write-buffer":
        out["urgent"] = action.urgent
    return out


def _production_to_dict(production: ProductionDef) -> dict:
    return {"name": production.name,
            "conditions": [_condition_to_dict(c) for c in production.conditions],
            "actions": [_action_to_dict(a) for a in production.actions],
            "utility": production.utility,
            "permanent": production.permanent}


def model_to_dict(model: ModelDefinition) -> dict:
    """Canonical JSON document for a model, all defaults explicit."""
    out: dict = {
        "name": model.name,
        "codebook": {"dimension": model.codebook.dimension,
                     "seed": model.codebook.seed,
                     "cleanup_threshold": model.codebook.cleanup_threshold},
        "wm_capacity": model.wm_capacity,
        "cycle_length_ms": model.cycle_length_ms,
        "buffers": [{"name": b.name, "owner": b.owner} for b in model.buffers],
        "shadow_systems": [
            {"name": s.name, "buffer": s.buffer,
             "subscriptions": list(s.subscriptions),
             "productions": [_production_to_dict(p) for p in s.productions],
             "steps_per_cycle": s.steps_per_cycle}
            for s in model.shadow_systems],
        "central_productions": [_production_to_dict(p)
                                for p in model.central_productions],
        "predictors": [],
        "middle_memory": {
            "decay": model.middle_memory.decay,
            "spread_weight": model.middle_memory.spread_weight,
            "retrieval_threshold": model.middle_memory.retrieval_threshold,
            "forget_threshold": model.middle_memory.forget_threshold,
            "noise": model.middle_memory.noise,
            "formation_threshold": model.middle_memory.formation_threshold},
        "learning": {"rate": model.learning.rate,
                     "time_cost": model.learning.time_cost,
                     "provisional_ttl_s": model.learning.provisional_ttl_s},
        "rewards": [{"cycle": r.cycle, "amount": r.amount} for r in model.rewards],
        "initial_wm": [],
        "initial_mm": [],
    }
    for predictor in model.predictors:
        entry: dict = {"name": predictor.name, "kind": predictor.kind,
                       "tag": predictor.tag, "rate": predictor.rate,
                       "seed": predictor.seed}
        if predictor.kind == "ngram":
            entry["order"] = predictor.order
            entry["corpus"] = [list(seq) for seq in predictor.corpus]
            entry["emit_isa"] = predictor.emit_isa
            entry["emit_slot"] = predictor.emit_slot
        elif predictor.kind == "associative":
            entry["pairs"] = [list(pair) for pair in predictor.pairs]
            entry["emit_isa"] = predictor.emit_isa
            entry["emit_slot"] = predictor.emit_slot
        else:
            if predictor.command is not None:
                entry["command"] = list(predictor.command)
            if predictor.host is not None:
                entry["host"] = predictor.host
                entry["port"] = predictor.port
        out["predictors"].append(entry)
    for item in model.initial_wm:
        entry = {"buffer": item.buffer}
        if item.chunk is not None:
            entry["chunk"] = _pattern_to_dict(item.chunk)
        else:
            entry["query"] = _pattern_to_dict(item.query)
        out["initial_wm"].append(entry)
    for item in model.initial_mm:
        out["initial_mm"].append({
            "tag": item.tag, "chunk": _pattern_to_dict(item.chunk),
            "presentations": list(item.presentations),
            "links": list(item.links)})
    return out


def load_model(path) -> ModelDefinition:
    """Load, default-fill, and validate a model file."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelValidationError([("", f"not valid JSON: {exc}")]) from None
    return parse_model(document)


def write_model(model: ModelDefinition, path) -> None:
    Path(path).write_text(dumps_model(model), encoding="utf-8")


def dumps_model(model: ModelDefinition) -> str:
    return json.dumps(model_to_dict(model), ensure_ascii=False, indent=2) + "\n"
