"""The cycle scheduler: clock, phase order, event logging, run entry point.

Every cycle executes a fixed phase order: (1) drain queued predictions into
middle memory (or, in pipeline mode, straight into module buffers and
their unbounded inflow lists); (2) sweep/forget; (3) shadow systems decide,
read-only, against the frozen cycle-start state; (4) the central engine
matches, resolves, and fires; then shadow writes commit, (5) consumption is
recorded, (6) rewards update utilities and propagate credit, (7) retrieval
productions form and stale provisional ones are pruned, (8) the context
vector broadcasts to every predictor, and (9) the clock advances.

Shadow decisions read the cycle-start state and commit after central
matching, so an urgent shadow write at cycle n reaches the central conflict
set at exactly cycle n+1, and the order in which systems are stepped is
unobservable.  Event timestamps use the cycle-start time; activation
evaluations use the cycle-end time, so a presentation deposited this cycle
already has a positive lag.  Time is integer milliseconds internally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chunks import Chunk, ChunkFactory, Query
from .codec import Codebook
from .memory import Buffer, MiddleMemory, WorkingMemory, context_symbols, context_vector
from .model import CENTRAL, ModelDefinition, PatternDef, validate_for_mode
from .predictors import (
    AssociativePredictor,
    ExternalPredictor,
    IngestionQueue,
    NgramPredictor,
    Prediction,
    decode_prediction,
    encode_context,
)
from .productions import (
    Action,
    Condition,
    MatchView,
    Production,
    Template,
    UtilityLearner,
    fire,
    form_retrieval_production,
    match_all,
    prune_provisional,
    resolve,
)
from .shadows import (
    ContributionLedger,
    ShadowDecision,
    ShadowSystem,
    answer_chunk,
    decide_shadow,
    failure_chunk,
)
from .trace import Trace, chunk_data, query_data

CONTEXT_SYMBOL_COUNT = 5


class _OverlayWM:
    """Working-memory view with one buffer's content privately overridden.

    Lets a multi-step shadow system see its own intra-cycle writes without
    exposing them to anyone else.
    """

    def __init__(self, base: WorkingMemory, override):
        self._base = base
        self._override = override

    @property
    def buffers(self):
        merged = dict(self._base.buffers)
        merged[self._override.name] = self._override
        return merged

    def buffer(self, name: str):
        if name == self._override.name:
            return self._override
        return self._base.buffer(name)

    def non_empty(self):
        return [b for b in self.buffers.values() if b.content is not None]


@dataclass
class _StagedWrite:
    system: ShadowSystem
    content: Chunk | Query | None
    urgent: bool
    from_production: str | None  # fired production name, for the ledger


def _to_query(pattern: PatternDef | None, factory: ChunkFactory) -> Query | None:
    if pattern is None:
        return None
    return factory.make_query(pattern.ctype, pattern.slots)


def _to_template(pattern: PatternDef | None) -> Template | None:
    if pattern is None:
        return None
    return Template(pattern.ctype, pattern.slots)


class Session:
    """One deterministic run of a model: step cycles, accumulate the trace."""

    def __init__(self, model: ModelDefinition, mode: str = "mm", seed: int = 0,
                 shadow_step_order: list[int] | None = None):
        validate_for_mode(model, mode)
        self.model = model
        self.mode = mode
        self.seed = seed
        self.cycle = 0
        self.halted = False
        self._halt_reason: str | None = None
        self.factory = ChunkFactory()
        self.trace = Trace(seed=seed, mode=mode,
                           cycle_length_ms=model.cycle_length_ms)

        mix = np.random.SeedSequence([seed, model.codebook.seed]).generate_state(2)
        self.book = Codebook(model.codebook.dimension, seed=int(mix[0]),
                             cleanup_threshold=model.codebook.cleanup_threshold)
        self.wm = WorkingMemory(capacity=model.wm_capacity)
        for buffer in model.buffers:
            self.wm.add_buffer(buffer.name, buffer.owner)
        self.mm = MiddleMemory(
            decay=model.middle_memory.decay,
            spread_weight=model.middle_memory.spread_weight,
            retrieval_threshold=model.middle_memory.retrieval_threshold,
            forget_threshold=model.middle_memory.forget_threshold,
            noise=model.middle_memory.noise, noise_seed=int(mix[1]))

        self.central_productions = [
            self._build_production(p, CENTRAL) for p in model.central_productions]
        self.systems: list[ShadowSystem] = []
        for sdef in model.shadow_systems:
            system = ShadowSystem(
                name=sdef.name, buffer=sdef.buffer,
                subscriptions=sdef.subscriptions,
                productions=[self._build_production(p, sdef.name)
                             for p in sdef.productions],
                steps_per_cycle=sdef.steps_per_cycle)
            self.systems.append(system)
        if shadow_step_order is not None:
            if sorted(shadow_step_order) != list(range(len(self.systems))):
                raise ValueError("shadow_step_order must permute the system indices")
        self.shadow_step_order = shadow_step_order

        self.learner = UtilityLearner(alpha=model.learning.rate,
                                      rho=model.learning.time_cost)
        self.ledger = ContributionLedger()
        self.queue = IngestionQueue()
        self.inflows: dict[str, list[Chunk]] = {s.buffer: [] for s in self.systems}
        self._pending_rewards: list[tuple[float, str]] = []
        self._scheduled: dict[int, list[float]] = {}
        for reward in model.rewards:
            self._scheduled.setdefault(reward.cycle, []).append(reward.amount)

        self.predictors = [self._build_predictor(p) for p in model.predictors]
        self._stall_warned: set[str] = set()
        for predictor in self.predictors:
            if isinstance(predictor, ExternalPredictor):
                predictor.start(self.queue.push_raw)

        self._install_initial_state()

    # -- construction ---------------------------------------------------

    def _build_production(self, pdef, owner: str) -> Production:
        conditions = tuple(
            Condition(pattern=_to_query(c.pattern, self.factory),
                      buffer=c.buffer, mm_tags=c.mm_tags, negated=c.negated)
            for c in pdef.conditions)
        actions = tuple(
            Action(kind=a.kind, target=a.target,
                   template=_to_template(a.chunk) or _to_template(a.query),
                   amount=a.amount, urgent=a.urgent)
            for a in pdef.actions)
        return Production(name=pdef.name, owner=owner, conditions=conditions,
                          actions=actions, utility=pdef.utility,
                          permanent=pdef.permanent)

    def _build_predictor(self, pdef):
        if pdef.kind == "ngram":
            return NgramPredictor(pdef.name, pdef.tag, pdef.corpus,
                                  order=pdef.order, rate=pdef.rate, seed=pdef.seed,
                                  emit_ctype=pdef.emit_isa, emit_slot=pdef.emit_slot)
        if pdef.kind == "associative":
            return AssociativePredictor(pdef.name, pdef.tag, pdef.pairs,
                                        rate=pdef.rate, seed=pdef.seed,
                                        emit_ctype=pdef.emit_isa,
                                        emit_slot=pdef.emit_slot)
        return ExternalPredictor(pdef.name, pdef.tag,
                                 command=list(pdef.command) if pdef.command else None,
                                 host=pdef.host, port=pdef.port,
                                 rate=pdef.rate, seed=pdef.seed)

    def _install_initial_state(self) -> None:
        for item in self.model.initial_wm:
            if item.chunk is not None:
                content = self.factory.make(item.chunk.ctype, item.chunk.slots)
                data = chunk_data(content)
            else:
                content = self.factory.make_query(item.query.ctype, item.query.slots)
                data = query_data(content)
            buf = self.wm.buffer(item.buffer)
            buf.content = content
            buf.urgent = False
            self.trace.append(0, "wm-write", {
                "writer": "initial", "buffer": item.buffer,
                "content": data, "urgent": False})
        entry_ids = []
        for item in self.model.initial_mm:
            chunk = self.factory.make(item.chunk.ctype, item.chunk.slots)
            entry_id = self.mm.seed_entry(item.tag, chunk=chunk,
                                          presentations=list(item.presentations))
            entry_ids.append(entry_id)
            self.trace.append(0, "deposit", {
                "entry": entry_id, "tag": item.tag, "new": True,
                "source": "initial", "salience": None,
                "content": chunk_data(chunk), "has_vector": False})
        for index, item in enumerate(self.model.initial_mm):
            for link in item.links:
                self.mm.link(entry_ids[index], entry_ids[link])

    # -- clock ------------------------------------------------------------

    @property
    def now_ms(self) -> int:
        return self.cycle * self.model.cycle_length_ms

    def _cycle_time(self, cycle: int) -> float:
        return cycle * self.model.cycle_length_ms / 1000.0

    # -- cycle -----------------------------------------------------------

    def step(self) -> None:
        """Execute one full cycle; raises if the session already halted."""
        if self.halted:
            raise RuntimeError("session has halted")
        n = self.cycle
        t_now = self._cycle_time(n)
        t_eval = self._cycle_time(n + 1)

        self._drain_predictions(n, t_now)
        self._sweep(n, t_eval)
        staged: list[_StagedWrite] = []
        if self.mode == "mm":
            staged = self._shadow_phase(n, t_now, t_eval)
        winner_sources = self._central_phase(n, t_now, t_eval)
        self._commit_staged(n, t_now, staged)
        self._reward_phase(n, t_now)
        if self.mode == "mm":
            self._formation_phase(n, t_now)
        self._broadcast_phase(n, t_eval)

        self.cycle += 1
        if self._halt_reason is not None:
            self.trace.append(n, "halt", {"reason": self._halt_reason})
            self.halted = True

    # phase 1
    def _drain_predictions(self, n: int, t_now: float) -> None:
        predictions, raw = self.queue.drain()
        for message in raw:
            try:
                decoded = decode_prediction(message.line, self.book.dimension)
            except ValueError as exc:
                self.trace.append(n, "error", {
                    "message": f"dropped malformed prediction: {exc}",
                    "predictor": message.predictor, "payload": message.line})
                continue
            predictions.append(_external_prediction(message, decoded))
        predictions.sort(key=lambda p: p.sort_key())
        for prediction in predictions:
            if self.mode == "mm":
                self._deposit_prediction(n, t_now, prediction)
            else:
                self._route_prediction(n, prediction)

    def _deposit_prediction(self, n: int, t_now: float, prediction) -> None:
        chunk = None
        if prediction.ctype is not None:
            chunk = self.factory.make(prediction.ctype, prediction.slots)
        entry_id, created = self.mm.deposit(
            t_now, prediction.tag, chunk=chunk, vector=prediction.vector,
            salience=prediction.salience)
        self.trace.append(n, "deposit", {
            "entry": entry_id, "tag": prediction.tag, "new": created,
            "source": f"predictor:{prediction.predictor}",
            "salience": prediction.salience,
            "content": chunk_data(chunk) if chunk is not None else None,
            "has_vector": prediction.vector is not None})

    def _route_prediction(self, n: int, prediction) -> None:
        target = None
        for system in self.systems:
            if prediction.tag in system.subscriptions:
                target = system
                break
        if target is None:  # validate_for_mode makes this unreachable
            self.trace.append(n, "error", {
                "message": f"no module subscribes to tag {prediction.tag!r}",
                "predictor": prediction.predictor, "payload": None})
            return
        if prediction.ctype is None:
            self.trace.append(n, "error", {
                "message": "vector-only prediction cannot be routed to a buffer",
                "predictor": prediction.predictor, "payload": None})
            return
        chunk = self.factory.make(prediction.ctype, prediction.slots)
        self.wm.write(target.name, target.buffer, chunk)
        self.inflows[target.buffer].append(chunk)
        self.trace.append(n, "wm-write", {
            "writer": target.name, "buffer": target.buffer,
            "content": chunk_data(chunk), "urgent": False, "route": "pipeline"})

    # phase 2
    def _sweep(self, n: int, t_eval: float) -> None:
        for entry, activation in self.mm.sweep(self.wm, t_eval):
            self.trace.append(n, "forget", {
                "entry": entry.id, "tag": entry.tag,
                "activation": activation})

    # phase 3
    def _shadow_phase(self, n: int, t_now: float, t_eval: float) -> list[_StagedWrite]:
        order = self.shadow_step_order or list(range(len(self.systems)))
        decisions: dict[int, list[ShadowDecision]] = {}
        for index in order:
            decisions[index] = self._decide_system(self.systems[index], t_eval)
        staged: list[_StagedWrite] = []
        for index in range(len(self.systems)):
            for decision in decisions[index]:
                self._emit_decision(n, t_now, decision, staged)
        return staged

    def _decide_system(self, system: ShadowSystem, t_eval: float) -> list[ShadowDecision]:
        decisions = []
        view_wm = self.wm
        scratch = ChunkFactory()
        for sub in range(system.steps_per_cycle):
            decision = decide_shadow(system, view_wm, self.mm, t_eval)
            if decision.kind == "idle":
                break
            decisions.append(decision)
            if decision.kind in ("answer", "miss"):
                break
            if sub + 1 < system.steps_per_cycle:
                content, urgent = _preview_write(decision, scratch)
                view_wm = _OverlayWM(self.wm, Buffer(
                    name=system.buffer, owner=system.name,
                    content=content, urgent=urgent))
        return decisions

    def _emit_decision(self, n: int, t_now: float, decision: ShadowDecision,
                       staged: list[_StagedWrite]) -> None:
        system = decision.system
        if decision.kind == "fire":
            production = decision.match.production
            effects = fire(production, decision.match.bindings, self.factory, t_now)
            self.trace.append(n, "shadow-fire", {
                "system": system.name, "production": production.name,
                "bindings": dict(decision.match.bindings)})
            content: Chunk | Query | None = None
            urgent = False
            wrote = False
            for effect in effects:
                if effect.kind == "write-buffer":
                    content, urgent, wrote = effect.content, effect.urgent, True
                elif effect.kind == "clear-buffer":
                    content, urgent, wrote = None, False, True
                elif effect.kind == "post-query":
                    content, urgent, wrote = effect.content, False, True
                if effect.kind in ("write-buffer", "clear-buffer", "post-query"):
                    data = _content_data(content)
                    self.trace.append(n, "wm-write", {
                        "writer": system.name, "buffer": system.buffer,
                        "content": data, "urgent": urgent})
                    if urgent:
                        self.trace.append(n, "interrupt", {
                            "system": system.name, "buffer": system.buffer,
                            "chunk": content.id})
            if wrote:
                self._stage(staged, system, content, urgent, production.name)
        elif decision.kind == "answer":
            chunk = answer_chunk(decision, self.factory)
            self.trace.append(n, "wm-write", {
                "writer": system.name, "buffer": system.buffer,
                "content": chunk_data(chunk), "urgent": False,
                "answers_query": decision.query.id,
                "entry": decision.answered_entry})
            self._stage(staged, system, chunk, False, None)
        elif decision.kind == "miss":
            chunk = failure_chunk(decision, self.factory)
            self.trace.append(n, "wm-write", {
                "writer": system.name, "buffer": system.buffer,
                "content": chunk_data(chunk), "urgent": False,
                "answers_query": decision.query.id, "entry": None})
            self._stage(staged, system, chunk, False, None)

    def _stage(self, staged: list[_StagedWrite], system: ShadowSystem,
               content, urgent: bool, production: str | None) -> None:
        for existing in staged:
            if existing.system is system:
                existing.content = content
                existing.urgent = urgent
                existing.from_production = production
                return
        staged.append(_StagedWrite(system, content, urgent, production))

    # phase 4
    def _central_phase(self, n: int, t_now: float, t_eval: float):
        view = MatchView(self.wm, None, t_eval,
                         inflows=self.inflows if self.mode == "pipeline" else None)
        conflict = match_all(self.central_productions, view)
        winner = resolve(conflict)
        conflict_names = [m.production.name for m in conflict]
        if winner is None:
            self.trace.append(n, "idle", {"candidates": view.candidates,
                                          "conflict": conflict_names})
            return []
        production = winner.production
        effects = fire(production, winner.bindings, self.factory, t_now)
        self.learner.record_fire(production, t_now)
        consumed = self._record_consumption(n, winner.sources)
        self.trace.append(n, "central-fire", {
            "production": production.name, "bindings": dict(winner.bindings),
            "candidates": view.candidates, "conflict": conflict_names,
            "matched": [{"buffer": b, "chunk": c} for b, c in winner.sources],
            "consumed": consumed})
        for effect in effects:
            if effect.kind in ("write-buffer", "post-query"):
                self.wm.write(CENTRAL, effect.target, effect.content,
                              urgent=effect.urgent)
                self.trace.append(n, "wm-write", {
                    "writer": CENTRAL, "buffer": effect.target,
                    "content": _content_data(effect.content),
                    "urgent": effect.urgent})
            elif effect.kind == "clear-buffer":
                self.wm.write(CENTRAL, effect.target, None)
                self.trace.append(n, "wm-write", {
                    "writer": CENTRAL, "buffer": effect.target,
                    "content": None, "urgent": False})
            elif effect.kind == "emit-reward":
                self._pending_rewards.append(
                    (effect.amount, f"production:{production.name}"))
            elif effect.kind == "halt":
                self._halt_reason = "halt-action"
        return winner.sources

    # phase 5 (called from the central phase so the fire event carries it)
    def _record_consumption(self, n: int, sources) -> list[dict]:
        consumed = []
        shadow_buffers = {s.buffer for s in self.systems}
        for buffer, chunk_id in sources:
            if buffer not in shadow_buffers:
                continue
            record = self.ledger.mark_consumed(chunk_id, n)
            if record is not None:
                consumed.append({"buffer": buffer, "chunk": chunk_id,
                                 "producer": record.production,
                                 "system": record.system})
        return consumed

    # phase 4b
    def _commit_staged(self, n: int, t_now: float,
                       staged: list[_StagedWrite]) -> None:
        for write in staged:
            self.wm.write(write.system.name, write.system.buffer,
                          write.content, urgent=write.urgent)
            if write.from_production is not None and isinstance(write.content, Chunk):
                self.ledger.note_write(write.from_production, write.system.name,
                                       write.content, n, t_now)

    # phase 6
    def _reward_phase(self, n: int, t_now: float) -> None:
        rewards = list(self._pending_rewards)
        self._pending_rewards.clear()
        for amount in self._scheduled.get(n, ()):
            rewards.append((amount, "schedule"))
        for amount, source in rewards:
            self.trace.append(n, "reward", {"amount": amount, "source": source})
            for update in self.learner.apply_reward(amount, t_now):
                self._log_utility_update(n, update)
            for record in self.ledger.take_consumed():
                production = self._find_production(record.system, record.production)
                if production is None:
                    continue
                update = self.learner.credit(production, amount, t_now,
                                             record.deposit_time)
                self._log_utility_update(n, update)

    def _log_utility_update(self, n: int, update) -> None:
        self.trace.append(n, "utility-update", {
            "production": update.production, "owner": update.owner,
            "old": update.old, "new": update.new,
            "effective_reward": update.effective_reward,
            "made_permanent": update.made_permanent})

    def _find_production(self, owner: str, name: str) -> Production | None:
        pool = self.central_productions if owner == CENTRAL else []
        for system in self.systems:
            if system.name == owner:
                pool = system.productions
                break
        for production in pool:
            if production.name == name:
                return production
        return None

    # phase 7
    def _formation_phase(self, n: int, t_now: float) -> None:
        threshold = self.model.middle_memory.formation_threshold
        ttl = self.model.learning.provisional_ttl_s
        for system in self.systems:
            for entry_id in sorted(self.mm.entries):
                entry = self.mm.entries[entry_id]
                if entry.tag not in system.subscriptions:
                    continue
                production = form_retrieval_production(
                    entry, entry.last_activation, system.name, system.buffer,
                    system.productions, t_now, threshold)
                if production is not None:
                    system.productions.append(production)
                    self.trace.append(n, "form", {
                        "production": production.name, "owner": system.name,
                        "entry": entry.id, "activation": entry.last_activation})
        for system in self.systems:
            kept, pruned = prune_provisional(system.productions, t_now, ttl)
            system.productions[:] = kept
            for production in pruned:
                self.trace.append(n, "prune", {
                    "production": production.name, "owner": system.name,
                    "age_s": t_now - production.created_at})
        kept, pruned = prune_provisional(self.central_productions, t_now, ttl)
        self.central_productions[:] = kept
        for production in pruned:
            self.trace.append(n, "prune", {
                "production": production.name, "owner": CENTRAL,
                "age_s": t_now - production.created_at})

    # phase 8
    def _broadcast_phase(self, n: int, t_eval: float) -> None:
        vector, is_zero = context_vector(self.wm, self.mm, self.book, t_eval)
        symbols = context_symbols(self.wm, self.mm, t_eval, k=CONTEXT_SYMBOL_COUNT)
        line = None
        for predictor in self.predictors:
            if isinstance(predictor, ExternalPredictor):
                if predictor.stalled:
                    self._warn_stalled(n, predictor)
                    continue
                if line is None:
                    line = encode_context(n, vector, symbols)
                if predictor.send_context(line, n):
                    self.trace.append(n, "delivery", {
                        "predictor": predictor.name, "zero_context": is_zero})
                else:
                    self._warn_stalled(n, predictor)
            else:
                for prediction in predictor.deliver(vector, symbols, n):
                    self.queue.push_prediction(prediction)
                self.trace.append(n, "delivery", {
                    "predictor": predictor.name, "zero_context": is_zero})

    def _warn_stalled(self, n: int, predictor) -> None:
        if predictor.name in self._stall_warned:
            return
        self._stall_warned.add(predictor.name)
        self.trace.append(n, "error", {
            "message": f"external predictor {predictor.name!r} stalled; continuing",
            "predictor": predictor.name, "payload": None})

    # -- lifecycle ---------------------------------------------------------

    def finish(self, reason: str = "cycles-exhausted") -> Trace:
        """Close externals and finalize the trace with a halt event."""
        for predictor in self.predictors:
            if isinstance(predictor, ExternalPredictor):
                predictor.close()
        if not self.halted:
            self.trace.append(self.cycle, "halt", {"reason": reason})
            self.halted = True
        return self.trace

    def conflict_snapshot(self) -> dict[str, list[str]]:
        """Current conflict sets per engine, computed without side effects."""
        t_eval = self._cycle_time(self.cycle + 1)
        view = MatchView(self.wm, None, t_eval,
                         inflows=self.inflows if self.mode == "pipeline" else None)
        out = {CENTRAL: [m.production.name
                         for m in match_all(self.central_productions, view)]}
        for system in self.systems:
            sview = MatchView(self.wm, self.mm, t_eval,
                              default_tags=system.subscriptions)
            out[system.name] = [m.production.name
                                for m in match_all(system.productions, sview)]
        return out


def _content_data(content) -> dict | None:
    if content is None:
        return None
    if isinstance(content, Chunk):
        return chunk_data(content)
    return query_data(content)


def _preview_write(decision: ShadowDecision, scratch: ChunkFactory):
    """Simulate a fire decision's final buffer content for overlay reads."""
    production = decision.match.production
    fired_at = list(production.fired_at)
    effects = fire(production, decision.match.bindings, scratch, 0.0)
    production.fired_at[:] = fired_at  # preview must not count as a firing
    content, urgent = None, False
    for effect in effects:
        if effect.kind == "write-buffer":
            content, urgent = effect.content, effect.urgent
        elif effect.kind == "clear-buffer":
            content, urgent = None, False
        elif effect.kind == "post-query":
            content, urgent = effect.content, False
    return content, urgent


def _external_prediction(message, decoded) -> Prediction:
    return Prediction(
        tag=decoded["tag"], predictor=message.predictor,
        produced_at_cycle=message.produced_at_cycle,
        emission_index=message.arrival_index,
        ctype=decoded.get("ctype"), slots=decoded.get("slots", ()),
        vector=decoded.get("vector"), salience=decoded["salience"])


def run(model: ModelDefinition, cycles: int, mode: str = "mm", seed: int = 0,
        shadow_step_order: list[int] | None = None) -> Trace:
    """Execute ``cycles`` cycles (or fewer on halt) and return the trace."""
    if cycles < 0:
        raise ValueError("cycle count must be non-negative")
    session = Session(model, mode=mode, seed=seed,
                      shadow_step_order=shadow_step_order)
    try:
        for _ in range(cycles):
            if session.halted:
                break
            session.step()
    finally:
        session.finish()
    return session.trace
