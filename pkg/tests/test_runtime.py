"""Cycle scheduler behavior: determinism, phases, staging, modes."""

import pytest

from mmarch.errors import ModelValidationError
from mmarch.model import parse_model
from mmarch.runtime import Session, run
from mmarch.trace import trace_to_bytes


def two_system_doc():
    """Two shadow systems fed by two predictors, one reactive centre."""
    return {
        "name": "two-systems",
        "codebook": {"dimension": 64, "seed": 3},
        "buffers": [
            {"name": "goal", "owner": "central"},
            {"name": "sight", "owner": "vision"},
            {"name": "sound", "owner": "audio"},
        ],
        "shadow_systems": [
            {"name": "vision", "buffer": "sight", "subscriptions": ["vision"],
             "productions": [
                {"name": "see",
                 "conditions": [{"mm_tags": ["vision"],
                                 "pattern": {"isa": "percept", "slots": {"value": "?"}}}],
                 "actions": [{"kind": "write-buffer", "target": "sight",
                              "chunk": {"isa": "percept", "slots": {"value": "?value"}}}]}]},
            {"name": "audio", "buffer": "sound", "subscriptions": ["audio"],
             "productions": [
                {"name": "hear",
                 "conditions": [{"mm_tags": ["audio"],
                                 "pattern": {"isa": "percept", "slots": {"value": "?"}}}],
                 "actions": [{"kind": "write-buffer", "target": "sound",
                              "chunk": {"isa": "percept", "slots": {"value": "?value"}},
                              "urgent": True}]}]},
        ],
        "central_productions": [
            {"name": "note",
             "conditions": [{"buffer": "sound",
                             "pattern": {"isa": "percept", "slots": {"value": "?"}}}],
             "actions": [{"kind": "write-buffer", "target": "goal",
                          "chunk": {"isa": "goal", "slots": {"heard": "?value"}}},
                         {"kind": "emit-reward", "amount": 4.0}]},
        ],
        "predictors": [
            {"name": "vision-net", "kind": "associative", "tag": "vision",
             "pairs": [["watch", "blip"]], "emit_isa": "percept", "emit_slot": "value"},
            {"name": "audio-net", "kind": "associative", "tag": "audio",
             "pairs": [["watch", "beep"]], "emit_isa": "percept", "emit_slot": "value"},
        ],
        "initial_wm": [
            {"buffer": "goal", "chunk": {"isa": "goal", "slots": {"state": "watch"}}},
        ],
    }


@pytest.fixture
def model():
    return parse_model(two_system_doc())


class TestDeterminism:
    def test_identical_runs_identical_bytes(self, model):
        a = run(model, 30, mode="mm", seed=5)
        b = run(model, 30, mode="mm", seed=5)
        assert trace_to_bytes(a) == trace_to_bytes(b)

    def test_step_equals_run(self, model):
        session = Session(model, mode="mm", seed=5)
        for _ in range(30):
            session.step()
        session.finish()
        assert trace_to_bytes(session.trace) == \
            trace_to_bytes(run(model, 30, mode="mm", seed=5))

    def test_shadow_step_order_is_unobservable(self, model):
        base = run(model, 30, mode="mm", seed=5)
        permuted = run(model, 30, mode="mm", seed=5, shadow_step_order=[1, 0])
        assert trace_to_bytes(base) == trace_to_bytes(permuted)

    def test_bad_permutation_rejected(self, model):
        with pytest.raises(ValueError):
            Session(model, shadow_step_order=[0, 0])

    def test_different_seed_changes_header_only_when_symbolic(self, model):
        a = run(model, 10, mode="mm", seed=1)
        b = run(model, 10, mode="mm", seed=2)
        assert a.seed != b.seed
        assert a.events == b.events  # reference predictors consume symbols


class TestPhases:
    def test_no_central_fire_precedes_cycle_deposits(self, model):
        trace = run(model, 40, mode="mm", seed=0)
        for cycle in range(40):
            events = [e for e in trace.events if e.cycle == cycle]
            kinds = [e.kind for e in events]
            if "central-fire" in kinds and "deposit" in kinds:
                assert kinds.index("deposit") < kinds.index("central-fire")

    def test_exactly_one_central_event_per_cycle(self, model):
        trace = run(model, 40, mode="mm", seed=0)
        for cycle in range(40):
            count = sum(1 for e in trace.events if e.cycle == cycle
                        and e.kind in ("central-fire", "idle"))
            assert count == 1

    def test_clock_is_integer_milliseconds(self, model):
        session = Session(model, mode="mm", seed=0)
        for expected in range(5):
            assert session.now_ms == expected * 50
            assert session.cycle == expected
            session.step()
        session.finish()

    def test_cycle_length_is_configurable(self):
        doc = two_system_doc()
        doc["cycle_length_ms"] = 100
        model = parse_model(doc)
        session = Session(model, mode="mm", seed=0)
        session.step()
        session.step()
        session.finish()
        assert session.trace.cycle_length_ms == 100
        assert session.now_ms == 200

    def test_shadow_write_lands_after_central_match(self, model):
        """An urgent shadow write at cycle n enters the central conflict set
        at cycle n+1, never at n."""
        trace = run(model, 30, mode="mm", seed=0)
        interrupts = [e.cycle for e in trace.by_kind("interrupt")]
        assert interrupts, "audio system never interrupted"
        first = interrupts[0]
        fire_cycles = [e.cycle for e in trace.by_kind("central-fire")]
        assert first + 1 in fire_cycles
        assert first not in fire_cycles

    def test_shadow_fire_per_system_per_cycle(self, model):
        trace = run(model, 30, mode="mm", seed=0)
        for cycle in range(30):
            per_system: dict = {}
            for event in trace.by_kind("shadow-fire"):
                if event.cycle == cycle:
                    name = event.data["system"]
                    per_system[name] = per_system.get(name, 0) + 1
            assert all(count == 1 for count in per_system.values())

    def test_two_systems_fire_into_distinct_buffers_same_cycle(self, model):
        trace = run(model, 30, mode="mm", seed=0)
        by_cycle: dict = {}
        for event in trace.by_kind("shadow-fire"):
            by_cycle.setdefault(event.cycle, []).append(event.data["system"])
        assert any(sorted(names) == ["audio", "vision"]
                   for names in by_cycle.values())


class TestPredictorIsolation:
    def test_predictions_reach_buffers_only_through_deposits(self, model):
        """In middle-memory mode a prediction's content may appear in a
        buffer only after a deposit carried it (no direct predictor path)."""
        trace = run(model, 30, mode="mm", seed=0)
        assert not any(e.data.get("route") == "pipeline"
                       for e in trace.by_kind("wm-write"))
        deposited: set[tuple] = set()
        system_names = {"vision", "audio"}
        for event in trace.events:
            if event.kind == "deposit" and event.data["content"] is not None:
                content = event.data["content"]
                deposited.add((content["isa"], tuple(sorted(content["slots"].items()))))
            elif event.kind == "wm-write" and event.data["writer"] in system_names:
                content = event.data["content"]
                if content is not None and not content.get("query"):
                    key = (content["isa"], tuple(sorted(content["slots"].items())))
                    assert key in deposited, (
                        f"shadow wrote {key} before any deposit carried it")


class TestRewardsAndCredit:
    def test_shadow_credit_arrives_with_reward(self, model):
        trace = run(model, 10, mode="mm", seed=0)
        updates = trace.by_kind("utility-update")
        hear = [u for u in updates if u.data["production"] == "hear"]
        assert hear and hear[0].data["new"] > 0
        see = [u for u in updates if u.data["production"] == "see"]
        assert see == []  # vision deposits were never consumed

    def test_scheduled_rewards_fire_on_their_cycle(self):
        doc = two_system_doc()
        doc["central_productions"][0]["actions"].pop()  # drop the emit-reward
        doc["rewards"] = [{"cycle": 5, "amount": 3.0}]
        trace = run(parse_model(doc), 10, mode="mm", seed=0)
        rewards = trace.by_kind("reward")
        assert [(e.cycle, e.data["amount"], e.data["source"])
                for e in rewards] == [(5, 3.0, "schedule")]


class TestHalt:
    def test_zero_cycles_yields_bare_halt(self):
        doc = {"name": "empty", "codebook": {"dimension": 64},
               "buffers": [{"name": "goal", "owner": "central"}]}
        trace = run(parse_model(doc), 0, mode="mm", seed=0)
        assert [e.kind for e in trace.events] == ["halt"]
        assert trace.events[0].data["reason"] == "cycles-exhausted"

    def test_halt_action_finalizes_trace(self):
        doc = {
            "name": "halter", "codebook": {"dimension": 64},
            "buffers": [{"name": "goal", "owner": "central"}],
            "central_productions": [
                {"name": "stop",
                 "conditions": [{"buffer": "goal", "pattern": None}],
                 "actions": [{"kind": "halt"}]}],
            "initial_wm": [{"buffer": "goal",
                            "chunk": {"isa": "goal", "slots": {}}}],
        }
        trace = run(parse_model(doc), 50, mode="mm", seed=0)
        halts = trace.by_kind("halt")
        assert len(halts) == 1
        assert halts[0].data["reason"] == "halt-action"
        assert halts[0].cycle == 0
        assert trace.events[-1].kind == "halt"

    def test_stepping_after_halt_raises(self):
        doc = {"name": "empty", "codebook": {"dimension": 64},
               "buffers": [{"name": "goal", "owner": "central"}]}
        session = Session(parse_model(doc), mode="mm", seed=0)
        session.finish()
        with pytest.raises(RuntimeError):
            session.step()


class TestPipelineMode:
    def test_predictions_bypass_middle_memory(self, model):
        trace = run(model, 20, mode="pipeline", seed=0)
        assert trace.by_kind("deposit") == []
        assert trace.by_kind("shadow-fire") == []
        routed = [e for e in trace.by_kind("wm-write")
                  if e.data.get("route") == "pipeline"]
        assert routed
        assert {e.data["buffer"] for e in routed} == {"sight", "sound"}

    def test_candidates_grow_with_inflow(self, model):
        trace = run(model, 40, mode="pipeline", seed=0)
        counts = [e.data["candidates"] for e in trace.events
                  if e.kind in ("central-fire", "idle")]
        assert counts[-1] > counts[5] > counts[1]

    def test_pipeline_needs_subscribers_for_every_tag(self, model):
        doc = two_system_doc()
        doc["predictors"].append({"name": "stray", "kind": "associative",
                                  "tag": "motor", "pairs": [["watch", "twitch"]]})
        stray = parse_model(doc)
        run(stray, 2, mode="mm", seed=0)  # fine in mm mode
        with pytest.raises(ModelValidationError):
            run(stray, 2, mode="pipeline", seed=0)

    def test_pipeline_central_sees_prediction_same_cycle(self, model):
        trace = run(model, 10, mode="pipeline", seed=0)
        first_route = next(e.cycle for e in trace.by_kind("wm-write")
                           if e.data.get("route") == "pipeline")
        first_fire = next(e.cycle for e in trace.by_kind("central-fire"))
        assert first_fire == first_route  # ungated: no one-cycle filter delay


class TestMultiRateSystems:
    def test_rate_multiplier_chains_substeps_within_a_cycle(self):
        doc = {
            "name": "fast", "codebook": {"dimension": 64},
            "buffers": [{"name": "goal", "owner": "central"},
                        {"name": "scratch", "owner": "stepper"}],
            "shadow_systems": [
                {"name": "stepper", "buffer": "scratch",
                 "subscriptions": ["seed"], "steps_per_cycle": 2,
                 "productions": [
                    {"name": "start",
                     "conditions": [{"buffer": "scratch", "pattern": None,
                                     "negated": True},
                                    {"mm_tags": ["seed"], "pattern": None}],
                     "actions": [{"kind": "write-buffer", "target": "scratch",
                                  "chunk": {"isa": "stage", "slots": {"n": "one"}}}]},
                    {"name": "advance",
                     "conditions": [{"buffer": "scratch",
                                     "pattern": {"isa": "stage", "slots": {"n": "one"}}}],
                     "actions": [{"kind": "write-buffer", "target": "scratch",
                                  "chunk": {"isa": "stage", "slots": {"n": "two"}}}]}]}],
            "initial_mm": [{"tag": "seed", "chunk": {"isa": "go", "slots": {}},
                            "presentations": [-0.5]}],
        }
        trace = run(parse_model(doc), 1, mode="mm", seed=0)
        fires = [e.data["production"] for e in trace.by_kind("shadow-fire")]
        assert fires == ["start", "advance"]  # both sub-steps, one cycle
        writes = [e for e in trace.by_kind("wm-write")
                  if e.data["writer"] == "stepper"]
        assert writes[-1].data["content"]["slots"] == {"n": "two"}
