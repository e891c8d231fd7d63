"""Dual-memory semantics: step/round ordering, resets, rendering, isolation."""

from concurrent.futures import ThreadPoolExecutor

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dualreflect.memory import (
    EMPTY_MEMORY_TEXT,
    LongTermMemory,
    LTMRecord,
    RoundGap,
    ShortTermMemory,
    STMEntry,
    StepGap,
)
from dualreflect.model import (
    ExecutionResult,
    ExecutionStatus,
    IntraReflection,
    Plan,
    PlanNode,
    ToolCall,
    TrajectoryStep,
)
from dualreflect.promptkit import default_templates


def entry(step, tag="x"):
    return STMEntry(
        step=step,
        subtask=f"subtask {tag}",
        action="alpha",
        action_input={"q": tag},
        observation=f"[simulated_failure] boom {tag}",
        reflection=f"thought {tag}",
    )


def small_plan():
    return Plan(
        nodes=(PlanNode("n1", "do a thing", "alpha"),),
        reflection=IntraReflection(evaluation="fine", score=9),
    )


def ltm_record(round_index, tag="r"):
    call = ToolCall("alpha", {"q": tag}, IntraReflection(evaluation=f"pick {tag}", score=8))
    step = TrajectoryStep("n1", call, ExecutionResult(ExecutionStatus.OK, f"out {tag}"), 1)
    return LTMRecord(
        round_index=round_index,
        plan=small_plan(),
        trajectory=(step,),
        inter_reflection=f"Answer (score 7/10) for {tag}",
    )


class TestShortTerm:
    def test_record_appends_in_step_order(self):
        stm = ShortTermMemory("n1")
        stm.record(entry(1))
        stm.record(entry(2))
        assert [e.step for e in stm.entries] == [1, 2]

    def test_step_gap_rejected(self):
        stm = ShortTermMemory("n1")
        stm.record(entry(1))
        stm.record(entry(2))
        with pytest.raises(StepGap):
            stm.record(entry(4))

    def test_first_entry_must_be_step_one(self):
        stm = ShortTermMemory("n1")
        with pytest.raises(StepGap):
            stm.record(entry(2))

    def test_reset_clears_and_reports(self):
        stm = ShortTermMemory("n1")
        stm.record(entry(1))
        stm.record(entry(2))
        assert stm.reset() == 2
        assert stm.entries == []

    def test_reset_is_idempotent(self):
        stm = ShortTermMemory("n1")
        assert stm.reset() == 0
        assert stm.reset() == 0

    def test_bind_moves_and_discards(self):
        stm = ShortTermMemory("n1")
        stm.record(entry(1))
        assert stm.bind("n2") == 1
        assert stm.node_id == "n2" and stm.entries == []

    def test_render_sentinel_when_empty(self):
        assert ShortTermMemory("n1").render(default_templates()) == EMPTY_MEMORY_TEXT

    def test_render_single_entry_fills_template(self):
        stm = ShortTermMemory("n1")
        stm.record(entry(1, "only"))
        text = stm.render(default_templates())
        assert "Memory:\n1" in text
        assert "Action:\nalpha" in text
        assert '"q": "only"' in text
        assert "Inter-Reflection:\n[simulated_failure] boom only" in text

    def test_render_two_failures_keeps_attempt_order(self):
        stm = ShortTermMemory("n1")
        stm.record(entry(1, "first"))
        stm.record(entry(2, "second"))
        text = stm.render(default_templates())
        assert text.index("boom first") < text.index("boom second")
        assert text.count("Action Input:") == 2

    @given(st.integers(min_value=1, max_value=8))
    def test_render_orders_blocks_by_step(self, n):
        stm = ShortTermMemory("n1")
        for i in range(1, n + 1):
            stm.record(entry(i, f"tag{i}"))
        text = stm.render(default_templates())
        positions = [text.index(f"boom tag{i}") for i in range(1, n + 1)]
        assert positions == sorted(positions)

    @given(st.permutations(list(range(1, 5))))
    def test_render_is_injective_on_order(self, perm):
        templates = default_templates()
        stm = ShortTermMemory("n1")
        for i in range(1, 5):
            stm.record(entry(i, f"tag{i}"))
        baseline = stm.render(templates)
        shuffled = ShortTermMemory("n1")
        shuffled.entries = [entry(i, f"tag{i}") for i in perm]
        if list(perm) == [1, 2, 3, 4]:
            assert shuffled.render(templates) == baseline
        else:
            assert shuffled.render(templates) != baseline


class TestLongTerm:
    def test_append_in_round_order(self):
        ltm = LongTermMemory("t")
        ltm.append(ltm_record(1))
        ltm.append(ltm_record(2))
        assert [r.round_index for r in ltm.records] == [1, 2]

    def test_round_gap_rejected(self):
        ltm = LongTermMemory("t")
        ltm.append(ltm_record(1))
        with pytest.raises(RoundGap):
            ltm.append(ltm_record(3))

    def test_reset_on_completion(self):
        ltm = LongTermMemory("t")
        for i in (1, 2, 3):
            ltm.append(ltm_record(i))
        assert ltm.reset() == 3
        assert ltm.records == []

    def test_fresh_reset_is_noop(self):
        assert LongTermMemory("t").reset() == 0

    def test_render_sentinel_when_empty(self):
        assert LongTermMemory("t").render(default_templates()) == EMPTY_MEMORY_TEXT

    def test_render_two_records_in_round_order(self):
        ltm = LongTermMemory("t")
        ltm.append(ltm_record(1, "one"))
        ltm.append(ltm_record(2, "two"))
        text = ltm.render(default_templates())
        assert text.count("Memory:") == 2
        assert text.index("for one") < text.index("for two")
        assert "Inter-Reflection:\nAnswer (score 7/10) for one" in text


def test_concurrent_tasks_never_share_memory():
    templates = default_templates()

    def run_one(tag):
        stm = ShortTermMemory(f"node-{tag}")
        ltm = LongTermMemory(f"task-{tag}")
        for i in range(1, 4):
            stm.record(entry(i, f"{tag}-{i}"))
        ltm.append(ltm_record(1, tag))
        return tag, stm.render(templates), ltm.render(templates)

    tags = [f"sentinel-{i:02d}" for i in range(12)]
    with ThreadPoolExecutor(max_workers=6) as pool:
        outputs = list(pool.map(run_one, tags))
    for tag, stm_text, ltm_text in outputs:
        assert tag in stm_text and tag in ltm_text
        for other in tags:
            if other != tag:
                assert other not in stm_text
                assert other not in ltm_text
