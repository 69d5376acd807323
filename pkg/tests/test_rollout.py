"""Tests for rollout generation, recomputation, mismatch diagnostics and traces."""

import json

import numpy as np
import pytest

from src.errors import FingerprintMismatchError, MissingFieldError, TraceFormatError
from src.kernels import CALIBRATED_MISMATCH, EXACT, get_profile
from src.policy import FIRST_CONTENT_ID, PolicyConfig, PolicyParams
from src.rollout import (
    TOKEN_SCOPE,
    TraceWriter,
    assign_advantages,
    delta_stats,
    generate_batch,
    read_trace,
    recompute_old,
    records_to_batch,
    token_delta,
)
from src.rollout.traces import RECORD_KEYS
from src.tasks import TaskKind, TaskSpec, gen_prompts

MISMATCH = get_profile(CALIBRATED_MISMATCH)


class TestGenerateBatch:
    """Sampling whole batches."""

    def test_order_and_size(self, params, prompts, small_task):
        batch = generate_batch(params, prompts, 3, EXACT, 1, small_task.max_len)
        keys = [(t.prompt_id, t.group_index) for t in batch.trajectories]
        assert keys == [(p.id, g) for p in prompts for g in range(3)]
        assert batch.params_old_fingerprint == params.fingerprint()
        assert batch.rollout_profile["name"] == "exact"

    def test_rewards_frozen_in_range(self, params, prompts, small_task):
        batch = generate_batch(params, prompts, 4, EXACT, 2, small_task.max_len)
        assert np.all((batch.rewards >= 0) & (batch.rewards <= 1))

    def test_independent_of_workers(self, params, prompts, small_task):
        one = generate_batch(params, prompts, 4, MISMATCH, 3, small_task.max_len, workers=1)
        many = generate_batch(params, prompts, 4, MISMATCH, 3, small_task.max_len, workers=5)
        for a, b in zip(one.trajectories, many.trajectories):
            assert a.tokens == b.tokens, f"trajectory ({a.prompt_id}, {a.group_index}) depends on workers"

    def test_group_size_checked(self, params, prompts):
        with pytest.raises(ValueError):
            generate_batch(params, prompts, 0, EXACT, 1, 3)

    def test_only_rollout_fields_filled(self, params, prompts, small_task):
        batch = generate_batch(params, prompts, 2, EXACT, 4, small_task.max_len)
        traj = batch.trajectories[0]
        assert traj.has_field("logp_rollout")
        assert not traj.has_field("logp_old_train")
        with pytest.raises(MissingFieldError):
            traj.field_array("logp_cur", "grpo_recompute")


class TestRecompute:
    """Trainer-side re-evaluation of sampled tokens."""

    def test_zero_mismatch_is_bitwise(self, params, prompts, small_task):
        batch = generate_batch(params, prompts, 4, EXACT, 5, small_task.max_len)
        batch = recompute_old(params, batch, EXACT)
        for traj in batch.trajectories:
            assert np.array_equal(traj.field_array("logp_old_train"), traj.field_array("logp_rollout"))
        stats = delta_stats(batch)
        assert stats.max_abs == 0.0 and stats.mean_abs == 0.0
        assert stats.top1_flip_rate == 0.0

    def test_mismatch_is_visible(self, params, prompts, small_task):
        batch = generate_batch(params, prompts, 4, MISMATCH, 5, small_task.max_len)
        batch = recompute_old(params, batch, EXACT)
        stats = delta_stats(batch)
        assert stats.max_abs > 0.0
        assert stats.token_count == batch.token_count
        assert stats.mean_abs <= stats.max_abs

    def test_rejects_foreign_parameters(self, params, prompts, small_task):
        batch = generate_batch(params, prompts, 2, EXACT, 6, small_task.max_len)
        other = params.copy()
        other.b2 = other.b2 + 1e-3
        with pytest.raises(FingerprintMismatchError):
            recompute_old(other, batch, EXACT)

    def test_delta_needs_recompute(self, params, prompts, small_task):
        batch = generate_batch(params, prompts, 2, EXACT, 7, small_task.max_len)
        with pytest.raises(MissingFieldError):
            delta_stats(batch)

    def test_token_delta(self):
        assert token_delta(-1.25, -1.5) == 0.25


class TestAdvantages:
    """Broadcasting one advantage per trajectory."""

    def test_broadcast(self, params, prompts, small_task):
        batch = generate_batch(params, prompts, 2, EXACT, 8, small_task.max_len)
        adv = np.arange(len(batch), dtype=float)
        batch = assign_advantages(batch, adv)
        for a, traj in zip(adv, batch.trajectories):
            assert np.all(traj.field_array("advantage") == a)

    def test_length_checked(self, params, prompts, small_task):
        batch = generate_batch(params, prompts, 2, EXACT, 8, small_task.max_len)
        with pytest.raises(ValueError):
            assign_advantages(batch, [0.0])


class TestTraces:
    """Trace files round-trip exactly."""

    def test_write_and_read(self, tmp_path, make_batch):
        batch = make_batch(rollout=MISMATCH, shift=0.1)
        path = tmp_path / "trace.jsonl"
        with TraceWriter(path, {"manifest_hash": "abc", "variant": "tis"}) as writer:
            writer.write_batch(1, batch)
            writer.write_batch(2, batch)

        data = read_trace(path)
        assert data.meta["format_version"] == 1
        assert data.meta["token_scope"] == TOKEN_SCOPE == "response"
        assert data.meta["manifest_hash"] == "abc"
        assert data.steps() == [1, 2]
        assert len(data.records) == 2 * len(batch)
        assert set(data.records[0]) == set(RECORD_KEYS)

        rebuilt = records_to_batch([r for r in data.records if r["step"] == 1])
        for original, restored in zip(batch.trajectories, rebuilt.trajectories):
            for name in ("logp_rollout", "logp_old_train", "logp_cur", "advantage"):
                assert np.array_equal(original.field_array(name), restored.field_array(name)), name
            assert original.reward == restored.reward

    def test_flip_flags_recorded(self, tmp_path, make_batch):
        batch = make_batch(rollout=MISMATCH)
        path = tmp_path / "trace.jsonl"
        with TraceWriter(path, {}) as writer:
            writer.write_batch(1, batch)
        for record in read_trace(path).records:
            assert all(isinstance(f, bool) for f in record["top1_flip"])

    def test_bad_json_names_line(self, tmp_path, make_batch):
        path = tmp_path / "trace.jsonl"
        with TraceWriter(path, {}) as writer:
            writer.write_batch(1, make_batch())
        lines = path.read_text(encoding="utf-8").splitlines()
        lines[2] = lines[2][:-5]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(TraceFormatError) as info:
            read_trace(path)
        assert info.value.line_number == 3

    def test_missing_meta(self, tmp_path):
        path = tmp_path / "trace.jsonl"
        path.write_text(json.dumps({"type": "trajectory"}) + "\n", encoding="utf-8")
        with pytest.raises(TraceFormatError) as info:
            read_trace(path)
        assert info.value.line_number == 1

    def test_ragged_record(self, tmp_path, make_batch):
        path = tmp_path / "trace.jsonl"
        with TraceWriter(path, {}) as writer:
            writer.write_batch(1, make_batch())
        lines = path.read_text(encoding="utf-8").splitlines()
        record = json.loads(lines[1])
        record["logp_cur"] = record["logp_cur"] + [-1.0]
        lines[1] = json.dumps(record)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(TraceFormatError) as info:
            read_trace(path)
        assert info.value.line_number == 2
        assert "logp_cur" in str(info.value)

    @pytest.mark.parametrize(
        "key,value",
        [
            ("logp_old_train", [None]),
            ("logp_rollout", ["-0.5"]),
            ("logp_cur", [0.25]),
            ("tokens", 5),
            ("tokens", [1.5]),
            ("top1_flip", [1]),
            ("reward", None),
            ("g", "0"),
        ],
    )
    def test_mistyped_field_names_line(self, key, value, tmp_path, make_batch):
        path = tmp_path / "trace.jsonl"
        with TraceWriter(path, {}) as writer:
            writer.write_batch(1, make_batch())
        lines = path.read_text(encoding="utf-8").splitlines()
        record = json.loads(lines[2])
        if isinstance(value, list) and key != "tokens":
            value = value * len(record["tokens"])
        record[key] = value
        lines[2] = json.dumps(record)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(TraceFormatError) as info:
            read_trace(path)
        assert info.value.line_number == 3, f"{key}={value!r} reported on line {info.value.line_number}"

    def test_empty_file(self, tmp_path):
        path = tmp_path / "trace.jsonl"
        path.write_text("", encoding="utf-8")
        with pytest.raises(TraceFormatError):
            read_trace(path)


class TestChanceLevel:
    """A policy spread evenly over the two parity symbols scores at chance."""

    def test_parity_at_chance(self):
        policy = PolicyConfig()
        task = TaskSpec(kind=TaskKind.PARITY, prompt_len=6, target_len=1)
        params = PolicyParams.zeros(policy)
        params.b2 = np.full_like(params.b2, -30.0)
        params.b2[FIRST_CONTENT_ID : FIRST_CONTENT_ID + 2] = 0.0

        prompts = gen_prompts(task, 1000, seed=4, window=policy.context_window, vocab_size=policy.vocab_size)
        batch = generate_batch(params, prompts, 1, EXACT, 17, task.max_len)
        mean = float(np.mean(batch.rewards))
        assert abs(mean - 0.5) <= 0.05, f"chance policy scored {mean:.3f}"
