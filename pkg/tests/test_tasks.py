"""Tests for prompt generation, scoring and prompt files."""

import pytest

from src.errors import TaskSpecError
from src.policy import BOS_ID, EOS_ID, FIRST_CONTENT_ID
from src.tasks import TaskKind, TaskSpec, gen_prompts, read_prompts, score, write_prompts


class TestGenPrompts:
    """Deterministic prompt sets."""

    def test_deterministic(self):
        spec = TaskSpec()
        assert gen_prompts(spec, 20, 7) == gen_prompts(spec, 20, 7)
        assert gen_prompts(spec, 20, 7) != gen_prompts(spec, 20, 8)

    def test_ids_and_layout(self):
        spec = TaskSpec(prompt_len=5, target_len=3, alphabet_size=6)
        prompts = gen_prompts(spec, 10, 0)
        assert [p.id for p in prompts] == list(range(10))
        for p in prompts:
            assert p.tokens[0] == BOS_ID
            assert len(p.tokens) == 1 + spec.prompt_len
            assert all(FIRST_CONTENT_ID <= t < FIRST_CONTENT_ID + 6 for t in p.tokens[1:])
            assert p.answer_key == p.tokens[1:4], "copy_pattern answers the first target_len symbols"

    def test_parity(self):
        spec = TaskSpec(kind=TaskKind.PARITY, prompt_len=6, target_len=1)
        for p in gen_prompts(spec, 30, 1):
            ones = sum(1 for t in p.tokens[1:] if t == FIRST_CONTENT_ID + 1)
            assert p.answer_key == (FIRST_CONTENT_ID + ones % 2,)

    def test_modsum(self):
        spec = TaskSpec(kind=TaskKind.MODSUM, prompt_len=4, target_len=1, base=5)
        for p in gen_prompts(spec, 30, 2):
            digits = [t - FIRST_CONTENT_ID for t in p.tokens[1:]]
            assert p.answer_key == (FIRST_CONTENT_ID + sum(digits) % 5,)
            assert p.kind is TaskKind.MODSUM

    def test_prefix_stable_in_n(self):
        spec = TaskSpec()
        assert gen_prompts(spec, 5, 3) == gen_prompts(spec, 12, 3)[:5]

    def test_n_must_be_positive(self):
        with pytest.raises(TaskSpecError):
            gen_prompts(TaskSpec(), 0, 0)

    def test_prompt_longer_than_window(self):
        with pytest.raises(TaskSpecError):
            gen_prompts(TaskSpec(prompt_len=9, target_len=2), 4, 0, window=8)

    def test_alphabet_exceeds_vocab(self):
        with pytest.raises(TaskSpecError):
            gen_prompts(TaskSpec(alphabet_size=30), 4, 0, vocab_size=32)

    def test_copy_target_longer_than_prompt(self):
        with pytest.raises(TaskSpecError):
            gen_prompts(TaskSpec(prompt_len=2, target_len=3), 4, 0)

    def test_single_token_tasks(self):
        with pytest.raises(TaskSpecError):
            gen_prompts(TaskSpec(kind=TaskKind.PARITY, target_len=2), 4, 0)

    def test_modsum_needs_base(self):
        with pytest.raises(ValueError):
            TaskSpec(kind=TaskKind.MODSUM, target_len=1)
        with pytest.raises(ValueError):
            TaskSpec(kind=TaskKind.PARITY, target_len=1, base=3)

    def test_max_len(self):
        assert TaskSpec(target_len=3, prompt_len=4).max_len == 4


class TestScore:
    """Rule-based rewards."""

    @pytest.fixture
    def copy_prompt(self):
        return gen_prompts(TaskSpec(prompt_len=4, target_len=2), 1, 5)[0]

    def test_perfect(self, copy_prompt):
        assert score(copy_prompt, list(copy_prompt.answer_key) + [EOS_ID]) == 1.0

    def test_partial(self, copy_prompt):
        a, b = copy_prompt.answer_key
        wrong = FIRST_CONTENT_ID if b != FIRST_CONTENT_ID else FIRST_CONTENT_ID + 1
        assert score(copy_prompt, [a, wrong, EOS_ID]) == 0.5

    def test_eos_first_scores_zero(self, copy_prompt):
        assert score(copy_prompt, [EOS_ID] + list(copy_prompt.answer_key)) == 0.0

    def test_single_token_tasks(self):
        p = gen_prompts(TaskSpec(kind=TaskKind.MODSUM, prompt_len=3, target_len=1, base=4), 1, 0)[0]
        assert score(p, [p.answer_key[0]]) == 1.0
        other = FIRST_CONTENT_ID + (p.answer_key[0] - FIRST_CONTENT_ID + 1) % 4
        assert score(p, [other, p.answer_key[0]]) == 0.0

    def test_reward_in_unit_interval(self):
        prompts = gen_prompts(TaskSpec(prompt_len=4, target_len=3), 20, 9)
        for p in prompts:
            for response in ([], [EOS_ID], [3, 4, 5, 6], list(p.tokens)):
                assert 0.0 <= score(p, response) <= 1.0


class TestPromptFiles:
    """Line-delimited prompt files."""

    def test_round_trip(self, tmp_path):
        prompts = gen_prompts(TaskSpec(kind=TaskKind.MODSUM, prompt_len=3, target_len=1, base=7), 6, 4)
        path = write_prompts(tmp_path / "prompts.jsonl", prompts)
        assert read_prompts(path) == prompts

    def test_missing_columns(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": 0, "tokens": [0, 3]}\n', encoding="utf-8")
        with pytest.raises(TaskSpecError):
            read_prompts(path)
