"""Synthetic prompt generators with rule-based verifiable rewards.

Prompts are ``(BOS, *body)``. Content tokens start after the reserved ids.

* copy_pattern: body is a random pattern; the answer is its first
  ``target_len`` tokens. At response step t the token to copy sits at the same
  window slot ``k - prompt_len`` for every t, so the task is learnable by a
  fixed-window policy.
* parity: body is a bit string over two tokens; the answer is the parity token.
* modsum: body is digits ``0..base-1``; the answer is their sum mod ``base``.
"""

import logging
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.errors import TaskSpecError
from src.policy.model import BOS_ID, EOS_ID, FIRST_CONTENT_ID

logger = logging.getLogger(__name__)


class TaskKind(str, Enum):
    COPY_PATTERN = "copy_pattern"
    PARITY = "parity"
    MODSUM = "modsum"


class TaskSpec(BaseModel):
    """Task family and lengths."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: TaskKind = TaskKind.COPY_PATTERN
    prompt_len: int = Field(4, ge=1, description="Body tokens after BOS")
    target_len: int = Field(2, ge=1, description="Answer tokens")
    base: Optional[int] = Field(None, ge=2, le=10, description="modsum only")
    alphabet_size: int = Field(8, ge=2, description="copy_pattern symbol count")

    @model_validator(mode="after")
    def _check_kind_fields(self) -> "TaskSpec":
        if self.kind is TaskKind.MODSUM and self.base is None:
            raise ValueError("modsum requires base in [2, 10]")
        if self.kind is not TaskKind.MODSUM and self.base is not None:
            raise ValueError(f"base is only valid for modsum, not {self.kind.value}")
        return self

    @property
    def max_len(self) -> int:
        """Default response budget: the answer plus EOS."""
        return self.target_len + 1

    def symbol_count(self) -> int:
        if self.kind is TaskKind.COPY_PATTERN:
            return self.alphabet_size
        if self.kind is TaskKind.PARITY:
            return 2
        return self.base

    def check_feasible(self, window: int, vocab_size: int) -> None:
        """Raise TaskSpecError if the task cannot be expressed in this policy."""
        if self.prompt_len > window:
            raise TaskSpecError(
                f"prompt_len {self.prompt_len} exceeds the context window {window}"
            )
        if self.kind is TaskKind.COPY_PATTERN and self.target_len > self.prompt_len:
            raise TaskSpecError(
                f"copy_pattern target_len {self.target_len} exceeds prompt_len {self.prompt_len}"
            )
        if self.kind is not TaskKind.COPY_PATTERN and self.target_len != 1:
            raise TaskSpecError(f"{self.kind.value} answers are one token, got target_len {self.target_len}")
        if FIRST_CONTENT_ID + self.symbol_count() > vocab_size:
            raise TaskSpecError(
                f"{self.symbol_count()} symbols need vocab_size >= "
                f"{FIRST_CONTENT_ID + self.symbol_count()}, got {vocab_size}"
            )


class Prompt(BaseModel):
    """One prompt with its canonical answer."""

    model_config = ConfigDict(frozen=True)

    id: int = Field(..., ge=0)
    tokens: Tuple[int, ...]
    answer_key: Tuple[int, ...]
    kind: TaskKind = TaskKind.COPY_PATTERN


def gen_prompts(
    spec: TaskSpec,
    n: int,
    seed: int,
    window: int = 8,
    vocab_size: int = 32,
) -> List[Prompt]:
    """Generate ``n`` prompts with ids ``0..n-1``, deterministic in ``(spec, n, seed)``.

    Raises:
        TaskSpecError: if ``n < 1`` or the spec does not fit the window/vocabulary.
    """
    if n < 1:
        raise TaskSpecError(f"n must be >= 1, got {n}")
    spec.check_feasible(window, vocab_size)

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 1])))
    symbols = rng.integers(0, spec.symbol_count(), size=(n, spec.prompt_len))
    prompts = []
    for i in range(n):
        digits = [int(d) for d in symbols[i]]
        body = tuple(FIRST_CONTENT_ID + d for d in digits)
        if spec.kind is TaskKind.COPY_PATTERN:
            answer = body[: spec.target_len]
        else:
            answer = (FIRST_CONTENT_ID + sum(digits) % spec.symbol_count(),)
        prompts.append(Prompt(id=i, tokens=(BOS_ID,) + body, answer_key=answer, kind=spec.kind))
    return prompts


def score(prompt: Prompt, response: Sequence[int]) -> float:
    """Rule-based reward in [0, 1]; malformed responses score 0.

    copy_pattern gives the fraction of target positions matched before the
    first EOS; parity and modsum give 1 when the first emitted token is the
    answer.
    """
    emitted = []
    for tok in response:
        if tok == EOS_ID:
            break
        emitted.append(int(tok))

    answer = prompt.answer_key
    if prompt.kind is TaskKind.COPY_PATTERN:
        hits = sum(1 for a, b in zip(emitted, answer) if a == b)
        return hits / len(answer)
    return 1.0 if emitted and emitted[0] == answer[0] else 0.0
