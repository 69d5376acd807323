"""Prompt set files: one JSON record per line (id, tokens, answer_key, kind)."""

import logging
from pathlib import Path
from typing import List, Sequence, Union

import pandas as pd

from src.errors import TaskSpecError
from src.tasks.generators import Prompt

logger = logging.getLogger(__name__)

PROMPT_COLUMNS = ["id", "tokens", "answer_key", "kind"]


def write_prompts(path: Union[str, Path], prompts: Sequence[Prompt]) -> Path:
    """Write prompts as line-delimited JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = pd.DataFrame(
        [
            {
                "id": p.id,
                "tokens": list(p.tokens),
                "answer_key": list(p.answer_key),
                "kind": p.kind.value,
            }
            for p in prompts
        ],
        columns=PROMPT_COLUMNS,
    )
    df.to_json(path, orient="records", lines=True)
    logger.info(f"Wrote {len(df)} prompts to {path}")
    return path


def read_prompts(path: Union[str, Path]) -> List[Prompt]:
    """Read a prompt file written by :func:`write_prompts`."""
    df = pd.read_json(Path(path), orient="records", lines=True, dtype=False)
    missing = [c for c in PROMPT_COLUMNS if c not in df.columns]
    if missing:
        raise TaskSpecError(f"{path} is missing prompt columns {missing}")
    return [
        Prompt(
            id=int(row["id"]),
            tokens=tuple(int(t) for t in row["tokens"]),
            answer_key=tuple(int(t) for t in row["answer_key"]),
            kind=row["kind"],
        )
        for _, row in df.iterrows()
    ]
