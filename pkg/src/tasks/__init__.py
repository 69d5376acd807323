"""Synthetic tasks and rule-based rewards."""

from .generators import Prompt, TaskKind, TaskSpec, gen_prompts, score
from .prompt_io import read_prompts, write_prompts

__all__ = ["Prompt", "TaskKind", "TaskSpec", "gen_prompts", "score", "read_prompts", "write_prompts"]
