"""Trace files: line-delimited JSON, one trajectory per line per step.

The first line is a metadata record (manifest hash, profiles, loss variant,
token scope). Floats are written with ``json`` so they round-trip exactly.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, IO, List, Optional, Union

from src.errors import TraceFormatError
from src.rollout.diagnostics import TOKEN_SCOPE
from src.rollout.records import TokenRecord, Trajectory, TrajectoryBatch

logger = logging.getLogger(__name__)

TRACE_FORMAT_VERSION = 1

RECORD_KEYS = (
    "step",
    "prompt_id",
    "g",
    "prompt",
    "tokens",
    "logp_rollout",
    "logp_old_train",
    "logp_cur",
    "advantage",
    "reward",
    "rejected",
    "top1_flip",
)
_PER_TOKEN_KEYS = ("logp_rollout", "logp_old_train", "logp_cur", "top1_flip")


def trajectory_record(step: int, traj: Trajectory) -> Dict[str, object]:
    """Plain-JSON form of one trajectory at one step."""
    advantage = traj.tokens[0].advantage if traj.tokens else None
    return {
        "step": int(step),
        "prompt_id": traj.prompt_id,
        "g": traj.group_index,
        "prompt": list(traj.prompt),
        "tokens": [rec.token for rec in traj.tokens],
        "logp_rollout": [rec.logp_rollout for rec in traj.tokens],
        "logp_old_train": [rec.logp_old_train for rec in traj.tokens],
        "logp_cur": [rec.logp_cur for rec in traj.tokens],
        "advantage": advantage,
        "reward": traj.reward,
        "rejected": bool(traj.rejected),
        "top1_flip": [
            None if rec.rollout_top1 is None or rec.train_top1 is None
            else rec.rollout_top1 != rec.train_top1
            for rec in traj.tokens
        ],
    }


class TraceWriter:
    """Streams trace lines to an open file."""

    def __init__(self, path: Union[str, Path], meta: Dict[str, object]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh: Optional[IO[str]] = open(self.path, "w", encoding="utf-8")
        header = {
            "type": "meta",
            "format_version": TRACE_FORMAT_VERSION,
            "token_scope": TOKEN_SCOPE,
            **meta,
        }
        self._write(header)

    def _write(self, record: Dict[str, object]) -> None:
        self._fh.write(json.dumps(record, sort_keys=False) + "\n")

    def write_batch(self, step: int, batch: TrajectoryBatch) -> None:
        for traj in batch.trajectories:
            self._write({"type": "trajectory", **trajectory_record(step, traj)})
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "TraceWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


@dataclass
class TraceData:
    meta: Dict[str, object]
    records: List[Dict[str, object]] = field(default_factory=list)

    def steps(self) -> List[int]:
        return sorted({int(r["step"]) for r in self.records})


_INT_KEYS = ("step", "prompt_id", "g")
_LOGP_KEYS = ("logp_rollout", "logp_old_train", "logp_cur")


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _check_record(record: Dict[str, object], line_number: int) -> None:
    def fail(message: str) -> None:
        raise TraceFormatError(f"line {line_number}: {message}", line_number)

    missing = [k for k in RECORD_KEYS if k not in record]
    if missing:
        fail(f"missing keys {missing}")
    for key in _INT_KEYS:
        if not _is_int(record[key]):
            fail(f"{key} must be an integer, got {record[key]!r}")
    for key in ("prompt", "tokens", *_PER_TOKEN_KEYS):
        if not isinstance(record[key], list):
            fail(f"{key} must be a list, got {type(record[key]).__name__}")
    if not all(_is_int(t) for t in record["prompt"] + record["tokens"]):
        fail("prompt and tokens must hold integer token ids")
    n = len(record["tokens"])
    if n == 0:
        fail("trajectory has no tokens")
    for key in _PER_TOKEN_KEYS:
        if len(record[key]) != n:
            fail(f"{key} has {len(record[key])} entries for {n} tokens")
    for key in _LOGP_KEYS:
        if not all(_is_number(v) and v <= 0 for v in record[key]):
            fail(f"{key} must hold finite log-probabilities <= 0")
    if not all(f is None or isinstance(f, bool) for f in record["top1_flip"]):
        fail("top1_flip entries must be true, false or null")
    if not (record["advantage"] is None or _is_number(record["advantage"])):
        fail(f"advantage must be a number or null, got {record['advantage']!r}")
    if not _is_number(record["reward"]):
        fail(f"reward must be a number, got {record['reward']!r}")
    if not isinstance(record["rejected"], bool):
        fail(f"rejected must be true or false, got {record['rejected']!r}")


def read_trace(path: Union[str, Path]) -> TraceData:
    """Parse a trace file.

    Raises:
        TraceFormatError: naming the first malformed line (1-based).
    """
    data: Optional[TraceData] = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceFormatError(f"line {line_number}: invalid JSON ({exc.msg})", line_number) from exc
            if not isinstance(record, dict):
                raise TraceFormatError(f"line {line_number}: expected an object", line_number)
            kind = record.pop("type", None)
            if data is None:
                if kind != "meta":
                    raise TraceFormatError(f"line {line_number}: first record must be metadata", line_number)
                data = TraceData(meta=record)
                continue
            if kind != "trajectory":
                raise TraceFormatError(f"line {line_number}: unexpected record type {kind!r}", line_number)
            _check_record(record, line_number)
            data.records.append(record)
    if data is None:
        raise TraceFormatError("trace file is empty", 1)
    logger.info(f"Read {len(data.records)} trajectory records from {path}")
    return data


def records_to_batch(records: List[Dict[str, object]], fingerprint: str = "") -> TrajectoryBatch:
    """Rebuild a TrajectoryBatch (without top-1 ids) from trace records."""
    trajectories = []
    for r in records:
        tokens = [
            TokenRecord(
                token=int(tok),
                logp_rollout=lr,
                logp_old_train=lo,
                logp_cur=lc,
                advantage=r["advantage"],
            )
            for tok, lr, lo, lc in zip(r["tokens"], r["logp_rollout"], r["logp_old_train"], r["logp_cur"])
        ]
        trajectories.append(
            Trajectory(
                prompt_id=int(r["prompt_id"]),
                group_index=int(r["g"]),
                prompt=tuple(int(t) for t in r["prompt"]),
                tokens=tokens,
                reward=float(r["reward"]),
                rejected=bool(r["rejected"]),
            )
        )
    return TrajectoryBatch(trajectories=trajectories, params_old_fingerprint=fingerprint)
