"""Parameter checkpoints.

A checkpoint is a single uncompressed ``.npz`` archive: one ``.npy`` member per
tensor (shape header + row-major float64 payload) and the PolicyConfig as a
JSON string. Round trips are bitwise.
"""

import json
import logging
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from src.errors import ShapeMismatchError
from src.policy.model import PolicyConfig, PolicyParams

logger = logging.getLogger(__name__)

_CONFIG_KEY = "__policy_config__"


def save_checkpoint(path: Union[str, Path], params: PolicyParams, config: PolicyConfig) -> Path:
    """Write ``params`` and ``config`` to ``path`` (``.npz`` is appended if missing)."""
    params.check_shapes(config)
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_name(path.name + ".npz")
    path.parent.mkdir(parents=True, exist_ok=True)

    arrays = {name: np.ascontiguousarray(arr, dtype=np.float64) for name, arr in params.items()}
    arrays[_CONFIG_KEY] = np.array(json.dumps(config.model_dump(), sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    logger.info(f"Saved checkpoint {path} (fingerprint {params.fingerprint()[:12]})")
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[PolicyParams, PolicyConfig]:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises:
        ShapeMismatchError: if a stored tensor does not match the stored config.
    """
    with np.load(Path(path), allow_pickle=False) as data:
        if _CONFIG_KEY not in data.files:
            raise ShapeMismatchError(f"{path} has no policy config record")
        config = PolicyConfig(**json.loads(str(data[_CONFIG_KEY])))
        missing = [name for name in PolicyParams.names() if name not in data.files]
        if missing:
            raise ShapeMismatchError(f"{path} is missing tensors {missing}")
        params = PolicyParams(**{name: np.array(data[name], dtype=np.float64) for name in PolicyParams.names()})
    params.check_shapes(config)
    return params, config
