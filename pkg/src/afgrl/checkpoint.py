"""Checkpoint container.

A checkpoint is an uncompressed ``.npz`` archive. Keys:

``__format__``   the string ``afgrl-checkpoint``
``__version__``  integer layout version (currently 1)
``__config__``   JSON dump of the training config (may be ``{}``)
``embeddings``   N x D eval-mode online embeddings (optional)
``<name>``       every network tensor under its dotted name, e.g.
                 ``encoder.0.weight``, ``encoder.0.bn.running_var``,
                 ``predictor.w1``, ``target.encoder.0.prelu``
"""

from __future__ import annotations

import json
from typing import Dict, Optional, Tuple

import numpy as np

FORMAT = "afgrl-checkpoint"
VERSION = 1


def save_checkpoint(path, tensors: Dict[str, np.ndarray], embeddings: Optional[np.ndarray] = None,
                    config: Optional[dict] = None) -> None:
    payload = {name: np.asarray(arr, dtype=np.float64) for name, arr in tensors.items()}
    if embeddings is not None:
        payload["embeddings"] = np.asarray(embeddings, dtype=np.float64)
    payload["__format__"] = np.array(FORMAT)
    payload["__version__"] = np.array(VERSION)
    payload["__config__"] = np.array(json.dumps(config or {}, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], Optional[np.ndarray], dict]:
    """Return ``(tensors, embeddings, config)``."""
    with np.load(path, allow_pickle=False) as data:
        if "__format__" not in data.files or str(data["__format__"]) != FORMAT:
            raise ValueError(f"{path}: not an afgrl checkpoint")
        version = int(data["__version__"])
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        config = json.loads(str(data["__config__"]))
        embeddings = data["embeddings"] if "embeddings" in data.files else None
        tensors = {k: data[k] for k in data.files if not k.startswith("__") and k != "embeddings"}
    return tensors, embeddings, config
