"""Model checkpoints: named parameter tensors plus a JSON sidecar manifest.

``save_model(path, net)`` writes ``path`` (tensor container) and
``path + ".json"`` with the architecture, parameter count and any extra run
information, so a checkpoint can be rebuilt without out-of-band knowledge.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, TensorFormatError
from .io import git_describe, read_named, write_named
from .models import UNetConfig, build_model


def sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_model(path, net, extra: dict | None = None) -> None:
    meta = {"kind": net.kind, "config": net.config.to_dict(),
            "parameter_count": net.parameter_count(), "git": git_describe()}
    meta.update(extra or {})
    write_named(path, net.params)
    sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")


def load_model(path):
    path = Path(path)
    meta_path = sidecar(path)
    if not meta_path.exists():
        raise ConfigurationError(f"missing checkpoint manifest {meta_path}")
    meta = json.loads(meta_path.read_text())
    net = build_model(meta["kind"], UNetConfig(**meta["config"]))
    tensors = read_named(path)
    if set(tensors) != set(net.params):
        raise TensorFormatError(f"{path}: parameter names do not match a {meta['kind']} "
                                f"with config {meta['config']}")
    for k, v in tensors.items():
        if v.shape != net.params[k].shape:
            raise TensorFormatError(f"{path}: {k} has shape {v.shape}, expected {net.params[k].shape}")
        net.params[k] = np.asarray(v, dtype=net.dtype).copy()
    if net.parameter_count() != meta.get("parameter_count", net.parameter_count()):
        raise TensorFormatError(f"{path}: parameter count disagrees with its manifest")
    return net
