"""Versioned model checkpoints (``.npz`` container)."""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict

import numpy as np

from .models import GcnParams, LossTrace, TrainConfig, TrainedModel

FORMAT_VERSION = 1


def save_checkpoint(path, model, config_hash="", extra=None):
    arrays = {f"param/{k}": v for k, v in model.params.weights.items()}
    arrays["output"] = model.output
    arrays["trace"] = model.trace.as_array()
    if model.fixed_mass is not None:
        arrays["fixed_mass"] = model.fixed_mass
    header = {
        "format_version": FORMAT_VERSION,
        "config": asdict(model.config),
        "config_hash": config_hash,
        "variational": model.params.variational,
        "extra": extra or {},
    }
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    _write_npz(path, arrays)


def _write_npz(path, arrays):
    """``np.savez`` layout with fixed entry timestamps, so equal models give equal bytes."""
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def load_checkpoint(path):
    """Returns ``(model, header)``."""
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
        weights = {k.split("/", 1)[1]: data[k] for k in data.files if k.startswith("param/")}
        output = data["output"]
        trace_arr = data["trace"]
        fixed = data["fixed_mass"] if "fixed_mass" in data.files else None
    config = TrainConfig(**header["config"])
    trace = LossTrace(list(trace_arr[:, 0]), list(trace_arr[:, 1]),
                      list(trace_arr[:, 2]) if config.variational else [])
    model = TrainedModel(config, GcnParams(weights, header["variational"]), output, trace, fixed)
    return model, header
