"""Versioned checkpoint container for trained value models.

The file is a plain zip of .npy entries (np.load can open it), but written
with fixed entry timestamps and sorted names so that identical models
produce byte-identical files.  A meta entry records the model config, the
grid hash the model was trained against, and the training seed; loading
verifies the grid hash.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .actions import ActionGrid
from .errors import GridMismatchError
from .valuenet import ModelConfig, ValueModel

FORMAT_VERSION = 1
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def _write_npy(zf: zipfile.ZipFile, name: str, arr: np.ndarray) -> None:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    info = zipfile.ZipInfo(name + ".npy", date_time=_ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    zf.writestr(info, buf.getvalue())


def save_model(model: ValueModel, path: str | Path) -> str:
    """Write the checkpoint and return its sha256 hex digest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": FORMAT_VERSION,
        "model_config": asdict(model.config),
        "grid_hash": model.grid_hash,
        "train_seed": model.train_seed,
        "loss_curve": model.loss_curve,
        "param_names": sorted(model.params),
        "bn_names": sorted(model.bn_state),
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("meta.json", date_time=_ZIP_EPOCH)
        zf.writestr(info, json.dumps(meta, sort_keys=True, separators=(",", ":")))
        for name in sorted(model.params):
            _write_npy(zf, f"param/{name}", model.params[name])
        for name in sorted(model.bn_state):
            _write_npy(zf, f"bn/{name}", model.bn_state[name])
    blob = buf.getvalue()
    path.write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def checkpoint_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_model(path: str | Path, grid: ActionGrid | None = None) -> ValueModel:
    """Load a checkpoint; verifies the grid hash when a grid is supplied."""
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')!r}")
        cfg_dict = dict(meta["model_config"])
        for key in ("backbone_dims", "feature_groups"):
            cfg_dict[key] = tuple(cfg_dict[key])
        config = ModelConfig(**cfg_dict)
        params = {
            name: np.lib.format.read_array(io.BytesIO(zf.read(f"param/{name}.npy")))
            for name in meta["param_names"]
        }
        bn_state = {
            name: np.lib.format.read_array(io.BytesIO(zf.read(f"bn/{name}.npy")))
            for name in meta["bn_names"]
        }
    if grid is not None and grid.content_hash() != meta["grid_hash"]:
        raise GridMismatchError(
            "checkpoint was trained against a different action grid "
            f"({meta['grid_hash'][:12]}... vs {grid.content_hash()[:12]}...)"
        )
    return ValueModel(
        config=config,
        params=params,
        bn_state=bn_state,
        grid_hash=meta["grid_hash"],
        train_seed=meta["train_seed"],
        loss_curve=[tuple(p) for p in meta["loss_curve"]],
    )
