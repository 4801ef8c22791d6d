"""Append-only exploration log with exact propensities and a by-day split.

One JSON object per line, so files are auditable, diff-able, and can be
streamed.  Floats go through Python's repr (shortest round-trip decimal),
which makes write-then-read bit-exact.  The run manifest sits next to the
log and makes it self-describing: grid values, environment config hash,
and the master seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import ConfigError

SCHEMA_VERSION = 1


def clip_rewards(n_repin: int, n_p2p: int) -> tuple[int, int]:
    """Clipped binary rewards: min(count, 1) per objective."""
    if n_repin < 0 or n_p2p < 0:
        raise ValueError(f"negative engagement counts ({n_repin}, {n_p2p})")
    return min(int(n_repin), 1), min(int(n_p2p), 1)


@dataclass
class InteractionRecord:
    """One logged exploration tuple: context, action, propensity, rewards."""

    day_index: int
    user_id: int
    action_index: int
    propensity: float
    n_repin: int
    n_p2p: int
    r_repin: int
    r_p2p: int
    features: dict
    record_id: int | None = field(default=None, compare=False)  # position in file, set on read

    def validate(self) -> None:
        if self.day_index < 0:
            raise ValueError("day_index must be non-negative")
        if self.n_repin < 0 or self.n_p2p < 0:
            raise ValueError("negative engagement counts")
        expected = clip_rewards(self.n_repin, self.n_p2p)
        if (self.r_repin, self.r_p2p) != expected:
            raise ValueError(
                f"rewards ({self.r_repin}, {self.r_p2p}) are not the clipped "
                f"counts {expected}"
            )
        if not 0.0 < self.propensity <= 1.0:
            raise ValueError(f"propensity {self.propensity} outside (0, 1]")

    def to_json_obj(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "day_index": self.day_index,
            "user_id": self.user_id,
            "action_index": self.action_index,
            "propensity": self.propensity,
            "n_repin": self.n_repin,
            "n_p2p": self.n_p2p,
            "r_repin": self.r_repin,
            "r_p2p": self.r_p2p,
            "features": self.features,
        }

    @classmethod
    def from_json_obj(cls, obj: dict, record_id: int | None = None) -> "InteractionRecord":
        if obj.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {obj.get('schema_version')!r}")
        return cls(
            day_index=obj["day_index"],
            user_id=obj["user_id"],
            action_index=obj["action_index"],
            propensity=obj["propensity"],
            n_repin=obj["n_repin"],
            n_p2p=obj["n_p2p"],
            r_repin=obj["r_repin"],
            r_p2p=obj["r_p2p"],
            features=obj["features"],
            record_id=record_id,
        )


class LogWriter:
    """Single-writer append handle.  Close (or use as context manager) to seal."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", encoding="utf-8")
        self.count = 0

    def append(self, record: InteractionRecord) -> None:
        record.validate()
        self._fh.write(json.dumps(record.to_json_obj(), separators=(",", ":")))
        self._fh.write("\n")
        self.count += 1

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self) -> "LogWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def iter_records(path: str | Path) -> Iterator[InteractionRecord]:
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{i + 1}: malformed record: {e}") from e
            yield InteractionRecord.from_json_obj(obj, record_id=i)


def read_all(path: str | Path) -> list[InteractionRecord]:
    return list(iter_records(path))


@dataclass
class DatasetSplit:
    """Disjoint by-day partition: train days [0, t), holdout days [t, t+h)."""

    train: list[InteractionRecord]
    holdout: list[InteractionRecord]
    train_days: int
    holdout_days: int


def temporal_split(
    records: Iterable[InteractionRecord],
    train_days: int = 14,
    holdout_days: int = 7,
) -> DatasetSplit:
    """Split by day boundary; a record on the boundary day goes to holdout."""
    if train_days < 0 or holdout_days < 0:
        raise ConfigError("split day counts must be non-negative")
    train: list[InteractionRecord] = []
    holdout: list[InteractionRecord] = []
    total = train_days + holdout_days
    for rec in records:
        if rec.day_index < train_days:
            train.append(rec)
        elif rec.day_index < total:
            holdout.append(rec)
        else:
            raise ValueError(
                f"record on day {rec.day_index} outside the configured "
                f"{total}-day window"
            )
    return DatasetSplit(train=train, holdout=holdout, train_days=train_days, holdout_days=holdout_days)


def write_manifest(path: str | Path, manifest: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
