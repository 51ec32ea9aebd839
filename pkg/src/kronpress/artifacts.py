"""Run manifests tying a compressed model to its input and configuration."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .training import TrainConfig


def sha256_file(path: str | Path, chunk: int = 1 << 20) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while block := fh.read(chunk):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    input_path: str
    input_sha256: str
    config: TrainConfig
    final_loss: float
    epochs: int
    converged: bool
    wall_seconds: float
    model_path: str
    orders_path: str
    history_path: str
    version: str
    dims: list[int] = field(default_factory=list)
    nnz: int = 0
    fitness: float = float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["config"] = self.config.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        d = dict(d)
        d["config"] = TrainConfig.from_dict(d["config"])
        return cls(**d)

    def save(self, path: str | Path) -> None:
        # repr-based float encoding round-trips exactly
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def verify_input(self, path: str | Path | None = None) -> bool:
        return sha256_file(path or self.input_path) == self.input_sha256
