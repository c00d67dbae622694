"""Model bundle: GBDT, likelihood table and the segmentation settings they were fitted with."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .likelihood import LikelihoodTable
from .models.gbdt import GbdtModel, ModelFormatError

BUNDLE_VERSION = 1


@dataclass
class ModelBundle:
    model: GbdtModel
    table: LikelihoodTable
    subflow_size: int
    bidirectional: bool = True
    idle_timeout_us: int = 60_000_000

    @property
    def schema(self) -> str:
        return self.model.schema

    def to_dict(self) -> dict:
        return {
            "bundle_version": BUNDLE_VERSION,
            "subflow_size": self.subflow_size,
            "bidirectional": self.bidirectional,
            "idle_timeout_us": self.idle_timeout_us,
            "likelihood_table": self.table.to_dict(),
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelBundle":
        if d.get("bundle_version") != BUNDLE_VERSION:
            raise ModelFormatError(f"unsupported bundle_version {d.get('bundle_version')!r}")
        try:
            return cls(GbdtModel.from_dict(d["model"]), LikelihoodTable.from_dict(d["likelihood_table"]),
                       int(d["subflow_size"]), bool(d["bidirectional"]), int(d["idle_timeout_us"]))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ModelFormatError):
                raise
            raise ModelFormatError(f"corrupt bundle: {exc}") from None


def save_bundle(bundle: ModelBundle, path: str | Path) -> None:
    Path(path).write_text(json.dumps(bundle.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_bundle(path: str | Path) -> ModelBundle:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not a bundle document: {exc}") from None
    return ModelBundle.from_dict(doc)
