"""Run configuration: a versioned JSON document validated against a bundled schema."""
from __future__ import annotations

import copy
import json
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema

from .adapter.masking import MaskSpec
from .adapter.model import ArchSpec
from .adapter.training import DESK_ARCH, TrainConfig
from .detect import BackendConfig
from .errors import FormatError

SCHEMA_VERSION = 1

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "suite": {"n_sequences": 25, "base": {}},
    "reducers": {"tsr_degree": 5, "pct_components": 10},
    "train": {
        "learning_rate": 1e-3,
        "batch_size": 32,
        "epochs": 100,
        "latent_dim": 10,
        "max_pixels": 1024,
        "mask": {"patch_len": 16, "mask_ratio": 0.5, "noise_std": 0.1},
        "arch": {"input_len": DESK_ARCH["input_len"], "channels": list(DESK_ARCH["channels"])},
    },
    "backend": {"kind": "mock", "endpoint_url": "", "timeout_s": 30.0, "retries": 2},
    "bench": {"nms_iou": 0.5, "jobs": 1, "max_failure_fraction": 0.1},
}


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    text = resources.files("airtkit").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def validate(doc, name: str, source="document") -> None:
    """Raise FormatError naming the JSON pointer of the first violation."""
    validator = jsonschema.Draft202012Validator(load_schema(name))
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        pointer = "/" + "/".join(str(p) for p in err.absolute_path)
        raise FormatError(f"{source}: schema violation at {pointer}: {err.message}")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


class RunConfig:
    """Validated configuration with defaults filled in.

    ``RunConfig.load(path)`` reads a JSON file; ``RunConfig({...})`` takes a
    mapping. Either way the document must carry ``schema_version`` and
    unknown keys are rejected.
    """

    def __init__(self, doc: dict | None = None, source="config"):
        doc = {"schema_version": SCHEMA_VERSION} if doc is None else doc
        validate(doc, "runconfig", source)
        self.data = _merge(DEFAULTS, doc)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON: {exc}", offset=exc.pos) from exc
        return cls(doc, source=str(path))

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def with_seed(self, seed: int | None) -> "RunConfig":
        if seed is not None:
            self.data["seed"] = int(seed)
        return self

    def train_config(self) -> TrainConfig:
        t = self.data["train"]
        mask = dict(t["mask"])
        mask.setdefault("seed", self.seed)
        arch = dict(t["arch"], latent_dim=t["latent_dim"])
        return TrainConfig(
            learning_rate=t["learning_rate"],
            batch_size=t["batch_size"],
            epochs=t["epochs"],
            latent_dim=t["latent_dim"],
            mask=MaskSpec(**mask),
            seed=self.seed,
            max_pixels=t["max_pixels"],
            arch=ArchSpec(**arch),
        )

    def backend_config(self, kind=None, endpoint=None) -> BackendConfig:
        b = dict(self.data["backend"])
        if kind is not None:
            b["kind"] = kind
        if endpoint is not None:
            b["endpoint_url"] = endpoint
        return BackendConfig(**b)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)
