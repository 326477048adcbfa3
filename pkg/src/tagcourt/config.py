"""Pipeline configuration: strict JSON validation with filled defaults.

Unknown keys are rejected and every error names the offending field with a
JSON-pointer-style path. One global seed fans out to per-stage seeds via a
labeled hash, so each stage stays independently deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional


class ConfigError(ValueError):
    pass


# Schema: section -> key -> (type check, default, allowed values or None).
_BOOL = ("bool", lambda v: isinstance(v, bool))
_INT = ("integer", lambda v: isinstance(v, int) and not isinstance(v, bool))
_NUM = ("number", lambda v: isinstance(v, (int, float)) and not isinstance(v, bool))
_STR = ("string", lambda v: isinstance(v, str))
_INT_PAIR = (
    "pair of integers",
    lambda v: isinstance(v, list) and len(v) == 2 and all(isinstance(x, int) for x in v),
)

_SCHEMA: Dict[str, Dict[str, tuple]] = {
    "": {
        "workdir": (_STR, "run", None),
        "dataset_profile": (_STR, "synthetic", ("arxiv", "history", "cora", "pubmed", "synthetic")),
        "seed": (_INT, 0, None),
        "backend": (None, None, None),
        "synth": (None, None, None),
        "inject": (None, None, None),
        "embed": (None, None, None),
        "court": (None, None, None),
        "train": (None, None, None),
        "cost": (None, None, None),
    },
    "backend": {
        "kind": (_STR, "oracle", ("oracle", "http")),
        "accuracy": (_NUM, 1.0, None),
        "endpoint": (_STR, "", None),
        "model": (_STR, "", None),
        "judge_endpoint": (_STR, "", None),
        "judge_model": (_STR, "", None),
        "max_tokens": (_INT, 512, None),
        "max_retries": (_INT, 3, None),
    },
    "synth": {
        "n": (_INT, 400, None),
        "communities": (_INT, 5, None),
        "intra_p": (_NUM, 0.05, None),
        "inter_p": (_NUM, 0.005, None),
        "vocab_per_community": (_INT, 60, None),
        "sentences_per_node": (_INT_PAIR, [3, 6], None),
    },
    "inject": {
        "m": (_INT, 5, None),
        "k": (_INT, 50, None),
        "q": (_INT, 5, None),
        "p": (_INT, 1, None),
        "insert_fraction": (_NUM, 0.3, None),
        "replace_fraction": (_NUM, 0.34, None),
    },
    "embed": {
        "dim": (_INT, 64, None),
        "verdict_encoding": (
            _STR,
            "evidence_and_judgment",
            ("evidence_and_judgment", "judgment_only", "evidence_only"),
        ),
        "remote_endpoint": (_STR, "", None),
        "remote_model": (_STR, "", None),
        "remote_batch": (_INT, 32, None),
    },
    "court": {
        "n_contextual": (_INT, 5, None),
        "n_structural": (_INT, 5, None),
        "court_mode": (_STR, "full_court", ("one_prosecutor", "two_prosecutors", "full_court")),
        "parallelism": (_INT, 1, None),
        "max_parse_retries": (_INT, 2, None),
        "temperature": (_NUM, 0.7, None),
    },
    "train": {
        "learning_rate": (_NUM, 3e-3, None),
        "epochs": (_INT, 25, None),
        "batch_size": (_INT, 64, None),
        "weight_decay": (_NUM, 1e-3, None),
        "hidden_dim": (_INT, 64, None),
        "gnn_layers": (_INT, 2, None),
        "neighbor_cap": (_INT, 8, None),
        "rounds": (_INT, 256, None),
        "fusion_mode": (_STR, "gate", ("gate", "mean", "verdict_only", "orig_only")),
    },
    "cost": {
        "models": (None, None, None),
        "tallies": (None, None, None),
        "n_nodes": (_INT, 0, None),
        "parallelism": (_INT, 1, None),
    },
}


@dataclass
class PipelineConfig:
    raw: Dict[str, Any]
    path: Optional[Path] = None
    seed_override: Optional[int] = None

    def __getitem__(self, section: str) -> Dict[str, Any]:
        return self.raw[section]

    @property
    def seed(self) -> int:
        return self.seed_override if self.seed_override is not None else self.raw["seed"]

    @property
    def workdir(self) -> Path:
        base = self.path.parent if self.path is not None else Path(".")
        wd = Path(self.raw["workdir"])
        return wd if wd.is_absolute() else base / wd

    def path_for(self, name: str) -> Path:
        defaults = {
            "nodes_raw": "raw/nodes.jsonl",
            "edges_raw": "raw/edges.tsv",
            "nodes": "data/nodes.jsonl",
            "edges": "data/edges.tsv",
            "labels": "data/labels.jsonl",
            "idmap": "data/idmap.json",
            "injection_report": "data/injection_report.json",
            "embeddings_orig": "embeddings_orig.bin",
            "embeddings_verd": "embeddings_verd.bin",
            "store": "store",
            "params": "params.bin",
            "loss_trace": "loss_trace.csv",
            "scores": "scores.csv",
            "metrics": "metrics.json",
            "roc": "roc.csv",
            "cost_report": "cost_report.json",
        }
        return self.workdir / defaults[name]


def _validate_section(obj: Dict[str, Any], section: str, path: str) -> Dict[str, Any]:
    schema = _SCHEMA[section]
    if not isinstance(obj, dict):
        raise ConfigError(f"{path or '/'}: expected an object")
    out: Dict[str, Any] = {}
    for key, value in obj.items():
        if key not in schema:
            allowed = ", ".join(sorted(schema))
            raise ConfigError(f"{path}/{key}: unknown key (allowed: {allowed})")
        check, _, choices = schema[key]
        if check is None:
            continue  # nested section or free-form mapping, handled below
        type_name, ok = check
        if not ok(value):
            raise ConfigError(f"{path}/{key}: expected {type_name}, got {value!r}")
        if choices is not None and value not in choices:
            raise ConfigError(f"{path}/{key}: must be one of {list(choices)}, got {value!r}")
        out[key] = value
    for key, (check, default, _) in schema.items():
        if check is not None and key not in out:
            out[key] = default
    return out


def validate_config(source, seed_override: Optional[int] = None) -> PipelineConfig:
    """Load + validate a JSON config file (or dict); fills all defaults."""
    path = None
    if isinstance(source, dict):
        obj = source
    else:
        path = Path(source)
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}")
    top = _validate_section(obj, "", "")
    for section in ("backend", "synth", "inject", "embed", "court", "train", "cost"):
        sub = obj.get(section, {})
        top[section] = _validate_section(sub, section, f"/{section}")
    cost_extra = obj.get("cost", {})
    top["cost"]["models"] = _validate_cost_models(cost_extra.get("models", {}))
    top["cost"]["tallies"] = _validate_cost_tallies(cost_extra.get("tallies", {}))
    if top["backend"]["kind"] == "http" and not top["backend"]["endpoint"]:
        raise ConfigError("/backend/endpoint: required when backend kind is http")
    return PipelineConfig(raw=top, path=path, seed_override=seed_override)


def _validate_cost_models(obj) -> Dict[str, Dict[str, float]]:
    if not isinstance(obj, dict):
        raise ConfigError("/cost/models: expected an object")
    out = {}
    for name, spec in obj.items():
        if not isinstance(spec, dict):
            raise ConfigError(f"/cost/models/{name}: expected an object")
        for key in spec:
            if key not in ("price_per_mtok", "tokens_per_second"):
                raise ConfigError(f"/cost/models/{name}/{key}: unknown key")
        try:
            out[name] = {
                "price_per_mtok": float(spec["price_per_mtok"]),
                "tokens_per_second": float(spec["tokens_per_second"]),
            }
        except KeyError as exc:
            raise ConfigError(f"/cost/models/{name}: missing {exc.args[0]}")
    return out


def _validate_cost_tallies(obj) -> Dict[str, Dict[str, float]]:
    if not isinstance(obj, dict):
        raise ConfigError("/cost/tallies: expected an object")
    out = {}
    for name, spec in obj.items():
        if not isinstance(spec, dict):
            raise ConfigError(f"/cost/tallies/{name}: expected an object")
        for key in spec:
            if key not in ("prompt_tokens", "output_tokens"):
                raise ConfigError(f"/cost/tallies/{name}/{key}: unknown key")
        try:
            out[name] = {
                "prompt_tokens": float(spec["prompt_tokens"]),
                "output_tokens": float(spec["output_tokens"]),
            }
        except KeyError as exc:
            raise ConfigError(f"/cost/tallies/{name}: missing {exc.args[0]}")
    return out
