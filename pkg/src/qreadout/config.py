"""Run configuration: one YAML file, schema-checked, with flag/env overrides."""

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from qreadout import dataset
from qreadout.distill import DistillConfig
from qreadout.nn import NetworkSpec, TrainConfig
from qreadout.preprocess import AveragingSpec

ARTIFACTS_ENV = "QREADOUT_ARTIFACTS"


class ConfigError(ValueError):
    """Schema or consistency violation; ``key_path`` names the offending entry."""

    def __init__(self, key_path, message):
        super().__init__(f"{key_path or '<root>'}: {message}")
        self.key_path = key_path


_count = {"type": "integer", "minimum": 1}
_seed = {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec = {"type": "array", "items": {"type": "number"}}

_train = {
    "type": "object",
    "required": ["seed"],
    "additionalProperties": False,
    "properties": {
        "seed": _seed,
        "learning_rate": _pos,
        "epochs": _count,
        "batch_size": _count,
        "optimizer": {"enum": ["adam", "sgd"]},
        "dtype": {"enum": ["float32", "float64"]},
        "weight_decay": {"type": "number", "minimum": 0},
        "alpha": {"type": "number", "minimum": 0, "maximum": 1},
        "temperature": _pos,
        "hidden": {"type": "array", "items": _count},
    },
}

SCHEMA = {
    "type": "object",
    "required": ["synth", "split", "architectures", "arch_map", "teacher", "student"],
    "additionalProperties": False,
    "properties": {
        "paths": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"artifacts": {"type": "string"},
                           "dataset": {"type": "string"},
                           "reports": {"type": "string"}},
        },
        "synth": {
            "type": "object",
            "required": ["seed"],
            "additionalProperties": False,
            "properties": {
                "seed": _seed,
                "preset": {"enum": ["desk"]},
                "traces_per_config": {"type": "integer", "minimum": 0},
                "samples_per_channel": _count,
                "sample_period_ns": _pos,
                "adc_scale": _pos,
                "center0": {"type": "array", "items": _vec},
                "center1": {"type": "array", "items": _vec},
                "ring_up_ns": _vec,
                "noise": _vec,
                "t1_ns": _vec,
                "crosstalk": {"type": "array", "items": _vec},
            },
        },
        "split": {
            "type": "object",
            "required": ["seed", "train_per_config", "test_per_config"],
            "additionalProperties": False,
            "properties": {"seed": _seed, "train_per_config": _count, "test_per_config": _count},
        },
        "architectures": {
            "type": "object",
            "minProperties": 1,
            "additionalProperties": {
                "type": "object",
                "required": ["groups"],
                "additionalProperties": False,
                "properties": {"groups": _count, "window_at_reference": _count,
                               "hidden": {"type": "array", "items": _count}},
            },
        },
        "arch_map": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "teacher": _train,
        "student": _train,
        "ablation_qubits": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "reference_duration_ns": _pos,
        "durations_ns": {"type": "array", "items": _pos, "minItems": 1},
        "clock_mhz": _pos,
        "fx_rounding": {"enum": ["truncate", "nearest"]},
    },
}


@dataclass
class Architecture:
    name: str
    groups: int
    window_at_reference: int | None
    hidden: tuple

    def averaging(self, n_samples: int, reference_samples: int) -> AveragingSpec:
        """The window override only applies at the reference trace length."""
        w = self.window_at_reference if n_samples == reference_samples else None
        return AveragingSpec(self.groups, w)

    def spec(self, with_mf=True) -> NetworkSpec:
        return NetworkSpec(2 * self.groups + int(with_mf), self.hidden)


@dataclass
class RunConfig:
    raw: dict
    artifacts: Path
    dataset_dir: Path
    reports: Path
    synth: dataset.SynthConfig
    train_per_config: int
    test_per_config: int
    split_seed: int
    architectures: dict
    arch_map: list
    teacher_spec: NetworkSpec
    teacher_cfg: TrainConfig
    student_cfg: DistillConfig
    ablation_qubits: list
    reference_duration_ns: float
    durations_ns: list
    clock_mhz: float
    fx_rounding: str

    @property
    def n_qubits(self) -> int:
        return self.synth.n_qubits

    @property
    def reference_samples(self) -> int:
        return int(self.reference_duration_ns // self.synth.sample_period_ns)

    def arch_for(self, qubit) -> Architecture:
        return self.architectures[self.arch_map[qubit]]

    def config_hash(self) -> str:
        content = {k: v for k, v in self.raw.items() if k != "paths"}
        blob = json.dumps(content, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def seeds(self) -> dict:
        return {"synth": self.synth.seed, "split": self.split_seed,
                "teacher": self.teacher_cfg.seed, "student": self.student_cfg.seed}


def default_config_path():
    return resources.files("qreadout") / "configs" / "desk.yaml"


def load_raw(path=None) -> dict:
    src = default_config_path() if path is None else Path(path)
    try:
        data = yaml.safe_load(src.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("", f"not valid YAML: {exc}") from exc
    return {} if data is None else data


def _path(error) -> str:
    return ".".join(str(p) for p in error.absolute_path)


def _train_cfg(d, cls, **extra):
    keys = {"learning_rate", "epochs", "batch_size", "seed", "optimizer", "dtype",
            "weight_decay", "alpha", "temperature"}
    kw = {k: v for k, v in d.items() if k in keys}
    kw.update(extra)
    return cls(**kw)


def build(raw: dict, overrides: dict | None = None, base_dir=None) -> RunConfig:
    """Validate ``raw`` (after overrides) and build a :class:`RunConfig`.

    ``overrides`` maps dotted key paths to values (flag > env > file).
    """
    raw = copy.deepcopy(raw)
    env_root = os.environ.get(ARTIFACTS_ENV)
    if env_root:
        raw.setdefault("paths", {})["artifacts"] = env_root
    for key, value in (overrides or {}).items():
        node = raw
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    errors = sorted(jsonschema.Draft7Validator(SCHEMA).iter_errors(raw),
                    key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        raise ConfigError(_path(errors[0]), errors[0].message)

    s = raw["synth"]
    base = dataset.desk_config() if s.get("preset", "desk") == "desk" else None
    fields = {k: v for k, v in s.items() if k != "preset"}
    try:
        synth = dataset.SynthConfig(**{**{k: getattr(base, k) for k in (
            "center0", "center1", "ring_up_ns", "noise", "t1_ns", "crosstalk",
            "samples_per_channel", "sample_period_ns", "adc_scale")}, **fields})
    except (ValueError, TypeError) as exc:
        raise ConfigError("synth", str(exc)) from exc

    archs = {}
    for name, a in raw["architectures"].items():
        archs[name] = Architecture(name, a["groups"], a.get("window_at_reference"),
                                   tuple(a.get("hidden", (16, 8))))
    arch_map = raw["arch_map"]
    if len(arch_map) != synth.n_qubits:
        raise ConfigError("arch_map", f"needs one entry per qubit ({synth.n_qubits})")
    for i, name in enumerate(arch_map):
        if name not in archs:
            raise ConfigError(f"arch_map.{i}", f"unknown architecture {name!r}")
    for i, q in enumerate(raw.get("ablation_qubits", [])):
        if q >= synth.n_qubits:
            raise ConfigError(f"ablation_qubits.{i}", f"qubit {q} out of range")

    t = raw["teacher"]
    ref = float(raw.get("reference_duration_ns", 1000))
    durations = sorted(float(d) for d in raw.get("durations_ns", [ref]))
    full = synth.samples_per_channel * synth.sample_period_ns
    for i, d in enumerate(durations):
        if d > full + 1e-9:
            raise ConfigError(f"durations_ns.{i}", f"{d} ns exceeds generated {full} ns")
    if ref > full + 1e-9:
        raise ConfigError("reference_duration_ns", f"{ref} ns exceeds generated {full} ns")
    if ref not in durations:
        durations.append(ref)
        durations.sort()

    base_dir = Path(base_dir or ".")
    paths = raw.get("paths", {})
    artifacts = base_dir / paths.get("artifacts", "artifacts")
    for key in ("artifacts", "dataset", "reports"):
        target = Path(paths[key]) if key in paths else None
        if target is not None and (base_dir / target).exists() and not (base_dir / target).is_dir():
            raise ConfigError(f"paths.{key}", f"{target} exists and is not a directory")
    dataset_dir = base_dir / paths["dataset"] if "dataset" in paths else artifacts / "data"
    reports = base_dir / paths["reports"] if "reports" in paths else artifacts / "reports"

    try:
        teacher_cfg = _train_cfg(t, TrainConfig)
        student_cfg = _train_cfg(raw["student"], DistillConfig)
    except ValueError as exc:
        raise ConfigError("teacher/student", str(exc)) from exc

    return RunConfig(
        raw=raw, artifacts=artifacts, dataset_dir=dataset_dir, reports=reports,
        synth=synth,
        train_per_config=raw["split"]["train_per_config"],
        test_per_config=raw["split"]["test_per_config"],
        split_seed=raw["split"]["seed"],
        architectures=archs, arch_map=list(arch_map),
        teacher_spec=NetworkSpec(2 * int(ref // synth.sample_period_ns),
                                 tuple(t.get("hidden", (1000, 500, 250)))),
        teacher_cfg=teacher_cfg, student_cfg=student_cfg,
        ablation_qubits=list(raw.get("ablation_qubits", [])),
        reference_duration_ns=ref,
        durations_ns=[int(d) if float(d).is_integer() else d for d in durations],
        clock_mhz=float(raw.get("clock_mhz", 100.0)),
        fx_rounding=raw.get("fx_rounding", "truncate"),
    )


def load(path=None, overrides=None) -> RunConfig:
    """Relative paths in the file resolve against the working directory."""
    return build(load_raw(path), overrides, base_dir=Path.cwd())


def synth_to_jsonable(cfg: dataset.SynthConfig) -> dict:
    return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in vars(cfg).items()}
