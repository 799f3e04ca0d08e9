"""Run configuration: INI file with sections, overridable by CLI flags.

Every output artifact embeds ``config_hash``, a digest of the effective
configuration, so artifacts can be traced back to the settings that
produced them and byte-identical reruns can be verified.
"""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, fields

from .learning import TrainConfig


@dataclass
class RunConfig:
    """Everything the pipeline commands need, with reference defaults.

    ``num_poselets`` is the dictionary size K (the reference setups use 100
    to 200 depending on the dataset); descriptor mode and PCA width control
    the feature stage; the training fields mirror TrainConfig.
    """
    # features
    schema: str = "kinect20"
    mode: str = "geo+velocity"
    window: int = 7
    pca_dim: int = 20
    lift_depth: float = 30.0
    # dictionary / assignments
    num_poselets: int = 100
    gc_fraction: float = 0.20
    scree_c: float = 2e-3
    self_pace_rounds: int = 5
    self_pace_decay: float = 0.5
    # training
    C: float = 10.0
    lambda_y: float = 100.0
    lambda_v: float = 25.0
    eps_qp: float | None = None
    max_cccp_iters: int = 3
    max_cutting_plane_iters: int = 400
    beam: int | None = 400
    supervision: str = "temporal"
    use_gc: bool = True
    seed: int = 0
    # evaluation
    min_overlap: float = 0.60
    min_run: int = 3
    jobs: int = 1

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            C=self.C, lambda_y=self.lambda_y, lambda_v=self.lambda_v,
            eps_qp=self.eps_qp, max_cccp_iters=self.max_cccp_iters,
            max_cutting_plane_iters=self.max_cutting_plane_iters,
            beam=self.beam, seed=self.seed, gc_fraction=self.gc_fraction,
            use_gc=self.use_gc, scree_c=self.scree_c,
            self_pace_decay=self.self_pace_decay,
            self_pace_rounds=self.self_pace_rounds,
            supervision=self.supervision,
        )

    def hash(self) -> str:
        doc = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(doc.encode()).hexdigest()[:12]


_INT_FIELDS = {"window", "pca_dim", "num_poselets", "max_cccp_iters",
               "max_cutting_plane_iters", "seed", "min_run", "jobs",
               "self_pace_rounds"}
_FLOAT_FIELDS = {"lift_depth", "gc_fraction", "scree_c", "C", "lambda_y",
                 "lambda_v", "min_overlap", "self_pace_decay"}
_BOOL_FIELDS = {"use_gc"}
_OPTIONAL_INT = {"beam"}
_OPTIONAL_FLOAT = {"eps_qp"}


def _coerce(key: str, raw: str):
    value = raw.strip()
    if key in _INT_FIELDS:
        return int(value)
    if key in _FLOAT_FIELDS:
        return float(value)
    if key in _BOOL_FIELDS:
        return value.lower() in ("1", "true", "yes", "on")
    if key in _OPTIONAL_INT:
        return None if value.lower() in ("none", "") else int(value)
    if key in _OPTIONAL_FLOAT:
        return None if value.lower() in ("none", "") else float(value)
    return value


def load_config(path: str | None = None,
                overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an INI file plus explicit overrides.

    Sections are organizational only; keys must be RunConfig field names.
    Unknown keys raise, naming the offender. ``overrides`` (typically CLI
    flags) win over file values; None overrides are ignored.
    """
    known = {f.name for f in fields(RunConfig)}
    values: dict = {}
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise FileNotFoundError(f"config file not found: {path}")
        for section in parser.sections():
            for key, raw in parser.items(section):
                if key not in known:
                    raise ValueError(
                        f"unknown config key {key!r} in [{section}]")
                values[key] = _coerce(key, raw)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in known:
            raise ValueError(f"unknown config override {key!r}")
        values[key] = value
    return RunConfig(**values)
