"""
Run configuration: one JSON document per run, validated with pydantic.
"""

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from errors import InvalidConfigurationError
from spaces import SnapshotRule

logger = logging.getLogger(__name__)


class RunConfig(BaseModel):
    """Grid, field, solver and study settings; defaults follow the reference experiments"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    nx: int = Field(100, ge=2)
    m: int = Field(10, ge=1)
    field: Literal["channelized", "random_inclusions", "constant"] = "channelized"
    seed: int = 0
    kappa_max: Optional[float] = Field(None, ge=0.0)
    target_contrast: float = Field(1e4, gt=1.0)
    fill_fraction: float = Field(0.1, ge=0.0, lt=0.3)
    f: float = 0.1
    delta: float = Field(1e-3, gt=0.0)
    max_iters: int = Field(25, ge=1)
    f_low: float = 0.1
    f_high: float = 1.0
    n_s: int = Field(9, ge=2)
    snapshot_rule: Literal["auto", "fixed", "adaptive"] = "auto"
    l_max: int = Field(3, ge=1)
    l_cap: int = Field(6, ge=1)
    l_extra: int = Field(0, ge=0)
    m_off: int = Field(10, ge=1)
    m_on: List[int] = Field(default_factory=lambda: [1, 2, 3, 4, 5])
    penalty: float = Field(4.0, gt=0.0)
    fine_penalty: float = Field(10.0, ge=0.0)
    mu_p_samples: Optional[List[float]] = None
    online_mu_p: float = Field(0.2, ge=0.0, le=1.0)
    formulation: Literal["cg", "dg"] = "cg"
    dg_mass_weight: Literal["kappa_tilde", "kappa"] = "kappa_tilde"
    dedup_tol: float = Field(1e-10, gt=0.0)
    output_dir: str = "results"
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check_consistency(self):
        if self.nx % self.m != 0:
            raise ValueError(f"m: {self.m} does not divide nx={self.nx}")
        if self.nx < 2 * self.m:
            raise ValueError(f"nx: {self.nx} must be at least 2*m={2 * self.m}")
        if not self.m_on:
            raise ValueError("m_on: at least one online dimension is required")
        if min(self.m_on) < 1:
            raise ValueError(f"m_on: values must be positive, got {self.m_on}")
        if max(self.m_on) > self.m_off:
            raise ValueError(f"m_on: {max(self.m_on)} exceeds m_off={self.m_off}")
        if not self.f_low < self.f_high:
            raise ValueError(f"f_low: {self.f_low} must be below f_high={self.f_high}")
        if self.mu_p_samples is not None:
            if not self.mu_p_samples or any(not 0.0 <= mu <= 1.0 for mu in self.mu_p_samples):
                raise ValueError(f"mu_p_samples: values must lie in [0, 1], got {self.mu_p_samples}")
        return self

    def rule(self):
        """Snapshot selection for this formulation; auto is fixed for CG, adaptive for DG"""
        kind = self.snapshot_rule
        if kind == "auto":
            kind = "fixed" if self.formulation == "cg" else "adaptive"
        return SnapshotRule(kind=kind, l_max=self.l_max, l_cap=self.l_cap, l_extra=self.l_extra)

    @property
    def weight_rule(self):
        return "kappa_tilde" if self.formulation == "cg" else self.dg_mass_weight


def _describe(error):
    messages = []
    for item in error.errors():
        key = ".".join(str(part) for part in item["loc"])
        message = item["msg"].removeprefix("Value error, ")
        messages.append(f"{key}: {message}" if key else message)
    return "; ".join(messages)


def config_from_dict(data):
    if not isinstance(data, dict):
        raise InvalidConfigurationError("configuration must be a JSON object")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise InvalidConfigurationError(_describe(exc)) from exc


def parse_config(path):
    """
    Load a RunConfig from a JSON file; absent keys take their defaults.

    Raises:
        InvalidConfigurationError: for unreadable or malformed documents,
            unknown keys and constraint violations (the message names the key).
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InvalidConfigurationError(f"cannot read configuration {path}: {exc}") from exc
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise InvalidConfigurationError(f"malformed configuration {path}: {exc}") from exc
    config = config_from_dict(data)
    logger.debug("loaded configuration from %s", path)
    return config


def emit_config(config, path=None):
    """Canonical JSON (sorted keys); written to path when given"""
    text = json.dumps(config.model_dump(), sort_keys=True, indent=2) + "\n"
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    return text


def config_hash(config):
    return hashlib.sha256(emit_config(config).encode()).hexdigest()[:12]


def apply_env_overrides(config, output_dir=None):
    """
    Apply GMSFEM_OUTPUT_DIR / GMSFEM_WORKERS from the environment, then an
    explicit output directory (command line) on top.
    """
    updates = {}
    if os.getenv("GMSFEM_OUTPUT_DIR"):
        updates["output_dir"] = os.getenv("GMSFEM_OUTPUT_DIR")
    if os.getenv("GMSFEM_WORKERS"):
        try:
            updates["workers"] = int(os.getenv("GMSFEM_WORKERS"))
        except ValueError as exc:
            raise InvalidConfigurationError(
                f"GMSFEM_WORKERS: expected an integer, got {os.getenv('GMSFEM_WORKERS')!r}") from exc
    if output_dir is not None:
        updates["output_dir"] = str(output_dir)
    if not updates:
        return config
    return config_from_dict({**config.model_dump(), **updates})
