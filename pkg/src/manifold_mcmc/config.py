"""Experiment configuration files (YAML) and their validation."""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator
from pydantic import ValidationError as PydanticValidationError

from manifold_mcmc.errors import CapabilityError, ParseError, ValidationError

KernelName = Literal[
    "rwm",
    "mala",
    "decoupled_langevin",
    "simplified_mmala",
    "full_mmala",
    "hmc",
    "rmhmc",
    "multipotential_rmhmc",
    "extended_noisy_cc",
    "extended_noisy_mmala",
    "qn_precond_mala",
]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSpec(_Strict):
    name: Literal["gaussian", "quartic", "logistic"]
    mean: Optional[list[float]] = None
    cov: Optional[list[list[float]]] = None
    csv: Optional[Path] = None
    n: int = Field(100, ge=1)
    dim: int = Field(5, ge=1)
    data_seed: int = 7
    prior_variance: float = Field(100.0, gt=0)
    wishart_dof: Optional[float] = None

    @model_validator(mode="after")
    def _check(self):
        if self.name == "gaussian" and (self.mean is None or self.cov is None):
            raise ValueError("gaussian model needs 'mean' and 'cov'")
        if self.csv is not None and not self.csv.exists():
            raise ValueError(f"csv file {self.csv} does not exist")
        return self

    @property
    def model_dim(self) -> int:
        if self.name == "quartic":
            return 1
        if self.name == "gaussian":
            return len(self.mean)
        if self.csv is not None:
            with open(self.csv) as fh:
                return len(fh.readline().split(",")) - 1
        return self.dim


class KernelSpec(_Strict):
    name: KernelName
    step_size: float = Field(0.1, gt=0)
    drift_scale: Optional[float] = Field(None, ge=0)
    noise_scale: Optional[float] = Field(None, gt=0)
    leapfrog_steps: int = Field(10, ge=1)
    n_metrics: Optional[int] = Field(None, ge=1)
    metrics: Optional[list[Literal["model", "identity"]]] = None
    adjust: bool = True
    adapt_window: int = Field(1000, ge=0)
    adapt_step_size: Optional[float] = Field(None, gt=0)
    memory: int = Field(5, ge=1)
    gamma_min: float = Field(1e-6, gt=0)
    fp_tol: float = Field(1e-10, gt=0)
    fp_max_iters: int = Field(100, ge=1)

    @model_validator(mode="after")
    def _check(self):
        if self.metrics is not None and self.n_metrics is not None and len(self.metrics) != self.n_metrics:
            raise ValueError("n_metrics disagrees with the length of metrics")
        return self

    def metric_names(self) -> list[str]:
        if self.metrics is not None:
            return list(self.metrics)
        return ["model"] * (self.n_metrics or 1)


class ExperimentConfig(_Strict):
    name: str = "run"
    model: ModelSpec
    kernel: KernelSpec
    n_steps: int = Field(ge=1)
    n_chains: int = Field(1, ge=1)
    seed: int = Field(ge=0)
    burn_in: float = Field(0.25, ge=0, lt=1)
    thinning: int = Field(1, ge=1)
    output_dir: Path = Path("out")
    initial: Optional[list[float]] = None

    @model_validator(mode="after")
    def _check(self):
        if self.initial is not None and len(self.initial) != self.model.model_dim:
            raise ValueError(f"initial has {len(self.initial)} coordinates, model has {self.model.model_dim}")
        return self


def _model_capabilities(spec: ModelSpec) -> set[str]:
    caps = {"metric", "metric_derivs"}
    if spec.wishart_dof is not None:
        caps.add("sample_metric")
    if spec.name in ("gaussian", "quartic"):
        caps.add("constant_metric")
    return caps


_NEEDS = {
    "simplified_mmala": {"metric"},
    "full_mmala": {"metric", "metric_derivs"},
    "hmc": {"metric", "constant_metric"},
    "rmhmc": {"metric", "metric_derivs"},
    "multipotential_rmhmc": {"metric", "metric_derivs"},
    "extended_noisy_cc": {"sample_metric"},
    "extended_noisy_mmala": {"sample_metric", "metric_derivs"},
}


def check_config_capabilities(cfg: ExperimentConfig) -> None:
    missing = _NEEDS.get(cfg.kernel.name, set()) - _model_capabilities(cfg.model)
    if missing:
        hint = " (set model.wishart_dof to wrap the metric with a sampler)" if "sample_metric" in missing else ""
        raise CapabilityError(f"kernel {cfg.kernel.name!r} needs {', '.join(sorted(missing))}, "
                              f"which model {cfg.model.name!r} lacks{hint}")


def _set_dotted(doc: dict, key: str, value: Any) -> None:
    parts = key.split(".")
    node = doc
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ValidationError(key, "override path crosses a non-mapping value")
    node[parts[-1]] = value


def apply_overrides(doc: dict, overrides: list[str] | None) -> dict:
    """Apply ``dotted.key=value`` overrides; values are parsed as YAML scalars."""
    doc = copy.deepcopy(doc)
    for item in overrides or ():
        if "=" not in item:
            raise ValidationError(item, "override must look like key=value")
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ParseError(f"cannot parse override value {raw!r}: {exc}") from exc
        _set_dotted(doc, key.strip(), value)
    return doc


def validate_config(doc: Any) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ValidationError("<root>", "config must be a mapping")
    try:
        cfg = ExperimentConfig.model_validate(doc)
    except PydanticValidationError as exc:
        err = exc.errors()[0]
        field = ".".join(str(p) for p in err["loc"]) or "<root>"
        raise ValidationError(field, err["msg"]) from None
    check_config_capabilities(cfg)
    return cfg


def load_document(path) -> dict:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        raise ParseError(str(exc.problem), mark.line + 1 if mark else None,
                         mark.column + 1 if mark else None) from None
    except yaml.YAMLError as exc:
        raise ParseError(str(exc)) from None
    return doc if doc is not None else {}


def parse_config(path, overrides: list[str] | None = None) -> ExperimentConfig:
    """Read, override, validate and capability-check a YAML experiment file.

    Raises:
        ParseError: malformed YAML (with line and column).
        ValidationError: unknown key, missing field or bad value.
        CapabilityError: the kernel needs something the model cannot provide.
    """
    doc = load_document(path)
    return validate_config(apply_overrides(doc, overrides))
