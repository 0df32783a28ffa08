"""Case-study registry.

``build_model(case, mode, overrides)`` returns a :class:`CaseModel` whose
parameter layout matches the constraint mode (noise scales are sampled only
when the data enter).
"""

from __future__ import annotations

from dataclasses import fields, replace
from typing import Any, Mapping

from ..core import ConfigError, Uniform
from .base import MODES, CaseModel, ModelTarget, mode_flags
from .biochem import BiochemModel
from .ecosystem import EcosystemModel
from .gaussian_toy import GaussianToyModel
from .logistic import LogisticConstraints, LogisticModel

CASES = ("logistic", "ecosystem", "biochem", "gaussian-toy")

_CONSTRAINT_SUBSETS = {"both": (True, True), "early": (True, False), "late": (False, True), "none": (False, False)}


def _uniform(value, key: str) -> Uniform:
    try:
        lo, hi = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be a [lo, hi] pair") from None
    try:
        return Uniform(lo, hi)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def _check_keys(overrides: Mapping[str, Any], allowed: set[str], case: str) -> None:
    unknown = set(overrides) - allowed
    if unknown:
        raise ConfigError(f"unknown {case} model option(s): {sorted(unknown)}; allowed: {sorted(allowed)}")


def _logistic_constraints(spec) -> LogisticConstraints:
    """Accept a subset name (``both``, ``early``, ``late``) or a mapping of
    :class:`LogisticConstraints` fields."""
    base = LogisticConstraints()
    if isinstance(spec, str):
        if spec not in _CONSTRAINT_SUBSETS:
            raise ConfigError(f"constraints must be one of {sorted(_CONSTRAINT_SUBSETS)}")
        early, late = _CONSTRAINT_SUBSETS[spec]
        return replace(base, use_early=early, use_late=late)
    if isinstance(spec, Mapping):
        allowed = {f.name for f in fields(LogisticConstraints)}
        _check_keys(spec, allowed, "logistic constraint")
        return replace(base, **spec)
    raise ConfigError("constraints must be a subset name or a mapping")


def build_model(case: str, mode: str, overrides: Mapping[str, Any] | None = None) -> CaseModel:
    overrides = dict(overrides or {})
    if case not in CASES:
        raise ConfigError(f"unknown case {case!r}; choose from {CASES}")
    if mode not in MODES:
        raise ConfigError(f"unknown constraint mode {mode!r}; choose from {MODES}")
    if case == "biochem":
        _check_keys(overrides, {"grid_points", "derivative_tol"}, case)
        if mode in ("data", "both"):
            raise ConfigError("biochem has no dataset; use mode 'prior' or 'nonempirical'")
        return BiochemModel(**overrides)
    if case == "gaussian-toy":
        _check_keys(overrides, set(), case)
        if mode in ("nonempirical", "both"):
            raise ConfigError("gaussian-toy has no constraints; use mode 'prior' or 'data'")
        return GaussianToyModel()

    with_sigma = mode in ("data", "both")
    kwargs: dict[str, Any] = {"with_sigma": with_sigma}
    if case == "logistic":
        _check_keys(overrides, {"constraints", "sigma_prior"}, case)
        if "constraints" in overrides:
            kwargs["constraints"] = _logistic_constraints(overrides["constraints"])
        if "sigma_prior" in overrides:
            kwargs["sigma_prior"] = _uniform(overrides["sigma_prior"], "sigma_prior")
        return LogisticModel(**kwargs)
    _check_keys(overrides, {"sigma_prior"}, case)
    if "sigma_prior" in overrides:
        kwargs["sigma_prior"] = _uniform(overrides["sigma_prior"], "sigma_prior")
    return EcosystemModel(**kwargs)


def build_target(case: str, mode: str, overrides: Mapping[str, Any] | None = None) -> ModelTarget:
    """Target for the sampler; mode ``prior`` has no target and is rejected."""
    model = build_model(case, mode, overrides)
    if mode == "prior":
        raise ConfigError("mode 'prior' draws from the prior directly and has no sampling target")
    use_ll, use_rho = mode_flags(mode, model.supports_data)
    return ModelTarget(model, use_ll, use_rho)


__all__ = [
    "CASES", "MODES", "CaseModel", "ModelTarget", "build_model", "build_target", "mode_flags",
    "BiochemModel", "EcosystemModel", "GaussianToyModel", "LogisticModel",
]
