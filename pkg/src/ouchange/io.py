"""Config parsing and file formats (path CSV, metadata sidecars, JSON output)."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import DomainError
from .experiments import ExperimentConfig, Scenario
from .model import STATIONARY, DriftParams, ModelSpec, PeriodicBasis, PeriodicSpline, fourier_basis, orthonormalize
from .simulate import SamplePath
from .suffstats import DEFAULT_RULE


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DomainError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise DomainError(f"{path} is not valid JSON: {exc}") from None


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(obj, path) -> None:
    Path(path).write_text(dumps(obj))


def basis_from_config(cfg: dict) -> PeriodicBasis:
    """``{"family": "fourier", "p": 3, "period": 1}`` or
    ``{"family": "tabulated", "period": 1, "samples": [[...], ...]}``.

    Tabulated functions are interpolated by periodic cubic splines and then
    orthonormalised unless ``"orthonormalize": false``.
    """
    if "basis" in cfg and isinstance(cfg["basis"], dict):
        cfg = cfg["basis"]
    family = cfg.get("family", "fourier")
    period = float(cfg.get("period", 1.0))
    quad = int(cfg.get("quad_points", 64))
    if family == "fourier":
        p = cfg.get("p", cfg.get("harmonics"))
        if p is None:
            raise DomainError("fourier basis needs 'p'")
        return fourier_basis(int(p), period, quad)
    if family == "tabulated":
        samples = cfg.get("samples")
        if not samples:
            raise DomainError("tabulated basis needs 'samples'")
        funcs = [PeriodicSpline(row, period) for row in samples]
        if cfg.get("orthonormalize", True):
            return orthonormalize(funcs, period, quad_points=quad)
        return PeriodicBasis(period, tuple(funcs), np.eye(len(funcs)), quad, family="tabulated")
    raise DomainError(f"unknown basis family {family!r}")


def model_from_config(cfg: dict) -> ModelSpec:
    try:
        basis = basis_from_config(cfg["basis"])
        theta = DriftParams(tuple(cfg["mu"]), float(cfg["alpha"]))
        sigma = float(cfg["sigma"])
    except KeyError as exc:
        raise DomainError(f"model config is missing {exc}") from None
    init = cfg.get("init", STATIONARY)
    if isinstance(init, dict):
        init = float(init["fixed"])
    elif not isinstance(init, str):
        init = float(init)
    return ModelSpec(basis, theta, sigma, init)


def experiment_from_config(cfg: dict) -> ExperimentConfig:
    try:
        model = model_from_config(cfg["model"])
        bridge = cfg.get("bridge", {})
        return ExperimentConfig(
            model=model,
            horizons=tuple(float(t) for t in cfg["horizons"]),
            dt=float(cfg["dt"]),
            reps=int(cfg["reps"]),
            mode=cfg.get("mode", "window"),
            levels=tuple(float(v) for v in cfg.get("levels", [0.05])),
            window=tuple(float(v) for v in cfg.get("window", [0.1, 0.9])),
            fixed_s=float(cfg.get("fixed_s", 0.5)),
            scenarios=tuple(Scenario(**sc) for sc in cfg.get("scenarios", [])),
            seed=int(cfg.get("seed", 0)),
            threads=int(cfg.get("threads", 1)),
            bridge_m=int(bridge.get("m", 1000)),
            bridge_reps=int(bridge.get("reps", 10000)),
            ci_level=float(cfg.get("ci_level", 0.99)),
            oracle_s=tuple(float(v) for v in cfg.get("oracle_s", [0.25, 0.5, 0.75, 1.0])),
            thresholds=dict(cfg.get("thresholds", {})),
            rule=cfg.get("rule", DEFAULT_RULE),
            raw=cfg,
        )
    except (KeyError, TypeError) as exc:
        raise DomainError(f"experiment config is invalid: {exc!r}") from None


def write_path_csv(path: SamplePath, out) -> Path:
    """Write ``t,x`` rows at 17 significant digits plus a ``.json`` metadata sidecar."""
    out = Path(out)
    rows = "".join(f"{t:.17g},{x:.17g}\n" for t, x in zip(path.times, path.values))
    out.write_text("t,x\n" + rows)
    sidecar = out.with_suffix(".json")
    write_json(path.metadata(), sidecar)
    return sidecar


def read_path_csv(src, period: float | None = None) -> SamplePath:
    """Read a path CSV; period and step come from the sidecar when present."""
    src = Path(src)
    try:
        lines = src.read_text().splitlines()
    except FileNotFoundError:
        raise DomainError(f"no such file: {src}") from None
    if not lines or lines[0].strip().replace(" ", "") != "t,x":
        raise DomainError(f"{src}: expected header 't,x'")
    try:
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:] if ln.strip()])
    except ValueError as exc:
        raise DomainError(f"{src}: {exc}") from None
    if data.ndim != 2 or data.shape[0] < 2 or data.shape[1] != 2:
        raise DomainError(f"{src}: need at least two rows of 't,x'")
    meta = {}
    sidecar = src.with_suffix(".json")
    if sidecar.exists():
        meta = read_json(sidecar)
    nu = float(period if period is not None else meta.get("nu", math.nan))
    if not nu > 0:
        raise DomainError("the period is unknown: pass a basis or provide a metadata sidecar")
    if meta.get("nu") is not None and period is not None and not math.isclose(meta["nu"], period, rel_tol=1e-12):
        raise DomainError(f"sidecar period {meta['nu']} disagrees with basis period {period}")
    times = data[:, 0]
    dt = float(meta.get("dt") or (times[-1] - times[0]) / (times.size - 1))
    return SamplePath(times, data[:, 1], nu, dt, meta.get("seed"), meta.get("scheme", "data"),
                      meta.get("change_index"))
