"""TOML experiment specifications.

A spec file mirrors ExperimentSpec:

    kind = "contraction"
    p = [1.0, 2.0]
    time_grid = [0.5, 1.0, 2.0]
    x0 = [5.0]
    y0 = [-5.0]

    [model]
    family = "double_well"      # linear | flat_potential | superconvex |
    dim = 1                     # double_well | piecewise | custom is API-only
    sigma = 1.0                 # scalar or row-major matrix
    # K = 1.0 / delta = 1.5 / alpha = 1.5 / K1, K2, L = ...

    [certificate]               # optional; catalog defaults used otherwise
    c = 0.0625
    eta = 2.8284271247461903
    theta = 3.0
    eps = 0.25                  # optional, defaults to c_eff / 2

    [sim]
    dt = 1e-3
    horizon = 8.0
    n_paths = 4096
    rng_seed = 7
    coupling = "hybrid"
    record_stride = 100

    [output]
    dir = "out"                 # else $WPCONTRACT_OUT, else ./wpcontract_out
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .coupling import SimConfig
from .drifts import DriftModel, make_model
from .harness import ExperimentSpec

OUTPUT_ENV_VAR = "WPCONTRACT_OUT"
_FAMILY_PARAMS = {"linear": ("K",), "flat_potential": ("delta",),
                  "superconvex": ("alpha",), "double_well": (),
                  "piecewise": ("K1", "K2", "L")}


def model_from_table(table: dict) -> DriftModel:
    family = table.get("family")
    if family not in _FAMILY_PARAMS:
        raise ValueError(f"config model.family must be one of "
                         f"{sorted(_FAMILY_PARAMS)}, got {family!r}")
    dim = int(table.get("dim", 1))
    sigma = table.get("sigma", 1.0)
    if isinstance(sigma, list):
        arr = np.asarray(sigma, dtype=float)
        if arr.ndim == 1:  # flat row-major
            arr = arr.reshape(dim, dim)
        sigma = arr
    params = {k: float(table[k]) for k in _FAMILY_PARAMS[family]}
    return make_model(family, dim=dim, sigma=sigma, **params)


def parse_model_arg(text: str, dim: int = 1, sigma=1.0) -> DriftModel:
    """CLI shorthand like 'double_well' or 'linear:K=1' or 'piecewise:K1=1,K2=2,L=3'."""
    family, _, rest = text.partition(":")
    params = {}
    if rest:
        for item in rest.split(","):
            key, _, val = item.partition("=")
            params[key.strip()] = float(val)
    return make_model(family.strip(), dim=dim, sigma=sigma, **params)


def default_output_dir(explicit=None) -> Path:
    if explicit:
        return Path(explicit)
    env = os.environ.get(OUTPUT_ENV_VAR)
    if env:
        return Path(env)
    return Path("wpcontract_out")


def load_spec(path) -> ExperimentSpec:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)

    model = model_from_table(data.get("model", {}))
    sim_tab = dict(data.get("sim", {}))
    sim = SimConfig(
        dt=float(sim_tab.get("dt", 1e-3)),
        horizon=float(sim_tab.get("horizon", 1.0)),
        n_paths=int(sim_tab.get("n_paths", 1024)),
        rng_seed=int(sim_tab.get("rng_seed", 0)),
        coupling=sim_tab.get("coupling", "reflection"),
        eta=sim_tab.get("eta"),
        merge_threshold=sim_tab.get("merge_threshold"),
        record_stride=int(sim_tab.get("record_stride", 1)),
        bridge_merge=bool(sim_tab.get("bridge_merge", True)),
    )
    cert_tab = data.get("certificate", {})
    out_tab = data.get("output", {})
    return ExperimentSpec(
        kind=data["kind"],
        model=model,
        sim=sim,
        x0=data["x0"],
        y0=data.get("y0", data["x0"]),
        p_list=tuple(float(p) for p in data.get("p", [1.0, 2.0])),
        time_grid=tuple(float(t) for t in data.get("time_grid", [sim.horizon])),
        cert_c=cert_tab.get("c"),
        cert_eta=cert_tab.get("eta"),
        cert_theta=cert_tab.get("theta"),
        eps=cert_tab.get("eps"),
        output_dir=out_tab.get("dir"),
    )
