"""Config-file ingestion and canonical emission.

The on-disk format is a YAML document with sections scenario / network /
devices / weights / tempering; node numbers in files are 1-based (devices
1..3, load bus 4) and converted at this boundary. Emission is canonical:
fixed key order, shortest round-trip float spelling, two-space indents -
so serialize -> parse -> serialize is byte-identical and the file content
can be hashed for run manifests.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import replace
from typing import Any, Mapping

import yaml

from .devices import InverterParams, VismaParams
from .errors import ConfigurationError
from .metrics import CostWeights
from .network import Coupling, NetworkConfig
from .sim import ScenarioConfig
from .tempering import LadderConfig


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isinf(value):
            return ".inf" if value > 0 else "-.inf"
        s = repr(value)
        if "e" in s or "E" in s:
            mant, _, exp = s.partition("e")
            if "." not in mant:
                mant += ".0"
            s = f"{mant}e{exp}"  # keep a dot so YAML reads it as a float
        elif "." not in s:
            s += ".0"
        return s
    if isinstance(value, str):
        return value
    raise TypeError(f"cannot format {value!r}")


def _emit(lines: list[str], key: str, value: Any, indent: int) -> None:
    pad = "  " * indent
    if isinstance(value, dict):
        lines.append(f"{pad}{key}:")
        for k, v in value.items():
            _emit(lines, k, v, indent + 1)
    elif isinstance(value, (list, tuple)):
        if value and isinstance(value[0], (list, tuple)):
            lines.append(f"{pad}{key}:")
            for row in value:
                lines.append(f"{pad}- [" + ", ".join(_fmt(v) for v in row) + "]")
        else:
            lines.append(f"{pad}{key}: [" + ", ".join(_fmt(v) for v in value) + "]")
    else:
        lines.append(f"{pad}{key}: {_fmt(value)}")


def scenario_to_mapping(scn: ScenarioConfig, weights: CostWeights,
                        ladder: LadderConfig) -> dict:
    net = scn.network
    coupling = {}
    for dev in range(3):
        c = net.coupling[dev]
        entry = {"kind": c.kind, "L": c.inductance}
        if c.kind == "stator":
            entry = {"kind": c.kind, "R": c.resistance, "L": c.inductance}
        coupling[f"node{dev + 1}"] = entry
    devices: dict[str, Any] = {
        "visma": {
            "J": scn.visma.J, "k_d": scn.visma.k_d, "T_d": scn.visma.T_d,
            "K_I": scn.visma.K_I, "k_V": scn.visma.k_V,
            "T_inv": scn.visma.T_inv, "K_awu": scn.visma.K_awu,
            "k_P": scn.visma.k_P1, "P_nom": scn.visma.P_nom1,
            "S_rated": scn.visma.S_rated,
        },
    }
    for n, inv in enumerate(scn.inverters, start=2):
        devices[f"inverter{n}"] = {
            "T": inv.T, "k_P": inv.k_P, "k_Q": inv.k_Q, "P_nom": inv.P_nom,
            "Q_nom": inv.Q_nom, "S_rated": inv.S_rated,
        }
    return {
        "scenario": {
            "name": scn.name, "f_nom": scn.f_nom, "V_nom": scn.V_nom,
            "P_load_before": scn.P_load_before,
            "P_load_after": scn.P_load_after, "Q_load": scn.Q_load,
            "t_start": scn.t_start, "t0": scn.t0, "t_max": scn.t_max,
            "f_low": scn.f_low, "f_high": scn.f_high, "V_low": scn.V_low,
            "V_high": scn.V_high, "relax_band": scn.relax_band,
            "confirm_window": scn.confirm_window,
            "sample_dt": scn.sample_dt,
            "ic_noise_sigma": scn.ic_noise_sigma,
        },
        "network": {
            "omega_eval": net.omega_eval,
            "lines": [[i + 1, k + 1, R, L] for i, k, R, L in net.branches],
            "coupling": coupling,
        },
        "devices": devices,
        "weights": {
            "alpha": weights.alpha, "beta": weights.beta,
            "delta_f": weights.delta_f, "delta_V": weights.delta_V,
        },
        "tempering": {
            "temperatures": list(ladder.temperatures),
            "n_swap_rounds": ladder.n_swap_rounds,
            "sweeps_per_round": ladder.sweeps_per_round,
            "iterations_per_sweep": ladder.iterations_per_sweep,
            "r_perc_coarse": ladder.r_perc_coarse,
            "r_perc_fine": ladder.r_perc_fine,
            "master_seed": ladder.master_seed,
        },
    }


def dump_config(scn: ScenarioConfig, weights: CostWeights,
                ladder: LadderConfig) -> str:
    mapping = scenario_to_mapping(scn, weights, ladder)
    lines: list[str] = []
    for key, value in mapping.items():
        _emit(lines, key, value, 0)
    return "\n".join(lines) + "\n"


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _section(m: Mapping, name: str) -> Mapping:
    sec = m.get(name)
    if not isinstance(sec, Mapping):
        raise ConfigurationError(f"missing or malformed section {name!r}")
    return sec


def _get(sec: Mapping, key: str, default=None, required: bool = False):
    if key in sec:
        return sec[key]
    if required:
        raise ConfigurationError(f"missing required key {key!r}")
    return default


def mapping_to_scenario(m: Mapping) -> tuple[ScenarioConfig, CostWeights,
                                             LadderConfig]:
    """Build the runtime objects from a parsed config mapping."""
    from .network import droop_coefficients

    s = _section(m, "scenario")
    n = _section(m, "network")
    d = _section(m, "devices")

    lines = _get(n, "lines", required=True)
    branches = []
    for row in lines:
        if len(row) != 4:
            raise ConfigurationError(f"line entry needs 4 fields, got {row!r}")
        branches.append((int(row[0]) - 1, int(row[1]) - 1,
                         float(row[2]), float(row[3])))
    coupling = {}
    for key, c in _section(n, "coupling").items():
        if not key.startswith("node"):
            raise ConfigurationError(f"coupling key {key!r} must be nodeN")
        node = int(key[4:]) - 1
        kind = _get(c, "kind", required=True)
        coupling[node] = Coupling(kind, float(_get(c, "R", 0.0)),
                                  float(_get(c, "L", required=True)))
    network = NetworkConfig(
        n_nodes=4, branches=tuple(branches), coupling=coupling,
        omega_eval=float(_get(n, "omega_eval",
                              2.0 * math.pi * float(_get(s, "f_nom", 50.0)))))

    vs = _section(d, "visma")
    s_rated = float(_get(vs, "S_rated", required=True))
    k_p1 = _get(vs, "k_P")
    visma = VismaParams(
        J=float(_get(vs, "J", required=True)),
        k_d=float(_get(vs, "k_d", required=True)),
        T_d=float(_get(vs, "T_d", required=True)),
        K_I=float(_get(vs, "K_I", required=True)),
        k_V=float(_get(vs, "k_V", 10.0)),
        T_inv=float(_get(vs, "T_inv", 0.01)),
        K_awu=float(_get(vs, "K_awu", 1.0)),
        k_P1=float(k_p1) if k_p1 is not None
        else droop_coefficients(s_rated).k_P,
        P_nom1=float(_get(vs, "P_nom", required=True)),
        S_rated=s_rated)

    inverters = []
    for idx in (2, 3):
        sec = _section(d, f"inverter{idx}")
        s_r = float(_get(sec, "S_rated", required=True))
        dflt = droop_coefficients(s_r)
        k_p = _get(sec, "k_P")
        k_q = _get(sec, "k_Q")
        inverters.append(InverterParams(
            T=float(_get(sec, "T", required=True)),
            k_P=float(k_p) if k_p is not None else dflt.k_P,
            k_Q=float(k_q) if k_q is not None else dflt.k_Q,
            P_nom=float(_get(sec, "P_nom", required=True)),
            Q_nom=float(_get(sec, "Q_nom", 0.0)),
            S_rated=s_r))

    scn = ScenarioConfig(
        network=network, visma=visma, inverters=tuple(inverters),
        P_load_before=float(_get(s, "P_load_before", required=True)),
        P_load_after=float(_get(s, "P_load_after", required=True)),
        Q_load=float(_get(s, "Q_load", 0.0)),
        f_nom=float(_get(s, "f_nom", 50.0)),
        V_nom=float(_get(s, "V_nom", 230.0)),
        t_start=float(_get(s, "t_start", 0.0)),
        t0=float(_get(s, "t0", 1.0)),
        t_max=float(_get(s, "t_max", 120.0)),
        f_low=float(_get(s, "f_low", 49.8)),
        f_high=float(_get(s, "f_high", 50.2)),
        V_low=float(_get(s, "V_low", 207.0)),
        V_high=float(_get(s, "V_high", 253.0)),
        relax_band=float(_get(s, "relax_band", 1e-3)),
        confirm_window=float(_get(s, "confirm_window", 5.0)),
        sample_dt=float(_get(s, "sample_dt", 1e-3)),
        ic_noise_sigma=float(_get(s, "ic_noise_sigma", 3e-5)),
        name=str(_get(s, "name", "custom")))

    w = m.get("weights") or {}
    weights = CostWeights(alpha=float(_get(w, "alpha", 7.0)),
                          beta=float(_get(w, "beta", 0.027)),
                          delta_f=float(_get(w, "delta_f", 0.05)),
                          delta_V=float(_get(w, "delta_V", 1e40)))

    t = m.get("tempering") or {}
    init_phi = _get(t, "initial_phi")
    ladder = LadderConfig(
        temperatures=tuple(float(x) for x in _get(
            t, "temperatures", list(LadderConfig.temperatures))),
        n_swap_rounds=int(_get(t, "n_swap_rounds", 200)),
        sweeps_per_round=int(_get(t, "sweeps_per_round", 2)),
        iterations_per_sweep=int(_get(t, "iterations_per_sweep", 4)),
        r_perc_coarse=float(_get(t, "r_perc_coarse", 0.8)),
        r_perc_fine=float(_get(t, "r_perc_fine", 0.4)),
        master_seed=int(_get(t, "master_seed", 0)),
        initial_phi=replace(visma, J=float(init_phi[0]),
                            k_d=float(init_phi[1]), T_d=float(init_phi[2]),
                            K_I=float(init_phi[3]))
        if init_phi is not None else None)
    return scn, weights, ladder


def parse_config(text: str) -> tuple[ScenarioConfig, CostWeights,
                                     LadderConfig]:
    try:
        mapping = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(mapping, Mapping):
        raise ConfigurationError("config root must be a mapping")
    return mapping_to_scenario(mapping)


def load_config(path) -> tuple[ScenarioConfig, CostWeights, LadderConfig]:
    with open(path) as fh:
        return parse_config(fh.read())


def validate_mapping(m: Mapping) -> list[str]:
    """Collect every problem of a raw config mapping without raising."""
    issues: list[str] = []
    try:
        scn, weights, ladder = mapping_to_scenario(m)
    except (ConfigurationError, ValueError, TypeError, KeyError) as exc:
        issues.append(str(exc))
        return issues
    from .scenario import validate as validate_scenario

    issues.extend(validate_scenario(scn))
    return issues
