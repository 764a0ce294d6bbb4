"""Batch command-line front end.

Subcommands: steady, simulate, optimize, landscape, errors. Every run
resolves its scenario (built-in id or config file plus overrides), writes
the resolved config into the output directory, and stamps each CSV with
manifest comment lines (command, seed, config hash) so results are
attributable and reproducible. Exit codes: 0 success, 2 configuration
error, 3 infeasible optimisation start, 4 solver failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .configfile import (config_hash, dump_config, mapping_to_scenario,
                         validate_mapping)
from .devices import VismaParams
from .errors import (ConfigurationError, InfeasibleStartError,
                     InstabilityError, NoSteadyStateError)
from .metrics import CostWeights, check_constraints, cost, cost_parts
from .scenario import (default_initial_phi, default_weights,
                       load_paper_scenario, validate)
from .sim import (DEFAULT_ATOL, DEFAULT_RTOL, ScenarioConfig,
                  evaluate_transient, run_perturbation, solve_steady_state,
                  steady_injections)
from .tempering import (LadderConfig, ScenarioObjective, TemperingResult,
                        run_tempering)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_SOLVER = 4


@dataclass
class RunManifest:
    command: str
    seed: int
    config_text: str
    scenario_name: str
    out_dir: Path

    def header_lines(self) -> list[str]:
        return [f"vismaopt {self.command}",
                f"scenario: {self.scenario_name}",
                f"seed: {self.seed}",
                f"config-hash: sha256:{config_hash(self.config_text)}"]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="scenario config file (YAML)")
    p.add_argument("--scenario", type=int, choices=(1, 2),
                   help="built-in scenario id (default: 1)")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", type=Path, default=Path("."),
                   help="output directory")
    p.add_argument("--rtol", type=float, default=DEFAULT_RTOL)
    p.add_argument("--atol", type=float, default=DEFAULT_ATOL)
    p.add_argument("--alpha", type=float, help="cost weight alpha override")
    p.add_argument("--beta", type=float, help="cost weight beta override")
    p.add_argument("--delta-f", type=float, help="frequency peak scale")
    p.add_argument("--delta-v", type=float, help="voltage peak scale")
    p.add_argument("--sigma", type=float,
                   help="initial-condition noise level override")


def _parse_phi_arg(text: str, base: VismaParams) -> VismaParams:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 4:
        raise ConfigurationError("--phi expects J,k_d,T_d,K_I")
    return replace(base, J=parts[0], k_d=parts[1], T_d=parts[2], K_I=parts[3])


def _resolve(args) -> tuple[ScenarioConfig, CostWeights, LadderConfig]:
    if args.config is not None:
        import yaml

        try:
            mapping = yaml.safe_load(args.config.read_text())
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"config is not valid YAML: {exc}")
        if not isinstance(mapping, dict):
            raise ConfigurationError("config root must be a mapping")
        issues = validate_mapping(mapping)
        if issues:
            for msg in issues:
                print(f"config error: {msg}", file=sys.stderr)
            raise ConfigurationError(f"{len(issues)} validation problem(s) "
                                     f"in {args.config}")
        scn, weights, ladder = mapping_to_scenario(mapping)
    else:
        sid = args.scenario if args.scenario is not None else 1
        scn = load_paper_scenario(sid)
        weights = default_weights(sid)
        ladder = LadderConfig()
    if getattr(args, "sigma", None) is not None:
        scn = replace(scn, ic_noise_sigma=args.sigma)
    w = {}
    for name, key in (("alpha", "alpha"), ("beta", "beta"),
                      ("delta_f", "delta_f"), ("delta_v", "delta_V")):
        v = getattr(args, name, None)
        if v is not None:
            w[key] = v
    if w:
        weights = replace(weights, **w)
    if getattr(args, "swaps", None) is not None:
        ladder = replace(ladder, n_swap_rounds=args.swaps)
    if getattr(args, "rperc", None) is not None:
        parts = [float(x) for x in args.rperc.split(",")]
        ladder = replace(ladder, r_perc_coarse=parts[0],
                         r_perc_fine=parts[-1])
    ladder = replace(ladder, master_seed=args.seed)
    return scn, weights, ladder


def _prepare(args, command: str):
    scn, weights, ladder = _resolve(args)
    issues = validate(scn)
    if issues:
        for msg in issues:
            print(f"config error: {msg}", file=sys.stderr)
        raise ConfigurationError(f"{len(issues)} validation problem(s)")
    args.out.mkdir(parents=True, exist_ok=True)
    text = dump_config(scn, weights, ladder)
    (args.out / "resolved_config.yaml").write_text(text)
    manifest = RunManifest(command=command, seed=args.seed, config_text=text,
                           scenario_name=scn.name, out_dir=args.out)
    return scn, weights, ladder, manifest


def _fmt4(v: float) -> str:
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return f"{v:.4g}"


def cmd_steady(args) -> int:
    scn, weights, ladder, manifest = _prepare(args, "steady")
    rows = []
    for label, load in (("pre-jump", scn.P_load_before),
                        ("post-jump", scn.P_load_after)):
        state = solve_steady_state(scn, load)
        info = steady_injections(scn, state, load)
        freqs = [state.omega_1, state.omega_2, state.omega_3]
        volts = [state.V_1, state.V_2, state.V_3]
        print(f"{scn.name} {label}: P_load = {load:.1f} W")
        for i in range(3):
            print(f"  node {i + 1}: f = {freqs[i] / (2 * math.pi):.6f} Hz  "
                  f"V = {volts[i]:8.3f} V  P = {info['P'][i]:10.3f} W  "
                  f"Q = {info['Q'][i]:9.3f} var")
        print(f"  load bus: V = {info['V_load']:.3f} V")
        print(f"  machine:  x = {info['x']:.3f} W  d = {state.d:.6f} rad/s  "
              f"P_inject = {info['P_inject']:.3f} W")
        for i in range(3):
            rows.append([label, i + 1, freqs[i] / (2 * math.pi), volts[i],
                         info["P"][i], info["Q"][i], info["V_grid"][i]])
    path = manifest.out_dir / "steady.csv"
    with open(path, "w") as fh:
        for line in manifest.header_lines():
            fh.write(f"# {line}\n")
        fh.write("state,node,f,V,P,Q,Vgrid\n")
        for r in rows:
            fh.write(",".join(str(v) if isinstance(v, (str, int))
                              else f"{v:.17g}" for v in r) + "\n")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    scn, weights, ladder, manifest = _prepare(args, "simulate")
    phi = scn.visma if args.phi is None else _parse_phi_arg(args.phi, scn.visma)
    traj, metrics = run_perturbation(phi, scn, ic_noise_seed=args.seed,
                                     rtol=args.rtol, atol=args.atol)
    path = manifest.out_dir / "trajectory.csv"
    traj.write_csv(path, manifest.header_lines())
    energy = cost(metrics, weights, phi)
    status = "VIOLATED" if metrics.violated else (
        "TIMEOUT" if metrics.timed_out else "ok")
    print(f"phi: J={phi.J:.6g} k_d={phi.k_d:.6g} T_d={phi.T_d:.6g} "
          f"K_I={phi.K_I:.6g}")
    print(f"t_final = {metrics.t_final:.3f} s  delta_f = "
          f"{metrics.delta_f_peak:.5f} Hz  delta_V = "
          f"{metrics.delta_V_peak:.4f} V  E = {_fmt4(energy)}  [{status}]")
    print(f"wrote {path} ({len(traj.t)} samples)")
    return EXIT_OK


RESULT_COLUMNS = ("row", "J", "k_d", "T_d", "K_I", "E", "alpha", "beta",
                  "J+k_d", "Sigma", "t_final", "alpha(J+k_d)", "Sigma/beta")
TABLE_COLUMNS = ("#",) + RESULT_COLUMNS[1:]


def _result_row(idx: int, phi: VismaParams, weights: CostWeights,
                result: TemperingResult) -> list[float]:
    t_final, storage, sigma, sigma_over_beta = cost_parts(
        result.metrics_min, weights, phi)
    return [idx, phi.J, phi.k_d, phi.T_d, phi.K_I, result.E_min,
            weights.alpha, weights.beta, phi.k_d + phi.J, sigma, t_final,
            storage, sigma_over_beta]


def cmd_optimize(args) -> int:
    scn, weights, ladder, manifest = _prepare(args, "optimize")
    weight_sets = [weights]
    if args.weights:
        weight_sets = []
        for spec_str in args.weights:
            a, b = (float(x) for x in spec_str.split(":"))
            weight_sets.append(replace(weights, alpha=a, beta=b))
    phi0 = ladder.initial_phi or default_initial_phi(scn)
    chk = check_constraints(phi0, scn.maxT_regular, scn.omega_nom)
    if not chk.accepted:
        print(f"infeasible initial parameter set: {chk.reason}",
              file=sys.stderr)
        return EXIT_INFEASIBLE

    rows = []
    trace_path = manifest.out_dir / "trace.csv"
    with open(trace_path, "w") as trace_fh:
        for line in manifest.header_lines():
            trace_fh.write(f"# {line}\n")
        trace_fh.write("run," + TemperingResult.TRACE_HEADER + "\n")
        for idx, w in enumerate(weight_sets, start=1):
            objective = ScenarioObjective(scn, w, rtol=args.rtol,
                                          atol=args.atol)
            ladder_run = replace(ladder,
                                 master_seed=ladder.master_seed + idx - 1)
            result = run_tempering(objective, ladder_run, initial_phi=phi0,
                                   workers=args.workers)
            rows.append(_result_row(idx, result.phi_min, w, result))
            for tr in result.trace:
                trace_fh.write(f"{idx}," + ",".join(
                    str(v) if isinstance(v, int) else f"{v:.17g}"
                    for v in tr) + "\n")
            print(f"run {idx}: alpha={w.alpha:g} beta={w.beta:g} -> "
                  f"E = {result.E_min:.4f} after {result.n_evaluations} "
                  f"evaluations")

    csv_path = manifest.out_dir / "results.csv"
    with open(csv_path, "w") as fh:
        for line in manifest.header_lines():
            fh.write(f"# {line}\n")
        fh.write(",".join(RESULT_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(str(r[0:1][0]) if i == 0 else f"{v:.17g}"
                              for i, v in enumerate(r)) + "\n")

    widths = [max(len(c), 11) for c in TABLE_COLUMNS]
    table = ["  ".join(c.rjust(w) for c, w in zip(TABLE_COLUMNS, widths))]
    for r in rows:
        cells = [str(r[0])] + [_fmt4(v) for v in r[1:]]
        table.append("  ".join(c.rjust(w) for c, w in zip(cells, widths)))
    text = "\n".join(table) + "\n"
    (manifest.out_dir / "results.txt").write_text(text)
    print(text, end="")
    print(f"wrote {csv_path}, {trace_path}")
    return EXIT_OK


def cmd_landscape(args) -> int:
    scn, weights, ladder, manifest = _prepare(args, "landscape")
    phi = scn.visma if args.phi is None else _parse_phi_arg(args.phi, scn.visma)
    lo, hi = (float(x) for x in args.range.split(":")[:2])
    n = int(args.range.split(":")[2]) if args.range.count(":") == 2 else args.points
    if args.log:
        values = np.geomspace(lo, hi, n)
    else:
        values = np.linspace(lo, hi, n)
    objective = ScenarioObjective(scn, weights, rtol=args.rtol,
                                  atol=args.atol)
    rng = np.random.default_rng(args.seed)
    path = manifest.out_dir / "landscape.csv"
    n_finite = 0
    with open(path, "w") as fh:
        for line in manifest.header_lines():
            fh.write(f"# {line}\n")
        fh.write(f"{args.param},E\n")
        for v in values:
            cand = replace(phi, **{args.param: float(v)})
            ev = objective(cand, rng)
            if ev.rejected:
                fh.write(f"{v:.17g},REJECTED\n")
            else:
                n_finite += 1
                fh.write(f"{v:.17g},{ev.energy:.17g}\n")
    print(f"wrote {path} ({n_finite}/{len(values)} finite)")
    return EXIT_OK


def cmd_errors(args) -> int:
    scn, weights, ladder, manifest = _prepare(args, "errors")
    phi = scn.visma if args.phi is None else _parse_phi_arg(args.phi, scn.visma)
    chk = check_constraints(phi, scn.maxT_regular, scn.omega_nom)
    if not chk.accepted:
        print(f"infeasible parameter set: {chk.reason}", file=sys.stderr)
        return EXIT_INFEASIBLE
    rng = np.random.default_rng(args.seed)
    seeds = [int(rng.integers(0, 2 ** 63 - 1)) for _ in range(args.n_runs)]
    energies = []
    rejected = []
    path = manifest.out_dir / "errors.csv"
    with open(path, "w") as fh:
        for line in manifest.header_lines():
            fh.write(f"# {line}\n")
        fh.write("run,ic_seed,E,t_final,delta_f,delta_V\n")
        for i, s in enumerate(seeds):
            try:
                metrics = evaluate_transient(phi, scn, s, rtol=args.rtol,
                                             atol=args.atol)
                e = cost(metrics, weights, phi)
            except InstabilityError as exc:
                rejected.append((i, str(exc)))
                fh.write(f"{i},{s},REJECTED,,,\n")
                continue
            if math.isinf(e):
                rejected.append((i, "band violation" if metrics.violated
                                 else "no relaxation"))
                fh.write(f"{i},{s},REJECTED,{metrics.t_final:.17g},"
                         f"{metrics.delta_f_peak:.17g},"
                         f"{metrics.delta_V_peak:.17g}\n")
                continue
            energies.append(e)
            fh.write(f"{i},{s},{e:.17g},{metrics.t_final:.17g},"
                     f"{metrics.delta_f_peak:.17g},"
                     f"{metrics.delta_V_peak:.17g}\n")
    if energies:
        arr = np.asarray(energies)
        mean = arr.mean()
        stderr = (arr.std(ddof=1) / math.sqrt(len(arr))
                  if len(arr) > 1 else float("nan"))
        stderr_s = f"{stderr:.6g}" if len(arr) > 1 else "undefined"
        print(f"E over {len(arr)} accepted runs: mean = {mean:.6f}  "
              f"stderr = {stderr_s}  min = {arr.min():.6f}  "
              f"max = {arr.max():.6f}")
    if rejected:
        print(f"{len(rejected)} rejected evaluations (excluded from mean):")
        for i, why in rejected:
            print(f"  run {i}: {why}")
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="vismaopt",
        description="Microgrid transient simulation and virtual-machine "
                    "parameter tuning by parallel tempering")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("steady", help="solve and report the pre/post-jump "
                                      "steady states")
    _add_common(p)
    p.set_defaults(func=cmd_steady)

    p = sub.add_parser("simulate", help="run one perturbation experiment "
                                        "and write the trajectory")
    _add_common(p)
    p.add_argument("--phi", help="J,k_d,T_d,K_I (default from config)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("optimize", help="two-phase parallel tempering over "
                                        "the machine parameters")
    _add_common(p)
    p.add_argument("--weights", action="append",
                   help="alpha:beta pair (repeatable; one results row each)")
    p.add_argument("--swaps", type=int, help="swap rounds per phase")
    p.add_argument("--rperc", help="proposal widths, coarse[,fine]")
    p.add_argument("--workers", type=int, default=1,
                   help="parallel sweep workers")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("landscape", help="cost along one parameter axis")
    _add_common(p)
    p.add_argument("--param", required=True,
                   choices=("J", "k_d", "T_d", "K_I"))
    p.add_argument("--range", required=True, help="LO:HI[:N]")
    p.add_argument("--points", type=int, default=50)
    p.add_argument("--log", action="store_true", help="log-spaced grid")
    p.add_argument("--phi", help="fixed J,k_d,T_d,K_I around the sweep")
    p.set_defaults(func=cmd_landscape)

    p = sub.add_parser("errors", help="cost statistics over repeated "
                                      "initial-condition draws")
    _add_common(p)
    p.add_argument("--phi", help="J,k_d,T_d,K_I (default from config)")
    p.add_argument("--n-runs", type=int, default=50)
    p.set_defaults(func=cmd_errors)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleStartError as exc:
        print(f"infeasible optimisation: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NoSteadyStateError, InstabilityError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
