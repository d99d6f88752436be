"""Command line front end and experiment orchestration.

Subcommands: flux | riemann | simulate | verify | tagged | oracle.

Settings are layered: built-in defaults, then a flat JSON file given with
``--config``, then command line flags. Every output embeds the resolved
configuration and the RNG algorithm. The only non-reproducible field is the
``metadata.created`` timestamp in JSON files.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .engine import (
    RING,
    RNG_ALGORITHM,
    SEGMENT,
    Bernoulli,
    Step,
    auto_segment,
    map_replicas,
    run,
    run_tagged,
)
from .flux import (
    DomainError,
    FluxSpec,
    branch_of,
    flux,
    flux_derivative,
    inflection,
    u_lowerstar,
    u_star,
)
from .measurement import (
    compare_to_solution,
    empirical_profile,
    lln_estimate,
    stationarity_oracle,
)
from .riemann import DEGENERATE, RiemannProblem, solve
from .snapshot_io import write_snapshots

logger = logging.getLogger("kstep")

GRID_SPACING = 0.05
GRID_MARGIN = 0.3


@dataclass
class ExperimentConfig:
    k: int = 2
    lam: float | None = None
    rho: float | None = None
    alpha: float | None = None
    size: int | None = None  # None means auto
    topology: str = SEGMENT
    time: float = 3000.0
    replicas: int = 16
    seed: int = 0
    window: float = 0.02
    exclusion: float = 0.15
    tolerance: float = 0.02
    n: int | None = None
    grid: int = 101
    snapshots: int = 1
    workers: int | None = None
    out_dir: str | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def resolve_config(file_values: dict | None = None, cli_values: dict | None = None) -> ExperimentConfig:
    """Defaults < config-file keys < command line flags."""
    merged: dict = {}
    for layer in (file_values or {}, cli_values or {}):
        for key, val in layer.items():
            key = {"lambda": "lam", "out-dir": "out_dir"}.get(key, key)
            if key not in _FIELDS:
                raise ValueError(f"unknown configuration key {key!r}")
            if val is not None:
                merged[key] = val
    return ExperimentConfig(**merged)


# --- output helpers ----------------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return str(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        x = float(x)
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def _envelope(cfg: ExperimentConfig, command: str, payload: dict) -> dict:
    return {
        "command": command,
        "config": cfg.to_dict(),
        "rng": RNG_ALGORITHM,
        "result": _jsonable(payload),
        "metadata": {
            "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "version": __version__,
        },
    }


def write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_csv(path: Path, cfg: ExperimentConfig, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# config: " + json.dumps(cfg.to_dict(), sort_keys=True) + "\n")
        fh.write("# rng: " + RNG_ALGORITHM + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _out(cfg: ExperimentConfig) -> Path | None:
    if cfg.out_dir is None:
        return None
    p = Path(cfg.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


# --- subcommands -------------------------------------------------------------


def flux_table(spec: FluxSpec, grid) -> list[tuple]:
    """Rows (u, G, H, branch, u_star, u_lowerstar); star columns are None where undefined."""
    infl = inflection(spec)
    rows = []
    for u in grid:
        u = float(u)
        star = lower = None
        if infl is not None and u == infl:
            branch = "inflection"
        else:
            branch = branch_of(spec, u).value
            try:
                if infl is not None and u < infl:
                    star = u_star(spec, u)
                elif infl is not None:
                    lower = u_lowerstar(spec, u)
            except DomainError:
                pass
        rows.append((u, flux(spec, u), flux_derivative(spec, u), branch, star, lower))
    return rows


def cmd_flux(cfg: ExperimentConfig, grid=None) -> list[tuple]:
    spec = FluxSpec(cfg.k)
    if grid is None:
        grid = np.linspace(0.0, 1.0, cfg.grid) if cfg.grid > 0 else []
    rows = flux_table(spec, grid)
    out = _out(cfg)
    if out:
        write_csv(out / "flux.csv", cfg, ["u", "G", "H", "branch", "u_star", "u_lowerstar"], rows)
    return rows


def riemann_samples(sol, n: int = 1001) -> np.ndarray:
    bps = sol.breakpoints or [0.0]
    v = np.linspace(min(bps) - 1.0, max(bps) + 1.0, n)
    return np.column_stack([v, sol(v)])


def cmd_riemann(cfg: ExperimentConfig) -> dict:
    _require(cfg, "lam", "rho")
    sol = solve(RiemannProblem(cfg.lam, cfg.rho, FluxSpec(cfg.k)))
    structure = sol.to_dict()
    out = _out(cfg)
    if out:
        write_json(out / "riemann.json", _envelope(cfg, "riemann", structure))
        write_csv(out / "riemann.csv", cfg, ["v", "u"], riemann_samples(sol, max(cfg.grid, 2)).tolist())
    return structure


def verification_grid(sol) -> np.ndarray:
    """Velocities spaced 0.05 apart, covering the solution's breakpoints plus a 0.3 margin."""
    bps = sol.breakpoints or [0.0]
    lo = math.floor((min(bps) - GRID_MARGIN) / GRID_SPACING)
    hi = math.ceil((max(bps) + GRID_MARGIN) / GRID_SPACING)
    return np.arange(lo, hi + 1) * GRID_SPACING


def simulate_profile(lam: float, rho: float, k: int, t: float, replicas: int, seed: int,
                     velocities, half_width: float, workers: int | None = None):
    """Snapshots at time t for each replica, from step initial data on an auto-sized segment."""
    region = ((velocities[0] - half_width) * t, (velocities[-1] + half_width) * t)
    size, origin = auto_segment(region, t, k)

    def one(r):
        res = run(k, SEGMENT, size, Step(lam, rho), [t], seed, replica=r,
                  origin_offset=origin, region=region)
        return res.snapshots[0], res.events

    results = map_replicas(one, replicas, workers)
    meta = {"size": size, "origin_offset": origin, "region": list(region),
            "events": [e for _, e in results]}
    return [s for s, _ in results], meta


def verify_hydrodynamics(cfg: ExperimentConfig) -> dict:
    """Compare the simulated density profile with the entropy solution."""
    _require(cfg, "lam", "rho")
    sol = solve(RiemannProblem(cfg.lam, cfg.rho, FluxSpec(cfg.k)))
    grid = verification_grid(sol)
    snaps, meta = simulate_profile(cfg.lam, cfg.rho, cfg.k, cfg.time, cfg.replicas, cfg.seed,
                                   grid, cfg.window, cfg.workers)
    profile = empirical_profile(snaps, grid, cfg.window)
    report = compare_to_solution(profile, sol, cfg.exclusion, cfg.tolerance)
    return {"report": report, "profile": profile, "solution": sol, "lattice": meta}


def cmd_verify(cfg: ExperimentConfig) -> dict:
    res = verify_hydrodynamics(cfg)
    out = _out(cfg)
    if out:
        payload = {
            "report": res["report"].to_dict(),
            "solution": res["solution"].to_dict(),
            "lattice": res["lattice"],
        }
        write_json(out / "verify.json", _envelope(cfg, "verify", payload))
        sol = res["solution"]
        rows = [(v, m, s, n, float(sol(v))) for v, m, s, n in res["profile"].rows()]
        write_csv(out / "profile.csv", cfg, ["v", "mean", "stderr", "n_replicas", "exact"], rows)
    return res


def cmd_tagged(cfg: ExperimentConfig) -> dict:
    _require(cfg, "alpha")
    topology = cfg.topology if cfg.topology in (RING, SEGMENT) else RING
    trajs = map_replicas(
        lambda r: run_tagged(cfg.alpha, cfg.time, cfg.seed, k=cfg.k, replica=r,
                             topology=topology, size=cfg.size),
        cfg.replicas, cfg.workers,
    )
    est = lln_estimate(trajs)
    payload = est.to_dict()
    payload["target"] = (1 - cfg.alpha) * (1 + 2 * cfg.alpha) if cfg.k == 2 else None
    payload["topology"] = topology
    payload["size"] = trajs[0].size
    out = _out(cfg)
    if out:
        write_json(out / "tagged.json", _envelope(cfg, "tagged", payload))
    return payload


def cmd_oracle(cfg: ExperimentConfig) -> dict:
    size = cfg.size if cfg.size is not None else 6
    n = cfg.n if cfg.n is not None else size // 2
    payload = stationarity_oracle(size, cfg.k, n).to_dict()
    out = _out(cfg)
    if out:
        write_json(out / "oracle.json", _envelope(cfg, "oracle", payload))
    return payload


def cmd_simulate(cfg: ExperimentConfig) -> dict:
    """Run one replica and store snapshots in the binary frame format."""
    if cfg.lam is not None and cfg.rho is not None:
        measure = Step(cfg.lam, cfg.rho)
    elif cfg.alpha is not None:
        measure = Bernoulli(cfg.alpha)
    else:
        raise ValueError("simulate needs --alpha or both --lambda and --rho")
    times = np.linspace(0.0, cfg.time, cfg.snapshots + 1)[1:] if cfg.snapshots > 0 else np.array([])
    if cfg.topology == RING:
        size, origin = cfg.size or 1000, 0
    else:
        size, origin = auto_segment((0, 0), cfg.time, cfg.k)
        size = cfg.size or size
    res = run(cfg.k, cfg.topology, size, measure, times, cfg.seed, origin_offset=origin)
    payload = dict(res.metadata)
    payload["snapshot_times"] = times.tolist()
    payload["densities"] = [float(s.config.occupancy.mean()) for s in res.snapshots]
    out = _out(cfg)
    if out:
        write_snapshots(out / "snapshots.bin", [s.config for s in res.snapshots])
        write_json(out / "simulate.json", _envelope(cfg, "simulate", payload))
    return payload


def _require(cfg: ExperimentConfig, *names: str) -> None:
    missing = [n for n in names if getattr(cfg, n) is None]
    if missing:
        raise ValueError("missing required setting(s): " + ", ".join(missing))


# --- argument parsing --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kstep", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    a = common.add_argument
    S = argparse.SUPPRESS
    a("--config", help="flat JSON file with default settings")
    a("--k", type=int, default=S)
    a("--lambda", dest="lam", type=float, default=S)
    a("--rho", type=float, default=S)
    a("--alpha", type=float, default=S)
    a("--time", type=float, default=S)
    a("--replicas", type=int, default=S)
    a("--seed", type=int, default=S)
    a("--window", type=float, default=S)
    a("--exclusion", type=float, default=S)
    a("--tolerance", type=float, default=S)
    a("--size", type=int, default=S, help="lattice size (auto when omitted)")
    a("--topology", choices=[RING, SEGMENT], default=S)
    a("--n", type=int, default=S, help="particle count (oracle)")
    a("--grid", type=int, default=S, help="number of grid points")
    a("--snapshots", type=int, default=S)
    a("--workers", type=int, default=S)
    a("--out-dir", dest="out_dir", default=S)
    for name in ("flux", "riemann", "simulate", "verify", "tagged", "oracle"):
        sub.add_parser(name, parents=[common])
    return parser


def main(argv: list[str] | None = None) -> int:
    args = vars(build_parser().parse_args(argv))
    logging.basicConfig(level=logging.INFO if args.pop("verbose") else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    command = args.pop("command")
    cfg_path = args.pop("config", None)
    file_values = json.loads(Path(cfg_path).read_text()) if cfg_path else {}
    try:
        cfg = resolve_config(file_values, args)
    except ValueError as exc:
        print(f"kstep: {exc}", file=sys.stderr)
        return 2
    if command == "tagged" and "topology" not in args and "topology" not in file_values:
        cfg.topology = RING
    if cfg.out_dir is None:
        cfg.out_dir = "."
    try:
        if command == "flux":
            cmd_flux(cfg)
        elif command == "riemann":
            s = cmd_riemann(cfg)
            print(f"case {s['case']}: {len(s['discontinuities'])} discontinuities")
        elif command == "simulate":
            p = cmd_simulate(cfg)
            print(f"{p['events']} events")
        elif command == "verify":
            rep = cmd_verify(cfg)["report"]
            print(f"sup error {rep.sup_error:.4f} (tolerance {rep.tolerance}) "
                  f"{'PASS' if rep.passed else 'FAIL'}")
            return 0 if rep.passed else 1
        elif command == "tagged":
            p = cmd_tagged(cfg)
            print(f"Y(T)/T = {p['mean']:.5f} +- {p['stderr']:.5f} (target {p['target']})")
        elif command == "oracle":
            p = cmd_oracle(cfg)
            print(f"residual {p['residual']:.3e}, current {p['current']:.12f}")
    except (ValueError, DomainError) as exc:
        print(f"kstep: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
