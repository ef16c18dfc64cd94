"""Configuration-driven experiment runner with CSV artifacts.

Config files are flat ``key = value`` documents with dotted section prefixes
(sim.*, ot.*, bounds.*, output.*, verify.*); unknown keys are rejected at
parse time.  Every run writes a manifest (config echo, constants, versions)
next to its outputs, and reruns with an identical manifest produce
byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import itertools
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__, fields, kinetic, stability, transport, vlasov
from .core import (TORUS, EmpiricalMeasure, GridDensity, Params, load_measure,
                   save_measure)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_PARSE = 2
EXIT_SOLVER = 3
EXIT_BLOWUP = 4

# key -> (type, default); booleans are written true/false
CONFIG_SCHEMA = {
    "seed": (int, 0),
    "sim.family": (str, vlasov.AMPLITUDE_PAIR),
    "sim.n_particles": (int, 20000),
    "sim.cells": (int, 256),
    "sim.dt": (float, 1e-3),
    "sim.horizon": (float, 1.0),
    "sim.snapshots": (int, 11),
    "sim.eps1": (float, 0.01),
    "sim.eps2": (float, 0.02),
    "sim.mode": (int, 1),
    "sim.vth": (float, 0.08),
    "sim.vshift": (float, 0.0),
    "sim.subsample": (int, 500),
    "sim.sup_cap": (float, 1e3),
    "sim.p": (float, 2.0),
    "sim.d": (int, 1),
    "sim.sigma": (int, -1),
    "sim.domain": (str, TORUS),
    "ot.exact_cap": (int, transport.DEFAULT_SIZE_CAP),
    "ot.sinkhorn_eps": (float, 1e-3),
    "ot.sinkhorn_tol": (float, 1e-9),
    "ot.sinkhorn_max_iter": (int, 20000),
    "bounds.C_L": (float, 1.0),
    "bounds.C_KW": (float, 1.0),
    "bounds.C_HW": (float, 1.0),
    "bounds.C_loglip": (float, 1.0),
    "bounds.C_d": (float, 1.0),
    "bounds.c_0": (float, 1.0),
    "bounds.fit_constants": (bool, False),
    "output.dir": (str, "out"),
    "verify.cells": (int, 512),
    "verify.pairs": (int, 20),
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw: str):
    typ, _ = CONFIG_SCHEMA[key]
    raw = raw.strip()
    if typ is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: cannot read boolean from {raw!r}")
    try:
        return typ(raw)
    except ValueError as err:
        raise ConfigError(f"{key}: {err}") from None


def parse_config(path=None, overrides=None) -> dict:
    """Read a flat key-value config; unknown keys are an error."""
    cfg = {k: default for k, (_, default) in CONFIG_SCHEMA.items()}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, raw = (part.strip() for part in stripped.split("=", 1))
            if key not in CONFIG_SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            cfg[key] = _coerce(key, raw)
    for key, value in (overrides or {}).items():
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"unknown override key {key!r}")
        cfg[key] = _coerce(key, str(value)) if isinstance(value, str) else value
    return cfg


def sim_config_from(cfg: dict) -> vlasov.SimConfig:
    params = Params(p=cfg["sim.p"], d=cfg["sim.d"], sigma=cfg["sim.sigma"],
                    domain=cfg["sim.domain"])
    return vlasov.SimConfig(
        params=params, n_particles=cfg["sim.n_particles"], cells=cfg["sim.cells"],
        dt=cfg["sim.dt"], horizon=cfg["sim.horizon"], family=cfg["sim.family"],
        eps1=cfg["sim.eps1"], eps2=cfg["sim.eps2"], mode=cfg["sim.mode"],
        vth=cfg["sim.vth"], vshift=cfg["sim.vshift"], seed=cfg["seed"],
        subsample=cfg["sim.subsample"], sup_cap=cfg["sim.sup_cap"])


def constants_from(cfg: dict) -> stability.BoundConstants:
    return stability.BoundConstants(
        C_L=cfg["bounds.C_L"], C_KW=cfg["bounds.C_KW"], C_HW=cfg["bounds.C_HW"],
        C_loglip=cfg["bounds.C_loglip"], C_d=cfg["bounds.C_d"], c_0=cfg["bounds.c_0"])


def write_manifest(outdir: Path, cfg: dict):
    lines = [f"kinwass={__version__}", f"numpy={np.__version__}", f"scipy={scipy.__version__}"]
    lines += [f"{k} = {cfg[k]}" for k in sorted(cfg)]
    (outdir / "manifest.txt").write_text("\n".join(lines) + "\n")


# --- distance ---------------------------------------------------------------

def cmd_distance(args) -> int:
    try:
        mu = load_measure(args.measure_a)
        nu = load_measure(args.measure_b)
    except (OSError, ValueError) as err:
        print(f"parse failure: {err}", file=sys.stderr)
        return EXIT_PARSE
    params = Params(p=args.p, d=mu.d, sigma=args.sigma, domain=args.domain)
    try:
        wp = transport.wp_distance(mu, nu, params)
        kw, rep = kinetic.kinetic_distance_report(mu, nu, params)
    except (transport.SolverError, kinetic.AlternationError) as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"W_p = {wp:.17g}")
    print(f"W_kinetic = {kw:.17g}")
    print(f"Cx = {rep.cx:.17g}")
    print(f"Cv = {rep.cv:.17g}")
    print(f"lambda = {rep.lam:.17g}")
    print(f"residual = {rep.residual:.17g}")
    if args.oracle:
        cm = transport.cost_matrix(mu, nu, transport.PHASE, params)
        best = transport.enumerate_assignment_minimum(cm)
        ok = abs(best ** (1.0 / params.p) - wp) <= 1e-9
        print(f"oracle = {best ** (1.0 / params.p):.17g} ({'match' if ok else 'MISMATCH'})")
        if not ok:
            return EXIT_FAIL
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "distance.csv", "w") as fh:
            fh.write("Wp,Wkinetic,Cx,Cv,lambda,residual\n")
            fh.write(f"{wp:.17g},{kw:.17g},{rep.cx:.17g},{rep.cv:.17g},"
                     f"{rep.lam:.17g},{rep.residual:.17g}\n")
    return EXIT_OK


# --- simulate ----------------------------------------------------------------

def _write_snapshot_files(outdir: Path, state, d: int):
    tag = f"{state.time:.6f}"
    save_measure(outdir / f"f1_t{tag}.csv", state.ensemble.left())
    save_measure(outdir / f"f2_t{tag}.csv", state.ensemble.right())
    e = state.ensemble
    cols_x1 = [f"X1_{k+1}" for k in range(d)] if d > 1 else ["X1"]
    cols_v1 = [f"V1_{k+1}" for k in range(d)] if d > 1 else ["V1"]
    cols_x2 = [f"X2_{k+1}" for k in range(d)] if d > 1 else ["X2"]
    cols_v2 = [f"V2_{k+1}" for k in range(d)] if d > 1 else ["V2"]
    header = ",".join(["i"] + cols_x1 + cols_v1 + cols_x2 + cols_v2 + ["w"])
    with open(outdir / f"pairing_t{tag}.csv", "w") as fh:
        fh.write(header + "\n")
        for i in range(len(e)):
            row = ([str(i)] + [f"{v:.17g}" for v in e.x1[i]] + [f"{v:.17g}" for v in e.v1[i]]
                   + [f"{v:.17g}" for v in e.x2[i]] + [f"{v:.17g}" for v in e.v2[i]]
                   + [f"{e.weights[i]:.17g}"])
            fh.write(",".join(row) + "\n")


def run_simulation(cfg: dict, outdir: Path, write_snapshots: bool = True):
    sim_cfg = sim_config_from(cfg)
    n_snap = max(2, cfg["sim.snapshots"])
    snap_times = np.linspace(0.0, sim_cfg.horizon, n_snap)
    result = vlasov.run_paired(sim_cfg, snap_times)
    outdir.mkdir(parents=True, exist_ok=True)
    write_manifest(outdir, cfg)
    with open(outdir / "diagnostics.csv", "w") as fh:
        fh.write(vlasov.DIAG_HEADER + "\n")
        for row in result.diagnostics_rows():
            fh.write(row + "\n")
    if write_snapshots:
        for st in result.states:
            _write_snapshot_files(outdir, st, sim_cfg.params.d)
    # bound trace on the measured curve
    if len(result.states) >= 2 and not result.blow_up:
        ts = np.array([s.time for s in result.states])
        a_vals = np.array([s.diagnostics["A"] for s in result.states])
        wp_p = np.array([s.diagnostics["Wp_sub"] ** sim_cfg.params.p
                         for s in result.states])
        dps = np.array([s.diagnostics["Dp"] for s in result.states])
        consts = constants_from(cfg)
        if cfg["bounds.fit_constants"] and result.w0p > 0:
            int_a_total = float(stability.cumulative_trapezoid(ts, a_vals)[-1])
            try:
                fitted = stability.fit_condition_boundary(result.w0p, int_a_total,
                                                          sim_cfg.params.p)
                consts = stability.BoundConstants(
                    C_L=fitted, C_KW=fitted, C_HW=consts.C_HW,
                    C_loglip=consts.C_loglip, C_d=consts.C_d, c_0=consts.c_0)
            except ValueError:
                pass
        trace = stability.assemble_bound_trace(ts, a_vals, wp_p, dps, consts,
                                               sim_cfg.params.p, sim_cfg.params.d,
                                               w0p=result.w0p)
        with open(outdir / "bounds.csv", "w") as fh:
            for line in trace.csv_lines():
                fh.write(line + "\n")
    if result.blow_up:
        (outdir / "ABORTED.txt").write_text(result.blow_up_message + "\n")
    return result


def cmd_simulate(args) -> int:
    try:
        cfg = parse_config(args.config, _cli_overrides(args))
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_PARSE
    outdir = Path(cfg["output.dir"])
    result = run_simulation(cfg, outdir)
    if result.blow_up:
        print(f"blow-up abort: {result.blow_up_message} "
              f"(partial outputs in {outdir})", file=sys.stderr)
        return EXIT_BLOWUP
    print(f"wrote {len(result.states)} snapshots to {outdir}")
    return EXIT_OK


# --- verify ------------------------------------------------------------------

def _random_smooth_density(rng, cells: int, n_modes: int = 4,
                           amplitude: float = 0.35) -> GridDensity:
    x = np.arange(cells) / cells
    vals = np.ones(cells)
    amps = amplitude * rng.random(n_modes) / np.arange(1, n_modes + 1)
    phases = 2.0 * np.pi * rng.random(n_modes)
    for k, (a, ph) in enumerate(zip(amps, phases), start=1):
        vals += a * np.cos(2.0 * np.pi * k * x + ph)
    vals = np.maximum(vals, 0.05)
    vals /= vals.mean()
    return GridDensity(vals, 1.0 / cells, mass=float(vals.mean()))


def verify_fields_suite(cfg: dict, report) -> bool:
    rng = np.random.default_rng(cfg["seed"])
    cells = cfg["verify.cells"]
    params = Params(p=2.0, d=1, sigma=cfg["sim.sigma"], domain=TORUS)
    worst = 0.0
    for k in range(cfg["verify.pairs"]):
        r1 = _random_smooth_density(rng, cells)
        r2 = _random_smooth_density(rng, cells)
        rep = fields.verify_field_estimate(r1, r2, params, descriptor=f"pair{k}",
                                           seed=cfg["seed"])
        worst = max(worst, rep.ratio)
    ok = worst <= 1.05
    report(f"field estimate p=2 ratio<=1.05: worst={worst:.6f}", ok)
    return ok


def verify_transport_suite(cfg: dict, report) -> bool:
    rng = np.random.default_rng(cfg["seed"])
    params = Params(p=2.0, d=1, sigma=-1, domain=TORUS)
    ok_all = True
    for k in range(10):
        n = int(rng.integers(2, 7))
        mu = EmpiricalMeasure.uniform(rng.random((n, 1)), rng.standard_normal((n, 1)))
        nu = EmpiricalMeasure.uniform(rng.random((n, 1)), rng.standard_normal((n, 1)))
        cm = transport.cost_matrix(mu, nu, transport.PHASE, params)
        exact = transport.solve_exact(cm, mu, nu).objective
        brute = transport.enumerate_assignment_minimum(cm)
        ok = abs(exact - brute) <= 1e-9
        ok_all &= ok
        report(f"exact vs brute force n={n}: |diff|={abs(exact - brute):.2e}", ok)
    return ok_all


def verify_stability_suite(cfg: dict, report) -> bool:
    consts = constants_from(cfg)
    p, d = cfg["sim.p"], cfg["sim.d"]
    ok_all = True
    w0p = 1e-6
    lb = stability.loeper_bound(w0p, 0.0, consts, p, d)
    ok = lb == w0p
    ok_all &= ok
    report(f"loeper bound collapses at intA=0: {lb:.3e}", ok)
    x = stability.kinetic_inner(w0p, p)
    kb = stability.kinetic_bound(w0p, 0.0, consts, p)
    ok = abs(kb - p * x) <= 1e-15
    ok_all &= ok
    report(f"kinetic bound collapses at intA=0: {kb:.3e}", ok)
    times = np.linspace(0.0, 1.0, 11)
    a_vals = np.ones_like(times)
    for flavor, closed in ((stability.LOEPER, stability.loeper_bound),
                           (stability.KINETIC, None)):
        trace = stability.gronwall_oracle(times, a_vals, w0p, consts, p, d, flavor)
        if flavor == stability.LOEPER:
            ref = np.array([stability.loeper_bound(w0p, t, consts, p, d)
                            for t in trace.times])
            vals = trace.values
        else:
            ref = np.array([stability.kinetic_bound(w0p, t, consts, p)
                            for t in trace.times])
            vals = p * trace.values
        err = float(np.max(np.abs(vals - ref) / ref))
        ok = err <= 0.01
        ok_all &= ok
        report(f"gronwall oracle matches {flavor} closed form: rel err {err:.2e}", ok)
    return ok_all


def cmd_verify(args) -> int:
    try:
        cfg = parse_config(args.config, _cli_overrides(args))
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_PARSE
    failures = []

    def report(name, ok):
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        if not ok:
            failures.append(name)

    suites = {"fields": verify_fields_suite, "transport": verify_transport_suite,
              "stability": verify_stability_suite}
    suites[args.suite](cfg, report)
    return EXIT_FAIL if failures else EXIT_OK


# --- sweep ---------------------------------------------------------------

def cmd_sweep(args) -> int:
    try:
        cfg = parse_config(args.config, _cli_overrides(args))
        varies = []
        for spec in args.vary:
            key, _, vals = spec.partition("=")
            if key not in CONFIG_SCHEMA or not vals:
                raise ConfigError(f"bad sweep spec {spec!r}")
            varies.append((key, [v.strip() for v in vals.split(",")]))
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_PARSE
    if not varies:
        print("nothing to sweep; pass --vary key=v1,v2", file=sys.stderr)
        return EXIT_PARSE
    base = Path(cfg["output.dir"])
    status = EXIT_OK
    for combo in itertools.product(*(vals for _, vals in varies)):
        sub = dict(cfg)
        tag_parts = []
        for (key, _), val in zip(varies, combo):
            sub[key] = _coerce(key, val)
            tag_parts.append(f"{key.replace('.', '_')}={val}")
        outdir = base / "__".join(tag_parts)
        sub["output.dir"] = str(outdir)
        result = run_simulation(sub, outdir)
        print(f"{outdir}: {'BLOWUP' if result.blow_up else 'ok'} "
              f"({len(result.states)} snapshots)")
        if result.blow_up:
            status = EXIT_BLOWUP
    return status


def _cli_overrides(args) -> dict:
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        over["output.dir"] = args.out
    return over


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kinwass",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_dist = sub.add_parser("distance", help="W_p and kinetic distance between two measure files")
    p_dist.add_argument("measure_a")
    p_dist.add_argument("measure_b")
    p_dist.add_argument("--p", type=float, default=2.0)
    p_dist.add_argument("--sigma", type=int, default=-1)
    p_dist.add_argument("--domain", default=TORUS)
    p_dist.add_argument("--oracle", action="store_true",
                        help="cross-check against brute-force enumeration (N <= 8)")
    p_dist.add_argument("--out", default=None)
    p_dist.set_defaults(func=cmd_distance)

    p_sim = sub.add_parser("simulate", help="run a paired simulation from a config")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", default=None)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_ver = sub.add_parser("verify", help="run a verification suite")
    p_ver.add_argument("--config", default=None)
    p_ver.add_argument("--suite", choices=("fields", "stability", "transport"),
                       required=True)
    p_ver.add_argument("--out", default=None)
    p_ver.add_argument("--seed", type=int, default=None)
    p_ver.set_defaults(func=cmd_verify)

    p_sweep = sub.add_parser("sweep", help="Cartesian product of config overrides")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--vary", action="append", default=[],
                         help="key=v1,v2,... (repeatable)")
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
