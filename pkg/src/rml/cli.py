"""Command line driver: ``rml <command> --config FILE [--out DIR] [--seed N] [--threads K]``.

Each command builds the initial data from the config, runs one chain of
library operations and writes CSV tables, snapshots and a ``manifest.json``
listing every output with its SHA-256.  Exit codes: 0 success, 2 config
error, 3 numerical failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .analysis import dyadic_radii, fit_decay_exponent, morrey_functional, tube_volume_codimension
from .config import COMMANDS, ConfigError, parse_config
from .curvature import (
    bump_test_function,
    classical_scalar_pairing,
    distributional_scalar_pairing,
    plateau_test_function,
    removability_experiment,
)
from .errors import RMLError, SnapshotError
from .fields import MollifierConfig, SingularSetMask, c0_distance, make_initial_metric, mollify
from .flow import DIAGNOSTIC_COLUMNS, FlowConfig, evolve
from .geometry import flat_background
from .heat import dirichlet_energy, heat_kernel_gaussian_check, monotonicity_functional, solve_conjugate_heat
from .io import read_snapshot, write_csv, write_snapshot

CSV_SCHEMA_VERSION = 1
THREADS_ENV = "RML_THREADS"


class Outputs:
    """Collects written files (relative to the output directory) and their column sets."""

    def __init__(self, root):
        self.root = Path(root)
        self.files = []

    def csv(self, name, columns, rows):
        write_csv(self.root / name, columns, rows)
        self.files.append((name, list(columns)))

    def snapshot(self, name, field, t):
        write_snapshot(self.root / name, field, t)
        self.files.append((name, None))

    def summary(self, items):
        self.csv("summary.csv", ("quantity", "value"), list(items))


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(cfg, out):
    entries = []
    for name, columns in sorted(out.files):
        path = out.root / name
        entry = {"path": name, "bytes": path.stat().st_size, "sha256": _sha256(path)}
        if columns is not None:
            entry["columns"] = columns
        entries.append(entry)
    manifest = {
        "tool": "rml",
        "version": __version__,
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "config": cfg.as_dict(),
        "outputs": entries,
    }
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    (out.root / "manifest.json").write_text(text)
    return manifest


# ---------------------------------------------------------------------------
# shared setup


def _initial(cfg):
    g0, mask = make_initial_metric(cfg.initial, cfg.grid)
    return g0, mask


def _mask(cfg, default):
    s = cfg.section("singular")
    grid = cfg.grid
    shape = s["shape"]
    if shape == "auto":
        return default
    if shape == "points":
        return SingularSetMask.from_points(grid, s["points"])
    if shape == "segment":
        return SingularSetMask.from_segment(grid, s["start"], s["end"])
    return SingularSetMask.from_circle(grid, s["center"] or _centre(grid), s["radius"])


def _centre(grid):
    return tuple(0.5 * L for L in grid.period)


def _focus(cfg, mask, section):
    c = cfg.section(section)["center"]
    if c:
        return tuple(c)
    if cfg.initial.centers:
        return tuple(cfg.initial.centers[0])
    if mask.geometry is not None and len(mask.geometry):
        return tuple(mask.geometry[0])
    return _centre(cfg.grid)


def _start_state(cfg):
    """Initial metric and time, from a snapshot when ``[flow] resume`` is set."""
    g0, mask = _initial(cfg)
    resume = cfg.section("flow")["resume"]
    if not resume:
        return g0, mask, 0.0
    g, grid, t0 = read_snapshot(resume)
    if grid != cfg.grid:
        raise ConfigError(f"[flow] resume: snapshot grid {grid.dims} does not match the configured grid")
    if t0 >= cfg.flow.t_end:
        raise ConfigError(f"[flow] resume: snapshot time {t0} is not before t_end")
    return g, mask, t0


def _flow(cfg, store_every=None):
    if store_every is None:
        return cfg.flow
    fields = {k: getattr(cfg.flow, k) for k in cfg.flow.__dataclass_fields__}
    fields["store_every"] = store_every
    return FlowConfig(**fields)


def _write_trajectory(out, traj):
    rows = [(*d.row(), d.hessian_energy) for d in traj.diagnostics]
    out.csv("diagnostics.csv", (*DIAGNOSTIC_COLUMNS, "hessian_energy"), rows)
    for k, (t, g) in enumerate(zip(traj.times, traj.states)):
        out.snapshot(f"state_{k:05d}.rdfs", g, t)


# ---------------------------------------------------------------------------
# commands


def cmd_evolve(cfg, out):
    g0, _, t0 = _start_state(cfg)
    traj = evolve(g0, cfg.flow, t0=t0)
    _write_trajectory(out, traj)
    window = cfg.section("flow")["decay_window"]
    items = [("t_final", traj.times[-1]), ("steps", len(traj.diagnostics) - 1)]
    for name in ("sup_d1", "sup_d2"):
        t, v = traj.series(name)
        try:
            slope, _, r2 = fit_decay_exponent(t, v, window)
        except ValueError:
            continue
        items += [(f"{name}_slope", slope), (f"{name}_r2", r2)]
    Lam = traj.series("Lambda")[1]
    items += [("Lambda_0", Lam[0]), ("Lambda_max", Lam.max())]
    out.summary(items)


def cmd_morrey(cfg, out):
    g0, _ = _initial(cfg)
    radii = cfg.section("analysis")["morrey_radii"] or dyadic_radii(cfg.grid)
    rep = morrey_functional(g0, p=cfg.p, radii=radii)
    out.csv("morrey.csv", ("radius", "average"), rep.table())
    out.summary([("p", rep.p), ("delta_fit", rep.delta_fit), ("L0_fit", rep.L0_fit), ("slope", rep.slope)])


def _test_function(cfg, mask):
    c = cfg.section("curvature")
    centre = _focus(cfg, mask, "curvature")
    if c["test"] == "plateau":
        return plateau_test_function(cfg.grid, centre, c["inner"], c["radius"])
    return bump_test_function(cfg.grid, centre, c["radius"])


def cmd_rdist(cfg, out):
    g0, mask0 = _initial(cfg)
    mask = _mask(cfg, mask0)
    c = cfg.section("curvature")
    bg = flat_background(cfg.grid)
    u = _test_function(cfg, mask)
    pairing = distributional_scalar_pairing(g0, bg, u, c["a"])
    items = [("pairing", pairing)]
    if mask.is_empty:
        items.append(("classical", classical_scalar_pairing(g0, u, c["a"], bg)))
    if c["eps_list"]:
        rep = removability_experiment(g0, mask, bg, cfg.p, cfg.delta, u, c["a"], c["eps_list"])
        out.csv("removability.csv", ("eps", "I", "II", "III", "IV", "localized_pairing"), rep.rows())
        for k in ("I", "II", "III", "IV"):
            items += [(f"rate_{k}", rep.fitted_rates[k]), (f"predicted_{k}", rep.predicted_rates[k])]
        items.append(("codimension", rep.codimension))
    out.summary(items)


def cmd_codim(cfg, out):
    _, mask0 = _initial(cfg)
    mask = _mask(cfg, mask0)
    eps = cfg.section("analysis")["codim_epsilons"] or tuple(4 * cfg.grid.min_spacing * 2.0**k for k in range(4))
    rep = tube_volume_codimension(mask, cfg.grid, eps)
    out.csv("codim.csv", ("eps", "volume"), list(zip(rep.epsilons, rep.volumes)))
    out.summary([("d0", rep.d0), ("C", rep.C), ("b", rep.b)])


def cmd_monotone(cfg, out):
    g0, mask, t0 = _start_state(cfg)
    traj = evolve(g0, _flow(cfg, cfg.flow.store_every or 1), t0=t0)
    h = cfg.section("heat")
    centre = _focus(cfg, mask, "heat")
    u = solve_conjugate_heat(traj, bump_test_function(cfg.grid, centre, h["radius"]))
    t, F = monotonicity_functional(traj, u, h["a"])
    E = dirichlet_energy(traj, u)
    out.csv("monotone.csv", ("t", "functional", "gradient_energy"), list(zip(t, F, E)))
    drop = float(np.max(-np.diff(F), initial=0.0)) / max(float(np.abs(F).max()), np.finfo(float).tiny)
    out.summary([("worst_relative_drop", drop), ("undershoot_flagged", int(u.flagged)), ("min_value", u.min_value),
                 ("gradient_energy_max", float(E.max()))])


def cmd_mollify(cfg, out):
    g0, mask0 = _initial(cfg)
    mask = _mask(cfg, mask0)
    m = cfg.section("mollify")
    far = mask.distance(cfg.grid) > m["chart_radius"]
    base = morrey_functional(g0, p=cfg.p)
    rows = []
    for i in m["indices"]:
        mc = MollifierConfig(i, m["chart_radius"], m["overlap"])
        gi = mollify(g0, mask, mc)
        rep = morrey_functional(gi, p=cfg.p)
        rows.append((i, mc.scale, c0_distance(gi, g0), c0_distance(gi, g0, region=far),
                     rep.constant(base.delta_fit), rep.delta_fit))
    out.csv("mollify.csv", ("index", "scale", "c0", "c0_outside_chart", "morrey_constant", "delta_fit"), rows)
    out.summary([("L0", base.constant(base.delta_fit)), ("delta_fit", base.delta_fit)])


def cmd_kernelcheck(cfg, out):
    g0, mask, t0 = _start_state(cfg)
    flow = cfg.flow
    h = cfg.section("heat")
    times = h["times"] or tuple(flow.t_end * f for f in (0.25, 0.5, 0.75, 1.0))
    wanted = tuple(sorted(set(flow.snapshot_times) | {t for t in times if t0 < t < flow.t_end}))
    flow = FlowConfig(**{**{k: getattr(flow, k) for k in flow.__dataclass_fields__}, "snapshot_times": wanted})
    traj = evolve(g0, flow, t0=t0)
    grid = cfg.grid
    points = h["sources"] or (_focus(cfg, mask, "heat"),)
    sources = [tuple(int(round(p / s)) % d for p, s, d in zip(pt, grid.spacing, grid.dims)) for pt in points]
    stored = [traj.times[int(np.argmin(np.abs(np.asarray(traj.times) - t)))] for t in times]
    rep = heat_kernel_gaussian_check(traj, sources, stored, h["threshold"])
    out.csv("kernel.csv", ("source", "C"), [(";".join(map(str, s)), c) for s, c in zip(sources, rep.per_source)])
    out.summary([("C", rep.C), ("mass_min", rep.masses.min()), ("mass_max", rep.masses.max()),
                 ("samples", rep.samples)])


HANDLERS = {
    "evolve": cmd_evolve,
    "morrey": cmd_morrey,
    "rdist": cmd_rdist,
    "codim": cmd_codim,
    "monotone": cmd_monotone,
    "mollify": cmd_mollify,
    "kernelcheck": cmd_kernelcheck,
}


def run(cfg, out_dir=None):
    """Execute ``cfg.command`` and write its artifacts; returns the manifest."""
    root = Path(out_dir or cfg.out)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SnapshotError(f"cannot create output directory {root}: {exc}") from exc
    out = Outputs(root)
    HANDLERS[cfg.command](cfg, out)
    return write_manifest(cfg, out)


def _threads(flag):
    if flag is not None:
        return flag
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV}={env!r} is not an integer") from None
    return None


def build_parser():
    ap = argparse.ArgumentParser(prog="rml", description="Ricci-DeTurck flow experiments on flat tori.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="experiment config file")
    ap.add_argument("--out", help="output directory (default: [run] out)")
    ap.add_argument("--seed", type=int, help="override [run] seed")
    ap.add_argument("--threads", type=int, help=f"thread count for numerical kernels (env {THREADS_ENV})")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise SnapshotError(f"cannot read config {args.config}: {exc}") from exc
        cfg = parse_config(text, command=args.command)
        if args.seed is not None:
            cfg = cfg.with_overrides(seed=args.seed)
        threads = _threads(args.threads)
        if threads is None:
            manifest = run(cfg, args.out)
        else:
            with threadpool_limits(limits=threads):
                manifest = run(cfg, args.out)
    except RMLError as exc:
        for line in getattr(exc, "errors", [str(exc)]):
            print(f"rml: error: {line}", file=sys.stderr)
        return exc.exit_code
    print(f"rml {args.command}: wrote {len(manifest['outputs'])} files")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
