"""Experiment configuration: ``[section]`` blocks of ``key = value`` lines.

Lists are comma separated, points are comma separated coordinates and lists
of points are separated by semicolons.  ``none`` clears optional values.
Every problem is reported with the line it comes from; unknown sections and
keys are errors.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, SpecError
from .fields import KINDS, InitialDataSpec
from .flow import FlowConfig
from .geometry import torus_grid

COMMANDS = ("evolve", "morrey", "rdist", "codim", "monotone", "mollify", "kernelcheck")


def _float(s):
    return float(s)


def _opt_float(s):
    return None if s.strip().lower() == "none" else float(s)


def _int(s):
    return int(s)


def _str(s):
    return s.strip()


def _floats(s):
    return tuple(float(x) for x in s.split(",") if x.strip())


def _ints(s):
    return tuple(int(x) for x in s.split(",") if x.strip())


def _points(s):
    return tuple(_floats(p) for p in s.split(";") if p.strip())


def _window(s):
    w = _floats(s)
    if len(w) != 2 or not 0 < w[0] < w[1]:
        raise ValueError("expected two increasing positive times")
    return w


def _positive(v):
    if v is not None and v <= 0:
        raise ValueError("must be positive")


def _unit_open(v):
    if not 0.0 < v < 1.0:
        raise ValueError("must lie in the open interval (0, 1)")


# key -> (parser, default, validator or None)
SCHEMA = {
    "run": {
        "seed": (_int, 0, None),
        "out": (_str, "out", None),
        "command": (_str, None, None),
    },
    "grid": {
        "n": (_int, 2, None),
        "cells": (_int, 64, None),
        "period": (_float, 2 * np.pi, _positive),
    },
    "initial": {
        "kind": (_str, "flat", None),
        "amplitude": (_float, 0.0, None),
        "exponent": (_float, 0.5, None),
        "lambda_cap": (_float, 2.0, None),
        "radius": (_opt_float, 1.0, _positive),
        "beta": (_float, 1.0, _positive),
        "centers": (_points, (), None),
    },
    "singular": {
        "shape": (_str, "auto", None),
        "points": (_points, (), None),
        "start": (_floats, (), None),
        "end": (_floats, (), None),
        "center": (_floats, (), None),
        "radius": (_float, 1.0, _positive),
    },
    "flow": {
        "t_end": (_float, 0.1, _positive),
        "cfl": (_float, 0.4, _unit_open),
        "dt_min": (_float, 1e-12, _positive),
        "dt_max": (_opt_float, None, _positive),
        "snapshot_times": (_floats, (), None),
        "early_time_refinement": (_opt_float, 0.5, None),
        "grade_constant": (_float, 0.05, _positive),
        "store_every": (_int, 0, None),
        "max_steps": (_int, 10_000_000, _positive),
        "resume": (_str, "", None),
        "decay_window": (_window, (1e-3, 1e-1), None),
    },
    "analysis": {
        "p": (_float, 2.0, None),
        "delta": (_opt_float, None, _positive),
        "morrey_radii": (_floats, (), None),
        "codim_epsilons": (_floats, (), None),
        "margin": (_float, 0.2, _positive),
    },
    "curvature": {
        "test": (_str, "bump", None),
        "center": (_floats, (), None),
        "radius": (_float, 1.0, _positive),
        "inner": (_float, 0.3, _positive),
        "a": (_float, 0.0, None),
        "eps_list": (_floats, (), None),
    },
    "heat": {
        "a": (_float, 0.0, None),
        "center": (_floats, (), None),
        "radius": (_float, 1.0, _positive),
        "sources": (_points, (), None),
        "times": (_floats, (), None),
        "threshold": (_float, 1e-4, _positive),
    },
    "mollify": {
        "indices": (_ints, (2, 4, 8, 16), None),
        "chart_radius": (_float, 1.0, _positive),
        "overlap": (_float, 0.25, _positive),
    },
}


@dataclass
class ExperimentConfig:
    """Validated experiment: one namespace per section plus built objects."""

    command: str | None
    seed: int
    out: str
    sections: dict
    grid: object = field(repr=False, default=None)
    initial: InitialDataSpec | None = None
    flow: FlowConfig | None = None

    def section(self, name):
        return self.sections[name]

    @property
    def p(self):
        return self.sections["analysis"]["p"]

    @property
    def delta(self):
        d = self.sections["analysis"]["delta"]
        return d if d is not None else self.p * self.initial.exponent

    def as_dict(self):
        """Plain, order-stable description used in the manifest."""
        out = {"command": self.command, "seed": self.seed}
        for name, values in self.sections.items():
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in values.items()}
        return out

    def with_overrides(self, *, seed=None, out=None, command=None):
        cfg = ExperimentConfig(
            command or self.command,
            self.seed if seed is None else int(seed),
            self.out if out is None else str(out),
            self.sections,
            self.grid,
            self.initial,
            self.flow,
        )
        if seed is not None:
            cfg.initial = InitialDataSpec(**{**asdict(self.initial), "seed": int(seed)})
        cfg.validate_command()
        return cfg

    def validate_command(self):
        errors = []
        if self.command is not None and self.command not in COMMANDS:
            errors.append(f"[run] command: unknown command {self.command!r}; expected one of {COMMANDS}")
        if self.command == "monotone" and self.p < 2:
            errors.append(f"[analysis] p = {self.p}: the monotonicity experiment requires p >= 2")
        if errors:
            raise ConfigError(errors)


def _line_index(text):
    """Map ``(section, key)`` and ``section`` to 1-based line numbers."""
    where, sect = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", s)
        if m:
            sect = m.group(1).strip().lower()
            where.setdefault(sect, no)
        elif "=" in s and not s.startswith(("#", ";")) and sect is not None:
            where.setdefault((sect, s.split("=", 1)[0].strip().lower()), no)
    return where


def parse_config(text, command=None):
    """Parse and validate config text; raise ``ConfigError`` listing every problem."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        prefix = f"line {line}: " if line else ""
        raise ConfigError(f"{prefix}{exc.message.splitlines()[0]}") from exc
    lines = _line_index(text)
    errors = []
    sections = {}

    def at(key):
        no = lines.get(key)
        return f"line {no}: " if no else ""

    for sect in parser.sections():
        if sect.lower() not in SCHEMA:
            errors.append(f"{at(sect.lower())}unknown section [{sect}]")
    for sect, schema in SCHEMA.items():
        values = {k: d for k, (_, d, _) in schema.items()}
        if parser.has_section(sect):
            for key, raw in parser.items(sect):
                if key not in schema:
                    errors.append(f"{at((sect, key))}unknown key {key!r} in [{sect}]")
                    continue
                conv, _, check = schema[key]
                try:
                    v = conv(raw)
                    if check is not None:
                        check(v)
                except ValueError as exc:
                    errors.append(f"{at((sect, key))}[{sect}] {key} = {raw.strip()}: {exc}")
                    continue
                values[key] = v
        sections[sect] = values
    if errors:
        raise ConfigError(errors)

    run = sections["run"]
    cfg = ExperimentConfig(command or run["command"], run["seed"], run["out"], sections)
    try:
        g = sections["grid"]
        cfg.grid = torus_grid(g["n"], g["cells"], g["period"])
    except SpecError as exc:
        errors.append(f"{at('grid')}[grid] {exc}")
    ini = sections["initial"]
    if ini["kind"] not in KINDS:
        errors.append(f"{at(('initial', 'kind'))}[initial] kind = {ini['kind']}: expected one of {KINDS}")
    else:
        try:
            cfg.initial = InitialDataSpec(
                kind=ini["kind"],
                centers=ini["centers"],
                amplitude=ini["amplitude"],
                exponent=ini["exponent"],
                lambda_cap=ini["lambda_cap"],
                seed=cfg.seed,
                radius=ini["radius"],
                beta=ini["beta"],
            )
        except SpecError as exc:
            errors.append(f"{at('initial')}[initial] {exc}")
    fl = {k: v for k, v in sections["flow"].items() if k not in ("resume", "decay_window")}
    try:
        cfg.flow = FlowConfig(**fl)
    except ValueError as exc:
        errors.append(f"{at('flow')}[flow] {exc}")
    if sections["singular"]["shape"] not in ("auto", "points", "segment", "circle"):
        errors.append(f"{at(('singular', 'shape'))}[singular] shape must be auto, points, segment or circle")
    if sections["curvature"]["test"] not in ("bump", "plateau"):
        errors.append(f"{at(('curvature', 'test'))}[curvature] test must be bump or plateau")
    if sections["analysis"]["p"] < 1:
        errors.append(f"{at(('analysis', 'p'))}[analysis] p must be >= 1")
    try:
        cfg.validate_command()
    except ConfigError as exc:
        errors.extend(f"{at(('analysis', 'p'))}{e}" if "p >=" in e else e for e in exc.errors)
    if errors:
        raise ConfigError(errors)
    return cfg
