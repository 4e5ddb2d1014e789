"""Command-line runner: config parsing, scenario presets, sweeps, output.

Configs are sectioned key=value text (see README for the grammar).
Resolution order is hard defaults, then scenario preset, then the config
file, then command-line flags; every effective value is echoed to
``resolved.cfg`` in the output directory together with where it came
from.  CSV is the output contract (first column t, 17 significant
digits); SVG plots are a convenience rendered with no external
dependencies.
"""

import argparse
import configparser
import difflib
import json
import math
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalFailure
from .fock import (
    average_trajectories,
    basis_state,
    build_operators,
    integrate_master,
    moments_from_rho,
    projector,
    propagate_ensemble,
)
from .gaussian_ent import log_negativity
from .kernel import KernelSpec, OUKernel, eval_kernel, read_kernel_table
from .moments import MomentState, covariance_from_moments, integrate_moments
from .ocoeff import solve_ocoeff
from .params import PhysicalParams, LinearizedSystem, linearize, solve_mean_field
from .stepping import TimeGrid
from .thermal import effective_kernels, integrate_thermal_master, solve_thermal_ocoeff

__all__ = ["RunConfig", "parse_config", "run_scenario", "main"]

_ENGINES = ("moments", "fock-master", "trajectories")
_SCENARIOS = ("fig2", "fig3", "fig4", "fig5", "custom")
_SWEEPABLE = ("gamma", "decay", "omega_env", "delta", "coupling", "temperature")

# (type tag, default); None default means "unset"
_SCHEMA = {
    "system": {
        "omega_m": ("float", "1.0"),
        "delta": ("float", None),
        "coupling": ("float", None),
        "omega_c": ("float", None),
        "g": ("float", None),
        "omega_drive": ("float", None),
        "drive": ("float", None),
        "kappa": ("float", None),
    },
    "bath": {
        "kernel": ("choice:ou,markov,tabulated", "ou"),
        "decay": ("float", "2.0"),
        "gamma": ("float", "1.0"),
        "omega_env": ("float", "0.0"),
        "table": ("str", None),
        "temperature": ("float", "0.0"),
    },
    "grid": {
        "dt": ("float", "0.01"),
        "t_final": ("float", "30.0"),
    },
    "run": {
        "engine": ("choice:" + ",".join(_ENGINES), "moments"),
        "paths": ("int", "2000"),
        "dims": ("dims", "10,10"),
        "seed": ("int", "12345"),
        "out": ("str", None),
        "format": ("formats", "csv"),
        "include_f5": ("bool", "true"),
        "store_every": ("int", "0"),
    },
    "sweep": {
        "parameter": ("str", None),
        "values": ("str", None),
        "start": ("float", None),
        "stop": ("float", None),
        "step": ("float", None),
    },
}

# scenario presets layer over the hard defaults; scan lists live below
_PRESETS = {
    "fig2": {("system", "delta"): "1.0", ("system", "coupling"): "0.1",
             ("bath", "gamma"): "0.6", ("bath", "decay"): "2.0",
             ("bath", "omega_env"): "0.0"},
    "fig3": {("system", "delta"): "1.0", ("system", "coupling"): "0.1",
             ("bath", "gamma"): "0.6", ("bath", "decay"): "2.0",
             ("bath", "omega_env"): "0.0"},
    # decay < gamma/2 keeps the coefficient system pole-free across the
    # whole environment-frequency grid, including bath-mirror resonance
    "fig4": {("system", "delta"): "1.0", ("system", "coupling"): "0.1",
             ("bath", "gamma"): "1.0", ("bath", "decay"): "0.4"},
    "fig5": {("system", "coupling"): "0.1", ("bath", "gamma"): "1.5",
             ("bath", "decay"): "4.0", ("bath", "omega_env"): "0.0",
             ("grid", "t_final"): "50.0"},
    "custom": {},
}

_FIG2_LARGE_GAMMA = 50.0
_FIG3_GAMMAS = (0.3, 0.6, 1.2)
_FIG4_OMEGAS = tuple(np.round(np.arange(0.0, 2.0001, 0.1), 10))
_FIG4_SLICE_T = 20.0
_FIG5_GAMMAS = (1.5, 0.8)
_FIG5_DELTAS = tuple(np.round(np.arange(1.0, 3.0001, 0.05), 10))
_ONSET_LEVEL = 0.1


def _onset_time(times, en, level=_ONSET_LEVEL):
    """Interpolated first crossing of the entanglement level."""
    above = np.nonzero(en > level)[0]
    if not len(above):
        return float("nan")
    k = above[0]
    if k == 0:
        return float(times[0])
    frac = (level - en[k - 1]) / (en[k] - en[k - 1])
    return float(times[k - 1] + frac * (times[k] - times[k - 1]))

_FLAG_MAP = {
    "out": ("run", "out"),
    "seed": ("run", "seed"),
    "engine": ("run", "engine"),
    "dt": ("grid", "dt"),
    "tfinal": ("grid", "t_final"),
    "gamma": ("bath", "gamma"),
    "omega_env": ("bath", "omega_env"),
    "delta": ("system", "delta"),
    "coupling": ("system", "coupling"),
    "decay": ("bath", "decay"),
    "format": ("run", "format"),
}


@dataclass
class RunConfig:
    """Fully resolved run description.

    ``resolved`` keeps (section, key, value-as-text, source) for every
    effective entry so the echo file can show provenance.
    """

    scenario: str
    omega_m: float
    delta: float
    coupling: float
    physical: PhysicalParams
    kernel_variant: str
    decay: float
    gamma: float
    omega_env: float
    table: str
    temperature: float
    dt: float
    t_final: float
    engine: str
    paths: int
    dims: tuple
    seed: int
    out: str
    formats: tuple
    include_f5: bool
    store_every: int
    sweep: tuple = None
    resolved: list = field(default_factory=list)
    gamma_source: str = "default"

    def grid(self) -> TimeGrid:
        return TimeGrid(dt=self.dt, t_final=self.t_final)

    def system(self, delta=None, coupling=None) -> LinearizedSystem:
        if self.physical is not None:
            return linearize(self.physical, solve_mean_field(self.physical))
        d = self.delta if delta is None else delta
        c = self.coupling if coupling is None else coupling
        return LinearizedSystem(omega_m=self.omega_m, Delta=d, G=c)

    def bath_kernel(self, gamma=None, omega_env=None, decay=None) -> KernelSpec:
        g = self.gamma if gamma is None else gamma
        w = self.omega_env if omega_env is None else omega_env
        d = self.decay if decay is None else decay
        if self.kernel_variant == "markov":
            return KernelSpec.markov(d)
        if self.kernel_variant == "tabulated":
            return read_kernel_table(self.table)
        return KernelSpec.from_ou(d, g, w)


def _line_of(text, section, key):
    sec = None
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            sec = s[1:-1].strip().lower()
        elif sec == section and s.split("=", 1)[0].strip().lower() == key:
            return i
    return None


def _convert(section, key, raw, kind):
    path = f"[{section}] {key}"
    try:
        if kind == "float":
            return float(raw)
        if kind == "int":
            return int(raw)
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind == "dims":
            parts = [int(x) for x in raw.split(",")]
            if len(parts) != 2 or min(parts) < 2:
                raise ValueError(raw)
            return tuple(parts)
        if kind == "formats":
            parts = tuple(sorted({x.strip().lower() for x in raw.split(",") if x.strip()}))
            if not parts or any(x not in ("csv", "svg") for x in parts):
                raise ValueError(raw)
            return parts
        if kind.startswith("choice:"):
            allowed = kind.split(":", 1)[1].split(",")
            low = raw.strip().lower()
            if low not in allowed:
                raise ValueError(raw)
            return low
        return raw.strip()
    except ValueError:
        raise ConfigError(
            f"{path}: cannot read {raw!r} as {kind.split(':')[0]}"
        ) from None


def parse_config(text, scenario="custom", overrides=None) -> RunConfig:
    """Parse sectioned key=value text into a validated RunConfig.

    Unknown sections or keys are rejected with the offending line and a
    close-match suggestion.  ``overrides`` maps flag names (see the CLI)
    to replacement values applied after the file.
    """
    if scenario not in _SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}")
    parser = configparser.ConfigParser(
        delimiters=("=",), comment_prefixes=("#", ";"),
        inline_comment_prefixes=("#",), strict=True,
        empty_lines_in_values=False,
    )
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None

    entries = {}
    for (sec, key), raw in _PRESETS[scenario].items():
        entries[(sec, key)] = (raw, f"preset:{scenario}")
    for sec in parser.sections():
        if sec not in _SCHEMA:
            hint = difflib.get_close_matches(sec, _SCHEMA, n=1)
            extra = f"; did you mean [{hint[0]}]" if hint else ""
            raise ConfigError(f"unknown section [{sec}]{extra}")
        for key, raw in parser.items(sec):
            if key not in _SCHEMA[sec]:
                line = _line_of(text, sec, key)
                hint = difflib.get_close_matches(key, _SCHEMA[sec], n=1)
                extra = f"; did you mean {hint[0]!r}" if hint else ""
                raise ConfigError(
                    f"unknown key {key!r} in [{sec}]"
                    + (f" at line {line}" if line else "") + extra
                )
            entries[(sec, key)] = (raw.strip(), "file")
    for flag, value in (overrides or {}).items():
        if flag not in _FLAG_MAP:
            raise ConfigError(f"unknown override flag {flag!r}")
        entries[_FLAG_MAP[flag]] = (str(value), f"flag:--{flag.replace('_', '-')}")

    resolved = []
    values = {}
    sources = {}
    for sec, keys in _SCHEMA.items():
        for key, (kind, default) in keys.items():
            raw, src = entries.get((sec, key), (default, "default"))
            sources[(sec, key)] = src
            if raw is None:
                values[(sec, key)] = None
                continue
            values[(sec, key)] = _convert(sec, key, raw, kind)
            resolved.append((sec, key, raw, src))

    return _validate(scenario, values, sources, resolved)


def _validate(scenario, v, src, resolved) -> RunConfig:
    if v[("grid", "dt")] <= 0:
        raise ConfigError("[grid] dt must be positive")
    if v[("grid", "t_final")] <= v[("grid", "dt")]:
        raise ConfigError("[grid] t_final must exceed dt")
    if v[("bath", "decay")] < 0:
        raise ConfigError("[bath] decay must be nonnegative")
    if v[("bath", "gamma")] <= 0:
        raise ConfigError("[bath] gamma must be positive")
    if v[("bath", "temperature")] < 0:
        raise ConfigError("[bath] temperature must be nonnegative")
    if v[("bath", "kernel")] == "tabulated" and not v[("bath", "table")]:
        raise ConfigError("[bath] tabulated kernel needs a table path")
    if v[("run", "paths")] < 1:
        raise ConfigError("[run] paths must be at least 1")

    raw_keys = ("omega_c", "g", "omega_drive", "drive", "kappa")
    raw_given = [k for k in raw_keys if v[("system", k)] is not None]
    physical = None
    if raw_given:
        missing = [k for k in raw_keys if v[("system", k)] is None]
        if missing:
            raise ConfigError(
                f"[system] raw parameters need all of {raw_keys}; missing {missing}"
            )
        if v[("system", "delta")] is not None or v[("system", "coupling")] is not None:
            raise ConfigError(
                "[system] give either delta/coupling or the raw parameter set, not both"
            )
        physical = PhysicalParams(
            omega_c=v[("system", "omega_c")], omega_m=v[("system", "omega_m")],
            g=v[("system", "g")], omega_drive=v[("system", "omega_drive")],
            Omega_d=v[("system", "drive")], kappa_a=v[("system", "kappa")],
        )
    elif scenario in ("custom", "fig2", "fig3", "fig4"):
        if v[("system", "delta")] is None or v[("system", "coupling")] is None:
            raise ConfigError("[system] needs delta and coupling (or the raw set)")
    elif v[("system", "coupling")] is None:
        raise ConfigError("[system] needs coupling")

    sweep = None
    sweep_given = {k: v[("sweep", k)] for k in _SCHEMA["sweep"]
                   if v[("sweep", k)] is not None}
    if sweep_given:
        if scenario != "custom":
            raise ConfigError("[sweep] applies to the custom scenario only")
        param = sweep_given.get("parameter")
        if param not in _SWEEPABLE:
            raise ConfigError(f"[sweep] parameter must be one of {_SWEEPABLE}")
        if "values" in sweep_given:
            if any(k in sweep_given for k in ("start", "stop", "step")):
                raise ConfigError("[sweep] give either values or start/stop/step")
            try:
                pts = tuple(float(x) for x in sweep_given["values"].split(","))
            except ValueError:
                raise ConfigError("[sweep] values must be comma-separated numbers") from None
        else:
            if not all(k in sweep_given for k in ("start", "stop", "step")):
                raise ConfigError("[sweep] needs values or all of start/stop/step")
            start, stop, step = (sweep_given[k] for k in ("start", "stop", "step"))
            if step <= 0 or stop < start:
                raise ConfigError("[sweep] needs step > 0 and stop >= start")
            pts = tuple(np.round(np.arange(start, stop + 0.5 * step, step), 12))
        if not pts:
            raise ConfigError("[sweep] grid is empty")
        sweep = (param, pts)

    if v[("bath", "temperature")] > 0:
        if scenario != "custom":
            raise ConfigError("figure presets are zero-temperature scenarios")
        if v[("run", "engine")] != "fock-master":
            raise ConfigError(
                "finite temperature runs through the fock-master engine only"
            )
        if v[("bath", "kernel")] != "ou":
            raise ConfigError("finite temperature needs the ou kernel variant")

    out = v[("run", "out")] or os.path.join("runs", scenario)
    return RunConfig(
        scenario=scenario,
        omega_m=v[("system", "omega_m")],
        delta=v[("system", "delta")],
        coupling=v[("system", "coupling")],
        physical=physical,
        kernel_variant=v[("bath", "kernel")],
        decay=v[("bath", "decay")],
        gamma=v[("bath", "gamma")],
        omega_env=v[("bath", "omega_env")],
        table=v[("bath", "table")],
        temperature=v[("bath", "temperature")],
        dt=v[("grid", "dt")],
        t_final=v[("grid", "t_final")],
        engine=v[("run", "engine")],
        paths=v[("run", "paths")],
        dims=v[("run", "dims")],
        seed=v[("run", "seed")],
        out=out,
        formats=v[("run", "format")],
        include_f5=v[("run", "include_f5")],
        store_every=v[("run", "store_every")],
        sweep=sweep,
        resolved=resolved,
        gamma_source=src[("bath", "gamma")],
    )


# ---------------------------------------------------------------- engines


@dataclass(frozen=True)
class EngineResult:
    times: np.ndarray
    en: np.ndarray
    moments: np.ndarray


def _engine_moments(F, sys, grid) -> EngineResult:
    traj = integrate_moments(F, sys, MomentState.vacuum(), grid)
    return EngineResult(times=grid.times(), en=traj.en_series(),
                        moments=traj.values)


def _engine_fock(F, sys, grid, dims) -> EngineResult:
    ops = build_operators(dims, sys)
    rho0 = projector(basis_state(dims))
    traj = integrate_master(F, ops, rho0, grid)
    return EngineResult(times=grid.times(), en=traj.en_series(),
                        moments=traj.moments)


def _en_from_moment_rows(rows, tol=1e-6):
    out = np.empty(len(rows))
    for i, m in enumerate(rows):
        try:
            out[i] = log_negativity(covariance_from_moments(m).V, tol=tol).En
        except (ValueError, NumericalFailure):
            out[i] = np.nan
    return out


def _engine_traj(F, kspec, sys, grid, dims, n_paths, seed, store_every) -> EngineResult:
    ops = build_operators(dims, sys)
    psi0 = basis_state(dims)
    se = store_every if store_every > 0 else max(1, int(round(0.1 / grid.dt)))
    paths = propagate_ensemble(F, ops, kspec, psi0, grid, n_paths, seed,
                               store_every=se)
    avg = average_trajectories(paths)
    rows = np.stack([moments_from_rho(r, ops).vector for r in avg.rhos])
    # sampling noise can push the estimated covariance slightly outside
    # the physical cone, hence the loose tolerance and nan fallback
    return EngineResult(times=grid.times()[avg.node_indices],
                        en=_en_from_moment_rows(rows), moments=rows)


def _run_point(cfg: RunConfig, sys, kspec, grid):
    """One deterministic run: coefficient series plus engine output."""
    F = solve_ocoeff(kspec, sys, grid, include_f5=cfg.include_f5)
    if cfg.engine == "moments":
        return F, _engine_moments(F, sys, grid)
    if cfg.engine == "fock-master":
        return F, _engine_fock(F, sys, grid, cfg.dims)
    return F, _engine_traj(F, kspec, sys, grid, cfg.dims, cfg.paths,
                           cfg.seed, cfg.store_every)


def _run_thermal_point(cfg: RunConfig, sys, grid, temperature):
    base = OUKernel(Gamma=cfg.decay, gamma=cfg.gamma, Omega=cfg.omega_env)
    eff = effective_kernels(base, temperature, fit=True)
    # weight each kernel's relative misfit by its zero-lag strength so a
    # poor fit of a negligible absorption kernel stays quiet
    w1 = abs(eval_kernel(eff.alpha1, 0.0, 0.0))
    w2 = abs(eval_kernel(eff.alpha2, 0.0, 0.0))
    misfit = max(eff.fit_residuals[0] * w1,
                 eff.fit_residuals[1] * w2) / max(w1 + w2, 1e-300)
    if misfit > 0.05:
        warnings.warn(
            f"single-exponential reduction of the thermal kernels misfits "
            f"by {misfit:.1%}; results are approximate for this bath",
            RuntimeWarning, stacklevel=2)
    X = solve_thermal_ocoeff(eff, sys, grid)
    ops = build_operators(cfg.dims, sys)
    traj = integrate_thermal_master(X, ops, projector(basis_state(cfg.dims)), grid)
    res = EngineResult(times=grid.times(), en=traj.en_series(),
                       moments=traj.moments)
    return X, res


# ----------------------------------------------------------------- output


def _fmt(x):
    x = float(x)
    if x == 0.0:
        x = 0.0  # normalize -0.0
    return format(x, ".17g")


def _write_csv(path: Path, names, cols):
    cols = [np.asarray(c) for c in cols]
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(names) + "\n")
        for row in zip(*cols):
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def _num_tag(x):
    return f"{float(x):g}".replace("-", "m").replace(".", "p")


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd",
            "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")

_HEAT_STOPS = (
    (0.267, 0.005, 0.329), (0.283, 0.141, 0.458), (0.254, 0.265, 0.530),
    (0.207, 0.372, 0.553), (0.164, 0.471, 0.558), (0.128, 0.567, 0.551),
    (0.135, 0.659, 0.518), (0.267, 0.749, 0.441), (0.478, 0.821, 0.318),
    (0.741, 0.873, 0.150), (0.993, 0.906, 0.144),
)


def _heat_color(u):
    pos = min(max(u, 0.0), 1.0) * (len(_HEAT_STOPS) - 1)
    i = min(int(pos), len(_HEAT_STOPS) - 2)
    f = pos - i
    rgb = [a + f * (b - a) for a, b in zip(_HEAT_STOPS[i], _HEAT_STOPS[i + 1])]
    return "#" + "".join(f"{int(round(255 * c)):02x}" for c in rgb)


def _ticks(lo, hi, n=5):
    if not math.isfinite(lo) or not math.isfinite(hi) or hi <= lo:
        return [lo]
    raw = (hi - lo) / max(n - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1.0, 2.0, 2.5, 5.0, 10.0) if raw <= m * mag)
    start = math.ceil(lo / step) * step
    return list(np.arange(start, hi + 0.5 * step, step))


def _svg_open(width, height, title):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}" '
        'font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" '
        f'font-size="14">{title}</text>',
    ]


def _svg_axes(parts, x0, y0, x1, y1, xlo, xhi, ylo, yhi, xlabel, ylabel):
    parts.append(f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" '
                 f'height="{y0 - y1}" fill="none" stroke="black"/>')
    for tx in _ticks(xlo, xhi):
        px = x0 + (tx - xlo) / (xhi - xlo) * (x1 - x0)
        parts.append(f'<line x1="{px:.1f}" y1="{y0}" x2="{px:.1f}" '
                     f'y2="{y0 + 4}" stroke="black"/>')
        parts.append(f'<text x="{px:.1f}" y="{y0 + 17}" '
                     f'text-anchor="middle">{tx:g}</text>')
    for ty in _ticks(ylo, yhi):
        py = y0 - (ty - ylo) / (yhi - ylo) * (y0 - y1)
        parts.append(f'<line x1="{x0 - 4}" y1="{py:.1f}" x2="{x0}" '
                     f'y2="{py:.1f}" stroke="black"/>')
        parts.append(f'<text x="{x0 - 7}" y="{py + 4:.1f}" '
                     f'text-anchor="end">{ty:g}</text>')
    parts.append(f'<text x="{(x0 + x1) / 2:.0f}" y="{y0 + 34}" '
                 f'text-anchor="middle">{xlabel}</text>')
    parts.append(f'<text x="16" y="{(y0 + y1) / 2:.0f}" text-anchor="middle" '
                 f'transform="rotate(-90 16 {(y0 + y1) / 2:.0f})">{ylabel}</text>')


def _write_svg_lines(path: Path, x, series, title, xlabel, ylabel):
    w, h = 720, 440
    x0, y0, x1, y1 = 70, h - 50, w - 20, 40
    finite = [np.asarray(ys)[np.isfinite(ys)] for _, ys in series]
    allv = np.concatenate([f for f in finite if len(f)] or [np.zeros(1)])
    ylo = float(min(0.0, allv.min()))
    yhi = float(allv.max())
    if yhi <= ylo:
        yhi = ylo + 1.0
    yhi += 0.05 * (yhi - ylo)
    xlo, xhi = float(x[0]), float(x[-1])
    parts = _svg_open(w, h, title)
    _svg_axes(parts, x0, y0, x1, y1, xlo, xhi, ylo, yhi, xlabel, ylabel)
    for i, (label, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        pts = []
        segs = []
        for xv, yv in zip(x, ys):
            if not math.isfinite(yv):
                if pts:
                    segs.append(pts)
                pts = []
                continue
            px = x0 + (xv - xlo) / (xhi - xlo) * (x1 - x0)
            py = y0 - (yv - ylo) / (yhi - ylo) * (y0 - y1)
            pts.append(f"{px:.2f},{py:.2f}")
        if pts:
            segs.append(pts)
        for seg in segs:
            parts.append(f'<polyline points="{" ".join(seg)}" fill="none" '
                         f'stroke="{color}" stroke-width="1.5"/>')
        ly = y1 + 14 + 16 * i
        parts.append(f'<line x1="{x1 - 150}" y1="{ly - 4}" x2="{x1 - 125}" '
                     f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{x1 - 120}" y="{ly}">{label}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts), encoding="utf-8")


def _write_svg_heat(path: Path, xvals, yvals, Z, title, xlabel, ylabel):
    w, h = 720, 480
    x0, y0, x1, y1 = 70, h - 50, w - 20, 40
    Z = np.asarray(Z, dtype=float)
    stride = max(1, Z.shape[0] // 200)
    Zs = Z[::stride]
    ys = np.asarray(yvals)[::stride]
    lo = float(np.nanmin(Zs))
    hi = float(np.nanmax(Zs))
    if hi <= lo:
        hi = lo + 1.0
    parts = _svg_open(w, h, title)
    cw = (x1 - x0) / Zs.shape[1]
    ch = (y0 - y1) / Zs.shape[0]
    for r in range(Zs.shape[0]):
        py = y0 - (r + 1) * ch
        for c in range(Zs.shape[1]):
            u = (Zs[r, c] - lo) / (hi - lo)
            parts.append(
                f'<rect x="{x0 + c * cw:.2f}" y="{py:.2f}" '
                f'width="{cw + 0.5:.2f}" height="{ch + 0.5:.2f}" '
                f'fill="{_heat_color(u)}"/>'
            )
    _svg_axes(parts, x0, y0, x1, y1, float(xvals[0]), float(xvals[-1]),
              float(ys[0]), float(ys[-1]), xlabel, ylabel)
    parts.append(f'<text x="{x1 - 4}" y="{y1 - 6}" text-anchor="end">'
                 f'range [{lo:.3g}, {hi:.3g}]</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts), encoding="utf-8")


def _coefficient_csv(path: Path, F):
    names = ["t"]
    cols = [F.grid.times()]
    rows = [("f1", F.F1), ("f2", F.F2), ("f3", F.F3), ("f4", F.F4)]
    if F.F5 is not None:
        rows.append(("f5", F.F5))
    for label, series in rows:
        names += [f"{label}_re", f"{label}_im"]
        cols += [series.real, series.imag]
    _write_csv(path, names, cols)


def _thermal_csv(path: Path, X):
    names = ["t"]
    cols = [X.grid.times()]
    for i in (1, 2):
        for j in range(1, 5):
            s = X.series(i, j)
            names += [f"x{i}{j}_re", f"x{i}{j}_im"]
            cols += [s.real, s.imag]
    _write_csv(path, names, cols)


def _node_at(grid: TimeGrid, t_star):
    k = int(round(t_star / grid.dt))
    if not 0 <= k < grid.n_points:
        raise ConfigError(
            f"time {t_star:g} is outside the grid (t_final={grid.t_final:g})"
        )
    return k


def _pool_map(fn, items):
    workers = min(8, os.cpu_count() or 1, max(len(items), 1))
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -------------------------------------------------------------- scenarios


def _scenario_fig2(cfg, outdir, manifest):
    grid = cfg.grid()
    sys_ = cfg.system()
    files = []
    ratios = {}
    k15 = _node_at(grid, 15.0)
    for gamma in (cfg.gamma, _FIG2_LARGE_GAMMA):
        kspec = cfg.bath_kernel(gamma=gamma)
        F = solve_ocoeff(kspec, sys_, grid, include_f5=True)
        name = f"fig2_gamma{_num_tag(gamma)}.csv"
        _coefficient_csv(outdir / name, F)
        files.append(name)
        denom = abs(F.F1[k15])
        ratios[f"{gamma:g}"] = float(abs(F.F5[k15]) / denom) if denom else float("nan")
        if "svg" in cfg.formats:
            sname = name.replace(".csv", ".svg")
            series = [(f"|F{j}|", np.abs(s)) for j, s in
                      enumerate((F.F1, F.F2, F.F3, F.F4, F.F5), start=1)]
            _write_svg_lines(outdir / sname, grid.times(), series,
                             f"coefficient magnitudes, memory rate {gamma:g}",
                             "t", "|F_j|")
            files.append(sname)
    manifest["metrics"]["f5_over_f1_at_t15"] = ratios
    manifest["assumptions"].append(
        "detuning/coupling/decay values reuse the entanglement scenario set"
    )
    return files


def _user_set(source):
    return source == "file" or source.startswith("flag")


def _scenario_fig3(cfg, outdir, manifest):
    grid = cfg.grid()
    sys_ = cfg.system()
    gammas = [cfg.gamma] if _user_set(cfg.gamma_source) else list(_FIG3_GAMMAS)

    def point(gamma):
        if gamma is None:
            kspec = KernelSpec.markov(cfg.decay)
        else:
            kspec = cfg.bath_kernel(gamma=gamma)
        return _run_point(cfg, sys_, kspec, grid)[1]

    jobs = gammas + [None]
    results = _pool_map(point, jobs)
    times = results[0].times
    names = ["t"]
    cols = [times]
    series = []
    onsets = {}
    final = {}
    for gamma, res in zip(jobs, results):
        label = "markov" if gamma is None else f"gamma{_num_tag(gamma)}"
        names.append(f"en_{label}")
        cols.append(res.en)
        series.append((label, res.en))
        onsets[label] = _onset_time(times, res.en)
        final[label] = float(res.en[-1])
    name = "fig3_en.csv"
    _write_csv(outdir / name, names, cols)
    files = [name]
    if "svg" in cfg.formats:
        _write_svg_lines(outdir / "fig3_en.svg", times, series,
                         "entanglement growth by bath memory", "t", "En")
        files.append("fig3_en.svg")
    manifest["metrics"]["onset_time"] = onsets
    manifest["metrics"]["en_final"] = final
    manifest["assumptions"].append(
        "memory-rate list is a scenario default (not fixed by the source figure)"
    )
    manifest["assumptions"].append(
        f"onset time is the interpolated first crossing of En = {_ONSET_LEVEL:g}"
    )
    return files


def _scenario_fig4(cfg, outdir, manifest):
    grid = cfg.grid()
    sys_ = cfg.system()
    omegas = list(_FIG4_OMEGAS)

    def point(omega):
        return _run_point(cfg, sys_, cfg.bath_kernel(omega_env=omega), grid)[1]

    results = _pool_map(point, omegas)
    times = results[0].times
    names = ["t"] + [f"en_omega{_num_tag(w)}" for w in omegas]
    cols = [times] + [r.en for r in results]
    name = "fig4_en_grid.csv"
    _write_csv(outdir / name, names, cols)
    files = [name]

    kslice = int(np.argmin(np.abs(times - _FIG4_SLICE_T)))
    slice_en = np.array([r.en[kslice] for r in results])
    _write_csv(outdir / "fig4_slice_t20.csv", ["omega_env", "en_at_t20"],
               [np.asarray(omegas), slice_en])
    files.append("fig4_slice_t20.csv")
    if "svg" in cfg.formats:
        Z = np.stack([r.en for r in results], axis=1)
        _write_svg_heat(outdir / "fig4_en_heat.svg", omegas, times, Z,
                        "entanglement vs environment frequency",
                        "environment frequency", "t")
        _write_svg_lines(outdir / "fig4_slice_t20.svg", np.asarray(omegas),
                         [("t=20", slice_en)],
                         "entanglement slice at t=20",
                         "environment frequency", "En")
        files += ["fig4_en_heat.svg", "fig4_slice_t20.svg"]
    manifest["metrics"]["en_at_t20"] = {f"{w:g}": float(e)
                                        for w, e in zip(omegas, slice_en)}
    manifest["assumptions"].append(
        "environment-frequency range [0, 2] and decay 0.4 are scenario defaults"
    )
    return files


def _scenario_fig5(cfg, outdir, manifest):
    grid = cfg.grid()
    gammas = [cfg.gamma] if _user_set(cfg.gamma_source) else list(_FIG5_GAMMAS)
    deltas = list(_FIG5_DELTAS)
    files = []
    argmax = {}
    for gamma in gammas:
        kspec = cfg.bath_kernel(gamma=gamma)

        def point(delta):
            return _run_point(cfg, cfg.system(delta=delta), kspec, grid)[1]

        results = _pool_map(point, deltas)
        times = results[0].times
        tag = f"gamma{_num_tag(gamma)}"
        name = f"fig5_en_grid_{tag}.csv"
        _write_csv(outdir / name,
                   ["t"] + [f"en_delta{_num_tag(d)}" for d in deltas],
                   [times] + [r.en for r in results])
        files.append(name)
        best = np.array([float(np.nanmax(r.en)) for r in results])
        _write_csv(outdir / f"fig5_max_{tag}.csv", ["delta", "en_max"],
                   [np.asarray(deltas), best])
        files.append(f"fig5_max_{tag}.csv")
        argmax[f"{gamma:g}"] = float(deltas[int(np.argmax(best))])
        if "svg" in cfg.formats:
            Z = np.stack([r.en for r in results], axis=1)
            _write_svg_heat(outdir / f"fig5_en_heat_{tag}.svg", deltas, times,
                            Z, f"entanglement vs detuning, memory rate {gamma:g}",
                            "detuning", "t")
            _write_svg_lines(outdir / f"fig5_max_{tag}.svg", np.asarray(deltas),
                             [(f"memory rate {gamma:g}", best)],
                             "peak entanglement vs detuning", "detuning",
                             "max En")
            files += [f"fig5_en_heat_{tag}.svg", f"fig5_max_{tag}.svg"]
    manifest["metrics"]["argmax_delta"] = argmax
    return files


def _custom_single(cfg, outdir, manifest, delta=None, coupling=None,
                   gamma=None, omega_env=None, decay=None, temperature=None):
    grid = cfg.grid()
    sys_ = cfg.system(delta=delta, coupling=coupling)
    T = cfg.temperature if temperature is None else temperature
    files = []
    if T > 0:
        X, res = _run_thermal_point(cfg, sys_, grid, T)
        _thermal_csv(outdir / "thermal_coefficients.csv", X)
        files.append("thermal_coefficients.csv")
    else:
        kspec = cfg.bath_kernel(gamma=gamma, omega_env=omega_env, decay=decay)
        F, res = _run_point(cfg, sys_, kspec, grid)
        _coefficient_csv(outdir / "coefficients.csv", F)
        files.append("coefficients.csv")
    n_cav = res.moments[:, 5].real - 1.0
    n_mec = res.moments[:, 12].real - 1.0
    _write_csv(outdir / "timeseries.csv",
               ["t", "en", "n_cavity", "n_mirror"],
               [res.times, res.en, n_cav, n_mec])
    files.append("timeseries.csv")
    if "svg" in cfg.formats:
        _write_svg_lines(outdir / "timeseries.svg", res.times,
                         [("En", res.en), ("n_cavity", n_cav),
                          ("n_mirror", n_mec)],
                         "custom run", "t", "value")
        files.append("timeseries.svg")
    manifest["metrics"]["en_final"] = float(res.en[-1])
    manifest["metrics"]["en_max"] = float(np.nanmax(res.en))
    return files


def _scenario_custom(cfg, outdir, manifest):
    if cfg.sweep is None:
        return _custom_single(cfg, outdir, manifest)
    param, pts = cfg.sweep
    index = []

    def point(item):
        i, value = item
        sub = outdir / f"run_{i:03d}_{param}_{_num_tag(value)}"
        sub.mkdir(parents=True, exist_ok=True)
        sub_manifest = {"metrics": {}, "assumptions": []}
        kw = {param: value}
        files = _custom_single(cfg, sub, sub_manifest, **kw)
        (sub / "point.json").write_text(
            json.dumps({"parameter": param, "value": value,
                        "metrics": sub_manifest["metrics"],
                        "outputs": files}, indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
        return {"dir": sub.name, "parameter": param, "value": float(value),
                "en_final": sub_manifest["metrics"]["en_final"],
                "en_max": sub_manifest["metrics"]["en_max"]}

    index = _pool_map(point, list(enumerate(pts)))
    manifest["sweep"] = {"parameter": param,
                         "values": [float(v) for v in pts],
                         "points": index}
    return [entry["dir"] for entry in index]


def _echo_text(cfg: RunConfig):
    lines = [f"# resolved configuration, scenario {cfg.scenario}"]
    current = None
    for sec, key, raw, source in cfg.resolved:
        if sec != current:
            lines.append("")
            lines.append(f"[{sec}]")
            current = sec
        lines.append(f"{key} = {raw}  # {source}")
    return "\n".join(lines) + "\n"


def run_scenario(cfg: RunConfig) -> dict:
    """Execute one scenario and write its artifact files.

    Returns the manifest that was written to the output directory."""
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "scenario": cfg.scenario,
        "engine": cfg.engine,
        "seed": cfg.seed,
        "grid": {"dt": cfg.dt, "t_final": cfg.t_final},
        "metrics": {},
        "assumptions": [],
    }
    runner = {
        "fig2": _scenario_fig2,
        "fig3": _scenario_fig3,
        "fig4": _scenario_fig4,
        "fig5": _scenario_fig5,
        "custom": _scenario_custom,
    }[cfg.scenario]
    files = runner(cfg, outdir, manifest)
    (outdir / "resolved.cfg").write_text(_echo_text(cfg), encoding="utf-8")
    manifest["outputs"] = files + ["resolved.cfg"]
    (outdir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="nmoptomech",
        description="cavity-mirror entanglement under a memory-carrying bath",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="execute a scenario from a config file")
    run.add_argument("--scenario", required=True, choices=_SCENARIOS)
    run.add_argument("--config", required=True, help="path to config file")
    run.add_argument("--out")
    run.add_argument("--seed", type=int)
    run.add_argument("--engine", choices=_ENGINES)
    run.add_argument("--dt", type=float)
    run.add_argument("--tfinal", type=float)
    run.add_argument("--gamma", type=float)
    run.add_argument("--omega-env", dest="omega_env", type=float)
    run.add_argument("--delta", type=float)
    run.add_argument("--coupling", type=float)
    run.add_argument("--decay", type=float)
    run.add_argument("--format")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    overrides = {}
    for flag in _FLAG_MAP:
        value = getattr(args, flag, None)
        if value is not None:
            overrides[flag] = value
    try:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        cfg = parse_config(text, scenario=args.scenario, overrides=overrides)
        manifest = run_scenario(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    metrics = json.dumps(manifest["metrics"], sort_keys=True)
    print(f"{cfg.scenario}: wrote {len(manifest['outputs'])} files to "
          f"{cfg.out}; metrics {metrics}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
