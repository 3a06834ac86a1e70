"""Command line front end: ``jrlab <subcommand> [--config FILE] [--out DIR]``.

Configuration is an INI file.  Sections and keys (defaults in brackets)::

    [run]        seed [0], threads [1], figures [true]
    [domain]     kind = plane | torus
                 plane: radius, n          torus: lx, ly, nx, ny
    [gauge]      kind = trivial | degree [trivial]; degree [0]
    [higgs]      kind = model | product | vortex | constant
                 model:    coeff, p, q
                 product:  roots = x+yj:k, ...   (factor z-a for k=+1, conj(z-a) for k=-1)
                 vortex:   d, tau_factor [2.0], zeros [spread], side = jr | rr [jr]
                 constant: value
                 t [1.0]
    [solver]     num_pairs [16], tol [auto], max_iter [5000],
                 method = auto | lanczos_on_square | shift_invert | dense [auto],
                 gap_scale = auto | none | <float> [auto]
    [schedule]   t_values [1.0], m [auto]
    [experiment] subcommand specific keys, see ``EXPERIMENT_KEYS``
    [assert]     metric = value | lo:hi | <bound   (checked against the run's metrics)

Every subcommand without ``--config`` starts from a preset.  Flags
override config keys, config keys override presets, and the merged
configuration is echoed to ``effective.ini``; running that file again
reproduces the same CSVs byte for byte.

Exit codes: 0 success, 1 compute failure or failed assertion, 2 invalid
configuration (message names the key path and, when known, the line).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import math
import os
import re
import sys
from pathlib import Path

SUBCOMMANDS = ("model-oracle", "spectrum", "gap-scan", "concentration", "index",
               "riemann-roch", "vortex", "bdg-check", "clifford-table")

REQUIRED = object()

SCHEMA = {
    "run": {"seed": 0, "threads": 1, "figures": "true"},
    "domain": {"kind": REQUIRED, "radius": None, "n": None, "lx": None, "ly": None,
               "nx": None, "ny": None},
    "gauge": {"kind": "trivial", "degree": 0},
    "higgs": {"kind": REQUIRED, "coeff": None, "p": None, "q": None, "roots": None,
              "d": None, "tau_factor": 2.0, "zeros": None, "side": "jr", "value": None,
              "t": 1.0},
    "solver": {"num_pairs": 16, "tol": "auto", "max_iter": 5000, "method": "auto",
               "gap_scale": "auto"},
    "schedule": {"t_values": "1.0", "m": "auto"},
}

EXPERIMENT_KEYS = {
    "model-oracle": {"alpha_scales": "0", "signs": "1,-1"},
    "spectrum": {},
    "gap-scan": {},
    "concentration": {"deltas": "0.25,0.5,1.0", "delta": 0.5},
    "index": {"run_id": "run"},
    "riemann-roch": {"deg_l": 1, "tau_factor": 2.0},
    "vortex": {"jr_dims": "false", "save_fields": "false"},
    "bdg-check": {"p_sign": "1,-1", "s_phi": "1,-1", "trials": 8},
    "clifford-table": {"max_dim": 8},
}

PRESETS = {
    "model-oracle": {"domain": {"kind": "plane", "radius": 4.0, "n": 48},
                     "higgs": {"kind": "model", "coeff": 4.0, "p": 1, "q": 0}},
    "spectrum": {"domain": {"kind": "plane", "radius": 4.0, "n": 48},
                 "higgs": {"kind": "model", "coeff": 4.0, "p": 1, "q": 0}},
    "index": {"domain": {"kind": "plane", "radius": 2.5, "n": 48},
              "higgs": {"kind": "model", "coeff": 1.0, "p": 1, "q": 0, "t": 16.0}},
    "gap-scan": {"domain": {"kind": "plane", "radius": 1.0, "n": 48},
                 "higgs": {"kind": "model", "coeff": 1.0, "p": 1, "q": 0},
                 "schedule": {"t_values": "10,20,40,80,160"}},
    "concentration": {"domain": {"kind": "plane", "radius": 2.0, "n": 48},
                      "higgs": {"kind": "model", "coeff": 1.0, "p": 1, "q": 0},
                      "schedule": {"t_values": "2,4,8,16,32"}},
    "riemann-roch": {"domain": {"kind": "torus", "lx": 1.0, "ly": 1.0, "nx": 48, "ny": 48},
                     "higgs": {"kind": "constant", "value": 1.0}},
    "vortex": {"domain": {"kind": "torus", "lx": 1.0, "ly": 1.0, "nx": 48, "ny": 48},
               "higgs": {"kind": "vortex", "d": 2, "tau_factor": 2.0}},
    "bdg-check": {"domain": {"kind": "plane", "radius": 2.0, "n": 15},
                  "higgs": {"kind": "model", "coeff": 1.0, "p": 1, "q": 0, "t": 4.0}},
    "clifford-table": {"domain": {"kind": "plane", "radius": 1.0, "n": 8},
                       "higgs": {"kind": "constant", "value": 0.0}},
}

# radius tuned so the m-th gap stays resolved over t in [10, 160] at n = 48
GAP_SCAN_RADIUS = {1: 1.0, 2: 1.5}


class ConfigError(Exception):
    pass


# ------------------------------------------------------------- config


def _line_of(text: str, section: str, key: str):
    cur = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[(.+)\]$", s)
        if m:
            cur = m.group(1).strip()
        elif cur == section and re.match(rf"{re.escape(key)}\s*[=:]", s, re.IGNORECASE):
            return no
    return None


class Config:
    """Merged configuration with typed, key-path-anchored accessors."""

    def __init__(self, cmd: str, data: dict, source: str = ""):
        self.cmd = cmd
        self.data = data
        self.source = source

    def _where(self, section, key):
        line = _line_of(self.source, section, key) if self.source else None
        return f"{section}.{key}" + (f" (line {line})" if line else "")

    def raw(self, section, key):
        v = self.data.get(section, {}).get(key)
        if v is None or v is REQUIRED:
            raise ConfigError(f"missing {section}.{key}")
        return v

    def get(self, section, key, kind=str):
        v = self.raw(section, key)
        try:
            if kind is bool:
                s = str(v).strip().lower()
                if s not in ("true", "false"):
                    raise ValueError(s)
                return s == "true"
            if kind is int:
                f = float(v)
                if f != int(f):
                    raise ValueError(v)
                return int(f)
            if kind is complex:
                return complex(str(v).replace(" ", ""))
            return kind(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid value {v!r} for {self._where(section, key)}: "
                              f"expected {kind.__name__}") from exc

    def floats(self, section, key) -> tuple:
        v = str(self.raw(section, key))
        try:
            return tuple(float(x) for x in v.split(",") if x.strip())
        except ValueError as exc:
            raise ConfigError(f"invalid list {v!r} for {self._where(section, key)}") from exc

    def ints(self, section, key) -> tuple:
        vals = self.floats(section, key)
        if any(x != int(x) for x in vals):
            raise ConfigError(f"invalid integer list for {self._where(section, key)}")
        return tuple(int(x) for x in vals)

    def choice(self, section, key, options):
        v = str(self.raw(section, key)).strip()
        if v not in options:
            raise ConfigError(f"invalid value {v!r} for {self._where(section, key)}: "
                              f"expected one of {', '.join(options)}")
        return v

    def echo(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for section in list(SCHEMA) + ["experiment", "assert"]:
            items = self.data.get(section, {})
            cp.add_section(section)
            for k, v in items.items():
                if v is not None and v is not REQUIRED:
                    cp.set(section, k, str(v))
        buf = io.StringIO()
        buf.write(f"# effective configuration for `{self.cmd}`\n")
        cp.write(buf)
        return buf.getvalue()


def _defaults(cmd: str) -> dict:
    data = {s: dict(keys) for s, keys in SCHEMA.items()}
    data["experiment"] = dict(EXPERIMENT_KEYS[cmd])
    data["assert"] = {}
    return data


def load_config(cmd: str, path=None, overrides=None) -> Config:
    data = _defaults(cmd)
    text = ""
    if path is None:
        for s, kv in PRESETS[cmd].items():
            data[s].update(kv)
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
        try:
            cp.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        for s in cp.sections():
            if s not in data:
                raise ConfigError(f"unknown section [{s}]")
            for k, v in cp.items(s):
                if s != "assert" and k not in data[s]:
                    raise ConfigError(f"unknown key {s}.{k} (line {_line_of(text, s, k)})")
                data[s][k] = v
    for (s, k), v in (overrides or {}).items():
        if v is not None:
            data[s][k] = v
    cfg = Config(cmd, data, text)
    validate(cfg)
    return cfg


def validate(cfg: Config) -> None:
    """Type-check everything the run will read, before any compute."""
    cfg.get("run", "seed", int)
    if cfg.get("run", "threads", int) < 1:
        raise ConfigError("run.threads must be at least 1")
    cfg.get("run", "figures", bool)
    kind = cfg.choice("domain", "kind", ("plane", "torus"))
    if kind == "plane":
        cfg.get("domain", "radius", float)
        cfg.get("domain", "n", int)
    else:
        for k in ("lx", "ly"):
            cfg.get("domain", k, float)
        for k in ("nx", "ny"):
            cfg.get("domain", k, int)
    g = cfg.choice("gauge", "kind", ("trivial", "degree"))
    if g == "degree":
        cfg.get("gauge", "degree", int)
        if kind != "torus":
            raise ConfigError("gauge.kind = degree needs domain.kind = torus")
    hk = cfg.choice("higgs", "kind", ("model", "product", "vortex", "constant"))
    cfg.get("higgs", "t", float)
    if hk == "model":
        cfg.get("higgs", "coeff", complex)
        cfg.get("higgs", "p", int)
        cfg.get("higgs", "q", int)
    elif hk == "product":
        parse_roots(cfg)
    elif hk == "vortex":
        cfg.get("higgs", "d", int)
        cfg.get("higgs", "tau_factor", float)
        cfg.choice("higgs", "side", ("jr", "rr"))
        if kind != "torus":
            raise ConfigError("higgs.kind = vortex needs domain.kind = torus")
        if cfg.data["higgs"].get("zeros") is not None:
            parse_zeros(cfg)
    else:
        cfg.get("higgs", "value", complex)
    cfg.get("solver", "num_pairs", int)
    cfg.get("solver", "max_iter", int)
    cfg.choice("solver", "method", ("auto", "lanczos_on_square", "shift_invert", "dense"))
    if str(cfg.raw("solver", "tol")) != "auto":
        cfg.get("solver", "tol", float)
    if str(cfg.raw("solver", "gap_scale")) not in ("auto", "none"):
        cfg.get("solver", "gap_scale", float)
    cfg.floats("schedule", "t_values")
    if str(cfg.raw("schedule", "m")) != "auto":
        cfg.get("schedule", "m", int)
    for k in EXPERIMENT_KEYS[cfg.cmd]:
        cfg.raw("experiment", k)
    for k, v in cfg.data["assert"].items():
        parse_expectation(cfg, k, v)


def parse_roots(cfg: Config):
    out = []
    for item in str(cfg.raw("higgs", "roots")).split(","):
        try:
            pos, k = item.split(":")
            out.append((complex(pos.strip().replace(" ", "")), int(k)))
        except ValueError as exc:
            raise ConfigError(f"invalid root {item.strip()!r} in {cfg._where('higgs', 'roots')}") from exc
        if out[-1][1] not in (1, -1):
            raise ConfigError(f"root index must be +1 or -1 in {cfg._where('higgs', 'roots')}")
    return out


def parse_zeros(cfg: Config):
    try:
        return tuple((complex(z.strip()), 1) for z in str(cfg.raw("higgs", "zeros")).split(","))
    except ValueError as exc:
        raise ConfigError(f"invalid zero list in {cfg._where('higgs', 'zeros')}") from exc


def parse_expectation(cfg: Config, key: str, spec):
    s = str(spec).strip()
    try:
        if s.startswith("<"):
            return ("lt", float(s[1:]))
        if ":" in s:
            lo, hi = s.split(":")
            return ("range", float(lo), float(hi))
        if s.lower() in ("true", "false"):
            return ("eq", s.lower() == "true")
        if "," in s:
            return ("eq", tuple(int(x) for x in s.split(",")))
        return ("eq", float(s))
    except ValueError as exc:
        raise ConfigError(f"invalid expectation {s!r} for {cfg._where('assert', key)}") from exc


def check_assertions(cfg: Config, metrics: dict) -> list[tuple[str, bool, str]]:
    out = []
    for key, spec in cfg.data["assert"].items():
        exp = parse_expectation(cfg, key, spec)
        if key not in metrics:
            out.append((key, False, "metric not produced"))
            continue
        v = metrics[key]
        if exp[0] == "lt":
            ok = float(v) < exp[1]
        elif exp[0] == "range":
            ok = exp[1] <= float(v) <= exp[2]
        elif isinstance(exp[1], tuple):
            ok = tuple(v) == exp[1]
        elif isinstance(exp[1], bool):
            ok = bool(v) is exp[1]
        else:
            ok = float(v) == exp[1]
        out.append((key, bool(ok), _fmt(v)))
    return out


# ------------------------------------------------------------- output


def _fmt(v) -> str:
    if isinstance(v, (bool,)) or type(v).__name__ == "bool_":
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return " ".join(_fmt(x) for x in v)
    if isinstance(v, complex):
        return f"{v.real:.17g}{v.imag:+.17g}j"
    if isinstance(v, int) or type(v).__name__.startswith("int"):
        return str(int(v))
    if isinstance(v, float) or type(v).__name__.startswith("float"):
        return f"{float(v):.17g}"
    return str(v)


def write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    write_atomic(path, buf.getvalue())


def save_figure(fig, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp.png")
    fig.savefig(tmp, dpi=110, metadata={"Software": None})
    os.replace(tmp, path)


# ------------------------------------------------------------- builders


def build_grid(cfg: Config):
    from .fields import PlanePatch, Torus
    if cfg.get("domain", "kind") == "plane":
        return PlanePatch(cfg.get("domain", "radius", float), cfg.get("domain", "n", int))
    return Torus(cfg.get("domain", "lx", float), cfg.get("domain", "ly", float),
                 cfg.get("domain", "nx", int), cfg.get("domain", "ny", int))


def build_fields(cfg: Config, grid):
    """Gauge field, Higgs configuration and (for vortex input) the solution."""
    import numpy as np
    from .fields import GaugeField, HiggsConfig, ZeroDatum, sample_model_phi, torus_gauge_field
    kind = cfg.get("higgs", "kind")
    t = cfg.get("higgs", "t", float)
    if kind == "vortex":
        sol = solve_vortex_from(cfg, grid)
        from .vortex import vortex_to_jr
        gauge, higgs = vortex_to_jr(sol, side=cfg.get("higgs", "side"))
        return gauge, higgs.with_scale(t), sol
    if cfg.get("gauge", "kind") == "degree":
        gauge = torus_gauge_field(grid, cfg.get("gauge", "degree", int))
    else:
        gauge = GaugeField.trivial(grid)
    if kind == "model":
        higgs = sample_model_phi(grid, cfg.get("higgs", "coeff", complex), cfg.get("higgs", "p", int),
                                 cfg.get("higgs", "q", int), t=t)
    elif kind == "product":
        z = grid.coords()
        phi = np.ones(grid.shape, dtype=complex)
        zeros = []
        for a, k in parse_roots(cfg):
            phi = phi * ((z - a) if k == 1 else np.conj(z - a))
            zeros.append(ZeroDatum(a, k, 1))
        higgs = HiggsConfig(grid, phi, tuple(zeros), t)
    else:
        higgs = HiggsConfig(grid, np.full(grid.shape, cfg.get("higgs", "value", complex)), (), t)
    return gauge, higgs, None


def solve_vortex_from(cfg: Config, grid, tau_factor=None, d=None):
    from .experiments import spread_zeros
    from .vortex import VortexProblem, bradlow_threshold, solve_vortex
    d = d if d is not None else cfg.get("higgs", "d", int)
    zeros = parse_zeros(cfg) if cfg.data["higgs"].get("zeros") is not None else spread_zeros(grid, d)
    if sum(m for _, m in zeros) != d:
        raise ConfigError(f"higgs.zeros lists {len(zeros)} zeros but higgs.d = {d}")
    tf = tau_factor if tau_factor is not None else cfg.get("higgs", "tau_factor", float)
    return solve_vortex(VortexProblem(grid, zeros, tf * bradlow_threshold(grid, d)))


def solver_config(cfg: Config):
    from .eigensolver import SolverConfig
    tol = cfg.raw("solver", "tol")
    return SolverConfig(num_pairs=cfg.get("solver", "num_pairs", int),
                        tol=None if str(tol) == "auto" else float(tol),
                        max_iter=cfg.get("solver", "max_iter", int),
                        seed=cfg.get("run", "seed", int),
                        method=cfg.get("solver", "method"))


def gap_scale(cfg: Config, grid, higgs):
    from .fields import PlanePatch
    v = str(cfg.raw("solver", "gap_scale"))
    if v == "none":
        return None
    if v != "auto":
        return float(v)
    if isinstance(grid, PlanePatch) and higgs.zeros:
        return higgs.t ** (1.0 / (higgs.max_degree + 1))
    return None


def schedule(cfg: Config, higgs):
    from .fields import ScalingSchedule
    m = cfg.raw("schedule", "m")
    M = higgs.max_degree if str(m) == "auto" else int(float(m))
    return ScalingSchedule(cfg.floats("schedule", "t_values"), M)


# ------------------------------------------------------------- experiments


def run_model_oracle(cfg, out, figures):
    from .model_oracle import ModelProblem, alpha_row, bump, expected_dims
    if cfg.get("higgs", "kind") != "model" or cfg.get("domain", "kind") != "plane":
        raise ConfigError("model-oracle needs higgs.kind = model on a plane domain")
    prob = ModelProblem(cfg.get("higgs", "coeff", complex), cfg.get("higgs", "p", int),
                        cfg.get("higgs", "q", int), R=cfg.get("domain", "radius", float),
                        n=cfg.get("domain", "n", int))
    rows = [alpha_row(prob, a, bump(prob.R / 2)) for a in cfg.floats("experiment", "alpha_scales")]
    write_csv(out / "oracle.csv", ["T", "p", "q", "alpha_norm", "dim_plus", "dim_minus",
                                   "sigma_gap", "separation_ratio"],
              [(r.T, r.p, r.q, r.alpha_norm, r.dim_plus, r.dim_minus, r.sigma_gap,
                r.separation_ratio) for r in rows])
    want = expected_dims(prob.k)
    return {"dims": (rows[0].dim_plus, rows[0].dim_minus),
            "expected": want,
            "separation_ratio": min(r.separation_ratio for r in rows),
            "all_match": all(r.confident and (r.dim_plus, r.dim_minus) == want for r in rows)}


def _spectrum_and_index(cfg, out, figures, write_spectrum):
    from .assembly import assemble_H
    from .eigensolver import spectrum_rows
    from .experiments import IndexReport, index_rows, solve_with_kernel
    grid = build_grid(cfg)
    gauge, higgs, _ = build_fields(cfg, grid)
    op = assemble_H(grid, gauge, higgs)
    rep, kc = solve_with_kernel(op, solver_config(cfg), gap_scale(cfg, grid, higgs))
    run_id = str(cfg.data["experiment"].get("run_id", "run"))
    ir = IndexReport(run_id, kc.dim_plus, kc.dim_minus, higgs.total_index, kc.separation_ratio,
                     kc.ambiguous, kc.lattice_plus, kc.lattice_minus)
    write_csv(out / "index.csv", ["run_id", "dim_plus", "dim_minus", "expected"], index_rows([ir]))
    if write_spectrum:
        write_csv(out / "spectrum.csv", ["idx", "eigenvalue", "residual", "plus_mass", "minus_mass"],
                  spectrum_rows(rep))
        if figures:
            import matplotlib.pyplot as plt
            fig, ax = plt.subplots(figsize=(5, 3.2))
            ax.scatter(range(rep.eigenvalues.size), rep.eigenvalues,
                       c=rep.plus_mass - rep.minus_mass, cmap="coolwarm", vmin=-1, vmax=1, s=14)
            ax.axvline(rep.cluster_size - 0.5, color="0.6", lw=0.8, ls="--")
            ax.set_xlabel("pair index (by |lambda|)")
            ax.set_ylabel("lambda")
            fig.tight_layout()
            save_figure(fig, out / "spectrum.png")
            plt.close(fig)
    pair_ok = bool(all(abs(d) <= 2 * r for d, r in zip(rep.pairing_defects(), rep.residuals)))
    return {"dims": (kc.dim_plus, kc.dim_minus), "index": kc.index, "expected": higgs.total_index,
            "separation_ratio": kc.separation_ratio, "ambiguous": kc.ambiguous,
            "lattice_dims": (kc.lattice_plus, kc.lattice_minus), "pairing_ok": pair_ok,
            "converged": rep.converged}


def run_spectrum(cfg, out, figures):
    return _spectrum_and_index(cfg, out, figures, True)


def run_index(cfg, out, figures):
    return _spectrum_and_index(cfg, out, figures, False)


def run_gap_scan(cfg, out, figures):
    from .experiments import gap_scan, gapscan_rows
    grid = build_grid(cfg)
    gauge, higgs, _ = build_fields(cfg, grid)
    scan = gap_scan(grid, gauge, higgs, schedule(cfg, higgs), solver_config(cfg))
    write_csv(out / "gapscan.csv", ["t", "gap", "tau_t", "fit_slope"], gapscan_rows(scan))
    if figures:
        import matplotlib.pyplot as plt
        import numpy as np
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        t = np.asarray(scan.t)
        ax.loglog(t, scan.gap, "o", label="gap")
        ax.loglog(t, scan.gap[0] * (t / t[0]) ** scan.predicted, "--", color="0.5",
                  label=f"t^{scan.predicted:.3g}")
        ax.set_xlabel("t")
        ax.set_ylabel("smallest nonkernel |lambda|")
        ax.legend(frameon=False)
        fig.tight_layout()
        save_figure(fig, out / "gapscan.png")
        plt.close(fig)
    return {"slope": scan.slope, "stderr": scan.stderr, "predicted": scan.predicted,
            "ratio": scan.ratio(), "excluded": len(scan.excluded)}


def run_concentration(cfg, out, figures):
    from .experiments import concentration_profile, concentration_rows, concentration_slope
    grid = build_grid(cfg)
    gauge, higgs, _ = build_fields(cfg, grid)
    deltas = cfg.floats("experiment", "deltas")
    delta = cfg.get("experiment", "delta", float)
    if delta not in deltas:
        raise ConfigError("experiment.delta must be one of experiment.deltas")
    prof = concentration_profile(grid, gauge, higgs, deltas, schedule(cfg, higgs), solver_config(cfg))
    write_csv(out / "concentration.csv", ["t", "delta", "mass_outside"], concentration_rows(prof))
    slope, mono = concentration_slope(prof, delta)
    if figures:
        import matplotlib.pyplot as plt
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for j, d in enumerate(deltas):
            ax.loglog([p.t for p in prof], [p.mass_outside[j] for p in prof], "o-", label=f"delta={d:g}")
        ax.set_xlabel("t")
        ax.set_ylabel("mass outside")
        ax.legend(frameon=False)
        fig.tight_layout()
        save_figure(fig, out / "concentration.png")
        plt.close(fig)
    j = deltas.index(delta)
    return {"slope": slope, "monotone": mono, "mass_last": prof[-1].mass_outside[j],
            "floored": sum(p.floored[j] for p in prof)}


def run_riemann_roch(cfg, out, figures):
    from .experiments import riemann_roch_check
    grid = build_grid(cfg)
    if cfg.get("domain", "kind") != "torus":
        raise ConfigError("riemann-roch needs domain.kind = torus")
    rr = riemann_roch_check(grid, cfg.get("experiment", "deg_l", int),
                            cfg.get("experiment", "tau_factor", float), solver_config(cfg))
    write_csv(out / "riemann_roch.csv", ["deg_l", "dim_plus", "dim_minus", "complex_index", "expected"],
              [(rr.deg_L, rr.dim_plus, rr.dim_minus, rr.complex_index, rr.expected)])
    return {"complex_index": rr.complex_index, "expected": rr.expected,
            "dims": (rr.dim_plus, rr.dim_minus), "match": rr.complex_index == rr.expected}


def run_vortex(cfg, out, figures):
    import numpy as np
    from .vortex import vortex_rows, zero_windings
    grid = build_grid(cfg)
    if cfg.get("higgs", "kind") != "vortex":
        raise ConfigError("vortex needs higgs.kind = vortex")
    sol = solve_vortex_from(cfg, grid)
    write_csv(out / "vortex.csv", ["d", "tau", "residual_1", "residual_2", "energy", "iters"],
              vortex_rows([sol]))
    d, tau = sol.problem.degree, sol.problem.tau
    metrics = {"residual_1": sol.residual_1, "residual_2": sol.residual_2,
               "energy_rel_error": abs(sol.energy - 2 * math.pi * tau * d) / (2 * math.pi * tau * d),
               "flux": sol.gauge.total_flux() / (2 * math.pi), "windings": tuple(zero_windings(sol)),
               "newton_iters": sol.newton_iters}
    if cfg.get("experiment", "save_fields", bool):
        from .fields import save_field
        save_field(out / "vortex_higgs.fld", sol.higgs)
        save_field(out / "vortex_gauge.fld", sol.gauge)
    if cfg.get("experiment", "jr_dims", bool):
        from .assembly import assemble_H
        from .experiments import solve_with_kernel
        from .vortex import vortex_to_jr
        gauge, higgs = vortex_to_jr(sol, side=cfg.get("higgs", "side"))
        _, kc = solve_with_kernel(assemble_H(grid, gauge, higgs), solver_config(cfg))
        metrics["jr_dims"] = (kc.dim_plus, kc.dim_minus)
        metrics["complex_index"] = kc.index / 2
    if figures:
        import matplotlib.pyplot as plt
        fig, ax = plt.subplots(figsize=(4, 3.5))
        im = ax.imshow(np.abs(sol.phi.T) ** 2, origin="lower", extent=(0, grid.lx, 0, grid.ly),
                       cmap="viridis")
        fig.colorbar(im, ax=ax, label="|Phi|^2")
        ax.set_title(f"d={d}, tau={tau:.4g}")
        fig.tight_layout()
        save_figure(fig, out / "vortex.png")
        plt.close(fig)
    return metrics


def run_bdg_check(cfg, out, figures):
    from .assembly import assemble_bdg
    from .experiments import bdg_rows, bdg_symmetry_check
    grid = build_grid(cfg)
    gauge, higgs, _ = build_fields(cfg, grid)
    # the auto rule is tuned to H's gap, which the doubled operator does not share
    bdg_gap = None if str(cfg.raw("solver", "gap_scale")) == "auto" else gap_scale(cfg, grid, higgs)
    checks = []
    for p in cfg.ints("experiment", "p_sign"):
        for s in cfg.ints("experiment", "s_phi"):
            if p not in (1, -1) or s not in (1, -1):
                raise ConfigError("experiment.p_sign and experiment.s_phi take values +1, -1")
            checks.append(bdg_symmetry_check(assemble_bdg(grid, gauge, higgs, p, s),
                                             cfg.get("experiment", "trials", int),
                                             cfg.get("run", "seed", int), solver_config(cfg), bdg_gap))
    write_csv(out / "bdg.csv", ["p_sign", "s_phi", "c_square", "commutation", "square",
                                "kernel_invariance", "kernel_dim"], bdg_rows(checks))
    return {"max_commutation": max(c.commutation for c in checks),
            "max_square": max(c.square for c in checks),
            "max_kernel_invariance": max(c.kernel_invariance for c in checks),
            "even_when_quaternionic": all(c.kernel_dim % 2 == 0 for c in checks if c.c_square == -1)}


def run_clifford_table(cfg, out, figures):
    from .clifford import table_csv, verify_mod8_table
    rows = verify_mod8_table(cfg.get("experiment", "max_dim", int))
    write_atomic(out / "clifford.csv", table_csv(rows))
    return {"rows": len(rows), "all_pass": all(r["pass"] for r in rows)}


RUNNERS = {
    "model-oracle": run_model_oracle, "spectrum": run_spectrum, "gap-scan": run_gap_scan,
    "concentration": run_concentration, "index": run_index, "riemann-roch": run_riemann_roch,
    "vortex": run_vortex, "bdg-check": run_bdg_check, "clifford-table": run_clifford_table,
}


# ------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="jrlab", description="Jackiw--Rossi operator laboratory")
    sub = ap.add_subparsers(dest="cmd", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--out", default=f"out/{name}", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
        p.add_argument("--threads", type=int, default=None, help="BLAS threads (default 1)")
        p.add_argument("--t", type=float, default=None, help="overrides higgs.t")
        p.add_argument("--num-pairs", type=int, default=None, help="overrides solver.num_pairs")
        p.add_argument("--no-figures", action="store_true", help="skip matplotlib output")
        if name == "gap-scan":
            p.add_argument("--m", type=int, default=None, help="use Phi = t z^m with a matching preset")
        if name == "bdg-check":
            p.add_argument("--p", type=int, default=None, choices=(-1, 1), help="single p sign")
            p.add_argument("--s-phi", type=int, default=None, choices=(-1, 1), help="single s sign")
        if name == "riemann-roch":
            p.add_argument("--deg-l", type=int, default=None)
        if name == "vortex":
            p.add_argument("--d", type=int, default=None)
            p.add_argument("--tau-factor", type=float, default=None)
        if name == "model-oracle":
            p.add_argument("--p", type=int, default=None)
            p.add_argument("--q", type=int, default=None)
    return ap


def _overrides(args) -> dict:
    ov = {("run", "seed"): args.seed, ("run", "threads"): args.threads,
          ("higgs", "t"): args.t, ("solver", "num_pairs"): args.num_pairs}
    if args.no_figures:
        ov[("run", "figures")] = "false"
    cmd = args.cmd
    if cmd == "gap-scan" and args.m is not None:
        ov[("higgs", "p")] = args.m
        ov[("higgs", "q")] = 0
        ov[("schedule", "m")] = args.m
        if args.config is None:
            ov[("domain", "radius")] = GAP_SCAN_RADIUS.get(args.m, 1.5)
    if cmd == "bdg-check":
        ov[("experiment", "p_sign")] = args.p
        ov[("experiment", "s_phi")] = args.s_phi
    if cmd == "riemann-roch":
        ov[("experiment", "deg_l")] = args.deg_l
    if cmd == "vortex":
        ov[("higgs", "d")] = args.d
        ov[("higgs", "tau_factor")] = args.tau_factor
    if cmd == "model-oracle":
        ov[("higgs", "p")] = args.p
        ov[("higgs", "q")] = args.q
    return ov


def _pin_threads(n: int):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    from threadpoolctl import threadpool_limits
    return threadpool_limits(n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.cmd, args.config, _overrides(args))
    except ConfigError as exc:
        print(f"jrlab: config error: {exc}", file=sys.stderr)
        return 2
    limiter = _pin_threads(cfg.get("run", "threads", int))
    import matplotlib
    matplotlib.use("Agg")
    from .vortex import BradlowError
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_atomic(out / "effective.ini", cfg.echo())
    try:
        metrics = RUNNERS[args.cmd](cfg, out, cfg.get("run", "figures", bool))
    except ConfigError as exc:
        print(f"jrlab: config error: {exc}", file=sys.stderr)
        return 2
    except (BradlowError, ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"jrlab: {args.cmd} failed: {exc}", file=sys.stderr)
        write_atomic(out / "summary.txt", f"status,fail\nerror,{exc}\n")
        return 1
    finally:
        limiter.restore_original_limits()
    checks = check_assertions(cfg, metrics)
    lines = ["key,value"] + [f"{k},{_fmt(v)}" for k, v in metrics.items()]
    lines += [f"assert:{k},{'pass' if ok else 'fail'} ({v})" for k, ok, v in checks]
    status = "pass" if all(ok for _, ok, _ in checks) else "fail"
    lines.append(f"status,{status}")
    text = "\n".join(lines) + "\n"
    write_atomic(out / "summary.txt", text)
    sys.stdout.write(text)
    return 0 if status == "pass" else 1


if __name__ == "__main__":
    sys.exit(main())
