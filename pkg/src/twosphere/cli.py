"""Command-line experiment harness.

Usage::

    twosphere SUBCOMMAND --config PATH [--out DIR] [--seed N] [--dump]
              [--plot-data] [--jobs N]

Subcommands: homogenize, cheb-table, kernel-gap, verify-2s1c, verify-ball,
verify-potential, caccioppoli. Exit status is 0 when every predicate
passes, 2 when one fails and 1 on error.

Config grammar: one ``key = value`` per line, ``[section]`` headers, ``#``
starts a comment. Keys before the first header belong to
``[experiment]``. Lists are comma separated.
"""

import argparse
import csv
import hashlib
import io
import math
import platform
import sys
import traceback
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .chebinterp import build_system, extrapolation_envelopes
from .coeff_cell import (FIELD_PARAMS, POTENTIAL_PARAMS, builtin_field, builtin_potential,
                         homogenize, solve_all_correctors)
from .kernels import default_probes, kernel_gap_report
from .pdesolve import Cylinder, caccioppoli_check, generate_ensemble, solve_cylinder
from .smallness import verify_ball_bound, verify_ellipsoid_bound, verify_potential_bound

__all__ = ["ConfigError", "ExperimentConfig", "main", "parse_config", "render_config", "run"]

SUBCOMMANDS = ("homogenize", "cheb-table", "kernel-gap", "verify-2s1c", "verify-ball",
               "verify-potential", "caccioppoli")
EXIT_OK, EXIT_ERROR, EXIT_FAILED = 0, 1, 2
DRIFT_LIMIT = 2.0


class ConfigError(ValueError):
    """Malformed or inconsistent configuration text."""

    def __init__(self, msg, line=None):
        super().__init__(msg if line is None else f"line {line}: {msg}")
        self.line = line


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description; see :func:`parse_config` for the grammar."""

    field: str
    r1: float
    r2: float
    r3: float
    d: int = 1
    eps: tuple = (0.1, 0.05)
    R: float | None = None
    T: float | None = None
    t0: float = 0.0
    count: int = 20
    seed: int = 0
    data: str = "fourier"
    out: str = "out"
    field_params: dict = field(default_factory=dict)
    h: float | None = None
    k: float | None = None
    cell_resolution: int = 256
    cap: float = 100.0
    caccioppoli_cap: float = 1000.0
    c_tilde: float = 1.0
    c_exp: float = 0.125
    C1: float | None = None
    ball_knob: float = 1.0
    potential: str = "cos"
    potential_params: dict = field(default_factory=dict)
    tau: float = 0.25
    spacing: float | None = None
    m_max: int = 12
    targets: tuple = (1.5, 2.0, 5.0)

    @property
    def radii(self):
        return (self.r1, self.r2, self.r3)

    @property
    def half_width(self) -> float:
        return 1.5 * self.r3 if self.R is None else self.R

    @property
    def duration(self) -> float:
        return 1.05 * self.r3**2 if self.T is None else self.T

    def build_field(self):
        return builtin_field(self.field, self.d, **self.field_params)

    def build_potential(self):
        return builtin_potential(self.potential, self.d, **self.potential_params)


# section -> key -> (attribute, kind)
_SCHEMA = {
    "experiment": {
        "field": ("field", "str"), "d": ("d", "int"), "eps": ("eps", "floats"),
        "r1": ("r1", "float"), "r2": ("r2", "float"), "r3": ("r3", "float"),
        "R": ("R", "float"), "T": ("T", "float"), "t0": ("t0", "float"),
        "count": ("count", "int"), "seed": ("seed", "int"), "data": ("data", "str"),
        "out": ("out", "str"),
    },
    "grid": {"h": ("h", "float"), "k": ("k", "float"),
             "cell_resolution": ("cell_resolution", "int")},
    "caps": {"cap": ("cap", "float"), "caccioppoli_cap": ("caccioppoli_cap", "float"),
             "c_tilde": ("c_tilde", "float"), "c_exp": ("c_exp", "float"),
             "C1": ("C1", "float"), "ball_knob": ("ball_knob", "float")},
    "kernel": {"tau": ("tau", "float"), "spacing": ("spacing", "float")},
    "cheb": {"m_max": ("m_max", "int"), "targets": ("targets", "floats")},
}
_REQUIRED = ("field", "r1", "r2", "r3")
_DATA_KINDS = ("fourier", "constant")


def _convert(kind, raw, line):
    try:
        if kind == "str":
            if not raw:
                raise ValueError
            return raw
        if kind == "int":
            return int(raw)
        if kind == "float":
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError
            return v
        if kind == "floats":
            vals = tuple(float(p) for p in raw.split(","))
            if not vals or not all(math.isfinite(v) for v in vals):
                raise ValueError
            return vals
    except ValueError:
        raise ConfigError(f"malformed {kind} value '{raw}'", line) from None
    raise AssertionError(kind)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate configuration text; errors carry line numbers."""
    section = "experiment"
    values, lines = {}, {}
    fparams, pparams = {}, {}
    unknown = []
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header '{line}'", no)
            section = line[1:-1].strip()
            if section not in _SCHEMA and section not in ("field", "potential"):
                raise ConfigError(f"unknown section [{section}]", no)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got '{line}'", no)
        key, val = (p.strip() for p in line.split("=", 1))
        if section == "field":
            if key == "name":
                values["field"], lines["field"] = _convert("str", val, no), no
            else:
                fparams[key] = (_convert("float", val, no), no)
            continue
        if section == "potential":
            if key == "name":
                values["potential"], lines["potential"] = _convert("str", val, no), no
            else:
                pparams[key] = (_convert("float", val, no), no)
            continue
        spec = _SCHEMA[section].get(key)
        if spec is None:
            unknown.append(f"{key} (line {no})")
            continue
        attr, kind = spec
        if attr in values:
            raise ConfigError(f"duplicate key '{key}'", no)
        values[attr], lines[attr] = _convert(kind, val, no), no
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}")
    missing = [k for k in _REQUIRED if k not in values]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")

    name = values["field"]
    if name not in FIELD_PARAMS:
        raise ConfigError(f"unknown field '{name}'", lines["field"])
    for key, (_, no) in fparams.items():
        if key not in FIELD_PARAMS[name]:
            raise ConfigError(f"field '{name}' has no parameter '{key}'", no)
    pname = values.get("potential", "cos")
    if pname not in POTENTIAL_PARAMS:
        raise ConfigError(f"unknown potential '{pname}'", lines.get("potential"))
    for key, (_, no) in pparams.items():
        if key not in POTENTIAL_PARAMS[pname]:
            raise ConfigError(f"potential '{pname}' has no parameter '{key}'", no)
    values["field_params"] = {k: v for k, (v, _) in fparams.items()}
    values["potential_params"] = {k: v for k, (v, _) in pparams.items()}
    cfg = ExperimentConfig(**values)
    _validate(cfg, lines)
    return cfg


def _validate(cfg, lines):
    if not (0 < cfg.r1 < cfg.r2 < cfg.r3 / 12):
        raise ConfigError(f"radii ({cfg.r1:g}, {cfg.r2:g}, {cfg.r3:g}) violate r1 < r2 < r3/12",
                          lines.get("r2"))
    eps = cfg.eps
    if any(e <= 0 for e in eps) or any(a <= b for a, b in zip(eps, eps[1:])):
        raise ConfigError("eps list must be positive and strictly descending", lines.get("eps"))
    if cfg.count < 1:
        raise ConfigError("count must be >= 1", lines.get("count"))
    if cfg.d not in (1, 2):
        raise ConfigError("d must be 1 or 2", lines.get("d"))
    if cfg.data not in _DATA_KINDS:
        raise ConfigError(f"data must be one of {', '.join(_DATA_KINDS)}", lines.get("data"))
    if cfg.R is not None and not cfg.r3 / 12 < cfg.R / 8:
        raise ConfigError("radii violate r3/12 < R/8", lines.get("R"))
    if cfg.T is not None and cfg.T < cfg.r3**2:
        raise ConfigError("T must be at least r3^2", lines.get("T"))
    if not 1 <= cfg.m_max <= 60:
        raise ConfigError("m_max must lie in [1, 60]", lines.get("m_max"))
    if any(p <= 1 for p in cfg.targets):
        raise ConfigError("cheb targets must exceed 1", lines.get("targets"))


def _fmt(v):
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; ``parse_config(render_config(cfg)) == cfg``."""
    out = []
    for section, keys in _SCHEMA.items():
        body = [f"{key} = {_fmt(getattr(cfg, attr))}" for key, (attr, _) in keys.items()
                if getattr(cfg, attr) is not None]
        out.append(f"[{section}]")
        out.extend(body)
        out.append("")
    out.append("[field]")
    out.append(f"name = {cfg.field}")
    out.extend(f"{k} = {_fmt(float(v))}" for k, v in sorted(cfg.field_params.items()))
    out.append("")
    out.append("[potential]")
    out.append(f"name = {cfg.potential}")
    out.extend(f"{k} = {_fmt(float(v))}" for k, v in sorted(cfg.potential_params.items()))
    out.append("")
    return "\n".join(out)


# ---------------------------------------------------------------- subcommands

@dataclass
class _Result:
    tables: dict = field(default_factory=dict)  # file name -> (columns, rows)
    plot: list = field(default_factory=list)
    slices: dict = field(default_factory=dict)
    passed: bool = True
    notes: list = field(default_factory=list)


def _ensemble(cfg, fld, eps, jobs, potential=None):
    dom = Cylinder(cfg.half_width, cfg.t0 - cfg.duration, cfg.t0, cfg.d)
    if cfg.data == "constant":
        rng = np.random.default_rng(cfg.seed)
        consts = rng.uniform(0.5, 2.0, size=cfg.count) * rng.choice([-1.0, 1.0], size=cfg.count)
        out = []
        for i, c in enumerate(consts):
            u = solve_cylinder(fld, eps, dom, lambda x, c=c: np.full(x.shape[:-1], c),
                               lambda x, t, c=c: np.full(x.shape[:-1], c), h=cfg.h, k=cfg.k)
            u.meta.update({"seed": cfg.seed, "member": i})
            out.append(u)
        return out
    return generate_ensemble(fld, eps, dom, cfg.count, cfg.seed, h=cfg.h, k=cfg.k,
                             potential=potential, jobs=jobs)


def _run_homogenize(cfg, jobs):
    fld = cfg.build_field()
    corr = solve_all_correctors(fld, resolution=cfg.cell_resolution, jobs=jobs)
    T = homogenize(fld, corr, resolution=cfg.cell_resolution)
    rows = []
    for name, mat in (("A", T.matrix), ("S", T.S)):
        for i in range(T.d):
            for j in range(T.d):
                rows.append([name, i + 1, j + 1, float(mat[i, j])])
    rows += [["mu", "", "", T.mu], ["mu1", "", "", T.mu1], ["asymmetry", "", "", T.asymmetry],
             ["identity_defect", "", "", T.identity_defect()]]
    rows += [["corrector_residual", c.j + 1, "", c.residual] for c in corr]
    res = _Result({"homogenize.csv": (["quantity", "i", "j", "value"], rows)})
    res.plot = [(i + 1, float(T.matrix[i, i])) for i in range(T.d)]
    res.passed = T.identity_defect() < 1e-10
    return res


def _run_cheb(cfg, jobs):
    rows, plot, ok = [], [], True
    for p in cfg.targets:
        for m in range(1, cfg.m_max + 1):
            sys_ = build_system(1.0, p, 13.0 * p, m)
            moment_err = float(np.max(sys_.moment_errors()))
            kern_env, grad_env = extrapolation_envelopes(sys_, sys_.r3**2, cfg.d, cfg.c_tilde, cfg.c_exp)
            w_ok, d_ok = sys_.weight_bound_holds(), sys_.derivative_bound_holds()
            ok &= w_ok and d_ok and moment_err <= 1e-9
            plot.append((m, float(np.max(np.abs(sys_.weights)))))
            for i in range(m):
                rows.append([p, m, i + 1, float(sys_.nodes[i]), float(sys_.weights[i]),
                             sys_.weight_bound, int(abs(sys_.weights[i]) <= sys_.weight_bound),
                             float(sys_.nodal_derivatives[i]), sys_.derivative_floor,
                             int(abs(sys_.nodal_derivatives[i]) >= sys_.derivative_floor),
                             moment_err, kern_env, grad_env])
    cols = ["p", "m", "i", "node", "weight", "weight_bound", "weight_ok", "nodal_derivative",
            "derivative_floor", "derivative_ok", "moment_error", "kernel_envelope", "grad_envelope"]
    res = _Result({"cheb_table.csv": (cols, rows)}, plot)
    res.passed = bool(ok)
    return res


def _run_kernel_gap(cfg, jobs):
    fld = cfg.build_field()
    if cfg.d != 1:
        raise ValueError("kernel-gap runs in d = 1")
    T = homogenize(fld, resolution=cfg.cell_resolution)
    spacing = cfg.spacing if cfg.spacing is not None else max(cfg.eps) / 16
    probes = default_probes(T, tau=cfg.tau, spacing=spacing)
    rep = kernel_gap_report(fld, T, cfg.eps, probes=probes, cell_resolution=cfg.cell_resolution)
    cols = ["eps", "x", "t", "y", "s", "gamma_eps", "gamma0", "gap", "bound_envelope"]

    def flat(r):
        return [r["eps"], _vec(r["x"]), r["t"], _vec(r["y"]), r["s"], r["gamma_eps"], r["gamma0"],
                r["gap"], r["bound_envelope"]]

    value_rows = [flat(r) for r in rep.rows if r["kind"] == "value"]
    grad_rows = [flat(r) for r in rep.rows if r["kind"] == "grad"]
    summary = []
    for i, e in enumerate(rep.eps):
        summary.append([e, rep.gaps[i], "" if rep.ratios is None else rep.ratios[i],
                        rep.grad_gaps[i], "" if rep.grad_ratios is None else rep.grad_ratios[i],
                        rep.C, rep.kappa, rep.spread_limit, int(rep.passed), int(rep.grad_passed)])
    scols = ["eps", "gap", "gap_ratio", "grad_gap", "grad_ratio", "C_fit", "kappa_fit",
             "spread_limit", "passed", "grad_passed"]
    res = _Result({"kernel_gap.csv": (cols, value_rows), "kernel_grad_gap.csv": (cols, grad_rows),
                   "kernel_gap_summary.csv": (scols, summary)})
    res.plot = [(e, g) for e, g in zip(rep.eps, rep.gaps)]
    res.passed = rep.passed and rep.grad_passed
    return res


_REPORT_COLS = ["seed", "eps", "r1", "r2", "r3", "t0", "delta", "L", "N", "alpha", "case", "m",
                "bracket", "rhs", "C_obs", "warnings"]


def _run_verify(cfg, jobs, kind):
    fld = cfg.build_field()
    T = homogenize(fld, resolution=cfg.cell_resolution)
    pot = cfg.build_potential() if kind == "potential" else None
    rows, plot, passed = [], [], True
    per_eps, slices = [], {}
    for eps in cfg.eps:
        ens = _ensemble(cfg, fld, eps, jobs, potential=pot)
        reps = []
        for i, u in enumerate(ens):
            if kind == "ellipsoid":
                r = verify_ellipsoid_bound(u, T, cfg.radii, cfg.t0, cap=cfg.cap, seed=cfg.seed)
            elif kind == "ball":
                r = verify_ball_bound(u, T, cfg.radii, cfg.t0, C1=cfg.C1, ball_knob=cfg.ball_knob,
                                         cap=cfg.cap, seed=cfg.seed)
            else:
                r = verify_potential_bound(u, fld, T, cfg.radii, cfg.t0, potential=pot, cap=cfg.cap,
                                       seed=cfg.seed)
            reps.append(r)
            row = r.row()
            rows.append([row[c] for c in _REPORT_COLS[:1]] + [i] +
                        [row[c] for c in _REPORT_COLS[1:]] + [int(r.passed)])
            plot.append((r.delta / r.N, r.C_obs))
            passed &= r.passed
            slices[f"eps{eps:g}_member{i:02d}"] = u
        per_eps.append(reps)
    drift_rows = []
    for a, b in zip(per_eps, per_eps[1:]):
        for i, (ra, rb) in enumerate(zip(a, b)):
            ratio = rb.C_obs / ra.C_obs if ra.C_obs > 0 else math.inf
            ok = 1 / DRIFT_LIMIT <= ratio <= DRIFT_LIMIT
            passed &= ok
            drift_rows.append([ra.eps, rb.eps, i, ra.C_obs, rb.C_obs, ratio, int(ok)])
    name = {"ellipsoid": "verify_2s1c", "ball": "verify_ball", "potential": "verify_potential"}[kind]
    cols = _REPORT_COLS[:1] + ["member"] + _REPORT_COLS[1:] + ["passed"]
    res = _Result({f"{name}.csv": (cols, rows),
                   f"{name}_drift.csv": (["eps_coarse", "eps_fine", "member", "C_obs_coarse",
                                          "C_obs_fine", "ratio", "passed"], drift_rows)})
    res.plot, res.passed = plot, bool(passed)
    res.slices = {k: (u, cfg.t0) for k, u in slices.items()}
    return res


def _run_caccioppoli(cfg, jobs):
    fld = cfg.build_field()
    T = homogenize(fld, resolution=cfg.cell_resolution)
    rows, plot, passed, slices = [], [], True, {}
    for eps in cfg.eps:
        for i, u in enumerate(_ensemble(cfg, fld, eps, jobs)):
            rep = caccioppoli_check(u, T, cfg.r3, cfg.t0)
            ok = rep.C_obs <= cfg.caccioppoli_cap
            passed &= ok
            rows.append([cfg.seed, eps, i, rep.r3, rep.t0, rep.energy, rep.sup, rep.C_obs, int(ok)])
            plot.append((i, rep.C_obs))
            slices[f"eps{eps:g}_member{i:02d}"] = (u, cfg.t0)
    cols = ["seed", "eps", "member", "r3", "t0", "energy", "sup", "C_obs", "passed"]
    res = _Result({"caccioppoli.csv": (cols, rows)}, plot)
    res.passed, res.slices = bool(passed), slices
    return res


_RUNNERS = {
    "homogenize": _run_homogenize,
    "cheb-table": _run_cheb,
    "kernel-gap": _run_kernel_gap,
    "verify-2s1c": lambda c, j: _run_verify(c, j, "ellipsoid"),
    "verify-ball": lambda c, j: _run_verify(c, j, "ball"),
    "verify-potential": lambda c, j: _run_verify(c, j, "potential"),
    "caccioppoli": _run_caccioppoli,
}


def _vec(x):
    return " ".join(repr(float(v)) for v in x)


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    return str(v)


def _write_csv(path, cols, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _manifest(cfg, command):
    text = render_config(cfg)
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    head = [f"# command = {command}", f"# config_sha256 = {digest}", f"# seed = {cfg.seed}",
            f"# twosphere = {__version__}", f"# numpy = {np.__version__}",
            f"# scipy = {scipy.__version__}", f"# python = {platform.python_version()}"]
    return "\n".join(head) + "\n" + text


def run(command: str, cfg: ExperimentConfig, out_dir=None, dump=False, plot_data=False,
        jobs=1) -> int:
    """Execute one subcommand and write its artifacts; returns the exit code."""
    if command not in _RUNNERS:
        raise ValueError(f"unknown subcommand '{command}'")
    out = Path(cfg.out if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = _RUNNERS[command](cfg, jobs)
    for name, (cols, rows) in res.tables.items():
        _write_csv(out / name, cols, rows)
    stem = command.replace("-", "_")
    (out / f"{stem}_manifest.txt").write_text(_manifest(cfg, command), encoding="utf-8")
    if plot_data:
        lines = [f"{_cell(float(a))} {_cell(float(b))}" for a, b in res.plot]
        (out / f"{stem}.dat").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if dump:
        ddir = out / f"{stem}_slices"
        ddir.mkdir(exist_ok=True)
        for key, (u, t0) in res.slices.items():
            pts = u.points().reshape(-1, u.d)
            vals = u.slice_at(t0).ravel()
            cols = [f"x{a + 1}" for a in range(u.d)] + ["value"]
            _write_csv(ddir / f"{key}.csv", cols, [list(p) + [v] for p, v in zip(pts, vals)])
    return EXIT_OK if res.passed else EXIT_FAILED


def _provenance(exc):
    mod = "twosphere"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        name = frame.f_globals.get("__name__", "")
        if name.startswith("twosphere"):
            mod = name
    return mod


def build_parser():
    p = argparse.ArgumentParser(prog="twosphere",
                                description="Homogenization and propagation-of-smallness experiments.")
    p.add_argument("command", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="experiment config file")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, help="ensemble seed (overrides the config)")
    p.add_argument("--dump", action="store_true", help="write t0 slices of every solution")
    p.add_argument("--plot-data", action="store_true", help="write two-column gnuplot data")
    p.add_argument("--jobs", type=int, default=1, help="worker threads")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        cfg = parse_config(text)
    except ConfigError as exc:
        print(f"error in config {args.config}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error reading config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    try:
        code = run(args.command, cfg, args.out, args.dump, args.plot_data, max(1, args.jobs))
    except Exception as exc:  # reported with module provenance
        print(f"error in {_provenance(exc)}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"{args.command}: {'pass' if code == EXIT_OK else 'FAIL'}")
    return code


if __name__ == "__main__":
    sys.exit(main())
