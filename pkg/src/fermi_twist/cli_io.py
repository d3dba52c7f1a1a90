"""Experiment runner: JSON configs, deterministic CSV output, run manifests, SVG renders and the CLI.

Every CSV row carries the config digest. Outputs are written to a staging directory
and moved into place only when the run completes, so failed runs leave nothing behind.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import shutil
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .core_map import MapParams, jacobian_arrays, jacobian_det, jacobian_fd, Point
from .critical_sets import (CriticalParams, SampleSizeError, classify_arrays, default_critical_params,
                            measure_slope_c2)

EXPERIMENTS = ("map-audit", "pair-audit", "critical-measure", "decompose-audit", "equi-scan", "psi",
               "walk", "escape", "acceptance")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# ---------------------------------------------------------------------------
# configuration

@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    map: dict = field(default_factory=lambda: {"A": 1.0, "gamma": 3.0})
    critical: dict = field(default_factory=dict)
    y_grid: List[float] = field(default_factory=lambda: [1e3, 1e4])
    gamma_grid: List[float] = field(default_factory=lambda: [3.0])
    A_grid: List[float] = field(default_factory=lambda: [1.0])
    n_samples: int = 1000
    options: dict = field(default_factory=dict)
    out_dir: str = "runs"

    def canonical(self) -> str:
        d = asdict(self)
        d.pop("out_dir")
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def map_params(self, gamma=None, A=None) -> MapParams:
        kw = dict(self.map)
        if gamma is not None:
            kw["gamma"] = gamma
        if A is not None:
            kw["A"] = A
        return MapParams(**kw)

    def critical_params(self, params: MapParams) -> CriticalParams:
        if not self.critical:
            return default_critical_params(params)
        return CriticalParams(**self.critical)


_MAP_KEYS = {"A", "gamma", "y_hat_coeff", "L", "y_star"}
_CRIT_KEYS = {"K1", "K2", "K2_bar", "K1_hat", "K2_hat", "Delta1", "Delta2", "delta", "D", "eps_confuse"}


def _number_list(d, key, positive=True):
    v = d.get(key)
    if not isinstance(v, list):
        raise ConfigError(key, "must be a list of numbers")
    if len(v) == 0:
        raise ConfigError(key, "must be non-empty")
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise ConfigError(f"{key}[{i}]", "must be a number")
        if positive and not x > 0:
            raise ConfigError(f"{key}[{i}]", "must be positive")
    return [float(x) for x in v]


def config_from_dict(d: dict) -> ExperimentConfig:
    """Validate a parsed JSON config; errors name the offending field path."""
    if not isinstance(d, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    unknown = set(d) - {f for f in ExperimentConfig.__dataclass_fields__}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown field")
    exp = d.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError("experiment", f"must be one of {', '.join(EXPERIMENTS)}")
    if "seed" not in d:
        raise ConfigError("seed", "is mandatory")
    seed = d["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ConfigError("seed", "must be an integer in [0, 2^64)")
    out = {"experiment": exp, "seed": seed}
    for key, allowed in (("map", _MAP_KEYS), ("critical", _CRIT_KEYS)):
        if key in d:
            sub = d[key]
            if not isinstance(sub, dict):
                raise ConfigError(key, "must be an object")
            for k, v in sub.items():
                if k not in allowed:
                    raise ConfigError(f"{key}.{k}", "unknown field")
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigError(f"{key}.{k}", "must be a number")
            out[key] = dict(sub)
    for key in ("y_grid", "gamma_grid", "A_grid"):
        if key in d:
            out[key] = _number_list(d, key)
    if "n_samples" in d:
        n = d["n_samples"]
        if isinstance(n, bool) or not isinstance(n, int) or n < 1:
            raise ConfigError("n_samples", "must be a positive integer")
        out["n_samples"] = n
    if "options" in d:
        if not isinstance(d["options"], dict):
            raise ConfigError("options", "must be an object")
        out["options"] = d["options"]
    if "out_dir" in d:
        if not isinstance(d["out_dir"], str) or not d["out_dir"]:
            raise ConfigError("out_dir", "must be a non-empty string")
        out["out_dir"] = d["out_dir"]
    cfg = ExperimentConfig(**out)
    try:
        cfg.map_params()
    except ValueError as e:
        raise ConfigError("map", str(e)) from None
    if cfg.critical:
        try:
            CriticalParams(**cfg.critical)
        except ValueError as e:
            raise ConfigError("critical", str(e)) from None
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError("<root>", f"invalid JSON ({e})") from None
    return config_from_dict(d)


# ---------------------------------------------------------------------------
# outputs

@dataclass
class Table:
    header: List[str]
    rows: List[list]


@dataclass
class ExperimentOutput:
    tables: Dict[str, Table] = field(default_factory=dict)
    checks: Dict[str, bool] = field(default_factory=dict)
    svgs: Dict[str, str] = field(default_factory=dict)


@dataclass
class RunManifest:
    experiment: str
    config_digest: str
    code_version: str
    seed: int
    threads: int
    wall_clock_s: float
    checks: Dict[str, bool]
    files: Dict[str, str]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def csv_text(table: Table, digest: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(list(table.header) + ["digest"])
    for r in table.rows:
        w.writerow([_fmt(v) for v in r] + [digest])
    return buf.getvalue()


def _sha(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


# ---------------------------------------------------------------------------
# SVG render of the critical geometry

_COLORS = {0: "#ffffff", 1: "#c6dbef", 2: "#6baed6", 3: "#fdae6b", 4: "#d94801"}
_LABELS = {0: "outside", 1: "C1_hat", 2: "C1", 3: "C2_hat", 4: "C2"}


@dataclass
class GeometryRender:
    svg: str
    classes: np.ndarray          # rows bottom-to-top (increasing y), columns increasing x
    counts: Dict[str, int]
    c1_widths: np.ndarray        # C1 pixel count per row
    x_window: Tuple[float, float]
    y_window: Tuple[float, float]


def render_critical_geometry(params: MapParams, cp: CriticalParams, y_window, x_window=(-0.3, 0.3),
                             width=240, height=160, mode="exact") -> GeometryRender:
    """Raster classification of a window, colored by the innermost critical set hit."""
    y0, y1 = map(float, y_window)
    if y0 < params.y_star:
        raise ValueError("y window must lie above y*")
    xs = np.linspace(x_window[0], x_window[1], width)
    ys = np.linspace(y0, y1, height)
    X, Y = np.meshgrid(xs, ys)
    f = classify_arrays(np.mod(X, 2 * np.pi).ravel(), Y.ravel(), params, cp, mode)
    cls = np.zeros(X.size, np.int8)
    cls[f["in_C1_hat"]] = 1
    cls[f["in_C1"]] = 2
    cls[f["in_C2_hat"]] = 3
    cls[f["in_C2"]] = 4
    cls = cls.reshape(X.shape)
    out = io.StringIO()
    out.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
              f'viewBox="0 0 {width} {height}" shape-rendering="crispEdges">\n')
    for r in range(height):
        row = cls[r]
        yy = height - 1 - r
        start = 0
        for c in range(1, width + 1):
            if c == width or row[c] != row[start]:
                out.write(f'<rect x="{start}" y="{yy}" width="{c - start}" height="1" '
                          f'fill="{_COLORS[int(row[start])]}"/>\n')
                start = c
    out.write("</svg>\n")
    counts = {_LABELS[k]: int((cls == k).sum()) for k in _LABELS}
    c1_widths = f["in_C1"].reshape(X.shape).sum(axis=1)
    return GeometryRender(out.getvalue(), cls, counts, c1_widths, tuple(x_window), (y0, y1))


# ---------------------------------------------------------------------------
# experiment runners

def _rng(cfg, *stream):
    return np.random.default_rng([cfg.seed, *stream])


def _map_audit(cfg: ExperimentConfig) -> ExperimentOutput:
    out = ExperimentOutput()
    rows = []
    lo, hi = min(cfg.y_grid), max(cfg.y_grid)
    for gi, g in enumerate(cfg.gamma_grid):
        for ai, A in enumerate(cfg.A_grid):
            p = cfg.map_params(g, A)
            rng = _rng(cfg, gi, ai)
            x = rng.uniform(0, 2 * np.pi, cfg.n_samples)
            y = np.exp(rng.uniform(np.log(max(lo, p.L)), np.log(max(hi, p.L * 1.01)), cfg.n_samples))
            det_err = float(np.max(np.abs(jacobian_det(x, y, p) - 1)))
            m = min(cfg.n_samples, 200)
            J = jacobian_arrays(x[:m], y[:m], p)
            fd = np.array([jacobian_fd(Point(float(a), float(b)), p) for a, b in zip(x[:m], y[:m])])
            rel = float(np.max(np.abs(fd - J) / (np.abs(J) + 1.0)))
            rows.append([g, A, cfg.n_samples, det_err, rel])
            out.checks[f"det gamma={g} A={A}"] = det_err <= 1e-12
            out.checks[f"fd gamma={g} A={A}"] = rel <= 1e-6
    out.tables["map_audit"] = Table(["gamma", "A", "n", "max_det_error", "max_fd_rel_error"], rows)
    return out


def _pair_audit(cfg: ExperimentConfig) -> ExperimentOutput:
    from .standard_pairs import (DegenerateImageError, check_standard, gronwall_bounds, pushforward_pair,
                                 random_standard_pair)
    out = ExperimentOutput()
    rows = []
    for gi, g in enumerate(cfg.gamma_grid):
        p = cfg.map_params(g)
        cp = cfg.critical_params(p)
        for yi, yh in enumerate(cfg.y_grid):
            rng = _rng(cfg, gi, yi)
            for i in range(cfg.n_samples):
                pair = random_standard_pair(p, cp, yh, rng)
                std = check_standard(pair, p, cp)
                lo_ok, hi_ok, _ = gronwall_bounds(pair, cp.delta)
                try:
                    rc = pushforward_pair(pair, pair.lo, pair.hi).recursion_check()
                    worst = max(rc.values())
                except DegenerateImageError:
                    worst = float("nan")
                rows.append([g, yh, i, pair.lo, pair.hi, std.is_standard, lo_ok and hi_ok, worst])
    out.tables["pair_audit"] = Table(["gamma", "y_hat", "sample", "lo", "hi", "standard", "gronwall_ok",
                                      "recursion_rel_error"], rows)
    rec = [r[-1] for r in rows if r[-1] == r[-1]]
    out.checks["recursion <= 1e-4"] = bool(rec) and max(rec) <= 1e-4
    out.checks["gronwall"] = all(r[6] for r in rows)
    out.checks["standard"] = all(r[5] for r in rows)
    return out


def _critical_measure(cfg: ExperimentConfig) -> ExperimentOutput:
    out = ExperimentOutput()
    rows, fits = [], []
    for gi, g in enumerate(cfg.gamma_grid):
        p = cfg.map_params(g)
        cp = cfg.critical_params(p)
        try:
            slope, se, cells = measure_slope_c2(p, cp, cfg.y_grid, n_samples=cfg.n_samples, seed=cfg.seed)
        except SampleSizeError as e:
            raise ConfigError("n_samples", f"too small for cell measures ({e})") from None
        for c in cells:
            rows.append([g, c.i, c.n, c.y_hat_n, c.measure, c.std_error])
        fits.append([g, slope, se, -4 * p.beta()])
        out.checks[f"slope gamma={g}"] = abs(slope + 4 * p.beta()) <= 0.4
        y_lo = max(min(cfg.y_grid), p.y_star)
        r = render_critical_geometry(p, cp, (y_lo, y_lo * 1.05))
        out.svgs[f"critical_geometry_gamma{g:g}"] = r.svg
    out.tables["cell_measures"] = Table(["gamma", "strip", "cell", "y_hat_n", "measure", "std_error"], rows)
    out.tables["measure_fits"] = Table(["gamma", "slope", "stderr", "target"], fits)
    return out


def _decompose_audit(cfg: ExperimentConfig) -> ExperimentOutput:
    from .decomposition import decompose_image, inclusion_check, make_standard_partition
    from .standard_pairs import random_standard_pair
    out = ExperimentOutput()
    rows = []
    for gi, g in enumerate(cfg.gamma_grid):
        p = cfg.map_params(g)
        cp = cfg.critical_params(p)
        part = make_standard_partition(cp.delta)
        for yi, yh in enumerate(cfg.y_grid):
            rng = _rng(cfg, gi, yi)
            for i in range(cfg.n_samples):
                pair = random_standard_pair(p, cp, yh, rng)
                res = decompose_image(pair, part, p, cp)
                err = abs(res.total_mass() - pair.mass(pair.lo, pair.hi))
                chk = inclusion_check(res, p, cp, n_uniform=500, n_window=1000, seed=i)
                v = sum(x["violations"] for x in chk.values() if isinstance(x, dict))
                a = res.audit_record()
                rows.append([g, yh, i, pair.lo, pair.hi, err, v, a["n_aligned_cells"],
                             len(res.boundary), len(res.standby), res.invalid_mass])
    out.tables["decompositions"] = Table(["gamma", "y_hat", "sample", "lo", "hi", "mass_error",
                                          "inclusion_violations", "aligned_cells", "boundary_pieces",
                                          "standby_pieces", "invalid_mass"], rows)
    out.checks["mass <= 1e-8"] = all(r[5] <= 1e-8 for r in rows)
    out.checks["inclusions"] = all(r[6] == 0 for r in rows)
    return out


def _equi_scan(cfg: ExperimentConfig) -> ExperimentOutput:
    from .equidistribution import Observable, one_step_error_scan
    out = ExperimentOutput()
    rows, fits = [], []
    mode = int(cfg.options.get("mode", 1))
    for g in cfg.gamma_grid:
        for A in cfg.A_grid:
            sc = one_step_error_scan(g, A, np.asarray(cfg.y_grid), Observable.cos(mode))
            for y, e, b in zip(sc.y_grid, sc.error, sc.bound):
                rows.append([g, A, y, e, b])
            fits.append([g, A, sc.slope, sc.stderr, sc.r2])
            if g > 2:
                out.checks[f"decay gamma={g} A={A}"] = sc.slope <= -0.8 * (g - 1) / 2
    out.tables["one_step"] = Table(["gamma", "A", "y_hat", "error", "envelope"], rows)
    out.tables["one_step_fits"] = Table(["gamma", "A", "slope", "stderr", "r2"], fits)
    return out


def _psi(cfg: ExperimentConfig) -> ExperimentOutput:
    from .decomposition import make_standard_partition
    from .equidistribution import (Observable, fourier_decay, psi_compute, psi_eta_grid, psi_fourier,
                                   psi_periodicity_check)
    out = ExperimentOutput()
    k = int(cfg.options.get("k", 1))
    alpha = int(cfg.options.get("alpha", 0))
    ppp = int(cfg.options.get("points_per_period", 8))
    obs = Observable.cos(int(cfg.options.get("mode", 1)))
    rows, four, per = [], [], []
    for g in cfg.gamma_grid:
        p = cfg.map_params(g)
        cp = cfg.critical_params(p)
        part = make_standard_partition(cp.delta)
        fl = []
        for yh in cfg.y_grid:
            tab = psi_compute(alpha, k, psi_eta_grid(yh, p, 2, ppp), obs, p, cp, part)
            for eta, ym, v, se in zip(tab.eta_grid, tab.y_mod, tab.values, tab.stderr):
                rows.append([g, k, yh, float(eta), ym, v, se])
            fr = psi_fourier(tab)
            fl.append(fr)
            for l, c in zip(fr.modes, fr.coeffs):
                four.append([g, k, yh, int(l), float(np.real(c)), float(np.imag(c)), float(abs(c))])
            pr = psi_periodicity_check(tab)
            per.append([g, k, yh, pr.discrepancy])
        if len(fl) >= 2:
            fd = fourier_decay(fl, obs, int(cfg.options.get("mode", 1)))
            out.checks[f"fourier decay gamma={g}"] = fd["gate"] <= -0.8
    out.tables["psi"] = Table(["gamma", "k", "y_hat", "eta", "y_mod", "value", "stderr"], rows)
    out.tables["psi_fourier"] = Table(["gamma", "k", "y_hat", "mode", "re", "im", "abs"], four)
    out.tables["psi_periodicity"] = Table(["gamma", "k", "y_hat", "discrepancy"], per)
    return out


def _walk(cfg: ExperimentConfig) -> ExperimentOutput:
    from .decomposition import make_standard_partition
    from .walk_escape import control_walk, drift_estimate, master_pair, tau_tail, walk_run
    out = ExperimentOutput()
    drift, tails, walks = [], [], []
    for g in cfg.gamma_grid:
        p = cfg.map_params(g)
        cp = cfg.critical_params(p)
        part = make_standard_partition(cp.delta)
        for yi, yh in enumerate(cfg.y_grid):
            s = drift_estimate(p, cp, yh, n_samples=cfg.n_samples, seed=cfg.seed + yi, partition=part)
            d, lo, hi, n = s.drift()
            drift.append([g, yh, n, d, lo, hi, int(s.truncated.sum())])
            out.checks[f"drift gamma={g} y_hat={yh:g}"] = d >= 0.55
            try:
                tf = tau_tail(s)
                tails.append([g, yh, tf.slope, tf.r2, tf.theta])
            except ValueError:
                pass
            we = walk_run(master_pair(p, part, yh), p, cp, n_samples=min(cfg.n_samples, 1000),
                          horizon=int(cfg.options.get("horizon", 4)), seed=cfg.seed + yi, partition=part)
            for rec in we.records:
                for row in rec.rows():
                    walks.append([g, yh, *row])
    c = control_walk(horizon=int(cfg.options.get("horizon", 4)), n=10 ** 5, seed=cfg.seed)
    out.checks["control walk within 3 se"] = c.z_score <= 3
    out.tables["drift"] = Table(["gamma", "y_hat", "n", "p_down", "ci_lo", "ci_hi", "truncated"], drift)
    out.tables["tau_tail"] = Table(["gamma", "y_hat", "log_theta", "r2", "theta"], tails)
    out.tables["walk_records"] = Table(["gamma", "y_master", "sample", "step", "tau_k", "chi_k", "xi", "status"],
                                       walks)
    out.tables["control_walk"] = Table(["p_up", "horizon", "n", "frac_returned", "stderr", "exact"],
                                       [[c.p_up, c.horizon, c.n, c.frac_returned, c.stderr, c.exact]])
    return out


def _escape(cfg: ExperimentConfig) -> ExperimentOutput:
    from .walk_escape import ESCAPE_HEADER, escape_scan
    out = ExperimentOutput()
    T = int(cfg.options.get("T", 10 ** 5))
    rows = []
    for g in cfg.gamma_grid:
        for A in cfg.A_grid:
            p = cfg.map_params(g, A)
            cp = cfg.critical_params(p) if g > 1 else CriticalParams()
            for y0 in cfg.y_grid:
                s = escape_scan(p, cp, y0, T, cfg.n_samples, seed=cfg.seed, track_c2=g > 1)
                rows.append(s.row())
                if g < 1:
                    out.checks[f"no growth gamma={g} A={A}"] = s.frac_growth == 0
    out.tables["escape"] = Table(ESCAPE_HEADER, rows)
    return out


def _acceptance(cfg: ExperimentConfig) -> ExperimentOutput:
    from .acceptance import run_acceptance
    numbers = cfg.options.get("criteria")
    out = ExperimentOutput()
    rows = []
    for r in run_acceptance(numbers, seed=cfg.seed, report=lambda r: print(r.line(), flush=True)):
        rows.append([r.number, r.name, "pass" if r.passed else "fail", r.value, r.threshold])
        out.checks[f"criterion {r.number}"] = r.passed
    out.tables["acceptance"] = Table(["criterion", "name", "result", "value", "threshold"], rows)
    return out


RUNNERS: Dict[str, Callable[[ExperimentConfig], ExperimentOutput]] = {
    "map-audit": _map_audit, "pair-audit": _pair_audit, "critical-measure": _critical_measure,
    "decompose-audit": _decompose_audit, "equi-scan": _equi_scan, "psi": _psi, "walk": _walk,
    "escape": _escape, "acceptance": _acceptance,
}


def run(cfg: ExperimentConfig, threads: int = 1, out_dir: Optional[str] = None) -> Tuple[int, RunManifest]:
    """Run an experiment and write CSVs, SVGs and manifest.json into the output directory.

    Returns (exit status, manifest): 0 when all checks pass, 1 otherwise.
    """
    target = os.path.abspath(out_dir or cfg.out_dir)
    parent = os.path.dirname(target)
    os.makedirs(parent, exist_ok=True)
    stage = tempfile.mkdtemp(prefix=".stage-", dir=parent)
    t0 = time.perf_counter()
    try:
        result = RUNNERS[cfg.experiment](cfg)
        digest = cfg.digest()
        files = {}
        for name, table in result.tables.items():
            path = os.path.join(stage, f"{name}.csv")
            with open(path, "w", newline="") as fh:
                fh.write(csv_text(table, digest))
            files[f"{name}.csv"] = _sha(path)
        for name, svg in result.svgs.items():
            path = os.path.join(stage, f"{name}.svg")
            with open(path, "w") as fh:
                fh.write(svg)
            files[f"{name}.svg"] = _sha(path)
        with open(os.path.join(stage, "config.json"), "w") as fh:
            fh.write(cfg.canonical() + "\n")
        manifest = RunManifest(cfg.experiment, digest, __version__, cfg.seed, threads,
                               time.perf_counter() - t0, result.checks, files)
        with open(os.path.join(stage, "manifest.json"), "w") as fh:
            fh.write(manifest.to_json() + "\n")
        if os.path.exists(target):
            shutil.rmtree(target)
        os.replace(stage, target)
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    return (0 if all(result.checks.values()) else 1), manifest


# ---------------------------------------------------------------------------
# command line

def _parser():
    ap = argparse.ArgumentParser(prog="fermi-twist", description="Twist-map experiments and acceptance suite.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", help="JSON config; defaults are used when omitted")
    ap.add_argument("--seed", type=int, help="overrides the config seed")
    ap.add_argument("--threads", type=int, help="thread budget (falls back to FT_THREADS, then 1)")
    ap.add_argument("--out", help="output directory (overrides out_dir)")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.config:
            cfg = load_config(args.config)
            if cfg.experiment != args.experiment:
                raise ConfigError("experiment", f"config is for '{cfg.experiment}', not '{args.experiment}'")
        else:
            if args.seed is None:
                raise ConfigError("seed", "is mandatory (pass --seed or a config)")
            cfg = ExperimentConfig(experiment=args.experiment, seed=args.seed)
        if args.seed is not None:
            cfg = config_from_dict({**json.loads(cfg.canonical()), "seed": args.seed, "out_dir": cfg.out_dir})
        threads = args.threads or int(os.environ.get("FT_THREADS", "1") or 1)
        if threads < 1:
            raise ConfigError("threads", "must be at least 1")
        status, manifest = run(cfg, threads, args.out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    failed = [k for k, v in manifest.checks.items() if not v]
    print(f"{cfg.experiment}: {len(manifest.checks) - len(failed)}/{len(manifest.checks)} checks passed; "
          f"outputs in {os.path.abspath(args.out or cfg.out_dir)}")
    for k in failed:
        print(f"  failed: {k}")
    return status


if __name__ == "__main__":
    sys.exit(main())
