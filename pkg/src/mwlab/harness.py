"""Config-driven experiment runner.

A config is one JSON document validated against ``config.schema.json``. Each
experiment writes ``<experiment>.csv`` with a fixed header (every row carries
the config hash) and a ``manifest.json``; sweeps also write ``fit_*.json``.

Randomness comes from a single root seed. Task ``i`` of an experiment draws
from ``numpy.random.default_rng([root_seed, i])``, so results do not depend
on scheduling order.
"""
import copy
import csv
import hashlib
import io
import json
import logging
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, backend
from .bellman_probe import size_bound_sweep
from .dyadic_mart import build_tree, dyadic_a2, sup_sigma_norm
from .heat_ext import TimeGrid, heat_a2_search
from .lp_functional import DUALITY_TOL, duality_check, lp_report
from .riesz_ops import sign_patterns, signed_sum, weighted_norm
from .weight_field import (
    FieldFormatError,
    GridSpec,
    VectorField,
    bump_vector_field,
    family_leaves,
    load_field,
    make_family,
)

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

DEFAULTS = {
    "grid": {"m": 1, "n": 64, "L": 1.0},
    "d": 2,
    "family": {"name": "identity", "params": []},
    "time": {"count": 48},
    "eps_grid": [0.05, 0.1, 0.15, 0.2, 0.3, 0.4],
    "delta_grid": [0.01, 0.04, 0.09, 0.16, 0.25],
    "pairs": 20,
    "samples": 20,
    "depth": 4,
    "budget": 256,
    "refine": 2,
    "seed": 0,
    "workers": 1,
    "tolerances": {"power_tol": 1e-8, "power_iters": 2000, "duality": DUALITY_TOL, "drift": 0.01},
    "output": {"dir": "runs"},
}

COLUMNS = {
    "a2h": ["config_hash", "family", "params", "m", "n", "L", "d", "characteristic", "argmax_x", "argmax_t", "rounds"],
    "riesz_norm": ["config_hash", "family", "eps", "pattern", "characteristic", "norm", "excess", "ratio"],
    "lp": ["config_hash", "family", "eps", "delta_target", "characteristic", "pair", "lhs", "rhs_f", "rhs_g",
           "ratio", "tail_bound", "c_pair"],
    "duality": ["config_hash", "m", "pair", "axis", "multiplier_side", "heat_side", "residual", "passed"],
    "martingale": ["config_hash", "family", "eps", "depth", "d", "dyadic_a2", "sup_norm", "exhaustive", "evaluated",
                   "ratio"],
    "bellman_sweep": ["config_hash", "delta", "max_ratio", "c_delta", "exhaustive", "samples"],
}


class ConfigError(ValueError):
    pass


class NumericFailure(RuntimeError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


def load_schema():
    return json.loads(resources.files("mwlab").joinpath("config.schema.json").read_text())


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    raw: dict

    @classmethod
    def from_dict(cls, data, base_dir=None):
        try:
            jsonschema.validate(data, load_schema())
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"invalid config: {exc.message}") from exc
        cfg = _merge(DEFAULTS, data)
        if "input_file" in cfg:
            path = Path(cfg["input_file"])
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            if not path.exists():
                raise ConfigError(f"input file {path} does not exist")
            try:
                load_field(path)
            except FieldFormatError as exc:
                raise ConfigError(f"input file {path}: {exc}") from exc
            cfg["input_file"] = str(path)
        try:
            GridSpec(**cfg["grid"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if cfg["experiment"] == "bellman_sweep" and any(not 0 < x <= 0.5 for x in cfg["delta_grid"]):
            raise ConfigError("bellman_sweep delta_grid must lie in (0, 0.5]")
        return cls(cfg)

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data, base_dir=path.parent)

    def to_json(self):
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    @property
    def hash(self):
        # scheduling and output location do not change results
        ident = {k: v for k, v in self.raw.items() if k not in ("workers", "output")}
        return hashlib.sha256(json.dumps(ident, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def grid(self):
        return GridSpec(**self.raw["grid"])

    def tgrid(self, grid):
        t = self.raw["time"]
        base = TimeGrid.for_characteristic(grid, t.get("count", 48))
        return TimeGrid(t.get("t_min", base.t_min), t.get("t_max", base.t_max), t.get("count", 48))

    def with_overrides(self, **kw):
        raw = _merge(self.raw, kw)
        return ExperimentConfig(raw)

    def refined(self):
        """The same experiment at doubled resolution: ``n``, time nodes, and depth."""
        raw = copy.deepcopy(self.raw)
        raw["grid"]["n"] *= 2
        raw["time"]["count"] = 2 * raw["time"].get("count", 48) - 1
        raw["depth"] = min(raw["depth"] + 1, 8)
        raw.pop("input_file", None)
        return ExperimentConfig(raw)


def task_rng(root_seed, index):
    return np.random.default_rng([int(root_seed), int(index)])


@dataclass
class FitResult:
    pairs: list
    fitted_c: float
    residual: float
    band: tuple

    def to_dict(self):
        return {"pairs": [list(map(float, p)) for p in self.pairs], "fitted_c": self.fitted_c,
                "residual": self.residual, "band": list(self.band)}


def fit_constant(pairs):
    """Least-squares slope through the origin on the half with smallest abscissa.

    ``residual`` is the largest relative deviation from the line on that half.
    The slope is clipped at 0.
    """
    pts = sorted((float(x), float(y)) for x, y in pairs)
    if len(pts) < 4:
        raise ValueError("fit_constant needs at least 4 pairs")
    if any(x <= 0 for x, _ in pts):
        raise ValueError("abscissas must be positive")
    half = pts[: (len(pts) + 1) // 2]
    x = np.array([p[0] for p in half])
    y = np.array([p[1] for p in half])
    c = max(float(np.dot(x, y) / np.dot(x, x)), 0.0)
    scale = c * x if c > 0 else np.full_like(x, max(np.abs(y).max(), np.finfo(float).tiny))
    residual = float(np.max(np.abs(y - c * x) / scale)) if np.any(y) or c > 0 else 0.0
    return FitResult(pts, c, residual, (half[0][0] ** 2, half[-1][0] ** 2))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return json.dumps([float(a) if isinstance(a, (float, np.floating, int, np.integer)) else a for a in v])
    return str(v)


def csv_text(experiment, rows):
    cols = COLUMNS[experiment]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in cols])
    return buf.getvalue()


def _map(cfg, fn, items):
    if cfg["workers"] > 1:
        with ThreadPoolExecutor(cfg["workers"]) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _weight(cfg, family=None, eps=None, grid=None):
    grid = grid or cfg.grid
    if family is None and "input_file" in cfg.raw:
        w = load_field(cfg["input_file"])
        return w, {"name": "file", "params": []}
    fam = copy.deepcopy(family or cfg["family"])
    params = list(fam.get("params", []))
    if eps is not None:
        params = [eps] + params[1:] if params else [eps]
    fam["params"] = params
    return make_family(fam["name"], params, grid, cfg["d"]), fam


# experiments -------------------------------------------------------------


def run_a2h(cfg):
    fams = cfg.raw.get("families") or [None]
    rows = []
    for fam in fams:
        w, spec = _weight(cfg, fam)
        res = heat_a2_search(w, cfg.tgrid(w.grid), cfg["refine"])
        g = w.grid
        rows.append({"config_hash": cfg.hash, "family": spec["name"], "params": spec["params"], "m": g.m, "n": g.n,
                     "L": g.L, "d": w.d, "characteristic": res.value, "argmax_x": list(res.x),
                     "argmax_t": res.t, "rounds": len(res.history) - 1})
    return {"a2h": rows}, {}


def _norm_kwargs(cfg):
    tol = cfg["tolerances"]
    return {"iters": tol["power_iters"], "tol": tol["power_tol"]}


def run_riesz_norm(cfg):
    spec_name = cfg["family"]["name"]
    eps_list = cfg["eps_grid"] if spec_name != "identity" else [0.0]

    def task(args):
        i, eps = args
        w, spec = _weight(cfg, eps=eps if spec_name != "identity" else None)
        char = heat_a2_search(w, cfg.tgrid(w.grid), cfg["refine"]).value
        out = []
        for p in sign_patterns(w.grid.m):
            val = weighted_norm(signed_sum(p), w, seed=int(task_rng(cfg["seed"], i).integers(2**32)),
                                **_norm_kwargs(cfg))
            excess = val - 1.0
            ratio = excess / np.sqrt(char - 1) if char > 1 else float("nan")
            out.append({"config_hash": cfg.hash, "family": spec["name"], "eps": float(eps), "pattern": p.label(),
                        "characteristic": char, "norm": val, "excess": excess, "ratio": ratio})
        return out

    rows = [r for chunk in _map(cfg, task, list(enumerate(eps_list))) for r in chunk]
    fits = {}
    pairs = []
    for eps in eps_list:
        sub = [r for r in rows if r["eps"] == float(eps)]
        if sub and sub[0]["characteristic"] > 1:
            pairs.append((np.sqrt(sub[0]["characteristic"] - 1), max(max(r["norm"] for r in sub) - 1, 0.0)))
    if len(pairs) >= 4:
        fits["fit_riesz"] = fit_constant(pairs).to_dict()
    return {"riesz_norm": rows}, fits


def calibrate_eps(family, delta, grid, d, tgrid, refine=1, rtol=1e-3):
    """Family parameter whose heat characteristic is ``1 + delta``, by bisection."""
    name = family["name"]
    extra = list(family.get("params", []))[1:]

    def excess(eps):
        w = make_family(name, [eps] + extra, grid, d)
        return heat_a2_search(w, tgrid, refine).value - 1.0

    lo, hi = 0.0, 0.5
    cap = 0.999 if name == "scalar_oscillation" else 20.0
    while excess(hi) < delta:
        lo, hi = hi, min(2 * hi, cap)
        if hi == cap and excess(hi) < delta:
            raise NumericFailure(f"{name} cannot reach characteristic 1 + {delta}")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if excess(mid) < delta:
            lo = mid
        else:
            hi = mid
        if hi - lo < rtol * hi * 1e-2:
            break
    return 0.5 * (lo + hi)


def _pair_params(rng, grid, d, count=3):
    """Grid-independent parameters for one random (f, g) pair."""
    bumps = []
    for _ in range(count):
        bumps.append((rng.uniform(0, grid.L, size=grid.m), rng.uniform(4 * grid.h, grid.L / 8),
                      rng.normal(size=d) + 1j * rng.normal(size=d)))
    return {"bumps": bumps, "noise": [(rng.uniform(0, grid.L, size=grid.m), rng.uniform(4 * grid.h, grid.L / 8),
                                       rng.normal(size=d) + 1j * rng.normal(size=d))],
            "noise_level": rng.uniform(0.0, 0.5)}


def build_pair(w, params):
    """``f`` from random bumps and ``g`` = mean-zero part of ``W f`` plus bump noise."""
    grid = w.grid
    f = sum((bump_vector_field(c, s, v, grid) for c, s, v in params["bumps"][1:]),
            bump_vector_field(*params["bumps"][0], grid)).mean_zero()
    wf = VectorField(grid, np.einsum("...ij,...j->...i", w.values, f.values)).mean_zero()
    noise = bump_vector_field(*params["noise"][0], grid).mean_zero()
    g = wf + (params["noise_level"] * wf.norm() / max(noise.norm(), 1e-300)) * noise
    return f, g.mean_zero()


def lp_sweep(cfg, grid=None, tcount=None, eps_table=None):
    grid = grid or cfg.grid
    tgrid_char = cfg.tgrid(cfg.grid)
    families = cfg.raw.get("families") or [cfg["family"]]
    tgrid_int = TimeGrid.for_integrals(grid, tcount or 96)
    eps_table = dict(eps_table or {})
    rows = []
    task = 0
    for fam in families:
        for delta in cfg["delta_grid"]:
            key = (fam["name"], json.dumps(fam.get("params", [])), float(delta))
            if key not in eps_table:
                eps_table[key] = calibrate_eps(fam, delta, cfg.grid, cfg["d"], tgrid_char)
            eps = eps_table[key]
            w, spec = _weight(cfg, fam, eps, grid)
            char = heat_a2_search(w, TimeGrid.for_characteristic(grid, tgrid_char.count), cfg["refine"]).value
            for k in range(cfg["pairs"]):
                rng = task_rng(cfg["seed"], task)
                task += 1
                f, g = build_pair(w, _pair_params(rng, cfg.grid, cfg["d"]))
                rep = lp_report(w, f, g, tgrid_int)
                c_pair = (rep.ratio - 1) / np.sqrt(char - 1) if char > 1 else float("nan")
                rows.append({"config_hash": cfg.hash, "family": spec["name"], "eps": eps, "delta_target": delta,
                             "characteristic": char, "pair": k, "lhs": rep.lhs, "rhs_f": rep.rhs_f,
                             "rhs_g": rep.rhs_g, "ratio": rep.ratio, "tail_bound": rep.tail_bound,
                             "c_pair": c_pair})
    return rows, eps_table


def lp_constant(rows):
    """Family-uniform empirical constant: ``max (ratio - 1) / sqrt(delta)`` over all rows."""
    return float(max(r["c_pair"] for r in rows))


def run_lp(cfg):
    rows, eps_table = lp_sweep(cfg)
    per_family = {}
    for r in rows:
        per_family[r["family"]] = max(per_family.get(r["family"], -np.inf), r["c_pair"])
    summary = {"C": lp_constant(rows), "per_family": per_family,
               "eps": {f"{k[0]}|{k[2]}": v for k, v in eps_table.items()}}
    return {"lp": rows}, {"lp_summary": summary}


def default_duality_pairs(m):
    """Ten deterministic real Gaussian pairs for the duality check."""
    out = []
    for k in range(10):
        c1 = np.full(m, 0.3 + 0.04 * k)
        c2 = np.full(m, 0.55 - 0.02 * k)
        if m == 2:
            c1[1] += 0.1
        out.append((c1, 0.05 + 0.005 * k, c2, 0.08 - 0.003 * k))
    return out


def run_duality(cfg):
    rows = []
    tol = cfg["tolerances"]["duality"]
    grid = cfg.grid
    for k, (c1, s1, c2, s2) in enumerate(default_duality_pairs(grid.m)):
        phi = bump_vector_field(c1, max(s1, 3 * grid.h), [1.0], grid).mean_zero()
        psi = bump_vector_field(c2, max(s2, 3 * grid.h), [1.0], grid).mean_zero()
        for i in range(1, grid.m + 1):
            rep = duality_check(phi, psi, i)
            rows.append({"config_hash": cfg.hash, "m": grid.m, "pair": k, "axis": i,
                         "multiplier_side": rep.multiplier_side, "heat_side": rep.heat_side,
                         "residual": rep.residual, "passed": rep.residual < tol})
    failed = [r for r in rows if not r["passed"]]
    if failed:
        raise NumericFailure("duality residual above tolerance", rows)
    return {"duality": rows}, {}


def martingale_rows(cfg, depth=None):
    depth = depth or cfg["depth"]
    fam = cfg["family"] if cfg["family"]["name"] != "identity" else {"name": "random_smooth", "params": [0.0, 7, 2]}

    def task(args):
        i, eps = args
        params = [eps] + list(fam.get("params", []))[1:]
        tree = build_tree(family_leaves(fam["name"], params, depth, cfg["d"]))
        a2 = dyadic_a2(tree)
        res = sup_sigma_norm(tree, cfg["budget"], seed=int(task_rng(cfg["seed"], i).integers(2**32)))
        ratio = (res.value - 1) / np.sqrt(a2 - 1) if a2 > 1 else float("nan")
        return {"config_hash": cfg.hash, "family": fam["name"], "eps": float(eps), "depth": depth, "d": cfg["d"],
                "dyadic_a2": a2, "sup_norm": res.value, "exhaustive": res.exhaustive, "evaluated": res.evaluated,
                "ratio": ratio}

    return _map(cfg, task, list(enumerate(cfg["eps_grid"])))


def run_martingale(cfg):
    rows = martingale_rows(cfg)
    pairs = [(np.sqrt(r["dyadic_a2"] - 1), max(r["sup_norm"] - 1, 0.0)) for r in rows if r["dyadic_a2"] > 1]
    fits = {"fit_martingale": fit_constant(pairs).to_dict()} if len(pairs) >= 4 else {}
    return {"martingale": rows}, fits


def run_bellman_sweep(cfg):
    table = size_bound_sweep(cfg["delta_grid"], cfg["samples"], cfg["seed"], depth=min(cfg["depth"], 6), d=cfg["d"])
    rows = [dict(config_hash=cfg.hash, **asdict(r)) for r in table]
    return {"bellman_sweep": rows}, {}


def run_full_sweep(cfg):
    tables, fits = {}, {}
    for fn in (run_riesz_norm, run_martingale):
        t, f = fn(cfg)
        tables.update(t)
        fits.update(f)
    return tables, fits


RUNNERS = {
    "a2h": run_a2h,
    "riesz_norm": run_riesz_norm,
    "lp": run_lp,
    "duality": run_duality,
    "martingale": run_martingale,
    "bellman_sweep": run_bellman_sweep,
    "full_sweep": run_full_sweep,
}

SORT_KEYS = {
    "a2h": ("family", "characteristic"),
    "riesz_norm": ("eps", "pattern"),
    "lp": ("family", "delta_target", "pair"),
    "duality": ("pair", "axis"),
    "martingale": ("eps",),
    "bellman_sweep": ("delta",),
}


def execute(cfg):
    """Run the configured experiment in memory; returns ``(tables, extras)``."""
    tables, extras = RUNNERS[cfg["experiment"]](cfg)
    for name, rows in tables.items():
        keys = SORT_KEYS[name]
        rows.sort(key=lambda r: tuple(str(r[k]) if isinstance(r[k], str) else r[k] for k in keys))
    return tables, extras


def run(cfg, out_dir=None):
    """Execute and write CSV, fit JSON and manifest. Returns the exit status."""
    out = Path(out_dir or cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    start = time.time()
    status, error = EXIT_OK, None
    try:
        tables, extras = execute(cfg)
    except NumericFailure as exc:
        status, error = EXIT_NUMERIC, str(exc)
        tables = {cfg["experiment"]: exc.row} if isinstance(exc.row, list) else {}
        extras = {}
        if isinstance(exc.row, dict):
            extras = {"failing_row": exc.row}
    except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        status, error = EXIT_NUMERIC, f"{type(exc).__name__}: {exc}"
        tables, extras = {}, {}
    for name, rows in tables.items():
        (out / f"{name}.csv").write_text(csv_text(name, rows))
    for name, payload in extras.items():
        (out / f"{name}.json").write_text(json.dumps(payload, indent=2, sort_keys=True, default=float) + "\n")
    manifest = {
        "experiment": cfg["experiment"],
        "config": cfg.raw,
        "config_hash": cfg.hash,
        "seed": cfg["seed"],
        "task_seed_scheme": "numpy.random.default_rng([seed, task_index])",
        "versions": {"mwlab": __version__, "numpy": np.__version__, "python": platform.python_version(),
                     "kernels": backend.name()},
        "wall_time_s": round(time.time() - start, 3),
        "outputs": sorted([f"{n}.csv" for n in tables] + [f"{n}.json" for n in extras]),
        "status": status,
        "error": error,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if error:
        logger.error("%s failed: %s", cfg["experiment"], error)
    return status


def _headline(cfg, tables, extras):
    """Named scalar quantities whose drift under refinement is reported."""
    exp = cfg["experiment"]
    out = {}
    if exp == "a2h":
        for r in tables["a2h"]:
            out[f"characteristic[{r['family']}]"] = r["characteristic"]
    elif exp in ("riesz_norm", "full_sweep"):
        for r in tables["riesz_norm"]:
            out[f"norm[{r['eps']},{r['pattern']}]"] = r["norm"]
    elif exp == "lp":
        for r in tables["lp"]:
            out[f"ratio[{r['family']},{r['delta_target']},{r['pair']}]"] = r["ratio"]
        out["C"] = lp_constant(tables["lp"])
    elif exp == "martingale":
        for r in tables["martingale"]:
            out[f"sup_norm[{r['eps']}]"] = r["sup_norm"]
    elif exp == "bellman_sweep":
        for r in tables["bellman_sweep"]:
            out[f"max_ratio[{r['delta']}]"] = r["max_ratio"]
    return out


@dataclass
class StabilityReport:
    drifts: dict
    max_drift: float
    threshold: float
    passed: bool
    supported: bool = True


def stability_check(cfg):
    """Rerun at doubled ``n``, time nodes and depth; report relative drift of headline quantities.

    For ``lp`` the family parameters calibrated on the base grid are reused so
    the weights and test pairs are the same functions at both resolutions.
    """
    threshold = cfg["tolerances"]["drift"]
    if cfg["experiment"] == "duality":
        return StabilityReport({}, 0.0, threshold, True, supported=False)
    fine = cfg.refined()
    if cfg["experiment"] == "lp":
        rows, eps_table = lp_sweep(cfg)
        rows2, _ = lp_sweep(cfg, grid=fine.grid, tcount=2 * 96 - 1, eps_table=eps_table)
        base = _headline(cfg, {"lp": rows}, {})
        ref = _headline(cfg, {"lp": rows2}, {})
    else:
        base = _headline(cfg, *execute(cfg))
        ref = _headline(fine, *execute(fine))
    drifts = {k: abs(ref[k] - base[k]) / max(abs(base[k]), 1e-300) for k in base if k in ref}
    worst = max(drifts.values(), default=0.0)
    return StabilityReport(drifts, worst, threshold, worst < threshold)
