"""Command-line orchestration of the experiments.

Every subcommand reads one JSON config, validates it completely before any
computation, writes its CSV/JSON results plus ``manifest.json`` into the output
directory, and maps failures to exit codes::

    0  success
    1  configuration (or other input) error
    2  numeric divergence
    3  failed acceptance assertion (only with --assert)
"""

from __future__ import annotations

import argparse
import copy
import datetime as _dt
import difflib
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lsa_infer import __version__
from lsa_infer import io as lsa_io
from lsa_infer.errors import ConfigError, DivergenceError, LsaError
from lsa_infer.schedule import StepSchedule

SUBCOMMANDS = ("simulate", "bootstrap", "coverage", "covariance-gap", "clt-rates", "boot-validity",
               "check-assumptions", "td-demo")
SEED_ENV = "LSA_INFER_SEED"

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_ASSERT = 0, 1, 2, 3

# Allowed keys; a nested dict describes a sub-object.
_SCHEMA: dict = {
    "seed": None,
    "instance": {
        "kind": None, "d": None, "seed": None, "spectrum": None, "noise_scale": None,
        "a_noise_scale": None, "n_atoms": None, "A": None, "b": None, "probs": None,
        "mdp": None, "mdp_path": None, "state_dist": None,
    },
    "schedule": {"c0": None, "gamma": None, "k0": None},
    "theta0": None,
    "n": None,
    "n_grid": None,
    "M": None,
    "R": None,
    "R_outer": None,
    "R_real": None,
    "level": None,
    "K": None,
    "weights": None,
    "reference": None,
    "p": None,
    "workers": None,
    "out": None,
    "assert": {"slope_min": None, "slope_max": None, "coverage_min": None, "coverage_max": None},
}

# Common misnamings that difflib would not map to the intended key.
_SYNONYMS = {
    "stepsize": "schedule.c0", "step_size": "schedule.c0", "lr": "schedule.c0",
    "learning_rate": "schedule.c0", "alpha": "schedule.c0", "exponent": "schedule.gamma",
    "decay": "schedule.gamma", "offset": "schedule.k0", "horizon": "n", "replications": "R",
    "bootstrap_samples": "M", "directions": "K", "weight": "weights", "dim": "instance.d",
}

DEFAULTS = {"seed": 0, "K": 32, "weights": "two_point", "level": 0.9, "reference": "sigma_inf",
            "theta0": "zero", "p": 2.0, "workers": 1}

_REQUIRED = {
    "simulate": ("n",),
    "bootstrap": ("n", "M"),
    "coverage": ("n", "M", "R"),
    "covariance-gap": ("n_grid",),
    "clt-rates": ("n_grid", "R"),
    "boot-validity": ("n_grid", "M", "R_outer", "R_real"),
    "check-assumptions": (),
    "td-demo": ("n", "M"),
}


def _default_mdp() -> dict:
    """Five-state random walk, actions left/right, uniform policy; used by td-demo
    when the config supplies no MDP."""
    S = 5
    P = np.zeros((S, 2, S))
    for s in range(S):
        P[s, 0, max(s - 1, 0)] = 1.0
        P[s, 1, min(s + 1, S - 1)] = 1.0
    r = np.zeros((S, 2))
    r[S - 1, 1] = 1.0
    feats = np.array([[1.0, s / (S - 1)] for s in range(S)])
    return {"transitions": P.tolist(), "rewards": r.tolist(), "policy": np.full((S, 2), 0.5).tolist(),
            "features": feats.tolist(), "discount": 0.9}


def _all_paths(schema: dict, prefix: str = "") -> list[str]:
    out = []
    for k, v in schema.items():
        path = f"{prefix}{k}"
        out.append(path)
        if isinstance(v, dict):
            out.extend(_all_paths(v, path + "."))
    return out


def _suggest(key: str, path: str) -> str | None:
    if key.lower() in _SYNONYMS:
        return _SYNONYMS[key.lower()]
    paths = _all_paths(_SCHEMA)
    full = f"{path}.{key}" if path else key
    hit = difflib.get_close_matches(full, paths, n=1, cutoff=0.6)
    if hit:
        return hit[0]
    leaves = {p.rsplit(".", 1)[-1]: p for p in paths}
    hit = difflib.get_close_matches(key, list(leaves), n=1, cutoff=0.6)
    return leaves[hit[0]] if hit else None


def _check_keys(obj: dict, schema: dict, path: str = "") -> None:
    for key, val in obj.items():
        here = f"{path}.{key}" if path else key
        if key not in schema:
            hint = _suggest(key, path)
            msg = f"unknown key {key!r}" + (f"; did you mean {hint!r}?" if hint else "")
            raise ConfigError(msg, here)
        sub = schema[key]
        if isinstance(sub, dict):
            if not isinstance(val, dict):
                raise ConfigError("expected an object", here)
            _check_keys(val, sub, here)


def _int(value, path: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ConfigError("expected an integer", path)
    if value < minimum:
        raise ConfigError(f"must be >= {minimum}", path)
    return int(value)


def _float(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError("expected a finite number", path)
    return float(value)


@dataclass
class ExperimentConfig:
    """Validated configuration; ``raw`` holds the parsed document with defaults applied."""

    raw: dict
    instance: dict
    schedule: StepSchedule
    seed: int
    config_hash: str
    path: str | None = None
    seed_source: str = "config"
    params: dict = field(default_factory=dict)

    def get(self, key, default=None):
        return self.params.get(key, default)


def _parse_json(text: str, origin: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}",
                          origin) from None
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a JSON object", origin)
    return doc


def validate_config(doc: dict, config_hash: str = "", path: str | None = None) -> ExperimentConfig:
    _check_keys(doc, _SCHEMA)
    raw = copy.deepcopy(doc)
    for k, v in DEFAULTS.items():
        raw.setdefault(k, v)

    sched = raw.get("schedule")
    if sched is None:
        raise ConfigError("missing required object (c0, gamma, k0 have no defaults)", "schedule")
    for k in ("c0", "gamma", "k0"):
        if k not in sched:
            raise ConfigError("required; no default is applied", f"schedule.{k}")
    c0 = _float(sched["c0"], "schedule.c0")
    gamma = _float(sched["gamma"], "schedule.gamma")
    k0 = _int(sched["k0"], "schedule.k0", minimum=0)
    if not 0.5 < gamma < 1:
        raise ConfigError("gamma must lie in (1/2, 1)", "schedule.gamma")
    if not c0 > 0:
        raise ConfigError("c0 must be positive", "schedule.c0")
    schedule = StepSchedule(c0, gamma, k0)

    inst = raw.setdefault("instance", {})
    kind = inst.setdefault("kind", "random_hurwitz")
    if kind not in ("random_hurwitz", "gaussian_1d", "atoms", "td"):
        raise ConfigError(f"unknown instance kind {kind!r}", "instance.kind")
    if kind == "random_hurwitz":
        inst.setdefault("d", 2)
        inst["d"] = _int(inst["d"], "instance.d")
    if kind == "atoms":
        for k in ("A", "b", "probs"):
            if k not in inst:
                raise ConfigError("required for kind 'atoms'", f"instance.{k}")

    params = {}
    seed = _int(raw["seed"], "seed", minimum=0)
    for key in ("n", "M", "R", "R_outer", "R_real", "K", "workers"):
        if key in raw and raw[key] is not None:
            params[key] = _int(raw[key], key, minimum=2 if key == "n" else 1)
    if "n_grid" in raw:
        grid = raw["n_grid"]
        if not isinstance(grid, list) or len(grid) < 3:
            raise ConfigError("expected a list of at least 3 horizons", "n_grid")
        grid = [_int(v, f"n_grid[{i}]", minimum=2) for i, v in enumerate(grid)]
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("horizons must be strictly increasing", "n_grid")
        if grid[0] < k0 + 1:
            raise ConfigError("horizons must be >= k0 + 1", "n_grid")
        params["n_grid"] = grid
    level = raw["level"]
    levels = level if isinstance(level, list) else [level]
    for i, lv in enumerate(levels):
        lv = _float(lv, "level")
        if not 0 < lv < 1:
            raise ConfigError("confidence level must lie in (0, 1)", "level")
    params["level"] = [float(v) for v in levels] if isinstance(level, list) else float(level)
    from lsa_infer.bootstrap import WeightScheme

    try:
        params["weights"] = WeightScheme.of(raw["weights"]).kind
    except LsaError as exc:
        raise ConfigError(str(exc), "weights") from None
    if raw["reference"] not in ("sigma_inf", "sigma_n"):
        raise ConfigError("reference must be 'sigma_inf' or 'sigma_n'", "reference")
    params["reference"] = raw["reference"]
    params["p"] = _float(raw["p"], "p")
    theta0 = raw["theta0"]
    if not (theta0 in ("zero", "star") or isinstance(theta0, list)):
        raise ConfigError("theta0 must be 'zero', 'star' or a list of numbers", "theta0")
    params["theta0"] = theta0
    for k in ("slope_min", "slope_max", "coverage_min", "coverage_max"):
        if k in raw.get("assert", {}):
            params[f"assert.{k}"] = _float(raw["assert"][k], f"assert.{k}")
    if "out" in raw:
        params["out"] = str(raw["out"])
    return ExperimentConfig(raw, inst, schedule, seed, config_hash, path, params=params)


def load_config(path) -> ExperimentConfig:
    """Read, hash and validate a JSON config file."""
    p = Path(path)
    try:
        data = p.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(p)) from None
    doc = _parse_json(data.decode("utf-8"), str(p))
    return validate_config(doc, hashlib.sha256(data).hexdigest(), str(p))


def build_instance(cfg: ExperimentConfig):
    from lsa_infer import model

    spec = cfg.instance
    kind = spec["kind"]
    try:
        if kind == "random_hurwitz":
            lo, hi = spec.get("spectrum", [0.5, 1.5])
            return model.make_random_hurwitz(
                spec["d"], int(spec.get("seed", 0)), (float(lo), float(hi)),
                float(spec.get("noise_scale", 0.5)), a_noise_scale=spec.get("a_noise_scale"),
                n_atoms=spec.get("n_atoms"))
        if kind == "gaussian_1d":
            return model.make_gaussian_identity_1d(spec.get("seed"))
        if kind == "atoms":
            return model.make_from_atoms(spec["A"], spec["b"], spec["probs"])
        if "mdp_path" in spec:
            mdp = model.load_mdp(spec["mdp_path"])
        else:
            mdp = model.load_mdp(spec.get("mdp") or _default_mdp())
        return model.make_td_generative(mdp, spec.get("seed"), spec.get("state_dist"))
    except LsaError as exc:
        raise ConfigError(str(exc), "instance") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid instance specification: {exc}", "instance") from None


def _theta0(cfg: ExperimentConfig, instance):
    t = cfg.get("theta0")
    if t == "zero":
        return np.zeros(instance.dim)
    if t == "star":
        if instance.theta_star is None:
            raise ConfigError("theta0 = 'star' needs a known solution", "theta0")
        return np.array(instance.theta_star, dtype=float)
    arr = np.asarray(t, dtype=float)
    if arr.shape != (instance.dim,):
        raise ConfigError(f"expected {instance.dim} entries", "theta0")
    return arr


def predicted_exponent(metric: str, gamma: float) -> float:
    """Exponent of the leading term of the rate bound for ``metric`` (log factors dropped)."""
    phi_exp = 1.5 * gamma - 0.5 if gamma < 2 / 3 else 0.5
    if metric == "sigma_gap":
        return gamma - 1.0
    if metric == "clt":
        return -min(1.0 - gamma, gamma / 2, phi_exp)
    if metric == "boot_validity":
        return -min(0.5, gamma / 2, phi_exp)
    raise ValueError(metric)


def _summary_table(rows: list[tuple]) -> str:
    head = ("metric", "slope", "stderr", "r2", "predicted")
    cells = [head] + [(m, f"{f.slope:.4f}", f"{f.slope_stderr:.4f}", f"{f.r_squared:.4f}", f"{p:.4f}")
                      for m, f, p in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(head))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells)


def assumption_summary(cfg: ExperimentConfig, instance) -> dict:
    from lsa_infer.covariance import sigma_inf
    from lsa_infer.schedule import check_bootstrap_assumptions, check_step_size, stability_constants

    consts = stability_constants(instance.Abar, bA=instance.bA)
    rep = check_step_size(cfg.schedule, consts, cfg.get("p"), instance.dim)
    n = cfg.get("n") or (cfg.get("n_grid") or [None])[-1]
    if n is not None:
        lam = float(np.linalg.eigvalsh(sigma_inf(instance.Abar, instance.Sigma_eps))[0])
        rep.extend(check_bootstrap_assumptions(cfg.schedule, consts, n, instance.dim,
                                               instance.eps_sup, lam))
    return {"report": rep, "constants": consts}


class _Outputs:
    """Collects result files under temporary names; :meth:`finalize` renames them
    after the manifest has been written."""

    def __init__(self, root: Path):
        self.root = root
        self.files: list[str] = []

    def _tmp(self, name: str) -> Path:
        self.files.append(name)
        return self.root / (name + ".part")

    def csv(self, name, header, rows):
        lsa_io.write_csv(self._tmp(name), header, rows)

    def json(self, name, obj):
        lsa_io.write_json(self._tmp(name), obj)

    def trajectory_bin(self, name, traj):
        lsa_io.write_trajectory_binary(traj, self._tmp(name))

    def finalize(self):
        for name in self.files:
            os.replace(self.root / (name + ".part"), self.root / name)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _assert_slope(cfg, fit) -> bool | None:
    lo, hi = cfg.get("assert.slope_min"), cfg.get("assert.slope_max")
    if lo is None and hi is None:
        raise ConfigError("--assert needs assert.slope_min and/or assert.slope_max", "assert")
    return (lo is None or fit.slope >= lo) and (hi is None or fit.slope <= hi)


def _assert_coverage(cfg, cov: list[float]) -> bool:
    lo, hi = cfg.get("assert.coverage_min"), cfg.get("assert.coverage_max")
    if lo is None and hi is None:
        raise ConfigError("--assert needs assert.coverage_min and/or assert.coverage_max", "assert")
    return all((lo is None or c >= lo) and (hi is None or c <= hi) for c in cov)


# subcommand bodies: (cfg, instance, out, args) -> (summary text, assertion outcome or None)

def _run_simulate(cfg, inst, out, args):
    from lsa_infer.engine import lsa_run

    traj = lsa_run(inst, cfg.schedule, cfg.get("n"), _theta0(cfg, inst), cfg.seed)
    out.csv("trajectory.csv", *lsa_io.trajectory_rows(traj))
    out.trajectory_bin("trajectory.bin", traj)
    res = {"n": traj.n, "average": traj.average, "last": traj.iterates[-1],
           "theta_star": inst.theta_star}
    if inst.theta_star is not None:
        res["error_norm"] = float(np.linalg.norm(traj.average - inst.theta_star))
    out.json("summary.json", res)
    return f"average = {np.array2string(traj.average, precision=6)}", None


def _run_bootstrap(cfg, inst, out, args, demo=False):
    from lsa_infer.bootstrap import bootstrap_run, confidence_sets
    from lsa_infer.engine import lsa_run

    traj = lsa_run(inst, cfg.schedule, cfg.get("n"), _theta0(cfg, inst), cfg.seed)
    ens = bootstrap_run(traj, cfg.get("M"), cfg.get("weights"), cfg.seed)
    levels = cfg.get("level")
    levels = levels if isinstance(levels, list) else [levels]
    reports = [confidence_sets(ens, lv, inst.theta_star).to_dict() for lv in levels]
    out.csv("ensemble.csv", ["l"] + [f"theta_{i}" for i in range(inst.dim)], ens.to_rows())
    out.json("confidence.json", {"n": traj.n, "M": ens.M, "weights": ens.scheme.kind,
                                 "base_average": ens.base_average, "theta_star": inst.theta_star,
                                 "sets": reports})
    lines = []
    for rep in reports:
        iv = ", ".join(f"[{lo:.5f}, {hi:.5f}]" for lo, hi in rep["intervals"])
        cov = f" covers theta*: {rep['contains_target']}" if "contains_target" in rep else ""
        lines.append(f"level {rep['level']}: {iv}{cov}")
    if demo:
        lines.insert(0, f"TD(0) instance, d = {inst.dim}, theta* = {np.array2string(inst.theta_star, precision=5)}")
    return "\n".join(lines), None


def _run_td_demo(cfg, inst, out, args):
    if inst.kind != "td_generative":
        raise ConfigError("td-demo needs instance.kind = 'td'", "instance.kind")
    return _run_bootstrap(cfg, inst, out, args, demo=True)


def _run_coverage(cfg, inst, out, args):
    from lsa_infer.bootstrap import coverage_experiment

    res = coverage_experiment(inst, cfg.schedule, cfg.get("n"), cfg.get("M"), cfg.get("R"),
                              cfg.get("level"), cfg.seed, _theta0(cfg, inst), cfg.get("weights"),
                              cfg.get("workers"))
    levels = {str(k): v for k, v in res["levels"].items()}
    out.json("coverage.json", {"n": res["n"], "M": res["M"], "R": res["R"], "diverged": res["diverged"],
                               "weights": cfg.get("weights"), "levels": levels})
    rows = [(lv, *v["coordinate"], v["box"], v["sup"], v["ellipsoid"]) for lv, v in levels.items()]
    out.csv("coverage.csv", ["level"] + [f"coord_{i}" for i in range(inst.dim)] + ["box", "sup", "ellipsoid"],
            rows)
    text = "\n".join(f"level {r[0]}: coordinate {', '.join(f'{c:.3f}' for c in r[1:1 + inst.dim])}; "
                     f"box {r[-3]:.3f}, sup {r[-2]:.3f}, ellipsoid {r[-1]:.3f}" for r in rows)
    ok = None
    if args.assert_:
        ok = all(_assert_coverage(cfg, v["coordinate"]) for v in levels.values())
    return text, ok


def _series_outputs(out, name, series, fit, metric_key, gamma):
    out.csv(f"{name}.csv", ["n", "distance", "stderr"], series.to_rows())
    out.json(f"{name}.json", {**series.to_dict(), "fit": fit.to_dict(),
                              "predicted_exponent": predicted_exponent(metric_key, gamma)})


def _run_covariance_gap(cfg, inst, out, args):
    from lsa_infer.covariance import covariance_report
    from lsa_infer.gaussapprox import DistanceSeries, rate_fit

    reports = [covariance_report(inst.Abar, inst.Sigma_eps, cfg.schedule, n) for n in cfg.get("n_grid")]
    d = inst.dim
    header = ["n", "gap"] + [f"sigma_n_{i}{j}" for i in range(d) for j in range(d)]
    out.csv("covariance_gap.csv", header, [[r.n, r.gap, *r.Sigma_n.ravel()] for r in reports])
    series = DistanceSeries([r.n for r in reports], [r.gap for r in reports], np.zeros(len(reports)),
                            metric="sigma_gap", bounded=False)
    fit = rate_fit(series)
    out.json("covariance_gap.json", {"reports": [r.to_dict() for r in reports], "fit": fit.to_dict(),
                                     "predicted_exponent": predicted_exponent("sigma_gap", cfg.schedule.gamma)})
    text = _summary_table([("sigma_gap", fit, predicted_exponent("sigma_gap", cfg.schedule.gamma))])
    return text, (_assert_slope(cfg, fit) if args.assert_ else None)


def _run_clt_rates(cfg, inst, out, args):
    from lsa_infer.gaussapprox import clt_rate_experiment, rate_fit

    series = clt_rate_experiment(inst, cfg.schedule, cfg.get("n_grid"), cfg.get("R"), cfg.get("K"),
                                 cfg.seed, cfg.get("reference"), _theta0(cfg, inst), cfg.get("workers"))
    fit = rate_fit(series)
    _series_outputs(out, "clt_rates", series, fit, "clt", cfg.schedule.gamma)
    text = _summary_table([(f"halfspace vs {cfg.get('reference')}", fit,
                            predicted_exponent("clt", cfg.schedule.gamma))])
    return text, (_assert_slope(cfg, fit) if args.assert_ else None)


def _run_boot_validity(cfg, inst, out, args):
    from lsa_infer.gaussapprox import bootstrap_validity_experiment, rate_fit

    series = bootstrap_validity_experiment(inst, cfg.schedule, cfg.get("n_grid"), cfg.get("M"),
                                           cfg.get("R_outer"), cfg.get("R_real"), cfg.seed, cfg.get("K"),
                                           cfg.get("weights"), _theta0(cfg, inst), cfg.get("workers"))
    fit = rate_fit(series)
    _series_outputs(out, "boot_validity", series, fit, "boot_validity", cfg.schedule.gamma)
    text = _summary_table([("median bootstrap vs real", fit,
                            predicted_exponent("boot_validity", cfg.schedule.gamma))])
    return text, (_assert_slope(cfg, fit) if args.assert_ else None)


def _run_check_assumptions(cfg, inst, out, args, summary=None):
    summary = summary or assumption_summary(cfg, inst)
    rep = summary["report"]
    out.json("assumptions.json", {"constants": summary["constants"].to_dict(), **rep.to_dict()})
    return rep.table(), None


_RUNNERS = {
    "simulate": _run_simulate,
    "bootstrap": _run_bootstrap,
    "coverage": _run_coverage,
    "covariance-gap": _run_covariance_gap,
    "clt-rates": _run_clt_rates,
    "boot-validity": _run_boot_validity,
    "check-assumptions": _run_check_assumptions,
    "td-demo": _run_td_demo,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lsa-infer",
        description="Monte-Carlo laboratory for averaged linear stochastic approximation.",
        epilog=("Defaults for artifact knobs: K=32, weights=two_point, level=0.9, reference=sigma_inf, "
                "theta0=zero, seed=0, workers=1. schedule.c0, schedule.gamma and schedule.k0 have no "
                f"defaults. {SEED_ENV} overrides the config seed."),
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", help="output directory (default: config 'out' or ./runs/<subcommand>)")
        p.add_argument("--workers", type=int, help="process-pool size")
        p.add_argument("--assert", dest="assert_", action="store_true",
                       help="exit 3 when the configured acceptance band is missed")
        p.add_argument("--M", type=int, help="bootstrap replicates")
        p.add_argument("--level", type=float, help="confidence level")
        p.add_argument("--weights", choices=("two_point", "exp", "poisson"), help="multiplier law")
        p.add_argument("--replications", type=int, help="Monte-Carlo replications R")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _apply_flags(doc: dict, args) -> dict:
    doc = copy.deepcopy(doc)
    for flag, key in (("M", "M"), ("level", "level"), ("weights", "weights"), ("replications", "R"),
                      ("workers", "workers")):
        val = getattr(args, flag)
        if val is not None:
            doc[key] = val
    return doc


def run_subcommand(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = _now()
    try:
        p = Path(args.config)
        try:
            data = p.read_bytes()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}", str(p)) from None
        doc = _apply_flags(_parse_json(data.decode("utf-8"), str(p)), args)
        cfg = validate_config(doc, hashlib.sha256(data).hexdigest(), str(p))
        missing = [k for k in _REQUIRED[args.command] if cfg.get(k) is None]
        if missing:
            raise ConfigError(f"required by {args.command}", missing[0])
        config_seed = cfg.seed
        env_seed = os.environ.get(SEED_ENV)
        if env_seed is not None:
            try:
                cfg.seed = int(env_seed)
            except ValueError:
                raise ConfigError("must be an integer", SEED_ENV) from None
            cfg.seed_source = "environment"
        instance = build_instance(cfg)
        _theta0(cfg, instance)
        out_dir = Path(args.out or cfg.get("out") or Path("runs") / args.command)
        out_dir.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    outputs = _Outputs(out_dir)
    status, ok, text = EXIT_OK, None, ""
    try:
        summary = assumption_summary(cfg, instance)
        if args.command == "check-assumptions":
            text, ok = _run_check_assumptions(cfg, instance, outputs, args, summary)
        else:
            text, ok = _RUNNERS[args.command](cfg, instance, outputs, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"divergence [engine]: {exc}", file=sys.stderr)
        status = EXIT_DIVERGENCE
        summary = None
    except LsaError as exc:
        print(f"error [{type(exc).__module__}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if ok is False:
        status = EXIT_ASSERT
    manifest = {
        "subcommand": args.command,
        "config_path": str(p),
        "config_sha256": cfg.config_hash,
        "tool_version": __version__,
        "started": started,
        "finished": _now(),
        "seeds": {"config": config_seed, "effective": cfg.seed, "source": cfg.seed_source},
        "workers": cfg.get("workers"),
        "effective_config": cfg.raw,
        "assumptions": None if summary is None else {
            "passed": summary["report"].passed, "failing": summary["report"].failing()},
        "assertion": None if ok is None else bool(ok),
        "exit_code": status,
        "outputs": list(outputs.files),
    }
    lsa_io.write_json(out_dir / "manifest.json", manifest)
    outputs.finalize()
    if text:
        print(text)
    if ok is not None:
        print(f"assertion: {'passed' if ok else 'FAILED'}")
    return status


def main() -> None:
    sys.exit(run_subcommand())


if __name__ == "__main__":
    main()
