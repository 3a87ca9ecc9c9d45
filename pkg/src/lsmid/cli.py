"""Command-line front end: ``lsmid {simulate,estimate,metrics,bounds,experiment}``.

Exit codes: 0 ok, 1 input error, 2 estimator hit the iteration limit,
3 combinatorial budget exceeded.  Errors are printed to stderr as a JSON
object ``{"error": {"type": ..., "message": ...}}``.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import logging
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor
from itertools import product
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from . import io as lio
from .analysis import bound_report
from .estimator import EstimatorConfig, estimate, matched_error
from .metrics import DEFAULT_BUDGET, MetricsReport, compute_metrics
from .model import (
    BudgetExceededError,
    FeatureMapSpec,
    NoiseSpec,
    SimulationDivergedError,
    simulate,
    switching_generator,
    trial_seed,
)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_INPUT, EXIT_ITER, EXIT_BUDGET = 0, 1, 2, 3

_num = {"type": "number"}
_int = {"type": "integer"}
_pos = {"type": "integer", "minimum": 1}
_nonneg = {"type": "integer", "minimum": 0}
_flag = {"type": "boolean"}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


CONFIG_SCHEMA = _obj({
    "system": _obj({
        "n": _pos,
        "s": _pos,
        "A_true": {"oneOf": [{"const": "random"},
                             {"type": "array", "minItems": 1,
                              "items": {"type": "array", "minItems": 1, "items": _num}}]},
        "A_scale": {"type": "number", "exclusiveMinimum": 0},
        "feature_map": _obj({
            "kind": {"enum": ["identity", "arx", "polynomial"]},
            "n_a": _nonneg, "n_b": _nonneg, "n_u": _pos, "degree": _pos, "lagged": _flag,
        }),
        "switching": _obj({
            "kind": {"enum": ["iid_uniform", "dwell", "periodic"]},
            "min_dwell": _pos,
            "pattern": {"type": "array", "items": _pos},
            "weights": {"type": "array", "items": {"type": "number", "minimum": 0}},
        }),
    }),
    "data": _obj({
        "N": _pos,
        "input_dist": {"enum": ["gaussian", "uniform", "constant"]},
        "seed": _nonneg,
    }),
    "noise": _obj({
        "dense": {"enum": ["none", "gaussian", "uniform"]},
        "dense_scale": {"type": "number", "minimum": 0},
        "sparse_count": _nonneg,
        "sparse_range": {"type": "array", "items": {"type": "number", "minimum": 0},
                         "minItems": 2, "maxItems": 2},
        "sparse_sign": {"enum": ["random", "fixed"]},
        "sparse_positions": {"type": "array", "items": _pos},
    }),
    "estimator": _obj({
        "restarts": _pos,
        "max_iters": _pos,
        "cost_tol": {"type": "number", "exclusiveMinimum": 0},
        "tie_tol": {"type": "number", "minimum": 0},
        "empty_mode_policy": {"enum": ["reseed_random_point", "reseed_worst_residual"]},
        "mode": {"enum": ["heuristic", "exact_bruteforce", "both"]},
        "budget": _pos,
    }),
    "metrics": _obj({
        "enable": _obj({"xi_switched": _flag, "gamma_exact": _flag}),
        "budget": _pos,
        "xi_samples": _pos,
        "restarts": _pos,
        "m": _pos,
        "r_grid": {"type": "array", "items": _nonneg},
    }),
    "analysis": _obj({
        "enable": _obj({"metrics": _flag, "bounds": _flag, "theorem1_oracle": _flag}),
        "oracle_budget": _nonneg,
    }),
    "output": _obj({
        "dir": {"type": "string"},
        "formats": {"type": "array", "items": {"enum": ["json", "csv"]}, "uniqueItems": True},
        "trace": _flag,
    }),
    "experiment": _obj({
        "trials": _nonneg,
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "sweep": _obj({
            "N": {"type": "array", "items": _pos},
            "noise_std": {"type": "array", "items": {"type": "number", "minimum": 0}},
            "k": {"type": "array", "items": _nonneg},
            "balance": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0,
                                                   "exclusiveMaximum": 1}},
        }),
    }),
})


class InputError(Exception):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as f:
            cfg = json.load(f)
    except OSError as e:
        raise InputError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise InputError(f"config {path} line {e.lineno}: {e.msg}") from e
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise InputError(f"config invalid at {where}: {e.message}") from None


def _sec(cfg: dict, name: str) -> dict:
    return cfg.get(name, {})


def root_seed(cfg: dict) -> int:
    return int(_sec(cfg, "data").get("seed", 0))


def derive_seed(root: int, tag: str) -> int:
    """Independent sub-stream seed for a named purpose."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(tag.encode())])
    return int(ss.generate_state(1, np.uint32)[0])


def provenance(cfg: dict, command: str, inputs=()) -> tuple[str, int]:
    """(hash, root seed).  The hash covers the command, the config minus the
    output directory, and the bytes of every input file."""
    c = copy.deepcopy(cfg)
    c.get("output", {}).pop("dir", None)
    digest = {"command": command, "config": c,
              "inputs": [hashlib.sha256(Path(p).read_bytes()).hexdigest() for p in inputs]}
    return lio.config_hash(digest), root_seed(cfg)


def _fmap(cfg: dict) -> FeatureMapSpec:
    try:
        return FeatureMapSpec.from_dict(_sec(cfg, "system").get("feature_map", {}))
    except (TypeError, ValueError) as e:
        raise InputError(f"feature_map: {e}") from None


def estimator_config(cfg: dict, seed: int, threads: int = 1) -> EstimatorConfig:
    e = dict(_sec(cfg, "estimator"))
    return EstimatorConfig(seed=derive_seed(seed, "estimator"), n_jobs=threads, **e)


def _input_dim(sys_cfg: dict, fmap: FeatureMapSpec, n: int) -> int:
    if fmap.kind == "identity":
        return n
    return fmap.n_u


def _draw_inputs(dist: str, shape, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if dist == "gaussian":
        return rng.standard_normal(shape)
    if dist == "uniform":
        return rng.uniform(-1.0, 1.0, shape)
    return np.ones(shape)


def simulate_from_config(cfg: dict, seed: int, *, N=None, noise_std=None, k=None, balance=None):
    """Dataset from a scenario config; every random draw is derived from ``seed``."""
    sys_cfg = _sec(cfg, "system")
    data_cfg = _sec(cfg, "data")
    fmap = _fmap(cfg)
    n = int(sys_cfg.get("n", 1))
    s = int(sys_cfg.get("s", 1))
    N = int(data_cfg.get("N", 20) if N is None else N)
    A = sys_cfg.get("A_true", "random")
    if isinstance(A, str):
        A = float(sys_cfg.get("A_scale", 1.0)) * np.random.default_rng(derive_seed(seed, "A")).standard_normal((n, s))
    else:
        A = np.asarray(A, dtype=float)
        if A.shape != (n, s):
            raise InputError(f"A_true has shape {A.shape}, expected ({n}, {s})")
    sw = dict(sys_cfg.get("switching", {}))
    kind = sw.pop("kind", "iid_uniform")
    if "pattern" in sw:
        sw["pattern"] = [p - 1 for p in sw["pattern"]]
    if balance is not None:
        kind = "iid_uniform"
        sw["weights"] = [balance] + [(1.0 - balance) / (s - 1)] * (s - 1) if s > 1 else [1.0]
    try:
        sigma = switching_generator(kind, N, s, derive_seed(seed, "switching"), **sw)
    except ValueError as e:
        raise InputError(f"switching: {e}") from None

    nz = dict(_sec(cfg, "noise"))
    if "sparse_positions" in nz:
        nz["sparse_positions"] = [p - 1 for p in nz["sparse_positions"]]
        if any(p >= N for p in nz["sparse_positions"]):
            raise InputError("noise: sparse_positions beyond N")
    if noise_std is not None:
        nz["dense"] = "gaussian" if noise_std > 0 else "none"
        nz["dense_scale"] = float(noise_std)
    if k is not None:
        nz["sparse_count"] = int(k)
        nz.pop("sparse_positions", None)
        nz.setdefault("sparse_range", [1e3, 1e6])
    if nz.get("sparse_count", 0) > N:
        raise InputError(f"noise: {nz['sparse_count']} outliers exceed N={N}")
    try:
        noise = NoiseSpec.from_dict({**nz, "seed": derive_seed(seed, "noise")})
    except (TypeError, ValueError) as e:
        raise InputError(f"noise: {e}") from None

    dist = data_cfg.get("input_dist", "gaussian")
    if fmap.uses_lags:
        inputs = _draw_inputs(dist, (fmap.n_u, N + fmap.max_lag), derive_seed(seed, "inputs"))
    else:
        d = _input_dim(sys_cfg, fmap, n)
        inputs = _draw_inputs(dist, (d, N), derive_seed(seed, "inputs"))
    if fmap.output_dim(None if fmap.uses_lags else inputs.shape[0]) != n:
        raise InputError(f"feature map yields {fmap.output_dim(inputs.shape[0] if not fmap.uses_lags else None)} "
                         f"regressors, system.n is {n}")
    try:
        return simulate(A, sigma, inputs, fmap, noise)
    except SimulationDivergedError as e:
        raise InputError(f"simulation diverged at t={e.args[0] + 1 if e.args else '?'}") from None


def _mode_count(cfg: dict, data) -> int:
    s = _sec(cfg, "system").get("s")
    if s is not None:
        return int(s)
    if data.truth is not None:
        return int(np.atleast_2d(data.truth.A).shape[1])
    raise InputError("mode count unknown: set system.s in the config")


def _formats(cfg: dict) -> list:
    return _sec(cfg, "output").get("formats", ["json", "csv"])


def _read(path):
    try:
        return lio.read_dataset(path)
    except lio.DatasetParseError as e:
        raise InputError(str(e)) from None
    except ValueError as e:
        raise InputError(f"{path}: {e}") from None


def _json_file(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise InputError(f"{path} line {e.lineno}: {e.msg}") from None


def _metrics(data, s: int, cfg: dict, seed: int) -> MetricsReport:
    m = _sec(cfg, "metrics")
    en = m.get("enable", {})
    return compute_metrics(
        data, s,
        budget=int(m.get("budget", DEFAULT_BUDGET)),
        xi_samples=int(m.get("xi_samples", 200)) if en.get("xi_switched", True) else 1,
        seed=derive_seed(seed, "metrics"),
        restarts=int(m.get("restarts", 20)),
        m=m.get("m"),
        exact=en.get("gamma_exact"),
    )


def _bounds(data, A_hat, metrics: MetricsReport, cfg: dict):
    a = _sec(cfg, "analysis")
    budget = int(a.get("oracle_budget", 0)) if a.get("enable", {}).get("theorem1_oracle", False) else 0
    tie = float(_sec(cfg, "estimator").get("tie_tol", 1e-9))
    return bound_report(data, A_hat, metrics, tie_tol=tie, oracle_budget=budget,
                        r_grid=_sec(cfg, "metrics").get("r_grid"))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _out_dir(args, cfg) -> Path:
    d = args.out or _sec(cfg, "output").get("dir") or "."
    p = Path(d)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_simulate(args, cfg) -> int:
    chash, seed = provenance(cfg, "simulate")
    data = simulate_from_config(cfg, seed)
    out = _out_dir(args, cfg)
    lio.write_dataset(data, out / "dataset.csv", chash, seed)
    return EXIT_OK


def cmd_estimate(args, cfg) -> int:
    data = _read(args.dataset)
    s = _mode_count(cfg, data)
    chash, seed = provenance(cfg, "estimate", [args.dataset])
    ecfg = estimator_config(cfg, seed, args.threads)
    res = estimate(data, s, ecfg)
    out = _out_dir(args, cfg)
    body = {"provenance": {"config_hash": chash, "seed": seed}, "s": s, "mode": ecfg.mode,
            "results": {k: v.to_dict() for k, v in res.items()}}
    if data.truth is not None:
        A0 = np.atleast_2d(data.truth.A)
        if A0.shape[1] == s:
            for k, v in res.items():
                body["results"][k]["matched_error"] = matched_error(A0, v.A_hat)
    lio.write_text(out / "estimate.json", lio.dumps(body))
    heur = res.get("heuristic")
    if heur is not None and "csv" in _formats(cfg) and _sec(cfg, "output").get("trace", True):
        buf = io.StringIO()
        buf.write(lio.provenance_line(chash, seed))
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["restart", "iter", "cost"])
        for j, traj in enumerate(heur.restart_trajectories):
            for it, c in enumerate(traj):
                w.writerow([j + 1, it, repr(float(c))])
        lio.write_text(out / "trace.csv", buf.getvalue())
    if heur is not None and heur.solver_status == "iter_limit":
        return EXIT_ITER
    return EXIT_OK


def cmd_metrics(args, cfg) -> int:
    data = _read(args.dataset)
    s = _mode_count(cfg, data)
    chash, seed = provenance(cfg, "metrics", [args.dataset])
    rep = _metrics(data, s, cfg, seed)
    body = {"provenance": {"config_hash": chash, "seed": seed}, **rep.to_dict()}
    lio.write_text(_out_dir(args, cfg) / "metrics.json", lio.dumps(body))
    return EXIT_OK


def _pick_estimate(est: dict) -> np.ndarray:
    res = est.get("results", {})
    if not res:
        raise InputError("estimate file has no results")
    # the global optimum when available, otherwise the heuristic
    key = "oracle" if "oracle" in res else next(iter(res))
    return np.asarray(res[key]["A_hat"], dtype=float)


def cmd_bounds(args, cfg) -> int:
    data = _read(args.dataset)
    chash, seed = provenance(cfg, "bounds", [args.dataset, args.estimate, args.metrics])
    try:
        A_hat = _pick_estimate(_json_file(args.estimate))
        rep_m = MetricsReport.from_dict(_json_file(args.metrics))
    except (KeyError, TypeError) as e:
        raise InputError(f"malformed estimate or metrics file: missing {e}") from None
    if rep_m.N != data.N or rep_m.n != data.n or A_hat.shape[0] != data.n:
        raise InputError("estimate or metrics file does not match the dataset dimensions")
    rep = _bounds(data, A_hat, rep_m, cfg)
    out = _out_dir(args, cfg)
    body = {"provenance": {"config_hash": chash, "seed": seed}, **rep.to_dict()}
    lio.write_text(out / "bounds.json", lio.dumps(body))
    if "csv" in _formats(cfg):
        buf = io.StringIO()
        buf.write(lio.provenance_line(chash, seed))
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["condition", "holds", "margin"])
        for name, holds, margin in rep.condition_rows():
            w.writerow([name, str(bool(holds)).lower() if holds is not None else "",
                        "" if margin is None else (repr(float(margin)) if isinstance(margin, float) else margin)])
        lio.write_text(out / "conditions.csv", buf.getvalue())
    return EXIT_OK


EXPERIMENT_COLUMNS = [
    "row_type", "trial", "seed", "N", "noise_std", "k", "balance", "recovered", "matched_error",
    "cost", "solver_status", "nu_n", "r_star_lower", "bound_value", "bound_status",
    "exact_recovery_predicted", "comparability", "assignment_margin", "sigma_match", "recovery_rate", "trials",
]


def _cells(cfg: dict) -> list:
    sw = _sec(cfg, "experiment").get("sweep", {})
    axes = [sw.get(a, [None]) for a in ("N", "noise_std", "k", "balance")]
    return list(product(*axes))


def run_trial(cfg: dict, index: int, root: int, cell) -> dict:
    N, std, k, bal = cell
    seed = trial_seed(root, index)
    data = simulate_from_config(cfg, seed, N=N, noise_std=std, k=k, balance=bal)
    s = _mode_count(cfg, data)
    ecfg = estimator_config(cfg, seed)
    ecfg = EstimatorConfig(**{**ecfg.__dict__, "mode": "heuristic"})
    est = estimate(data, s, ecfg)["heuristic"]
    tol = float(_sec(cfg, "experiment").get("tol", 1e-6))
    err = matched_error(data.truth.A, est.A_hat)
    row = {"row_type": "trial", "trial": index, "seed": seed, "N": data.N,
           "noise_std": std, "k": int(data.truth.outliers.size), "balance": bal,
           "recovered": err <= tol, "matched_error": err, "cost": est.cost,
           "solver_status": est.solver_status}
    en = _sec(cfg, "analysis").get("enable", {})
    if en.get("metrics", True):
        rep_m = _metrics(data, s, cfg, seed)
        row.update(nu_n=rep_m.nu_n, r_star_lower=rep_m.r_star_lower)
        if en.get("bounds", True):
            b = _bounds(data, est.A_hat, rep_m, cfg)
            c = b.conditions
            row.update(bound_value=b.bound.value, bound_status=b.bound.status,
                       exact_recovery_predicted=c["exact_recovery_predicted"]["holds"],
                       comparability=c["comparability"]["holds"],
                       assignment_margin=c["assignment_margin"]["holds"], sigma_match=c["sigma_match"]["holds"])
    return row


def _cell_str(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def cmd_experiment(args, cfg) -> int:
    chash, root = provenance(cfg, "experiment")
    trials = int(_sec(cfg, "experiment").get("trials", 10))
    cells = _cells(cfg)
    jobs = [(ci * trials + j, cell) for ci, cell in enumerate(cells) for j in range(trials)]

    def work(job):
        return run_trial(cfg, job[0], root, job[1])

    if args.threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(args.threads) as pool:
            rows = list(pool.map(work, jobs))
    else:
        rows = [work(j) for j in jobs]

    summary = []
    for ci, cell in enumerate(cells):
        sub = rows[ci * trials:(ci + 1) * trials]
        if not sub:
            continue
        N, std, k, bal = cell
        summary.append({"row_type": "summary", "N": N, "noise_std": std, "k": k, "balance": bal,
                        "recovery_rate": sum(r["recovered"] for r in sub) / len(sub), "trials": len(sub)})
    # single writer, trial order
    buf = io.StringIO()
    buf.write(lio.provenance_line(chash, root))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EXPERIMENT_COLUMNS)
    for r in rows + summary:
        w.writerow([_cell_str(r.get(c)) for c in EXPERIMENT_COLUMNS])
    lio.write_text(_out_dir(args, cfg) / "experiment.csv", buf.getvalue())
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "metrics": cmd_metrics,
    "bounds": cmd_bounds,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lsmid", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario config (JSON)")
    common.add_argument("--out", help="output directory (default: config output.dir or cwd)")
    common.add_argument("--seed", type=int, help="root seed, overrides data.seed")
    common.add_argument("--mode", choices=["heuristic", "exact_bruteforce", "both"],
                        help="estimator mode, overrides estimator.mode")
    common.add_argument("--budget", type=int, help="combinatorial budget for enumerations")
    common.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="generate a dataset")
    for name, hlp in (("estimate", "fit a switched model"), ("metrics", "informativity metrics")):
        sp = sub.add_parser(name, parents=[common], help=hlp)
        sp.add_argument("dataset")
    sp = sub.add_parser("bounds", parents=[common], help="condition flags and error bounds")
    sp.add_argument("dataset")
    sp.add_argument("estimate")
    sp.add_argument("metrics")
    sub.add_parser("experiment", parents=[common], help="Monte Carlo sweep")
    return p


def _apply_overrides(cfg: dict, args) -> dict:
    cfg = copy.deepcopy(cfg)
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise InputError("--seed must be an unsigned 64-bit integer")
        cfg.setdefault("data", {})["seed"] = args.seed
    if args.mode is not None:
        cfg.setdefault("estimator", {})["mode"] = args.mode
    if args.budget is not None:
        cfg.setdefault("estimator", {})["budget"] = args.budget
        cfg.setdefault("metrics", {})["budget"] = args.budget
    validate_config(cfg)
    return cfg


def _fail(kind: str, msg: str, code: int) -> int:
    print(json.dumps({"error": {"type": kind, "message": msg, "exit_code": code}}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        return _fail("input_error", "--threads must be positive", EXIT_INPUT)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        return COMMANDS[args.command](args, cfg)
    except BudgetExceededError as e:
        return _fail("budget_exceeded", str(e), EXIT_BUDGET)
    except InputError as e:
        return _fail("input_error", str(e), EXIT_INPUT)
    except (ValueError, OSError) as e:
        return _fail("input_error", f"{type(e).__name__}: {e}", EXIT_INPUT)


if __name__ == "__main__":
    sys.exit(main())
