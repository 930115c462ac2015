"""Command-line runner: strict YAML configs, hashed outputs and plot data.

A config is a single versioned YAML document::

    schema_version: 1
    command: renewal          # optional when given on the command line
    model: {d: 1, lambda: 2.5, beta: 0.0, aperture: {p: 2, q: 1}}
    potential: {family: constant_zero}
    budgets: {M_max: 24, N_max: 24}
    experiment: {}            # command-specific knobs, see COMMANDS
    seed: 0

Unknown keys anywhere are errors.  Every output file name carries the first
12 hex digits of the config hash; JSON and CSV outputs embed the full hash
and the tool version.  Wall-clock times go to a ``.meta.json`` sidecar only,
so numeric outputs of a serial re-run are byte-identical.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .annealed import RenewalTable, diffusivity, renewal_tables, second_moment_gap, tilted_phi
from .effective_walks import StepLaw, bubble_statistics, intersection_vs_separation, sync_span_tail
from .environment import Environment, PotentialSpec, attractiveness_check
from .errors import BudgetExceeded, NonConvergence
from .lattice import ConeAperture, LatticePoint
from .pathsum import (ModelParams, enumerate_partition, enumerate_table, free_first_passage,
                      restricted_weights, slab_green)
from .quenched_limits import (diffusive_experiment, mean_one_experiment, positivity_probe,
                              quenched_renewal_residual, ratio_experiment, sinai_residual)
from .report import ExperimentReport, Timer, _plain, parallel_map, replica_seeds

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_NONCONVERGENCE = 0, 2, 3, 4
ENV_PREFIX = "POLYCONE_"

BUDGET_DEFAULTS = {
    "max_len": 12,
    "node_budget": 2_000_000_000,
    "box_halfwidth": None,
    "M_max": 12,
    "N_max": 24,
    "replicas": 20,
    "excess": None,
    "tol": 1e-12,
}

_TABLE = {"table": None, "method": "auto"}
COMMANDS = {
    "enumerate": {"N": 4, "kind": "D", "mode": "enumerate"},
    "quenched": {"mode": "partition", "N_list": [1, 2, 4], "H": 4, "rtol": 1e-10},
    "annealed": {"mode": "partition", "N_list": [1, 2, 4], "pairs": 10000, "path_len": 4},
    "renewal": {**_TABLE},
    "tilt": {**_TABLE, "z_grid": [0.0], "toy": None, "newton_tol": 1e-12},
    "diffusivity": {**_TABLE, "N_list": [8, 12, 16, 20, 24], "toy": None, "fd_step": 1e-3,
                    "richardson": False},
    "sinai": {"instances": 20, "height": 3},
    "ratio": {"N_list": [4, 8, 12, 16], "rtol": 1e-5},
    "diffusive": {**_TABLE, "N": 8, "probe_radius": 6, "rtol": 1e-8},
    "positivity": {**_TABLE, "box_sides": [1, 2, 4], "N_s": 2, "probe_radius": 4},
    "walks": {**_TABLE, "pairs": 100000, "ell_range": [2, 12], "B_list": [4, 8, 16, 32],
              "eta_grid": [0.0, 0.02, 0.05, 0.1], "eta_I": 0.0, "moment_replicas": 2000,
              "start_perp": None, "r_list": [], "horizon": 24, "bubbles": True},
}
_TOP = {"schema_version", "command", "model", "potential", "budgets", "experiment", "seed", "output"}
_MODEL = {"d", "lambda", "beta", "aperture"}


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------ configuration


def _check_keys(section: str, data, allowed):
    if not isinstance(data, dict):
        raise ConfigError(f"{section} must be a mapping")
    extra = sorted(set(data) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(extra)}")


def validate_config(raw: dict, command: str | None = None) -> dict:
    """Fill defaults and check a raw config; returns the canonical form."""
    _check_keys("config", raw, _TOP)
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}")
    cmd = raw.get("command", command)
    if command is not None and cmd != command:
        raise ConfigError(f"config is for {cmd!r}, not {command!r}")
    if cmd not in COMMANDS:
        raise ConfigError(f"unknown command {cmd!r}")
    model = raw.get("model")
    if model is None:
        raise ConfigError("model section is required")
    _check_keys("model", model, _MODEL)
    ap = model.get("aperture", {"p": 2, "q": 1})
    _check_keys("model.aperture", ap, {"p", "q"})
    try:
        params = ModelParams(int(model["d"]), float(model["lambda"]), float(model.get("beta", 0.0)),
                             ConeAperture(int(ap.get("p", 2)), int(ap.get("q", 1))))
        spec = PotentialSpec.from_dict(raw.get("potential", {"family": "constant_zero"}))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    budgets = dict(BUDGET_DEFAULTS)
    b = raw.get("budgets", {}) or {}
    _check_keys("budgets", b, BUDGET_DEFAULTS)
    budgets.update(b)
    for k, v in budgets.items():
        if v is not None and not v > 0:
            raise ConfigError(f"budget {k} must be positive")
    exp = dict(COMMANDS[cmd])
    e = raw.get("experiment", {}) or {}
    _check_keys(f"experiment ({cmd})", e, COMMANDS[cmd])
    exp.update(e)
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    return {
        "schema_version": SCHEMA_VERSION,
        "command": cmd,
        "model": {"d": params.d, "lambda": params.lam, "beta": params.beta,
                  "aperture": {"p": params.aperture.p, "q": params.aperture.q}},
        "potential": spec.to_dict(),
        "budgets": budgets,
        "experiment": exp,
        "seed": seed,
    }


def config_hash(cfg: dict) -> str:
    """sha256 of the canonical JSON form (sorted keys, no whitespace)."""
    text = json.dumps(_plain(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def load_config(path) -> dict:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is None:
        raise ConfigError("empty config")
    return data


# ------------------------------------------------------------ results


@dataclass
class ResultBundle:
    config_hash: str
    tool_version: str
    files: list = field(default_factory=list)
    reports: dict = field(default_factory=dict)
    wall_time: float = 0.0


def _params(cfg) -> ModelParams:
    m = cfg["model"]
    return ModelParams(m["d"], m["lambda"], m["beta"], ConeAperture(m["aperture"]["p"], m["aperture"]["q"]))


def _spec(cfg) -> PotentialSpec:
    return PotentialSpec.from_dict(cfg["potential"])


def _table(cfg, params, spec) -> RenewalTable:
    e, b = cfg["experiment"], cfg["budgets"]
    if e.get("toy") is not None:
        return _toy_table(e["toy"], b["N_max"])
    if e.get("table"):
        return RenewalTable.from_json(e["table"])
    return renewal_tables(params, spec, b["N_max"], b["M_max"], b["excess"], e.get("method", "auto"))


def _toy_table(toy: dict, N_max: int) -> RenewalTable:
    """Atoms (+-1, 1) with mass a each and (0, 2) with mass b, where 2a + b = 1."""
    a, b = float(toy["a"]), float(toy["b"])
    if abs(2 * a + b - 1.0) > 1e-12:
        raise ConfigError("toy table needs 2a + b = 1")
    return RenewalTable.from_atoms({LatticePoint((1,), 1): a, LatticePoint((-1,), 1): a,
                                    LatticePoint((0,), 2): b}, N_max)


def toy_phi(a: float, b: float, z: float) -> float:
    """Closed form of the toy tilt: e^{-phi} is the positive root of b w^2 + 2a cosh(z) w = 1."""
    c = a * math.cosh(z)
    w = (math.sqrt(c * c + b) - c) / b
    return -math.log(w)


def _run_enumerate(cfg, params, spec, threads):
    e, b = cfg["experiment"], cfg["budgets"]
    env = Environment(spec, cfg["seed"])
    w = restricted_weights(env, params, e["N"], e["kind"], b["max_len"], e["mode"], int(b["node_budget"]))
    rep = ExperimentReport("enumerate")
    rep.fitted["total"] = w.total()
    for x in sorted(w.by_endpoint):
        rep.rows.append({"perp": list(x.perp), "par": x.par, "weight": w.by_endpoint[x]})
    return [rep]


def _run_quenched(cfg, params, spec, threads):
    e, b = cfg["experiment"], cfg["budgets"]
    seed, budget = cfg["seed"], int(b["node_budget"])
    mode = e["mode"]
    if mode == "partition":
        env = Environment(spec, seed)
        rep = ExperimentReport("quenched")
        F = free_first_passage(params.d, params.lam)
        for N in e["N_list"]:
            g = slab_green(env, params, N, e["rtol"] * F ** N, halfwidth=b["box_halfwidth"])
            row = {"N": N, "value": g.value, "error_bound": g.error_bound}
            if b["max_len"] >= N:
                v, tail = enumerate_partition(env, params, N, b["max_len"], budget_nodes=budget)
                row.update({"enumerated": v, "enumeration_tail": tail})
            rep.rows.append(row)
            rep.per_N[N] = row
        return [rep]
    if mode == "collapse":
        if params.beta != 0:
            raise ConfigError("collapse mode needs beta = 0")
        env = Environment(spec, seed)
        F = free_first_passage(params.d, params.lam)
        rep = ExperimentReport("collapse")
        worst = 0.0
        for N in e["N_list"]:
            tol = e["rtol"] * F ** N
            g = slab_green(env, params, N, tol)
            k = b["max_len"] - N
            qv, tail = enumerate_partition(env, params, N, b["max_len"], budget_nodes=budget)
            av = enumerate_table("D", params, N, k, h_lo=N, annealed_spec=spec, budget_nodes=budget).total(N)
            allowed = g.error_bound + tail
            row = {"N": N, "dp": g.value, "dp_error_bound": g.error_bound, "quenched_enum": qv,
                   "annealed_enum": av, "enum_tail": tail, "closed_form": F ** N,
                   "gap_dp": abs(g.value - F ** N), "gap_enum": abs(qv - F ** N),
                   "gap_annealed": abs(av - F ** N), "allowed": allowed,
                   "ok": bool(abs(g.value - F ** N) <= g.error_bound + 1e-15 * F ** N
                              and abs(qv - F ** N) <= allowed and abs(av - F ** N) <= allowed
                              and qv == av)}
            worst = max(worst, row["gap_dp"] / F ** N)
            rep.rows.append(row)
            rep.per_N[N] = row
        rep.fitted["all_ok"] = all(r["ok"] for r in rep.rows)
        rep.fitted["worst_dp_relative_gap"] = worst
        return [rep]
    if mode == "renewal_residual":
        seeds = replica_seeds(seed, int(b["replicas"]))
        H, k = e["H"], b["excess"] if b["excess"] is not None else b["max_len"] - e["H"]

        def one(s):
            return quenched_renewal_residual(Environment(spec, s), params, H, k, budget)

        res = parallel_map(one, seeds, threads)
        rep = ExperimentReport("quenched_renewal", len(seeds), provenance={"base_seed": seed})
        for s, (a, r) in zip(seeds, res):
            rep.rows.append({"seed": s, "H": H, "excess": k, "abs_residual": a, "rel_residual": r})
        rep.fitted["max_abs_residual"] = max(a for a, _ in res)
        rep.fitted["max_rel_residual"] = max(r for _, r in res)
        return [rep]
    if mode == "mean_one":
        table = renewal_tables(params, spec, b["N_max"], b["M_max"], b["excess"], "enumerate")
        rep = mean_one_experiment(spec, params, table, e["N_list"], int(b["replicas"]), seed,
                                  b["excess"], threads)
        return [rep]
    raise ConfigError(f"unknown quenched mode {mode!r}")


def _run_annealed(cfg, params, spec, threads):
    e, b = cfg["experiment"], cfg["budgets"]
    if e["mode"] == "partition":
        rep = ExperimentReport("annealed")
        for N in e["N_list"]:
            k = b["max_len"] - N
            if k < 0:
                raise ConfigError("max_len must be at least every N")
            v = enumerate_table("D", params, N, k, h_lo=N, annealed_spec=spec,
                                budget_nodes=int(b["node_budget"])).total(N)
            tail = params.contraction ** (b["max_len"] + 1) / (1 - params.contraction)
            row = {"N": N, "annealed": v, "tail": tail}
            rep.rows.append(row)
            rep.per_N[N] = row
        return [rep]
    if e["mode"] == "attractiveness":
        res = attractiveness_check(spec, params.beta, params.d, int(e["pairs"]), cfg["seed"], int(e["path_len"]))
        rep = ExperimentReport("attractiveness", int(e["pairs"]), fitted=res)
        return [rep]
    raise ConfigError(f"unknown annealed mode {e['mode']!r}")


def _convergence_report(table: RenewalTable) -> ExperimentReport:
    rep = ExperimentReport("renewal")
    target = 1.0 / table.mu
    t = table.t_by_height
    err = np.abs(t - target)
    # fit where the error is above the rounding floor
    floor = 1e-12 * target
    N = np.arange(len(t))
    use = (N >= 1) & (err > floor)
    c = C = float("nan")
    if use.sum() >= 3:
        A = np.vstack([N[use], np.ones(use.sum())]).T
        coef, *_ = np.linalg.lstsq(A, np.log(err[use]), rcond=None)
        c = -float(coef[0])
        C = float(np.max(err[use] * np.exp(c * N[use])))
    for n in range(1, len(t)):
        env = C * math.exp(-c * n) if np.isfinite(C) else float("nan")
        rep.rows.append({"N": n, "t_N": float(t[n]), "error": float(err[n]), "envelope": env})
    f_oracle = free_first_passage(table.d, table.meta["lambda"]) if table.meta.get("lambda") else float("nan")
    rep.fitted.update({
        "xi": table.xi, "exp_minus_xi": math.exp(-table.xi), "mu": table.mu, "inv_mu": target,
        "decay_rate": c, "envelope_constant": C, "final_error": float(err[-1]),
        "final_relative_error": float(err[-1] / target), "renewal_residual": table.renewal_residual(),
        "tail_bound": table.tail_bound, "nu_fit": table.nu_fit, "method": table.method,
        "free_first_passage": f_oracle,
    })
    return rep


def _run_renewal(cfg, params, spec, threads):
    table = _table(cfg, params, spec)
    rep = _convergence_report(table)
    rep.extra["table"] = json.loads(table.to_json())
    return [rep]


def _run_tilt(cfg, params, spec, threads):
    e = cfg["experiment"]
    table = _table(cfg, params, spec)
    rep = ExperimentReport("tilt")
    worst = 0.0
    for z in e["z_grid"]:
        zz = np.atleast_1d(np.asarray(z, dtype=np.float64))
        r = tilted_phi(table, zz, tol=e["newton_tol"])
        row = {"z": zz.tolist(), "phi": r.phi, "newton_residual": r.newton_residual, "iterations": r.iterations}
        if e.get("toy") is not None:
            ref = toy_phi(float(e["toy"]["a"]), float(e["toy"]["b"]), float(zz[0]))
            row["closed_form"] = ref
            row["error"] = abs(r.phi - ref)
            worst = max(worst, row["error"])
        rep.rows.append(row)
    rep.fitted["max_error"] = worst
    rep.fitted["phi_at_zero"] = tilted_phi(table, np.zeros(table.d), tol=e["newton_tol"]).phi
    return [rep]


def _run_diffusivity(cfg, params, spec, threads):
    e = cfg["experiment"]
    table = _table(cfg, params, spec)
    est = diffusivity(table, e["fd_step"], e["richardson"])
    gaps = second_moment_gap(table, e["N_list"], est.sigma2)
    rep = ExperimentReport("diffusivity")
    Ns = sorted(gaps)
    for N in Ns:
        row = {"N": N, "gap": gaps[N], "N_times_gap": N * gaps[N]}
        rep.rows.append(row)
        rep.per_N[N] = row
    halving = {}
    for N in Ns:
        if 2 * N in gaps and gaps[N] != 0:
            halving[f"{N}->{2 * N}"] = gaps[2 * N] / gaps[N]
    A = [N * gaps[N] for N in Ns]
    rep.fitted.update({"sigma2": est.sigma2, "second_moment_sigma2": est.second_moment_sigma2,
                       "sigma_matrix": est.sigma_matrix, "A_values": A, "halving_ratios": halving,
                       "A_spread": (max(A) - min(A)) / max(abs(a) for a in A) if any(A) else 0.0})
    return [rep]


def _run_sinai(cfg, params, spec, threads):
    e, b = cfg["experiment"], cfg["budgets"]
    k = b["excess"] if b["excess"] is not None else 4
    table = renewal_tables(params, spec, b["N_max"], b["M_max"], k, "enumerate")
    seeds = replica_seeds(cfg["seed"], int(e["instances"]))
    rng = np.random.default_rng(cfg["seed"])
    targets = []
    for i in range(int(e["instances"])):
        h = 1 + i % int(e["height"])
        reach = (params.aperture.p * h - 1) // params.aperture.q
        perp = tuple(int(c) for c in rng.integers(-reach, reach + 1, size=params.d))
        targets.append(LatticePoint(perp, h))

    def one(arg):
        s, x = arg
        return sinai_residual(Environment(spec, s), params, table, x, k, int(b["node_budget"]))

    res = parallel_map(one, list(zip(seeds, targets)), threads)
    rep = ExperimentReport("sinai", len(seeds), provenance={"base_seed": cfg["seed"]})
    for s, x, r in zip(seeds, targets, res):
        rep.rows.append({"seed": s, "perp": list(x.perp), "par": x.par, **r})
    rep.fitted["max_residual_last"] = max(r["residual_last"] for r in res)
    rep.fitted["max_residual_first"] = max(r["residual_first"] for r in res)
    return [rep]


def _run_ratio(cfg, params, spec, threads):
    e, b = cfg["experiment"], cfg["budgets"]
    rep = ratio_experiment(spec, params, e["N_list"], int(b["replicas"]), cfg["seed"], e["rtol"], threads)
    Ns = sorted(rep.per_N)
    for lo, hi in zip(Ns, Ns[1:]):
        rep.fitted[f"variance_ratio_{hi}_{lo}"] = rep.per_N[hi]["variance"] / rep.per_N[lo]["variance"]
    return [rep]


def _run_diffusive(cfg, params, spec, threads):
    e, b = cfg["experiment"], cfg["budgets"]
    table = _table(cfg, params, spec)
    return [diffusive_experiment(spec, params, table, e["N"], int(b["replicas"]), cfg["seed"],
                                 probe_radius=e["probe_radius"], rtol=e["rtol"], threads=threads)]


def _run_positivity(cfg, params, spec, threads):
    e, b = cfg["experiment"], cfg["budgets"]
    table = _table(cfg, params, spec)
    return [positivity_probe(spec, params, table, e["box_sides"], int(b["replicas"]), cfg["seed"],
                             e["N_s"], b["excess"], e["probe_radius"], threads)]


def _run_walks(cfg, params, spec, threads):
    e = cfg["experiment"]
    table = _table(cfg, params, spec)
    law = StepLaw.from_table(table)
    seed = cfg["seed"]
    out = [sync_span_tail(law, int(e["pairs"]), seed, tuple(e["ell_range"]), threads)]
    if e["bubbles"] and e["B_list"]:
        out.append(bubble_statistics(law, params.aperture, int(e["pairs"]), seed + 1, e["B_list"], e["eta_grid"],
                                     e["start_perp"], e["eta_I"], int(e["moment_replicas"]), threads))
    if e["r_list"]:
        out.append(intersection_vs_separation(law, params.aperture, e["r_list"], int(e["moment_replicas"]),
                                              seed + 2, int(e["horizon"]), threads))
    return out


_RUNNERS = {
    "enumerate": _run_enumerate, "quenched": _run_quenched, "annealed": _run_annealed,
    "renewal": _run_renewal, "tilt": _run_tilt, "diffusivity": _run_diffusivity, "sinai": _run_sinai,
    "ratio": _run_ratio, "diffusive": _run_diffusive, "positivity": _run_positivity, "walks": _run_walks,
}

_PLOTS = {
    "ratio": ["ratio"],
    "positivity": ["variance"],
    "renewal": ["convergence"],
    "diffusive": ["histogram"],
    "sync_tail": ["tail"],
    "bubbles": ["bubbles"],
}


def run(cfg: dict, out_dir, threads: int = 1) -> ResultBundle:
    """Run a validated config and write its outputs under out_dir."""
    h = config_hash(cfg)
    params, spec = _params(cfg), _spec(cfg)
    with Timer() as clock:
        reports = _RUNNERS[cfg["command"]](cfg, params, spec, max(1, int(threads)))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = ResultBundle(h, __version__, wall_time=clock.elapsed)
    header = {"config_hash": h, "tool_version": __version__, "schema_version": SCHEMA_VERSION,
              "command": cfg["command"], "config": cfg}
    lines = [f"config_hash: {h}", f"tool_version: {__version__}", f"command: {cfg['command']}"]
    stem = f"{cfg['command']}-{h[:12]}"
    times = {}
    for rep in reports:
        base = out / f"{stem}-{rep.name}"
        rep.to_json(f"{base}.json", **header)
        rep.to_csv(f"{base}.csv", lines)
        bundle.files += [f"{base}.json", f"{base}.csv"]
        for kind in _PLOTS.get(rep.name, []):
            path = f"{base}-plot-{kind}.csv"
            emit_plotdata(rep, kind, path, lines)
            bundle.files.append(path)
        bundle.reports[rep.name] = rep
        times[rep.name] = rep.wall_time
    meta = out / f"{stem}.meta.json"
    with open(meta, "w") as fh:
        json.dump({"config_hash": h, "tool_version": __version__, "wall_time": clock.elapsed,
                   "report_wall_times": times, "threads": threads}, fh, indent=1, sort_keys=True)
        fh.write("\n")
    bundle.files.append(str(meta))
    return bundle


# ------------------------------------------------------------ plot data


def _plot_rows(report: ExperimentReport, kind: str):
    if kind == "ratio":
        for N in sorted(report.per_N):
            st = report.per_N[N]
            yield N, st["mean"], st["ci_lo"], st["ci_hi"]
    elif kind == "variance":
        for n in sorted(report.per_N):
            st = report.per_N[n]
            # normal-theory 95% interval of a sample variance
            m = max(st["n"] - 1, 1)
            half = 1.96 * st["variance"] * math.sqrt(2.0 / m)
            yield n, st["variance"], st["variance"] - half, st["variance"] + half
    elif kind == "convergence":
        inv_mu = report.fitted.get("inv_mu")
        for r in report.rows:
            env = r["envelope"]
            yield r["N"], r["t_N"], inv_mu - env, inv_mu + env
    elif kind == "histogram":
        hist = report.extra.get("histogram")
        if hist:
            for x, y, g in zip(hist["offset"], hist["mean"], hist["gaussian"]):
                yield x, y, g, g
    elif kind == "tail":
        for r in report.rows:
            yield r["ell"], r["tail"], r["ci_lo"], r["ci_hi"]
    elif kind == "bubbles":
        for r in report.rows:
            yield r["B"], r["scaled"], r["ci_lo"], r["ci_hi"]
    else:
        raise ValueError(f"unknown plot kind {kind!r}")


def emit_plotdata(report: ExperimentReport, kind: str, path, header_lines=()) -> str:
    """Write a plot-ready CSV with columns x, y, ci_lo, ci_hi.

    For the histogram kind the interval columns both hold the discretised
    Gaussian mass on the same unit-width bins, for overlays.
    """
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        wr = csv.writer(fh)
        wr.writerow(["x", "y", "ci_lo", "ci_hi"])
        for row in _plot_rows(report, kind):
            wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return str(path)


# ------------------------------------------------------------ CLI


def _env_default(name, cast=str):
    v = os.environ.get(ENV_PREFIX + name)
    return cast(v) if v not in (None, "") else None


def _truthy(v) -> bool:
    return str(v).lower() in ("1", "true", "yes", "on")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="polycone", description="Stretched-polymer experiments.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="YAML config (env POLYCONE_CONFIG)")
    ap.add_argument("--out", help="output directory (env POLYCONE_OUT)")
    ap.add_argument("--seed", type=int, help="override the base seed (env POLYCONE_SEED)")
    ap.add_argument("--serial", action="store_true", help="one thread (env POLYCONE_SERIAL)")
    ap.add_argument("--threads", type=int, help="worker threads (env POLYCONE_THREADS)")
    ap.add_argument("--budget-nodes", type=int, help="enumeration node budget (env POLYCONE_BUDGET_NODES)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = args.config or _env_default("CONFIG")
    out = args.out or _env_default("OUT")
    seed = args.seed if args.seed is not None else _env_default("SEED", int)
    serial = args.serial or _truthy(os.environ.get(ENV_PREFIX + "SERIAL", ""))
    threads = args.threads if args.threads is not None else _env_default("THREADS", int)
    budget = args.budget_nodes if args.budget_nodes is not None else _env_default("BUDGET_NODES", int)
    threads = 1 if serial or not threads else threads
    try:
        raw = load_config(config) if config else {"schema_version": SCHEMA_VERSION,
                                                  "model": {"d": 1, "lambda": 2.5}}
        raw = copy.deepcopy(raw)
        if seed is not None:
            raw["seed"] = seed
        if budget is not None:
            raw.setdefault("budgets", {})["node_budget"] = budget
        out = out or raw.get("output") or "results"
        cfg = validate_config(raw, args.command)
    except (ConfigError, OSError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        bundle = run(cfg, out, threads)
    except BudgetExceeded as exc:
        print(f"budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except NonConvergence as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for f in bundle.files:
        print(f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
