"""Acceptance suite: one test per criterion, each driven through the CLI runner.

Every criterion's config is run once into a session directory; the
determinism check re-runs all of them serially and compares bytes.  A
summary line per criterion is printed at the end of the session.
"""
import math
import time
from pathlib import Path

import pytest

from conftest import ACCEPTANCE
from polycone.harness import run, validate_config

pytestmark = pytest.mark.slow

LAM0_3 = math.log(8)
WEAK = {"family": "two_point", "v": 1.0, "rho": 0.2, "p": 0.0}


def model(d, lam, beta=0.0):
    return {"d": d, "lambda": lam, "beta": beta, "aperture": {"p": 2, "q": 1}}


def cfg(command, mdl, potential=None, budgets=None, experiment=None, seed=0):
    return {"schema_version": 1, "command": command, "model": mdl,
            "potential": potential or {"family": "constant_zero"}, "budgets": budgets or {},
            "experiment": experiment or {}, "seed": seed}


CONFIGS = {
    "renewal_identity": cfg("quenched", model(1, 2.5, 1.0), {"family": "two_point", "v": 1.0, "rho": 0.3, "p": 0.05},
                            {"replicas": 20, "excess": 6}, {"mode": "renewal_residual", "H": 4}, 1),
    "sinai": cfg("sinai", model(1, 2.5, 1.0), {"family": "bernoulli_trap", "p": 0.05},
                 {"M_max": 3, "N_max": 8, "excess": 4}, {"instances": 20, "height": 3}, 2),
    "collapse_1d": cfg("quenched", model(1, 2.5), None, {"max_len": 14},
                       {"mode": "collapse", "N_list": list(range(1, 9)), "rtol": 1e-12}),
    "collapse_2d": cfg("quenched", model(2, 3.0), None, {"max_len": 11},
                       {"mode": "collapse", "N_list": list(range(1, 9)), "rtol": 1e-12}),
    "renewal_limit": cfg("renewal", model(1, 4.0, 0.05), WEAK, {"M_max": 12, "excess": 8, "N_max": 40},
                         {"method": "enumerate"}),
    "diffusivity_toy": cfg("diffusivity", model(1, 2.5), None, {"N_max": 24},
                           {"toy": {"a": 0.3, "b": 0.4}, "N_list": [8, 12, 16, 20, 24], "richardson": True}),
    "diffusivity_enum": cfg("diffusivity", model(1, 4.0, 0.05), WEAK, {"M_max": 12, "excess": 8, "N_max": 24},
                            {"method": "enumerate", "N_list": [8, 12, 16, 20, 24], "richardson": True}),
    "tilt": cfg("tilt", model(1, 2.5), None, {},
                {"toy": {"a": 0.3, "b": 0.4}, "z_grid": [-1.0, -0.25, 0.0, 0.5, 1.5]}),
    "mean_one": cfg("quenched", model(1, 2.5, 0.5), WEAK, {"replicas": 2000, "M_max": 6, "N_max": 8, "excess": 2},
                    {"mode": "mean_one", "N_list": [2, 4, 6]}, 7),
    "ratio": cfg("ratio", model(3, LAM0_3 + 0.5, 0.05), WEAK, {"replicas": 500},
                 {"N_list": [4, 8, 12, 16], "rtol": 1e-5}, 8),
    "sync_tail": cfg("walks", model(1, 2.0), None, {"M_max": 16},
                     {"method": "exact", "pairs": 100000, "ell_range": [2, 12], "bubbles": False}, 9),
    "bubbles": cfg("walks", model(3, LAM0_3 + 0.5, 0.05), WEAK, {"M_max": 8, "excess": 5},
                   {"method": "enumerate", "pairs": 100000, "B_list": [4, 8, 16, 32], "moment_replicas": 2000}, 10),
    "attractiveness": cfg("annealed", model(1, 2.5, 0.05), WEAK, {},
                          {"mode": "attractiveness", "pairs": 10000, "path_len": 4}, 11),
}

_RUNS = {}


@pytest.fixture(scope="session")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def result(name, workdir):
    """Run a config once per session (serially) and return (bundle, seconds)."""
    if name not in _RUNS:
        t = time.perf_counter()
        bundle = run(validate_config(CONFIGS[name]), workdir / "first" / name, threads=1)
        _RUNS[name] = (bundle, time.perf_counter() - t)
    return _RUNS[name]


def record(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


def test_criterion_01_quenched_renewal(workdir):
    b, secs = result("renewal_identity", workdir)
    rep = b.reports["quenched_renewal"]
    worst = rep.fitted["max_abs_residual"]
    ok = len(rep.rows) == 20 and worst <= 1e-10 and secs < 60
    record(1, ok, f"max residual {worst:.2e} over {len(rep.rows)} seeds, N <= 4 ({secs:.1f}s)")


def test_criterion_02_sinai(workdir):
    b, secs = result("sinai", workdir)
    rep = b.reports["sinai"]
    last, first = rep.fitted["max_residual_last"], rep.fitted["max_residual_first"]
    moved = sum(abs(r["lhs"] - r["annealed"]) > 1e-6 for r in rep.rows)
    ok = len(rep.rows) == 20 and max(last, first) <= 1e-10 and secs < 120
    record(2, ok, f"residuals {last:.2e} / {first:.2e} on {len(rep.rows)} instances, "
                  f"{moved} with quenched != annealed ({secs:.1f}s)")


def test_criterion_03_collapse(workdir):
    parts, secs = [], 0.0
    for name in ("collapse_1d", "collapse_2d"):
        b, s = result(name, workdir)
        secs += s
        parts.append(b.reports["collapse"])
    ok = all(r.fitted["all_ok"] for r in parts) and all(len(r.rows) == 8 for r in parts) and secs < 60
    worst = max(r.fitted["worst_dp_relative_gap"] for r in parts)
    record(3, ok, f"DP, enumerations and F^N agree for N <= 8, d = 1, 2; worst DP gap {worst:.1e} relative "
                  f"({secs:.1f}s)")


def test_criterion_04_renewal_limit(workdir):
    b, secs = result("renewal_limit", workdir)
    f = b.reports["renewal"].fitted
    rows = b.reports["renewal"].rows
    # below the rounding floor the error is noise; the envelope is checked above it
    floor = 1e-12 * f["inv_mu"]
    inside = all(r["error"] <= r["envelope"] * (1 + 1e-12) + floor for r in rows)
    ok = f["decay_rate"] > 0 and f["final_relative_error"] < 1e-4 and inside and secs < 300
    record(4, ok, f"c = {f['decay_rate']:.3f}, C = {f['envelope_constant']:.3g}, final error "
                  f"{f['final_relative_error']:.1e} x (1/mu) ({secs:.1f}s)")


def test_criterion_05_diffusivity(workdir):
    details, ok, secs = [], True, 0.0
    for name in ("diffusivity_toy", "diffusivity_enum"):
        b, s = result(name, workdir)
        secs += s
        f = b.reports["diffusivity"].fitted
        ratios = f["halving_ratios"]
        ok &= bool(ratios) and all(0.35 <= r <= 0.65 for r in ratios.values())
        details.append(f"{name.split('_')[1]}: " + ", ".join(f"{k} {v:.3f}" for k, v in ratios.items()))
    ok &= secs < 300
    record(5, ok, "gap ratios under doubling " + "; ".join(details) + f" ({secs:.1f}s)")


def test_criterion_06_tilt(workdir):
    b, secs = result("tilt", workdir)
    f = b.reports["tilt"].fitted
    rows = b.reports["tilt"].rows
    ok = abs(f["phi_at_zero"]) <= 1e-12 and f["max_error"] <= 1e-10 and len(rows) == 5 and secs < 1
    record(6, ok, f"phi(0) = {f['phi_at_zero']:.1e}, max closed-form error {f['max_error']:.1e} on 5 points "
                  f"({secs:.2f}s)")


def test_criterion_07_mean_one(workdir):
    b, secs = result("mean_one", workdir)
    per = b.reports["mean_one"].per_N
    zs = {N: st["z"] for N, st in per.items()}
    ok = set(zs) == {2, 4, 6} and all(abs(z) <= 4 for z in zs.values()) and secs < 600
    record(7, ok, "z-scores " + ", ".join(f"N={N}: {z:+.2f}" for N, z in sorted(zs.items()))
                  + f" over 2000 replicas ({secs:.1f}s)")


def test_criterion_08_ratio_plateau(workdir):
    b, secs = result("ratio", workdir)
    per = b.reports["ratio"].per_N
    v8, v16 = per[8]["variance"], per[16]["variance"]
    ok = v16 <= 1.5 * v8 and secs < 1800
    record(8, ok, f"Var at N=16 / N=8 = {v16 / v8:.3f} (variances {v8:.3e}, {v16:.3e}) ({secs:.0f}s)")


def test_criterion_09_sync_tail(workdir):
    b, secs = result("sync_tail", workdir)
    f = b.reports["sync_tail"].fitted
    ok = f["kappa"] > 0 and f["r2"] > 0.98 and secs < 120
    record(9, ok, f"kappa = {f['kappa']:.4f}, R^2 = {f['r2']:.5f} over ell in [2, 12] ({secs:.1f}s)")


def test_criterion_10_transience(workdir):
    b, secs = result("bubbles", workdir)
    rep = b.reports["bubbles"]
    f = rep.fitted
    scaled = ", ".join(f"{B}: {rep.per_N[B]['scaled']:.3g}" for B in sorted(rep.per_N))
    ok = not f["increasing_trend"] and secs < 600
    record(10, ok, f"I(B) B^(3/2) = {scaled}; slope {f['trend_slope']:.3g} +- {f['trend_se']:.2g} ({secs:.0f}s)")


def test_criterion_11_attractiveness(workdir):
    b, secs = result("attractiveness", workdir)
    f = b.reports["attractiveness"].fitted
    ok = (f["pairs"] == 10000 and f["violations"] == 0 and f["not_strict"] == 0
          and f["strict_expected"] and secs < 60)
    record(11, ok, f"{f['violations']} violations, {f['not_strict']} non-strict among {f['shared']} "
                   f"pairs sharing a site ({secs:.1f}s)")


def _files(bundle):
    return {Path(p).name: Path(p).read_bytes() for p in bundle.files if not p.endswith(".meta.json")}


def test_criterion_12_determinism(workdir):
    differing = []
    for name, raw in CONFIGS.items():
        first, _ = result(name, workdir)
        again = run(validate_config(raw), workdir / "second" / name, threads=1)
        if _files(first) != _files(again) or not _files(first):
            differing.append(name)
    ok = not differing
    record(12, ok, f"{len(CONFIGS)} configs re-run serially; differing: {differing or 'none'}")
