"""Named scenario runners: the worked examples as reproducible pipelines.

Each runner returns a list of stage records plus the files it wrote; plot
output is data-only CSV for external tooling.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import expansion, fragmentation, mixing
from .cfs import (CfsChart, CfsParams, spin_map_from_point, swap_symmetric_pair,
                  system_to_json)
from .el import residual_norm
from .jets import Jet, TestBasis
from .lagrangian import build_lagrangian
from .measure import DiscreteMeasure


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path: Path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def regularized_two_point_base():
    """Exact symmetric critical pair of the regularized polynomial model.

    The stationarity conditions reduce to t (1 + 3 t^2 / 8) = 1/sqrt(3) with
    h^2 = 2 t^2 + 3 t^4 / 4.
    """
    from scipy.optimize import brentq

    t = brentq(lambda s: s * (1 + 0.375 * s * s) - 1.0 / math.sqrt(3.0),
               0.1, 1.0, xtol=1e-15, rtol=8.9e-16)
    h = math.sqrt(2 * t * t + 0.75 * t ** 4)
    return DiscreteMeasure(np.array([[t, h], [-t, h]]), np.ones(2))


def quartic_two_point_base():
    """Exact critical pair of the quartic model at well scale 4: t = 2 sqrt 2."""
    t = 2.0 * math.sqrt(2.0)
    return DiscreteMeasure(np.array([[t], [-t]]), np.ones(2))


def run_example52_fragmentation(config, rng, outdir: Path):
    lam = float(config.get("lambda", 0.1))
    scen = fragmentation.example52_scenario()
    frag = fragmentation.fragment_measure(scen.measure, scen.ansatz, lam)
    mu = frag.as_measure()

    # profile of ell along the x1 axis at height lambda (the plotted slice)
    from .el import ell

    xs = np.linspace(-3 * lam, 3 * lam, 121)
    rows = [(float(x), float(ell(mu, scen.lagrangian, scen.nu, np.array([x, lam]))))
            for x in xs]
    profile = outdir / "ell_profile.csv"
    _write_csv(profile, ["x1", "ell"], rows)

    directions = [fragmentation.MultiJet([Jet(np.array([1.0]), np.zeros((1, 2))),
                                          Jet(np.array([-1.0]), np.zeros((1, 2)))]),
                  fragmentation.MultiJet([Jet(np.zeros(1), np.array([[1.0, 0.0]])),
                                          Jet(np.zeros(1), np.array([[-1.0, 0.0]]))])]
    M = fragmentation.perturbed_laplacian_linF(scen.measure, scen.lagrangian,
                                               scen.ansatz, lam,
                                               directions=directions)
    report = fragmentation.wellposedness_check(scen)
    wp_file = outdir / "wellposedness.json"
    _write_json(wp_file, report.to_json())
    support = outdir / "fragmented_support.csv"
    _write_csv(support, ["subsystem", "x1", "x2", "weight", "lambda"],
               [(r["subsystem"], r["point"][0], r["point"][1], r["weight"], lam)
                for r in frag.support_table(lam)])

    stage = {
        "name": "example52-fragmentation",
        "status": "ok",
        "data": {
            "lambda": lam,
            "lin_f_form": [[float(v) for v in row] for row in M],
            "computed_diag": [float(M[0, 0]), float(M[1, 1])],
            "expected_diag_direct": [2 * lam ** 4, 16 * lam ** 2],
            "reference_display_diag": [2 * lam ** 4, 24 * lam ** 2],
            "matches_reference_display": bool(abs(M[1, 1] - 24 * lam ** 2)
                                              <= 1e-8 * 24 * lam ** 2),
            "r_estimate": report.r_estimate,
            "verdict": report.verdict,
        },
    }
    return [stage], [profile, wp_file, support]


def _expansion_stage(name, base, lagrangian, nu, deviation, orders, lam_grid, outdir):
    rows = []
    slopes = {}
    for order in orders:
        slope, table = expansion.order_scaling_slope(base, lagrangian, nu,
                                                     deviation, order, lam_grid)
        slopes[str(order)] = slope
        rows.extend((lam, res, order) for lam, res in table)
    res_file = outdir / f"{name}_residuals.csv"
    _write_csv(res_file, ["lambda", "residual", "order"], rows)
    stage = {
        "name": name,
        "status": "ok",
        "data": {"slopes": slopes,
                 "min_expected": {str(o): o + 1 - expansion.SLOPE_BAND for o in orders}},
    }
    return stage, [res_file]


def run_example52_expansion(config, rng, outdir: Path):
    base = regularized_two_point_base()
    lag = build_lagrangian("example52_regularized")
    from .el import ell_on_support

    nu = 2.0 * float(np.mean(ell_on_support(base, lag, 0.0)))
    deviation = Jet(np.array([0.1, -0.2]),
                    np.array([[0.2, -0.15], [0.05, 0.1]]))
    orders = config.get("orders", [1, 2])
    grid = np.asarray(config.get("lambda_grid", list(np.geomspace(0.01, 0.1, 5))))
    stage, files = _expansion_stage("example52-expansion", base, lag, nu,
                                    deviation, orders, grid, outdir)
    return [stage], files


def run_quartic_expansion(config, rng, outdir: Path):
    base = quartic_two_point_base()
    lag = build_lagrangian("quartic_pair")
    from .el import ell_on_support

    nu = 2.0 * float(np.mean(ell_on_support(base, lag, 0.0)))
    deviation = Jet(np.array([0.21, -0.13]), np.array([[0.31], [-0.12]]))
    orders = config.get("orders", [1, 2])
    grid = np.asarray(config.get("lambda_grid", list(np.geomspace(0.01, 0.1, 5))))
    stage, files = _expansion_stage("quartic-pair-expansion", base, lag, nu,
                                    deviation, orders, grid, outdir)
    return [stage], files


def _run_mixing(L, config, rng, outdir: Path):
    restarts = int(config.get("restarts", 50))
    seed = int(config.get("seed", 0))
    val, U, trace = mixing.minimize_mixing(L, restarts=restarts, seed=seed)
    out_file = outdir / f"mixing_L{L}.json"
    _write_json(out_file, mixing.results_to_json(L, val, U, restarts, trace))
    stage = {
        "name": f"mixing-L{L}",
        "status": "ok",
        "data": {"L": L, "min_value": val, "gap_to_infimum": val - L,
                 "restarts": restarts},
    }
    return [stage], [out_file]


def run_mixing_l2(config, rng, outdir: Path):
    return _run_mixing(2, config, rng, outdir)


def run_mixing_l3(config, rng, outdir: Path):
    return _run_mixing(3, config, rng, outdir)


def run_cfs_two_point(config, rng, outdir: Path):
    params = CfsParams(2, 1, float(config.get("trace_constant", 1.0)),
                       float(config.get("kappa", 0.1)))
    x1, x2 = swap_symmetric_pair(params, b=float(config.get("b", 0.25)))
    H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2.0)
    chart = CfsChart(params, spin_map_from_point(H @ x1 @ H, 1))
    lag = build_lagrangian("cfs", {"hilbert_dim": 2, "spin_dim": 1,
                                   "trace_constant": params.trace_constant,
                                   "kappa": params.kappa, "chart": chart})
    z1 = chart.coords(x1)
    z2 = chart.coords(x2)
    mu = DiscreteMeasure(np.vstack([z1, z2]), np.ones(2))
    from .el import calibrate_nu

    nu = calibrate_nu(mu, lag, tol=1e-8)
    scalar_res = residual_norm(mu, lag, nu,
                               TestBasis([Jet(np.ones(2), np.zeros((2, 3)))]))
    sys_file = outdir / "cfs_system.json"
    _write_json(sys_file, system_to_json(params, [x1, x2], [1.0, 1.0]))
    stage = {
        "name": "cfs-two-point",
        "status": "ok",
        "data": {"nu": nu, "chart_condition": chart.condition,
                 "scalar_residual": scalar_res},
    }
    return [stage], [sys_file]


REGISTRY = {
    "cfs-two-point": ("two unitarily equivalent operators, charted and calibrated",
                      run_cfs_two_point),
    "example52-expansion": ("order-scaling study on the regularized polynomial model",
                            run_example52_expansion),
    "example52-fragmentation": ("fragmented two-point profile, neutral-space form, "
                                "well-posedness fit", run_example52_fragmentation),
    "mixing-L2": ("mixing functional minimization over U(2)", run_mixing_l2),
    "mixing-L3": ("mixing functional minimization over U(3)", run_mixing_l3),
    "quartic-pair-expansion": ("order-scaling study on the quartic pair model",
                               run_quartic_expansion),
}


def list_scenarios() -> list:
    return [(name, REGISTRY[name][0]) for name in sorted(REGISTRY)]


def run_scenario(name: str, config, rng, outdir: Path):
    if name not in REGISTRY:
        from .errors import ConfigError

        raise ConfigError(f"unknown scenario {name!r}; have {sorted(REGISTRY)}")
    return REGISTRY[name][1](config, rng, outdir)
