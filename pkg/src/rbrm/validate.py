"""Invariant checks run by ``rbrm validate`` on a compiled scenario."""

from __future__ import annotations

import numpy as np

from . import numerics
from .roadmap import rbrm_search
from .simulate import EXACT_GUARD, ROUNDOFF_TOL, exact_expectation_small, path_problem, run_monte_carlo


def _edges_sample(r, k=50):
    edges = sorted(r.transfers)
    step = max(1, len(edges) // k)
    return [r.transfers[e] for e in edges[::step]]


def validate_scenario(sc, models, r, seed: int = 0, trials: int = 50) -> list[tuple[str, bool, str]]:
    out = []
    transfers = list(r.transfers.values())

    worst = min((float(numerics.batch_eig_extremes(s.infos)[0].min()) for t in transfers for s in t.steps if s.m), default=0.0)
    out.append(("information PSD", worst >= -numerics.NEG_CLAMP, f"smallest information eigenvalue {worst:.3g}"))

    dev = max((float(np.max(np.abs(s.a * s.d - s.b * s.c - s.a))) for t in transfers for s in t.steps), default=0.0)
    out.append(("concavity precondition a*d - b*c = a", dev <= 1e-9, f"max deviation {dev:.3g}"))

    ells = np.linspace(0.0, 4.0 * models.P0.diagonal().max() + 1e-3, 9)
    mono = True
    order = True
    for t in _edges_sample(r):
        vals = {v: np.array([t.apply(e, v) for e in ells]) for v in ("stochastic", "simplified", "uniform")}
        mono &= all(np.all(np.diff(x) >= -1e-15) for x in vals.values())
        order &= bool(np.all(vals["stochastic"] <= vals["simplified"] * (1 + 1e-12)))
        order &= bool(np.all(vals["stochastic"] <= vals["uniform"] * (1 + 1e-12)))
    out.append(("transfer monotonicity", mono, f"{len(_edges_sample(r))} edges x {len(ells)} inputs"))
    out.append(("variant ordering", order, "stochastic <= simplified, uniform"))

    ell0 = numerics.eig_extremes(models.P0).lambda_max
    path, _ = rbrm_search(r, ell0, sc.planner.variant)
    problem = path_problem(r, path, models.sensors, models.model, models.P0)
    T, used = 0, 0
    while T < problem.T and used + problem.steps[T].m <= EXACT_GUARD and T < 16:
        used += problem.steps[T].m
        T += 1
    exact = exact_expectation_small(problem, T)
    bound = problem.bound_trace("stochastic")[: T + 1]
    excess = float(np.max(exact - bound))
    out.append(("exact expectation <= bound", excess <= ROUNDOFF_TOL, f"first {T} steps, max excess {excess:.3g}"))

    mc = run_monte_carlo(problem, trials, seed)
    bad = mc.dominance_violations()
    out.append((
        "Monte Carlo dominance (3 stderr)", len(bad) == 0 and not mc.failures,
        f"{trials} trials, {len(bad)} violating steps, {len(mc.failures)} failures",
    ))
    return out
