"""Deterministic grid search for rate-maximising source parameters.

A coarse grid (log-spaced in mu, linear in the rest) is followed by
coordinate refinement passes, each halving the search span around the
incumbent.  Ties go to the earliest evaluation, so a fixed problem always
yields the same trace.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelParams, expected_counts
from .core import ProtocolParams, SecurityParams
from .finite_key import AnalysisSettings, analyze, keyrate_bps

VARIABLES = ("mu", "p_0", "p_alpha_alpha", "z_split")
DEFAULT_BOUNDS = {"mu": (1e-5, 1.0), "p_0": (0.01, 0.3), "p_alpha_alpha": (0.01, 0.3),
                  "z_split": (0.1, 0.9)}
COARSE_POINTS = {"mu": 9, "p_0": 4, "p_alpha_alpha": 4, "z_split": 5}


@dataclass(frozen=True)
class OptimizationProblem:
    channel: ChannelParams
    N: float
    bounds: dict = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    security: SecurityParams = field(default_factory=SecurityParams)
    analysis: AnalysisSettings = field(default_factory=AnalysisSettings)
    repetition_hz: float = 5e8
    include: tuple = ()  # extra points (dicts) evaluated before the grid

    def __post_init__(self):
        if self.N <= 0:
            raise ValueError("N must be positive")
        for v in VARIABLES:
            lo, hi = self.bounds[v]
            dlo, dhi = DEFAULT_BOUNDS[v]
            if not (dlo <= lo <= hi <= dhi):
                raise ValueError(f"bounds for {v} must satisfy {dlo} <= lo <= hi <= {dhi}")
        if self.bounds["p_0"][0] + self.bounds["p_alpha_alpha"][0] >= 1:
            raise ValueError("infeasible probability bounds")

    def to_dict(self) -> dict:
        return {"channel": self.channel.to_dict(), "N": self.N,
                "bounds": {k: list(v) for k, v in self.bounds.items()},
                "security": self.security.to_dict(), "analysis": self.analysis.to_dict(),
                "repetition_hz": self.repetition_hz, "include": [dict(p) for p in self.include]}


@dataclass
class OptimizationResult:
    params: ProtocolParams | None
    rate_bps: float
    trace: list

    def to_dict(self) -> dict:
        return {"params": self.params.to_dict() if self.params else None,
                "rate_bps": self.rate_bps, "evaluations": len(self.trace)}

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "stage", *VARIABLES, "rate_bps"])
        for row in self.trace:
            w.writerow([row["index"], row["stage"], *(repr(row[v]) for v in VARIABLES), repr(row["rate_bps"])])
        return buf.getvalue()


def evaluate(problem: OptimizationProblem, point: dict) -> float:
    """Key rate at ``point``; infeasible or failing points score 0."""
    p_z = 1.0 - point["p_0"] - point["p_alpha_alpha"]
    if p_z <= 0:
        return 0.0
    try:
        proto = ProtocolParams(mu=point["mu"], p_z=p_z, p_0=point["p_0"],
                               p_alpha_alpha=point["p_alpha_alpha"], z_split=point["z_split"],
                               repetition_hz=problem.repetition_hz)
        counts = expected_counts(problem.channel, proto, problem.N)
        settings = AnalysisSettings(**{**problem.analysis.to_dict(), "p_z": p_z})
        rep = analyze(counts, problem.security, settings)
    except (ValueError, ZeroDivisionError):
        return 0.0
    return keyrate_bps(rep, problem.N, problem.repetition_hz)


def _axis(var: str, lo: float, hi: float, n: int) -> list[float]:
    if lo == hi or n == 1:
        return [lo]
    if var == "mu":
        return [float(x) for x in np.geomspace(lo, hi, n)]
    return [float(x) for x in np.linspace(lo, hi, n)]


def optimize(problem: OptimizationProblem, budget: int = 5000, seed: int = 0,
             passes: int = 2, refine_points: int = 7) -> OptimizationResult:
    """Grid search then coordinate refinement; ``seed`` is recorded only (the search is deterministic)."""
    trace: list[dict] = []
    best = {"rate": -1.0, "point": None}

    def visit(point: dict, stage: str):
        if len(trace) >= budget:
            return
        rate = evaluate(problem, point)
        trace.append({"index": len(trace), "stage": stage, **point, "rate_bps": rate})
        if rate > best["rate"]:  # strict: ties keep the earlier point
            best["rate"], best["point"] = rate, dict(point)

    for p in problem.include:
        visit({v: float(p[v]) for v in VARIABLES}, "include")
    axes = [_axis(v, *problem.bounds[v], COARSE_POINTS[v]) for v in VARIABLES]
    for combo in itertools.product(*axes):
        visit(dict(zip(VARIABLES, combo)), "coarse")

    spans = {}
    for v, ax in zip(VARIABLES, axes):
        lo, hi = problem.bounds[v]
        if v == "mu":
            spans[v] = (math.log(hi) - math.log(lo)) / max(len(ax) - 1, 1)
        else:
            spans[v] = (hi - lo) / max(len(ax) - 1, 1)
    for k in range(passes):
        for v in VARIABLES:
            lo, hi = problem.bounds[v]
            if lo == hi or best["point"] is None:
                continue
            c = best["point"][v]
            half = spans[v] / (2 ** k)
            if v == "mu":
                a, b = max(math.log(lo), math.log(c) - half), min(math.log(hi), math.log(c) + half)
                cand = [math.exp(x) for x in np.linspace(a, b, refine_points)]
            else:
                cand = [float(x) for x in np.linspace(max(lo, c - half), min(hi, c + half), refine_points)]
            base = dict(best["point"])
            for x in cand:
                visit({**base, v: x}, f"refine{k + 1}:{v}")
    if best["point"] is None or best["rate"] <= 0:
        bp = best["point"]
        params = None if bp is None else _params(bp, problem)
        return OptimizationResult(params, max(best["rate"], 0.0), trace)
    return OptimizationResult(_params(best["point"], problem), best["rate"], trace)


def _params(point: dict, problem: OptimizationProblem) -> ProtocolParams:
    return ProtocolParams(mu=point["mu"], p_z=1 - point["p_0"] - point["p_alpha_alpha"],
                          p_0=point["p_0"], p_alpha_alpha=point["p_alpha_alpha"],
                          z_split=point["z_split"], repetition_hz=problem.repetition_hz)


def result_json(problem: OptimizationProblem, result: OptimizationResult, seed: int) -> str:
    return json.dumps({"problem": problem.to_dict(), "result": result.to_dict(), "seed": seed},
                      indent=2, sort_keys=True)
