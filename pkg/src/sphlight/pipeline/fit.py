"""Direct coefficient fitting against a target panorama.

Stands in for network regression: needlet coefficients start from the
target's mean (bands at zero) and follow plain gradient descent on an L2
term, the spherical transport loss, or their sum.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from ..envmap import EquirectMap, source_map
from ..needlet import NeedletCoeffs, NeedletFrame, analyze, synthesize
from ..transport import NumericalError, TransportConfig, band_costs, std_metric, stl

LOSSES = ("l2", "stl", "l2+stl")
DIVERGENCE_FACTOR = 1e3


@dataclass
class FitReport:
    loss: str
    trace: list = field(default_factory=list)  # (l2, stl, total) per step
    std_initial: float = math.nan
    std_final: float = math.nan
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "loss": self.loss,
            "trace": [list(t) for t in self.trace],
            "std_initial": self.std_initial,
            "std_final": self.std_final,
            "wall_time": self.wall_time,
        }


def reconstruct(coeffs: NeedletCoeffs, frame: NeedletFrame, H: int, W: int) -> EquirectMap:
    return EquirectMap(np.clip(synthesize(coeffs, frame, H, W), 0.0, None))


def two_source_target(H: int = 64, W: int = 128, seed: int | None = None, kappa: float = 20.0) -> EquirectMap:
    """Two antipodal lobes on a dim ambient; ``seed`` jitters their placement."""
    rng = np.random.default_rng(seed)
    theta = math.pi / 2 + (rng.uniform(-0.3, 0.3) if seed is not None else 0.2)
    phi = 0.5 + (rng.uniform(0, 2 * math.pi) if seed is not None else 0.0)
    dirs = [(theta, phi % (2 * math.pi)), (math.pi - theta, (phi + math.pi) % (2 * math.pi))]
    return source_map(H, W, dirs, [(3.0, 2.5, 2.0), (2.0, 2.0, 2.5)], kappa=kappa, ambient=0.05)


def fit_coefficients(
    target: EquirectMap,
    frame: NeedletFrame,
    loss: str = "l2+stl",
    iters: int = 500,
    lr: float = 0.1,
    cfg: TransportConfig | None = None,
    stl_weight: float = 0.003,
    std_points: int = 192,
    solve_tol: float = 1e-6,
):
    """Fit coefficients to ``target``; returns (FitReport, fitted coefficients)."""
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}; expected one of {LOSSES}")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    cfg = cfg or TransportConfig()
    # descent steps tolerate looser duals than the reported metric
    step_cfg = replace(cfg, tol=max(cfg.tol, solve_tol))
    t0 = time.perf_counter()
    gt = analyze(target, frame)
    pred = NeedletCoeffs.zeros(frame, gt.dc)
    costs = band_costs(frame)
    use_l2 = loss in ("l2", "l2+stl")
    use_stl = loss in ("stl", "l2+stl")
    report = FitReport(loss)
    report.std_initial = std_metric(target, reconstruct(pred, frame, target.height, target.width), std_points, cfg)

    warm = None
    initial = None
    for _ in range(iters):
        diff = [p - g for p, g in zip(pred.bands, gt.bands)]
        l2 = float(sum(np.sum(d * d) for d in diff))
        res = stl(pred, gt, frame, step_cfg, warm=warm, costs=costs)
        warm = res.warm_start()
        total = (l2 if use_l2 else 0.0) + (stl_weight * res.loss if use_stl else 0.0)
        if not all(math.isfinite(v) for v in (l2, res.loss)):
            raise NumericalError("fit produced a non-finite loss")
        report.trace.append((l2, res.loss, total))
        if initial is None:
            initial = max(abs(total), 1e-12)
        elif abs(total) > DIVERGENCE_FACTOR * initial:
            raise NumericalError(
                f"fit diverged at step {len(report.trace)}: loss {total:.4g} vs initial {initial:.4g}; lower the learning rate"
            )
        for j in range(len(pred.bands)):
            step = np.zeros_like(pred.bands[j])
            if use_l2:
                step += 2.0 * diff[j]
            if use_stl:
                step += stl_weight * res.grad.bands[j]
            pred.bands[j] = pred.bands[j] - lr * step

    report.std_final = std_metric(target, reconstruct(pred, frame, target.height, target.width), std_points, cfg)
    report.wall_time = time.perf_counter() - t0
    return report, pred
