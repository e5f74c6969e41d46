"""Programming a mesh to a target and monitoring its phases in place.

Monitoring uses routes on which the MZI of interest and every later MZI
towards the detector keep one input dark, so the detected power follows
A*sin^2(theta/2) (or A*cos^2 for a crossing route) with all other biases
left alone. Ex-situ programming closes the loop on those readings; in-situ
programming runs gradient descent on the realised matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .propagation import (
    MeshState,
    PhaseOffsets,
    apply_crosstalk,
    backpropagate,
    crosstalk_matrix,
    propagate_fields,
    set_phase_gradient,
)
from .topology import MeshTopology, Route, accessible_routes, independently_accessible

TWO_PI = 2.0 * np.pi
DEFAULT_TRANSIT = 2.2e-6


class NotAccessibleError(ValueError):
    """Raised when an MZI (or a whole mesh) cannot be monitored independently."""

    def __init__(self, message: str, ids=()):
        super().__init__(message)
        self.ids = sorted(ids)


class MonitorFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class MonitoringPlan:
    mzi_id: int
    light_input: str
    detector_output: str
    route: Route
    crossing: bool
    alternatives: tuple[Route, ...] = ()

    @property
    def transmission_model(self) -> str:
        return "T(theta) = A*cos^2(theta/2)" if self.crossing else "T(theta) = A*sin^2(theta/2)"

    def to_dict(self) -> dict:
        return {
            "mzi_id": self.mzi_id,
            "light_input": self.light_input,
            "detector_output": self.detector_output,
            "transmission_model": self.transmission_model,
            "route": [m for m, _ in self.route.hops],
        }


def monitoring_plan(topo: MeshTopology, mzi_id: int) -> MonitoringPlan | None:
    """Best monitoring route for an MZI, or None when it is not independently accessible."""
    routes = accessible_routes(topo, mzi_id)
    if not routes:
        return None
    r = routes[0]
    return MonitoringPlan(
        mzi_id=mzi_id,
        light_input=topo.port_name(r.input_wg, "I"),
        detector_output=topo.port_name(r.output_wg, "O"),
        route=r,
        crossing=r.entry_wg != r.exit_wg,
        alternatives=tuple(routes[1:]),
    )


def _wrap(x):
    return (np.asarray(x) + np.pi) % TWO_PI - np.pi


def _route_power(state: MeshState, mzi_id: int, route: Route, deltas) -> np.ndarray:
    """Detected power when the target's set theta is shifted by each of ``deltas``.

    A bias change heats neighbours too, so the shift enters the effective
    phases through the crosstalk matrix; nothing else is touched.
    """
    topo = state.topology
    deltas = np.atleast_1d(np.asarray(deltas, dtype=float))
    col = crosstalk_matrix(state)[:, mzi_id - 1]
    offsets = PhaseOffsets(theta=deltas[:, None] * col[None, :])
    x = np.zeros((deltas.size, topo.n_ports), complex)
    x[:, topo.row(route.input_wg)] = 1.0
    y = propagate_fields(state, x, offsets)
    return np.abs(y[:, topo.row(route.output_wg)]) ** 2


@dataclass
class MonitorReading:
    theta: float
    amplitude: float
    fit_residual: float
    route: Route | None = None


def _fit_route(state: MeshState, mzi_id: int, route: Route, points: int) -> MonitorReading:
    """Sinusoid fit of the detected power over one period of the target's bias."""
    crossing = route.entry_wg != route.exit_wg
    deltas = np.linspace(0.0, TWO_PI, points, endpoint=False)
    p = _route_power(state, mzi_id, route, deltas)
    basis = np.column_stack([np.ones_like(deltas), np.cos(deltas), np.sin(deltas)])
    coef, *_ = np.linalg.lstsq(basis, p, rcond=None)
    _, a1, a2 = coef
    amp = 2.0 * float(np.hypot(a1, a2))
    resid = float(np.linalg.norm(basis @ coef - p) / max(np.linalg.norm(p), 1e-300))
    # effective theta at delta is theta0 + delta; a bar route dips at theta = 0,
    # a crossing route at theta = pi
    theta0 = np.arctan2(-a2, a1) if crossing else np.arctan2(a2, -a1)
    return MonitorReading(float(theta0 % TWO_PI), amp, resid, route)


def _route_zeros(state: MeshState, mzi_id: int, route: Route, dense: int, margin: float = 0.25):
    """Candidate theta values from the near-zero dips of a dense bias sweep.

    Power is not periodic in the shift (neighbours drift by chi*2*pi over a
    period), so the sweep is open-ended and only interior minima count.
    Returns (thetas, shifts, grid step).
    """
    dip = np.pi if route.entry_wg != route.exit_wg else 0.0
    fine = np.linspace(-np.pi - margin, np.pi + margin, dense)
    pf = _route_power(state, mzi_id, route, fine)
    inner = np.flatnonzero((pf[1:-1] <= pf[:-2]) & (pf[1:-1] <= pf[2:])) + 1
    cand = inner[pf[inner] <= 1e-2 * pf.max()]
    if cand.size == 0:
        cand = inner if inner.size else np.array([int(np.argmin(pf))])
    return (dip - fine[cand]) % TWO_PI, fine[cand], fine[1] - fine[0]


def _refine_min(f, lo: float, hi: float, points: int = 33, xtol: float = 1e-10) -> float:
    """Nested-grid minimisation of a vectorised function on [lo, hi]."""
    while hi - lo > xtol:
        x = np.linspace(lo, hi, points)
        i = int(np.argmin(f(x)))
        lo, hi = x[max(i - 1, 0)], x[min(i + 1, points - 1)]
    return 0.5 * (lo + hi)


def monitor_theta(state: MeshState, plan: MonitoringPlan, points: int = 64, refine: bool = True,
                  max_residual: float = 5e-2, dense: int = 512) -> MonitorReading:
    """Estimate the effective theta at which the target MZI currently sits.

    The target's bias is swept by ``points`` offsets over one period and a
    sinusoid is fitted to the detected power on every accessible route; the
    brightest route whose fit residual is within ``max_residual`` gives the
    coarse estimate (the brightest overall if none is). Refinement locates
    the exact zero of the target's own transmission factor: crosstalk moves
    the fitted phase but never that zero. Zeros caused by other route MZIs
    drifting through their own dips are route-specific, so the zero seen on
    the most routes wins, ties going to the one nearest the coarse estimate.
    The returned angle is in [0, 2*pi).
    """
    readings = [_fit_route(state, plan.mzi_id, r, points) for r in (plan.route, *plan.alternatives)]
    clean = [r for r in readings if r.fit_residual <= max_residual]
    best = max(clean or readings, key=lambda r: r.amplitude)
    if best.amplitude < 1e-12:
        raise MonitorFitError(f"MZI {plan.mzi_id}: every monitoring route is dark")
    if not refine:
        return best
    lit = [r for r in readings if r.amplitude >= 1e-6 * best.amplitude]
    zeros = [_route_zeros(state, plan.mzi_id, r.route, dense) for r in lit]
    step = zeros[0][2]
    pool = np.concatenate([z[0] for z in zeros])
    support = np.array([
        sum(bool(np.any(np.abs(_wrap(z[0] - t)) <= 3 * step)) for z in zeros) for t in pool
    ])
    top = pool[support == support.max()]
    theta_c = top[int(np.argmin(np.abs(_wrap(top - best.theta))))]
    # refine on the brightest route that shows this zero
    for r, (thetas, shifts, _) in sorted(zip(lit, zeros), key=lambda rz: -rz[0].amplitude):
        near = np.abs(_wrap(thetas - theta_c))
        if near.min() <= 3 * step:
            d0 = shifts[int(np.argmin(near))]
            dip = np.pi if r.route.entry_wg != r.route.exit_wg else 0.0
            d_best = _refine_min(lambda d: _route_power(state, plan.mzi_id, r.route, d),
                                 d0 - 2 * step, d0 + 2 * step)
            return MonitorReading(float((dip - d_best) % TWO_PI), r.amplitude, r.fit_residual, r.route)
    raise MonitorFitError(f"MZI {plan.mzi_id}: no transmission zero found")  # pragma: no cover


def monitor_all(state: MeshState) -> dict[int, float | None]:
    """Monitored effective theta for every MZI (None where not accessible)."""
    out: dict[int, float | None] = {}
    for p in state.topology.placements:
        plan = monitoring_plan(state.topology, p.id)
        out[p.id] = None if plan is None else monitor_theta(state, plan).theta
    return out


# ---- programming ---------------------------------------------------------


@dataclass
class ProgrammingResult:
    state: MeshState
    iterations: int
    residual: float
    t_prog: float
    converged: bool
    history: list[float] = field(default_factory=list)
    method: str = ""

    def to_dict(self) -> dict:
        s = self.state
        return {
            "method": self.method,
            "kind": s.topology.kind.value,
            "n": s.topology.n_main,
            "phases": {
                "theta": s.theta.tolist(),
                "phi": s.phi.tolist(),
                "input_phases": s.input_phases.tolist(),
            },
            "residual": self.residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "t_prog_seconds": self.t_prog,
            "history": self.history,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def program_ex_situ(state: MeshState, target_theta, target_phi=None, iterations_per_mzi: int = 10,
                    transit_time: float = DEFAULT_TRANSIT, tol: float = 1e-3,
                    deadband: float = 1e-9) -> ProgrammingResult:
    """Closed-loop bias adjustment against monitored effective phases.

    Biases start at the externally computed targets. Each iteration monitors
    every MZI and corrects its bias by the monitored error, all MZIs in
    parallel; errors below ``deadband`` (the readout resolution) are left
    alone. External phases read back through an ideal phase reference.
    The residual is the max effective-phase error in radians.
    """
    topo = state.topology
    missing = set(range(1, topo.n_mzi + 1)) - independently_accessible(topo)
    if missing:
        raise NotAccessibleError(
            f"{topo.kind.value} mesh has MZIs that are not independently accessible: {sorted(missing)}",
            missing,
        )
    if iterations_per_mzi < 0:
        raise ValueError("iterations_per_mzi must be >= 0")
    tth = np.asarray(target_theta, dtype=float)
    tph = state.phi.copy() if target_phi is None else np.asarray(target_phi, dtype=float)
    plans = [monitoring_plan(topo, p.id) for p in topo.placements]
    cur = state.replace(theta=tth.copy(), phi=tph.copy())

    def error(s: MeshState) -> float:
        th_eff, ph_eff = apply_crosstalk(s)
        return float(max(np.max(np.abs(_wrap(th_eff - tth))), np.max(np.abs(_wrap(ph_eff - tph)))))

    history = [error(cur)]
    used = 0
    for k in range(iterations_per_mzi):
        mon = np.array([monitor_theta(cur, pl).theta for pl in plans])
        _, ph_eff = apply_crosstalk(cur)
        d_th, d_ph = _wrap(mon - tth), _wrap(ph_eff - tph)
        d_th[np.abs(d_th) < deadband] = 0.0
        d_ph[np.abs(d_ph) < deadband] = 0.0
        cur = cur.replace(theta=cur.theta - d_th, phi=cur.phi - d_ph)
        used = k + 1
        history.append(error(cur))
        if history[-1] < tol:
            break
    return ProgrammingResult(
        state=cur,
        iterations=used,
        residual=history[-1],
        t_prog=iterations_per_mzi * transit_time,
        converged=history[-1] < tol,
        history=history,
        method="ex-situ-monitored",
    )


def main_matrix_and_grad(state: MeshState, target: np.ndarray):
    """Squared Frobenius distance to ``target`` and its gradient w.r.t. the flat parameters."""
    topo = state.topology
    rows = topo.main_rows
    x = np.zeros((topo.n_main, topo.n_ports), complex)
    x[np.arange(topo.n_main), rows] = 1.0
    y, trace = propagate_fields(state, x, record=True)
    u = y[:, rows].T
    diff = u - target
    g = np.zeros_like(y)
    g[:, rows] = diff.T
    gth, gph, gip, _ = backpropagate(state, g, trace, x_in=x)
    gth, gph = set_phase_gradient(state, gth, gph)
    return float(np.sum(np.abs(diff) ** 2)), np.concatenate([gth, gph, gip])


def program_in_situ(state: MeshState, target, max_iterations: int = 200, step: float = 0.05,
                    transit_time: float = DEFAULT_TRANSIT, tol: float = 1e-3) -> ProgrammingResult:
    """Gradient descent on the Frobenius distance between the main-port matrix and ``target``.

    Step size starts at ``step``; a step that does not reduce the loss is
    rejected and the step halved. The residual is ||U - target||_F.
    """
    topo = state.topology
    target = np.asarray(target, dtype=complex)
    if target.shape != (topo.n_main, topo.n_main):
        raise ValueError(f"target must be {topo.n_main}x{topo.n_main}, got {target.shape}")
    params = state.flat_params()
    cur = state
    loss, grad = main_matrix_and_grad(cur, target)
    history = [float(np.sqrt(loss))]
    used = 0
    lr = step
    for k in range(max_iterations):
        if np.sqrt(loss) < tol:
            break
        used = k + 1
        trial = cur.with_params(params - lr * grad)
        t_loss, t_grad = main_matrix_and_grad(trial, target)
        if t_loss < loss:
            cur, params, loss, grad = trial, params - lr * grad, t_loss, t_grad
        else:
            lr *= 0.5
        history.append(float(np.sqrt(loss)))
    res = float(np.sqrt(loss))
    return ProgrammingResult(
        state=cur,
        iterations=used,
        residual=res,
        t_prog=used * transit_time,
        converged=res < tol,
        history=history,
        method="in-situ-backprop",
    )
