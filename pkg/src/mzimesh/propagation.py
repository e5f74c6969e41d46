"""Mesh transfer matrices and batched field propagation.

The full port set (main plus auxiliary waveguides) is simulated; auxiliary
rows and columns are ordinary matrix entries. MZIs of one stage act on
disjoint waveguide pairs, so each stage is applied as one vectorised update
over a batch of field vectors. Per-sample phase noise is supported by
passing offset arrays of shape ``(batch, n_mzi)``.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .mzi import transfer_derivatives, transfer_entries
from .topology import MeshTopology


@dataclass(frozen=True)
class CrosstalkModel:
    """Linear nearest-neighbour thermal crosstalk with coefficient ``chi``."""

    coefficient: float = 0.0
    neighborhood: str = "same-stage-adjacent"

    def __post_init__(self):
        if not 0.0 <= self.coefficient < 1.0:
            raise ValueError(f"crosstalk coefficient must be in [0, 1), got {self.coefficient}")


@dataclass(frozen=True)
class NoiseConfig:
    sigma_theta: float = 0.0
    sigma_phi: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_theta < 0 or self.sigma_phi < 0:
            raise ValueError("noise standard deviations must be >= 0")

    @property
    def is_zero(self) -> bool:
        return self.sigma_theta == 0 and self.sigma_phi == 0


def _as_per_mzi(value, n: int, name: str) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(value, dtype=float), (n,)).copy()
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MeshState:
    """A topology with phase settings and imperfections.

    ``theta``/``phi`` are the *set* phases; crosstalk turns them into the
    effective phases seen by light. Reck meshes carry ``input_phases`` for
    their N input phase shifters.
    """

    topology: MeshTopology
    theta: np.ndarray
    phi: np.ndarray
    input_phases: np.ndarray = None
    loss_db: np.ndarray | float = 0.0
    splitting_delta: np.ndarray | float = 0.0
    crosstalk: CrosstalkModel = field(default_factory=CrosstalkModel)

    def __post_init__(self):
        n = self.topology.n_mzi
        theta = np.asarray(self.theta, dtype=float)
        phi = np.asarray(self.phi, dtype=float)
        if theta.shape != (n,) or phi.shape != (n,):
            raise ValueError(f"expected {n} theta and phi values, got {theta.shape}, {phi.shape}")
        object.__setattr__(self, "theta", _as_per_mzi(theta, n, "theta"))
        object.__setattr__(self, "phi", _as_per_mzi(phi, n, "phi"))
        k = self.topology.input_phase_shifters
        ip = np.zeros(k) if self.input_phases is None else np.asarray(self.input_phases, float)
        if ip.shape != (k,):
            raise ValueError(f"expected {k} input phases, got shape {ip.shape}")
        object.__setattr__(self, "input_phases", _as_per_mzi(ip, k, "input_phases"))
        loss = _as_per_mzi(self.loss_db, n, "loss_db")
        if np.any(loss < 0):
            raise ValueError("loss_db must be >= 0")
        split = _as_per_mzi(self.splitting_delta, n, "splitting_delta")
        if np.any(np.abs(split) >= 0.5):
            raise ValueError("|splitting_delta| must be < 0.5")
        object.__setattr__(self, "loss_db", loss)
        object.__setattr__(self, "splitting_delta", split)

    @classmethod
    def zeros(cls, topology: MeshTopology, **kw) -> "MeshState":
        n = topology.n_mzi
        return cls(topology, np.zeros(n), np.zeros(n), **kw)

    @classmethod
    def random(cls, topology: MeshTopology, rng: np.random.Generator, **kw) -> "MeshState":
        n = topology.n_mzi
        return cls(
            topology,
            rng.uniform(0, 2 * np.pi, n),
            rng.uniform(0, 2 * np.pi, n),
            input_phases=rng.uniform(0, 2 * np.pi, topology.input_phase_shifters),
            **kw,
        )

    def replace(self, **changes) -> "MeshState":
        return dataclasses.replace(self, **changes)

    @property
    def n_params(self) -> int:
        return 2 * self.topology.n_mzi + self.topology.input_phase_shifters

    def flat_params(self) -> np.ndarray:
        return np.concatenate([self.theta, self.phi, self.input_phases])

    def with_params(self, params) -> "MeshState":
        n = self.topology.n_mzi
        params = np.asarray(params, dtype=float)
        return self.replace(theta=params[:n], phi=params[n : 2 * n], input_phases=params[2 * n :])


# ---- crosstalk -----------------------------------------------------------


@lru_cache(maxsize=64)
def _adjacency_cached(topo: MeshTopology) -> np.ndarray:
    n = topo.n_mzi
    adj = np.zeros((n, n))
    for a in topo.placements:
        for b in topo.placements:
            if a.id != b.id and abs(a.stage - b.stage) <= 1 and abs(a.top_wg - b.top_wg) <= 2:
                adj[a.id - 1, b.id - 1] = 1.0
    adj.setflags(write=False)
    return adj


def adjacency(topo: MeshTopology) -> np.ndarray:
    """Neighbour matrix: MZIs within one stage and with waveguide pairs at most two apart."""
    return _adjacency_cached(topo)


def crosstalk_matrix(state: MeshState) -> np.ndarray:
    n = state.topology.n_mzi
    chi = state.crosstalk.coefficient
    if chi == 0:
        return np.eye(n)
    return np.eye(n) + chi * adjacency(state.topology)


def apply_crosstalk(state: MeshState) -> tuple[np.ndarray, np.ndarray]:
    """Effective (theta, phi) after thermal crosstalk from neighbouring shifters."""
    chi = state.crosstalk.coefficient
    if chi == 0:
        return state.theta.copy(), state.phi.copy()
    k = crosstalk_matrix(state)
    return k @ state.theta, k @ state.phi


# ---- noise ---------------------------------------------------------------


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator addressed by ``(seed, *key)``.

    Streams with different keys are independent and do not depend on the
    order in which they are created, which keeps parallel runs reproducible.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class PhaseOffsets:
    theta: np.ndarray | None = None
    phi: np.ndarray | None = None
    inputs: np.ndarray | None = None


def draw_offsets(topo: MeshTopology, noise: NoiseConfig, rng: np.random.Generator,
                 batch: int | None = None) -> PhaseOffsets:
    """Zero-mean Gaussian phase offsets for one matrix multiplication (or a batch)."""
    shape = (topo.n_mzi,) if batch is None else (batch, topo.n_mzi)
    ishape = (topo.input_phase_shifters,) if batch is None else (batch, topo.input_phase_shifters)
    th = rng.standard_normal(shape) * noise.sigma_theta
    ph = rng.standard_normal(shape) * noise.sigma_phi
    ip = rng.standard_normal(ishape) * noise.sigma_phi
    return PhaseOffsets(th, ph, ip)


# ---- propagation ---------------------------------------------------------


@lru_cache(maxsize=64)
def _stage_rows(topo: MeshTopology):
    return tuple(
        np.array([topo.row(topo.placements[i].top_wg) for i in idx], dtype=int)
        for idx in topo.stages
    )


def _effective(state: MeshState, offsets: PhaseOffsets | None):
    th, ph = apply_crosstalk(state)
    ip = state.input_phases
    if offsets is not None:
        if offsets.theta is not None:
            th = th + offsets.theta
        if offsets.phi is not None:
            ph = ph + offsets.phi
        if offsets.inputs is not None:
            ip = ip + offsets.inputs
    return th, ph, ip


def propagate_fields(state: MeshState, x, offsets: PhaseOffsets | None = None,
                     record: bool = False, stages: slice = slice(None)):
    """Propagate a batch of full-port field vectors ``x`` of shape ``(B, P)``.

    Offsets may be per-MZI ``(n_mzi,)`` or per-sample ``(B, n_mzi)``. With
    ``record=True`` also returns the per-stage inputs needed for gradients.
    ``stages`` restricts propagation to a contiguous slice of stages; input
    phase shifters are applied only when the slice starts at stage 0.
    """
    topo = state.topology
    x = np.array(x, dtype=np.complex128, copy=True)
    if x.ndim != 2 or x.shape[1] != topo.n_ports:
        raise ValueError(f"expected fields of shape (B, {topo.n_ports}), got {x.shape}")
    th, ph, ip = _effective(state, offsets)
    trace = []
    start, stop, step = stages.indices(len(topo.stages))
    if step != 1:
        raise ValueError("stage slices must be contiguous")
    if topo.input_phase_shifters and start == 0:
        x[:, topo.main_rows] *= np.exp(1j * ip)
    for idx, r0 in zip(topo.stages[start:stop], _stage_rows(topo)[start:stop]):
        a = x[:, r0]
        b = x[:, r0 + 1]
        m00, m01, m10, m11 = transfer_entries(
            th[..., idx], ph[..., idx], state.loss_db[idx], state.splitting_delta[idx]
        )
        if record:
            trace.append((a, b))
        x[:, r0] = m00 * a + m01 * b
        x[:, r0 + 1] = m10 * a + m11 * b
    if record:
        return x, trace
    return x


def backpropagate(state: MeshState, grad_out, trace, offsets: PhaseOffsets | None = None,
                  x_in=None):
    """Adjoint pass through a mesh.

    ``grad_out`` is dL/d(conj y) for the outputs of :func:`propagate_fields`;
    ``trace`` is the record it returned and ``x_in`` the original inputs
    (needed only for Reck input phase shifters). Returns
    ``(grad_theta_eff, grad_phi_eff, grad_inputs, grad_x_in)`` where the
    first three are gradients of the real loss w.r.t. effective phases.
    """
    topo = state.topology
    th, ph, ip = _effective(state, offsets)
    g = np.array(grad_out, dtype=np.complex128, copy=True)
    gth = np.zeros(topo.n_mzi)
    gph = np.zeros(topo.n_mzi)
    for idx, r0, (a, b) in zip(topo.stages[::-1], _stage_rows(topo)[::-1], trace[::-1]):
        ga = g[:, r0]
        gb = g[:, r0 + 1]
        args = (th[..., idx], ph[..., idx], state.loss_db[idx], state.splitting_delta[idx])
        m00, m01, m10, m11 = transfer_entries(*args)
        (t00, t01, t10, t11), (p00, p01, p10, p11) = transfer_derivatives(*args)
        cga, cgb = ga.conj(), gb.conj()
        gth[idx] += 2 * np.real(cga * (t00 * a + t01 * b) + cgb * (t10 * a + t11 * b)).sum(axis=0)
        gph[idx] += 2 * np.real(cga * (p00 * a + p01 * b)).sum(axis=0)
        g[:, r0] = np.conj(m00) * ga + np.conj(m10) * gb
        g[:, r0 + 1] = np.conj(m01) * ga + np.conj(m11) * gb
    gip = np.zeros(topo.input_phase_shifters)
    if topo.input_phase_shifters:
        rows = topo.main_rows
        gm = g[:, rows]
        xm = np.asarray(x_in)[:, rows]
        gip = 2 * np.real(gm.conj() * 1j * np.exp(1j * ip) * xm).sum(axis=0)
        g[:, rows] = gm * np.exp(-1j * ip)
    return gth, gph, gip, g


def set_phase_gradient(state: MeshState, gth_eff, gph_eff):
    """Map effective-phase gradients back to set phases through crosstalk."""
    if state.crosstalk.coefficient == 0:
        return gth_eff, gph_eff
    k = crosstalk_matrix(state)
    return k.T @ gth_eff, k.T @ gph_eff


def transfer_matrix(state: MeshState, offsets: PhaseOffsets | None = None) -> np.ndarray:
    """Full-port transfer matrix (outputs x inputs)."""
    p = state.topology.n_ports
    if offsets is not None and any(
        o is not None and np.ndim(o) > 1 for o in (offsets.theta, offsets.phi, offsets.inputs)
    ):
        raise ValueError("transfer_matrix takes a single noise sample, not a batch")
    return propagate_fields(state, np.eye(p), offsets).T


def main_matrix(state: MeshState, offsets: PhaseOffsets | None = None) -> np.ndarray:
    """Main-port block of the transfer matrix (auxiliary inputs dark)."""
    rows = state.topology.main_rows
    return transfer_matrix(state, offsets)[np.ix_(rows, rows)]


def propagate(state: MeshState, x, noise: NoiseConfig | None = None,
              rng: np.random.Generator | None = None) -> np.ndarray:
    """Send one full-port input vector through the mesh with a fresh noise sample."""
    x = np.asarray(x, dtype=np.complex128)
    if x.shape != (state.topology.n_ports,):
        raise ValueError(f"input must have {state.topology.n_ports} entries, got {x.shape}")
    offsets = None
    if noise is not None and not noise.is_zero:
        if rng is None:
            rng = rng_stream(noise.seed)
        offsets = draw_offsets(state.topology, noise, rng)
    return propagate_fields(state, x[None, :], offsets)[0]


def write_matrix_csv(path, m) -> None:
    """Write a complex matrix as CSV with interleaved real/imaginary columns."""
    m = np.asarray(m)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"{part}_{j}" for j in range(m.shape[1]) for part in ("re", "im")])
        for row in m:
            w.writerow([repr(float(v)) for z in row for v in (z.real, z.imag)])


def read_matrix_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    vals = np.array([[float(v) for v in r] for r in rows])
    return vals[:, 0::2] + 1j * vals[:, 1::2]
