"""Mesh topologies on a (stage, waveguide) lattice and their structure.

An MZI placed at ``(stage, top_wg)`` couples waveguides ``top_wg`` and
``top_wg + 1``. Main waveguides are numbered 1..N; auxiliary waveguides sit
above (indices <= 0) or below (indices > N) the main block. Every waveguide
has one input port on the left and one output port on the right.

MZI ids follow the calibration order used by each mesh family:

* Clements: last stage first, top to bottom inside a stage.
* Reck, Diamond, Bokun: up-going diagonals (constant ``stage + top_wg``),
  starting with the diagonal furthest down-right, each walked left to right.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np


class MeshKind(str, Enum):
    RECK = "reck"
    CLEMENTS = "clements"
    DIAMOND = "diamond"
    BOKUN = "bokun"

    @classmethod
    def parse(cls, value) -> "MeshKind":
        if isinstance(value, MeshKind):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(
                f"unknown mesh kind {value!r}; expected one of {[k.value for k in cls]}"
            ) from None


def mzi_count(kind, n: int) -> int:
    kind = MeshKind.parse(kind)
    _check_n(kind, n)
    if kind in (MeshKind.RECK, MeshKind.CLEMENTS):
        return n * (n - 1) // 2
    if kind is MeshKind.DIAMOND:
        return (n - 1) ** 2
    return n * (3 * n - 4) // 4


def _check_n(kind: MeshKind, n: int) -> None:
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise ValueError(f"mesh size must be an integer >= 2, got {n!r}")
    if kind in (MeshKind.CLEMENTS, MeshKind.BOKUN) and n % 2:
        raise ValueError(f"{kind.value} meshes need an even size, got N={n}")


@dataclass(frozen=True)
class MziPlacement:
    id: int
    stage: int
    top_wg: int

    @property
    def wgs(self) -> tuple[int, int]:
        return (self.top_wg, self.top_wg + 1)


@dataclass(frozen=True)
class Route:
    """A light path used for calibration or monitoring.

    ``hops`` lists ``(mzi_id, exit_wg)`` after the MZI of interest, in
    propagation order; ``output_wg`` is where the detector sits.
    """

    input_wg: int
    output_wg: int
    entry_wg: int
    exit_wg: int
    hops: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True, eq=False)
class MeshTopology:
    kind: MeshKind
    n_main: int
    placements: tuple[MziPlacement, ...]
    input_phase_shifters: int = 0

    def __post_init__(self):
        seen: dict[tuple[int, int], int] = {}
        for p in self.placements:
            for w in p.wgs:
                key = (p.stage, w)
                if key in seen:
                    raise ValueError(
                        f"MZIs {seen[key]} and {p.id} share waveguide {w} in stage {p.stage}"
                    )
                seen[key] = p.id
        if [p.id for p in self.placements] != list(range(1, len(self.placements) + 1)):
            raise ValueError("placements must be ordered by id 1..n")

    # ---- waveguides and ports -------------------------------------------

    @cached_property
    def waveguides(self) -> tuple[int, ...]:
        wgs = set(range(1, self.n_main + 1))
        for p in self.placements:
            wgs.update(p.wgs)
        return tuple(sorted(wgs))

    @property
    def wg_min(self) -> int:
        return self.waveguides[0]

    @property
    def n_ports(self) -> int:
        return len(self.waveguides)

    @property
    def n_mzi(self) -> int:
        return len(self.placements)

    @property
    def n_stages(self) -> int:
        return max((p.stage for p in self.placements), default=0)

    def row(self, wg: int) -> int:
        """Matrix row/column index of a waveguide."""
        return wg - self.wg_min

    @property
    def main_wgs(self) -> tuple[int, ...]:
        return tuple(range(1, self.n_main + 1))

    @property
    def aux_wgs(self) -> tuple[int, ...]:
        return tuple(w for w in self.waveguides if not 1 <= w <= self.n_main)

    @cached_property
    def main_rows(self) -> np.ndarray:
        return np.array([self.row(w) for w in self.main_wgs], dtype=int)

    @property
    def main_inputs(self) -> list[str]:
        return [self.port_name(w, "I") for w in self.main_wgs]

    @property
    def main_outputs(self) -> list[str]:
        return [self.port_name(w, "O") for w in self.main_wgs]

    @property
    def aux_inputs(self) -> list[str]:
        return [self.port_name(w, "I") for w in self.aux_wgs]

    @property
    def aux_outputs(self) -> list[str]:
        return [self.port_name(w, "O") for w in self.aux_wgs]

    def port_name(self, wg: int, side: str) -> str:
        """``I3``/``O3`` for main ports (0-based), ``I'0``... for auxiliary ones."""
        if 1 <= wg <= self.n_main:
            return f"{side}{wg - 1}"
        return f"{side}'{self.aux_wgs.index(wg)}"

    def port_wg(self, name: str) -> int:
        name = name.strip()
        if len(name) < 2 or name[0] not in "IO":
            raise ValueError(f"bad port name {name!r}")
        if name[1] == "'":
            idx = int(name[2:])
            if not 0 <= idx < len(self.aux_wgs):
                raise ValueError(f"no auxiliary port {name!r}")
            return self.aux_wgs[idx]
        idx = int(name[1:])
        if not 0 <= idx < self.n_main:
            raise ValueError(f"no main port {name!r}")
        return idx + 1

    # ---- lattice connectivity -------------------------------------------

    def mzi(self, mzi_id: int) -> MziPlacement:
        if not 1 <= mzi_id <= self.n_mzi:
            raise ValueError(f"{self.kind.value} mesh has no MZI {mzi_id}")
        return self.placements[mzi_id - 1]

    @cached_property
    def stage_order(self) -> tuple[int, ...]:
        """MZI ids sorted by (stage, top_wg): a valid propagation order."""
        return tuple(p.id for p in sorted(self.placements, key=lambda p: (p.stage, p.top_wg)))

    @cached_property
    def stages(self) -> tuple[np.ndarray, ...]:
        """Zero-based MZI indices grouped per stage, in stage order."""
        out = []
        for s in sorted({p.stage for p in self.placements}):
            out.append(np.array([p.id - 1 for p in self.placements if p.stage == s], dtype=int))
        return tuple(out)

    @cached_property
    def _wg_chains(self) -> dict[int, tuple[int, ...]]:
        chains: dict[int, list[int]] = {w: [] for w in self.waveguides}
        for mid in self.stage_order:
            for w in self.mzi(mid).wgs:
                chains[w].append(mid)
        return {w: tuple(c) for w, c in chains.items()}

    def first_on(self, wg: int) -> int | None:
        chain = self._wg_chains[wg]
        return chain[0] if chain else None

    def next_on(self, mzi_id: int, wg: int) -> int | None:
        """MZI fed by output ``wg`` of ``mzi_id``; None means the output port."""
        chain = self._wg_chains[wg]
        k = chain.index(mzi_id)
        return chain[k + 1] if k + 1 < len(chain) else None

    def prev_on(self, mzi_id: int, wg: int) -> int | None:
        """MZI feeding input ``wg`` of ``mzi_id``; None means the input port."""
        chain = self._wg_chains[wg]
        k = chain.index(mzi_id)
        return chain[k - 1] if k > 0 else None

    # ---- lit-cone reachability ------------------------------------------

    def cone(self, lit_inputs, routes: dict[int, str] | None = None) -> dict[int, tuple[bool, bool]]:
        """Which inputs of every MZI receive light from ``lit_inputs`` (waveguides).

        MZIs listed in ``routes`` with ``"cross"``/``"bar"`` route light
        deterministically; every other lit MZI lights both of its outputs.
        Returns ``{mzi_id: (top_lit, bottom_lit)}``.
        """
        routes = routes or {}
        lit = {w: (w in lit_inputs) for w in self.waveguides}
        status: dict[int, tuple[bool, bool]] = {}
        for mid in self.stage_order:
            p = self.mzi(mid)
            a, b = lit[p.top_wg], lit[p.top_wg + 1]
            status[mid] = (a, b)
            state = routes.get(mid)
            if state == "cross":
                lit[p.top_wg], lit[p.top_wg + 1] = b, a
            elif state == "bar":
                pass
            else:
                lit[p.top_wg] = lit[p.top_wg + 1] = a or b
        return status

    def _walk(self, mid: int, wg: int, status, hops):
        nxt = self.next_on(mid, wg)
        if nxt is None:
            yield (hops, wg)
            return
        q = self.mzi(nxt)
        on_top = wg == q.top_wg
        off_lit = status[nxt][1] if on_top else status[nxt][0]
        if off_lit:
            return
        for w2 in q.wgs:
            yield from self._walk(nxt, w2, status, hops + ((nxt, w2),))


def _route_bars(entry_wg: int, exit_wg: int, hops, topo: MeshTopology, start: int) -> int:
    """Number of bar (same-side) transits along a route, including the start MZI."""
    bars = int(entry_wg == exit_wg)
    prev_mid, prev_wg = start, exit_wg
    for mid, w in hops:
        bars += int(prev_wg == w)
        prev_mid, prev_wg = mid, w
    return bars


def rank_route(topo: MeshTopology, start: int, entry_wg: int, exit_wg: int, hops, out_wg: int):
    """Sort key: main outputs first, then fewest bar transits, then shortest, then port."""
    aux = int(not 1 <= out_wg <= topo.n_main)
    return (aux, _route_bars(entry_wg, exit_wg, hops, topo, start), len(hops), out_wg)


def accessible_routes(topo: MeshTopology, mzi_id: int) -> list[Route]:
    """All monitoring routes for an MZI with every other bias left untouched.

    A route exists when lighting a single input leaves exactly one input of
    the MZI lit, and a path to some output has the second input of every
    subsequent MZI dark. Routes are returned best first.
    """
    p = topo.mzi(mzi_id)
    found = []
    for w_in in topo.waveguides:
        status = _cone_cache(topo, w_in)
        a, b = status[mzi_id]
        if a == b:
            continue
        entry = p.top_wg if a else p.top_wg + 1
        for exit_wg in p.wgs:
            for hops, out in topo._walk(mzi_id, exit_wg, status, ()):
                found.append(
                    (rank_route(topo, mzi_id, entry, exit_wg, hops, out), w_in,
                     Route(w_in, out, entry, exit_wg, hops))
                )
    found.sort(key=lambda x: (x[0], x[1]))
    return [r for _, _, r in found]


_CONES: dict[tuple[int, int], dict] = {}


def _cone_cache(topo: MeshTopology, w_in: int):
    key = (id(topo), w_in)
    hit = _CONES.get(key)
    if hit is None or hit[0] is not topo:
        hit = (topo, topo.cone({w_in}))
        _CONES[key] = hit
    return hit[1]


def independently_accessible(topo: MeshTopology) -> set[int]:
    return {p.id for p in topo.placements if accessible_routes_exist(topo, p.id)}


def accessible_routes_exist(topo: MeshTopology, mzi_id: int) -> bool:
    p = topo.mzi(mzi_id)
    for w_in in topo.waveguides:
        status = _cone_cache(topo, w_in)
        a, b = status[mzi_id]
        if a == b:
            continue
        for exit_wg in p.wgs:
            for _ in topo._walk(mzi_id, exit_wg, status, ()):
                return True
    return False


# ---- constructions -------------------------------------------------------


def _number(kind: MeshKind, n: int, raw: list[tuple[int, int]], shifters: int = 0) -> MeshTopology:
    if kind is MeshKind.CLEMENTS:
        key = lambda sp: (-sp[0], sp[1])  # noqa: E731
    else:
        key = lambda sp: (-(sp[0] + sp[1]), sp[0])  # noqa: E731
    ordered = sorted(raw, key=key)
    placements = tuple(MziPlacement(i + 1, s, w) for i, (s, w) in enumerate(ordered))
    return MeshTopology(kind, n, placements, shifters)


def _reck_raw(n: int) -> list[tuple[int, int]]:
    return [(2 * i - 2 + p, p) for i in range(1, n) for p in range(1, n - i + 1)]


def build_reck(n: int) -> MeshTopology:
    """Triangular mesh: diagonals of length N-1 ... 1 plus N input phase shifters."""
    _check_n(MeshKind.RECK, n)
    return _number(MeshKind.RECK, n, _reck_raw(n), shifters=n)


def build_diamond(n: int) -> MeshTopology:
    """Reck triangle mirrored about its flat top edge onto N-2 auxiliary waveguides."""
    _check_n(MeshKind.DIAMOND, n)
    reck = _reck_raw(n)
    mirror = [(s, 2 - p) for s, p in reck if p >= 2]
    return _number(MeshKind.DIAMOND, n, reck + mirror)


def _clements_raw(n: int) -> list[tuple[int, int]]:
    raw = []
    for s in range(1, n + 1):
        first = 1 if s % 2 else 2
        raw.extend((s, p) for p in range(first, n, 2))
    return raw


def build_clements(n: int) -> MeshTopology:
    """Rectangular mesh of N stages alternating (1,2),(3,4)... and (2,3),(4,5)..."""
    _check_n(MeshKind.CLEMENTS, n)
    return _number(MeshKind.CLEMENTS, n, _clements_raw(n))


def build_bokun(n: int) -> MeshTopology:
    """Clements mesh with triangular caps of auxiliary MZIs above and below."""
    _check_n(MeshKind.BOKUN, n)
    raw = _clements_raw(n)
    for k in range(1, n // 2):
        for s in range(k + 1, n - k, 2):
            raw.append((s, 1 - k))
            raw.append((s, n + k - 1))
    return _number(MeshKind.BOKUN, n, raw)


_BUILDERS = {
    MeshKind.RECK: build_reck,
    MeshKind.CLEMENTS: build_clements,
    MeshKind.DIAMOND: build_diamond,
    MeshKind.BOKUN: build_bokun,
}


def build(kind, n: int) -> MeshTopology:
    return _BUILDERS[MeshKind.parse(kind)](n)


# ---- structural characteristics -----------------------------------------


@dataclass
class StructuralReport:
    kind: str
    n: int
    mzi_count: int
    depth: int
    min_path: int
    max_path: int
    accessible_ids: set[int] = field(default_factory=set)

    @property
    def accessible_count(self) -> int:
        return len(self.accessible_ids)

    @property
    def accessible_fraction(self) -> float:
        return self.accessible_count / self.mzi_count if self.mzi_count else 0.0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n": self.n,
            "mzi_count": self.mzi_count,
            "depth": self.depth,
            "min_path": self.min_path,
            "max_path": self.max_path,
            "accessible_count": self.accessible_count,
            "accessible_fraction": round(self.accessible_fraction, 6),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def mesh_depth(topo: MeshTopology) -> int:
    """Most MZIs on any directed input-to-output path."""
    longest: dict[int, int] = {}
    for mid in topo.stage_order:
        preds = [topo.prev_on(mid, w) for w in topo.mzi(mid).wgs]
        longest[mid] = 1 + max((longest[q] for q in preds if q is not None), default=0)
    return max(longest.values(), default=0)


def main_path_extremes(topo: MeshTopology) -> tuple[int, int]:
    """Min and max MZI count over all main-input to main-output paths."""
    lo, hi = None, None
    for w_in in topo.main_wgs:
        reach: dict[int, tuple[int, int]] = {}
        for mid in topo.stage_order:
            cands = []
            for w in topo.mzi(mid).wgs:
                q = topo.prev_on(mid, w)
                if q is None:
                    if w == w_in:
                        cands.append((0, 0))
                elif q in reach:
                    cands.append(reach[q])
            if cands:
                reach[mid] = (1 + min(c[0] for c in cands), 1 + max(c[1] for c in cands))
        for w_out in topo.main_wgs:
            chain = topo._wg_chains[w_out]
            if not chain:
                ends = [(0, 0)] if w_out == w_in else []
            else:
                ends = [reach[chain[-1]]] if chain[-1] in reach else []
            for a, b in ends:
                lo = a if lo is None else min(lo, a)
                hi = b if hi is None else max(hi, b)
    return (lo or 0, hi or 0)


def structural_report(topo: MeshTopology) -> StructuralReport:
    lo, hi = main_path_extremes(topo)
    return StructuralReport(
        kind=topo.kind.value,
        n=topo.n_main,
        mzi_count=topo.n_mzi,
        depth=mesh_depth(topo),
        min_path=lo,
        max_path=hi,
        accessible_ids=independently_accessible(topo),
    )
