import json

import pytest

from mzimesh.topology import (
    MeshKind,
    build,
    build_bokun,
    build_clements,
    build_reck,
    independently_accessible,
    mesh_depth,
    mzi_count,
    structural_report,
)

KINDS = ("reck", "clements", "diamond", "bokun")


def test_mzi_count_examples():
    assert mzi_count("reck", 8) == 28
    assert mzi_count("clements", 8) == 28
    assert mzi_count("diamond", 8) == 49
    assert mzi_count("bokun", 8) == 40
    assert mzi_count("bokun", 10) == 65
    assert build_bokun(10).n_mzi == 65


@pytest.mark.parametrize("kind,n", [("bokun", 7), ("clements", 5), ("reck", 1), ("diamond", 0)])
def test_unsupported_sizes_rejected(kind, n):
    with pytest.raises(ValueError):
        mzi_count(kind, n)
    with pytest.raises(ValueError):
        build(kind, n)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError, match="unknown mesh kind"):
        MeshKind.parse("butterfly")


def test_bokun_aux_ports():
    t = build_bokun(8)
    assert t.n_mzi == 40
    assert len(t.aux_inputs) + len(t.aux_outputs) == 12
    assert len(t.aux_inputs) == len(t.aux_outputs) == 6


def test_small_and_reference_meshes():
    r2 = build_reck(2)
    assert r2.n_mzi == 1 and mesh_depth(r2) == 1
    assert mesh_depth(build_clements(8)) == 8
    assert build_reck(8).input_phase_shifters == 8
    assert build_clements(8).input_phase_shifters == 0


@pytest.mark.parametrize(
    "kind,depth,lo,hi,acc",
    [("reck", 13, 1, 13, 13), ("diamond", 13, 1, 13, 49), ("bokun", 8, 7, 8, 40)],
)
def test_structural_table(kind, depth, lo, hi, acc):
    rep = structural_report(build(kind, 8))
    assert (rep.depth, rep.min_path, rep.max_path, rep.accessible_count) == (depth, lo, hi, acc)


def test_clements_structure():
    rep = structural_report(build_clements(8))
    assert (rep.mzi_count, rep.depth, rep.min_path, rep.max_path) == (28, 8, 4, 8)
    # MZI 9 sits at stage 6 on waveguides 4-5 and is fed on both inputs from the bottom cone
    assert 9 not in rep.accessible_ids
    p9 = build_clements(8).mzi(9)
    assert (p9.stage, p9.top_wg) == (6, 4)


def test_reck_accessible_is_outer_diagonal():
    t = build_reck(8)
    # the triangle's outer edge: the first diagonal and the last MZI of every diagonal
    outer = {p.id for p in t.placements if p.stage == p.top_wg or p.stage + p.top_wg == 2 * 8 - 2}
    assert independently_accessible(t) == outer
    assert len(outer) == 13


def test_report_json_keys():
    doc = json.loads(structural_report(build_bokun(8)).to_json())
    assert set(doc) == {"kind", "n", "mzi_count", "depth", "min_path", "max_path",
                        "accessible_count", "accessible_fraction"}
    assert doc["accessible_fraction"] == 1.0


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("n", [4, 6, 8, 10])
def test_invariants(kind, n):
    t = build(kind, n)
    assert t.n_mzi == mzi_count(kind, n)
    rep = structural_report(t)
    assert rep.min_path <= rep.max_path <= rep.depth
    assert rep.depth == (n if kind in ("clements", "bokun") else 2 * n - 3)
    # ports: one input and one output per waveguide, all distinct
    ins = t.main_inputs + t.aux_inputs
    outs = t.main_outputs + t.aux_outputs
    assert len(set(ins)) == len(ins) == t.n_ports == len(set(outs)) == len(outs)
    assert {t.port_wg(p) for p in ins} == set(t.waveguides)
    # the lattice is a DAG moving strictly stage-forward along every waveguide
    for w in t.waveguides:
        chain = [m for m in t.stage_order if w in t.mzi(m).wgs]
        stages = [t.mzi(m).stage for m in chain]
        assert stages == sorted(stages) and len(set(stages)) == len(stages)
    if kind in ("diamond", "bokun"):
        assert len(independently_accessible(t)) == t.n_mzi
