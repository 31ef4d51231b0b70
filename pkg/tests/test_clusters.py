import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arm_lab.clusters import (AnnulusSpec, Mode, analyze, build_clusters, cluster_crosses,
                              crossing_count, filling, outer_boundary, outermost_clusters)
from arm_lab.errors import DomainError
from arm_lab.loopsoup import LatticeDomain, LoopSoup, RootedLoop, sample_soup

from . import oracles as O

BOX = LatticeDomain.centered(31)


def _random_soup(seed, n_loops=25, spread=9, max_half=8):
    rs = np.random.default_rng(seed)
    loops = O.random_loops(rs, n_loops, spread, max_half)
    return LoopSoup.from_loops(BOX, loops), [set(O.walk_vertices(r, w)) for r, w in loops]


def _oracle_structure(vsets, d=BOX):
    return O.soup_structure(vsets, d.corner[0], d.corner[1], d.width, d.height)


def _contour_edges(ct):
    c = [tuple(map(int, p)) for p in ct.corners]
    return {frozenset({c[k], c[(k + 1) % len(c)]}) for k in range(len(c))}


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_clusters_match_closure_oracle(seed):
    soup, vsets = _random_soup(seed)
    groups, csets, fills, outer = _oracle_structure(vsets)
    cs = build_clusters(soup)
    assert [sorted(c.loop_ids) for c in cs] == groups
    assert [set(c.vertex_set) for c in cs] == csets
    # every loop in exactly one cluster
    assert sorted(i for c in cs for i in c.loop_ids) == list(range(len(vsets)))
    f = analyze(soup)
    assert [int(c) for c in np.flatnonzero(f.outermost)] == outer
    assert sorted(c.id for c in outermost_clusters(cs, BOX)) == outer
    for c in cs:
        assert set(filling(c, BOX)) == fills[c.id]
        mask, (ox, oy) = f.filling_mask(c.id)
        jj, ii = np.nonzero(mask)
        assert set(zip((ii + ox).tolist(), (jj + oy).tolist())) == fills[c.id]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_contours_match_edge_oracle(seed):
    soup, vsets = _random_soup(seed)
    _, _, fills, _ = _oracle_structure(vsets)
    f = analyze(soup)
    for c in range(f.n_clusters):
        ct = f.contour(c)
        corners, cells = O.trace_contour(fills[c])
        edges = O.boundary_edges(fills[c])
        assert _contour_edges(ct) == edges
        # same cyclic walk, same left cells
        got = [tuple(map(int, p)) for p in ct.corners]
        k = got.index(corners[0])
        assert got[k:] + got[:k] == corners
        cl = [tuple(map(int, p)) for p in ct.cells]
        assert cl[k:] + cl[:k] == cells
        assert ct.signed_area() == pytest.approx(len(fills[c]))
        assert len(set(map(tuple, ct.corners.tolist()))) == len(ct)
        pub = outer_boundary(f.cluster(c), BOX)
        assert _contour_edges(pub) == edges


def test_ring_has_filled_hole():
    ring = ("E" * 4 + "N" * 4 + "W" * 4 + "S" * 4)
    soup = LoopSoup.from_loops(BOX, [((-2, -2), ring), ((0, 0), "NS")])
    f = analyze(soup)
    assert f.n_clusters == 2
    assert list(f.outermost) == [True, False]
    fill = filling(build_clusters(soup)[0])
    assert len(fill) == 25 and (0, 0) in fill
    ct = f.contour(0)
    assert ct.steps() == "E" * 5 + "N" * 5 + "W" * 5 + "S" * 5
    assert ct.signed_area() == 25


def test_diagonal_gap_seals_hole():
    # the walls around (1, 1) meet only diagonally at (0, 0); 4-connected flooding cannot pass
    soup = LoopSoup.from_loops(BOX, [((1, 0), "ENNWWSNEESSW")])
    cs = build_clusters(soup)
    assert (0, 0) not in cs[0].vertex_set and (1, 1) not in cs[0].vertex_set
    fill = filling(cs[0], BOX)
    assert (1, 1) in fill and (0, 0) not in fill
    oracle = O.filling_by_flood(set(cs[0].vertex_set), BOX.corner[0], BOX.corner[1], 31, 31)
    assert set(fill) == oracle


def test_crossing_count_examples():
    a = AnnulusSpec((0, 0), 1, 5)
    out_and_back = RootedLoop(0, (0, 0), "E" * 5 + "W" * 5)
    assert crossing_count(out_and_back, a) == 2
    two_trips = RootedLoop(0, (0, 0), "E" * 5 + "W" * 5 + "N" * 5 + "S" * 5)
    assert crossing_count(two_trips, a) == 4
    assert crossing_count(RootedLoop(0, (0, 0), "EW"), a) == 0
    assert crossing_count(np.zeros((0, 2)), a) == 0
    with pytest.raises(DomainError):
        AnnulusSpec((0, 0), 3, 3)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 4), st.integers(2, 6))
def test_crossing_count_matches_subarc_oracle(seed, eps, gap):
    rs = np.random.default_rng(seed)
    (root, word), = O.random_loops(rs, 1, 3, 40)
    lp = RootedLoop(0, root, word)
    pts = O.walk_vertices(root, word)
    a = AnnulusSpec((0, 0), eps, eps + gap)
    n = crossing_count(lp, a)
    assert n == O.crossing_subarcs(pts, (0, 0), eps, eps + gap)
    assert n % 2 == 0
    assert (n > 0) == O.crosses(set(pts), (0, 0), eps, eps + gap)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_cluster_crosses_and_outermost_antichain(seed):
    soup, vsets = _random_soup(seed, n_loops=40)
    cs = build_clusters(soup)
    a = AnnulusSpec((0, 0), 2, 7)
    for c in cs:
        assert cluster_crosses(c, a) == O.crosses(set(c.vertex_set), (0, 0), 2, 7)
    outer = outermost_clusters(cs, BOX)
    fills = {c.id: set(filling(c, BOX)) for c in cs}
    for x in outer:
        for y in outer:
            if x.id != y.id:
                assert not set(x.vertex_set) <= fills[y.id]
    # idempotence: the outermost clusters of the outermost family are themselves
    assert [c.id for c in outermost_clusters(outer, BOX)] == [c.id for c in outer]
    # filling is idempotent
    for c in cs[:5]:
        assert set(filling(fills[c.id], BOX)) == fills[c.id]


def test_sampled_soup_structure_matches_oracle():
    d = LatticeDomain.centered(25)
    for seed in range(3):
        soup = sample_soup(d, 0.5, n_max=80, seed=seed)
        vsets = [lp.vertex_set() for lp in soup.loops]
        groups, csets, fills, outer = _oracle_structure(vsets, d)
        f = analyze(soup)
        assert [sorted(c.loop_ids) for c in build_clusters(soup)] == groups
        assert [int(c) for c in np.flatnonzero(f.outermost)] == outer


def test_boundary_mode_requires_bottom_row():
    d = LatticeDomain.centered(21, "HalfPlaneBox")
    AnnulusSpec((0, 0), 1, 4, Mode.BOUNDARY).check_mode(d)
    with pytest.raises(DomainError):
        AnnulusSpec((0, 3), 1, 4, Mode.BOUNDARY).check_mode(d)
