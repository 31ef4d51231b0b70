"""Arm-event and separation detectors on sampled loop soups.

All detectors are pure functions of their inputs. Cluster structure is read
from :func:`arm_lab.clusters.analyze`, which caches it on the soup.
"""

from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .clusters import (INSIDE, OUTSIDE, AnnulusSpec, Mode, analyze, _crossings)
from .errors import DomainError, PreconditionError
from .loopsoup import LatticeDomain, LoopSoup, Role, sample_soup


class LoopProxy(enum.Enum):
    RAW_LOOP = "RawLoop"
    OUTER_CONTOUR = "OuterContour"
    OUTER_CLUSTER = "OuterCluster"


@dataclass(frozen=True)
class EventOutcome:
    event_name: str
    occurred: bool
    witness: tuple = None
    censored: bool = False

    def __post_init__(self):
        if self.occurred and self.witness is None:
            raise PreconditionError(f"{self.event_name}: occurrence without a witness")

    def to_record(self, seed=None, trial=None, **scale):
        """JSON-lines record ``{event, occurred, censored, witness, <scale>, seed, trial}``."""
        rec = {"event": self.event_name, "occurred": bool(self.occurred),
               "censored": bool(self.censored),
               "witness": None if self.witness is None else [_plain(w) for w in self.witness]}
        rec.update({k: _plain(v) for k, v in scale.items()})
        rec["seed"] = seed
        rec["trial"] = trial
        return json.dumps(rec, sort_keys=False)


def _plain(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


# ---------------------------------------------------------------- annulus geometry on a soup

class _Scale:
    """Per-(soup, annulus) lookups: which loops and clusters reach each circle."""

    def __init__(self, soup: LoopSoup, a: AnnulusSpec):
        self.soup = soup
        self.a = a
        self.field = analyze(soup)
        xs, ys = soup.vertex_arrays
        d2 = (xs - a.center[0]) ** 2 + (ys - a.center[1]) ** 2
        self.d2 = d2
        n = len(soup)
        if n:
            starts = soup.offsets[:-1]
            self.loop_in = np.logical_or.reduceat(d2 <= a.inner ** 2, starts)
            self.loop_out = np.logical_or.reduceat(d2 >= a.outer ** 2, starts)
        else:
            self.loop_in = self.loop_out = np.zeros(0, bool)
        f = self.field
        self.cl_in = np.zeros(f.n_clusters, bool)
        self.cl_out = np.zeros(f.n_clusters, bool)
        self.cl_in[f.loop_cluster[self.loop_in]] = True
        self.cl_out[f.loop_cluster[self.loop_out]] = True

    @property
    def crossing_loops(self):
        return np.flatnonzero(self.loop_in & self.loop_out)

    @property
    def crossing_outermost(self):
        return np.flatnonzero(self.cl_in & self.cl_out & self.field.outermost)

    def loop_crossings(self, i):
        xs, ys = self.soup.vertex_arrays
        lo, hi = self.soup.offsets[i], self.soup.offsets[i + 1]
        return int(_crossings(xs[lo:hi], ys[lo:hi], self.a.center[0], self.a.center[1],
                              self.a.inner ** 2, self.a.outer ** 2))

    def contour_crossings(self, c):
        cells = self.field.contour(c).cells
        return int(_crossings(cells[:, 0], cells[:, 1], self.a.center[0], self.a.center[1],
                              self.a.inner ** 2, self.a.outer ** 2))

    def contour_reaches_both(self, c):
        xs, ys = self.field.boundary_cells(c)
        cls = self.a.classify(xs, ys)
        return bool((cls == INSIDE).any() and (cls == OUTSIDE).any())


def _scale(soup, a):
    cache = soup.meta.setdefault("_scales", {})
    key = (a.center, a.inner, a.outer)
    sc = cache.get(key)
    if sc is None:
        if len(cache) > 64:
            cache.clear()
        sc = cache[key] = _Scale(soup, a)
    return sc


def is_censored(domain: LatticeDomain, a: AnnulusSpec) -> bool:
    """True when the disk of radius ``2 * outer`` around the centre leaves the box's far field."""
    if a.mode is Mode.BOUNDARY:
        if domain.role is not Role.HALF_PLANE:
            raise DomainError("boundary-mode annulus needs a half-plane box")
        a.check_mode(domain)
    return domain.margin_distance(*a.center) < 2.0 * a.outer


def _censored(name):
    return EventOutcome(name, False, None, True)


# ---------------------------------------------------------------- arm events

def detect_two_arm(s: LoopSoup, a: AnnulusSpec) -> EventOutcome:
    """Outer boundary of some outermost cluster meets both circles."""
    name = "A2+" if a.mode is Mode.BOUNDARY else "A2"
    if is_censored(s.domain, a):
        return _censored(name)
    sc = _scale(s, a)
    for c in sc.crossing_outermost:
        if sc.contour_reaches_both(c):
            return EventOutcome(name, True, (int(c),))
    return EventOutcome(name, False)


def detect_E1(s: LoopSoup, a: AnnulusSpec, proxy=LoopProxy.RAW_LOOP) -> EventOutcome:
    """A single loop (or outermost-cluster contour) making at least four crossings."""
    proxy = LoopProxy(proxy)
    name = ("E1+" if a.mode is Mode.BOUNDARY else "E1") + f"[{proxy.value}]"
    if is_censored(s.domain, a):
        return _censored(name)
    sc = _scale(s, a)
    if proxy is LoopProxy.RAW_LOOP:
        for i in sc.crossing_loops:
            if sc.loop_crossings(i) >= 4:
                return EventOutcome(name, True, (int(i),))
    else:
        for c in sc.crossing_outermost:
            if sc.contour_crossings(c) >= 4:
                return EventOutcome(name, True, (int(c),))
    return EventOutcome(name, False)


def crossing_witnesses(s: LoopSoup, a: AnnulusSpec, proxy=LoopProxy.OUTER_CLUSTER):
    """Ids of loops (RawLoop) or outermost clusters (OuterCluster) crossing the annulus."""
    sc = _scale(s, a)
    if LoopProxy(proxy) is LoopProxy.RAW_LOOP:
        return [int(i) for i in sc.crossing_loops]
    return [int(c) for c in sc.crossing_outermost]


def detect_E2(s: LoopSoup, a: AnnulusSpec, proxy=LoopProxy.OUTER_CLUSTER) -> EventOutcome:
    """At least two distinct loops or outermost clusters each crossing the annulus."""
    proxy = LoopProxy(proxy)
    if proxy is LoopProxy.OUTER_CONTOUR:
        proxy = LoopProxy.OUTER_CLUSTER
    name = ("E2+" if a.mode is Mode.BOUNDARY else "E2") + f"[{proxy.value}]"
    if is_censored(s.domain, a):
        return _censored(name)
    w = crossing_witnesses(s, a, proxy)
    if len(w) >= 2:
        return EventOutcome(name, True, (w[0], w[1]))
    return EventOutcome(name, False)


def g2_centers(a: AnnulusSpec):
    """Lattice-rounded centres of the two side balls of radius r/10."""
    r = a.outer
    if a.mode is Mode.BOUNDARY:
        angles = (math.pi / 4, 3 * math.pi / 4)
    else:
        angles = (0.0, math.pi)
    return tuple((a.center[0] + int(round(r * math.cos(t))), a.center[1] + int(round(r * math.sin(t))))
                 for t in angles)


def _in_region(xs, ys, a, own, other):
    r = a.outer
    rr = (r / 10.0) ** 2
    d_c = (xs - a.center[0]) ** 2 + (ys - a.center[1]) ** 2
    d_own = (xs - own[0]) ** 2 + (ys - own[1]) ** 2
    d_oth = (xs - other[0]) ** 2 + (ys - other[1]) ** 2
    return bool(np.all(((d_c <= r * r) | (d_own <= rr)) & (d_oth > rr)))


def loop_diameters(s: LoopSoup):
    """Euclidean diameter of every loop's vertex set."""
    xs, ys = s.vertex_arrays
    out = np.zeros(len(s))
    for i in range(len(s)):
        lo, hi = s.offsets[i], s.offsets[i + 1]
        px, py = xs[lo:hi], ys[lo:hi]
        if hi - lo <= 2:
            out[i] = 1.0
            continue
        pts = np.unique(np.stack([px, py], axis=1), axis=0)
        if len(pts) > 400:
            # diameter is attained on the convex hull
            from scipy.spatial import ConvexHull
            try:
                pts = pts[ConvexHull(pts).vertices]
            except Exception:
                pass
        diff = pts[:, None, :] - pts[None, :, :]
        out[i] = math.sqrt(float((diff ** 2).sum(axis=2).max()))
    return out


def detect_G2(s: LoopSoup, a: AnnulusSpec, witnesses) -> EventOutcome:
    """Separation event for two crossing witness clusters.

    Witness ``j`` must stay in ``(B_r u B_{r/10}(c_j)) minus B_{r/10}(c_other)``
    (closed balls) for one of the two labellings, and every loop outside
    the witnesses must have diameter below ``r/40``.
    """
    name = "G2+" if a.mode is Mode.BOUNDARY else "G2"
    if is_censored(s.domain, a):
        return _censored(name)
    f = analyze(s)
    sc = _scale(s, a)
    w1, w2 = (int(w) for w in witnesses)
    if w1 == w2:
        raise PreconditionError("G2 needs two distinct witnesses")
    for w in (w1, w2):
        if not (0 <= w < f.n_clusters and sc.cl_in[w] and sc.cl_out[w]):
            raise PreconditionError(f"witness cluster {w} does not cross the annulus")
    c1, c2 = g2_centers(a)
    p1 = f.cluster_cells(w1)
    p2 = f.cluster_cells(w2)
    placed = ((_in_region(*p1, a, c1, c2) and _in_region(*p2, a, c2, c1))
              or (_in_region(*p1, a, c2, c1) and _in_region(*p2, a, c1, c2)))
    if not placed:
        return EventOutcome(name, False)
    others = ~np.isin(f.loop_cluster, (w1, w2))
    if others.any():
        limit = a.outer / 40.0
        idx = np.flatnonzero(others)
        # bounding-box extent is a lower bound on the diameter
        xs, ys = s.vertex_arrays
        starts = s.offsets[:-1]
        ext = np.maximum(np.maximum.reduceat(xs, starts) - np.minimum.reduceat(xs, starts),
                         np.maximum.reduceat(ys, starts) - np.minimum.reduceat(ys, starts))
        if np.any(ext[idx] >= limit):
            return EventOutcome(name, False)
        diam = loop_diameters(s.subset(others))
        if np.any(diam >= limit):
            return EventOutcome(name, False)
    return EventOutcome(name, True, (w1, w2))


def detect_E2_G2(s: LoopSoup, a: AnnulusSpec) -> EventOutcome:
    """E2 (outermost clusters) intersected with G2 on the smallest witness pair."""
    name = "E2G2+" if a.mode is Mode.BOUNDARY else "E2G2"
    e2 = detect_E2(s, a, LoopProxy.OUTER_CLUSTER)
    if e2.censored:
        return EventOutcome(name, False, None, True)
    if not e2.occurred:
        return EventOutcome(name, False)
    g = detect_G2(s, a, e2.witness)
    return EventOutcome(name, g.occurred, g.witness)


def lambda_contained(s: LoopSoup, a: AnnulusSpec, radius) -> bool:
    """Whether the closed inner disk together with every cluster meeting it lies in B_radius."""
    sc = _scale(s, a)
    f = sc.field
    if a.inner > radius:
        return False
    r2 = radius * radius
    for c in np.flatnonzero(sc.cl_in):
        b = f.bbox[c]
        far = max((b[0] - a.center[0]) ** 2, (b[2] - a.center[0]) ** 2) + \
            max((b[1] - a.center[1]) ** 2, (b[3] - a.center[1]) ** 2)
        if far <= r2:
            continue
        xs, ys = f.cluster_cells(c)
        if np.any((xs - a.center[0]) ** 2 + (ys - a.center[1]) ** 2 > r2):
            return False
    return True


def detect_E2_truncated(s: LoopSoup, a: AnnulusSpec) -> EventOutcome:
    """E2 together with the clusters hooked to the inner disk staying inside B_{2r}."""
    name = "E2trunc+" if a.mode is Mode.BOUNDARY else "E2trunc"
    e2 = detect_E2(s, a, LoopProxy.OUTER_CLUSTER)
    if e2.censored:
        return EventOutcome(name, False, None, True)
    if e2.occurred and lambda_contained(s, a, 2.0 * a.outer):
        return EventOutcome(name, True, e2.witness)
    return EventOutcome(name, False)


def detect_E2_local(s: LoopSoup, a: AnnulusSpec) -> EventOutcome:
    """E2 for the soup in the disk B_{2r}: only loops contained in that disk are kept."""
    name = "E2local+" if a.mode is Mode.BOUNDARY else "E2local"
    if is_censored(s.domain, a):
        return _censored(name)
    cache = s.meta.setdefault("_local", {})
    key = (a.center, 2.0 * a.outer)
    sub = cache.get(key)
    if sub is None:
        sub = cache[key] = s.restricted_to_disk(a.center, 2.0 * a.outer)
    w = crossing_witnesses(sub, a, LoopProxy.OUTER_CLUSTER)
    if len(w) >= 2:
        return EventOutcome(name, True, (w[0], w[1]))
    return EventOutcome(name, False)


# ---------------------------------------------------------------- separation at scale s

def _disk_sq(points, center):
    p = np.asarray(points).reshape(-1, 2)
    return (p[:, 0] - center[0]) ** 2 + (p[:, 1] - center[1]) ** 2


def on_circle(p, center, s):
    """Inner boundary vertex of the closed disk B_s: inside, with a 4-neighbour outside."""
    d2 = (p[0] - center[0]) ** 2 + (p[1] - center[1]) ** 2
    if d2 > s * s:
        return False
    for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        if (p[0] + dx - center[0]) ** 2 + (p[1] + dy - center[1]) ** 2 > s * s:
            return True
    return False


@dataclass(frozen=True)
class ExcursionPair:
    """Two lattice paths inside the closed disk ``B_s`` with endpoints on its boundary."""

    eta1: tuple
    eta2: tuple
    s: float
    eps: float
    center: tuple = (0, 0)
    delta: float = 0.0

    def __post_init__(self):
        for eta in (self.eta1, self.eta2):
            pts = np.asarray(eta, dtype=np.int64).reshape(-1, 2)
            if len(pts) == 0:
                raise PreconditionError("empty excursion")
            if np.any(_disk_sq(pts, self.center) > self.s * self.s):
                raise PreconditionError("excursion leaves the closed disk B_s")
            if not (on_circle(pts[0], self.center, self.s) and on_circle(pts[-1], self.center, self.s)):
                raise PreconditionError("excursion endpoints must lie on the boundary of B_s")
        object.__setattr__(self, "eta1", tuple(map(tuple, np.asarray(self.eta1).reshape(-1, 2).tolist())))
        object.__setattr__(self, "eta2", tuple(map(tuple, np.asarray(self.eta2).reshape(-1, 2).tolist())))


class LoopConfiguration:
    """Clusters of a small loop configuration, for hull computations ``Lambda(A, L)``."""

    def __init__(self, loop_vertex_sets):
        self.loops = [frozenset(v) for v in loop_vertex_sets]
        parent = list(range(len(self.loops)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        owner = {}
        for i, vs in enumerate(self.loops):
            for v in vs:
                j = owner.setdefault(v, i)
                if j != i:
                    a, b = find(i), find(j)
                    if a != b:
                        parent[max(a, b)] = min(a, b)
        groups = {}
        for i in range(len(self.loops)):
            groups.setdefault(find(i), []).append(i)
        self.clusters = [frozenset().union(*(self.loops[i] for i in g)) for g in groups.values()]
        self.vertex_cluster = {}
        for k, vs in enumerate(self.clusters):
            for v in vs:
                self.vertex_cluster[v] = k

    @classmethod
    def from_soup(cls, soup: LoopSoup):
        return cls({tuple(p) for p in soup.loop_vertices(i).tolist()} for i in range(len(soup)))

    def hull(self, points):
        """``Lambda(A, L)``: ``A`` united with every cluster it meets."""
        a = {tuple(p) for p in points}
        hit = {self.vertex_cluster[p] for p in a if p in self.vertex_cluster}
        for k in hit:
            a |= self.clusters[k]
        return a


def lattice_ball(center, radius, open_=True):
    """Lattice points at distance < radius (open) or <= radius from ``center``."""
    if radius <= 0:
        return set()
    R = int(math.ceil(radius))
    out = set()
    for dx in range(-R, R + 1):
        for dy in range(-R, R + 1):
            d2 = dx * dx + dy * dy
            if d2 < radius * radius or (not open_ and d2 <= radius * radius):
                out.add((center[0] + dx, center[1] + dy))
    return out


def _lambda_meets_eps(hull, center, eps):
    return any((p[0] - center[0]) ** 2 + (p[1] - center[1]) ** 2 <= eps * eps for p in hull)


def is_admissible(p: ExcursionPair, conf: LoopConfiguration) -> bool:
    h1 = conf.hull(p.eta1)
    h2 = conf.hull(p.eta2)
    return (_lambda_meets_eps(h1, p.center, p.eps) and _lambda_meets_eps(h2, p.center, p.eps)
            and h1.isdisjoint(h2))


def _config_for(ls, center, s):
    if isinstance(ls, LoopConfiguration):
        return ls
    return LoopConfiguration.from_soup(ls.restricted_to_disk(center, s))


def delta_separated(p: ExcursionPair, ls, delta=None) -> bool:
    """Whether an admissible pair stays apart after fattening its endpoints by ``delta * s``.

    ``ls`` is the soup (only loops inside the closed disk ``B_s`` are used)
    or a prepared :class:`LoopConfiguration`.
    """
    delta = p.delta if delta is None else float(delta)
    conf = _config_for(ls, p.center, p.s)
    if not is_admissible(p, conf):
        raise PreconditionError("excursion pair is not admissible")
    return _separated(p, conf, delta)


def _separated(p, conf, delta):
    rad = delta * p.s
    side1 = set(p.eta1) | lattice_ball(p.eta1[0], rad) | lattice_ball(p.eta1[-1], rad)
    side2 = set(p.eta2) | lattice_ball(p.eta2[0], rad) | lattice_ball(p.eta2[-1], rad)
    return conf.hull(side1).isdisjoint(side2)


def excursions(vertices, center, s):
    """Maximal runs of a closed vertex sequence inside the closed disk ``B_s``.

    Returns an empty list when the loop never leaves the disk.
    """
    v = [tuple(p) for p in np.asarray(vertices).reshape(-1, 2).tolist()]
    inside = [(x - center[0]) ** 2 + (y - center[1]) ** 2 <= s * s for x, y in v]
    n = len(v)
    if all(inside) or not any(inside):
        return []
    start = next(i for i in range(n) if not inside[i])
    out = []
    run = []
    for k in range(1, n + 1):
        i = (start + k) % n
        if inside[i]:
            run.append(v[i])
        elif run:
            out.append(tuple(run))
            run = []
    if run:
        out.append(tuple(run))
    return out


def _good_pair_search(candidates, conf, delta, eps, s, center):
    """Lexicographically smallest ``(id1, id2)`` forming a delta-good pair, or ``None``.

    ``candidates`` maps loop id to ``(vertex set, excursions)``.
    """
    ids = sorted(candidates)
    hulls = {}
    usable = {}
    for i in ids:
        vs, exc = candidates[i]
        hulls[i] = conf.hull(vs)
        usable[i] = [e for e in exc if _lambda_meets_eps(conf.hull(e), center, eps)]
    for a_i, i in enumerate(ids):
        if not usable[i]:
            continue
        for j in ids[a_i + 1:]:
            if not usable[j] or not hulls[i].isdisjoint(hulls[j]):
                continue
            for e1 in usable[i]:
                for e2 in usable[j]:
                    p = ExcursionPair(e1, e2, s, eps, center)
                    if not conf.hull(e1).isdisjoint(conf.hull(e2)):
                        continue
                    if _separated(p, conf, delta):
                        return (i, j), p
                    q = ExcursionPair(e2, e1, s, eps, center)
                    if _separated(q, conf, delta):
                        return (i, j), q
    return None


def find_good_pair(next_scale_loops, ls, delta, eps, s, center=(0, 0)):
    """A delta-good pair of loops from the next-scale slice, or ``None``.

    Parameters
    ----------
    next_scale_loops : LoopSoup or sequence of vertex arrays
        Loops of the next scale; ids are positions in this collection.
    ls : LoopSoup or LoopConfiguration
        Configuration inside the closed disk ``B_s``.

    Returns
    -------
    tuple or None
        ``((id1, id2), ExcursionPair)`` for the lexicographically smallest pair.
    """
    if not eps < s:
        raise DomainError("need eps < s")
    conf = _config_for(ls, center, s)
    if isinstance(next_scale_loops, LoopSoup):
        loops = [next_scale_loops.loop_vertices(i) for i in range(len(next_scale_loops))]
    else:
        loops = [np.asarray(v).reshape(-1, 2) for v in next_scale_loops]
    candidates = {}
    for i, v in enumerate(loops):
        exc = excursions(v, center, s)
        if exc:
            candidates[i] = ({tuple(p) for p in v.tolist()}, exc)
    return _good_pair_search(candidates, conf, delta, eps, s, center)


@dataclass(frozen=True)
class Estimate:
    p: float
    lo: float
    hi: float
    successes: int
    trials: int
    censored: bool = False
    delta: float = None


def _next_box(center, s):
    half = max(4, int(math.floor(2.0 * s)))
    side = 2 * half + 1
    return LatticeDomain(side, side, Role.FULL_PLANE, tuple(center), (center[0] - half, center[1] - half))


def _combined(ls_in, slice_soup, box):
    roots = np.vstack([ls_in.roots, slice_soup.roots])
    lengths = np.concatenate([ls_in.lengths, slice_soup.lengths])
    steps = np.concatenate([ls_in.steps, slice_soup.steps])
    offsets = np.concatenate(([0], np.cumsum(lengths))).astype(np.int64)
    return LoopSoup(box, slice_soup.intensity, slice_soup.n_max, slice_soup.seed, slice_soup.stream,
                    roots, lengths, offsets, steps)


def extension_successes(ls: LoopSoup, deltas, eps, s, trials, seed, center=(0, 0), intensity=None,
                        n_max=None):
    """Per-delta success counts of the extension experiment on one coupled set of resamples."""
    deltas = [float(d) for d in deltas]
    alpha = ls.intensity if intensity is None else float(intensity)
    ls_in = ls.restricted_to_disk(center, s)
    box = _next_box(center, s)
    ls_in = LoopSoup(box, ls_in.intensity, ls_in.n_max, ls_in.seed, ls_in.stream,
                     ls_in.roots, ls_in.lengths, ls_in.offsets, ls_in.steps)
    conf = LoopConfiguration.from_soup(ls_in)
    counts = np.zeros(len(deltas), dtype=np.int64)
    order = np.argsort(deltas)[::-1]
    for t in range(int(trials)):
        fresh = sample_soup(box, alpha, n_max=n_max, seed=rng.trial_seed(seed, t, label=0xE7))
        inside_2s = fresh.restricted_to_disk(center, 2.0 * s)
        xs, ys = inside_2s.vertex_arrays
        if len(inside_2s):
            in_s = np.logical_and.reduceat(_disk_sq(np.stack([xs, ys], 1), center) <= s * s,
                                           inside_2s.offsets[:-1])
        else:
            in_s = np.zeros(0, bool)
        slice_soup = inside_2s.subset(~in_s, box)
        if len(slice_soup) < 2:
            continue
        comb = _combined(ls_in, slice_soup, box)
        field = analyze(comb)
        n_in = len(ls_in)
        candidates = {}
        for i in range(len(slice_soup)):
            c = field.loop_cluster[n_in + i]
            if not field.outermost[c]:
                continue
            v = slice_soup.loop_vertices(i)
            exc = excursions(v, center, s)
            if exc:
                candidates[i] = ({tuple(p) for p in v.tolist()}, exc)
        if len(candidates) < 2:
            continue
        for k in order:
            found = _good_pair_in_distinct_clusters(candidates, conf, deltas[k], eps, s, center,
                                                    field, n_in)
            if found:
                counts[[j for j in range(len(deltas)) if deltas[j] <= deltas[k]]] += 1
                break
    return counts


def _good_pair_in_distinct_clusters(candidates, conf, delta, eps, s, center, field, n_in):
    # pairs whose combined clusters coincide are excluded before the geometric search
    by_cluster = {}
    for i in candidates:
        by_cluster.setdefault(int(field.loop_cluster[n_in + i]), []).append(i)
    if len(by_cluster) < 2:
        return False
    ids = sorted(candidates)
    for a_i, i in enumerate(ids):
        for j in ids[a_i + 1:]:
            if field.loop_cluster[n_in + i] == field.loop_cluster[n_in + j]:
                continue
            if _good_pair_search({i: candidates[i], j: candidates[j]}, conf, delta, eps, s, center):
                return True
    return False


def estimate_extension_probability(ls: LoopSoup, delta, eps, s, trials, seed, center=(0, 0),
                                   confidence=0.95, n_max=None) -> Estimate:
    """Monte Carlo extension probability across scale ``s`` by delta-good pairs.

    Each trial resamples the loops contained in ``B_{2s}`` but not in ``B_s``
    and succeeds when a delta-good pair exists whose clusters in the combined
    configuration are distinct and outermost.
    """
    from .mc import wilson_interval

    if trials < 1:
        raise DomainError("trials must be >= 1")
    delta = float(delta)
    if delta > 0.25:
        warnings.warn(f"delta={delta} clamped to 1/4", stacklevel=2)
        delta = 0.25
    if ls.domain.margin_distance(*center) < 2.0 * s:
        return Estimate(float("nan"), 0.0, 1.0, 0, 0, True, delta)
    k = int(extension_successes(ls, [delta], eps, s, trials, seed, center, n_max=n_max)[0])
    lo, hi = wilson_interval(k, trials, confidence)
    return Estimate(k / trials, lo, hi, k, int(trials), False, delta)


def estimate_quality(ls: LoopSoup, eps, s, deltas, trials, seed, center=(0, 0), n_max=None) -> float:
    """Largest grid delta whose estimated extension probability is at least delta (0 if none)."""
    deltas = [float(d) for d in deltas]
    if any(b <= a for a, b in zip(deltas, deltas[1:])) or not deltas:
        raise DomainError("delta grid must be strictly ascending")
    if deltas[0] < 0 or deltas[-1] > 0.25:
        raise DomainError("delta grid must lie in [0, 1/4]")
    if ls.domain.margin_distance(*center) < 2.0 * s:
        raise DomainError("scale 2s leaves the safe region of the domain")
    counts = extension_successes(ls, deltas, eps, s, trials, seed, center, n_max=n_max)
    best = 0.0
    for d, k in zip(deltas, counts):
        if k / trials >= d:
            best = d
        else:
            break
    return best
