"""Loop clusters, fillings, outermost clusters and outer-boundary contours.

Two loops are adjacent when they share a vertex. A cluster's filling is the
set of vertices that cannot reach the far field by nearest-neighbour paths
avoiding the cluster. Contours run along the edges of the unit cells
centred on the filled vertices, counter-clockwise.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numba import njit
from scipy import ndimage

from .errors import DomainError
from .loopsoup import LatticeDomain, LoopSoup, RootedLoop, STEP_LETTERS

INSIDE, ANNULUS, OUTSIDE = 0, 1, 2


class Mode(enum.Enum):
    INTERIOR = "Interior"
    BOUNDARY = "Boundary"


@dataclass(frozen=True)
class AnnulusSpec:
    """Annulus between the closed inner disk of radius ``inner`` and the circle of radius ``outer``."""

    center: tuple
    inner: float
    outer: float
    mode: Mode = Mode.INTERIOR

    def __post_init__(self):
        if not (0.0 < self.inner < self.outer):
            raise DomainError(f"need 0 < inner < outer, got {self.inner}, {self.outer}")
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "center", (int(self.center[0]), int(self.center[1])))

    def classify(self, xs, ys):
        """Vectorized INSIDE / ANNULUS / OUTSIDE class of lattice points."""
        d2 = (np.asarray(xs) - self.center[0]) ** 2 + (np.asarray(ys) - self.center[1]) ** 2
        return np.where(d2 <= self.inner ** 2, INSIDE, np.where(d2 >= self.outer ** 2, OUTSIDE, ANNULUS))

    def check_mode(self, domain: LatticeDomain):
        if self.mode is Mode.BOUNDARY and self.center[1] != domain.corner[1]:
            raise DomainError("boundary annulus must be centred on the bottom row")


@dataclass(frozen=True)
class Cluster:
    id: int
    loop_ids: frozenset
    vertex_set: frozenset
    bbox: tuple  # (xmin, ymin, xmax, ymax), inclusive

    def __post_init__(self):
        if not self.loop_ids:
            raise DomainError("cluster without loops")


@dataclass(frozen=True)
class Contour:
    """Closed counter-clockwise edge path around a filled vertex set.

    ``corners[k]`` are dual-lattice indices: corner ``(i, j)`` is the point
    ``(i - 1/2, j - 1/2)``. ``cells[k]`` is the filled vertex on the left of
    the edge from ``corners[k]`` to ``corners[k + 1]``.
    """

    corners: np.ndarray
    cells: np.ndarray
    censored: bool = False

    def __len__(self):
        return int(self.corners.shape[0])

    @property
    def points(self):
        return self.corners.astype(np.float64) - 0.5

    def steps(self):
        d = np.diff(np.vstack([self.corners, self.corners[:1]]), axis=0)
        code = {(1, 0): "E", (0, 1): "N", (-1, 0): "W", (0, -1): "S"}
        return "".join(code[(int(a), int(b))] for a, b in d)

    def to_line(self, ident):
        """Same line layout as a soup loop: ``id start_x start_y steps`` (dual coordinates)."""
        return f"{ident} {self.corners[0, 0]} {self.corners[0, 1]} {self.steps()}"

    def signed_area(self):
        p = self.points
        x, y = p[:, 0], p[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


# ---------------------------------------------------------------- kernels

@njit(cache=True)
def _find(parent, i):
    r = i
    while parent[r] != r:
        r = parent[r]
    while parent[i] != r:
        nxt = parent[i]
        parent[i] = r
        i = nxt
    return r


@njit(cache=True)
def _cluster_kernel(xs, ys, offsets, x0, y0, width, height):
    n_loops = offsets.shape[0] - 1
    owner = -np.ones((height, width), dtype=np.int64)
    parent = np.arange(n_loops)
    for i in range(n_loops):
        for p in range(offsets[i], offsets[i + 1]):
            gx = xs[p] - x0
            gy = ys[p] - y0
            o = owner[gy, gx]
            if o < 0:
                owner[gy, gx] = i
            else:
                a = _find(parent, o)
                b = _find(parent, i)
                if a != b:
                    if a < b:
                        parent[b] = a
                    else:
                        parent[a] = b
    # canonical ids: order of smallest member loop
    root_to_id = -np.ones(n_loops, dtype=np.int64)
    loop_cluster = np.empty(n_loops, dtype=np.int64)
    nc = 0
    for i in range(n_loops):
        r = _find(parent, i)
        if root_to_id[r] < 0:
            root_to_id[r] = nc
            nc += 1
        loop_cluster[i] = root_to_id[r]
    grid = -np.ones((height, width), dtype=np.int64)
    bbox = np.empty((nc, 4), dtype=np.int64)
    for c in range(nc):
        bbox[c, 0] = 1 << 40
        bbox[c, 1] = 1 << 40
        bbox[c, 2] = -(1 << 40)
        bbox[c, 3] = -(1 << 40)
    for i in range(n_loops):
        c = loop_cluster[i]
        for p in range(offsets[i], offsets[i + 1]):
            x = xs[p]
            y = ys[p]
            grid[y - y0, x - x0] = c
            if x < bbox[c, 0]:
                bbox[c, 0] = x
            if y < bbox[c, 1]:
                bbox[c, 1] = y
            if x > bbox[c, 2]:
                bbox[c, 2] = x
            if y > bbox[c, 3]:
                bbox[c, 3] = y
    return loop_cluster, grid, bbox, nc


@njit(cache=True)
def _exterior(grid, x0, y0, c, bx0, by0, bx1, by1):
    """Exterior mask of cluster ``c`` on its bbox padded by one cell.

    Cells outside the domain count as free space.
    """
    h, w = grid.shape
    pw = bx1 - bx0 + 3
    ph = by1 - by0 + 3
    ext = np.zeros((ph, pw), dtype=np.bool_)
    stack = np.empty(pw * ph, dtype=np.int64)
    top = 0
    for j in range(ph):
        for i in range(pw):
            if i == 0 or j == 0 or i == pw - 1 or j == ph - 1:
                ext[j, i] = True
                stack[top] = j * pw + i
                top += 1
    while top > 0:
        top -= 1
        q = stack[top]
        j = q // pw
        i = q % pw
        for k in range(4):
            ni = i + (1 if k == 0 else (-1 if k == 2 else 0))
            nj = j + (1 if k == 1 else (-1 if k == 3 else 0))
            if ni < 0 or nj < 0 or ni >= pw or nj >= ph or ext[nj, ni]:
                continue
            gx = bx0 - 1 + ni - x0
            gy = by0 - 1 + nj - y0
            if 0 <= gx < w and 0 <= gy < h and grid[gy, gx] == c:
                continue
            ext[nj, ni] = True
            stack[top] = nj * pw + ni
            top += 1
    return ext


@njit(cache=True)
def _enclosed_kernel(grid, x0, y0, bbox, nc):
    """``enclosed[d]`` is the id of a cluster whose filling contains cluster d, else -1."""
    h, w = grid.shape
    enclosed = -np.ones(nc, dtype=np.int64)
    for c in range(nc):
        bx0, by0, bx1, by1 = bbox[c, 0], bbox[c, 1], bbox[c, 2], bbox[c, 3]
        if bx1 - bx0 < 2 or by1 - by0 < 2:
            continue
        ext = _exterior(grid, x0, y0, c, bx0, by0, bx1, by1)
        for y in range(by0 + 1, by1):
            for x in range(bx0 + 1, bx1):
                if not ext[y - by0 + 1, x - bx0 + 1]:
                    d = grid[y - y0, x - x0]
                    if d >= 0 and d != c and enclosed[d] < 0:
                        enclosed[d] = c
    return enclosed


@njit(cache=True)
def _trace_kernel(mask):
    """Counter-clockwise boundary of the single 4-connected filled component of ``mask``.

    ``mask`` must have an empty one-cell frame. Returns corner indices and
    the left-hand cells in mask coordinates.
    """
    ph, pw = mask.shape
    sx = -1
    sy = -1
    for j in range(ph):
        for i in range(pw):
            if mask[j, i]:
                sx = i
                sy = j
                break
        if sx >= 0:
            break
    cap = 2 * (ph + pw) + 16
    corners = np.empty((cap, 2), dtype=np.int64)
    cells = np.empty((cap, 2), dtype=np.int64)
    cx, cy = sx, sy
    dx, dy = 1, 0
    n = 0
    while True:
        if n >= cap:
            cap *= 2
            c2 = np.empty((cap, 2), dtype=np.int64)
            c2[:n] = corners[:n]
            corners = c2
            l2 = np.empty((cap, 2), dtype=np.int64)
            l2[:n] = cells[:n]
            cells = l2
        corners[n, 0] = cx
        corners[n, 1] = cy
        # left cell of edge leaving (cx, cy) with heading (dx, dy)
        cells[n, 0] = cx + (dx - dy - 1) // 2
        cells[n, 1] = cy + (dy + dx - 1) // 2
        n += 1
        cx += dx
        cy += dy
        alx = cx + (dx - dy - 1) // 2
        aly = cy + (dy + dx - 1) // 2
        arx = cx + (dx + dy - 1) // 2
        ary = cy + (dy - dx - 1) // 2
        al = mask[aly, alx]
        ar = mask[ary, arx]
        if ar:
            dx, dy = dy, -dx
        elif not al:
            dx, dy = -dy, dx
        if cx == sx and cy == sy and dx == 1 and dy == 0:
            break
    return corners[:n], cells[:n]


@njit(cache=True)
def _crossings(xs, ys, cx, cy, inner2, outer2):
    n = xs.shape[0]
    first = -1
    last = -1
    count = 0
    for k in range(n):
        d2 = (xs[k] - cx) ** 2 + (ys[k] - cy) ** 2
        if d2 <= inner2:
            s = 0
        elif d2 >= outer2:
            s = 2
        else:
            continue
        if first < 0:
            first = s
        elif s != last:
            count += 1
        last = s
    if first >= 0 and last != first:
        count += 1
    return count


# ---------------------------------------------------------------- analysis cache

class ClusterField:
    """Cluster decomposition of one soup, shared by all detectors.

    Attributes
    ----------
    loop_cluster : ndarray
        Cluster id of every loop.
    grid : ndarray
        ``grid[y - y0, x - x0]`` is the cluster covering the vertex, or -1.
    bbox : ndarray
        ``(xmin, ymin, xmax, ymax)`` per cluster.
    enclosed_by : ndarray
        Id of a cluster whose filling contains this one, or -1 for outermost clusters.
    """

    def __init__(self, soup: LoopSoup):
        self.soup = soup
        d = soup.domain
        xs, ys = soup.vertex_arrays
        self.x0, self.y0 = d.corner
        lc, grid, bbox, nc = _cluster_kernel(xs, ys, soup.offsets, self.x0, self.y0, d.width, d.height)
        self.loop_cluster = lc
        self.grid = grid
        self.bbox = bbox
        self.n_clusters = int(nc)
        self.enclosed_by = _enclosed_kernel(grid, self.x0, self.y0, bbox, self.n_clusters)

    @property
    def outermost(self):
        return self.enclosed_by < 0

    @cached_property
    def members(self):
        order = np.argsort(self.loop_cluster, kind="stable")
        cuts = np.searchsorted(self.loop_cluster[order], np.arange(self.n_clusters + 1))
        return [order[cuts[c]:cuts[c + 1]] for c in range(self.n_clusters)]

    def cluster_cells(self, c):
        b = self.bbox[c]
        sub = self.grid[b[1] - self.y0:b[3] - self.y0 + 1, b[0] - self.x0:b[2] - self.x0 + 1]
        jj, ii = np.nonzero(sub == c)
        return ii + b[0], jj + b[1]

    def filling_mask(self, c):
        """Filling of cluster ``c`` on its bbox padded by one cell, plus the mask origin."""
        b = self.bbox[c]
        ext = _exterior(self.grid, self.x0, self.y0, c, b[0], b[1], b[2], b[3])
        return ~ext, (int(b[0]) - 1, int(b[1]) - 1)

    def contour(self, c):
        mask, (ox, oy) = self.filling_mask(c)
        corners, cells = _trace_kernel(mask)
        corners = corners + np.array([ox, oy])
        cells = cells + np.array([ox, oy])
        b = self.bbox[c]
        d = self.soup.domain
        touches = b[0] == d.corner[0] or b[2] == d.x1 - 1 or b[3] == d.y1 - 1
        if d.role.value == "FullPlaneBox":
            touches = touches or b[1] == d.corner[1]
        return Contour(corners, cells, bool(touches))

    def boundary_cells(self, c):
        """Filled vertices of cluster ``c``'s filling that touch its exterior."""
        mask, (ox, oy) = self.filling_mask(c)
        inner = ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(2, 1))
        jj, ii = np.nonzero(mask & ~inner)
        return ii + ox, jj + oy

    def cluster(self, c):
        ids = self.members[c]
        xs, ys = self.cluster_cells(c)
        b = self.bbox[c]
        return Cluster(int(c), frozenset(int(i) for i in ids),
                       frozenset(zip(xs.tolist(), ys.tolist())), tuple(int(v) for v in b))


def analyze(soup: LoopSoup) -> ClusterField:
    """Cluster field of a soup, cached on the soup object."""
    field = soup.meta.get("_cluster_field")
    if field is None:
        field = ClusterField(soup)
        soup.meta["_cluster_field"] = field
    return field


# ---------------------------------------------------------------- public operations

def build_clusters(s: LoopSoup):
    """Maximal groups of loops chained by shared vertices, ordered by smallest member id."""
    f = analyze(s)
    return [f.cluster(c) for c in range(f.n_clusters)]


def _vertex_array(vertices):
    v = np.array(sorted(vertices), dtype=np.int64).reshape(-1, 2)
    return v


def _mask_of(vertices, pad=1):
    v = _vertex_array(vertices)
    x0, y0 = v.min(axis=0) - pad
    x1, y1 = v.max(axis=0) + pad
    mask = np.zeros((y1 - y0 + 1, x1 - x0 + 1), dtype=bool)
    mask[v[:, 1] - y0, v[:, 0] - x0] = True
    return mask, (int(x0), int(y0))


def filling(c, d: LatticeDomain = None):
    """Vertex set of the cluster united with every region it encloses.

    Everything outside the domain counts as reachable far field, so the
    result depends on ``d`` only through the clipping to the box.
    """
    vertices = c.vertex_set if isinstance(c, Cluster) else frozenset(c)
    mask, (x0, y0) = _mask_of(vertices)
    filled = ndimage.binary_fill_holes(mask)
    jj, ii = np.nonzero(filled)
    out = frozenset(zip((ii + x0).tolist(), (jj + y0).tolist()))
    if d is not None:
        out = frozenset(p for p in out if d.contains(*p))
    return out


def outermost_clusters(cs, d: LatticeDomain = None):
    """Clusters not contained in the filling of any other cluster."""
    cs = list(cs)
    fills = {}
    out = []
    for a in cs:
        probe = next(iter(a.vertex_set))
        inside = False
        for b in cs:
            if b is a or not _bbox_inside(a.bbox, b.bbox):
                continue
            if b.id not in fills:
                fills[b.id] = filling(b, d)
            if probe in fills[b.id]:
                inside = True
                break
        if not inside:
            out.append(a)
    return out


def _bbox_inside(inner, outer):
    return (outer[0] < inner[0] and outer[1] < inner[1]
            and inner[2] < outer[2] and inner[3] < outer[3])


def outer_boundary(c, d: LatticeDomain = None) -> Contour:
    """Counter-clockwise contour of ``filling(c)``; ``censored`` if it touches the box margin."""
    vertices = filling(c, None)
    mask, (x0, y0) = _mask_of(vertices)
    corners, cells = _trace_kernel(mask)
    corners = corners + np.array([x0, y0])
    cells = cells + np.array([x0, y0])
    censored = False
    if d is not None:
        b = c.bbox if isinstance(c, Cluster) else None
        if b is None:
            v = _vertex_array(vertices)
            b = (v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max())
        censored = b[0] == d.corner[0] or b[2] == d.x1 - 1 or b[3] == d.y1 - 1
        if d.role.value == "FullPlaneBox":
            censored = censored or b[1] == d.corner[1]
    return Contour(corners, cells, bool(censored))


def curve_points(curve):
    """Closed lattice point sequence of a loop, a contour or an ``(n, 2)`` array."""
    if isinstance(curve, Contour):
        return curve.cells
    if isinstance(curve, RootedLoop):
        return curve.vertices()
    return np.asarray(curve, dtype=np.int64).reshape(-1, 2)


def crossing_count(curve, a: AnnulusSpec) -> int:
    """Number of maximal arcs of a closed curve in the closed annulus joining its two circles.

    Points at distance at most ``inner`` are inside the inner disk, points at
    distance at least ``outer`` are outside; the count is the number of
    alternations between those two classes around the closed sequence.
    """
    if not (a.inner < a.outer):
        raise DomainError("degenerate annulus")
    p = curve_points(curve)
    if p.shape[0] == 0:
        return 0
    return int(_crossings(p[:, 0], p[:, 1], a.center[0], a.center[1], a.inner ** 2, a.outer ** 2))


def cluster_crosses(c, a: AnnulusSpec) -> bool:
    """Whether the cluster meets both the closed inner disk and the exterior of the open outer disk."""
    v = _vertex_array(c.vertex_set if isinstance(c, Cluster) else c)
    cls = a.classify(v[:, 0], v[:, 1])
    return bool((cls == INSIDE).any() and (cls == OUTSIDE).any())


def contour_text(contours):
    return "".join(ct.to_line(i) + "\n" for i, ct in enumerate(contours))


__all__ = [
    "AnnulusSpec", "Cluster", "Contour", "ClusterField", "Mode", "analyze", "build_clusters",
    "filling", "outermost_clusters", "outer_boundary", "crossing_count", "cluster_crosses",
    "curve_points", "STEP_LETTERS",
]
