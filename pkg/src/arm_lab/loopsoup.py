"""Random walk loop soup on a finite box of the square lattice.

The rooted loop measure gives each closed nearest-neighbour path of length
``2n`` the weight ``alpha / (2n) * 4**(-2n)``. Summing over the
``C(2n, n)**2`` such paths at a vertex gives the per-vertex Poisson mass
returned by :func:`loop_mass`. A soup on a box keeps exactly the loops that
stay inside the box.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numba import njit

from . import rng
from .errors import DomainError, ResourceError
from .params import Intensity

BUILD_ID = "v0.1.0"

# step codes; (dx, dy) for E, N, W, S
STEP_LETTERS = "ENWS"
STEP_DX = np.array([1, 0, -1, 0], dtype=np.int64)
STEP_DY = np.array([0, 1, 0, -1], dtype=np.int64)
_LETTER_CODE = {c: i for i, c in enumerate(STEP_LETTERS)}

# stream labels inside a vertex key
_COUNT_STREAM = 0
_LOOP_STREAM = 1


class Role(enum.Enum):
    FULL_PLANE = "FullPlaneBox"
    HALF_PLANE = "HalfPlaneBox"


@dataclass(frozen=True)
class LatticeDomain:
    """Box ``[x0, x0 + width) x [y0, y0 + height)`` of lattice vertices.

    ``origin`` is the box centre (full-plane role) or a point on the bottom
    row playing the role of 0 on the real line (half-plane role).
    """

    width: int
    height: int
    role: Role = Role.FULL_PLANE
    origin: tuple = None
    corner: tuple = (0, 0)

    def __post_init__(self):
        if int(self.width) < 8 or int(self.height) < 8:
            raise DomainError(f"box {self.width}x{self.height} smaller than 8x8")
        object.__setattr__(self, "role", Role(self.role))
        x0, y0 = (int(c) for c in self.corner)
        object.__setattr__(self, "corner", (x0, y0))
        if self.origin is None:
            ox = x0 + self.width // 2
            oy = y0 if self.role is Role.HALF_PLANE else y0 + self.height // 2
            object.__setattr__(self, "origin", (ox, oy))
        ox, oy = (int(c) for c in self.origin)
        object.__setattr__(self, "origin", (ox, oy))
        if not self.contains(ox, oy):
            raise DomainError(f"origin {self.origin} outside the box")
        if self.role is Role.HALF_PLANE and oy != y0:
            raise DomainError("half-plane origin must lie on the bottom row")

    @classmethod
    def centered(cls, side, role=Role.FULL_PLANE):
        """Square box of the given side with origin at (0, 0)."""
        role = Role(role)
        x0 = -(side // 2)
        y0 = 0 if role is Role.HALF_PLANE else -(side // 2)
        return cls(side, side, role, (0, 0), (x0, y0))

    @property
    def x1(self):
        return self.corner[0] + self.width

    @property
    def y1(self):
        return self.corner[1] + self.height

    @property
    def n_vertices(self):
        return self.width * self.height

    def contains(self, x, y):
        return self.corner[0] <= x < self.x1 and self.corner[1] <= y < self.y1

    def translated(self, dx, dy):
        return LatticeDomain(self.width, self.height, self.role,
                             (self.origin[0] + dx, self.origin[1] + dy),
                             (self.corner[0] + dx, self.corner[1] + dy))

    def margin_distance(self, x, y):
        """Distance from (x, y) to the far-field sides of the box.

        The bottom side of a half-plane box is the boundary line, not a
        cutoff, and is ignored.
        """
        d = min(x - self.corner[0], self.x1 - 1 - x, self.y1 - 1 - y)
        if self.role is Role.FULL_PLANE:
            d = min(d, y - self.corner[1])
        return d

    def header(self):
        return (f"width={self.width} height={self.height} role={self.role.value} "
                f"origin={self.origin[0]},{self.origin[1]} corner={self.corner[0]},{self.corner[1]}")


@dataclass(frozen=True)
class RootedLoop:
    id: int
    root: tuple
    steps: str

    def __post_init__(self):
        n = len(self.steps)
        if n < 2 or n % 2:
            raise DomainError(f"loop length {n} must be even and >= 2")
        dx = self.steps.count("E") - self.steps.count("W")
        dy = self.steps.count("N") - self.steps.count("S")
        if dx or dy or len(self.steps.strip("ENWS")):
            raise DomainError("loop steps must be over ENWS and return to the root")

    def __len__(self):
        return len(self.steps)

    def vertices(self):
        """Closed vertex sequence (the final return to the root is not repeated)."""
        codes = np.fromiter((_LETTER_CODE[c] for c in self.steps), dtype=np.int64)
        xs = self.root[0] + np.concatenate(([0], np.cumsum(STEP_DX[codes])[:-1]))
        ys = self.root[1] + np.concatenate(([0], np.cumsum(STEP_DY[codes])[:-1]))
        return np.stack([xs, ys], axis=1)

    def vertex_set(self):
        return {(int(x), int(y)) for x, y in self.vertices()}


def loop_mass(n, a) -> float:
    """Per-vertex Poisson mass of rooted loops of length ``2n``."""
    if int(n) != n or n < 1:
        raise DomainError(f"half-length n={n!r} must be >= 1")
    alpha = float(a)
    return alpha * _return_weights(int(n))[-1] / (2.0 * n)


def _return_weights(n_half):
    # 4**(-2n) C(2n, n)**2 for n = 1..n_half, by the ratio recursion
    k = np.arange(1, n_half + 1, dtype=np.float64)
    return np.cumprod(((2.0 * k - 1.0) / (2.0 * k)) ** 2)


def mass_table(n_half, a):
    """Array ``m[n-1] = loop_mass(n, a)`` for ``n = 1..n_half``."""
    k = np.arange(1, n_half + 1, dtype=np.float64)
    return float(a) * _return_weights(n_half) / (2.0 * k)


def default_n_max(domain: LatticeDomain) -> int:
    return 4 * max(domain.width, domain.height) ** 2


def truncation_report(d: LatticeDomain, n_max, a) -> float:
    """Expected number of loops lost to the length cutoff, bounded from above.

    Terms up to 10**5 beyond the cutoff are summed exactly; the remainder uses
    ``m_n <= alpha / (2 pi n**2) * (1 + 1/(4n))``.
    """
    alpha = float(a)
    if alpha == 0.0 or n_max is None or math.isinf(n_max):
        return 0.0
    if int(n_max) % 2:
        raise DomainError("n_max must be even")
    lo = int(n_max) // 2
    hi = lo + 100_000
    k = np.arange(1, hi + 1, dtype=np.float64)
    exact = (alpha * _return_weights(hi) / (2.0 * k))[lo:].sum()
    tail = alpha / (2.0 * math.pi) * (1.0 / hi + 1.0 / (8.0 * hi * hi))
    return d.n_vertices * (exact + tail)


@njit(cache=True)
def _bridge(n, key, out, pos):
    """Write a uniform closed 2n-step path into ``out[pos:pos+2n]``.

    The diagonal coordinates x+y and x-y are independent +-1 bridges of
    length 2n; each is a Fisher-Yates shuffle of n ups and n downs.
    """
    m = 2 * n
    ku = rng.derive(key, 1)
    kv = rng.derive(key, 2)
    u = np.empty(m, dtype=np.int8)
    v = np.empty(m, dtype=np.int8)
    for i in range(m):
        u[i] = 1 if i < n else -1
        v[i] = 1 if i < n else -1
    for i in range(m - 1, 0, -1):
        j = int(rng.uniform(ku, i) * (i + 1))
        t = u[i]
        u[i] = u[j]
        u[j] = t
        j = int(rng.uniform(kv, i) * (i + 1))
        t = v[i]
        v[i] = v[j]
        v[j] = t
    for i in range(m):
        if u[i] > 0:
            out[pos + i] = 0 if v[i] > 0 else 1  # E or N
        else:
            out[pos + i] = 3 if v[i] > 0 else 2  # S or W


@njit(cache=True)
def _sample_bridges(n, key, count):
    out = np.empty(count * 2 * n, dtype=np.uint8)
    for c in range(count):
        _bridge(n, rng.derive(key, c), out, c * 2 * n)
    return out.reshape(count, 2 * n)


@njit(cache=True)
def _fits(steps, pos, m, x, y, x0, y0, x1, y1):
    for i in range(m):
        s = steps[pos + i]
        if s == 0:
            x += 1
        elif s == 1:
            y += 1
        elif s == 2:
            x -= 1
        else:
            y -= 1
        if x < x0 or x >= x1 or y < y0 or y >= y1:
            return False
    return True


@njit(cache=True)
def _sample_soup_kernel(x0, y0, x1, y1, ox, oy, cdf, total, seed_key, max_steps):
    cap_loops = 1024
    cap_steps = 8192
    roots = np.empty((cap_loops, 2), dtype=np.int64)
    lengths = np.empty(cap_loops, dtype=np.int64)
    ordinals = np.empty(cap_loops, dtype=np.int64)
    steps = np.empty(cap_steps, dtype=np.uint8)
    offsets = np.empty(cap_loops + 1, dtype=np.int64)
    scratch = np.empty(16, dtype=np.uint8)
    nl = 0
    ns = 0
    drawn = 0
    done_rows = 0
    offsets[0] = 0
    for y in range(y0, y1):
        for x in range(x0, x1):
            vkey = rng.derive2(seed_key, x - ox, y - oy)
            count, _ = rng.poisson(total, rng.derive(vkey, _COUNT_STREAM), 0)
            for k in range(count):
                lkey = rng.derive2(vkey, _LOOP_STREAM, k)
                u = rng.uniform(lkey, 0) * total
                # smallest n with cdf[n-1] > u
                lo = 0
                hi = cdf.shape[0] - 1
                while lo < hi:
                    mid = (lo + hi) // 2
                    if cdf[mid] > u:
                        hi = mid
                    else:
                        lo = mid + 1
                n = lo + 1
                m = 2 * n
                drawn += m
                if max_steps > 0 and drawn > max_steps:
                    return roots[:0], lengths[:0], ordinals[:0], steps[:0], offsets[:1], -1 - done_rows
                if scratch.shape[0] < m:
                    scratch = np.empty(2 * m, dtype=np.uint8)
                _bridge(n, lkey, scratch, 0)
                if not _fits(scratch, 0, m, x, y, x0, y0, x1, y1):
                    continue
                if nl + 1 >= cap_loops:
                    cap_loops *= 2
                    r2 = np.empty((cap_loops, 2), dtype=np.int64)
                    r2[:nl] = roots[:nl]
                    roots = r2
                    l2 = np.empty(cap_loops, dtype=np.int64)
                    l2[:nl] = lengths[:nl]
                    lengths = l2
                    o2 = np.empty(cap_loops, dtype=np.int64)
                    o2[:nl] = ordinals[:nl]
                    ordinals = o2
                    f2 = np.empty(cap_loops + 1, dtype=np.int64)
                    f2[:nl + 1] = offsets[:nl + 1]
                    offsets = f2
                while ns + m > cap_steps:
                    cap_steps *= 2
                    s2 = np.empty(cap_steps, dtype=np.uint8)
                    s2[:ns] = steps[:ns]
                    steps = s2
                steps[ns:ns + m] = scratch[:m]
                roots[nl, 0] = x
                roots[nl, 1] = y
                lengths[nl] = m
                ordinals[nl] = k
                ns += m
                nl += 1
                offsets[nl] = ns
        done_rows += 1
    return roots[:nl], lengths[:nl], ordinals[:nl], steps[:ns], offsets[:nl + 1], 0


@dataclass(frozen=True, eq=False)
class LoopSoup:
    """Immutable soup in canonical order (root row-major, then length, then ordinal).

    Loops are stored as flat arrays; :attr:`loops` materializes
    :class:`RootedLoop` objects on demand.
    """

    domain: LatticeDomain
    intensity: float
    n_max: int
    seed: int
    stream: int
    roots: np.ndarray
    lengths: np.ndarray
    offsets: np.ndarray
    steps: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return int(self.lengths.shape[0])

    @property
    def n_loops(self):
        return len(self)

    def loop_steps(self, i):
        return self.steps[self.offsets[i]:self.offsets[i + 1]]

    def loop_vertices(self, i):
        s = self.loop_steps(i).astype(np.int64)
        xs = self.roots[i, 0] + np.concatenate(([0], np.cumsum(STEP_DX[s])[:-1]))
        ys = self.roots[i, 1] + np.concatenate(([0], np.cumsum(STEP_DY[s])[:-1]))
        return np.stack([xs, ys], axis=1)

    @cached_property
    def loops(self):
        out = []
        for i in range(len(self)):
            word = "".join(STEP_LETTERS[c] for c in self.loop_steps(i))
            out.append(RootedLoop(i, (int(self.roots[i, 0]), int(self.roots[i, 1])), word))
        return tuple(out)

    @cached_property
    def vertex_arrays(self):
        """``(xs, ys)`` of every loop's closed vertex sequence, concatenated."""
        s = self.steps.astype(np.int64)
        dx = STEP_DX[s]
        dy = STEP_DY[s]
        xs = np.empty(s.shape[0], dtype=np.int64)
        ys = np.empty(s.shape[0], dtype=np.int64)
        _walk(self.roots, self.offsets, dx, dy, xs, ys)
        return xs, ys

    def __eq__(self, other):
        if not isinstance(other, LoopSoup):
            return NotImplemented
        return (self.domain == other.domain and self.intensity == other.intensity
                and self.n_max == other.n_max and self.seed == other.seed
                and self.stream == other.stream
                and np.array_equal(self.roots, other.roots)
                and np.array_equal(self.lengths, other.lengths)
                and np.array_equal(self.steps, other.steps))

    __hash__ = None

    def subset(self, mask, domain=None):
        """Soup made of the loops selected by a boolean mask (ids renumbered)."""
        idx = np.flatnonzero(mask)
        return _from_indices(self, idx, domain or self.domain)

    def restricted_to_disk(self, center, radius):
        """Loops contained in the closed Euclidean disk of the given radius."""
        xs, ys = self.vertex_arrays
        d2 = (xs - center[0]) ** 2 + (ys - center[1]) ** 2
        inside = d2 <= radius * radius
        ok = np.logical_and.reduceat(inside, self.offsets[:-1]) if len(self) else np.zeros(0, bool)
        return self.subset(ok)

    def to_text(self) -> str:
        lines = [f"# arm-lab loopsoup {BUILD_ID} {self.domain.header()} alpha={self.intensity!r} "
                 f"n_max={self.n_max} seed={self.seed} stream={self.stream} loops={len(self)}"]
        for i in range(len(self)):
            word = "".join(STEP_LETTERS[c] for c in self.loop_steps(i))
            lines.append(f"{i} {self.roots[i, 0]} {self.roots[i, 1]} {word}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "LoopSoup":
        lines = text.splitlines()
        head = dict(tok.split("=", 1) for tok in lines[0].split() if "=" in tok)
        domain = LatticeDomain(int(head["width"]), int(head["height"]), Role(head["role"]),
                               tuple(int(v) for v in head["origin"].split(",")),
                               tuple(int(v) for v in head["corner"].split(",")))
        roots, lengths, chunks = [], [], []
        for expected, line in enumerate(lines[1:1 + int(head["loops"])]):
            ident, rx, ry, word = line.split()
            if int(ident) != expected:
                raise ValueError(f"loop id {ident} out of order")
            roots.append((int(rx), int(ry)))
            lengths.append(len(word))
            chunks.append(np.frombuffer(word.translate(_TO_CODES).encode(), dtype=np.uint8) - 48)
        steps = np.concatenate(chunks).astype(np.uint8) if chunks else np.zeros(0, np.uint8)
        lengths = np.asarray(lengths, dtype=np.int64)
        offsets = np.concatenate(([0], np.cumsum(lengths))).astype(np.int64)
        return cls(domain, float(head["alpha"]), int(head["n_max"]), int(head["seed"]),
                   int(head["stream"]), np.asarray(roots, dtype=np.int64).reshape(-1, 2),
                   lengths, offsets, steps)

    @classmethod
    def from_loops(cls, domain, loops, intensity=0.5, n_max=None, seed=0, stream=0):
        """Soup from explicit ``(root, steps)`` pairs, kept in the given order."""
        roots, lengths, chunks = [], [], []
        for root, word in loops:
            RootedLoop(0, tuple(root), word)
            roots.append(tuple(root))
            lengths.append(len(word))
            chunks.append(np.array([_LETTER_CODE[c] for c in word], dtype=np.uint8))
        lengths = np.asarray(lengths, dtype=np.int64)
        soup = cls(domain, float(intensity), int(n_max or default_n_max(domain)), int(seed), int(stream),
                   np.asarray(roots, dtype=np.int64).reshape(-1, 2), lengths,
                   np.concatenate(([0], np.cumsum(lengths))).astype(np.int64),
                   np.concatenate(chunks) if chunks else np.zeros(0, np.uint8))
        xs, ys = soup.vertex_arrays
        if len(xs) and (xs.min() < domain.corner[0] or xs.max() >= domain.x1
                        or ys.min() < domain.corner[1] or ys.max() >= domain.y1):
            raise DomainError("loop leaves the domain")
        return soup


_TO_CODES = str.maketrans({c: str(i) for i, c in enumerate(STEP_LETTERS)})


@njit(cache=True)
def _walk(roots, offsets, dx, dy, xs, ys):
    for i in range(roots.shape[0]):
        x = roots[i, 0]
        y = roots[i, 1]
        for p in range(offsets[i], offsets[i + 1]):
            xs[p] = x
            ys[p] = y
            x += dx[p]
            y += dy[p]


def _from_indices(soup, idx, domain):
    lengths = soup.lengths[idx]
    offsets = np.concatenate(([0], np.cumsum(lengths))).astype(np.int64)
    if len(idx):
        steps = np.concatenate([soup.steps[soup.offsets[i]:soup.offsets[i + 1]] for i in idx])
    else:
        steps = np.zeros(0, np.uint8)
    return LoopSoup(domain, soup.intensity, soup.n_max, soup.seed, soup.stream,
                    soup.roots[idx].copy(), lengths, offsets, steps)


def sample_bridge(n, key, count=1):
    """Uniform closed ``2n``-step paths from the stream ``key``.

    Returns an array of step codes of shape ``(count, 2n)``.
    """
    if int(n) < 1:
        raise DomainError("half-length must be >= 1")
    if count == 0:
        return np.zeros((0, 2 * n), dtype=np.uint8)
    return _sample_bridges(int(n), np.uint64(key), int(count))


def sample_soup(d: LatticeDomain, a, n_max=None, seed=0, stream=0, max_steps=0) -> LoopSoup:
    """Sample the loop soup on ``d`` at intensity ``a``.

    Each vertex draws a Poisson number of rooted loops with the total mass of
    lengths up to ``n_max``, picks each length from the mass table, samples
    the path with :func:`sample_bridge` and keeps it only if it stays in the
    box. Vertex streams are keyed by the position relative to ``d.origin``.

    Parameters
    ----------
    max_steps : int
        Budget on the number of path steps drawn (0 = unlimited); exceeding it
        raises :class:`ResourceError`.
    """
    alpha = Intensity(a).value
    if n_max is None:
        n_max = default_n_max(d)
    n_max = int(n_max)
    if n_max < 2 or n_max % 2:
        raise DomainError(f"n_max={n_max} must be even and >= 2")
    if alpha == 0.0:
        empty = np.zeros(0, dtype=np.int64)
        return LoopSoup(d, alpha, n_max, int(seed), int(stream), np.zeros((0, 2), np.int64),
                        empty, np.zeros(1, np.int64), np.zeros(0, np.uint8))
    cdf = _cached_cdf(n_max // 2, alpha)
    key = rng.root_key(seed, stream)
    x0, y0 = d.corner
    roots, lengths, ordinals, steps, offsets, status = _sample_soup_kernel(
        x0, y0, d.x1, d.y1, d.origin[0], d.origin[1], cdf, float(cdf[-1]), key, int(max_steps))
    if status < 0:
        rows = -1 - status
        raise ResourceError("step budget exceeded while sampling",
                            f"{rows}/{d.height} rows completed, budget {max_steps} steps")
    order = np.lexsort((ordinals, lengths, roots[:, 0], roots[:, 1]))
    if not np.array_equal(order, np.arange(len(order))):
        soup = LoopSoup(d, alpha, n_max, int(seed), int(stream), roots, lengths, offsets, steps)
        tmp = _from_indices(soup, order, d)
        roots, lengths, offsets, steps = tmp.roots, tmp.lengths, tmp.offsets, tmp.steps
    return LoopSoup(d, alpha, n_max, int(seed), int(stream), roots, lengths, offsets, steps)


_CDF_CACHE = {}


def _cached_cdf(n_half, alpha):
    key = (n_half, alpha)
    if key not in _CDF_CACHE:
        if len(_CDF_CACHE) > 16:
            _CDF_CACHE.clear()
        _CDF_CACHE[key] = np.cumsum(mass_table(n_half, alpha))
    return _CDF_CACHE[key]
