"""Chordal SLE traces by discretized Loewner evolution, and four-arm / ordered hitting events.

Traces are computed by backward composition of vertical-slit maps
``f(w) = U + sqrt((w - U)^2 - 4 dt)`` for a piecewise-constant driver that
takes its right-endpoint value on each interval. The adaptive engine refines
the driver by Brownian-bridge midpoints where the tip passes close to target
points; the midpoint noise is keyed by the dyadic address of the interval so
the underlying Brownian path does not depend on how far it is refined.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import rng
from .errors import DomainError, PrecisionError
from .events import EventOutcome

_BASE_LABEL = 0xD21
_MID_LABEL = 0xB21


@dataclass(frozen=True)
class DriverPath:
    """Driver ``W`` sampled on a uniform grid, ``W_0 = 0``.

    ``kappa`` is any nonnegative float here: the engine is not tied to the
    simple-CLE range, and ``kappa = 0`` gives the constant driver.
    """

    times: np.ndarray
    values: np.ndarray
    kappa: float
    seed: int = 0
    stream: int = 0

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0


@dataclass(frozen=True)
class SleTrace:
    """Tip positions ``points[k] = gamma(times[k])``; ``points[0] = 0``.

    ``frame`` is ``"half-plane"`` or ``"disk"``; ``truncated`` marks a trace
    cut short by numerical blow-up or the point budget, with ``report``
    saying why.
    """

    points: np.ndarray
    times: np.ndarray
    resolution: float
    truncated: bool = False
    report: str = ""
    frame: str = "half-plane"
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __len__(self):
        return int(self.points.shape[0])

    @property
    def step_lengths(self):
        return np.abs(np.diff(self.points))

    def to_text(self) -> str:
        """Line-oriented export, one ``t re im`` record per tip."""
        lines = [f"# arm-lab sle-trace frame={self.frame} points={len(self)} "
                 f"resolution={self.resolution!r} truncated={int(self.truncated)}"]
        for t, z in zip(self.times, self.points):
            lines.append(f"{float(t)!r} {float(z.real)!r} {float(z.imag)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SleTrace":
        lines = text.splitlines()
        head = dict(tok.split("=", 1) for tok in lines[0].split() if "=" in tok)
        rows = np.array([[float(v) for v in ln.split()] for ln in lines[1:] if ln.strip()]).reshape(-1, 3)
        return cls(rows[:, 1] + 1j * rows[:, 2], rows[:, 0], float(head["resolution"]),
                   bool(int(head["truncated"])), "", head["frame"])


# ---------------------------------------------------------------- driver

@njit(cache=True)
def _base_driver(n, dt, kappa, key):
    w = np.zeros(n + 1)
    s = math.sqrt(kappa * dt)
    for k in range(n):
        w[k + 1] = w[k] + s * rng.normal(key, k)
    return w


def _driver_key(seed, stream):
    return np.uint64(rng.derive(rng.root_key(seed, stream), _BASE_LABEL))


def sample_driver(k, T, dt, seed=0, stream=0) -> DriverPath:
    """Brownian driver with variance ``kappa`` per unit capacity on ``[0, T]``.

    The grid has ``round(T / dt)`` uniform steps.
    """
    kappa = float(k.value if hasattr(k, "value") else k)
    if kappa < 0:
        raise DomainError("kappa must be nonnegative")
    if not (T > 0 and dt > 0):
        raise DomainError("T and dt must be positive")
    n = max(1, int(round(T / dt)))
    dt = T / n
    values = _base_driver(n, dt, kappa, _driver_key(seed, stream))
    return DriverPath(np.arange(n + 1) * dt, values, kappa, int(seed), int(stream))


# ---------------------------------------------------------------- slit maps

@njit(cache=True, inline="always")
def _slit_inverse(w, u, dt):
    """Inverse of the vertical-slit map: upper half-plane onto itself minus a slit at ``u``."""
    q = (w - u) * (w - u) - 4.0 * dt
    s = np.sqrt(q)
    if s.imag < 0.0 or (s.imag == 0.0 and (w - u).real * s.real < 0.0):
        s = -s
    return u + s


@njit(cache=True)
def _uniform_tips(dts, us):
    n = us.shape[0]
    pts = np.zeros(n + 1, dtype=np.complex128)
    bad = -1
    for k in range(n):
        z = complex(us[k], 2.0 * math.sqrt(dts[k]))
        for j in range(k - 1, -1, -1):
            z = _slit_inverse(z, us[j], dts[j])
        if not (np.isfinite(z.real) and np.isfinite(z.imag)) or z.imag < 0.0:
            bad = k
            break
        pts[k + 1] = z
    return pts, bad


def loewner_trace(d: DriverPath) -> SleTrace:
    """Tip positions at every grid time of the driver (``O(n^2)`` backward composition)."""
    dts = np.diff(d.times)
    us = np.asarray(d.values[1:], dtype=np.float64)
    pts, bad = _uniform_tips(dts, us)
    if bad >= 0:
        return SleTrace(pts[:bad + 1], d.times[:bad + 1], d.dt, True,
                        f"non-finite tip at step {bad + 1}; trace truncated")
    return SleTrace(pts, np.asarray(d.times, dtype=np.float64), d.dt)


@njit(cache=True)
def _adaptive_kernel(T, n0, kappa, base_key, mid_key, targets, floors, lam, l_max,
                     max_depth, max_points):
    dt0 = T / n0
    s0 = math.sqrt(kappa * dt0)
    dts = np.zeros(max_points)
    us = np.zeros(max_points)
    pts = np.zeros(max_points + 1, dtype=np.complex128)
    ts = np.zeros(max_points + 1)
    m = 0
    # pending intervals: (t_a, t_b, w_a, w_b, base index, node, depth)
    st_t = np.zeros((max_depth + 2, 2))
    st_w = np.zeros((max_depth + 2, 2))
    st_i = np.zeros((max_depth + 2, 3), dtype=np.int64)
    w_prev = 0.0
    status = 0
    for k in range(n0):
        w_next = w_prev + s0 * rng.normal(base_key, k)
        top = 0
        st_t[0, 0] = k * dt0
        st_t[0, 1] = (k + 1) * dt0
        st_w[0, 0] = w_prev
        st_w[0, 1] = w_next
        st_i[0, 0] = k
        st_i[0, 1] = 1
        st_i[0, 2] = 0
        top = 1
        while top > 0:
            top -= 1
            ta = st_t[top, 0]
            tb = st_t[top, 1]
            wa = st_w[top, 0]
            wb = st_w[top, 1]
            node = st_i[top, 1]
            depth = st_i[top, 2]
            dt = tb - ta
            z = complex(wb, 2.0 * math.sqrt(dt))
            for j in range(m - 1, -1, -1):
                z = _slit_inverse(z, us[j], dts[j])
            if not (np.isfinite(z.real) and np.isfinite(z.imag)) or z.imag < 0.0:
                return pts[:m + 1], ts[:m + 1], 1
            a = pts[m]
            seg = z - a
            length = abs(seg)
            need = length > l_max
            if not need:
                for q in range(targets.shape[0]):
                    p = targets[q]
                    den = seg.real * seg.real + seg.imag * seg.imag
                    t = 0.0
                    if den > 0.0:
                        t = ((p - a).real * seg.real + (p - a).imag * seg.imag) / den
                        t = min(1.0, max(0.0, t))
                    dist = abs(a + t * seg - p)
                    thr = max(floors[q], lam * dist)
                    if length > thr:
                        need = True
                        break
            if need and depth < max_depth:
                key = rng.derive(rng.derive(mid_key, k), node)
                wm = 0.5 * (wa + wb) + math.sqrt(kappa * dt / 4.0) * rng.normal(key, 0)
                tm = 0.5 * (ta + tb)
                # right half first so the left half is processed next
                st_t[top, 0] = tm
                st_t[top, 1] = tb
                st_w[top, 0] = wm
                st_w[top, 1] = wb
                st_i[top, 0] = k
                st_i[top, 1] = 2 * node + 1
                st_i[top, 2] = depth + 1
                top += 1
                st_t[top, 0] = ta
                st_t[top, 1] = tm
                st_w[top, 0] = wa
                st_w[top, 1] = wm
                st_i[top, 0] = k
                st_i[top, 1] = 2 * node
                st_i[top, 2] = depth + 1
                top += 1
                continue
            if m >= max_points:
                return pts[:m + 1], ts[:m + 1], 2
            dts[m] = dt
            us[m] = wb
            m += 1
            pts[m] = z
            ts[m] = tb
        w_prev = w_next
    return pts[:m + 1], ts[:m + 1], status


def adaptive_trace(k, T, n0, seed=0, stream=0, targets=(), floors=(), lam=0.1, l_max=np.inf,
                   max_depth=24, max_points=60000) -> SleTrace:
    """Trace on a base grid of ``n0`` steps, refined near ``targets``.

    An interval is split at its Brownian-bridge midpoint while its tip step
    exceeds ``l_max`` or ``max(floor, lam * d)``, where ``d`` is the distance
    from the target to the step's chord. With no targets and ``l_max = inf``
    this equals :func:`loewner_trace` of :func:`sample_driver` with
    ``dt = T / n0``.
    """
    kappa = float(k.value if hasattr(k, "value") else k)
    tg = np.asarray(targets, dtype=np.complex128).reshape(-1)
    fl = np.broadcast_to(np.asarray(floors, dtype=np.float64), tg.shape).copy() if len(tg) else np.zeros(0)
    base_key = _driver_key(seed, stream)
    mid_key = np.uint64(rng.derive(rng.root_key(seed, stream), _MID_LABEL))
    pts, ts, status = _adaptive_kernel(float(T), int(n0), kappa, base_key, mid_key, tg, fl,
                                       float(lam), float(l_max), int(max_depth), int(max_points))
    report = ""
    if status == 1:
        report = f"non-finite tip after {len(pts) - 1} steps; trace truncated"
    elif status == 2:
        report = f"point budget {max_points} exhausted at capacity {ts[-1]:.6g}; trace truncated"
    return SleTrace(pts.copy(), ts.copy(), T / n0, status != 0, report)


# ---------------------------------------------------------------- disk transport

def disk_reference_point(a) -> complex:
    """Point of the upper half-plane sent to the disk centre.

    It lies on the unit circle at angle ``pi - arg(a) / 2`` (with ``arg`` in
    ``(0, 2 pi)``), which makes the map send ``0 -> 1`` and ``infinity -> a``;
    for ``a = -1`` it is ``i``.
    """
    a = complex(a)
    if abs(abs(a) - 1.0) > 1e-12 or abs(a - 1.0) < 1e-12:
        raise DomainError("target must be a point of the unit circle other than 1")
    beta = math.atan2(a.imag, a.real) % (2 * math.pi)
    return complex(math.cos(math.pi - beta / 2), math.sin(math.pi - beta / 2))


def to_disk(z, a):
    """Mobius map from the upper half-plane to the unit disk with ``0 -> 1``, ``inf -> a``."""
    z0 = disk_reference_point(a)
    z = np.asarray(z, dtype=np.complex128)
    with np.errstate(divide="ignore", invalid="ignore"):
        return complex(a) * (z - z0) / (z - np.conj(z0))


def from_disk(w, a):
    z0 = disk_reference_point(a)
    w = np.asarray(w, dtype=np.complex128)
    return (w * np.conj(z0) - complex(a) * z0) / (w - complex(a))


def transport_to_disk(tr: SleTrace, a) -> SleTrace:
    if tr.frame == "disk":
        return tr
    return SleTrace(to_disk(tr.points, a), tr.times, tr.resolution, tr.truncated, tr.report, "disk")


# ---------------------------------------------------------------- hitting scans

class Variant(enum.Enum):
    NOMINAL = "nominal"
    CONSERVATIVE = "conservative"
    OPTIMISTIC = "optimistic"


def _seg_dist(points, c):
    """Distance from ``c`` to every chord ``points[i] -> points[i+1]``."""
    a = points[:-1]
    seg = points[1:] - a
    den = np.abs(seg) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(den > 0, ((c - a) * np.conj(seg)).real / den, 0.0)
    t = np.clip(t, 0.0, 1.0)
    return np.abs(a + t * seg - c)


def local_tolerances(points, c, eps, r):
    """Longest chord meeting ``B_{2 eps}(c)`` and longest chord meeting the band around radius r."""
    if len(points) < 2:
        return 0.0, 0.0
    dmin = _seg_dist(points, c)
    dmax = np.maximum(np.abs(points[:-1] - c), np.abs(points[1:] - c))
    length = np.abs(np.diff(points))
    near_e = dmin <= 2 * eps
    near_r = (dmin <= r) & (dmax >= 0.5 * r)
    tol_e = float(length[near_e].max()) if near_e.any() else 0.0
    tol_r = float(length[near_r].max()) if near_r.any() else 0.0
    return tol_e, tol_r


def three_phase_scan(points, c, eps, r):
    """Segment indices of ``(tau1, sigma1, tau2)`` for enter/leave/re-enter; ``-1`` when absent.

    ``tau`` phases use the chord distance to ``c``; ``sigma1`` is the first
    vertex at distance ``>= r`` after ``tau1``.
    """
    if len(points) < 2 or eps <= 0:
        return -1, -1, -1
    dmin = _seg_dist(points, c)
    hit = np.flatnonzero(dmin <= eps)
    if not len(hit):
        return -1, -1, -1
    t1 = int(hit[0])
    far = np.flatnonzero(np.abs(points[t1 + 1:] - c) >= r)
    if not len(far):
        return t1, -1, -1
    s1 = t1 + 1 + int(far[0])
    back = hit[hit >= s1]
    return t1, s1, (int(back[0]) if len(back) else -1)


def _radii(variant, eps, r, tol_e, tol_r):
    v = Variant(variant)
    if v is Variant.CONSERVATIVE:
        return eps - tol_e, r + tol_r
    if v is Variant.OPTIMISTIC:
        return eps + tol_e, max(r - tol_r, eps + tol_e)
    return eps, r


def detect_hit(tr: SleTrace, eps, x=1.0, variant=Variant.NOMINAL) -> EventOutcome:
    """Whether the trace (as a polyline of tips) meets the closed disk ``B_eps(x)``."""
    v = Variant(variant)
    name = "hit" + ("" if v is Variant.NOMINAL else "_" + v.value[:4])
    pts = tr.points
    tol_e, _ = local_tolerances(pts, complex(x), eps, 2 * eps)
    radius, _ = _radii(v, eps, 2 * eps, tol_e, 0.0)
    if radius > 0 and len(pts) > 1:
        idx = np.flatnonzero(_seg_dist(pts, complex(x)) <= radius)
        if len(idx):
            return EventOutcome(name, True, (int(idx[0]),))
    if tr.truncated:
        return EventOutcome(name, False, None, True)
    return EventOutcome(name, False)


def detect_W4_boundary(tr: SleTrace, eps, r, x=1.0, variant=Variant.NOMINAL) -> EventOutcome:
    """Enter ``B_eps(x)``, then reach ``|z - x| = r``, then re-enter ``B_eps(x)``."""
    if not (0 < eps < r < 1):
        raise DomainError("need 0 < eps < r < 1")
    v = Variant(variant)
    name = "W4b" + ("" if v is Variant.NOMINAL else "_" + v.value[:4])
    return _w4(tr, complex(x), eps, r, v, name)


def _w4(tr, c, eps, r, v, name):
    pts = tr.points
    tol_e, tol_r = local_tolerances(pts, c, eps, r)
    e, rr = _radii(v, eps, r, tol_e, tol_r)
    t1, s1, t2 = three_phase_scan(pts, c, e, rr)
    if t2 >= 0:
        return EventOutcome(name, True, (t1, s1, t2))
    if tr.truncated:
        return EventOutcome(name, False, None, True)
    return EventOutcome(name, False)


def detect_W4_interior(tr: SleTrace, a, eps, r, variant=Variant.NOMINAL) -> EventOutcome:
    """Three-phase scan around the disk centre of the trace transported to the unit disk."""
    if not (0 < eps < r < 1):
        raise DomainError("need 0 < eps < r < 1")
    v = Variant(variant)
    name = "W4i" + ("" if v is Variant.NOMINAL else "_" + v.value[:4])
    return _w4(transport_to_disk(tr, a), 0j, eps, r, v, name)


def interior_targets(a, eps):
    """Refinement target and floor in half-plane coordinates for a disk radius ``eps``.

    The map's derivative at the reference point has modulus ``1 / (2 Im z0)``.
    """
    z0 = disk_reference_point(a)
    return z0, eps * 2.0 * z0.imag


# ---------------------------------------------------------------- ordered events

def _circle_crossings(points, c, radius):
    """Crossings of the polyline with a circle as ``(time, angle)`` pairs, time = segment + fraction."""
    a = points[:-1] - c
    b = points[1:] - c
    d = b - a
    A = np.abs(d) ** 2
    B = 2 * (a * np.conj(d)).real
    C = np.abs(a) ** 2 - radius * radius
    disc = B * B - 4 * A * C
    out_t, out_th = [], []
    ok = (A > 0) & (disc >= 0)
    idx = np.flatnonzero(ok)
    sq = np.sqrt(disc[idx])
    for sign in (-1.0, 1.0):
        t = (-B[idx] + sign * sq) / (2 * A[idx])
        good = (t >= 0) & (t <= 1)
        ii = idx[good]
        tt = t[good]
        p = a[ii] + tt * d[ii]
        out_t.append(ii + tt)
        out_th.append(np.angle(p))
    t = np.concatenate(out_t)
    th = np.concatenate(out_th)
    order = np.argsort(t, kind="stable")
    return t[order], th[order]


class _CircleRaster:
    """Angular raster of a circle centred on the real line; cut cells come from the trace."""

    def __init__(self, points, c, radius, h):
        self.t, th = _circle_crossings(points, c, radius)
        self.width = h / radius
        self.n = int(math.ceil(2 * math.pi / self.width))
        self.cell = np.floor((th % (2 * math.pi)) / self.width).astype(np.int64) % self.n

    def first_hit_after(self, t0, cut_until):
        """First crossing after ``t0`` landing outside the cut range accumulated up to ``cut_until``.

        The trace stays in the upper half-plane, so the cut cells lie in the
        upper arc and the component containing either real-axis point is the
        complement of ``[min cut, max cut]``.
        """
        cut = self.cell[self.t <= cut_until]
        upper = cut[cut < self.n // 2 + 1]
        for t, c in zip(self.t, self.cell):
            if t <= t0:
                continue
            if len(upper) and upper.min() <= c <= upper.max():
                continue
            return float(t)
        return None


def detect_H_ordered(tr: SleTrace, eps, x, y, r, arms, h=None) -> EventOutcome:
    """Ordered boundary arm event with prescribed first-hit arcs.

    ``arms = 3``: hit the small circle, then the arc of ``dB_r(y)`` still
    connected to ``y - r``, then the arc of ``dB_eps(x)`` still connected to
    ``x + eps``. ``arms = 4`` starts at the big circle and alternates twice.
    Arc components are tracked on an angular raster of resolution ``h``.
    """
    if arms not in (3, 4):
        raise DomainError("arms must be 3 or 4")
    if not (y <= -4 * r < 0 < eps <= x):
        raise DomainError("need y <= -4r < 0 < eps <= x")
    h = eps / 8.0 if h is None else float(h)
    if h > eps / 4.0:
        raise PrecisionError(f"raster resolution {h} coarser than eps/4 = {eps / 4}")
    pts = tr.points
    small = _CircleRaster(pts, complex(x), eps, h)
    big = _CircleRaster(pts, complex(y), r, h)
    seq = (small, big, small) if arms == 3 else (big, small, big, small)
    # each arc component is cut by the trace up to the previous hit time
    t = -1.0
    hits = []
    for circle in seq:
        nxt = circle.first_hit_after(t, t)
        if nxt is None:
            return EventOutcome(f"H{arms}", False, None, bool(tr.truncated))
        hits.append(nxt)
        t = nxt
    return EventOutcome(f"H{arms}", True, tuple(hits))
