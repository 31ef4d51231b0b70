"""Monte Carlo harness: trials, aggregation, Wilson intervals, exponent fits and diagnostics."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import rng
from .clusters import AnnulusSpec, Mode
from .errors import DomainError, InsufficientDataError
from .loopsoup import LatticeDomain, Role, sample_soup
from .params import ExponentKind, Kappa, alpha_from_kappa, predicted_exponent

Z95 = 1.9600
MIN_SUCCESSES = 10


class Model(enum.Enum):
    LOOP_SOUP = "LoopSoup"
    SLE = "Sle"


SOUP_EVENTS = ("A2", "E1_raw", "E1_contour", "E2_raw", "E2_cluster", "E2G2", "E2_trunc", "E2_local")
SLE_EVENTS = ("hit", "hit_cons", "hit_opt", "W4b", "W4b_cons", "W4b_opt",
              "W4i", "W4i_cons", "W4i_opt", "H3", "H4")


def predicted_for(event, mode, kappa):
    """Exponent the paper's formulas predict for an event id (``None`` if not an arm event)."""
    base = event.split("_")[0]
    boundary = mode == "boundary"
    if base == "A2":
        kind, j = (ExponentKind.BOUNDARY_2J if boundary else ExponentKind.INTERIOR_2J), 1
    elif base in ("E1", "E2", "E2G2"):
        kind, j = (ExponentKind.BOUNDARY_2J if boundary else ExponentKind.INTERIOR_2J), 2
    elif base == "hit":
        kind, j = ExponentKind.BOUNDARY_2J, 1
    elif base in ("W4b", "H3", "H4"):
        kind, j = ExponentKind.BOUNDARY_2J, 2
    elif base == "W4i":
        kind, j = ExponentKind.INTERIOR_2J, 2
    else:
        return None
    return predicted_exponent(kind, j, kappa)


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything that determines a batch of trials.

    Loop-soup experiments share one soup per trial across all scales and
    events; SLE experiments share one trace per trial.
    """

    model: Model
    events: tuple
    kappa: float
    ladder: tuple
    trials: int
    seed: int
    mode: str = "interior"
    box: int = 0
    n_max: int = 0
    max_steps: int = 0
    capacity: float = 16.0
    base_steps: int = 1024
    x: float = 1.0
    a_angle: float = 1.0
    refine: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "model", Model(self.model))
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "ladder", tuple((float(e), float(r)) for e, r in self.ladder))
        Kappa(self.kappa)
        if self.trials < 0:
            raise DomainError("trials must be >= 0")
        if self.mode not in ("interior", "boundary"):
            raise DomainError(f"mode must be interior or boundary, got {self.mode!r}")
        allowed = SOUP_EVENTS if self.model is Model.LOOP_SOUP else SLE_EVENTS
        for ev in self.events:
            if ev not in allowed:
                raise DomainError(f"unknown event {ev!r} for model {self.model.value}")
        if not self.ladder:
            raise DomainError("empty scale ladder")
        ratios = [r / e for e, r in self.ladder]
        for (e, r) in self.ladder:
            if not 0 < e < r:
                raise DomainError(f"scale ({e}, {r}) needs 0 < eps < r")
        if any(b <= a for a, b in zip(ratios, ratios[1:])):
            raise DomainError("scale ladder must be strictly increasing in r/eps")
        if self.model is Model.LOOP_SOUP:
            self.check_sizing()
        else:
            if any(r >= 1 for _, r in self.ladder):
                raise DomainError("SLE scales need r < 1")

    @property
    def r_max(self):
        return max(r for _, r in self.ladder)

    @property
    def box_side(self):
        factor = 8 if self.mode == "boundary" else 6
        side = self.box or int(math.ceil(factor * self.r_max))
        return side + (1 - side % 2)

    def check_sizing(self):
        factor = 8 if self.mode == "boundary" else 6
        if self.box and self.box < factor * self.r_max:
            raise DomainError(f"box side {self.box} below {factor} r = {factor * self.r_max}")

    def domain(self) -> LatticeDomain:
        role = Role.HALF_PLANE if self.mode == "boundary" else Role.FULL_PLANE
        return LatticeDomain.centered(self.box_side, role)

    def annuli(self):
        mode = Mode.BOUNDARY if self.mode == "boundary" else Mode.INTERIOR
        return [AnnulusSpec((0, 0), e, r, mode) for e, r in self.ladder]

    @property
    def disk_target(self):
        return complex(math.cos(math.pi * self.a_angle), math.sin(math.pi * self.a_angle))


@dataclass
class TrialBatch:
    """Per-(event, scale) counts over a contiguous trial range.

    Censored trials are counted separately and never enter ``trials`` or
    ``successes``.
    """

    events: tuple
    ladder: tuple
    successes: np.ndarray
    trials: np.ndarray
    censored: np.ndarray
    seed: int = 0
    trial_range: tuple = (0, 0)
    meta: dict = field(default_factory=dict)

    @classmethod
    def empty(cls, events, ladder, seed=0, trial_range=(0, 0)):
        shape = (len(events), len(ladder))
        z = np.zeros(shape, dtype=np.int64)
        return cls(tuple(events), tuple(ladder), z, z.copy(), z.copy(), seed, tuple(trial_range))

    def add(self, i, j, occurred, censored):
        if censored:
            self.censored[i, j] += 1
        else:
            self.trials[i, j] += 1
            self.successes[i, j] += int(bool(occurred))

    def row(self, event):
        i = self.events.index(event)
        return self.successes[i], self.trials[i], self.censored[i]

    def p_hat(self, event):
        k, n, _ = self.row(event)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(n > 0, k / np.maximum(n, 1), np.nan)

    def merged(self, other: "TrialBatch") -> "TrialBatch":
        return merge([self, other])

    def summary_rows(self, kappa, confidence=0.95):
        rows = []
        for i, ev in enumerate(self.events):
            for j, (e, r) in enumerate(self.ladder):
                k, n, c = int(self.successes[i, j]), int(self.trials[i, j]), int(self.censored[i, j])
                if n:
                    lo, hi = wilson_interval(k, n, confidence)
                    p = k / n
                else:
                    lo = hi = p = float("nan")
                rows.append((ev, kappa, e, r, n, k, c, p, lo, hi))
        return rows


def merge(batches) -> TrialBatch:
    """Sum of batches over disjoint trial ranges; order does not matter."""
    batches = list(batches)
    if not batches:
        raise InsufficientDataError("nothing to merge")
    first = batches[0]
    out = TrialBatch.empty(first.events, first.ladder, first.seed)
    lo, hi = None, None
    for b in batches:
        if b.events != first.events or b.ladder != first.ladder:
            raise DomainError("batches have different events or ladders")
        out.successes += b.successes
        out.trials += b.trials
        out.censored += b.censored
        if b.trial_range[1] > b.trial_range[0]:
            lo = b.trial_range[0] if lo is None else min(lo, b.trial_range[0])
            hi = b.trial_range[1] if hi is None else max(hi, b.trial_range[1])
    out.trial_range = (lo or 0, hi or 0)
    return out


# ---------------------------------------------------------------- per-trial pipelines

def _soup_trial(spec: ExperimentSpec, t, domain, annuli, alpha, batch):
    from . import events as ev

    soup = sample_soup(domain, alpha, n_max=spec.n_max or None, seed=rng.trial_seed(spec.seed, t),
                       max_steps=spec.max_steps)
    detectors = {
        "A2": ev.detect_two_arm,
        "E1_raw": lambda s, a: ev.detect_E1(s, a, ev.LoopProxy.RAW_LOOP),
        "E1_contour": lambda s, a: ev.detect_E1(s, a, ev.LoopProxy.OUTER_CONTOUR),
        "E2_raw": lambda s, a: ev.detect_E2(s, a, ev.LoopProxy.RAW_LOOP),
        "E2_cluster": lambda s, a: ev.detect_E2(s, a, ev.LoopProxy.OUTER_CLUSTER),
        "E2G2": ev.detect_E2_G2,
        "E2_trunc": ev.detect_E2_truncated,
        "E2_local": ev.detect_E2_local,
    }
    for j, a in enumerate(annuli):
        for i, name in enumerate(spec.events):
            out = detectors[name](soup, a)
            batch.add(i, j, out.occurred, out.censored)


def sle_trace_for(spec: ExperimentSpec, t):
    """The adaptive trace of trial ``t``, refined around the targets its events need."""
    from . import sle

    eps_min = min(e for e, _ in spec.ladder)
    targets, floors = [], []
    if any(e.startswith(("hit", "W4b", "H")) for e in spec.events):
        targets.append(complex(spec.x, 0.0))
        floors.append(eps_min / 8.0)
    if any(e.startswith("W4i") for e in spec.events):
        z0, fl = sle.interior_targets(spec.disk_target, eps_min / 8.0)
        targets.append(z0)
        floors.append(fl)
    return sle.adaptive_trace(spec.kappa, spec.capacity, spec.base_steps, seed=rng.trial_seed(spec.seed, t),
                              targets=targets, floors=floors, lam=spec.refine)


def _sle_trial(spec: ExperimentSpec, t, batch):
    from . import sle

    tr = sle_trace_for(spec, t)
    disk = None
    for j, (e, r) in enumerate(spec.ladder):
        for i, name in enumerate(spec.events):
            base, _, var = name.partition("_")
            variant = {"": "nominal", "cons": "conservative", "opt": "optimistic"}[var]
            if base == "hit":
                out = sle.detect_hit(tr, e, spec.x, variant)
            elif base == "W4b":
                out = sle.detect_W4_boundary(tr, e, r, spec.x, variant)
            elif base == "W4i":
                if disk is None:
                    disk = sle.transport_to_disk(tr, spec.disk_target)
                out = sle.detect_W4_interior(disk, spec.disk_target, e, r, variant)
            else:
                out = sle.detect_H_ordered(tr, e, spec.x, -4.0 * r, r, int(base[1]))
            batch.add(i, j, out.occurred, out.censored)


def run_trials(spec: ExperimentSpec, start, stop) -> TrialBatch:
    """Aggregate of trials ``start <= t < stop``; each trial is a pure function of ``(seed, t)``."""
    batch = TrialBatch.empty(spec.events, spec.ladder, spec.seed, (start, stop))
    if spec.model is Model.LOOP_SOUP:
        domain = spec.domain()
        annuli = spec.annuli()
        alpha = alpha_from_kappa(spec.kappa).value
        for t in range(start, stop):
            _soup_trial(spec, t, domain, annuli, alpha, batch)
    else:
        for t in range(start, stop):
            _sle_trial(spec, t, batch)
    return batch


def _run_chunk(args):
    spec, start, stop = args
    return run_trials(spec, start, stop)


def run_experiment(spec: ExperimentSpec, threads=1, chunk=1000) -> TrialBatch:
    """Run all trials of ``spec``; the aggregate does not depend on ``threads`` or ``chunk``."""
    if spec.trials == 0:
        return TrialBatch.empty(spec.events, spec.ladder, spec.seed)
    bounds = [(s, min(s + chunk, spec.trials)) for s in range(0, spec.trials, chunk)]
    if threads <= 1 or len(bounds) == 1:
        parts = [run_trials(spec, a, b) for a, b in bounds]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_run_chunk, [(spec, a, b) for a, b in bounds]))
    return merge(parts)


# ---------------------------------------------------------------- statistics

def _z(confidence):
    if abs(confidence - 0.95) < 1e-12:
        return Z95
    return float(stats.norm.ppf(0.5 + confidence / 2.0))


def wilson_interval(successes, trials, confidence=0.95):
    """Wilson score interval for a binomial proportion."""
    k, n = int(successes), int(trials)
    if n < 1:
        raise DomainError("trials must be >= 1")
    if not 0 <= k <= n:
        raise DomainError("need 0 <= successes <= trials")
    z = _z(confidence)
    p = k / n
    den = 1.0 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if k == 0 else max(0.0, mid - half)
    hi = 1.0 if k == n else min(1.0, mid + half)
    return lo, hi


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    intercept: float
    slope_stderr: float
    scales: tuple
    dropped: tuple
    goodness: float
    dof: int


def _log_var(k, n):
    """Delta-method variance of ``log p_hat``: ``p(1 - p) / (n p^2)``."""
    p = k / n
    q = max(1.0 - p, 0.5 / n)
    return q / (n * p)


def fit_exponent(batch=None, event=None, eps=None, successes=None, trials=None) -> ExponentFit:
    """Weighted least-squares slope of ``log p_hat`` against ``log eps``.

    Pass a :class:`TrialBatch` and an event id, or the arrays directly.
    Scales with fewer than ten successes are dropped. Weights are the inverse
    delta-method variances ``n p / (1 - p)``. The slope estimates the
    exponent ``xi`` in ``P ~ eps^xi``.
    """
    if batch is not None:
        k, n, _ = batch.row(event)
        eps = np.array([e for e, _ in batch.ladder])
    else:
        k, n = np.asarray(successes), np.asarray(trials)
        eps = np.asarray(eps, dtype=float)
    k = np.asarray(k, dtype=float)
    n = np.asarray(n, dtype=float)
    use = (k >= MIN_SUCCESSES) & (n > 0)
    if use.sum() < 2:
        raise InsufficientDataError(f"only {int(use.sum())} scales with >= {MIN_SUCCESSES} successes")
    x = np.log(eps[use])
    y = np.log(k[use] / n[use])
    w = np.array([1.0 / _log_var(a, b) for a, b in zip(k[use], n[use])])
    W = w.sum()
    xm = (w * x).sum() / W
    ym = (w * y).sum() / W
    sxx = (w * (x - xm) ** 2).sum()
    if sxx <= 0:
        raise InsufficientDataError("fit needs at least two distinct scales")
    slope = (w * (x - xm) * (y - ym)).sum() / sxx
    intercept = ym - slope * xm
    resid = y - intercept - slope * x
    chi2 = float((w * resid ** 2).sum())
    return ExponentFit(float(slope), float(intercept), float(math.sqrt(1.0 / sxx)),
                       tuple(float(e) for e in eps[use]), tuple(float(e) for e in eps[~use]),
                       chi2, int(use.sum()) - 2)


@dataclass(frozen=True)
class Ratio:
    value: float
    lo: float
    hi: float
    flag: str = ""


def _ratio(kA, nA, kB, nB, nested=False, confidence=0.95):
    if nB == 0 or kB == 0 or nA == 0:
        return Ratio(float("nan"), float("nan"), float("nan"), "zero denominator")
    pB = kB / nB
    pA = kA / nA
    if nested:
        # A is a sub-event of B on the same trials: the ratio is P(A | B)
        lo, hi = wilson_interval(kA, kB, confidence)
        return Ratio(kA / kB, lo, hi)
    z = _z(confidence)
    if kA == 0:
        return Ratio(0.0, 0.0, wilson_interval(0, nA, confidence)[1] / pB)
    s = math.sqrt(_log_var(kA, nA) + _log_var(kB, nB))
    v = pA / pB
    return Ratio(v, v * math.exp(-z * s), v * math.exp(z * s))


def ratio_diag(batch_a, batch_b, event_a=None, event_b=None, nested=False, confidence=0.95):
    """Per-scale ratio ``p_A / p_B`` with confidence intervals.

    ``batch_*`` are :class:`TrialBatch` objects (with event ids) or
    ``(successes, trials)`` array pairs. With ``nested=True`` the event A is
    a sub-event of B on shared trials and the interval is Wilson's for
    ``k_A / k_B``; otherwise the log-ratio delta method is used.
    """
    kA, nA = _counts(batch_a, event_a)
    kB, nB = _counts(batch_b, event_b)
    if len(kA) != len(kB):
        raise DomainError("batches do not share a scale ladder")
    if isinstance(batch_a, TrialBatch) and isinstance(batch_b, TrialBatch) and batch_a.ladder != batch_b.ladder:
        raise DomainError("batches do not share a scale ladder")
    return [_ratio(int(a), int(b), int(c), int(d), nested, confidence) for a, b, c, d in zip(kA, nA, kB, nB)]


def _counts(b, event):
    if isinstance(b, TrialBatch):
        k, n, _ = b.row(event)
        return k, n
    k, n = b
    return np.atleast_1d(np.asarray(k)), np.atleast_1d(np.asarray(n))


def quasi_mult_diag(b13, b12, b23, confidence=0.95) -> Ratio:
    """``p(r1, r3) / (p(r1, r2) p(4 r2, r3))`` with a log-normal interval.

    Each argument is a ``(successes, trials)`` pair.
    """
    (k13, n13), (k12, n12), (k23, n23) = b13, b12, b23
    if min(n13, n12, n23) == 0 or k12 == 0 or k23 == 0:
        raise InsufficientDataError("quasi-multiplicativity needs positive denominator counts")
    den = (k12 / n12) * (k23 / n23)
    z = _z(confidence)
    if k13 == 0:
        return Ratio(0.0, 0.0, wilson_interval(0, n13, confidence)[1] / den)
    v = (k13 / n13) / den
    s = math.sqrt(_log_var(k13, n13) + _log_var(k12, n12) + _log_var(k23, n23))
    return Ratio(v, v * math.exp(-z * s), v * math.exp(z * s))


def check_quasi_mult_scales(r1, r2, r3):
    if not (0 < r1 <= r2 / 2 <= r3 / 16):
        raise DomainError("need 0 < r1 <= r2/2 <= r3/16")


@dataclass(frozen=True)
class TrendTest:
    slope: float
    stderr: float
    p_value: float
    trend_free: bool


def trend_test(eps, ratios, level=0.05) -> TrendTest:
    """Weighted regression of ``log ratio`` on ``log eps`` and a two-sided z-test of zero slope.

    Ratio standard errors come from the intervals' log-width.
    """
    eps = np.asarray(eps, dtype=float)
    vals = np.array([r.value for r in ratios])
    lo = np.array([r.lo for r in ratios])
    hi = np.array([r.hi for r in ratios])
    ok = np.isfinite(vals) & (vals > 0) & (lo > 0)
    if ok.sum() < 2:
        raise InsufficientDataError("trend test needs two positive ratios")
    x = np.log(eps[ok])
    y = np.log(vals[ok])
    se = (np.log(hi[ok]) - np.log(lo[ok])) / (2 * Z95)
    w = 1.0 / np.maximum(se, 1e-12) ** 2
    xm = (w * x).sum() / w.sum()
    ym = (w * y).sum() / w.sum()
    sxx = (w * (x - xm) ** 2).sum()
    slope = (w * (x - xm) * (y - ym)).sum() / sxx
    stderr = math.sqrt(1.0 / sxx)
    p = 2.0 * (1.0 - stats.norm.cdf(abs(slope) / stderr))
    return TrendTest(float(slope), float(stderr), float(p), bool(p >= level))
