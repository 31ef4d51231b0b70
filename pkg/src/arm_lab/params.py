"""Closed-form parameters: loop-soup intensity and arm exponents as functions of kappa."""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .errors import DomainError

KAPPA_MIN = 8.0 / 3.0
KAPPA_MAX = 4.0


@dataclass(frozen=True)
class Kappa:
    """SLE/CLE parameter restricted to the simple regime (8/3, 4]."""

    value: float

    def __post_init__(self):
        v = float(self.value)
        if not (KAPPA_MIN < v <= KAPPA_MAX):
            raise DomainError(f"kappa={v!r} outside (8/3, 4]")
        object.__setattr__(self, "value", v)

    def __float__(self):
        return self.value


@dataclass(frozen=True)
class Intensity:
    """Loop-soup intensity in [0, 1/2].

    Zero is accepted here because an empty soup is a legitimate degenerate
    input for samplers and tests; :func:`alpha_from_kappa` never returns it.
    """

    value: float

    def __post_init__(self):
        v = float(self.value)
        if not (0.0 <= v <= 0.5):
            raise DomainError(f"intensity={v!r} outside [0, 1/2]")
        object.__setattr__(self, "value", v)

    def __float__(self):
        return self.value


class ExponentKind(enum.Enum):
    INTERIOR_2J = "Interior2j"
    BOUNDARY_2J = "Boundary2j"
    BOUNDARY_2J_MINUS_1 = "Boundary2jMinus1"


def _kappa(k) -> float:
    return k.value if isinstance(k, Kappa) else Kappa(k).value


def alpha_from_kappa(k) -> Intensity:
    """Intensity of the Brownian loop soup whose outermost cluster boundaries form CLE_kappa.

    Parameters
    ----------
    k : Kappa or float
        Must lie in (8/3, 4].

    Returns
    -------
    Intensity
        ``(3k - 8)(6 - k) / (4k)``.
    """
    kv = _kappa(k)
    return Intensity((3.0 * kv - 8.0) * (6.0 - kv) / (4.0 * kv))


def predicted_exponent(kind: ExponentKind, j: int, k) -> float:
    """Interior 2j-arm or boundary arm exponent.

    ``Interior2j`` gives xi_{2j}, ``Boundary2j`` gives xi^+_{2j} and
    ``Boundary2jMinus1`` gives xi^+_{2j-1}.
    """
    kind = ExponentKind(kind)
    if int(j) != j or j < 1:
        raise DomainError(f"arm index j={j!r} must be a positive integer")
    kv = _kappa(k)
    if kind is ExponentKind.INTERIOR_2J:
        return (16.0 * j * j - (kv - 4.0) ** 2) / (8.0 * kv)
    if kind is ExponentKind.BOUNDARY_2J:
        return j * (4.0 * j + 4.0 - kv) / kv
    return (j - 1) * (4.0 * j + 4.0 - kv) / kv


def xi4_interior(k) -> float:
    kv = _kappa(k)
    return (12.0 - kv) * (kv + 4.0) / (8.0 * kv)


def xi4_boundary(k) -> float:
    kv = _kappa(k)
    return 2.0 * (12.0 - kv) / kv
