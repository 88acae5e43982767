"""Laplace transforms of finite step measures on (0, inf).

A :class:`SpectralMeasure` is a finite list of atoms ``(rate, mass)``.  Its
Laplace transform ``L(t) = sum mass * exp(-t * rate)`` is the squared L2
distance of a reversible chain when the atoms are built from the chain's
spectrum (see :mod:`l2cutoff.spectral`).

All functions here are pure and operate on immutable measures.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable

import numpy as np

__all__ = [
    "SpectralMeasure",
    "laplace_eval",
    "ibp_rhs",
    "mixing_time",
    "lambda_c",
    "tau_c",
    "ltcomp_upper",
    "mixing_sandwich",
    "bm0_bounds",
    "mixing_shift_bound",
    "first_time_below",
    "read_measure",
    "write_measure",
    "format_measure",
    "parse_measure",
]


class SpectralMeasure:
    """Finite nonnegative atomic measure on (0, inf).

    Atoms are sorted by rate; atoms whose rates agree (exactly, or within
    ``merge_rtol`` relative to the cluster's first rate) are merged by summing
    masses, the merged rate being the mass-weighted mean.

    Parameters
    ----------
    rates, masses : array_like
        Positive rates and positive masses of equal length.
    merge_rtol : float
        Relative tolerance for merging neighbouring rates.
    """

    __slots__ = ("_rates", "_masses", "_cum")

    def __init__(self, rates=(), masses=(), merge_rtol: float = 0.0):
        rates = np.atleast_1d(np.asarray(rates, dtype=float)).ravel()
        masses = np.atleast_1d(np.asarray(masses, dtype=float)).ravel()
        if rates.shape != masses.shape:
            raise ValueError("rates and masses must have the same length")
        if rates.size and not (np.all(np.isfinite(rates)) and np.all(rates > 0)):
            raise ValueError("every rate must be finite and > 0")
        if masses.size and not (np.all(np.isfinite(masses)) and np.all(masses > 0)):
            raise ValueError("every mass must be finite and > 0")
        if merge_rtol < 0:
            raise ValueError("merge_rtol must be >= 0")

        order = np.argsort(rates, kind="stable")
        rates, masses = rates[order], masses[order]
        if rates.size > 1:
            rates, masses = _merge(rates, masses, merge_rtol)

        rates.setflags(write=False)
        masses.setflags(write=False)
        cum = np.cumsum(masses)
        cum.setflags(write=False)
        self._rates = rates
        self._masses = masses
        self._cum = cum

    @property
    def rates(self) -> np.ndarray:
        return self._rates

    @property
    def masses(self) -> np.ndarray:
        return self._masses

    @property
    def cumulative(self) -> np.ndarray:
        """Values ``V(rate_k)`` of the step function at the atom rates."""
        return self._cum

    @property
    def total_mass(self) -> float:
        return float(self._cum[-1]) if self._cum.size else 0.0

    def __len__(self) -> int:
        return int(self._rates.size)

    def __iter__(self):
        return iter(zip(self._rates.tolist(), self._masses.tolist()))

    def __eq__(self, other):
        if not isinstance(other, SpectralMeasure):
            return NotImplemented
        return np.array_equal(self._rates, other._rates) and np.array_equal(
            self._masses, other._masses
        )

    def __repr__(self):
        atoms = ", ".join(f"({r:.6g}, {m:.6g})" for r, m in self)
        return f"SpectralMeasure([{atoms}])"

    def V(self, lam):
        """Right-continuous step function ``V(lam) = sum_{rate <= lam} mass``."""
        lam = np.asarray(lam, dtype=float)
        idx = np.searchsorted(self._rates, lam, side="right")
        padded = np.concatenate(([0.0], self._cum))
        out = padded[idx]
        return float(out) if out.ndim == 0 else out


def _merge(rates, masses, rtol):
    keep_r, keep_m = [], []
    start = 0
    n = rates.size
    while start < n:
        stop = start + 1
        base = rates[start]
        while stop < n and rates[stop] - base <= rtol * base:
            stop += 1
        m = masses[start:stop]
        total = m.sum()
        if stop - start == 1:
            keep_r.append(base)
        else:
            keep_r.append(float(np.dot(rates[start:stop], m) / total))
        keep_m.append(total)
        start = stop
    return np.array(keep_r), np.array(keep_m)


def _require_c(V: SpectralMeasure, c: float, name: str = "c") -> None:
    if len(V) == 0:
        raise ValueError("the measure is empty; c-indexed quantities are undefined")
    if not (0 < c < V.total_mass):
        raise ValueError(
            f"{name}={c!r} must lie in (0, total mass={V.total_mass!r})"
        )


def laplace_eval(V: SpectralMeasure, t):
    """Laplace transform ``sum_k mass_k exp(-t rate_k)``; vectorised in ``t``."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be >= 0")
    if len(V) == 0:
        out = np.zeros_like(t_arr)
    else:
        out = np.exp(-np.multiply.outer(t_arr, V.rates)) @ V.masses
    return float(out) if out.ndim == 0 else out


def ibp_rhs(V: SpectralMeasure, t: float) -> float:
    """Closed form of ``t * int V(lam) exp(-t lam) dlam`` for a step V.

    With cumulative values ``V_k`` at rates ``lam_1 < ... < lam_m`` this is
    ``sum_k V_k (exp(-t lam_k) - exp(-t lam_{k+1}))`` with ``lam_{m+1} = inf``.
    """
    if not t > 0:
        raise ValueError("t must be > 0")
    if len(V) == 0:
        return 0.0
    r = V.rates
    head = np.exp(-t * r)
    # exp(-t a) - exp(-t b) = exp(-t a) * (-expm1(-t (b - a))) avoids cancellation
    gap = np.empty_like(r)
    gap[:-1] = -np.expm1(-t * np.diff(r))
    gap[-1] = 1.0
    return float(np.dot(V.cumulative, head * gap))


def first_time_below(func: Callable[[float], float], eps: float, hi: float) -> float:
    """Smallest ``t`` in ``[0, hi]`` with ``func(t) <= eps`` for decreasing ``func``.

    Bisects to full double resolution; ``func(hi) <= eps`` is required.
    """
    if func(0.0) <= eps:
        return 0.0
    lo = 0.0
    while func(hi) > eps:
        lo, hi = hi, 2.0 * hi if hi > 0 else 1.0
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if func(mid) <= eps:
            hi = mid
        else:
            lo = mid
    return hi


def mixing_time(V: SpectralMeasure, eps: float) -> float:
    """``T_V(eps) = min{t >= 0 : L_V(t) <= eps}``."""
    if not eps > 0:
        raise ValueError("eps must be > 0")
    total = V.total_mass
    if total <= eps:
        return 0.0
    rates, masses = V.rates, V.masses

    def f(t):
        return float(np.dot(masses, np.exp(-t * rates)))

    hi = math.log(total / eps) / rates[0]
    return first_time_below(f, eps, hi)


def lambda_c(V: SpectralMeasure, c: float) -> float:
    """``lambda_V(c) = inf{lam : V(lam) > c}`` (strict inequality)."""
    _require_c(V, c)
    k = int(np.searchsorted(V.cumulative, c, side="right"))
    return float(V.rates[k])


def tau_c(V: SpectralMeasure, c: float, return_gamma: bool = False):
    """``tau_V(c) = sup_{lam >= lambda_V(c)} log(1 + V(lam)) / lam``.

    For a step function the supremum is attained at an atom rate, so only the
    atoms with rate >= lambda_V(c) are scanned.  Ties go to the smallest rate.
    With ``return_gamma`` the maximising rate is returned as well.
    """
    _require_c(V, c)
    k = int(np.searchsorted(V.cumulative, c, side="right"))
    vals = np.log1p(V.cumulative[k:]) / V.rates[k:]
    i = int(np.argmax(vals))
    tau = float(vals[i])
    if return_gamma:
        return tau, float(V.rates[k + i])
    return tau


def ltcomp_upper(V: SpectralMeasure, c: float, s: float) -> float:
    """Upper envelope ``c + (tau + s) / (s exp(s lambda_V(c)))`` for ``L_V(tau + s)``."""
    if not s > 0:
        raise ValueError("s must be > 0")
    tau = tau_c(V, c)
    lam = lambda_c(V, c)
    return c + (tau + s) / s * _exp_neg(s * lam)


def _exp_neg(x: float) -> float:
    return math.exp(-x) if x < 745.0 else 0.0


def mixing_sandwich(V: SpectralMeasure, c: float, A: float):
    """Bounds ``(lower, upper)`` around ``tau_V(c)``.

    ``lower = alpha/(alpha+A) * T_V(c + (A+alpha)/(A e^{A alpha}))`` and
    ``upper = T_V(c/(1+c))`` with ``alpha = sqrt(tau_V(c) lambda_V(c))``.
    """
    if not A > 0:
        raise ValueError("A must be > 0")
    tau = tau_c(V, c)
    alpha = math.sqrt(tau * lambda_c(V, c))
    shifted = c + (A + alpha) / A * _exp_neg(A * alpha)
    lower = alpha / (alpha + A) * mixing_time(V, shifted)
    upper = mixing_time(V, c / (1.0 + c))
    return lower, upper


def bm0_bounds(V: SpectralMeasure, delta: float):
    """``(tau_V(2 delta), 6/delta^2 tau_V(delta/2))``, which bracket ``T_V(delta)``."""
    if len(V) == 0:
        raise ValueError("the measure is empty")
    edge = min(V.total_mass, 1.0) / 2.0
    if not (0 < delta < edge):
        raise ValueError(f"delta={delta!r} must lie in (0, {edge!r})")
    return tau_c(V, 2.0 * delta), 6.0 / delta**2 * tau_c(V, delta / 2.0)


def mixing_shift_bound(V: SpectralMeasure, eps: float, c1: float, c2: float, B: float):
    """Both sides of the shifted mixing-time inequality.

    Returns ``(lhs, rhs)`` where
    ``lhs = T_V(c1 + c2 exp(-T_V(eps) lambda_V(c1)) + 2 eps e^{-B})`` and
    ``rhs = T_V(eps) + 2B / lambda_V(c2)``; ``lhs <= rhs`` always holds.
    """
    for name, val in (("eps", eps), ("c1", c1), ("c2", c2)):
        _require_c(V, val, name)
    if not B > 0:
        raise ValueError("B must be > 0")
    T = mixing_time(V, eps)
    arg = c1 + c2 * _exp_neg(T * lambda_c(V, c1)) + 2.0 * eps * math.exp(-B)
    lhs = mixing_time(V, arg)
    rhs = T + 2.0 * B / lambda_c(V, c2)
    return lhs, rhs


# -- text serialisation ------------------------------------------------------

def format_measure(V: SpectralMeasure) -> str:
    lines = ["# rate mass"]
    lines += [f"{r!r} {m!r}" for r, m in V]
    return "\n".join(lines) + "\n"


def parse_measure(text: str, source: str = "<string>") -> SpectralMeasure:
    rates, masses = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise ValueError(f"{source}:{lineno}: expected 'rate mass', got {raw!r}")
        try:
            r, m = float(parts[0]), float(parts[1])
        except ValueError:
            raise ValueError(f"{source}:{lineno}: non-numeric entry in {raw!r}") from None
        rates.append(r)
        masses.append(m)
    try:
        return SpectralMeasure(rates, masses)
    except ValueError as exc:
        raise ValueError(f"{source}: {exc}") from None


def read_measure(path) -> SpectralMeasure:
    with open(path) as fh:
        return parse_measure(fh.read(), str(path))


def write_measure(V: SpectralMeasure, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_measure(V))


def measure_from_pairs(pairs: Iterable[tuple[float, float]]) -> SpectralMeasure:
    pairs = list(pairs)
    if not pairs:
        return SpectralMeasure()
    r, m = zip(*pairs)
    return SpectralMeasure(r, m)
