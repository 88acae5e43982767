"""Parameterised chain families with analytic predictions.

Two-state product families use a profile ``f`` to lay out speeds
``p_{n,i} = p_{n,1} f(x_n + i - 1) / f(x_n)`` over ``ell_n`` coordinates.
Profiles are evaluated through ``log f`` so that steep profiles such as
``exp(a t)`` do not overflow.
"""
from __future__ import annotations

import ast
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .analysis import continuize, lazy
from .product import ProductSpec, assemble, tau_tilde
from .spectral import CONTINUOUS, DISCRETE, ReversibleChain, SpectralData

__all__ = [
    "Profile",
    "TwoStateProductFamily",
    "two_state_spectral",
    "delta_n",
    "profile_delta",
    "tn_bn",
    "machinery_build",
    "predicted_kappa",
    "counterexample_build",
    "counterexample_Dn",
    "counterexample_limit",
    "complete_graph_chain",
    "complete_graph_tau",
    "parse_sequence",
    "FamilyWarning",
]


class FamilyWarning(UserWarning):
    """Parameters fall outside a theorem's hypotheses (allowed for exploration)."""


@dataclass(frozen=True)
class Profile:
    """Speed profile ``f``: ``exp`` (e^{a t}), ``explog`` (exp(a log(1+t)^b)), ``log`` (log(1+t)^a)."""

    kind: str
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind not in ("exp", "explog", "log"):
            raise ValueError(f"unknown profile {self.kind!r}")
        if self.a <= 0 or (self.kind == "explog" and self.b <= 0):
            warnings.warn(f"profile parameters a={self.a}, b={self.b} outside a, b > 0",
                          FamilyWarning, stacklevel=3)

    def log_f(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "exp":
            return self.a * t
        if self.kind == "explog":
            return self.a * np.log1p(t) ** self.b
        return self.a * np.log(np.log1p(t))

    def __call__(self, t):
        return np.exp(self.log_f(t))


# -- sequence expressions ----------------------------------------------------

_ALLOWED = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Add, ast.Sub, ast.Mult,
            ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.Constant, ast.Name, ast.Call, ast.Load)
_FUNCS = {"floor": math.floor, "ceil": math.ceil, "log": math.log, "sqrt": math.sqrt}


def parse_sequence(expr, params: dict | None = None) -> Callable[[int], int]:
    """Compile an integer sequence ``n -> value`` from a small grammar.

    Accepts numbers, ``n``, ``+ - * / ^`` and ``floor``, ``ceil``, ``log``,
    ``sqrt``; e.g. ``"floor(n^0.5)"`` or ``"n - floor(n^alpha) + 1"`` with
    ``alpha`` supplied through ``params``.  Integers and callables pass
    through.
    """
    params = {k: float(v) for k, v in (params or {}).items()}
    if callable(expr):
        return expr
    if isinstance(expr, (int, np.integer)):
        v = int(expr)
        return lambda n: v
    text = str(expr).replace("^", "**")
    tree = ast.parse(text, mode="eval")
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise ValueError(f"unsupported syntax in sequence {expr!r}")
        if isinstance(node, ast.Name) and node.id not in _FUNCS and node.id != "n" \
                and node.id not in params:
            raise ValueError(f"unknown name {node.id!r} in sequence {expr!r}")
        if isinstance(node, ast.Call) and not (
            isinstance(node.func, ast.Name) and node.func.id in _FUNCS
        ):
            raise ValueError(f"unsupported call in sequence {expr!r}")
    code = compile(tree, "<sequence>", "eval")

    def seq(n):
        val = eval(code, {"__builtins__": {}}, dict(_FUNCS, **params, n=n))
        # guard integer-valued floats such as floor(1e6 ** 0.5)
        return int(round(val)) if abs(val - round(val)) < 1e-9 else int(math.floor(val))

    seq.expr = str(expr)
    return seq


# -- two-state products ------------------------------------------------------

def two_state_spectral(A: float, B: float) -> SpectralData:
    """Spectrum of ``[[-A, A], [B, -B]]`` from state 0: rate ``A+B``, weight ``A/B``."""
    if not (0 < A < 1 and 0 < B < 1):
        raise ValueError("A and B must lie in (0, 1)")
    return SpectralData.from_atoms([A + B], [A / B])


@dataclass
class TwoStateProductFamily:
    """Triangular array of two-state chains with profile-driven speeds.

    ``x`` and ``ell`` are sequences (expressions or callables of ``n``);
    ``A`` and ``B`` are constants or callables ``(n, i) -> array`` with ``i``
    the 1-based coordinate index.  ``p1`` defaults to the largest admissible
    value ``f(x_n) / sum_i f(x_n + i - 1)`` (speeds sum to one).  ``R`` and
    ``r`` are the uniformity witnesses ``R^{-1} r_n <= A, B <= R r_n``;
    when omitted they are derived from the rates.
    """

    profile: Profile
    x: object = 1
    ell: object = "n"
    A: object = 0.5
    B: object = 0.5
    p1: Callable | None = None
    R: float | None = None
    r: Callable | None = None

    params: dict | None = None

    def __post_init__(self):
        self._x = parse_sequence(self.x, self.params)
        self._ell = parse_sequence(self.ell, self.params)

    def x_n(self, n):
        return self._x(n)

    def ell_n(self, n):
        return self._ell(n)

    def rates(self, n):
        ell = self.ell_n(n)
        i = np.arange(1, ell + 1)
        A = self.A(n, i) if callable(self.A) else np.full(ell, float(self.A))
        B = self.B(n, i) if callable(self.B) else np.full(ell, float(self.B))
        return np.asarray(A, float), np.asarray(B, float)

    def log_weights(self, n):
        """``log f(x_n + i - 1)`` and the log-normaliser ``log sum f``."""
        x, ell = self.x_n(n), self.ell_n(n)
        if x < 1 or ell < 1:
            raise ValueError(f"x_n={x}, ell_n={ell} must be positive integers")
        lf = self.profile.log_f(x + np.arange(ell) - 1.0 + 0.0)
        return lf, float(logsumexp(lf))

    def speeds(self, n):
        lf, lq = self.log_weights(n)
        if self.p1 is None:
            return np.exp(lf - lq)
        p1 = float(self.p1(n))
        p = p1 * np.exp(lf - lf[0])
        if p.sum() > 1 + 1e-12:
            raise ValueError("p_{n,1} too large: speeds sum above 1")
        return p

    def witnesses(self, n):
        A, B = self.rates(n)
        if self.r is not None and self.R is not None:
            return float(self.R), float(self.r(n))
        both = np.concatenate([A, B])
        r = math.sqrt(both.min() * both.max())
        R = math.sqrt(both.max() / both.min())
        if self.R is not None:
            R = float(self.R)
        return max(R, 1.0 + 1e-12), r

    def spec(self, n) -> ProductSpec:
        A, B = self.rates(n)
        if np.any((A <= 0) | (A >= 1) | (B <= 0) | (B >= 1)):
            warnings.warn("two-state rates outside (0, 1)", FamilyWarning, stacklevel=2)
        return ProductSpec.two_state(A, B, self.speeds(n))


def delta_n(family: TwoStateProductFamily, n) -> float:
    """``max_{1<=j<=ell_n} log(1+j) / (f(x_n - 1 + j) / f(x_n))``."""
    return profile_delta(family.profile, family.x_n(n), family.ell_n(n))


def profile_delta(profile: Profile, x: int, ell: int) -> float:
    j = np.arange(1, ell + 1)
    lf = profile.log_f(x - 1.0 + j)
    # log-space ratio: exactly 1 at j = 1, so f = e^t gives log 2 without rounding
    return float(np.max(np.log1p(j) * np.exp(-(lf - lf[0]))))


def tn_bn(family: TwoStateProductFamily, n):
    """``t_n = max_j log(1+j) / (2 p_{n,j} (A+B)_{n,j})`` and ``b_n = sqrt(t_n / (r_n p_{n,1}))``."""
    p = family.speeds(n)
    A, B = family.rates(n)
    rate = p * (A + B)
    if np.any(np.diff(rate) < 0):
        warnings.warn("p_{n,i}(A_{n,i}+B_{n,i}) is not nondecreasing in i", FamilyWarning,
                      stacklevel=2)
    j = np.arange(1, p.size + 1)
    t = float(np.max(np.log1p(j) / (2.0 * rate)))
    _, r = family.witnesses(n)
    return t, math.sqrt(t / (r * p[0]))


def machinery_build(n, profile: Profile, x_n: int, ell_n: int, A=0.5, B=0.5):
    """Product spec for components ``x_n .. x_n + ell_n - 1`` with speeds ``p_i / q_n``.

    Returns ``(spec, log_q)`` where ``q_n = sum_i p_i``; dividing times of
    the normalised chain by ``q_n`` converts them to the unnormalised scale.
    ``A``/``B`` may be scalars or arrays indexed by component.
    """
    if x_n < 1 or ell_n < 1:
        raise ValueError("x_n and ell_n must be positive")
    idx = x_n + np.arange(ell_n)
    A = np.broadcast_to(np.asarray(A, float), idx.shape).copy()
    B = np.broadcast_to(np.asarray(B, float), idx.shape).copy()
    s = A + B
    if np.ptp(s) > 1e-12 * s.max():
        warnings.warn("A_i + B_i is not constant across components", FamilyWarning, stacklevel=2)
    if np.any((A <= 0) | (A >= 1) | (B <= 0) | (B >= 1)):
        raise ValueError("A_i and B_i must lie in (0, 1)")
    lp = profile.log_f(idx.astype(float))
    lq = float(logsumexp(lp))
    return ProductSpec.two_state(A, B, np.exp(lp - lq)), lq


def predicted_kappa(case, x_n, ell_n, a: float = 1.0, b: float = 1.0) -> float:
    """Closed-form ``kappa_n`` for the cutoff cases (``2`` or ``3``)."""
    case = str(case)
    if case == "2":
        return min(math.log(x_n) - b * math.log(math.log(x_n)), math.log(ell_n))
    if case == "3":
        if a >= 1:
            return min(math.log(x_n), math.log(ell_n))
        if a <= 0:
            raise ValueError("case 3 needs a > 0")
        return math.log1p(min(x_n, ell_n)) ** a * math.log(ell_n) ** (1.0 - a)
    raise ValueError(f"no cutoff-time prediction for case {case!r} (use 2 or 3)")


# -- counterexample ----------------------------------------------------------

def _counterexample_arrays(n):
    if n < 2:
        raise ValueError("n must be >= 2")
    i = np.arange(1, 2 * n + 1, dtype=float)
    low = i <= n
    A = np.where(low, 1.0 / n, 1.0 / math.sqrt(n))
    p = np.where(low, i / n**3, np.log(i) / n**2)
    return A, np.ones_like(A), p


def counterexample_build(n) -> ProductSpec:
    """``2n`` two-state factors with ``A = 1/n`` then ``1/sqrt(n)``, ``B = 1``."""
    A, B, p = _counterexample_arrays(n)
    return ProductSpec.from_flat(p, A + B, A / B, np.arange(A.size))


def counterexample_Dn(n, t) -> float:
    """``D_n(t) = sum_i A_{n,i} exp(-2 p_{n,i} (A_{n,i} + B_{n,i}) t)``."""
    A, B, p = _counterexample_arrays(n)
    return float(np.dot(A, np.exp(-2.0 * p * (A + B) * t)))


def counterexample_limit(A: float) -> float:
    """Limit of ``D_n(A n^2)``."""
    if A < 0.25:
        return math.inf
    if A == 0.25:
        return 2.0 * (math.sqrt(2.0) - math.exp(-0.5))
    return -math.expm1(-2.0 * A) / (2.0 * A)


# -- complete graph ----------------------------------------------------------

def complete_graph_chain(pi_hat, r: float) -> ReversibleChain:
    """``K(x, y) = r delta_x(y) + (1 - r) pi_hat(y)``."""
    pi_hat = np.asarray(pi_hat, dtype=float)
    if not 0 < r < 1:
        raise ValueError("r must lie in (0, 1)")
    if np.any(pi_hat <= 0) or abs(pi_hat.sum() - 1) > 1e-12:
        raise ValueError("pi_hat must be a positive probability vector")
    m = pi_hat.size
    K = r * np.eye(m) + (1.0 - r) * np.tile(pi_hat, (m, 1))
    return ReversibleChain(DISCRETE, K, pi_hat)


def complete_graph_tau(pi_x: float, r: float, kind=CONTINUOUS, theta: float | None = None) -> float:
    """Closed-form ``tau(c)`` from ``delta_x`` for ``c < 1/pi(x) - 1``.

    Continuised chain: ``log(1/pi(x)) / (2 (1 - r))``; ``theta``-lazy chain:
    ``log(1/pi(x)) / (-2 log(theta + (1 - theta) r))``.
    """
    top = -math.log(pi_x)
    if kind == CONTINUOUS:
        return top / (2.0 * (1.0 - r))
    if theta is None:
        return top / (-2.0 * math.log(r))
    return top / (-2.0 * math.log(theta + (1.0 - theta) * r))


def complete_graph_variants(pi_hat, r, theta):
    K = complete_graph_chain(pi_hat, r)
    return K, continuize(K), lazy(K, theta)


def tau_tilde_of(family: TwoStateProductFamily, n, c):
    return tau_tilde(assemble(family.spec(n)), c)
