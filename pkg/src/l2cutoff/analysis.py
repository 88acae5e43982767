"""Chain-level cutoff quantities.

Rate conventions: a :class:`~l2cutoff.laplace.SpectralMeasure` built from a
chain carries *doubled* rates (``2 lambda_i`` or ``-2 log|beta_i|``); every
field named ``lambda_*`` below is in chain units (``lambda_i`` or
``-log|beta_i|``) unless it ends in ``_measure``.  ``tau`` is a time and
needs no conversion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import laplace
from .spectral import (
    CONTINUOUS, DISCRETE, ReversibleChain, SpectralData, decompose, l2_distance, to_measure,
)

__all__ = [
    "CutoffDiagnostics",
    "chain_diagnostics",
    "mixing_time",
    "pbm_bounds",
    "lazy",
    "continuize",
    "comparison_report",
]


@dataclass(frozen=True)
class CutoffDiagnostics:
    """Cutoff quantities of one chain at one level ``c``.

    Attributes
    ----------
    j_index : int
        1-based index of the atom ``lambda_{j(c)}`` in the merged measure
        (distinct eigenvalues, multiplicities aggregated).
    lambda_jc : float
        ``lambda_{j(c)}`` in chain units (half the measure rate).
    lambda_measure : float
        ``lambda_V(c)`` on the measure (``2 * lambda_jc``).
    tau : float
        ``tau(c)``; identical on the measure and chain scale.
    alpha : float
        ``sqrt(tau * lambda_jc)`` (chain units).  The measure-scale value is
        ``alpha_measure = sqrt(tau * lambda_measure) = sqrt(2) * alpha``.
    mixing : dict
        ``eps -> T_2(mu, eps)`` (integers for discrete chains).
    """

    kind: str
    c: float
    mass: float
    j_index: int
    lambda_jc: float
    lambda_measure: float
    tau: float
    gamma: float
    alpha: float
    alpha_measure: float
    mixing: dict = field(default_factory=dict)

    @property
    def product_tau(self) -> float:
        return self.tau * self.lambda_jc

    @property
    def products_T(self) -> dict:
        return {e: T * self.lambda_jc for e, T in self.mixing.items()}

    @property
    def window_mix(self) -> float:
        return 1.0 / self.lambda_jc

    @property
    def window_tau(self) -> float:
        return math.sqrt(self.tau / self.lambda_jc)

    def as_dict(self) -> dict:
        out = {
            "kind": self.kind, "c": self.c, "mass": self.mass,
            "j_index": self.j_index, "lambda_jc": self.lambda_jc,
            "lambda_measure": self.lambda_measure, "tau": self.tau,
            "gamma_measure": self.gamma, "alpha": self.alpha,
            "alpha_measure": self.alpha_measure,
            "product_tau": self.product_tau, "window_mix": self.window_mix,
            "window_tau": self.window_tau,
        }
        for e, T in self.mixing.items():
            out[f"T2[eps={e:g}]"] = T
            out[f"T2_lambda[eps={e:g}]"] = T * self.lambda_jc
        return out


def _spectral(chain_or_sd, mu=None) -> SpectralData:
    if isinstance(chain_or_sd, SpectralData):
        return chain_or_sd
    if mu is None:
        raise ValueError("an initial law is required")
    return decompose(chain_or_sd, mu)


def mixing_time(sd: SpectralData, eps: float, V: laplace.SpectralMeasure | None = None):
    """``T_2(mu, eps)``: real for continuous chains, least integer for discrete ones."""
    if not eps > 0:
        raise ValueError("eps must be > 0")
    if V is None:
        V = to_measure(sd)
    T = laplace.mixing_time(V, eps * eps)
    if sd.kind == CONTINUOUS:
        return T
    if l2_distance(sd, 0) <= eps:
        return 0
    m = max(1, int(math.floor(T)))
    while laplace.laplace_eval(V, float(m)) > eps * eps:
        m += 1
    # step back over any rounding in the real-valued answer
    while m > 1 and laplace.laplace_eval(V, float(m - 1)) <= eps * eps:
        m -= 1
    return m


def chain_diagnostics(chain, mu=None, c: float = 0.5, eps_list=(0.1, 0.5, 1.0)) -> CutoffDiagnostics:
    """Compute ``j(c), tau(c), alpha(c)`` and mixing times for one chain."""
    sd = _spectral(chain, mu)
    V = to_measure(sd)
    if len(V) == 0:
        raise ValueError("mu equals pi: the chain starts mixed and c-quantities are undefined")
    lam_m = laplace.lambda_c(V, c)
    tau, gamma = laplace.tau_c(V, c, return_gamma=True)
    j = int(np.searchsorted(V.cumulative, c, side="right")) + 1
    lam = lam_m / 2.0
    mixing = {float(e): mixing_time(sd, e, V) for e in eps_list}
    return CutoffDiagnostics(
        kind=sd.kind, c=float(c), mass=sd.mass, j_index=j, lambda_jc=lam,
        lambda_measure=lam_m, tau=tau, gamma=gamma,
        alpha=math.sqrt(tau * lam), alpha_measure=math.sqrt(tau * lam_m),
        mixing=mixing,
    )


def pbm_bounds(chain, mu=None, eps: float = 0.1):
    """``(tau(2 eps^2), 6/eps^4 tau(eps^2/2) [+1 discrete])`` bracketing ``T_2(mu, eps)``.

    Admissible ``eps`` satisfy ``eps^2 < min(mass, 1)/2`` where ``mass`` is the
    total mass of the spectral measure (the chi-square distance for
    continuous chains).
    """
    sd = _spectral(chain, mu)
    V = to_measure(sd)
    edge = math.sqrt(min(V.total_mass, 1.0) / 2.0)
    if not (0 < eps < edge):
        raise ValueError(f"eps={eps!r} must lie in (0, {edge!r})")
    lower, upper = laplace.bm0_bounds(V, eps * eps)
    if sd.kind == DISCRETE:
        upper += 1.0
    return lower, upper


def _need_discrete(chain):
    if chain.kind != DISCRETE:
        raise ValueError("expected a discrete-time chain")


def lazy(chain: ReversibleChain, theta: float) -> ReversibleChain:
    """``K_theta = theta I + (1 - theta) K``."""
    _need_discrete(chain)
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    K = theta * np.eye(chain.size) + (1.0 - theta) * chain.matrix
    return ReversibleChain(DISCRETE, K, chain.stationary)


def continuize(chain: ReversibleChain) -> ReversibleChain:
    """Generator ``L = K - I`` of the associated continuous-time chain."""
    _need_discrete(chain)
    return ReversibleChain(CONTINUOUS, chain.matrix - np.eye(chain.size), chain.stationary)


def comparison_report(chain: ReversibleChain, mu, theta: float, c: float, eps: float) -> dict:
    """Compare the continuised chain with the ``theta``-lazy chain.

    Reports both mixing times and their ratio, ``tau(c) / tau_theta(c)``, the
    admissible ratio window ``[1 - theta, -log(2 theta - 1)/2]`` and the
    eigenvalue-wise checks ``(1-theta) lam_i <= -log beta_i^theta <=
    -log(2 theta - 1) lam_i / 2``.  ``checks`` holds one boolean per
    inequality and ``ok`` their conjunction.
    """
    _need_discrete(chain)
    if not 0.5 < theta < 1:
        raise ValueError("theta must lie in (1/2, 1)")
    cts = continuize(chain)
    lz = lazy(chain, theta)
    sd_c = decompose(cts, mu)
    sd_t = decompose(lz, mu)
    V_c, V_t = to_measure(sd_c), to_measure(sd_t)
    T_c = mixing_time(sd_c, eps, V_c)
    T_t = mixing_time(sd_t, eps, V_t)
    tau_cts = laplace.tau_c(V_c, c)
    tau_lazy = laplace.tau_c(V_t, c)

    sd_k = decompose(chain, mu)
    beta = sd_k.rates[1:]
    lam = 1.0 - beta
    beta_theta = theta + (1.0 - theta) * beta
    neg_log = -np.log(beta_theta)
    lo_c, hi_c = 1.0 - theta, -math.log(2.0 * theta - 1.0) / 2.0
    slack = 1e-12
    eig_lower = bool(np.all((1.0 - theta) * lam <= neg_log + slack * (1 + neg_log)))
    eig_upper = bool(np.all(neg_log <= hi_c * lam + slack * (1 + lam)))
    tau_ratio = tau_cts / tau_lazy
    checks = {
        "eig_lower": eig_lower,
        "eig_upper": eig_upper,
        "tau_lazy_le": tau_lazy <= tau_cts / (1.0 - theta) * (1 + 1e-12),
        "tau_lazy_ge": tau_lazy >= 2.0 * tau_cts / -math.log(2.0 * theta - 1.0) * (1 - 1e-12),
    }
    report = {
        "theta": theta, "c": c, "eps": eps,
        "T2_continuous": T_c, "T2_lazy": T_t,
        "T_ratio": T_c / T_t if T_t else math.inf,
        "tau_continuous": tau_cts, "tau_lazy": tau_lazy, "tau_ratio": tau_ratio,
        "ratio_lower": lo_c, "ratio_upper": hi_c,
        "checks": checks, "ok": all(checks.values()),
    }
    theta0 = float(np.min(np.diag(chain.matrix)))
    report["theta0"] = theta0
    if theta0 > 0.5 and theta0 < 1.0:
        # K = theta0 I + (1 - theta0) K~ ; compare K itself with the continuised K~
        Kt = (chain.matrix - theta0 * np.eye(chain.size)) / (1.0 - theta0)
        base = ReversibleChain(DISCRETE, Kt, chain.stationary)
        sd_b = decompose(continuize(base), mu)
        T_b = mixing_time(sd_b, eps)
        T_k = mixing_time(sd_k, eps)
        report["rescaled"] = {
            "T2_continuous_base": T_b, "T2_chain": T_k,
            "ratio": T_b / T_k if T_k else math.inf,
            "ratio_lower": 1.0 - theta0,
            "ratio_upper": -math.log(2.0 * theta0 - 1.0) / 2.0,
        }
    return report
