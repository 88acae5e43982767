"""Continuous-time product chains from factor-level spectral data.

A product chain runs independent coordinate chains ``L_i`` at speeds
``p_i`` (generator ``sum_i p_i I x ... x L_i x ... x I``).  Everything here
works from the factor spectra; the full tensor spectrum is only built by
:func:`full_tensor_spectrum` as an oracle for small cases.
"""
from __future__ import annotations

import math
import os

import numpy as np
import scipy.linalg

from . import laplace
from .spectral import CONTINUOUS, MERGE_RTOL, SpectralData, decompose, read_chain

__all__ = [
    "ProductSpec",
    "ProductSpectral",
    "assemble",
    "product_l2_sq",
    "factor_sum",
    "script_T",
    "product_mixing_time",
    "j_tilde",
    "tau_tilde",
    "factor_measure",
    "full_tensor_spectrum",
    "jtau_bracket_check",
    "tensor_generator",
    "product_l2_direct",
    "parse_product",
    "format_product",
    "read_product",
]

TENSOR_CAP = 2**20
DENSE_CAP = 4096


def _merge_factor(rates, weights, rtol=MERGE_RTOL):
    """Merge equal nonzero eigenvalues of one factor (weights add)."""
    order = np.argsort(rates, kind="stable")
    rates, weights = rates[order], weights[order]
    out_r, out_w = [], []
    for r, w in zip(rates, weights):
        if out_r and r - out_r[-1] <= rtol * out_r[-1]:
            out_w[-1] += w
        else:
            out_r.append(r)
            out_w.append(w)
    return np.array(out_r), np.array(out_w)


class ProductSpec:
    """Factor spectra plus speeds ``p_i`` (``sum p_i <= 1``).

    Stored flat: ``rates[k]``, ``weights[k]`` are the ``eigen[k]``-th distinct
    nonzero eigenvalue of factor ``owner[k]`` and its weight
    ``mu_i(phi_{i,j})^2``.  The per-factor :class:`SpectralData` objects are
    rebuilt on demand via :attr:`factors`.
    """

    def __init__(self, factors, p):
        p = np.asarray(p, dtype=float).ravel()
        factors = list(factors)
        if len(factors) != p.size or p.size == 0:
            raise ValueError("need one speed per factor and at least one factor")
        rates, weights, owner, eigen = [], [], [], []
        for i, sd in enumerate(factors):
            if sd.kind != CONTINUOUS:
                raise ValueError(
                    "product factors must be continuous-time; the product L2 identity "
                    "fails for discrete-time products"
                )
            r, w = _merge_factor(sd.rates[1:], sd.weights[1:])
            if r.size == 0 or np.any(r <= 0):
                raise ValueError(f"factor {i} is not irreducible (needs positive nonzero rates)")
            rates.append(r)
            weights.append(w)
            owner.append(np.full(r.size, i))
            eigen.append(np.arange(1, r.size + 1))
        self._set(p, np.concatenate(rates), np.concatenate(weights),
                  np.concatenate(owner), np.concatenate(eigen))

    def _set(self, p, rates, weights, owner, eigen):
        if np.any(p <= 0):
            raise ValueError("speeds p_i must be positive")
        if p.sum() > 1.0 + 1e-12:
            raise ValueError(f"speeds must sum to at most 1 (got {p.sum()!r})")
        for a in (p, rates, weights, owner, eigen):
            a.setflags(write=False)
        self.p, self.rates, self.weights = p, rates, weights
        self.owner, self.eigen = owner, eigen

    @classmethod
    def from_flat(cls, p, rates, weights, owner, eigen=None):
        """Bulk constructor for analytic families (no per-factor objects)."""
        self = cls.__new__(cls)
        p = np.asarray(p, dtype=float).ravel()
        rates = np.asarray(rates, dtype=float).ravel()
        weights = np.asarray(weights, dtype=float).ravel()
        owner = np.asarray(owner, dtype=int).ravel()
        if eigen is None:
            eigen = np.ones_like(owner)
        eigen = np.asarray(eigen, dtype=int).ravel()
        if np.any(rates <= 0):
            raise ValueError("factor rates must be positive")
        self._set(p, rates, weights, owner, eigen)
        return self

    @classmethod
    def two_state(cls, A, B, p):
        """Product of two-state chains ``[[-A, A], [B, -B]]`` started at 0."""
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        n = A.size
        return cls.from_flat(p, A + B, A / B, np.arange(n))

    @property
    def n_factors(self) -> int:
        return int(self.p.size)

    @property
    def factors(self):
        out = []
        for i in range(self.n_factors):
            sel = self.owner == i
            out.append(SpectralData.from_atoms(self.rates[sel], self.weights[sel]))
        return out

    @property
    def factor_masses(self) -> np.ndarray:
        return np.bincount(self.owner, weights=self.weights, minlength=self.n_factors)

    @property
    def mass(self) -> float:
        """chi-square mass of the product chain, ``prod(1 + m_i) - 1``."""
        with np.errstate(over="ignore"):  # inf is the honest answer for huge products
            return float(np.expm1(np.log1p(self.factor_masses).sum()))

    def sizes(self):
        return np.bincount(self.owner, minlength=self.n_factors) + 1


class ProductSpectral:
    """Factor-level arrangement ``rho_l = p_i lambda_{i,j}`` and ``psi_l^2``.

    Sorted by ``rho`` with ties broken by ``(factor, eigen index)``.
    """

    def __init__(self, rho, psi_sq, provenance):
        self.rho = np.asarray(rho, dtype=float)
        self.psi_sq = np.asarray(psi_sq, dtype=float)
        self.provenance = np.asarray(provenance, dtype=int).reshape(-1, 2)
        self.cum = np.cumsum(self.psi_sq)
        for a in (self.rho, self.psi_sq, self.provenance, self.cum):
            a.setflags(write=False)

    def __len__(self):
        return int(self.rho.size)

    @property
    def total(self) -> float:
        return float(self.cum[-1]) if self.cum.size else 0.0


def assemble(spec: ProductSpec) -> ProductSpectral:
    rho = spec.p[spec.owner] * spec.rates
    order = np.lexsort((spec.eigen, spec.owner, rho))
    prov = np.stack([spec.owner[order], spec.eigen[order]], axis=1)
    return ProductSpectral(rho[order], spec.weights[order], prov)


def _factor_d2(spec: ProductSpec, t):
    """Per-factor ``d_{i,2}(mu_i, p_i t)^2``."""
    terms = spec.weights * np.exp(-2.0 * t * spec.p[spec.owner] * spec.rates)
    return np.bincount(spec.owner, weights=terms, minlength=spec.n_factors)


def product_l2_sq(spec: ProductSpec, t: float) -> float:
    """``prod_i (d_{i,2}(mu_i, p_i t)^2 + 1) - 1``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    with np.errstate(over="ignore"):
        return float(np.expm1(np.log1p(_factor_d2(spec, t)).sum()))


def factor_sum(spec: ProductSpec, t: float) -> float:
    """``f(t) = sum_l psi_l^2 exp(-2 rho_l t) = sum_i d_{i,2}(mu_i, p_i t)^2``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return float(np.dot(spec.weights, np.exp(-2.0 * t * spec.p[spec.owner] * spec.rates)))


def factor_measure(ps: ProductSpectral) -> laplace.SpectralMeasure:
    """Laplace measure ``{(2 rho_l, psi_l^2)}`` whose transform is :func:`factor_sum`."""
    keep = ps.psi_sq > 0
    return laplace.SpectralMeasure(2.0 * ps.rho[keep], ps.psi_sq[keep])


def script_T(spec: ProductSpec, eps: float, ps: ProductSpectral | None = None) -> float:
    """``min{t >= 0 : sum_i d_{i,2}(mu_i, p_i t)^2 <= eps}``."""
    if not eps > 0:
        raise ValueError("eps must be > 0")
    if ps is None:
        ps = assemble(spec)
    return laplace.mixing_time(factor_measure(ps), eps)


def product_mixing_time(spec: ProductSpec, eps: float) -> float:
    """``T_2(mu, eps)`` of the product chain from :func:`product_l2_sq`."""
    if not eps > 0:
        raise ValueError("eps must be > 0")
    target = eps * eps
    if product_l2_sq(spec, 0.0) <= target:
        return 0.0
    f0 = factor_sum(spec, 0.0)
    rmin = float((spec.p[spec.owner] * spec.rates).min())
    # d^2 <= exp(f(t)) - 1 and f(t) <= f(0) exp(-2 rmin t)
    hi = max(math.log(f0 / math.log1p(target)), 0.0) / (2.0 * rmin) + 1e-300
    return laplace.first_time_below(lambda t: product_l2_sq(spec, t), target, hi)


def _j_index(cum, c):
    if cum.size == 0 or not (0 < c < cum[-1]):
        raise ValueError(f"c={c!r} must lie in (0, {float(cum[-1]) if cum.size else 0.0!r})")
    return int(np.searchsorted(cum, c, side="right"))


def j_tilde(ps: ProductSpectral, c: float) -> int:
    """1-based ``min{j : sum_{l<=j} psi_l^2 > c}``."""
    return _j_index(ps.cum, c) + 1


def tau_tilde(ps: ProductSpectral, c: float) -> float:
    """``max_{j >= j~(c)} log(1 + sum_{l<=j} psi_l^2) / (2 rho_j)``."""
    k = _j_index(ps.cum, c)
    return float(np.max(np.log1p(ps.cum[k:]) / (2.0 * ps.rho[k:])))


def full_tensor_spectrum(spec: ProductSpec, cap: int = TENSOR_CAP):
    """All nonzero ``lambda_J = sum_i p_i lambda_{i, j_i}`` with weights ``prod_i w_{i, j_i}``.

    Returns ``(varrho, weights)`` sorted ascending in ``varrho``.  Factors
    are taken at the merged (distinct-eigenvalue) level with the trivial
    eigenvalue 0 of weight 1 prepended.
    """
    sizes = spec.sizes()
    total = int(np.prod(sizes.astype(float)))
    if total > cap:
        raise ValueError(f"tensor spectrum has {total} entries, above cap {cap}")
    lam = np.zeros(1)
    wt = np.ones(1)
    for i in range(spec.n_factors):
        sel = spec.owner == i
        li = np.concatenate(([0.0], spec.p[i] * spec.rates[sel]))
        wi = np.concatenate(([1.0], spec.weights[sel]))
        lam = (lam[:, None] + li[None, :]).ravel()
        wt = (wt[:, None] * wi[None, :]).ravel()
    lam, wt = lam[1:], wt[1:]
    order = np.argsort(lam, kind="stable")
    return lam[order], wt[order]


def jtau_bracket_check(spec: ProductSpec, c: float, cap: int = TENSOR_CAP):
    """``(varrho_{j(c)}, rho_{j~(c)}, varrho_{j(e^c - 1)}, ok)``.

    ``j`` runs over the full tensor arrangement and ``j~`` over the factor
    arrangement; ``varrho_{j(e^c-1)}`` is ``inf`` when the cumulative tensor
    weight never exceeds ``e^c - 1``.
    """
    ps = assemble(spec)
    mid = float(ps.rho[j_tilde(ps, c) - 1])
    varrho, w = full_tensor_spectrum(spec, cap)
    cum = np.cumsum(w)
    lhs = float(varrho[_j_index(cum, c)])
    level = math.expm1(c)
    k = int(np.searchsorted(cum, level, side="right"))
    rhs = float(varrho[k]) if k < cum.size else math.inf
    tol = 1e-12 * max(1.0, mid)
    return lhs, mid, rhs, bool(lhs <= mid + tol and mid <= rhs + tol)


def tensor_generator(generators, p):
    """Explicit ``sum_i p_i I x ... x L_i x ... x I`` (small cases only)."""
    mats = [np.asarray(g, dtype=float) for g in generators]
    dims = [m.shape[0] for m in mats]
    N = int(np.prod(dims))
    if N > DENSE_CAP:
        raise ValueError(f"tensor generator has {N} states, above {DENSE_CAP}")
    out = np.zeros((N, N))
    for i, (L, pi_) in enumerate(zip(mats, p)):
        left = int(np.prod(dims[:i]))
        right = int(np.prod(dims[i + 1:]))
        out += pi_ * np.kron(np.kron(np.eye(left), L), np.eye(right))
    return out


def kron_all(vectors):
    out = np.ones(1)
    for v in vectors:
        out = np.kron(out, v)
    return out


def product_l2_direct(chains, mus, p, t: float) -> float:
    """Squared L2 distance of the product chain via ``expm`` of the explicit generator."""
    G = tensor_generator([c.matrix for c in chains], p)
    mu = kron_all(mus)
    pi = kron_all([c.stationary for c in chains])
    nu = mu @ scipy.linalg.expm(t * G)
    return float(np.sum((nu / pi - 1.0) ** 2 * pi))


# -- product spec files ------------------------------------------------------
#
#   factor 0.2            # speed p_i, followed by "rate weight" lines
#   1.0 1.0
#   factor 0.3 chain=two_state.chain   # or: a chain file with an initial law
#
# Rates are factor eigenvalues of -L_i in chain units (not doubled).


def parse_product(text: str, source: str = "<string>", base_dir=None) -> ProductSpec:

    speeds, factors = [], []
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0].lower() == "factor":
            if current is not None:
                factors.append(_close_factor(current, source))
            try:
                speeds.append(float(tok[1]))
            except (IndexError, ValueError):
                raise ValueError(f"{source}:{lineno}: 'factor <speed>' expected") from None
            current = {"line": lineno, "rates": [], "weights": [], "sd": None}
            for extra in tok[2:]:
                key, _, val = extra.partition("=")
                if key != "chain" or not val:
                    raise ValueError(f"{source}:{lineno}: unknown option {extra!r}")
                path = val if base_dir is None else os.path.join(base_dir, val)
                chain, mu = read_chain(path)
                if mu is None:
                    raise ValueError(f"{source}:{lineno}: chain file {val} has no initial law")
                current["sd"] = decompose(chain, mu)
            continue
        if current is None:
            raise ValueError(f"{source}:{lineno}: atom line before any 'factor'")
        if len(tok) != 2:
            raise ValueError(f"{source}:{lineno}: expected 'rate weight', got {raw!r}")
        try:
            current["rates"].append(float(tok[0]))
            current["weights"].append(float(tok[1]))
        except ValueError:
            raise ValueError(f"{source}:{lineno}: non-numeric entry in {raw!r}") from None
    if current is not None:
        factors.append(_close_factor(current, source))
    if not factors:
        raise ValueError(f"{source}: no factors")
    return ProductSpec(factors, speeds)


def _close_factor(cur, source):
    if cur["sd"] is not None:
        if cur["rates"]:
            raise ValueError(f"{source}:{cur['line']}: factor has both a chain file and atoms")
        return cur["sd"]
    if not cur["rates"]:
        raise ValueError(f"{source}:{cur['line']}: factor has no atoms")
    return SpectralData.from_atoms(cur["rates"], cur["weights"])


def format_product(spec: ProductSpec) -> str:
    out = ["# factor <speed>, then 'rate weight' lines (eigenvalues of -L_i)"]
    for i in range(spec.n_factors):
        out.append(f"factor {float(spec.p[i])!r}")
        sel = spec.owner == i
        out += [f"{r!r} {w!r}" for r, w in zip(spec.rates[sel].tolist(), spec.weights[sel].tolist())]
    return "\n".join(out) + "\n"


def read_product(path) -> ProductSpec:
    with open(path) as fh:
        return parse_product(fh.read(), str(path), base_dir=os.path.dirname(os.path.abspath(path)))

