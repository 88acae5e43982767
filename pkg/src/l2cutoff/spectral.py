"""Reversible finite chains and their L2 spectral data.

A chain is either discrete (row-stochastic kernel ``K``) or continuous
(generator ``L`` with zero row sums).  For reversible chains the symmetrised
matrix ``D^{1/2} M D^{-1/2}`` (``D = diag(pi)``) is symmetric, and its
eigenpairs give the L2 distance from an initial law ``mu`` in closed form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components

from .laplace import SpectralMeasure

__all__ = [
    "DISCRETE",
    "CONTINUOUS",
    "ChainValidationError",
    "ReversibleChain",
    "SpectralData",
    "validate",
    "stationary_solve",
    "decompose",
    "eigenbasis",
    "l2_distance",
    "l2_distance_direct",
    "chi2",
    "to_measure",
    "random_reversible_chain",
    "two_state_generator",
    "parse_chain",
    "format_chain",
    "read_chain",
    "write_chain",
]

DISCRETE = "discrete"
CONTINUOUS = "continuous"
KINDS = (DISCRETE, CONTINUOUS)

ROW_TOL = 1e-12
BALANCE_RTOL = 1e-10
STATIONARY_TOL = 1e-10
EIG_RTOL = 1e-8
MERGE_RTOL = 1e-10
DIRECT_MAX_STATES = 512


class ChainValidationError(ValueError):
    """A chain violates one of its structural invariants.

    ``invariant`` names the violated property and ``indices`` lists the
    offending states (or state pairs).
    """

    def __init__(self, invariant: str, message: str, indices=()):
        super().__init__(f"{invariant}: {message}")
        self.invariant = invariant
        self.indices = list(indices)


class EigensolverError(RuntimeError):
    pass


def _check_kind(kind):
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")


def _irreducible(matrix) -> bool:
    adj = (np.abs(matrix) > 0).astype(int)
    np.fill_diagonal(adj, 0)
    if matrix.shape[0] == 1:
        return True
    n, _ = connected_components(adj, directed=True, connection="strong")
    return n == 1


def validate(matrix, kind, stationary=None) -> dict:
    """Check a kernel/generator and return a residual report.

    Raises :class:`ChainValidationError` naming the first violated invariant.
    When ``stationary`` is omitted it is solved for.
    """
    _check_kind(kind)
    M = np.asarray(matrix, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] == 0:
        raise ChainValidationError("shape", f"matrix must be square and nonempty, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ChainValidationError("finite", "matrix has non-finite entries")
    m = M.shape[0]
    rows = M.sum(axis=1)
    if kind == DISCRETE:
        neg = np.argwhere(M < 0)
        if neg.size:
            raise ChainValidationError(
                "nonnegativity", "kernel has negative entries", [tuple(x) for x in neg]
            )
        row_res = np.abs(rows - 1.0)
    else:
        off = M - np.diag(np.diag(M))
        neg = np.argwhere(off < 0)
        if neg.size:
            raise ChainValidationError(
                "nonnegativity", "generator has negative off-diagonal rates",
                [tuple(x) for x in neg],
            )
        row_res = np.abs(rows)
    bad = np.flatnonzero(row_res > ROW_TOL * max(1.0, np.abs(M).max()))
    if bad.size:
        what = "rows must sum to 1" if kind == DISCRETE else "rows must sum to 0"
        raise ChainValidationError(
            "stochasticity" if kind == DISCRETE else "generator",
            f"{what}; offending rows {bad.tolist()}", bad.tolist(),
        )
    if not _irreducible(M):
        raise ChainValidationError("irreducibility", "the chain has more than one communicating class")

    if stationary is None:
        pi = stationary_solve(M, kind)
    else:
        pi = np.asarray(stationary, dtype=float).ravel()
        if pi.shape != (m,):
            raise ChainValidationError("stationary", f"expected {m} entries, got {pi.size}")
        if np.any(pi <= 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise ChainValidationError("stationary", "stationary law must be positive and sum to 1")

    flow = pi[:, None] * M
    scale = np.maximum(np.abs(flow), np.abs(flow.T))
    res = np.abs(flow - flow.T)
    viol = np.argwhere(res > BALANCE_RTOL * np.maximum(scale, 1e-300) + 1e-300)
    viol = [tuple(x) for x in viol if x[0] < x[1]]
    if viol:
        raise ChainValidationError(
            "detailed balance",
            f"pi(x)M(x,y) != pi(y)M(y,x) for pairs {viol[:5]}", viol,
        )
    if kind == DISCRETE:
        stat_res = float(np.abs(pi @ M - pi).max())
    else:
        stat_res = float(np.abs(pi @ M).max())
    return {
        "kind": kind,
        "states": m,
        "row_residual": float(row_res.max()),
        "balance_residual": float(res.max()),
        "stationary_residual": stat_res,
        "irreducible": True,
        "stationary": pi,
    }


def stationary_solve(matrix, kind) -> np.ndarray:
    """Solve ``pi K = pi`` (or ``pi L = 0``) with ``sum(pi) = 1``.

    Uses a dense solve of the transposed system with the last equation
    replaced by the normalisation row.
    """
    _check_kind(kind)
    M = np.asarray(matrix, dtype=float)
    m = M.shape[0]
    A = (M - np.eye(m)).T if kind == DISCRETE else M.T.copy()
    A[-1, :] = 1.0
    b = np.zeros(m)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        raise ChainValidationError("irreducibility", "stationary system is singular") from None
    res = pi @ (M - np.eye(m) if kind == DISCRETE else M)
    if not np.all(pi > 0):
        raise ChainValidationError(
            "irreducibility", "stationary solution is not strictly positive",
            np.flatnonzero(pi <= 0).tolist(),
        )
    if np.abs(res).max() > STATIONARY_TOL * max(1.0, np.abs(M).max()):
        raise ChainValidationError("stationary", f"residual {np.abs(res).max():.3g} too large")
    return pi / pi.sum()


@dataclass(frozen=True)
class ReversibleChain:
    """Irreducible reversible chain ``(S, M, pi)``; validated on construction."""

    kind: str
    matrix: np.ndarray
    stationary: np.ndarray = None
    report: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        M = np.array(self.matrix, dtype=float)
        rep = validate(M, self.kind, self.stationary)
        pi = np.array(rep["stationary"])
        M.setflags(write=False)
        pi.setflags(write=False)
        object.__setattr__(self, "matrix", M)
        object.__setattr__(self, "stationary", pi)
        object.__setattr__(self, "report", rep)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def delta(self, x: int) -> np.ndarray:
        mu = np.zeros(self.size)
        mu[x] = 1.0
        return mu


@dataclass(frozen=True)
class SpectralData:
    """Eigen-rates and initial-law weights of a reversible chain.

    ``rates[0]`` is the trivial eigenvalue (0 for continuous chains, 1 for
    discrete ones) and ``weights[i] = mu(phi_i)^2``.  Continuous rates are the
    eigenvalues of ``-L`` in increasing order; discrete rates are the
    eigenvalues of ``K`` ordered by decreasing modulus.
    """

    kind: str
    rates: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        _check_kind(self.kind)
        r = np.array(self.rates, dtype=float).ravel()
        w = np.array(self.weights, dtype=float).ravel()
        if r.shape != w.shape or r.size == 0:
            raise ValueError("rates and weights must be nonempty and of equal length")
        r.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "rates", r)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_atoms(cls, rates, weights, kind=CONTINUOUS):
        """Build from the nontrivial eigenvalues and weights only."""
        head = 0.0 if kind == CONTINUOUS else 1.0
        return cls(kind, np.concatenate(([head], np.asarray(rates, float))),
                   np.concatenate(([1.0], np.asarray(weights, float))))

    @property
    def mass(self) -> float:
        """chi-square mass ``pi(|mu/pi|^2) - 1 = sum_{i>=1} w_i``."""
        return float(self.weights[1:].sum())

    @property
    def zero_weight(self) -> float:
        """Weight carried by zero eigenvalues of a discrete kernel."""
        if self.kind != DISCRETE:
            return 0.0
        r = self.rates[1:]
        return float(self.weights[1:][np.abs(r) <= ZERO_BETA].sum())


ZERO_BETA = 1e-12


def eigenbasis(chain: ReversibleChain):
    """Eigenvalues ``theta`` and L2(pi)-orthonormal right eigenvectors (columns of ``phi``)."""
    s = np.sqrt(chain.stationary)
    M = chain.matrix
    S = s[:, None] * M / s[None, :]
    S = 0.5 * (S + S.T)
    try:
        theta, U = np.linalg.eigh(S)
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(f"symmetric eigensolver failed: {exc}") from None
    phi = U / s[:, None]
    scale = max(np.abs(M).sum(axis=1).max(), 1e-300)
    resid = np.abs(M @ phi - phi * theta).max()
    if resid > EIG_RTOL * scale:
        raise EigensolverError(f"eigen residual {resid:.3g} exceeds tolerance")
    return theta, phi


def decompose(chain: ReversibleChain, mu) -> SpectralData:
    """Spectral data of ``chain`` started from ``mu``."""
    mu = np.asarray(mu, dtype=float).ravel()
    if mu.shape != (chain.size,):
        raise ValueError(f"initial law must have {chain.size} entries")
    if np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-10:
        raise ValueError("initial law must be a probability vector")
    theta, phi = eigenbasis(chain)
    coef = mu @ phi
    w = coef**2
    # trivial eigenvector is the top eigenvalue (0 for -L, 1 for K)
    top = int(np.argmax(theta))
    rest = np.delete(np.arange(theta.size), top)
    if chain.kind == CONTINUOUS:
        lam = np.clip(-theta[rest], 0.0, None)
        order = np.argsort(lam, kind="stable")
        rates = np.concatenate(([0.0], lam[order]))
    else:
        beta = np.clip(theta[rest], -1.0, 1.0)
        order = np.lexsort((-beta, -np.abs(beta)))
        rates = np.concatenate(([1.0], beta[order]))
    weights = np.concatenate(([w[top]], w[rest][order]))
    return SpectralData(chain.kind, rates, weights)


def chi2(chain: ReversibleChain, mu) -> float:
    """``pi(|mu/pi|^2) - 1`` computed directly."""
    mu = np.asarray(mu, dtype=float)
    return float(np.sum(mu**2 / chain.stationary) - 1.0)


def _check_time(kind, t):
    if t < 0:
        raise ValueError("t must be >= 0")
    if kind == DISCRETE and float(t) != int(t):
        raise ValueError("discrete chains require an integer time")


def l2_distance(sd: SpectralData, t) -> float:
    """L2(pi) distance of the time-``t`` law from ``pi`` via the spectrum."""
    _check_time(sd.kind, t)
    w = sd.weights[1:]
    r = sd.rates[1:]
    if sd.kind == CONTINUOUS:
        d2 = np.dot(w, np.exp(-2.0 * t * r))
    else:
        d2 = np.dot(w, np.power(r, 2 * int(t)))
    return math.sqrt(max(float(d2), 0.0))


def l2_distance_direct(chain: ReversibleChain, mu, t) -> float:
    """L2 distance computed without the spectrum (matrix powers / expm)."""
    _check_time(chain.kind, t)
    if chain.size > DIRECT_MAX_STATES:
        raise ValueError(f"direct evaluation is capped at {DIRECT_MAX_STATES} states")
    nu = np.asarray(mu, dtype=float).copy()
    if chain.kind == DISCRETE:
        for _ in range(int(t)):
            nu = nu @ chain.matrix
    else:
        nu = nu @ scipy.linalg.expm(t * chain.matrix)
    pi = chain.stationary
    return math.sqrt(float(np.sum((nu / pi - 1.0) ** 2 * pi)))


def to_measure(sd: SpectralData, merge_rtol: float = MERGE_RTOL,
               drop_below: float | None = None) -> SpectralMeasure:
    """Laplace-transform measure with ``L_V(t) = d_2(mu, t)^2``.

    Atoms are ``(2 lam_i, w_i)`` for continuous chains and
    ``(-2 log|beta_i|, w_i)`` for discrete ones.  Zero eigenvalues of a
    discrete kernel are dropped (their weight is :attr:`SpectralData.zero_weight`),
    and weights below ``drop_below`` (default ``1e-14 * max(1, mass)``) are
    treated as numerical zeros.
    """
    w = sd.weights[1:]
    r = sd.rates[1:]
    if drop_below is None:
        drop_below = 1e-14 * max(1.0, float(w.sum()))
    if sd.kind == CONTINUOUS:
        keep = (r > 0) & (w > drop_below)
        if np.any((r <= 0) & (w > drop_below)):
            raise ValueError("a zero rate carries weight; the chain is not irreducible")
        rates = 2.0 * r[keep]
    else:
        a = np.abs(r)
        if np.any((a >= 1.0) & (w > drop_below)):
            raise ValueError("eigenvalue of modulus 1 carries weight (periodic chain)")
        keep = (a > ZERO_BETA) & (a < 1.0) & (w > drop_below)
        rates = -2.0 * np.log(a[keep])
    return SpectralMeasure(rates, w[keep], merge_rtol=merge_rtol)


def two_state_generator(A: float, B: float) -> ReversibleChain:
    return ReversibleChain(CONTINUOUS, np.array([[-A, A], [B, -B]]))


def random_reversible_chain(rng: np.random.Generator, m: int, kind=DISCRETE,
                            sparsity: float = 0.3) -> ReversibleChain:
    """Random reversible chain from symmetric positive edge weights.

    ``W`` is symmetric with a positive diagonal and a Hamiltonian path to
    keep it connected; ``K = W / rowsum(W)`` is reversible with ``pi``
    proportional to the row sums.  Continuous chains use ``L = c (K - I)``
    with a random speed ``c``.
    """
    W = rng.uniform(0.05, 1.0, size=(m, m)) * (rng.random((m, m)) > sparsity)
    W = np.triu(W, 1)
    perm = rng.permutation(m)
    for a, b in zip(perm[:-1], perm[1:]):
        i, j = min(a, b), max(a, b)
        W[i, j] = max(W[i, j], rng.uniform(0.05, 1.0))
    W = W + W.T + np.diag(rng.uniform(0.05, 1.0, size=m))
    deg = W.sum(axis=1)
    K = W / deg[:, None]
    pi = deg / deg.sum()
    if kind == DISCRETE:
        return ReversibleChain(DISCRETE, K, pi)
    L = rng.uniform(0.2, 3.0) * (K - np.eye(m))
    L[np.diag_indices(m)] = -(L.sum(axis=1) - np.diag(L))
    return ReversibleChain(CONTINUOUS, L, pi)


# -- chain files -------------------------------------------------------------
#
#   # comment
#   kind: continuous
#   states: 2
#   matrix:
#   -0.5 0.5
#   0.5 -0.5
#   stationary: 0.5 0.5      (optional)
#   initial: 1 0             (optional; or "initial: delta 0")


def _floats(tokens, source, lineno):
    try:
        return [float(x) for x in tokens]
    except ValueError:
        raise ChainFileError(f"{source}:{lineno}: non-numeric entry in {' '.join(tokens)!r}") from None


class ChainFileError(ValueError):
    pass


def parse_chain(text: str, source: str = "<string>"):
    """Parse chain-file text; returns ``(chain, mu)`` with ``mu`` possibly None."""
    kind = None
    m = None
    rows: list[list[float]] = []
    stationary = None
    initial = None
    reading_matrix = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, rest = line.partition(":")
        key = key.strip().lower()
        if sep and key in {"kind", "states", "matrix", "stationary", "initial"}:
            reading_matrix = False
            rest = rest.strip()
            if key == "kind":
                kind = rest.lower()
                if kind not in KINDS:
                    raise ChainFileError(f"{source}:{lineno}: unknown kind {rest!r}")
            elif key == "states":
                try:
                    m = int(rest)
                except ValueError:
                    raise ChainFileError(f"{source}:{lineno}: states must be an integer") from None
            elif key == "matrix":
                reading_matrix = True
                if rest:
                    rows.append(_floats(rest.split(), source, lineno))
            elif key == "stationary":
                stationary = _floats(rest.split(), source, lineno)
            else:
                tok = rest.split()
                if tok and tok[0].lower() == "delta":
                    if len(tok) != 2:
                        raise ChainFileError(f"{source}:{lineno}: use 'initial: delta <state>'")
                    initial = ("delta", int(tok[1]))
                else:
                    initial = _floats(tok, source, lineno)
            continue
        if not reading_matrix:
            raise ChainFileError(f"{source}:{lineno}: unexpected line {raw!r}")
        row = _floats(line.replace(",", " ").split(), source, lineno)
        if m is not None and len(row) != m:
            raise ChainFileError(f"{source}:{lineno}: expected {m} entries, got {len(row)}")
        rows.append(row)
    if kind is None:
        raise ChainFileError(f"{source}: missing 'kind:'")
    if not rows:
        raise ChainFileError(f"{source}: missing 'matrix:'")
    if m is None:
        m = len(rows)
    if len(rows) != m or any(len(r) != m for r in rows):
        raise ChainFileError(f"{source}: matrix must be {m}x{m}")
    chain = ReversibleChain(kind, np.array(rows), stationary)
    mu = None
    if isinstance(initial, tuple):
        if not 0 <= initial[1] < m:
            raise ChainFileError(f"{source}: initial state {initial[1]} out of range")
        mu = chain.delta(initial[1])
    elif initial is not None:
        mu = np.array(initial)
        if mu.shape != (m,):
            raise ChainFileError(f"{source}: initial law must have {m} entries")
    return chain, mu


def format_chain(chain: ReversibleChain, mu=None) -> str:
    out = [f"kind: {chain.kind}", f"states: {chain.size}", "matrix:"]
    out += [" ".join(repr(float(x)) for x in row) for row in chain.matrix]
    out.append("stationary: " + " ".join(repr(float(x)) for x in chain.stationary))
    if mu is not None:
        out.append("initial: " + " ".join(repr(float(x)) for x in mu))
    return "\n".join(out) + "\n"


def read_chain(path):
    with open(path) as fh:
        return parse_chain(fh.read(), str(path))


def write_chain(chain: ReversibleChain, path, mu=None) -> None:
    with open(path, "w") as fh:
        fh.write(format_chain(chain, mu))
