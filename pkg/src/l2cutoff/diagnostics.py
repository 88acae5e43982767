"""Family sweeps and the randomized invariant suite.

A sweep evaluates, for each ``n`` and each ``(c, eps)``, the mixing time,
``lambda_{j(c)}``, ``tau(c)`` and the derived products and windows.  Nothing
here extrapolates: growth exponents are least-squares slopes over the
supplied ``n`` only.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import analysis, laplace
from .product import (
    ProductSpec, assemble, factor_sum, jtau_bracket_check, product_l2_direct, product_l2_sq,
    product_mixing_time, script_T, tau_tilde, j_tilde,
)
from .spectral import (
    CONTINUOUS, DISCRETE, ChainValidationError, ReversibleChain, SpectralData, decompose,
    l2_distance, l2_distance_direct, random_reversible_chain, to_measure, validate,
)

__all__ = [
    "DiagnosticsRow",
    "family_sweep",
    "growth_exponent",
    "precutoff_ratio",
    "property_suite",
    "SuiteReport",
    "random_measure",
    "random_product",
]


@dataclass
class DiagnosticsRow:
    """One ``(n, c, eps)`` evaluation.

    ``lambda_jc`` is in chain units.  For products ``lambda_jc`` is
    ``rho_{j~(c)}``, ``lambda_lo`` is ``rho_{j~(log(1+c))}`` (the other end of
    the tensor-level bracket) and ``T2`` is the product mixing time.
    """

    n: float
    c: float
    eps: float
    T2: float = math.nan
    lambda_jc: float = math.nan
    tau: float = math.nan
    product_T: float = math.nan
    product_tau: float = math.nan
    window_mix: float = math.nan
    window_tau: float = math.nan
    mass: float = math.nan
    lambda_lo: float = math.nan
    admissible: bool = True
    decisive: bool = False
    note: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


COLUMNS = list(DiagnosticsRow.__dataclass_fields__)


def _resolve(obj):
    """Normalise a family member to ``SpectralData`` or ``ProductSpec``."""
    if isinstance(obj, (SpectralData, ProductSpec)):
        return obj
    if isinstance(obj, tuple) and len(obj) == 2 and isinstance(obj[0], ReversibleChain):
        return decompose(*obj)
    raise TypeError(f"cannot sweep over {type(obj).__name__}")


def _rows_for(n, obj, c_list, eps_list, c_min):
    obj = _resolve(obj)
    rows = []
    if isinstance(obj, ProductSpec):
        ps = assemble(obj)
        mass, level = obj.mass, ps.total
        T = {e: product_mixing_time(obj, e) for e in eps_list}
    else:
        V = to_measure(obj)
        mass, level = obj.mass, V.total_mass
        T = {e: analysis.mixing_time(obj, e, V) for e in eps_list}
    for c in c_list:
        base = dict(n=n, c=c, mass=mass, decisive=(c == c_min))
        if not 0 < c < level:
            for e in eps_list:
                rows.append(DiagnosticsRow(eps=e, T2=T[e], admissible=False,
                                           note=f"c >= {level:.6g}", **base))
            continue
        if isinstance(obj, ProductSpec):
            lam = float(ps.rho[j_tilde(ps, c) - 1])
            lo = float(ps.rho[j_tilde(ps, math.log1p(c)) - 1])
            tau = tau_tilde(ps, c)
        else:
            lam = laplace.lambda_c(V, c) / 2.0
            lo = math.nan
            tau = laplace.tau_c(V, c)
        for e in eps_list:
            rows.append(DiagnosticsRow(
                eps=e, T2=T[e], lambda_jc=lam, tau=tau, product_T=T[e] * lam,
                product_tau=tau * lam, window_mix=1.0 / lam, window_tau=math.sqrt(tau / lam),
                lambda_lo=lo, **base))
    return rows


def family_sweep(source, n_list, c_list=(0.25, 0.5, 1.0, 2.0, 4.0),
                 eps_list=(0.1, 0.5, 1.0), jobs: int = 1) -> list:
    """Rows for every ``(n, c, eps)``, ordered by ``n`` then ``c`` then ``eps``.

    ``source`` is a builder ``n -> member`` or a sequence of members aligned
    with ``n_list``; a member is ``SpectralData``, ``ProductSpec`` or
    ``(chain, mu)``.  Rows with ``c`` at or above the available mass are
    marked inadmissible.  ``jobs > 1`` evaluates members on a thread pool;
    the output order does not depend on it.
    """
    n_list = list(n_list)
    c_list = sorted(float(c) for c in c_list)
    eps_list = [float(e) for e in eps_list]
    if not n_list or not c_list or not eps_list:
        raise ValueError("n, c and eps lists must be nonempty")
    members = list(source) if not callable(source) else None
    if members is not None and len(members) != len(n_list):
        raise ValueError("member list and n list differ in length")
    c_min = c_list[0]

    def task(k):
        obj = source(n_list[k]) if members is None else members[k]
        return _rows_for(n_list[k], obj, c_list, eps_list, c_min)

    order = sorted(range(len(n_list)), key=lambda k: n_list[k])
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(task, order))
    else:
        chunks = [task(k) for k in order]
    return [r for chunk in chunks for r in chunk]


def growth_exponent(rows, column: str, c: float | None = None, eps: float | None = None) -> float:
    """Least-squares slope of ``log(column)`` against ``log n`` (descriptive only)."""
    pts = [(r.n, getattr(r, column)) for r in rows
           if r.admissible and (c is None or r.c == c) and (eps is None or r.eps == eps)]
    pts = [(n, v) for n, v in pts if n > 0 and v > 0 and math.isfinite(v)]
    ns = sorted({n for n, _ in pts})
    if len(ns) < 2:
        return math.nan
    first = {}
    for n, v in pts:
        first.setdefault(n, v)
    x = np.log(ns)
    y = np.log([first[n] for n in ns])
    return float(np.polyfit(x, y, 1)[0])


def precutoff_ratio(rows, eps1: float, eps2: float) -> list:
    """``[(n, T2(eps1) / T2(eps2))]``; values tending to 1 point towards cutoff."""
    if not eps1 < eps2:
        raise ValueError("eps1 must be smaller than eps2")
    by_n = {}
    for r in rows:
        by_n.setdefault(r.n, {})[r.eps] = r.T2
    out = []
    for n in sorted(by_n):
        T = by_n[n]
        if eps1 not in T or eps2 not in T:
            raise ValueError(f"eps={eps1} or eps={eps2} missing from the rows at n={n}")
        T1, T2 = T[eps1], T[eps2]
        if not (T2 > 0 and math.isfinite(T1)):
            raise ValueError(f"mixing time at eps={eps2} is zero for n={n}")
        out.append((n, T1 / T2))
    return out


# -- random instances --------------------------------------------------------

def random_measure(rng, k: int | None = None) -> laplace.SpectralMeasure:
    k = int(rng.integers(1, 9)) if k is None else k
    rates = np.exp(rng.uniform(math.log(1e-2), math.log(1e2), size=k))
    masses = np.exp(rng.uniform(math.log(1e-3), math.log(10.0), size=k))
    return laplace.SpectralMeasure(rates, masses)


def random_law(rng, m: int) -> np.ndarray:
    if rng.random() < 0.4:
        mu = np.zeros(m)
        mu[rng.integers(m)] = 1.0
        return mu
    return rng.dirichlet(np.full(m, 0.5))


def random_product(rng, max_factors: int = 4, max_states: int = 4):
    """``(spec, chains, mus)`` with continuous factors and speeds summing to at most 1."""
    k = int(rng.integers(1, max_factors + 1))
    chains, mus, sds = [], [], []
    for _ in range(k):
        m = int(rng.integers(2, max_states + 1))
        ch = random_reversible_chain(rng, m, CONTINUOUS)
        mu = random_law(rng, m)
        chains.append(ch)
        mus.append(mu)
        sds.append(decompose(ch, mu))
    p = rng.dirichlet(np.ones(k)) * rng.uniform(0.5, 1.0)
    return ProductSpec(sds, p), chains, mus


# -- property suite ----------------------------------------------------------

DEFAULT_COUNTS = {
    "oracle": 100, "laplace_ibp": 200, "laplace_bounds": 200, "sandwich": 100,
    "pbm": 60, "product": 40, "bracket": 40, "comparison": 40, "validation": 20,
}
# equality tolerances; inequalities use the same slack relative to their scale
DEFAULT_TOL = {
    "oracle": 1e-8, "laplace_ibp": 1e-10, "laplace_bounds": 1e-12, "sandwich": 1e-12,
    "pbm": 1e-12, "product": 1e-8, "bracket": 1e-12, "comparison": 1e-12, "validation": 0.0,
}


@dataclass
class SuiteResult:
    name: str
    total: int = 0
    passed: int = 0
    worst: float = 0.0
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.passed == self.total


@dataclass
class SuiteReport:
    seed: int
    results: dict
    seconds: float

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.results.values())

    def lines(self):
        for r in self.results.values():
            mark = "PASS" if r.ok else "FAIL"
            msg = f"{mark} {r.name}: {r.passed}/{r.total} worst={r.worst:.3e}"
            if r.failures:
                msg += " failing instance seeds: " + ", ".join(str(s) for s in r.failures[:5])
            yield msg


def _instance_seed(seed, suite_id, i):
    return int(np.random.SeedSequence([seed, suite_id, i]).generate_state(1)[0])


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def _check_oracle(rng, tol):
    m = int(rng.integers(2, 13))
    kind = DISCRETE if rng.random() < 0.5 else CONTINUOUS
    ch = random_reversible_chain(rng, m, kind)
    mu = random_law(rng, m)
    sd = decompose(ch, mu)
    ts = range(20) if kind == DISCRETE else np.linspace(0.0, 10.0, 20)
    worst = max(abs(l2_distance(sd, t) - l2_distance_direct(ch, mu, t)) for t in ts)
    return worst, worst <= tol


def _check_ibp(rng, tol):
    V = random_measure(rng)
    ts = np.exp(rng.uniform(math.log(1e-4), math.log(50.0), size=8)) / V.rates[0]
    worst = 0.0
    for t in ts:
        L = float(laplace.laplace_eval(V, t))
        if L < 1e-250:
            continue
        worst = max(worst, _rel(L, laplace.ibp_rhs(V, t)))
    return worst, worst <= tol


def _check_bounds(rng, tol):
    V = random_measure(rng)
    worst = 0.0
    ok = True
    for c in V.total_mass * rng.uniform(0.01, 0.99, size=4):
        tau = laplace.tau_c(V, c)
        # lower: L(tau) >= c / (1 + c)
        gap = c / (1 + c) - float(laplace.laplace_eval(V, tau))
        worst = max(worst, gap / (c / (1 + c)))
        ok &= gap <= tol * (c / (1 + c))
        for s in tau * np.array([0.1, 0.5, 1.0, 2.0, 5.0]):
            up = laplace.ltcomp_upper(V, c, s)
            val = float(laplace.laplace_eval(V, tau + s))
            worst = max(worst, (val - up) / up)
            ok &= val <= up * (1 + tol)
    return worst, bool(ok)


def _check_sandwich(rng, tol):
    V = random_measure(rng)
    edge = min(V.total_mass, 1.0) / 2.0
    worst, ok = 0.0, True
    for d in edge * rng.uniform(0.01, 0.999, size=4):
        lo, hi = laplace.bm0_bounds(V, d)
        T = laplace.mixing_time(V, d)
        worst = max(worst, (lo - T) / T, (T - hi) / hi)
        ok &= lo <= T * (1 + tol) and T <= hi * (1 + tol)
    return worst, bool(ok)


def _check_pbm(rng, tol):
    m = int(rng.integers(2, 13))
    kind = DISCRETE if rng.random() < 0.5 else CONTINUOUS
    ch = random_reversible_chain(rng, m, kind)
    mu = random_law(rng, m)
    sd = decompose(ch, mu)
    V = to_measure(sd)
    if len(V) == 0:
        return 0.0, True
    edge = math.sqrt(min(V.total_mass, 1.0) / 2.0)
    worst, ok = 0.0, True
    for e in edge * rng.uniform(0.05, 0.999, size=3):
        lo, hi = analysis.pbm_bounds(sd, eps=e)
        T = analysis.mixing_time(sd, e, V)
        if T == 0:
            continue
        worst = max(worst, (lo - T) / T, (T - hi) / hi)
        ok &= lo <= T * (1 + tol) and T <= hi * (1 + tol)
    return worst, bool(ok)


def _check_product(rng, tol):
    spec, chains, mus = random_product(rng)
    worst, ok = 0.0, True
    rmin = float((spec.p[spec.owner] * spec.rates).min())
    for t in np.array([0.0, 0.1, 0.5, 1.0, 3.0]) / rmin:
        a = product_l2_sq(spec, t)
        b = product_l2_direct(chains, mus, spec.p, t)
        err = abs(a - b) / max(1.0, abs(b))
        worst = max(worst, err)
        ok &= err <= tol
    for e in (0.05, 0.3, 1.0):
        if factor_sum(spec, 0.0) <= e:
            continue
        sT = script_T(spec, e)
        lo = product_mixing_time(spec, math.sqrt(math.expm1(e)))
        hi = product_mixing_time(spec, math.sqrt(e))
        worst = max(worst, (lo - sT) / max(sT, 1e-300), (sT - hi) / max(hi, 1e-300))
        ok &= lo <= sT * (1 + 1e-12) + 1e-300 and sT <= hi * (1 + 1e-12) + 1e-300
    return worst, bool(ok)


def _check_bracket(rng, tol):
    spec, _, _ = random_product(rng)
    ps = assemble(spec)
    worst, ok = 0.0, True
    for c in ps.total * rng.uniform(0.01, 0.99, size=4):
        lhs, mid, rhs, good = jtau_bracket_check(spec, c)
        worst = max(worst, (lhs - mid) / mid, (mid - rhs) / mid if math.isfinite(rhs) else 0.0)
        ok &= good
    return worst, bool(ok)


def _check_comparison(rng, tol):
    m = int(rng.integers(2, 13))
    ch = random_reversible_chain(rng, m, DISCRETE)
    mu = random_law(rng, m)
    theta = float(rng.uniform(0.55, 0.95))
    sd = decompose(analysis.continuize(ch), mu)
    V = to_measure(sd)
    if len(V) == 0:
        return 0.0, True
    c = float(V.total_mass * rng.uniform(0.05, 0.95))
    rep = analysis.comparison_report(ch, mu, theta, c, 0.5)
    return 0.0, bool(rep["ok"])


def _check_validation(rng, tol):
    ch = random_reversible_chain(rng, int(rng.integers(3, 9)), DISCRETE)
    K = np.array(ch.matrix)
    i = int(rng.integers(K.shape[0]))
    k = int(rng.choice([x for x in range(K.shape[0]) if x != i]))
    # move half the holding mass of row i to k: rows still sum to 1 but balance breaks at (i, k)
    d = 0.5 * K[i, i]
    K[i, i] -= d
    K[i, k] += d
    try:
        validate(K, DISCRETE, ch.stationary)
    except ChainValidationError:
        return 0.0, True
    return 0.0, False


_SUITES = {
    "oracle": _check_oracle, "laplace_ibp": _check_ibp, "laplace_bounds": _check_bounds,
    "sandwich": _check_sandwich, "pbm": _check_pbm, "product": _check_product,
    "bracket": _check_bracket, "comparison": _check_comparison, "validation": _check_validation,
}


def property_suite(seed: int = 42, counts: dict | None = None, tol: float | dict | None = None,
                   suites=None) -> SuiteReport:
    """Run every randomized invariant suite; ``report.ok`` is their conjunction.

    ``tol`` overrides the tolerances, either as a single float for all
    suites or per suite.  Failing instances are named by the seed that
    rebuilds them through ``np.random.default_rng(seed)``.
    """
    counts = dict(DEFAULT_COUNTS, **(counts or {}))
    tols = dict(DEFAULT_TOL)
    if isinstance(tol, dict):
        tols.update(tol)
    elif tol is not None:
        tols = {k: float(tol) for k in tols}
    names = list(_SUITES) if suites is None else list(suites)
    start = time.perf_counter()
    results = {}
    for sid, name in enumerate(_SUITES):
        if name not in names:
            continue
        check = _SUITES[name]
        res = SuiteResult(name)
        for i in range(counts[name]):
            s = _instance_seed(seed, sid, i)
            try:
                worst, good = check(np.random.default_rng(s), tols[name])
            except Exception as exc:  # an instance that crashes counts as a failure
                worst, good = math.inf, False
                res.failures.append(f"{s} ({type(exc).__name__}: {exc})")
            else:
                if not good:
                    res.failures.append(s)
            res.total += 1
            res.passed += int(good)
            res.worst = max(res.worst, worst)
        results[name] = res
    return SuiteReport(seed, results, time.perf_counter() - start)
