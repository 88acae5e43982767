"""``l2cutoff`` command line.

Exit codes: 0 success, 1 usage error, 2 input or validation failure,
3 invariant-suite failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import warnings

import numpy as np

from . import analysis, diagnostics, families, laplace, product
from .spectral import (
    ChainFileError, ChainValidationError, EigensolverError,
    decompose, format_chain, parse_chain, to_measure,
)

DEFAULT_C = (0.25, 0.5, 1.0, 2.0, 4.0)
DEFAULT_EPS = (0.1, 0.5, 1.0)
SIG = 12

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_SUITE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- output ------------------------------------------------------------------

def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return ""
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.{SIG}g}"
    return "" if v is None else str(v)


def _json_value(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if not math.isfinite(v):
            return None if math.isnan(v) else fmt(v)
        return float(f"{v:.{SIG}g}")
    return v


class Report:
    """Named sections of records rendered as table, csv or json."""

    def __init__(self):
        self.sections = []
        self.messages = []

    def add(self, name, records, columns=None):
        records = list(records)
        if columns is None:
            columns = list(records[0]) if records else []
        self.sections.append((name, columns, records))

    def note(self, text):
        self.messages.append(text)

    def render(self, form: str) -> str:
        if form == "json":
            doc = {name: [{k: _json_value(r.get(k)) for k in cols} for r in recs]
                   for name, cols, recs in self.sections}
            if self.messages:
                doc["notes"] = self.messages
            return json.dumps(doc, indent=2) + "\n"
        out = io.StringIO()
        for text in self.messages:
            out.write(f"# {text}\n")
        for k, (name, cols, recs) in enumerate(self.sections):
            if k or self.messages:
                out.write("\n")
            out.write(f"# {name}\n")
            rows = [[fmt(r.get(c)) for c in cols] for r in recs]
            if form == "csv":
                w = csv.writer(out, lineterminator="\n")
                w.writerow(cols)
                w.writerows(rows)
            else:
                widths = [max([len(c)] + [len(r[i]) for r in rows]) for i, c in enumerate(cols)]
                out.write("  ".join(c.rjust(w) for c, w in zip(cols, widths)).rstrip() + "\n")
                for r in rows:
                    out.write("  ".join(v.rjust(w) for v, w in zip(r, widths)).rstrip() + "\n")
        return out.getvalue()


def _emit(report: Report, args):
    text = report.render(args.format)
    if getattr(args, "out", None):
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# -- argument helpers --------------------------------------------------------

def _positive_list(name):
    def conv(text):
        try:
            v = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be numeric: {text!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"{name} must be > 0: {text!r}")
        return v
    return conv


def _int_value(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer: {text!r}") from None
    if v != int(v) or v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer: {text!r}")
    return int(v)


def _add_grid(p, c=True, eps=True):
    if c:
        p.add_argument("--c", nargs="+", type=_positive_list("c"), default=list(DEFAULT_C),
                       metavar="C", help="levels c (default: %(default)s)")
    if eps:
        p.add_argument("--eps", nargs="+", type=_positive_list("eps"), default=list(DEFAULT_EPS),
                       metavar="EPS", help="distances eps (default: %(default)s)")


def _add_output(p):
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.add_argument("--out", help="write the report to a file instead of stdout")


def _parse_initial(text, m):
    parts = text.replace(",", " ").split()
    if parts and parts[0] == "delta":
        if len(parts) != 2:
            raise UsageError("--initial delta takes one state index")
        k = int(parts[1])
        if not 0 <= k < m:
            raise UsageError(f"state {k} out of range 0..{m - 1}")
        mu = np.zeros(m)
        mu[k] = 1.0
        return mu
    try:
        mu = np.array([float(x) for x in parts])
    except ValueError:
        raise UsageError(f"cannot parse initial law {text!r}") from None
    if mu.size != m:
        raise UsageError(f"initial law has {mu.size} entries, expected {m}")
    return mu


def _load_chain(path, initial=None):
    with open(path) as fh:
        chain, mu = parse_chain(fh.read(), path)
    if initial is not None:
        mu = _parse_initial(initial, chain.size)
    if mu is None:
        raise UsageError(f"{path}: no initial law in the file; pass --initial")
    return chain, mu


# -- analyze -----------------------------------------------------------------

def analyze_report(chain, mu, c_list, eps_list) -> Report:
    sd = decompose(chain, mu)
    V = to_measure(sd)
    rep = Report()
    rep.add("chain", [{"kind": chain.kind, "states": chain.size, "mass": sd.mass,
                       "zero_weight": sd.zero_weight, "atoms": len(V)}])
    rep.add("spectrum", [{"index": i, "eigenvalue": r, "weight": w}
                         for i, (r, w) in enumerate(zip(sd.rates, sd.weights))])
    if len(V) == 0:
        rep.note("already mixed: mu equals pi, so d_2(mu, t) = 0 for every t")
        rep.add("mixing", [{"eps": e, "T2": 0, "distance_0": 0.0} for e in eps_list])
        return rep
    rep.add("measure", [{"rate": r, "mass": m, "cumulative": k}
                        for (r, m), k in zip(V, V.cumulative)])
    cut = []
    for c in c_list:
        row = {"c": c}
        if c < V.total_mass:
            d = analysis.chain_diagnostics(sd, c=c, eps_list=())
            row.update(admissible=True, j=d.j_index, lambda_jc=d.lambda_jc, tau=d.tau,
                       alpha=d.alpha, window_mix=d.window_mix, window_tau=d.window_tau)
        else:
            row.update(admissible=False)
        cut.append(row)
    rep.add("cutoff", cut, ["c", "admissible", "j", "lambda_jc", "tau", "alpha",
                            "window_mix", "window_tau"])
    mix = []
    edge = math.sqrt(min(V.total_mass, 1.0) / 2.0)
    for e in eps_list:
        row = {"eps": e, "T2": analysis.mixing_time(sd, e, V)}
        if e < edge:
            row["pbm_lower"], row["pbm_upper"] = analysis.pbm_bounds(sd, eps=e)
        mix.append(row)
    rep.add("mixing", mix, ["eps", "T2", "pbm_lower", "pbm_upper"])
    return rep


def cmd_analyze(args):
    chain, mu = _load_chain(args.chain, args.initial)
    _emit(analyze_report(chain, mu, args.c, args.eps), args)
    return EXIT_OK


# -- product -----------------------------------------------------------------

def product_report(spec, c_list, eps_list, bracket=False, cap=product.TENSOR_CAP) -> Report:
    ps = product.assemble(spec)
    rep = Report()
    rep.add("product", [{"factors": spec.n_factors, "speed_sum": float(spec.p.sum()),
                         "mass": spec.mass, "factor_mass": ps.total,
                         "tensor_size": int(np.prod(spec.sizes().astype(float)))}])
    cut = []
    for c in c_list:
        row = {"c": c, "admissible": c < ps.total}
        if row["admissible"]:
            row["j_tilde"] = product.j_tilde(ps, c)
            row["rho"] = float(ps.rho[row["j_tilde"] - 1])
            row["rho_lo"] = float(ps.rho[product.j_tilde(ps, math.log1p(c)) - 1])
            row["tau_tilde"] = product.tau_tilde(ps, c)
            if bracket:
                lo, mid, hi, ok = product.jtau_bracket_check(spec, c, cap)
                row.update(varrho_jc=lo, varrho_jexp=hi, bracket_ok=ok)
        cut.append(row)
    cols = ["c", "admissible", "j_tilde", "rho", "rho_lo", "tau_tilde"]
    if bracket:
        cols += ["varrho_jc", "varrho_jexp", "bracket_ok"]
    rep.add("cutoff", cut, cols)
    mix = []
    for e in eps_list:
        e2 = e * e
        mix.append({"eps": e, "T2": product.product_mixing_time(spec, e),
                    "script_T": product.script_T(spec, e2, ps),
                    "T2_lower_arg": product.product_mixing_time(spec, math.sqrt(math.expm1(e2)))})
    rep.add("mixing", mix)
    rep.note("script_T is evaluated at eps^2 and sits between T2_lower_arg and T2")
    return rep


def cmd_product(args):
    spec = product.read_product(args.spec)
    _emit(product_report(spec, args.c, args.eps, args.bracket, args.tensor_cap), args)
    return EXIT_OK


# -- family ------------------------------------------------------------------

_CASE_PROFILE = {"1": "exp", "2": "explog", "3": "log"}


def parse_family_config(text, source="<config>") -> dict:
    """``key: value`` lines; ``#`` starts a comment."""
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise ChainFileError(f"{source}:{lineno}: expected 'key: value'")
        k, v = (s.strip() for s in line.split(":", 1))
        cfg[k] = v
    if "family" not in cfg:
        raise ChainFileError(f"{source}: missing 'family:' entry")
    return cfg


def _floats(cfg, key, default=None):
    if key not in cfg:
        return default
    try:
        return [float(x) for x in cfg[key].replace(",", " ").split()]
    except ValueError:
        raise ChainFileError(f"non-numeric entry in '{key}: {cfg[key]}'") from None


def _one(cfg, key, default):
    v = _floats(cfg, key)
    return default if v is None else v[0]


def family_builder(cfg):
    kind = cfg["family"]
    a, b = _one(cfg, "a", 1.0), _one(cfg, "b", 1.0)
    alpha = _one(cfg, "alpha", 0.5)
    params = {"alpha": alpha, "a": a, "b": b}
    A, B = _one(cfg, "A", 0.5), _one(cfg, "B", 0.5)
    if kind == "machinery":
        case = cfg.get("case", "2")
        if case not in _CASE_PROFILE:
            raise ChainFileError(f"unknown case {case!r}")
        prof = families.Profile(_CASE_PROFILE[case], a, b)
        xs = families.parse_sequence(cfg.get("x", "floor(n^alpha)"), params)
        ls = cfg.get("ell")

        def build(n):
            x = max(1, xs(n))
            ell = families.parse_sequence(ls, params)(n) if ls else n - x + 1
            return families.machinery_build(n, prof, x, ell, A, B)[0]
        return build
    if kind == "two-state":
        fam = families.TwoStateProductFamily(
            families.Profile(cfg.get("profile", "exp"), a, b), x=cfg.get("x", "1"),
            ell=cfg.get("ell", "n"), A=A, B=B, params=params)
        return fam.spec
    if kind == "counterexample":
        return families.counterexample_build
    if kind == "complete-graph":
        r = _one(cfg, "r", 0.5)
        states = families.parse_sequence(cfg.get("states", "n"), params)
        theta = _floats(cfg, "theta")

        def build(n):
            m = states(n)
            K = families.complete_graph_chain(np.full(m, 1.0 / m), r)
            ch = analysis.lazy(K, theta[0]) if theta else analysis.continuize(K)
            return ch, ch.delta(0)
        return build
    raise ChainFileError(f"unknown family {kind!r}")


def family_report(rows, eps_list) -> Report:
    rep = Report()
    rep.add("sweep", [r.as_dict() for r in rows], diagnostics.COLUMNS)
    growth = []
    for c in sorted({r.c for r in rows}):
        for e in eps_list:
            growth.append({"c": c, "eps": e,
                           "slope_product_tau": diagnostics.growth_exponent(rows, "product_tau", c, e),
                           "slope_product_T": diagnostics.growth_exponent(rows, "product_T", c, e),
                           "slope_T2": diagnostics.growth_exponent(rows, "T2", c, e)})
    rep.add("growth", growth)
    if len(eps_list) > 1:
        e1, e2 = min(eps_list), max(eps_list)
        try:
            ratio = diagnostics.precutoff_ratio(rows, e1, e2)
        except ValueError as exc:
            rep.note(f"precutoff ratio unavailable: {exc}")
        else:
            rep.add("precutoff", [{"n": n, "eps1": e1, "eps2": e2, "ratio": v} for n, v in ratio])
    rep.note("descriptive sequences over the given n only; rows with decisive=true use the "
             "smallest c")
    return rep


def cmd_family(args):
    with open(args.config) as fh:
        cfg = parse_family_config(fh.read(), args.config)
    n_list = args.n or [int(x) for x in _floats(cfg, "n", [])]
    if not n_list:
        raise UsageError("no n list: give --n or an 'n:' entry")
    c_list = args.c or _floats(cfg, "c", list(DEFAULT_C))
    eps_list = args.eps or _floats(cfg, "eps", list(DEFAULT_EPS))
    rows = diagnostics.family_sweep(family_builder(cfg), n_list, c_list, eps_list, args.jobs)
    _emit(family_report(rows, sorted(eps_list)), args)
    return EXIT_OK


# -- scenarios ---------------------------------------------------------------

def scenario_machinery(args) -> Report:
    case = str(args.case)
    prof = families.Profile(_CASE_PROFILE[case], args.a, args.b)
    s = args.A + args.B
    rep = Report()
    rows = []
    for n in args.n:
        x = max(1, int(math.floor(n ** args.alpha)))
        ell = n - x + 1
        spec, lq = families.machinery_build(n, prof, x, ell, args.A, args.B)
        q = math.exp(lq)
        ps = product.assemble(spec)
        tt = product.tau_tilde(ps, args.c)
        px = math.exp(float(prof.log_f(float(x))))
        row = {"n": n, "x_n": x, "ell_n": ell, "q_n": q, "delta_n": families.profile_delta(prof, x, ell),
               "tau_tilde": tt, "tau_tilde_scaled": tt / q}
        if case != "1":
            k = families.predicted_kappa(case, x, ell, args.a, args.b)
            pred = k / (2.0 * s * px)
            row.update(kappa_n=k, predicted=pred, ratio=tt / q / pred)
        if case == "2" and args.a == 1 and args.b == 1 and 0 < args.alpha < 1:
            # p_i = i + 1: leading-order cutoff time without the log log correction
            lead = args.alpha * math.log(n) / (2.0 * s * n**args.alpha)
            row.update(leading=lead, ratio_leading=tt / q / lead)
        if args.mixing:
            row["T2_scaled"] = product.product_mixing_time(spec, args.eps) / q
        rows.append(row)
    rep.add("machinery", rows)
    rep.note(f"profile {prof.kind} a={args.a:g} b={args.b:g}; x_n = floor(n^{args.alpha:g}), "
             f"ell_n = n - x_n + 1; scaled columns divide by q_n")
    return rep


def scenario_counterexample(args) -> Report:
    rows = []
    for a in args.A:
        v = families.counterexample_Dn(args.n, a * args.n**2)
        lim = families.counterexample_limit(a)
        rows.append({"n": args.n, "A": a, "D_n": v, "limit": lim,
                     "rel_err": abs(v - lim) / lim if math.isfinite(lim) else math.nan})
    rep = Report()
    rep.add("counterexample", rows)
    rep.note("D_n(A n^2); limit 2(sqrt(2) - e^(-1/2)) at A = 1/4 and (1 - e^(-2A))/(2A) above")
    return rep


def scenario_comparison(args) -> Report:
    m = args.states
    pi = np.full(m, 1.0 / m)
    rows = []
    for r in args.r:
        K = families.complete_graph_chain(pi, r)
        for th in args.theta:
            rep = analysis.comparison_report(K, K.delta(0), th, args.c, args.eps)
            closed = -math.log(th + (1 - th) * r) / (1 - r)
            ratio = rep["tau_ratio"]
            rows.append({"r": r, "theta": th, "tau": rep["tau_continuous"],
                         "tau_theta": rep["tau_lazy"], "ratio": ratio, "closed_form": closed,
                         "lower": 1 - th, "upper": -math.log(th),
                         "in_window": (1 - th) < ratio < -math.log(th), "eig_checks": rep["ok"]})
    out = Report()
    out.add("comparison", rows)
    return out


def scenario_two_state(args) -> Report:
    A, B = args.A, args.B
    sd = families.two_state_spectral(A, B)
    V = to_measure(sd)
    w, s = A / B, A + B
    rows = []
    for c in args.c:
        if c < w:
            tau = laplace.tau_c(V, c)
            closed = math.log1p(w) / (2 * s)
            rows.append({"quantity": f"tau(c={c:g})", "computed": tau, "closed_form": closed,
                         "abs_err": abs(tau - closed)})
    for e in args.eps:
        T = analysis.mixing_time(sd, e, V)
        closed = max(math.log(w / (e * e)), 0.0) / (2 * s)
        rows.append({"quantity": f"T2(eps={e:g})", "computed": T, "closed_form": closed,
                     "abs_err": abs(T - closed)})
    rep = Report()
    rep.add("two_state", rows)
    rep.note(f"A={A:g} B={B:g}: one rate A+B with weight A/B from state 0")
    return rep


def cmd_scenario(args):
    fn = {"machinery": scenario_machinery, "counterexample": scenario_counterexample,
          "comparison": scenario_comparison, "two-state": scenario_two_state}[args.scenario]
    _emit(fn(args), args)
    return EXIT_OK


# -- verify / export ---------------------------------------------------------

def cmd_verify(args):
    counts = None
    if args.scale != 1.0:
        counts = {k: max(1, int(round(v * args.scale)))
                  for k, v in diagnostics.DEFAULT_COUNTS.items()}
    rep = diagnostics.property_suite(args.seed, counts, args.tol)
    for line in rep.lines():
        print(line)
    print(f"seed={rep.seed} {'all suites pass' if rep.ok else 'FAILED'} ({rep.seconds:.2f} s)")
    return EXIT_OK if rep.ok else EXIT_SUITE


def _detect(text):
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("factor"):
            return "product"
        if ":" in line:
            return "chain"
        return "measure"
    raise ChainFileError("empty input")


def cmd_export(args):
    with open(args.input) as fh:
        text = fh.read()
    kind = _detect(text)
    if kind == "chain":
        chain, mu = parse_chain(text, args.input)
        if args.initial is not None:
            mu = _parse_initial(args.initial, chain.size)
        if args.as_ == "measure":
            if mu is None:
                raise UsageError("a measure export needs an initial law")
            out = laplace.format_measure(to_measure(decompose(chain, mu)))
        else:
            out = format_chain(chain, mu)
    elif kind == "product":
        spec = product.parse_product(text, args.input, os.path.dirname(os.path.abspath(args.input)))
        if args.as_ == "measure":
            out = laplace.format_measure(product.factor_measure(product.assemble(spec)))
        else:
            out = product.format_product(spec)
    else:
        out = laplace.format_measure(laplace.parse_measure(text, args.input))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(out)
    else:
        sys.stdout.write(out)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="l2cutoff", description="L2 cutoff diagnostics for reversible Markov chains")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="spectral analysis of one chain file")
    a.add_argument("chain")
    a.add_argument("--initial", help="initial law: 'delta K' or a list of probabilities")
    _add_grid(a)
    _add_output(a)
    a.set_defaults(func=cmd_analyze)

    pr = sub.add_parser("product", help="product chain from a product spec file")
    pr.add_argument("spec")
    pr.add_argument("--bracket", action="store_true",
                    help="also enumerate the tensor spectrum and report the bracket")
    pr.add_argument("--tensor-cap", type=_int_value, default=product.TENSOR_CAP)
    _add_grid(pr)
    _add_output(pr)
    pr.set_defaults(func=cmd_product)

    f = sub.add_parser("family", help="sweep a family described by a config file")
    f.add_argument("config")
    f.add_argument("--n", nargs="+", type=_int_value)
    f.add_argument("--c", nargs="+", type=_positive_list("c"))
    f.add_argument("--eps", nargs="+", type=_positive_list("eps"))
    f.add_argument("--jobs", type=_int_value, default=1)
    _add_output(f)
    f.set_defaults(func=cmd_family)

    s = sub.add_parser("scenario", help="built-in worked examples")
    ss = s.add_subparsers(dest="scenario", required=True, parser_class=_Parser)
    m = ss.add_parser("machinery", help="two-state machinery with profile speeds")
    m.add_argument("--case", choices=("1", "2", "3"), default="2")
    m.add_argument("--a", type=_positive_list("a"), default=1.0)
    m.add_argument("--b", type=_positive_list("b"), default=1.0)
    m.add_argument("--alpha", type=float, default=0.5)
    m.add_argument("--n", nargs="+", type=_int_value, default=[10**3, 10**4, 10**5])
    m.add_argument("--A", type=float, default=0.5)
    m.add_argument("--B", type=float, default=0.5)
    m.add_argument("--c", type=_positive_list("c"), default=0.5)
    m.add_argument("--eps", type=_positive_list("eps"), default=0.5)
    m.add_argument("--mixing", action="store_true", help="also compute the product mixing time")
    ce = ss.add_parser("counterexample", help="D_n(A n^2) against its limit")
    ce.add_argument("--n", type=_int_value, default=10**5)
    ce.add_argument("--A", nargs="+", type=_positive_list("A"), default=[0.25, 0.5, 1.0])
    cp = ss.add_parser("comparison", help="continuised versus lazy complete graph")
    cp.add_argument("--r", nargs="+", type=float, default=[0.1 * k for k in range(1, 10)])
    cp.add_argument("--theta", nargs="+", type=float, default=[0.6, 0.75, 0.9])
    cp.add_argument("--states", type=_int_value, default=4)
    cp.add_argument("--c", type=_positive_list("c"), default=0.5)
    cp.add_argument("--eps", type=_positive_list("eps"), default=0.5)
    ts = ss.add_parser("two-state", help="two-state chain against closed forms")
    ts.add_argument("--A", type=float, default=0.2)
    ts.add_argument("--B", type=float, default=0.8)
    _add_grid(ts)
    for q in (m, ce, cp, ts):
        _add_output(q)
    s.set_defaults(func=cmd_scenario)

    v = sub.add_parser("verify", help="run the randomized invariant suites")
    v.add_argument("--seed", type=int, default=42)
    v.add_argument("--scale", type=float, default=1.0, help="multiply instance counts")
    v.add_argument("--tol", type=_positive_list("tol"), help="override every suite tolerance")
    v.set_defaults(func=cmd_verify)

    e = sub.add_parser("export", help="re-serialise a chain, product or measure file")
    e.add_argument("input")
    e.add_argument("--as", dest="as_", choices=("same", "measure"), default="same")
    e.add_argument("--initial")
    e.add_argument("--out")
    e.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always", families.FamilyWarning)
            return args.func(args)
    except UsageError as exc:
        print(f"l2cutoff: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ChainFileError, ChainValidationError, EigensolverError, ValueError, OSError) as exc:
        print(f"l2cutoff: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
