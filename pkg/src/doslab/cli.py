"""Command-line front end.

Subcommands: dos, ids, lyapunov, metric, closed-form, constants, verify.
Every stochastic subcommand requires --seed (no wall-clock default); output
files are a pure function of argv, printed with 17 significant digits, so
identical invocations produce byte-identical files.  A flat `key = value`
config file may supply defaults; flags win.  Exit codes: 0 success,
1 computation error, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def _grid_type(spec: str):
    """argparse type for lo:hi:count grids (usage errors exit with code 2)."""
    import numpy as np

    lo, hi, count = spec.split(":")
    return np.linspace(float(lo), float(hi), int(count))


def _parse_override(pairs):
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise SystemExit(f"bad override {pair!r}, expected key=value")
        key, val = pair.split("=", 1)
        out[key.strip()] = _parse_value(val.strip())
    return out


def _parse_value(val: str):
    if "," in val:
        return tuple(_parse_value(v) for v in val.split(",") if v.strip())
    for cast in (int, float):
        try:
            return cast(val)
        except ValueError:
            pass
    return val


def _write(path, text: str):
    if path:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)


def _apply_config(args, parser_defaults, config_path):
    """Flat key=value config supplies defaults; explicit flags win."""
    if not config_path:
        return
    from .lattice_ops import parse_keyvalue

    with open(config_path) as fh:
        kv = parse_keyvalue(fh.read())
    for key, raw in kv.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise SystemExit(f"unknown config key {key!r}")
        if getattr(args, attr) == parser_defaults.get(attr):
            setattr(args, attr, _parse_value(raw))


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="doslab",
        description="Density-of-states laboratory for random Schrodinger operators")
    p.add_argument("--threads", type=int, default=0, metavar="N",
                   help="cap BLAS worker threads (0 = library default; results "
                        "are identical for identical argv)")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("constants", help="print the explicit theorem constants")
    c.add_argument("--d", type=int, required=True, help="lattice dimension (1)")
    c.add_argument("--N", type=int, required=True, help="projection rank (1)")
    c.add_argument("--C", type=float, required=True,
                   help="single-site support bound (energy units)")
    c.add_argument("--k", type=int, help="Bethe coordination number (adds Bethe constants)")
    c.add_argument("--beta", type=float, help="local IDS Holder exponent in (0,1] (hypothesis input)")
    c.add_argument("--D", type=float, help="local IDS Holder constant (hypothesis input)")
    c.add_argument("--D1", type=float, help="DOSf Fourier decay amplitude (hypothesis input)")
    c.add_argument("--eps-decay", type=float, help="DOSf Fourier decay exponent (hypothesis input)")
    c.add_argument("--c0", type=float, help="free-IDS Holder constant override")
    c.add_argument("--CI", type=float, help="Craig-Simon log-Holder constant")
    c.add_argument("--out", help="output file path")
    c.add_argument("--format", choices=("csv", "json"), default="csv")
    c.add_argument("--config", help="flat key=value defaults file")

    m = sub.add_parser("metric", help="bounded-Lipschitz distance of two measures")
    m.add_argument("--a", required=True, help="first measure file (.msr)")
    m.add_argument("--b", required=True, help="second measure file (.msr)")
    m.add_argument("--out", help="output file path")
    m.add_argument("--format", choices=("csv", "json"), default="csv")
    m.add_argument("--config", help="flat key=value defaults file")

    f = sub.add_parser("closed-form", help="evaluate a closed-form oracle on a grid")
    f.add_argument("--what", required=True,
                   choices=("free-dosf", "free-dosf-fourier", "lloyd-dosf",
                            "kesten-dosf", "free-lyapunov", "appendix-c",
                            "free-ids"),
                   help="which closed form")
    f.add_argument("--d", type=int, default=1, help="lattice dimension (1)")
    f.add_argument("--k", type=int, default=3, help="Bethe coordination number")
    f.add_argument("--lam", type=float, default=0.2,
                   help="Lloyd disorder scale (energy units)")
    f.add_argument("--grid", type=_grid_type, default="-3:3:601",
                   help="evaluation grid lo:hi:count (energy or t or eps units)")
    f.add_argument("--out", help="output file path")
    f.add_argument("--config", help="flat key=value defaults file")

    d = sub.add_parser("dos", help="estimate the DOS by moments or histogram")
    d.add_argument("--model", required=True, help="model file (flat key=value)")
    d.add_argument("--method", choices=("moments", "histogram"), default="moments")
    d.add_argument("--degree", type=int, default=20,
                   help="max moment degree (moments path)")
    d.add_argument("--samples", type=int, default=100, help="Monte Carlo samples")
    d.add_argument("--side", type=int, default=1024,
                   help="box side (histogram path, sites)")
    d.add_argument("--bins", type=int, default=512, help="histogram bin count")
    d.add_argument("--boundary", choices=("open", "periodic"), default="periodic",
                   help="histogram boundary rule")
    d.add_argument("--seed", type=int, required=True, help="RNG seed (mandatory)")
    d.add_argument("--out", help="output CSV path")
    d.add_argument("--config", help="flat key=value defaults file")

    i = sub.add_parser("ids", help="integrated DOS from a histogram estimate")
    i.add_argument("--estimate", required=True, help="DosEstimate CSV file")
    i.add_argument("--grid", type=_grid_type, default="-3:3:121",
                   help="energy grid lo:hi:count (energy units)")
    i.add_argument("--out", help="output CSV path")
    i.add_argument("--config", help="flat key=value defaults file")

    ly = sub.add_parser("lyapunov", help="Lyapunov exponents")
    ly.add_argument("--measure", help="single-site measure file (.msr)")
    ly.add_argument("--model", help="strip model file (for --method strip)")
    ly.add_argument("--estimate", help="histogram CSV (for --method thouless)")
    ly.add_argument("--method", choices=("transfer", "thouless", "strip"),
                    default="transfer")
    ly.add_argument("--re-e", type=float, required=True, help="Re E (energy units)")
    ly.add_argument("--im-e", type=float, default=0.0, help="Im E (energy units)")
    ly.add_argument("--steps", type=int, default=10 ** 5,
                    help="transfer-matrix steps")
    ly.add_argument("--replicas", type=int, default=8, help="independent replicas")
    ly.add_argument("--seed", type=int, help="RNG seed (mandatory unless thouless)")
    ly.add_argument("--out", help="output CSV path")
    ly.add_argument("--config", help="flat key=value defaults file")

    v = sub.add_parser("verify", help="verify one quantitative bound")
    v.add_argument("--bound", required=True, help="bound identifier")
    v.add_argument("--scenario", nargs="*", metavar="KEY=VAL",
                   help="scenario overrides")
    v.add_argument("--estimator", nargs="*", metavar="KEY=VAL",
                   help="estimator overrides")
    v.add_argument("--trials", type=int, help="trial count (trial-based bounds)")
    v.add_argument("--seed", type=int, required=True, help="RNG seed (mandatory)")
    v.add_argument("--out", help="output JSON path")
    v.add_argument("--config", help="flat key=value defaults file")
    return p


def _cmd_constants(args) -> int:
    from .bounds import constants

    extra = {}
    for key, name in (("k", "k"), ("beta", "beta"), ("D", "D"), ("D1", "D1"),
                      ("eps_decay", "eps_decay"), ("c0", "c0"), ("CI", "C_I")):
        val = getattr(args, key, None)
        if val is not None:
            extra[name] = val
    table = constants(args.d, args.N, args.C, extra=extra)
    if args.format == "json":
        import json
        text = json.dumps(table, sort_keys=True, indent=1) + "\n"
    else:
        text = "name,value\n" + "".join(
            f"{k},{_fmt(v)}\n" for k, v in sorted(table.items()))
    _write(args.out, text)
    if not args.out:
        sys.stdout.write(text)
    print(f"constants: d={args.d} N={args.N} C={args.C} "
          f"lambda0 = {table['lambda0']:.17g} gamma = {table['gamma']:.17g}")
    return 0


def _cmd_metric(args) -> int:
    from . import measures

    a = measures.load(args.a)
    b = measures.load(args.b)
    val = measures.dw(a, b)
    if args.format == "json":
        import json
        text = json.dumps({"dw": val}) + "\n"
    else:
        text = f"quantity,value\ndw,{val:.17g}\n"
    _write(args.out, text)
    print(f"d_w = {val:.7g}")
    return 0


def _cmd_closed_form(args) -> int:
    import numpy as np

    from . import dos_engine as eng
    from . import lyapunov as lyap

    grid = args.grid if not isinstance(args.grid, str) else _grid_type(args.grid)
    what = args.what
    if what == "free-dosf":
        vals = eng.free_dosf(args.d, grid)
        header = "E,value"
    elif what == "free-ids":
        if args.d != 1:
            raise ValueError("free-ids closed form is d=1 only")
        vals = eng.free_ids_1d(grid)
        header = "E,value"
    elif what == "free-dosf-fourier":
        vals = eng.free_dosf_fourier(args.d, grid)
        header = "t,value"
    elif what == "lloyd-dosf":
        vals = eng.lloyd_dosf(args.d, args.lam, grid, route="fourier")
        header = "E,value"
    elif what == "kesten-dosf":
        vals = eng.kesten_dosf(args.k, grid)
        header = "E,value"
    elif what == "free-lyapunov":
        vals = np.array([lyap.free_lyapunov(E) for E in grid])
        header = "E,value"
    else:
        vals = np.array([lyap.appendix_c_integral(e) for e in grid])
        header = "eps,value"
    text = header + "\n" + "".join(
        f"{x:.17g},{v:.17g}\n" for x, v in zip(grid, vals))
    _write(args.out, text)
    print(f"closed-form {what}: {len(grid)} points"
          + (f" -> {args.out}" if args.out else ""))
    if not args.out:
        sys.stdout.write(text)
    return 0


def _cmd_dos(args) -> int:
    from . import dos_engine as eng
    from .lattice_ops import load_model

    model = load_model(args.model)
    if args.method == "moments":
        est = eng.trace_moments(model, args.degree, args.samples, args.seed)
    else:
        est = eng.dos_histogram(model, args.side, args.samples, args.bins,
                                args.seed, boundary=args.boundary)
    text = est.to_csv()
    _write(args.out, text)
    if not args.out:
        sys.stdout.write(text)
    print(f"dos {args.method}: samples={args.samples} seed={args.seed} "
          f"r={est.spectral_bound:.17g}")
    return 0


def _cmd_ids(args) -> int:
    from . import dos_engine as eng

    with open(args.estimate) as fh:
        est = eng.DosEstimate.from_csv(fh.read())
    grid = args.grid if not isinstance(args.grid, str) else _grid_type(args.grid)
    rows = [eng.ids(est, float(E)) for E in grid]
    text = "E,value,stderr\n" + "".join(
        f"{E:.17g},{v:.17g},{s:.17g}\n" for E, (v, s) in zip(grid, rows))
    _write(args.out, text)
    if not args.out:
        sys.stdout.write(text)
    print(f"ids: {len(grid)} energies from {args.estimate}")
    return 0


def _cmd_lyapunov(args) -> int:
    from . import dos_engine as eng
    from . import lyapunov as lyap
    from . import measures
    from .lattice_ops import Strip, load_model

    E = complex(args.re_e, args.im_e)
    if args.method == "thouless":
        if not args.estimate:
            raise ValueError("--method thouless needs --estimate")
        with open(args.estimate) as fh:
            est = eng.DosEstimate.from_csv(fh.read())
        res = lyap.thouless(est, E)
        gammas = ""
    elif args.method == "strip":
        if args.seed is None:
            raise SystemExit("--seed is mandatory for stochastic runs")
        if not args.model:
            raise ValueError("--method strip needs --model")
        model = load_model(args.model)
        if not isinstance(model.geometry, Strip):
            raise ValueError("--method strip needs a strip-geometry model")
        g = model.geometry
        res = lyap.strip_lyapunov(g.matrices, g.width, E, args.steps,
                                  args.seed, weights=g.weights,
                                  replicas=args.replicas)
        gammas = "".join(f",{x:.17g}" for x in res.exponents)
    else:
        if args.seed is None:
            raise SystemExit("--seed is mandatory for stochastic runs")
        if not args.measure:
            raise ValueError("--method transfer needs --measure")
        mu = measures.load(args.measure)
        res = lyap.transfer_lyapunov_1d(mu, E, args.steps, args.seed,
                                        args.replicas)
        gammas = ""
    ncols = len(res.exponents) if res.exponents is not None else 0
    header = "re_E,im_E,value" + "".join(f",gamma_{j+1}" for j in range(ncols)) \
        + ",stderr,method,steps"
    text = header + "\n" + (
        f"{E.real:.17g},{E.imag:.17g},{res.value:.17g}{gammas},"
        f"{res.error_estimate:.17g},{res.method},{res.steps_or_quadrature}\n")
    _write(args.out, text)
    if not args.out:
        sys.stdout.write(text)
    print(f"lyapunov {args.method}: L({E:.6g}) = {res.value:.7g} "
          f"+- {res.error_estimate:.2g}")
    return 0


def _cmd_verify(args) -> int:
    from .bounds import verify

    scenario = _parse_override(args.scenario)
    estimator = _parse_override(args.estimator)
    estimator["seed"] = args.seed
    if args.trials is not None:
        estimator["trials"] = args.trials
    report = verify(args.bound, scenario, estimator)
    text = report.to_json() + "\n"
    _write(args.out, text)
    if not args.out:
        sys.stdout.write(text)
    print(f"verify {args.bound}: {report.verdict} "
          f"(lhs={report.lhs:.6g}, rhs={report.rhs:.6g}, "
          f"margin={report.margin:.6g})")
    return 0


_COMMANDS = {
    "constants": _cmd_constants,
    "metric": _cmd_metric,
    "closed-form": _cmd_closed_form,
    "dos": _cmd_dos,
    "ids": _cmd_ids,
    "lyapunov": _cmd_lyapunov,
    "verify": _cmd_verify,
}


def run(argv=None) -> int:
    """Parse argv, execute the subcommand, return the exit code."""
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.threads and args.threads > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    defaults = {a.dest: a.default for g in parser._subparsers._group_actions
                for a in g.choices[args.command]._actions}
    if getattr(args, "config", None):
        _apply_config(args, defaults, args.config)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
