"""Command-line interface: ``msvol price|surface|calibrate|verify``.

Exit codes: 0 success, 1 usage, 2 data or rank problem, 3 inconclusive
Monte Carlo, 4 internal error.
"""

import argparse
import json
import shutil
import sys
from pathlib import Path

from . import asymptotics as asy
from . import blackscholes as bs
from . import calibration as cal
from . import data_io
from . import model_oracle as mo
from .errors import MsvolError, RankError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INCONCLUSIVE, EXIT_INTERNAL = 0, 1, 2, 3, 4
DEFAULT_SEED = 20240101


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser():
    p = _Parser(prog="msvol", description="Multiscale stochastic-volatility asymptotics.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    pr = sub.add_parser("price", help="price-term breakdown for one option")
    pr.add_argument("--input", required=True, help="group parameters JSON")
    pr.add_argument("--tau", type=float, required=True)
    pr.add_argument("--spot", type=float, required=True)
    pr.add_argument("--strike", type=float, required=True)
    pr.add_argument("--rate", type=float, default=0.0)
    pr.add_argument("--kind", choices=bs.KINDS, default="call")
    pr.add_argument("--output", help="write JSON here instead of stdout")

    sf = sub.add_parser("surface", help="implied-volatility surface on a grid")
    sf.add_argument("--input", required=True, help="group parameters JSON")
    sf.add_argument("--tau", type=_floats, required=True, help="comma-separated maturities")
    sf.add_argument("--d", type=_floats, required=True, help="comma-separated log-moneyness")
    sf.add_argument("--output", help="write CSV here instead of stdout")

    ca = sub.add_parser("calibrate", help="two-stage calibration of a chain")
    ca.add_argument("--input", required=True, help="chain CSV")
    ca.add_argument("--output", required=True, help="output directory")
    ca.add_argument("--seed", type=int, default=DEFAULT_SEED)
    ca.add_argument("--weights", choices=("uniform", "vega"), default="uniform")
    ca.add_argument("--min-dtm", type=float, default=5.0, help="drop quotes below this many days")
    ca.add_argument("--ridge", type=float, default=0.0)
    ca.add_argument("--starts", type=int, default=32, help="stage-2 multi-start count")

    ve = sub.add_parser("verify", help="accuracy-order experiment against Monte Carlo")
    ve.add_argument("--input", help="model JSON (default: the built-in reference model)")
    ve.add_argument("--output", required=True, help="output directory")
    ve.add_argument("--seed", type=int, default=DEFAULT_SEED)
    ve.add_argument("--paths", type=int, default=4_000_000, help="antithetic pairs per rung")
    ve.add_argument("--eps-ladder", type=_floats, default=list(mo.DEFAULT_EPS_LADDER))
    ve.add_argument("--regime", choices=("combined", "fast", "both"), default="both")
    ve.add_argument("--dt", type=float, help="time step override (must be <= eps/20)")
    ve.add_argument("--no-escalate", action="store_true", help="skip the one budget escalation")
    return p


def _write_or_print(text, output):
    if output:
        data_io.write_text_atomic(output, text)
    else:
        sys.stdout.write(text)


def _load_phi(path):
    return asy.GroupParams.from_json(Path(path).read_text(encoding="utf-8"))


def cmd_price(args):
    phi = _load_phi(args.input)
    terms = asy.price_terms(args.tau, args.spot, args.strike, args.rate, phi, args.kind)
    _write_or_print(json.dumps(terms, indent=2) + "\n", args.output)
    return EXIT_OK


def cmd_surface(args):
    phi = _load_phi(args.input)
    lines = ["tau,d,iv"]
    for tau in args.tau:
        for d in args.d:
            iv = asy.iv_terms(tau, d, phi)["total"]
            lines.append(f"{tau!r},{d!r},{float(iv)!r}")
    _write_or_print("\n".join(lines) + "\n", args.output)
    return EXIT_OK


def _fresh_dir(path):
    out = Path(path)
    created = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    return out, created


def _cleanup(out, created, written):
    for f in written:
        Path(f).unlink(missing_ok=True)
    if created:
        shutil.rmtree(out, ignore_errors=True)


def cmd_calibrate(args):
    chain = data_io.read_chain(args.input)
    opts = cal.RecoveryOptions(n_starts=args.starts, seed=args.seed, workers=mo.worker_count())
    report, prepared = cal.calibrate(chain.quotes, args.weights, args.min_dtm / 365.0,
                                     args.ridge, opts)
    out, created = _fresh_dir(args.output)
    written = []
    try:
        for name, text in cal.plot_tables(report, prepared).items():
            data_io.write_text_atomic(out / name, text)
            written.append(out / name)
        data_io.write_text_atomic(out / "report.json", report.to_json() + "\n")
        written.append(out / "report.json")
    except BaseException:
        _cleanup(out, created, written)
        raise
    print(f"rmse_total={report.rmse_total:.3e} constraint_residual={report.constraint_residual:.3e} "
          f"condition_number={report.condition_number:.3e}")
    return EXIT_OK


def cmd_verify(args):
    if args.input:
        model = mo.ModelSpec.from_json(Path(args.input).read_text(encoding="utf-8"))
    else:
        model = mo.REFERENCE_MODEL
    if args.dt is not None:
        for eps in args.eps_ladder:
            if args.dt > eps / 20.0:
                raise mo.ResolutionError(f"dt={args.dt} exceeds eps/20 for eps={eps}")
    regimes = ["combined", "fast"] if args.regime == "both" else [args.regime]
    out, created = _fresh_dir(args.output)
    written = []
    status = EXIT_OK
    try:
        for regime in regimes:
            rep = mo.order_scaling_experiment(
                model, args.eps_ladder, regime=regime, pairs=args.paths, seed=args.seed,
                escalate=not args.no_escalate, dt=args.dt,
            )
            for name, text in ((f"scaling_{regime}.json", rep.to_json() + "\n"),
                               (f"scaling_{regime}.csv", rep.to_csv())):
                data_io.write_text_atomic(out / name, text)
                written.append(out / name)
            label = "PASS" if rep.passed else rep.status.upper()
            print(f"{label} {regime}: slope={rep.slope:.3f} threshold={rep.threshold}")
            if rep.status == "inconclusive":
                need = max(r.required_pairs for r in rep.rungs)
                print(f"  inconclusive: about {need} pairs per rung needed", file=sys.stderr)
                status = max(status, EXIT_INCONCLUSIVE)
            elif rep.status == "fail":
                status = max(status, EXIT_DATA)
    except BaseException:
        _cleanup(out, created, written)
        raise
    return status


COMMANDS = {"price": cmd_price, "surface": cmd_surface, "calibrate": cmd_calibrate,
            "verify": cmd_verify}


def _report_error(kind, exc, **extra):
    payload = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    payload.update(extra)
    print(json.dumps(payload), file=sys.stderr)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        _report_error("usage", exc)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except RankError as exc:
        _report_error("rank", exc, condition_number=exc.condition_number,
                      deficient_directions=exc.deficient_directions)
        return EXIT_DATA
    except (MsvolError, ValueError, OSError) as exc:
        _report_error("data", exc)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - safety net
        _report_error("internal", exc)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
