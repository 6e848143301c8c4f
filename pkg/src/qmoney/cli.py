"""Command-line entry points.

Exit codes: 0 success or accepted, 2 verification rejected, 3 infeasible
parameters, 4 I/O or protocol error.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys

import numpy as np

from qmoney import experiments
from qmoney.config import ExperimentConfig
from qmoney.security import InfeasibleError
from qmoney.service import wire

EXIT_OK = 0
EXIT_REJECTED = 2
EXIT_INFEASIBLE = 3
EXIT_IO = 4

_CONFIG_FLAGS = (
    ("eta", float), ("beta", float), ("eps", str), ("eps-strict", str), ("mu", float),
    ("forge-target", float), ("eps-step", float), ("l-grid", str), ("curve-grid", str),
    ("rounds", int), ("seed", int), ("cap-T", int), ("fresh-notes", str), ("workers", int),
    ("output", str), ("device", str), ("eta-c", float), ("e-flip", float), ("eta-det", float),
    ("p-dark", float), ("visibility", float), ("split-loss", float), ("samples", int),
)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; flags override its keys")
    for name, kind in _CONFIG_FLAGS:
        p.add_argument(f"--{name}", type=kind, dest=name.replace("-", "_"), default=None)


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {name.replace("-", "_"): getattr(args, name.replace("-", "_")) for name, _ in _CONFIG_FLAGS}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if args.config:
        return ExperimentConfig.from_file(args.config, **overrides)
    return ExperimentConfig.from_mapping(overrides)


def _endpoint(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qmoney", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the bank daemon")
    _add_config_flags(p)
    p.add_argument("--ledger", required=True)
    p.add_argument("--listen", default="127.0.0.1:7341", type=_endpoint)
    p.add_argument("--no-fsync", action="store_true")

    p = sub.add_parser("mint", help="ask the bank for a new banknote")
    p.add_argument("--endpoint", default="127.0.0.1:7341", type=_endpoint)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cap-T", type=int, dest="cap_T")

    p = sub.add_parser("verify", help="measure part of a banknote and submit it")
    _add_config_flags(p)
    p.add_argument("--endpoint", default="127.0.0.1:7341", type=_endpoint)
    p.add_argument("--note", required=True)
    p.add_argument("--l", type=int, required=True)

    for name, helptext in (
        ("optimize", "optimal eps and required l"),
        ("calibrate", "exact (eta, beta) of the detailed device"),
        ("experiment-error-rate", "error rate against l over repeated honest rounds"),
        ("security-curves", "forging bound against l"),
    ):
        _add_config_flags(sub.add_parser(name, help=helptext))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return _dispatch(args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (OSError, wire.ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except RuntimeError as exc:
        # BankError, HandleError
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def _dispatch(args: argparse.Namespace) -> int:
    cmd = args.command
    if cmd == "mint":
        from qmoney.service.client import client_mint

        extra = {"cap_T": args.cap_T} if args.cap_T is not None else {}
        serial = client_mint(args.endpoint, args.n, args.out, **extra)
        print(serial)
        return EXIT_OK

    cfg = load_config(args)

    if cmd == "serve":
        from qmoney.service.ledger import Bank, BankConfig
        from qmoney.service.server import serve

        params = experiments.operating_points(cfg)[0].params
        rng = np.random.default_rng(args.seed) if args.seed is not None else None
        bank = Bank.open(args.ledger, BankConfig(params, cfg.cap_T), rng, fsync=not args.no_fsync)
        serve(bank, *args.listen)
        return EXIT_OK

    if cmd == "verify":
        from qmoney.service.client import client_verify

        verdict, stats = client_verify(
            args.endpoint, args.note, args.l, cfg.device_model(), np.random.default_rng(args.seed)
        )
        print(
            f"l={stats.l} l_conclusive={stats.l_conclusive} errors={stats.errors} "
            f"error_rate={stats.error_rate:.6g}",
            file=sys.stderr,
        )
        print(f"{verdict.reason.value} accepted={verdict.accepted} "
              f"errors={verdict.errors_observed} max_errors={verdict.threshold_used}")
        return EXIT_OK if verdict.accepted else EXIT_REJECTED

    if cmd == "optimize":
        rows = experiments.cmd_optimize(cfg)
        for row in rows:
            if row["feasible"]:
                print(
                    f"{row['case']}: beta={row['beta']:g} eps={row['eps']:.5f} delta={row['delta']:.6f} "
                    f"e_min={row['e_min']:.6f} l={row['l [states]']} forge={row['forge_total']:.4e} "
                    f"(qrg={row['term_qrg']:.3e} eff={row['term_eff']:.3e} err={row['term_err']:.3e})",
                    file=sys.stderr,
                )
            else:
                print(f"{row['case']}: infeasible: {row['note']}", file=sys.stderr)
        experiments.write_csv(experiments.to_csv(rows, experiments.OPTIMIZE_COLUMNS), cfg.output)
        primary = [r for r in rows if r["case"] in ("configured", "strict")]
        return EXIT_OK if all(r["feasible"] for r in primary) else EXIT_INFEASIBLE

    if cmd == "calibrate":
        report = experiments.cmd_calibrate(cfg.detailed_device(), cfg.mu, cfg.samples, cfg.seed)
        beta_text = "n/a" if math.isnan(report["beta"]) else f"{report['beta']:.9e}"
        print(f"eta={report['eta']:.9e} beta={beta_text}", file=sys.stderr)
        print(
            f"monte carlo: samples={report['samples']} eta={report['eta_mc']:.6e} "
            f"beta={report['beta_mc']:.6e} z_eta={report['z_eta']:.3f} z_beta={report['z_beta']:.3f}",
            file=sys.stderr,
        )
        experiments.write_csv(experiments.to_csv([report]), cfg.output)
        return EXIT_OK

    if cmd == "experiment-error-rate":
        rows = experiments.cmd_experiment_error_rate(cfg)
        experiments.write_csv(experiments.to_csv(rows), cfg.output)
        return EXIT_OK

    if cmd == "security-curves":
        rows, crossings = experiments.cmd_security_curves(cfg)
        for label, l in crossings.items():
            print(f"{label}: forging bound reaches {cfg.forge_target:g} at l={l}", file=sys.stderr)
        experiments.write_csv(experiments.to_csv(rows), cfg.output)
        return EXIT_OK

    raise AssertionError(cmd)


if __name__ == "__main__":
    sys.exit(main())
