"""Optimizer report, calibration and the two figure-reproducing experiments.

Each ``cmd_*`` function returns plain rows (lists of dicts) and the CLI writes
them as CSV.  Random streams are derived from ``(seed, grid index, round)``
so results do not depend on execution order.
"""
from __future__ import annotations

import csv
import io
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Iterable

import numpy as np

from qmoney import photonics, protocol, security
from qmoney.config import ExperimentConfig
from qmoney.photonics import DetailedDevice
from qmoney.protocol import BankRecord, Reason
from qmoney.security import InfeasibleError, SecurityParams


@dataclass(frozen=True)
class OperatingPoint:
    label: str
    params: SecurityParams


def operating_point(eta, beta, eps, mu, target, *, min_threshold=None, step=1e-5) -> SecurityParams:
    """Security parameters for ``beta``; ``eps=None`` runs the optimizer."""
    if eps is None:
        choice = security.optimize_epsilon(eta, beta, mu, target, step=step, min_threshold=min_threshold)
        eps = choice.eps
    emin = security.emin_lower_bound(eps, eta, mu)
    delta = security.delta_from_gap(emin, beta)
    return SecurityParams(eta, beta, eps, delta, mu, target)


def operating_points(cfg: ExperimentConfig) -> list[OperatingPoint]:
    """The configured-``beta`` point and the strict ``beta = 0`` point."""
    configured = operating_point(cfg.eta, cfg.beta, cfg.eps, cfg.mu, cfg.forge_target, step=cfg.eps_step)
    strict = operating_point(
        cfg.eta, 0.0, cfg.eps_strict, cfg.mu, cfg.forge_target,
        min_threshold=cfg.beta, step=cfg.eps_step,
    )
    return [OperatingPoint(f"beta={cfg.beta:g}", configured), OperatingPoint("beta=0", strict)]


# -- optimizer --------------------------------------------------------------

OPTIMIZE_COLUMNS = (
    "case", "beta", "min_threshold", "feasible", "eps", "delta", "e_min",
    "l [states]", "term_qrg", "term_eff", "term_err", "forge_total", "honest_fail", "note",
)


def cmd_optimize(cfg: ExperimentConfig) -> list[dict[str, Any]]:
    """Optimal ``eps`` and required ``l`` for the configured and strict cases.

    The strict ``beta = 0`` case requires its error threshold to stay above
    the device's real error rate ``cfg.beta``; the unconstrained strict
    optimum is reported alongside for comparison.
    """
    cases = [
        ("configured", cfg.beta, None),
        ("strict", 0.0, cfg.beta),
        ("strict_unconstrained", 0.0, None),
    ]
    rows = []
    for case, beta, floor in cases:
        row: dict[str, Any] = {"case": case, "beta": beta, "min_threshold": floor}
        try:
            choice = security.optimize_epsilon(
                cfg.eta, beta, cfg.mu, cfg.forge_target, step=cfg.eps_step, min_threshold=floor
            )
        except InfeasibleError as exc:
            row.update(feasible=False, note=str(exc))
            rows.append(row)
            continue
        params = SecurityParams(cfg.eta, beta, choice.eps, choice.delta, cfg.mu, cfg.forge_target)
        bound = security.forge_bound(choice.l, params)
        row.update(
            feasible=True,
            eps=choice.eps,
            delta=choice.delta,
            e_min=choice.emin,
            **{"l [states]": choice.l},
            term_qrg=bound.term_qrg,
            term_eff=bound.term_eff,
            term_err=bound.term_err,
            forge_total=bound.total,
            honest_fail=security.honest_fail_bound(choice.l, params),
            note="",
        )
        rows.append(row)
    return rows


# -- calibration ------------------------------------------------------------


def cmd_calibrate(dev: DetailedDevice, mu: float, samples: int, seed: int) -> dict[str, Any]:
    """Exact ``(eta, beta)`` of a detailed device plus a Monte Carlo cross-check."""
    eta, beta = photonics.calibrate_detailed(dev, mu)
    rng = np.random.default_rng(seed)
    values = rng.integers(0, 16, samples, dtype=np.uint8)
    matchings = rng.integers(0, 3, samples, dtype=np.uint8)
    conclusive, pair_ids, bits = photonics.sample_detailed_batch(values, matchings, mu, dev, rng)
    n_conc = int(conclusive.sum())
    wrong = photonics.parity_values(values[conclusive], pair_ids[conclusive]) != bits[conclusive]
    n_wrong = int(wrong.sum())
    eta_hat = n_conc / samples
    beta_hat = n_wrong / n_conc if n_conc else math.nan
    return {
        "eta": eta,
        "beta": beta,
        "samples": samples,
        "conclusive": n_conc,
        "eta_mc": eta_hat,
        "beta_mc": beta_hat,
        "z_eta": _z(eta_hat, eta, samples),
        "z_beta": _z(beta_hat, beta, n_conc),
    }


def _z(observed: float, expected: float, n: int) -> float:
    if n == 0 or math.isnan(expected) or math.isnan(observed):
        return math.nan
    sigma = math.sqrt(expected * (1 - expected) / n)
    if sigma == 0:
        return 0.0 if observed == expected else math.inf
    return (observed - expected) / sigma


# -- error-rate experiment --------------------------------------------------


@dataclass(frozen=True)
class RoundResult:
    l: int
    l_conclusive: int
    errors: int
    verdicts: tuple[protocol.Verdict, ...]


def _round_rngs(seed: int, grid_index: int, round_index: int):
    secret_seq, meas_seq = np.random.SeedSequence(seed, spawn_key=(grid_index, round_index)).spawn(2)
    return np.random.default_rng(secret_seq), np.random.default_rng(meas_seq)


def judge(record: BankRecord, claim: protocol.VerificationClaim) -> protocol.Verdict:
    """Holder-side efficiency abort followed by the bank's verdict."""
    if not protocol.holder_efficiency_check(claim, record.params):
        return protocol.Verdict(False, Reason.EFFICIENCY_SHORTFALL)
    return protocol.bank_verify(record, claim)


def _fresh_round(cfg, points, dev, l, gi, r) -> RoundResult:
    secret_rng, meas_rng = _round_rngs(cfg.seed, gi, r)
    base, handle = protocol.mint(l, cfg.mu, points[0].params, cfg.cap_T, secret_rng)
    indices = protocol.holder_select_subset(handle, l, meas_rng)
    claim = protocol.holder_measure(handle, indices, dev, meas_rng)
    verdicts = []
    for point in points:
        record = BankRecord(
            base.serial, base.secrets, np.zeros(l, dtype=bool), 0, cfg.cap_T, point.params, cfg.mu
        )
        verdicts.append(judge(record, claim))
    errors = protocol.count_errors(base.secrets, claim)
    return RoundResult(l, claim.l_conclusive, errors, tuple(verdicts))


def _reused_note_rounds(cfg, points, dev, l, gi) -> list[RoundResult]:
    secret_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(gi,)))
    base, handle = protocol.mint(l * cfg.rounds, cfg.mu, points[0].params, cfg.cap_T, secret_rng)
    records = [
        BankRecord(base.serial, base.secrets, np.zeros(base.n, dtype=bool), 0,
                   max(cfg.cap_T, cfg.rounds), p.params, cfg.mu)
        for p in points
    ]
    results = []
    for r in range(cfg.rounds):
        _, meas_rng = _round_rngs(cfg.seed, gi, r)
        indices = protocol.holder_select_subset(handle, l, meas_rng)
        claim = protocol.holder_measure(handle, indices, dev, meas_rng)
        verdicts = tuple(judge(rec, claim) for rec in records)
        results.append(RoundResult(l, claim.l_conclusive, protocol.count_errors(base.secrets, claim), verdicts))
    return results


def run_error_rate_rounds(cfg: ExperimentConfig) -> tuple[list[OperatingPoint], list[list[RoundResult]]]:
    points = operating_points(cfg)
    dev = cfg.device_model()
    if not cfg.fresh_notes:
        return points, [_reused_note_rounds(cfg, points, dev, l, gi) for gi, l in enumerate(cfg.l_grid)]
    jobs = [(l, gi, r) for gi, l in enumerate(cfg.l_grid) for r in range(cfg.rounds)]

    def run(job):
        l, gi, r = job
        return _fresh_round(cfg, points, dev, l, gi, r)

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            flat = list(pool.map(run, jobs))
    else:
        flat = [run(job) for job in jobs]
    grouped = [flat[gi * cfg.rounds:(gi + 1) * cfg.rounds] for gi in range(len(cfg.l_grid))]
    return points, grouped


def cmd_experiment_error_rate(cfg: ExperimentConfig) -> list[dict[str, Any]]:
    points, grouped = run_error_rate_rounds(cfg)
    rows = []
    for results in grouped:
        rates = np.array([res.errors / res.l_conclusive if res.l_conclusive else np.nan for res in results])
        fractions = np.array([res.l_conclusive / res.l for res in results])
        row: dict[str, Any] = {
            "l [states]": results[0].l,
            "rounds": len(results),
            "mean_error_rate [fraction]": float(np.nanmean(rates)),
            "stderr_error_rate [fraction]": _stderr(rates),
            "mean_conclusive_fraction [fraction]": float(fractions.mean()),
        }
        for n, point in enumerate(points):
            accepted = sum(res.verdicts[n].accepted for res in results)
            row[f"error_threshold({point.label}) [fraction]"] = point.params.error_threshold
            row[f"accepted({point.label}) [rounds]"] = accepted
            row[f"all_pass({point.label})"] = accepted == len(results)
        rows.append(row)
    return rows


def _stderr(values: np.ndarray) -> float:
    values = values[~np.isnan(values)]
    if values.size < 2:
        return math.nan
    return float(values.std(ddof=1) / math.sqrt(values.size))


# -- security curves --------------------------------------------------------


def cmd_security_curves(cfg: ExperimentConfig) -> tuple[list[dict[str, Any]], dict[str, int]]:
    """Forging bound against ``l`` for both operating points, and where each
    crosses the target."""
    points = operating_points(cfg)
    rows = []
    for l in cfg.curve_grid:
        row: dict[str, Any] = {"l [states]": l}
        for point in points:
            row[f"forge_bound({point.label}, eps={point.params.eps:g}) [probability]"] = (
                security.forge_bound(l, point.params).total
            )
        row["target [probability]"] = cfg.forge_target
        rows.append(row)
    crossings = {point.label: security.solve_min_l(point.params) for point in points}
    return rows, crossings


# -- csv ----------------------------------------------------------------------


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "nan" if math.isnan(value) else f"{float(value):.9e}"
    return str(value)


def to_csv(rows: Iterable[dict[str, Any]], columns: Iterable[str] | None = None) -> str:
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else []
    columns = list(columns)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(text: str, path: str | None) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)
