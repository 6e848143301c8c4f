"""Closed-form security calculus for hidden-matching quantum banknotes.

Every bound here is a sum of Hoeffding-type exponentials in the number of
verified states ``l``.  Exponents are assembled first and exponentiated last
so that large ``l`` underflows cleanly to zero instead of producing NaNs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

DEFAULT_L_CAP = 10**12
DEFAULT_EPS_STEP = 1e-5


class InfeasibleError(ValueError):
    """Raised when no parameter choice reaches the requested security level."""


@dataclass(frozen=True)
class SecurityParams:
    """Parameters shared by the completeness and forging bounds.

    Attributes
    ----------
    eta : float
        Probability that a measured state yields a conclusive outcome.
    beta : float
        Expected error rate of conclusive outcomes for an honest device.
    eps : float
        Slack on the efficiency threshold, ``eta - eps``.
    delta : float
        Slack on the error threshold, ``beta + delta``.
    mu : float
        Mean photon number per pulse.
    forge_target : float
        Forging probability the note must be driven below.
    """

    eta: float
    beta: float
    eps: float
    delta: float
    mu: float = 0.25
    forge_target: float = 1e-7

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must be in [0, 1], got {self.eta}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if self.eps <= 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if self.delta <= 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if self.mu <= 0:
            raise ValueError(f"mu must be > 0, got {self.mu}")
        if not 0.0 < self.forge_target <= 1.0:
            raise ValueError(f"forge_target must be in (0, 1], got {self.forge_target}")

    @property
    def efficiency_threshold(self) -> float:
        return self.eta - self.eps

    @property
    def error_threshold(self) -> float:
        return self.beta + self.delta

    def check_feasible(self) -> None:
        """Raise :class:`InfeasibleError` unless the set can be secure at all."""
        if not self.eps < self.eta:
            raise InfeasibleError(f"need eps < eta, got eps={self.eps}, eta={self.eta}")
        emin = emin_lower_bound(self.eps, self.eta, self.mu)
        if not self.beta + self.delta < emin:
            raise InfeasibleError(
                f"need beta + delta < e_min, got {self.beta + self.delta:.6g} >= {emin:.6g}"
            )


@dataclass(frozen=True)
class BoundBreakdown:
    term_qrg: float
    term_eff: float
    term_err: float

    @property
    def total(self) -> float:
        return min(1.0, self.term_qrg + self.term_eff + self.term_err)


@dataclass(frozen=True)
class EpsilonChoice:
    eps: float
    delta: float
    l: int
    emin: float


def emin_lower_bound(eps: float, eta: float, mu: float) -> float:
    """Lower bound on the average error rate any forger must induce.

    Clamped below at zero; the bound vanishes at ``eps = eta / 9``.
    """
    if eta <= 0:
        raise ValueError(f"eta must be > 0, got {eta}")
    if mu <= 0:
        raise ValueError(f"mu must be > 0, got {mu}")
    ratio = eps / eta
    if 3 * ratio >= 1:
        raise ValueError(f"bound degenerates for 3*eps >= eta (eps={eps}, eta={eta})")
    prefactor = (1 / 6 - 1.5 * ratio) / (1 - 3 * ratio)
    four_mu = 4 * mu
    # x e^{-x} / (1 - e^{-x}) == x / expm1(x)
    photon_factor = four_mu / math.expm1(four_mu)
    return max(0.0, prefactor * photon_factor)


def delta_from_gap(emin: float, beta: float) -> float:
    """Place the error threshold halfway between ``beta`` and ``emin``."""
    if not emin > beta:
        raise InfeasibleError(f"security unattainable: beta={beta} >= e_min={emin}")
    return (emin - beta) / 2


def l_min(l: int, eta: float, eps: float) -> int:
    """Minimum number of conclusive outcomes out of ``l`` measured states."""
    return max(0, math.ceil((eta - eps) * l))


def _check_l(l: int) -> None:
    if l < 1:
        raise ValueError(f"l must be >= 1, got {l}")


def honest_fail_bound(l: int, params: SecurityParams) -> float:
    """Probability that an honest holder fails verification of a genuine note."""
    _check_l(l)
    exp_err = -2.0 * l_min(l, params.eta, params.eps) * params.delta**2
    exp_eff = -2.0 * l * params.eps**2
    return min(1.0, math.exp(exp_err) + math.exp(exp_eff))


def forge_bound(l: int, params: SecurityParams) -> BoundBreakdown:
    """Per-term upper bound on the probability of producing an accepted forgery."""
    _check_l(l)
    if not 0 < params.eps < params.eta:
        raise ValueError(f"need 0 < eps < eta, got eps={params.eps}, eta={params.eta}")
    exp_qrg = -2.0 * (params.eps / params.eta) ** 2 * l
    exp_eff = -2.0 * l * params.eps**2
    exp_err = -2.0 * l_min(l, params.eta, params.eps) * params.delta**2
    return BoundBreakdown(math.exp(exp_qrg), math.exp(exp_eff), math.exp(exp_err))


def solve_min_l(params: SecurityParams, cap: int = DEFAULT_L_CAP) -> int:
    """Smallest ``l`` whose forging bound is at or below ``params.forge_target``.

    Exponential bracketing followed by bisection; the bound is monotone in
    ``l`` so the answer is exact.
    """
    if params.delta <= 0 or not params.eps < params.eta:
        raise InfeasibleError("need delta > 0 and eps < eta")
    target = params.forge_target

    def ok(l: int) -> bool:
        return forge_bound(l, params).total <= target

    if ok(1):
        return 1
    lo, hi = 1, 2
    while not ok(hi):
        if hi >= cap:
            raise InfeasibleError(f"no l <= {cap} reaches forge target {target}")
        lo, hi = hi, min(2 * hi, cap)
    # invariant: not ok(lo), ok(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def optimize_epsilon(
    eta: float,
    beta: float,
    mu: float = 0.25,
    target: float = 1e-7,
    *,
    step: float = DEFAULT_EPS_STEP,
    min_threshold: float | None = None,
    cap: int = DEFAULT_L_CAP,
) -> EpsilonChoice:
    """Grid-scan ``eps`` over ``(0, eta/9)`` for the smallest required ``l``.

    ``delta`` follows the half-gap rule at each grid point.  When
    ``min_threshold`` is given, grid points whose error threshold
    ``beta + delta`` does not exceed it are skipped; this is how a strict
    ``beta = 0`` analysis keeps a real device with error rate
    ``min_threshold`` verifiable.  Ties go to the smaller ``eps``.
    """
    if not 0 < eta <= 1:
        raise ValueError(f"eta must be in (0, 1], got {eta}")
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    if mu <= 0:
        raise ValueError(f"mu must be > 0, got {mu}")
    if step <= 0:
        raise ValueError(f"step must be > 0, got {step}")

    best: EpsilonChoice | None = None
    upper = eta / 9
    k = 1
    while (eps := k * step) < upper:
        k += 1
        emin = emin_lower_bound(eps, eta, mu)
        if emin <= beta:
            continue
        delta = delta_from_gap(emin, beta)
        if min_threshold is not None and beta + delta <= min_threshold:
            continue
        params = SecurityParams(eta, beta, eps, delta, mu, target)
        try:
            l = solve_min_l(params, cap=cap)
        except InfeasibleError:
            continue
        if best is None or l < best.l:
            best = EpsilonChoice(eps, delta, l, emin)
    if best is None:
        emax = emin_lower_bound(0.0, eta, mu)
        reason = f"beta={beta} >= e_min for every grid point (e_min <= {emax:.6g})"
        if min_threshold is not None:
            reason += f" or beta + delta <= {min_threshold}"
        raise InfeasibleError(reason)
    return best
