"""Group and per-user power allocation.

With the decoding order fixed, every non-leading user is pinned to its
minimum rate, which makes each user's power an affine function of the
group budget P_n.  The leader's SINR is then f_n(P_n) = beta_n P_n +
alpha_n, the unconstrained group split has the water-filling closed
form of `unconstrained_opt`, and groups whose leader falls below its
minimum rate are pinned at the power `constrained_value` that makes the
constraint exactly active.  `allocate` iterates pin-and-resolve until
no violators remain.

Note the constrained pin uses (2^gamma - 1 - alpha)/beta: the value at
which f_n equals the SINR target 2^gamma - 1.  (The printed form
without the -1 would overshoot the target rate; the grid-search oracle
in the tests adjudicates.)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleBudgetError, InfeasibleRatesError
from .rate_model import PowerSolution, GainTable, decoding_order, gain_matrix

_TOL = 1e-12


@dataclass
class GroupLinearCoeffs:
    """Coefficients of the leader SINR map f_n(P_n) = beta_n P_n + alpha_n."""

    beta: np.ndarray
    alpha: np.ndarray


def intra_group_split(P_n: float, gains: np.ndarray, min_rates: np.ndarray,
                      sigma2: float) -> np.ndarray:
    """Split a group budget so every non-leader meets its rate exactly.

    ``gains`` must be sorted descending (decoding order).  Back
    substitution from the weakest user up: with a_k = (2^g_k - 1)/2^g_k,
        p_k = a_k * (P_n - sum_{j>k} p_j + sigma^2/g_k),
    which enforces SINR_k = 2^gamma_k - 1 given the SIC interference
    sum_{j<k} p_j; the leader absorbs the remainder.
    """
    gains = np.asarray(gains, dtype=float)
    m = gains.shape[0]
    if m == 1:
        return np.array([float(P_n)])
    if np.any(np.diff(gains) > _TOL * np.abs(gains[:-1])):
        raise ValueError("gains must be sorted descending")
    p = np.zeros(m)
    tail = 0.0
    for k in range(m - 1, 0, -1):
        a = (2.0 ** min_rates[k] - 1.0) / 2.0 ** min_rates[k]
        p[k] = a * (P_n - tail + sigma2 / gains[k])
        tail += p[k]
    p[0] = P_n - tail
    if p[0] < -_TOL * max(1.0, abs(P_n)):
        raise InfeasibleBudgetError(-p[0])
    p[0] = max(p[0], 0.0)
    return p


def linear_coeffs(gains: list[np.ndarray], min_rates: list[np.ndarray],
                  sigma2: float) -> GroupLinearCoeffs:
    """Per-group (beta_n, alpha_n) of the leader-SINR affine map.

    beta_n = (g_1/sigma^2) * (1 - sum_k (2^g_k - 1) prod_{j<=k} 2^-g_j)
    alpha_n = -(g_1/sigma^2) * sum_k (2^g_k - 1)(sigma^2/g_k) prod_{j<=k} 2^-g_j
    with sums over the non-leader users k >= 2.
    """
    N = len(gains)
    beta = np.empty(N)
    alpha = np.empty(N)
    for n in range(N):
        g = np.asarray(gains[n], dtype=float)
        gam = np.asarray(min_rates[n], dtype=float)
        if g[0] <= 0:
            raise InfeasibleRatesError(f"group {n} leader has zero effective gain")
        s_beta = 0.0
        s_alpha = 0.0
        prod = 1.0
        for k in range(1, g.shape[0]):
            prod /= 2.0 ** gam[k]
            s_beta += (2.0 ** gam[k] - 1.0) * prod
            s_alpha += (2.0 ** gam[k] - 1.0) * (sigma2 / g[k]) * prod
        beta[n] = g[0] / sigma2 * (1.0 - s_beta)
        alpha[n] = -g[0] / sigma2 * s_alpha
        if not (np.isfinite(beta[n]) and np.isfinite(alpha[n])):
            raise InfeasibleRatesError(f"group {n} coefficients not finite")
    return GroupLinearCoeffs(beta=beta, alpha=alpha)


def unconstrained_opt(coeffs: GroupLinearCoeffs, P: float) -> np.ndarray:
    """Water-filling optimum of sum_n log2(beta_n P_n + alpha_n + 1)
    under sum_n P_n = P, no minimum rates.

    P_n = P/N - (alpha_n+1)/beta_n + (1/N) sum_i (alpha_i+1)/beta_i.
    """
    beta, alpha = coeffs.beta, coeffs.alpha
    if np.any(beta <= 0):
        raise InfeasibleRatesError(
            "minimum rates consume more than the gain structure permits (beta <= 0)")
    N = beta.shape[0]
    lvl = (alpha + 1.0) / beta
    return P / N - lvl + lvl.sum() / N


def constrained_value(beta_n: float, alpha_n: float, gamma_n1: float) -> float:
    """Smallest budget making the leader's rate constraint active:
    beta*P + alpha = 2^gamma - 1."""
    if beta_n <= 0:
        raise InfeasibleRatesError("beta <= 0: leader rate unreachable at any power")
    return (2.0 ** gamma_n1 - 1.0 - alpha_n) / beta_n


def allocate_from_gains(gains: list[np.ndarray], min_rates: list[np.ndarray],
                        total_power: float, sigma2: float) -> tuple[PowerSolution, dict]:
    """Group power allocation loop (pin violators, re-solve the rest).

    Returns the power solution plus an info dict with the pinned set and
    the number of pinning rounds.  Raises an infeasibility error when
    the pinned budgets alone exceed P.
    """
    N = len(gains)
    coeffs = linear_coeffs(gains, min_rates, sigma2)
    beta, alpha = coeffs.beta, coeffs.alpha
    target = np.array([2.0 ** min_rates[n][0] - 1.0 for n in range(N)])

    pinned: dict[int, float] = {}
    active = list(range(N))
    P_active = np.zeros(N)
    rounds = 0
    while True:
        rounds += 1
        budget = total_power - sum(pinned.values())
        if budget < -_TOL * total_power:
            raise InfeasibleBudgetError(-budget)
        if not active:
            break
        sub = GroupLinearCoeffs(beta=beta[active], alpha=alpha[active])
        P_bar = unconstrained_opt(sub, budget)
        viol = [n for n, Pb in zip(active, P_bar)
                if beta[n] * Pb + alpha[n] < target[n] - _TOL]
        if not viol:
            for n, Pb in zip(active, P_bar):
                P_active[n] = Pb
            break
        for n in viol:
            pinned[n] = constrained_value(beta[n], alpha[n], min_rates[n][0])
        active = [n for n in active if n not in viol]

    group_powers = P_active.copy()
    for n, Ph in pinned.items():
        group_powers[n] = Ph
    deficit = group_powers.sum() - total_power
    if deficit > _TOL * max(1.0, total_power):
        raise InfeasibleBudgetError(deficit)

    user_powers = [intra_group_split(group_powers[n], gains[n], min_rates[n], sigma2)
                   for n in range(N)]
    sol = PowerSolution(group_powers=group_powers, user_powers=user_powers)
    info = {"pinned": sorted(pinned), "rounds": rounds, "coeffs": coeffs}
    return sol, info


def allocate(channels, state, cfg) -> tuple[PowerSolution, dict]:
    """Allocate powers for the current beamforming state.

    Computes effective gains, fixes the decoding order, and runs the
    group allocation; the returned info carries the order and gain table
    so callers can evaluate rates consistently.
    """
    gm = gain_matrix(channels, state)
    own, p = [], 0
    for n, gsz in enumerate(cfg.group_sizes):
        own.append(gm[p:p + gsz, n])
        p += gsz
    order = decoding_order(own)
    gains, cross, p = [], [], 0
    for n, gsz in enumerate(cfg.group_sizes):
        rows = gm[p:p + gsz][order[n]]
        cross.append(rows)
        gains.append(rows[:, n].copy())
        p += gsz
    # minimum rates follow the user, so they permute with the order
    gammas = [g[order[n]] for n, g in enumerate(cfg.min_rates_by_group())]
    sol, info = allocate_from_gains(gains, gammas,
                                    cfg.total_power, cfg.noise_power)
    info["order"] = order
    info["gains"] = GainTable(own=gains, cross=cross)
    return sol, info
