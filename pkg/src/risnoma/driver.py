"""Outer alternating loop: powers -> (theta, F, D) via AMO -> W via SCA.

Each outer iteration fixes the decoding order from the current
effective gains, re-allocates powers in closed form, then improves the
beamforming blocks.  The sum rate reported for an iterate is always
evaluated with powers freshly allocated against that iterate's true
gains, so minimum rates hold exactly by construction whenever the
allocation is feasible.  The best feasible iterate seen so far is
returned (reported sum rate is monotone in the iteration index).

Internally all optimizer stages work in a noise-normalized frame:
channels are rescaled so sigma^2 = 1 (`normalized_view`), which leaves
every SINR/rate identical but puts gains, penalty residuals, and the
leakage cap on O(1)-O(100) scales where the penalty weight lambda and
the solver tolerances are meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import manifold_opt, sca_solver
from .errors import InfeasibleError, SubproblemInfeasibleError
from .power_alloc import allocate_from_gains
from .rate_model import (BeamformingState, GainTable, PowerSolution,
                         decoding_order, gain_matrix, sum_rate)
from .scenario import ChannelSet, ScenarioConfig


@dataclass(frozen=True)
class SchemeVariant:
    """Architecture knobs for the baseline schemes.

    use_ris: optimize RIS phases (False freezes theta, for no-RIS sets).
    hybrid:  constant-modulus analog stage (False -> F = I, full digital).
    """

    use_ris: bool = True
    hybrid: bool = True


PROPOSED = SchemeVariant()


@dataclass
class Solution:
    """Result of one optimization run."""

    powers: PowerSolution | None
    beamforming: BeamformingState
    sum_rate: float
    per_user_rates: list[np.ndarray]       # original in-group user order
    outer_iterations: int
    feasible: bool
    order: list[np.ndarray] = field(default_factory=list)
    sum_rate_full: float = 0.0             # full-interference SINR mode
    worst_leakage: float = 0.0             # watts
    traces: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# frames and views


@dataclass(frozen=True)
class NormalizedFrame:
    """Gain-normalized problem frame.

    G is divided by its spectral norm g0 and user channels by the
    largest channel norm h0, so effective gains |h^H Theta G F w|^2 are
    O(1); the noise and leakage cap are divided by scale2 = (g0*h0)^2,
    which leaves every SINR and rate identical to the physical frame.
    O(1) gains are what make the penalty weight and solver tolerances
    meaningful scales for the SCA stage.
    """

    channels: ChannelSet
    sigma2: float               # noise power in this frame
    tau: float                  # leakage cap in this frame
    scale2: float               # physical gain = normalized gain * scale2


def normalized_view(channels: ChannelSet, cfg: ScenarioConfig) -> NormalizedFrame:
    g0 = float(np.linalg.norm(channels.ap_ris, 2))
    h0 = max(float(np.linalg.norm(h, axis=1).max()) for h in channels.ris_user)
    if g0 < 1e-300:
        g0 = 1.0
    if h0 < 1e-300:
        h0 = 1.0
    scale2 = (g0 * h0) ** 2
    users = [h / h0 for h in channels.ris_user]
    nch = ChannelSet(ap_ris=channels.ap_ris / g0, ris_user=users,
                     gains_meta={"g0": g0, "h0": h0},
                     direct=channels.direct)
    return NormalizedFrame(channels=nch, sigma2=cfg.noise_power / scale2,
                           tau=cfg.tau / scale2, scale2=scale2)


def ranked_view(channels: ChannelSet, order: list[np.ndarray]) -> ChannelSet:
    """Channel set with in-group rows permuted into decoding order."""
    users = [channels.ris_user[n][order[n]] for n in range(len(order))]
    return ChannelSet(ap_ris=channels.ap_ris, ris_user=users,
                      gains_meta=channels.gains_meta, direct=channels.direct)


def _own_gains(gm: np.ndarray, group_sizes) -> list[np.ndarray]:
    out, p = [], 0
    for n, gsz in enumerate(group_sizes):
        out.append(gm[p:p + gsz, n])
        p += gsz
    return out


def _ranked_table(gm: np.ndarray, group_sizes, order) -> GainTable:
    own, cross, p = [], [], 0
    for n, gsz in enumerate(group_sizes):
        rows = gm[p:p + gsz][order[n]]
        cross.append(rows)
        own.append(rows[:, n].copy())
        p += gsz
    return GainTable(own=own, cross=cross)


def _ranked_gammas(cfg: ScenarioConfig, order) -> list[np.ndarray]:
    """Minimum rates follow the user, so permute them with the order."""
    return [g[order[n]] for n, g in enumerate(cfg.min_rates_by_group())]


def _flat_perm(group_sizes, order) -> np.ndarray:
    """Flat permutation: ranked index -> original flat user index."""
    out, p = [], 0
    for n, gsz in enumerate(group_sizes):
        out.extend(p + order[n])
        p += gsz
    return np.asarray(out)


# ---------------------------------------------------------------------------
# initialization


def initialize(cfg: ScenarioConfig, channels: ChannelSet, rng: np.random.Generator,
               variant: SchemeVariant = PROPOSED) -> tuple[PowerSolution, BeamformingState]:
    """Uniform group powers, random feasible phases, ZF-style digital init.

    theta gets i.i.d. uniform phases (all-ones for direct channel sets),
    F random phases of modulus 1/sqrt(N_t) (identity for full digital),
    and W is the right pseudo-inverse of the per-group leader effective
    rows, columns scaled so the hybrid columns D = F W have unit norm.
    """
    Nt = cfg.n_tx_antennas
    N = cfg.n_groups
    n_el = channels.n_elements
    if channels.direct:
        theta = np.ones(n_el, dtype=complex)
    else:
        theta = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=n_el))
    if variant.hybrid:
        modulus = 1.0 / math.sqrt(Nt)
        F = modulus * np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=(Nt, cfg.n_rf_chains)))
    else:
        modulus = None
        F = np.eye(Nt, dtype=complex)

    # per-group leader rows of the reduced channel h^H Theta G F
    M = channels.ap_ris @ F
    E = np.conj(channels.stacked_users()) @ (theta[:, None] * M)   # (K, N_RF)
    leaders, p = [], 0
    for gsz in cfg.group_sizes:
        rows = E[p:p + gsz]
        leaders.append(p + int(np.argmax(np.linalg.norm(rows, axis=1))))
        p += gsz
    W = np.linalg.pinv(E[leaders])                                 # (N_RF, N)
    FW = F @ W
    norms = np.linalg.norm(FW, axis=0)
    for n in range(N):
        if norms[n] < 1e-12:          # degenerate leader row; fall back
            W[:, n] = 0.0
            W[min(n, W.shape[0] - 1), n] = 1.0
            FW[:, n] = F @ W[:, n]
            norms[n] = np.linalg.norm(FW[:, n])
    W = W / norms[None, :]
    D = FW / norms[None, :]

    state = BeamformingState(theta=theta, analog=F, digital=W, hybrid=D,
                             analog_modulus=modulus)
    group_powers = np.full(N, cfg.total_power / N)
    user_powers = [np.full(g, cfg.total_power / N / g) for g in cfg.group_sizes]
    return PowerSolution(group_powers=group_powers, user_powers=user_powers), state


# ---------------------------------------------------------------------------
# certification


def certify(state: BeamformingState, powers: PowerSolution, rates: list[np.ndarray],
            gammas_ranked: list[np.ndarray], worst_leak_norm: float,
            cfg: ScenarioConfig) -> tuple[bool, dict]:
    """Check every constraint of the joint problem at stated tolerances."""
    details = {}
    ok = True
    min_slack = min(float(np.min(r - g)) for r, g in zip(rates, gammas_ranked))
    details["min_rate_slack"] = min_slack
    ok &= min_slack >= -1e-6
    total = powers.total()
    details["power_excess"] = total - cfg.total_power
    ok &= total <= cfg.total_power + 1e-9
    res = state.manifold_residuals()
    details["manifold"] = res
    ok &= max(res.values()) <= 1e-9
    leak_w = worst_leak_norm * cfg.noise_power
    details["worst_leakage_w"] = leak_w
    ok &= leak_w <= cfg.tau + 1e-6
    ok &= bool(np.all(powers.group_powers >= -1e-12))
    return bool(ok), details


# ---------------------------------------------------------------------------
# the outer loop


def optimize(cfg: ScenarioConfig, channels: ChannelSet, rng: np.random.Generator,
             variant: SchemeVariant = PROPOSED,
             collect_traces: bool = False) -> Solution:
    """Run the full alternating optimization on one channel realization.

    Stops when successive sum rates differ by <= cfg.outer_tol or after
    cfg.max_outer_iters outer iterations; returns the best feasible
    iterate seen (feasible=False with zero rate if none exists).
    """
    frame = normalized_view(channels, cfg)
    nch, s2h, tau_hat = frame.channels, frame.sigma2, frame.tau
    powers0, state = initialize(cfg, nch, rng, variant)
    optimize_theta = variant.use_ris and not channels.direct

    best = None
    best_raw, best_raw_it = -np.inf, 0
    raw_trace, best_trace = [], []
    amo_traces, sca_traces = [], []
    R_prev = None
    iters = 0
    aux_orig = None          # (U, V, Z) with rows in original user order

    for it in range(cfg.max_outer_iters):
        iters = it + 1
        gm = gain_matrix(nch, state)
        order = decoding_order(_own_gains(gm, cfg.group_sizes))
        table = _ranked_table(gm, cfg.group_sizes, order)
        gammas = _ranked_gammas(cfg, order)
        perm = _flat_perm(cfg.group_sizes, order)
        feasible_it = True
        gammas_eff = gammas
        try:
            powers, _ = allocate_from_gains(table.own, gammas, cfg.total_power, s2h)
        except InfeasibleError:
            # keep the NOMA structure alive: largest s*gamma that still
            # allocates, so the SCA keeps pulling weak users upward
            feasible_it = False
            powers, gammas_eff = _scaled_gamma_fallback(
                table, gammas, cfg.total_power, s2h, powers0)

        R_t, rates = sum_rate(table, powers, s2h, "approx")
        worst_leak = _worst_cross_gain(gm, cfg.group_sizes)
        if feasible_it:
            ok, details = certify(state, powers, rates, gammas,
                                  worst_leak * frame.scale2, cfg)
        else:
            ok, details = False, {}
        raw_trace.append(R_t)
        if ok and (best is None or R_t > best["R"]):
            best = {"R": R_t, "state": state.copy(), "powers": powers,
                    "order": [o.copy() for o in order], "rates": rates,
                    "details": details, "gm": gm.copy(), "it": it}
        if R_t > best_raw + cfg.outer_tol:
            best_raw, best_raw_it = R_t, it
        best_trace.append(best["R"] if best else 0.0)
        if R_prev is not None and abs(R_t - R_prev) <= cfg.outer_tol:
            break
        mark = best["it"] if best is not None else best_raw_it
        if it - max(mark, best_raw_it) >= cfg.outer_patience:
            break                       # best-so-far stagnant; stop early
        R_prev = R_t

        # --- improve the beamforming blocks -----------------------------
        ranked = ranked_view(nch, order)
        st = state.copy()
        if aux_orig is None:
            # first pass: no splitting targets yet, tie aux to the cascade
            st, _ = sca_solver.initialize_feasible(
                st, ranked, powers, gammas_eff, s2h, tau_hat)
        else:
            # AMO chases the previous SCA's splitting variables
            U, V, Z = aux_orig
            st.aux_u, st.aux_v, st.aux_z = U.copy(), V[perm], Z[perm]
        st, amo_info = manifold_opt.amo_optimize(
            st, ranked, cfg, optimize_theta=optimize_theta,
            optimize_analog=variant.hybrid, collect_trace=collect_traces)
        if collect_traces:
            amo_traces.append(amo_info["trace"])
        lam_t = min(cfg.penalty_weight, cfg.penalty_start * cfg.penalty_growth ** it)
        try:
            st, sca_info = sca_solver.sca_optimize(
                st, ranked, powers, gammas_eff,
                sigma2=s2h, tau=tau_hat, lam=lam_t,
                eps=cfg.eps_sca, iter_cap=cfg.sca_iter_cap,
                barrier_tol=cfg.barrier_tol, collect_trace=collect_traces)
            if collect_traces:
                sca_traces.append(sca_info["trace"])
            inv = np.empty_like(perm)
            inv[perm] = np.arange(len(perm))
            aux_orig = (st.aux_u.copy(), st.aux_v[inv], st.aux_z[inv])
        except SubproblemInfeasibleError:
            pass                                   # keep the AMO state
        # re-project the coupling variable D onto unit columns
        FW = st.analog @ st.digital
        norms = np.linalg.norm(FW, axis=0)
        safe = norms > 1e-12
        st.hybrid[:, safe] = FW[:, safe] / norms[None, safe]
        state = st

    if best is None:
        sol = Solution(powers=None, beamforming=state, sum_rate=0.0,
                       per_user_rates=[], outer_iterations=iters,
                       feasible=False)
    else:
        per_user = _scatter_rates(best["rates"], best["order"])
        table = _ranked_table(best["gm"], cfg.group_sizes, best["order"])
        R_full, _ = sum_rate(table, best["powers"], s2h, "full")
        sol = Solution(powers=best["powers"], beamforming=best["state"],
                       sum_rate=best["R"], per_user_rates=per_user,
                       outer_iterations=iters, feasible=True,
                       order=best["order"], sum_rate_full=R_full,
                       worst_leakage=best["details"]["worst_leakage_w"])
    sol.traces = {"sum_rate": raw_trace, "best_sum_rate": best_trace}
    if collect_traces:
        sol.traces["amo"] = amo_traces
        sol.traces["sca"] = sca_traces
    return sol


def _scaled_gamma_fallback(table: GainTable, gammas: list[np.ndarray],
                           total_power: float, sigma2: float,
                           powers0: PowerSolution):
    """Bisect the largest s in [0, 1] with s*gamma allocatable.

    s = 0 always works (no minimum rates -> unconstrained optimum), so
    this returns a power solution preserving the SIC splitting structure
    even on iterates where the true targets are unreachable.
    """
    def attempt(s):
        g = [s * x for x in gammas]
        return allocate_from_gains(table.own, g, total_power, sigma2)[0], g

    lo, hi = 0.0, 1.0
    best = None
    for _ in range(12):
        mid = 0.5 * (lo + hi)
        try:
            best = attempt(mid)
            lo = mid
        except InfeasibleError:
            hi = mid
    if best is None:
        try:
            best = attempt(0.0)
        except InfeasibleError:
            # zero gains in some group; keep the uniform split
            return powers0, [0.0 * x for x in gammas]
    return best


def _worst_cross_gain(gm: np.ndarray, group_sizes) -> float:
    worst, p = 0.0, 0
    for n, gsz in enumerate(group_sizes):
        block = np.delete(gm[p:p + gsz], n, axis=1)
        if block.size:
            worst = max(worst, float(block.max()))
        p += gsz
    return worst


def _scatter_rates(rates_ranked: list[np.ndarray], order) -> list[np.ndarray]:
    out = []
    for n, r in enumerate(rates_ranked):
        orig = np.empty_like(r)
        orig[order[n]] = r
        out.append(orig)
    return out
