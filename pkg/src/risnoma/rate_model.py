"""Effective gains, decoding order, SINR, rates, and inter-group leakage.

Users are indexed group-major.  Within a group, rate/power computations
use the *decoding-order rank* (rank 0 = largest effective gain, which
suffers no intra-group interference after SIC).  ``decoding_order``
maps ranks back to in-group channel indices.

"approx" SINR ignores residual inter-group leakage (it is capped by the
tau constraint); "full" mode adds every cross-beam term and is used for
reporting/validation only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError

RATE_LOG2 = np.log(2.0)


@dataclass
class BeamformingState:
    """Phase shifts theta, analog F, digital W, hybrid D, and the
    auxiliary splitting variables (u_i, v_{n,k,i}, z_{n,k,i}).

    ``analog_modulus`` is the constant modulus of F's entries
    (1/sqrt(N_t) for the hybrid architecture); ``None`` marks an
    unconstrained full-digital F.  The aux variables live in the
    noise-normalized frame used by the optimizers (see driver).
    """

    theta: np.ndarray                      # (N_r,)
    analog: np.ndarray                     # (N_t, N_RF)
    digital: np.ndarray                    # (N_RF, N)
    hybrid: np.ndarray                     # (N_t, N), unit-norm columns
    analog_modulus: float | None = None
    aux_u: np.ndarray | None = None        # (N, N_r); row i = u_i
    aux_v: np.ndarray | None = None        # (K, N) complex
    aux_z: np.ndarray | None = None        # (K, N) real, >= 0

    @property
    def n_beams(self) -> int:
        return self.digital.shape[1]

    def copy(self) -> "BeamformingState":
        return BeamformingState(
            theta=self.theta.copy(), analog=self.analog.copy(),
            digital=self.digital.copy(), hybrid=self.hybrid.copy(),
            analog_modulus=self.analog_modulus,
            aux_u=None if self.aux_u is None else self.aux_u.copy(),
            aux_v=None if self.aux_v is None else self.aux_v.copy(),
            aux_z=None if self.aux_z is None else self.aux_z.copy())

    def manifold_residuals(self) -> dict:
        """Max deviation from each manifold constraint."""
        res = {"theta": float(np.max(np.abs(np.abs(self.theta) - 1.0)))}
        if self.analog_modulus is not None:
            res["analog"] = float(np.max(np.abs(np.abs(self.analog) - self.analog_modulus)))
        else:
            res["analog"] = 0.0
        res["hybrid"] = float(np.max(np.abs(np.linalg.norm(self.hybrid, axis=0) - 1.0)))
        return res

    def validate(self, atol: float = 1e-9):
        res = self.manifold_residuals()
        for name, r in res.items():
            if r > atol:
                raise ValueError(f"{name} manifold constraint violated by {r:.3e}")
        if self.aux_z is not None and np.any(self.aux_z < -atol):
            raise ValueError("aux_z must be non-negative")


@dataclass
class PowerSolution:
    """Per-group budgets P_n and per-user powers in decoding-order rank."""

    group_powers: np.ndarray               # (N,)
    user_powers: list[np.ndarray]          # per group, rank order

    def total(self) -> float:
        return float(sum(p.sum() for p in self.user_powers))

    def validate(self, total_power: float, atol: float = 1e-9):
        for n, p in enumerate(self.user_powers):
            if np.any(p < -atol):
                raise ValueError(f"negative user power in group {n}")
            if abs(p.sum() - self.group_powers[n]) > atol:
                raise ValueError(f"group {n} powers do not sum to its budget")
        if self.group_powers.sum() > total_power + atol:
            raise ValueError("total power budget exceeded")


@dataclass
class GainTable:
    """Effective gains in decoding-order rank.

    ``own[n][k]`` is |h^H Theta G F w_n|^2 of the rank-k user of group n;
    ``cross[n]`` is the (|G_n|, N) matrix of that group's users against
    every beam (column n equals ``own[n]``).
    """

    own: list[np.ndarray]
    cross: list[np.ndarray] = field(default_factory=list)


# ---------------------------------------------------------------------------


def effective_gain(h: np.ndarray, theta: np.ndarray, G: np.ndarray,
                   F: np.ndarray, w: np.ndarray) -> float:
    """|h^H diag(theta) G F w|^2 for one user/beam pair."""
    if h.shape[0] != theta.shape[0] or G.shape[0] != theta.shape[0]:
        raise DimensionError("h, theta, G row dimension mismatch")
    if G.shape[1] != F.shape[0] or F.shape[1] != w.shape[0]:
        raise DimensionError("G, F, w chain dimension mismatch")
    s = np.vdot(h, theta * (G @ (F @ w)))        # vdot conjugates h
    return float(abs(s) ** 2)


def cascade_rows(channels, state: BeamformingState) -> np.ndarray:
    """(K, N) matrix of complex cascade scalars h_u^H Theta G F w_i."""
    M = channels.ap_ris @ (state.analog @ state.digital)      # (N_r, N)
    H = channels.stacked_users()                              # (K, N_r)
    return H.conj() @ (state.theta[:, None] * M)


def gain_matrix(channels, state: BeamformingState) -> np.ndarray:
    """(K, N) effective gains |h_u^H Theta G F w_i|^2, original user order."""
    return np.abs(cascade_rows(channels, state)) ** 2


def decoding_order(own_gains: list[np.ndarray]) -> list[np.ndarray]:
    """Per-group permutation sorting users by descending effective gain.

    Ties break by original in-group index (stable sort).
    """
    out = []
    for g in own_gains:
        g = np.asarray(g, dtype=float)
        if not np.all(np.isfinite(g)):
            raise ValueError("gains must be finite")
        out.append(np.argsort(-g, kind="stable"))
    return out


def gain_table(channels, state: BeamformingState,
               order: list[np.ndarray] | None = None,
               group_sizes: list[int] | None = None) -> tuple[GainTable, list[np.ndarray]]:
    """Build the rank-ordered gain table; computes the order if not given."""
    gm = gain_matrix(channels, state)
    if group_sizes is None:
        group_sizes = [h.shape[0] for h in channels.ris_user]
    own_raw, p = [], 0
    for n, gsz in enumerate(group_sizes):
        own_raw.append(gm[p:p + gsz, n])
        p += gsz
    if order is None:
        order = decoding_order(own_raw)
    own, cross, p = [], [], 0
    for n, gsz in enumerate(group_sizes):
        rows = gm[p:p + gsz][order[n]]
        cross.append(rows)
        own.append(rows[:, n].copy())
        p += gsz
    return GainTable(own=own, cross=cross), order


def sinr(n: int, k: int, gains: GainTable, powers: PowerSolution,
         sigma2: float, mode: str = "approx") -> float:
    """SINR of the rank-k user of group n (k=0 strongest).

    approx: g*p_k / (g*sum_{j<k} p_j + sigma^2).
    full:   adds sum_{i != n} sum_j |h^H Theta G F w_i|^2 p_{i,j}.
    """
    if sigma2 <= 0:
        raise ConfigError("noise power must be > 0")
    g = gains.own[n][k]
    p = powers.user_powers[n]
    den = g * p[:k].sum() + sigma2
    if mode == "full":
        if not gains.cross:
            raise ValueError("full mode needs cross gains")
        for i in range(len(gains.own)):
            if i == n:
                continue
            den += gains.cross[n][k, i] * powers.user_powers[i].sum()
    elif mode != "approx":
        raise ValueError(f"unknown SINR mode {mode!r}")
    return float(g * p[k] / den)


def sum_rate(gains: GainTable, powers: PowerSolution, sigma2: float,
             mode: str = "approx") -> tuple[float, list[np.ndarray]]:
    """Sum rate and per-user rates R = log2(1 + SINR), rank order."""
    per_user = []
    total = 0.0
    for n in range(len(gains.own)):
        r = np.empty(len(gains.own[n]))
        for k in range(len(r)):
            r[k] = np.log2(1.0 + sinr(n, k, gains, powers, sigma2, mode))
        per_user.append(r)
        total += float(r.sum())
    return total, per_user


def leakage_ok(state: BeamformingState, channels, tau: float,
               group_sizes: list[int] | None = None) -> tuple[list[np.ndarray], float]:
    """Check |h_{n,k}^H Theta G F w_i|^2 <= tau for every i != n.

    Returns per-group boolean matrices (own-beam column forced True) and
    the worst leakage value found.
    """
    gm = gain_matrix(channels, state)
    if group_sizes is None:
        group_sizes = [h.shape[0] for h in channels.ris_user]
    flags, worst, p = [], 0.0, 0
    for n, gsz in enumerate(group_sizes):
        block = gm[p:p + gsz]
        ok = block <= tau
        ok[:, n] = True
        leak = np.delete(block, n, axis=1)
        if leak.size:
            worst = max(worst, float(leak.max()))
        flags.append(ok)
        p += gsz
    return flags, worst


def received_signal(state: BeamformingState, powers: PowerSolution, channels,
                    symbols: np.ndarray, noise: np.ndarray,
                    order: list[np.ndarray]) -> np.ndarray:
    """y_{n,k} = h^H Theta G F W P s + u, flat original user order.

    ``symbols`` and ``noise`` are flat (K,) with E[s s^H] = I assumed;
    P carries sqrt(p) per user so stream n superposes its group's
    symbols.  Sanity-check helper, not a detection simulator.
    """
    group_sizes = [h.shape[0] for h in channels.ris_user]
    K = sum(group_sizes)
    if symbols.shape != (K,) or noise.shape != (K,):
        raise DimensionError("symbols and noise must be flat length-K arrays")
    # stream n = sum_k sqrt(p_{n,k}) s_{n,k}; scatter rank powers to
    # original in-group indices first
    streams = np.zeros(len(group_sizes), dtype=complex)
    p0 = 0
    for n, gsz in enumerate(group_sizes):
        p_orig = np.empty(gsz)
        p_orig[order[n]] = powers.user_powers[n]
        streams[n] = np.sum(np.sqrt(p_orig) * symbols[p0:p0 + gsz])
        p0 += gsz
    rows = cascade_rows(channels, state)          # (K, N) cascade scalars
    return rows @ streams + noise
