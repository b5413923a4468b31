"""Baseline schemes, Monte-Carlo experiment runner, CSV output.

Seven schemes are supported.  "ris-hybrid-noma" is the full proposed
pipeline; the others remove the RIS (direct blocked channel), the
analog stage (full digital), NOMA (FDMA-OMA time sharing), or the
optimization (random phases + zero-forcing):

  ris-hybrid-noma        proposed alternating optimization
  ris-fulldigital-noma   F = I, no modulus constraint, same loop
  no-ris-hybrid-noma     direct AP->user channel, theta frozen
  no-ris-fulldigital-noma
  no-ris-fdma-oma        no-RIS beams; every user gets a 1/K time share
                         with power concentrated K-fold in its share
  rb-zf                  random theta/F phases + ZF digital + uniform
                         group powers (intra-group closed-form split)
  socp-rb-zf-simplified  as rb-zf but group powers re-optimized by the
                         closed-form group allocation (simplified
                         stand-in for the literature SOCP baseline)

Per-trial seeds are master_seed + trial, shared across schemes and
sweep values so scheme comparisons pair by trial.  Infeasible trials
report rate 0.  CSV output is deterministic for a fixed spec (wall_ms
column excepted; the aggregate file carries no timing).
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import driver
from .errors import ConfigError, InfeasibleError
from .power_alloc import allocate_from_gains, intra_group_split
from .rate_model import (GainTable, PowerSolution, decoding_order,
                         gain_matrix, sum_rate)
from .scenario import ChannelSet, ScenarioConfig, gen_channels, gen_direct_channels

SCHEMES = (
    "ris-hybrid-noma",
    "ris-fulldigital-noma",
    "no-ris-hybrid-noma",
    "no-ris-fulldigital-noma",
    "no-ris-fdma-oma",
    "rb-zf",
    "socp-rb-zf-simplified",
)

SWEEP_VARS = ("gamma", "total_power", "d_IO", "n_ris_elements")

TRIAL_HEADER = ["scheme", "sweep_var", "sweep_value", "trial",
                "sum_rate_bps_hz", "feasible", "outer_iters", "wall_ms"]
AGG_HEADER = ["scheme", "sweep_value", "mean", "std", "feasible_frac"]

_VARIANTS = {
    "ris-hybrid-noma": driver.SchemeVariant(use_ris=True, hybrid=True),
    "ris-fulldigital-noma": driver.SchemeVariant(use_ris=True, hybrid=False),
    "no-ris-hybrid-noma": driver.SchemeVariant(use_ris=False, hybrid=True),
    "no-ris-fulldigital-noma": driver.SchemeVariant(use_ris=False, hybrid=False),
}


@dataclass(frozen=True)
class ExperimentSpec:
    """One Monte-Carlo experiment: schemes x sweep grid x trials."""

    schemes: tuple[str, ...] = ("ris-hybrid-noma",)
    sweep_var: str = "gamma"
    sweep_grid: tuple[float, ...] = (1.0,)
    trials: int = 50
    master_seed: int = 0
    cfg: ScenarioConfig = field(default_factory=ScenarioConfig.desk)

    def __post_init__(self):
        if isinstance(self.schemes, str):
            object.__setattr__(self, "schemes", (self.schemes,))
        object.__setattr__(self, "schemes", tuple(self.schemes))
        object.__setattr__(self, "sweep_grid", tuple(float(v) for v in self.sweep_grid))
        for s in self.schemes:
            if s not in SCHEMES:
                raise ConfigError(f"unknown scheme {s!r}; choose from {SCHEMES}")
        if self.sweep_var not in SWEEP_VARS:
            raise ConfigError(f"unknown sweep variable {self.sweep_var!r}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.sweep_grid:
            raise ConfigError("sweep grid must be non-empty")
        if any(b <= a for a, b in zip(self.sweep_grid, self.sweep_grid[1:])):
            raise ConfigError("sweep grid must be strictly increasing")

    def to_json(self) -> str:
        d = {"schemes": list(self.schemes), "sweep_var": self.sweep_var,
             "sweep_grid": list(self.sweep_grid), "trials": self.trials,
             "master_seed": self.master_seed,
             "cfg": json.loads(self.cfg.to_json())}
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentSpec":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"bad experiment JSON: {e}") from e
        cfg = ScenarioConfig.from_json(json.dumps(d.get("cfg", {})))
        known = {"schemes", "sweep_var", "sweep_grid", "trials", "master_seed", "cfg"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment fields: {sorted(unknown)}")
        kwargs = {k: d[k] for k in known - {"cfg"} if k in d}
        return cls(cfg=cfg, **kwargs)


@dataclass
class TrialResult:
    scheme: str
    sweep_var: str
    sweep_value: float
    trial: int
    sum_rate: float
    feasible: bool
    outer_iters: int
    wall_ms: float

    def row(self) -> list:
        return [self.scheme, self.sweep_var, f"{self.sweep_value:.9g}",
                self.trial, f"{self.sum_rate:.9g}", int(self.feasible),
                self.outer_iters, f"{self.wall_ms:.1f}"]


# ---------------------------------------------------------------------------
# baseline building blocks


def zf_digital(h_eff: np.ndarray, analog: np.ndarray) -> tuple[np.ndarray, bool]:
    """Zero-forcing digital precoder W = H^H (H H^H)^{-1} for the stacked
    leader rows ``h_eff`` (N x N_RF), columns scaled so the hybrid
    columns F W have unit norm.

    Returns (W, rank_warn); rank_warn marks a pseudo-inverse fallback on
    a rank-deficient H.
    """
    N = h_eff.shape[0]
    gram = h_eff @ h_eff.conj().T
    rank_warn = False
    try:
        W = h_eff.conj().T @ np.linalg.inv(gram)
        if not np.all(np.isfinite(W)) or np.linalg.cond(gram) > 1e10:
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        W = np.linalg.pinv(h_eff)
        rank_warn = True
    FW = analog @ W
    norms = np.linalg.norm(FW, axis=0)
    norms[norms < 1e-300] = 1.0
    return W / norms[None, :], rank_warn


def _ranked_gains(cfg: ScenarioConfig, gm: np.ndarray):
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
    return GainTable(own=gains, cross=cross), order


def _random_zf_solution(cfg: ScenarioConfig, channels: ChannelSet,
                        rng: np.random.Generator,
                        optimize_group_powers: bool) -> driver.Solution:
    """Shared implementation of rb-zf and socp-rb-zf-simplified."""
    frame = driver.normalized_view(channels, cfg)
    nch, s2h = frame.channels, frame.sigma2
    _, state = driver.initialize(cfg, nch, rng, driver.SchemeVariant(True, True))
    # replace the init precoder with explicit ZF on the group leaders
    M = nch.ap_ris @ state.analog
    E = np.conj(nch.stacked_users()) @ (state.theta[:, None] * M)
    leaders, p = [], 0
    for gsz in cfg.group_sizes:
        rows = E[p:p + gsz]
        leaders.append(p + int(np.argmax(np.linalg.norm(rows, axis=1))))
        p += gsz
    W, _ = zf_digital(E[leaders], state.analog)
    state.digital = W
    FW = state.analog @ W
    state.hybrid = FW / np.linalg.norm(FW, axis=0)[None, :]

    gm = gain_matrix(nch, state)
    table, order = _ranked_gains(cfg, gm)
    gammas = [g[order[n]] for n, g in enumerate(cfg.min_rates_by_group())]
    feasible = True
    powers = None
    try:
        if optimize_group_powers:
            powers, _ = allocate_from_gains(table.own, gammas, cfg.total_power, s2h)
        else:
            N = cfg.n_groups
            gp = np.full(N, cfg.total_power / N)
            ups = [intra_group_split(gp[n], table.own[n], gammas[n], s2h)
                   for n in range(N)]
            powers = PowerSolution(group_powers=gp, user_powers=ups)
            # leaders carry no rate guarantee under uniform budgets
            for n in range(N):
                g, pw = table.own[n], powers.user_powers[n]
                if np.log2(1.0 + g[0] * pw[0] / s2h) < gammas[n][0] - 1e-9:
                    feasible = False
    except InfeasibleError:
        feasible = False

    if not feasible or powers is None:
        return driver.Solution(powers=None, beamforming=state, sum_rate=0.0,
                               per_user_rates=[], outer_iterations=1,
                               feasible=False)
    R, rates = sum_rate(table, powers, s2h, "approx")
    R_full, _ = sum_rate(table, powers, s2h, "full")
    per_user = driver._scatter_rates(rates, order)
    return driver.Solution(powers=powers, beamforming=state, sum_rate=R,
                           per_user_rates=per_user, outer_iterations=1,
                           feasible=True, order=order, sum_rate_full=R_full,
                           worst_leakage=driver._worst_cross_gain(gm, cfg.group_sizes)
                           * frame.scale2)


def _fdma_oma_solution(cfg: ScenarioConfig, channels: ChannelSet,
                       rng: np.random.Generator) -> driver.Solution:
    """OMA reference: optimize the no-RIS hybrid beams, then give each
    user a 1/K time share through its group beam with the power budget
    concentrated K-fold into that share."""
    sol = driver.optimize(cfg, channels, rng,
                          driver.SchemeVariant(use_ris=False, hybrid=True))
    frame = driver.normalized_view(channels, cfg)
    gm = gain_matrix(frame.channels, sol.beamforming)
    K = cfg.n_users
    p_share = cfg.total_power / K
    rates, p = [], 0
    for n, gsz in enumerate(cfg.group_sizes):
        g = gm[p:p + gsz, n]
        rates.append(np.log2(1.0 + K * g * p_share / frame.sigma2) / K)
        p += gsz
    gammas = cfg.min_rates_by_group()
    feasible = all(np.all(r >= g - 1e-9) for r, g in zip(rates, gammas))
    R = float(sum(r.sum() for r in rates)) if feasible else 0.0
    gp = np.array([p_share * gsz for gsz in cfg.group_sizes])
    powers = PowerSolution(group_powers=gp,
                           user_powers=[np.full(g, p_share) for g in cfg.group_sizes])
    return driver.Solution(powers=powers if feasible else None,
                           beamforming=sol.beamforming,
                           sum_rate=R, per_user_rates=rates if feasible else [],
                           outer_iterations=sol.outer_iterations,
                           feasible=feasible)


def baseline_eval(scheme: str, cfg: ScenarioConfig, rng: np.random.Generator,
                  channels: ChannelSet | None = None) -> driver.Solution:
    """Draw the scheme's channel realization (unless given) and evaluate it."""
    if scheme in _VARIANTS:
        variant = _VARIANTS[scheme]
        if channels is None:
            channels = (gen_channels if variant.use_ris else gen_direct_channels)(cfg, rng)
        return driver.optimize(cfg, channels, rng, variant)
    if scheme == "no-ris-fdma-oma":
        if channels is None:
            channels = gen_direct_channels(cfg, rng)
        return _fdma_oma_solution(cfg, channels, rng)
    if scheme in ("rb-zf", "socp-rb-zf-simplified"):
        if channels is None:
            channels = gen_channels(cfg, rng)
        return _random_zf_solution(cfg, channels, rng,
                                   optimize_group_powers=(scheme == "socp-rb-zf-simplified"))
    raise ConfigError(f"unknown scheme {scheme!r}")


# ---------------------------------------------------------------------------
# sweeps and the Monte-Carlo loop


def apply_sweep(cfg: ScenarioConfig, var: str, value: float) -> ScenarioConfig:
    """Return a config with the sweep variable set to ``value``."""
    if var == "gamma":
        return dataclasses.replace(cfg, min_rates=float(value))
    if var == "total_power":
        return dataclasses.replace(cfg, total_power=float(value))
    if var == "d_IO":
        # AP, obstacle, and RIS stay collinear: d_AI = d_AO + d_IO
        return dataclasses.replace(cfg, d_ris_obstacle=float(value),
                                   d_ap_ris=cfg.d_ap_obstacle + float(value))
    if var == "n_ris_elements":
        return dataclasses.replace(cfg, n_ris_elements=int(value))
    raise ConfigError(f"unknown sweep variable {var!r}")


def _run_cell(args) -> TrialResult:
    scheme, sweep_var, value, trial, cfg, seed = args
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    sol = baseline_eval(scheme, cfg, rng)
    wall = (time.perf_counter() - t0) * 1e3
    return TrialResult(scheme=scheme, sweep_var=sweep_var, sweep_value=value,
                       trial=trial, sum_rate=sol.sum_rate if sol.feasible else 0.0,
                       feasible=sol.feasible, outer_iters=sol.outer_iterations,
                       wall_ms=wall)


def run_monte_carlo(spec: ExperimentSpec, n_jobs: int = 1,
                    progress=None) -> tuple[list[TrialResult], list[list]]:
    """Run every (scheme, sweep value, trial) cell.

    Returns per-trial results (sorted by scheme, value, trial) and
    aggregate rows [scheme, value, mean, std, feasible_frac].  The trial
    seed is master_seed + trial, identical across schemes and sweep
    values so cross-scheme comparisons pair by trial.
    """
    tasks = []
    for scheme in spec.schemes:
        for value in spec.sweep_grid:
            cfg_v = apply_sweep(spec.cfg, spec.sweep_var, value)
            for trial in range(spec.trials):
                tasks.append((scheme, spec.sweep_var, value, trial, cfg_v,
                              spec.master_seed + trial))
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_cell, tasks, chunksize=1))
    else:
        results = []
        for i, t in enumerate(tasks):
            results.append(_run_cell(t))
            if progress is not None:
                progress(i + 1, len(tasks))
    results.sort(key=lambda r: (spec.schemes.index(r.scheme), r.sweep_value, r.trial))

    agg = []
    for scheme in spec.schemes:
        for value in spec.sweep_grid:
            cell = [r for r in results if r.scheme == scheme and r.sweep_value == value]
            rates = np.array([r.sum_rate for r in cell])
            feas = np.array([r.feasible for r in cell], dtype=float)
            agg.append([scheme, f"{value:.9g}", f"{rates.mean():.9g}",
                        f"{rates.std():.9g}", f"{feas.mean():.9g}"])
    return results, agg


def write_trials_csv(path, results: list[TrialResult]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_HEADER)
        for r in results:
            w.writerow(r.row())


def write_aggregate_csv(path, agg_rows: list[list]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGG_HEADER)
        w.writerows(agg_rows)
