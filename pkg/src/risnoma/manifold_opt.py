"""Alternating manifold optimization of (theta, F, D).

Three Riemannian gradient-descent blocks over the penalty residuals:

    f1(theta) = sum |v_{n,k,i} - h^H diag(theta) u_i|^2   (complex circle)
    f2(F)     = sum_i |u_i - G F w_i|^2 + |D - F W|^2      (scaled circle)
    f3(D)     = |D - F W|^2                                (oblique)

Euclidean gradients are derived from scratch in the d/dx + j*d/dy
convention so they match central finite differences on the real/imag
parametrization; projections use the conjugated complex-circle formula
grad = e - Re{e (.) conj(x)} (.) x (the unconjugated variant fails the
tangent-space test).  Retractions renormalize entrywise (circle kinds)
or column-wise (oblique), which keeps every iterate exactly feasible.

Step sizes come from a backtracking Armijo rule: start at 1, halve
until f(Ret(x, step, grad)) <= f(x) - 1e-4 * step * |grad|^2, give up
after 50 halvings (stall).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RetractionSingularityError
from .rate_model import BeamformingState

CIRCLE_VEC = "circle-vector"
CIRCLE_MAT = "circle-matrix"
OBLIQUE = "oblique-matrix"

ARMIJO_C = 1e-4
MAX_HALVINGS = 50
_ZERO_GRAD2 = 1e-28


@dataclass
class ManifoldPoint:
    """A feasible point on one of the three manifolds.

    ``modulus`` is the fixed entry modulus for the circle kinds (1 for
    theta, 1/sqrt(N_t) for F); unused for the oblique kind.
    """

    kind: str
    value: np.ndarray
    modulus: float = 1.0

    def validate(self, atol: float = 1e-12):
        if self.kind in (CIRCLE_VEC, CIRCLE_MAT):
            err = np.max(np.abs(np.abs(self.value) - self.modulus))
        elif self.kind == OBLIQUE:
            err = np.max(np.abs(np.linalg.norm(self.value, axis=0) - 1.0))
        else:
            raise ValueError(f"unknown manifold kind {self.kind!r}")
        if err > atol:
            raise ValueError(f"{self.kind} point off-manifold by {err:.3e}")


def rgrad(point: ManifoldPoint, egrad: np.ndarray) -> np.ndarray:
    """Project a Euclidean gradient onto the tangent space at ``point``."""
    x = point.value
    if egrad.shape != x.shape:
        raise ValueError("egrad shape mismatch")
    if point.kind in (CIRCLE_VEC, CIRCLE_MAT):
        # remove the per-entry radial component; modulus^2 accounts for |x_i| != 1
        return egrad - (np.real(egrad * np.conj(x)) / point.modulus ** 2) * x
    if point.kind == OBLIQUE:
        radial = np.real(np.sum(np.conj(x) * egrad, axis=0))   # per column
        return egrad - x * radial[None, :]
    raise ValueError(f"unknown manifold kind {point.kind!r}")


def retract(point: ManifoldPoint, step: float, direction: np.ndarray) -> ManifoldPoint:
    """Move to x - step*direction and renormalize back onto the manifold."""
    y = point.value - step * direction
    if point.kind in (CIRCLE_VEC, CIRCLE_MAT):
        mag = np.abs(y)
        if np.any(mag < 1e-300):
            raise RetractionSingularityError("zero entry modulus in retraction")
        return ManifoldPoint(point.kind, point.modulus * y / mag, point.modulus)
    if point.kind == OBLIQUE:
        norms = np.linalg.norm(y, axis=0)
        if np.any(norms < 1e-300):
            raise RetractionSingularityError("zero column norm in retraction")
        return ManifoldPoint(point.kind, y / norms[None, :], point.modulus)
    raise ValueError(f"unknown manifold kind {point.kind!r}")


def armijo_step(objective, point: ManifoldPoint, grad: np.ndarray,
                c: float = ARMIJO_C, max_halvings: int = MAX_HALVINGS,
                step0: float = 1.0):
    """Backtracking step along -grad; returns (step, new_point, f_new) or
    None when ``max_halvings`` halvings fail to produce sufficient
    decrease (stall).  ``step0`` is the first step tried (default 1)."""
    g2 = float(np.sum(np.abs(grad) ** 2))
    if g2 == 0.0:
        raise ValueError("armijo_step requires a nonzero gradient")
    f0 = objective(point)
    step = step0
    for _ in range(max_halvings + 1):
        try:
            cand = retract(point, step, grad)
        except RetractionSingularityError:
            step *= 0.5
            continue
        f1 = objective(cand)
        if f1 <= f0 - c * step * g2:
            return step, cand, f1
        step *= 0.5
    return None


# ---------------------------------------------------------------------------
# block objectives and Euclidean gradients (d/dx + j*d/dy convention)


def _f1_matrix(state: BeamformingState, channels) -> np.ndarray:
    """(K*N, N_r) matrix A with rows conj(h_u) (.) u_i, so that
    h_u^H Theta u_i = A[row] @ theta."""
    H = channels.stacked_users()                 # (K, N_r)
    U = state.aux_u                              # (N, N_r)
    K, Nr = H.shape
    N = U.shape[0]
    return (np.conj(H)[:, None, :] * U[None, :, :]).reshape(K * N, Nr)


def f1_value(state: BeamformingState, channels) -> float:
    A = _f1_matrix(state, channels)
    r = state.aux_v.reshape(-1) - A @ state.theta
    return float(np.sum(np.abs(r) ** 2))


def egrad_theta(state: BeamformingState, channels) -> np.ndarray:
    """Euclidean gradient of f1 wrt theta."""
    A = _f1_matrix(state, channels)
    r = state.aux_v.reshape(-1) - A @ state.theta
    return -2.0 * (A.conj().T @ r)


def f2_value(state: BeamformingState, channels) -> float:
    GFW = channels.ap_ris @ (state.analog @ state.digital)
    r1 = state.aux_u.T - GFW                     # columns u_i - G F w_i
    r2 = state.hybrid - state.analog @ state.digital
    return float(np.sum(np.abs(r1) ** 2) + np.sum(np.abs(r2) ** 2))


def egrad_analog(state: BeamformingState, channels) -> np.ndarray:
    """Euclidean gradient of f2 wrt F."""
    G = channels.ap_ris
    F, W, D = state.analog, state.digital, state.hybrid
    r1 = state.aux_u.T - G @ (F @ W)
    r2 = D - F @ W
    return -2.0 * (G.conj().T @ r1 @ W.conj().T) - 2.0 * (r2 @ W.conj().T)


def f3_value(state: BeamformingState) -> float:
    r = state.hybrid - state.analog @ state.digital
    return float(np.sum(np.abs(r) ** 2))


def egrad_hybrid(state: BeamformingState) -> np.ndarray:
    """Euclidean gradient of f3 wrt D."""
    return 2.0 * (state.hybrid - state.analog @ state.digital)


# ---------------------------------------------------------------------------
# the alternating loop


def _descend(point, value_fn, grad_fn, eps, cap, stop_on, trace, label):
    """One gradient-descent block.  ``stop_on`` selects the inner stopping
    rule: "move" (iterate distance) or "delta_f" (objective change).
    The accepted step seeds the next iteration's trial step (doubled)."""
    stalled = False
    f_prev = value_fn(point.value)
    gnorm = 0.0
    iters = 0
    step_hint = 1.0
    for it in range(cap):
        iters = it + 1
        g = rgrad(point, grad_fn(point.value))
        g2 = float(np.sum(np.abs(g) ** 2))
        gnorm = float(np.sqrt(g2))
        if g2 <= _ZERO_GRAD2:
            break
        res = armijo_step(lambda pt: value_fn(pt.value), point, g,
                          step0=step_hint)
        if res is None:
            stalled = True
            break
        step, new_point, f_new = res
        step_hint = min(1.0, 2.0 * step)
        moved = float(np.linalg.norm((new_point.value - point.value).ravel()))
        point = new_point
        if trace is not None:
            trace.append((label, it, f_new, gnorm))
        done = (moved <= eps) if stop_on == "move" else (abs(f_prev - f_new) <= eps)
        f_prev = f_new
        if done:
            break
    return point, iters, stalled, gnorm, f_prev


def amo_optimize(state: BeamformingState, channels, cfg, *,
                 optimize_theta: bool = True, optimize_analog: bool = True,
                 collect_trace: bool = False) -> tuple[BeamformingState, dict]:
    """Alternate theta / F / D descent until the total penalty residual
    stalls.  aux_u and aux_v stay fixed for the whole call (they belong
    to the digital-beamforming stage).

    Returns the updated state plus an info dict: sweeps, total inner
    iterations, stalled flag, last block gradient norms, final
    objective, and optional trace rows (block, iteration, objective,
    grad_norm).
    """
    st = state.copy()
    trace = [] if collect_trace else None
    total_prev = f1_value(st, channels) + f2_value(st, channels) + f3_value(st)
    inner_total = 0
    sweeps = 0
    grad_norms = {"theta": 0.0, "analog": 0.0, "hybrid": 0.0}
    stalled_all = False

    for sweep in range(cfg.amo_sweep_cap):
        sweeps = sweep + 1
        block_stalls = []

        if optimize_theta:
            A = _f1_matrix(st, channels)
            v = st.aux_v.reshape(-1)

            def f1_of(th):
                r = v - A @ th
                return float(np.sum(np.abs(r) ** 2))

            def g1_of(th):
                return -2.0 * (A.conj().T @ (v - A @ th))

            pt = ManifoldPoint(CIRCLE_VEC, st.theta, 1.0)
            pt, its, stall, gn, _ = _descend(
                pt, f1_of, g1_of, cfg.eps_theta, cfg.amo_block_cap,
                "move", trace, "theta")
            st.theta = pt.value
            inner_total += its
            block_stalls.append(stall)
            grad_norms["theta"] = gn

        if optimize_analog and st.analog_modulus is not None:
            G = channels.ap_ris
            W, D, Ut = st.digital, st.hybrid, st.aux_u.T
            Gh = G.conj().T
            Wh = W.conj().T

            def f2_of(F):
                r1 = Ut - G @ (F @ W)
                r2 = D - F @ W
                return float(np.sum(np.abs(r1) ** 2) + np.sum(np.abs(r2) ** 2))

            def g2_of(F):
                r1 = Ut - G @ (F @ W)
                r2 = D - F @ W
                return -2.0 * (Gh @ r1 @ Wh) - 2.0 * (r2 @ Wh)

            pt = ManifoldPoint(CIRCLE_MAT, st.analog, st.analog_modulus)
            pt, its, stall, gn, _ = _descend(
                pt, f2_of, g2_of, cfg.eps_analog, cfg.amo_block_cap,
                "delta_f", trace, "analog")
            st.analog = pt.value
            inner_total += its
            block_stalls.append(stall)
            grad_norms["analog"] = gn

        FW = st.analog @ st.digital

        def f3_of(D):
            return float(np.sum(np.abs(D - FW) ** 2))

        def g3_of(D):
            return 2.0 * (D - FW)

        pt = ManifoldPoint(OBLIQUE, st.hybrid, 1.0)
        pt, its, stall, gn, _ = _descend(
            pt, f3_of, g3_of, cfg.eps_hybrid, cfg.amo_block_cap,
            "delta_f", trace, "hybrid")
        st.hybrid = pt.value
        inner_total += its
        block_stalls.append(stall)
        grad_norms["hybrid"] = gn

        total = f1_value(st, channels) + f2_value(st, channels) + f3_value(st)
        progress = total_prev - total
        total_prev = total
        if progress <= cfg.eps_amo_outer:
            stalled_all = bool(block_stalls) and all(block_stalls) and progress <= 0
            break

    info = {"sweeps": sweeps, "inner_iterations": inner_total,
            "stalled": stalled_all, "grad_norms": grad_norms,
            "objective": total_prev, "trace": trace}
    return st, info
