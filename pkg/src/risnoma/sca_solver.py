"""Digital beamforming via a penalized DC program solved by SCA.

The nonconvex sum-rate objective in the splitting variables
(W, {u_i}, {v_{n,k,i}}, {z_{n,k,i}}) is the difference of two concave
log sums plus a weight-lambda penalty tying the splits together:

    sum log2(z_own * S_excl + s2) - sum log2(z_own * S_incl + s2)
    + lam * ( sum_i |u_i - G F w_i|^2 + |D - F W|^2
            + sum |v - h^H Theta u|^2 + sum (z - |v|^2) )

Each SCA iteration linearizes the concave minuend at the z anchor and
the concave -|v|^2 penalty at the v anchor (both tight majorants), then
solves the resulting smooth convex subproblem subject to

    z_own * p_k - (2^gamma - 1)(z_own * S_excl + s2) >= 0   (min rate)
    z_cross <= tau                                          (leakage)
    z >= |v|^2                                              (Schur pinch)

with a log-barrier interior-point method (Newton centering, barrier
parameter x20 per stage, warm-started across re-anchoring steps).  The
2x2 PSD blocks are replaced by the equivalent rotated-cone form
z >= |v|^2, so no semidefinite machinery is needed.  Everything
separates across beam columns i, so the solver runs one small dense
Newton system per beam; the quadratic penalty is kept as one stacked
complex least-squares operator per column.

All quantities live in the gain-normalized frame the driver prepares
(effective gains O(1)); the leakage cap carries a small internal margin
so the *actual* leakage |h^H Theta G F w|^2 stays under tau despite the
finite quadratic-penalty residuals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SubproblemInfeasibleError
from .rate_model import BeamformingState

LN2 = math.log(2.0)
TAU_MARGIN = 0.02        # SCA enforces z_cross <= tau*(1 - TAU_MARGIN)
Z_FLOOR = 1e-12          # keeps barrier terms finite when v ~ 0
_STRICT = 1e-10          # interior nudge for warm starts


# ---------------------------------------------------------------------------
# surrogates


def linearize(z_anchor: np.ndarray, s_excl: np.ndarray, sigma2: float):
    """Affine majorant of the concave minuend sum log2(z*S_excl + s2).

    Returns (coef, const) with coef_u = S_excl/(ln2*(z~*S_excl + s2));
    the surrogate const + coef.z touches the minuend at the anchor.
    Raises DomainError if an anchor makes a log argument non-positive.
    """
    z_anchor = np.asarray(z_anchor, dtype=float)
    s_excl = np.asarray(s_excl, dtype=float)
    args = z_anchor * s_excl + sigma2
    if np.any(args <= 0):
        raise DomainError("linearization anchor outside the log domain")
    coef = s_excl / (LN2 * args)
    const = float(np.sum(np.log2(args) - coef * z_anchor))
    return coef, const


def neg_abs2_majorant(v, v_anchor):
    """Tight affine majorant of -|v|^2:  |v~|^2 - 2 Re{v conj(v~)}."""
    return np.abs(v_anchor) ** 2 - 2.0 * np.real(v * np.conj(v_anchor))


# ---------------------------------------------------------------------------
# subproblem data


@dataclass
class ScaSubproblem:
    """Fixed data and anchors of the convex inner problem.

    User-indexed arrays are flat in decoding-order rank (group-major).
    ``tau`` is the margin-adjusted leakage cap actually enforced.
    """

    M: np.ndarray               # (N_r, N_RF) = G @ F, normalized frame
    C: np.ndarray               # (K, N_r): row u = h_u^H Theta
    F: np.ndarray               # (N_t, N_RF)
    D: np.ndarray               # (N_t, N)
    group_of: np.ndarray        # (K,) beam/group index per user
    p: np.ndarray               # (K,) user powers
    s_incl: np.ndarray          # (K,) in-group sum_{j<=k} p
    s_excl: np.ndarray          # (K,) in-group sum_{j<k} p
    gamma: np.ndarray           # (K,) minimum rates
    sigma2: float
    tau: float
    lam: float
    enforce_min_rates: bool
    v_anchor: np.ndarray        # (K, N)
    z_anchor: np.ndarray        # (K,) own-beam anchors

    @property
    def n_beams(self) -> int:
        return self.D.shape[1]


def build_subproblem(state: BeamformingState, channels, powers, gammas_by_group,
                     sigma2: float, tau: float, lam: float,
                     enforce_min_rates: bool = True) -> ScaSubproblem:
    """Assemble the subproblem from the current state and ranked channels.

    ``channels`` rows must already be permuted into decoding order so
    they align with ``powers``; anchors come from the state aux vars.
    """
    H = channels.stacked_users()
    C = np.conj(H) * state.theta[None, :]
    M = channels.ap_ris @ state.analog
    p = np.concatenate([np.asarray(q, dtype=float) for q in powers.user_powers])
    gam = np.concatenate([np.asarray(g, dtype=float) for g in gammas_by_group])
    group_of, s_incl, s_excl = [], [], []
    for n, q in enumerate(powers.user_powers):
        cs = np.cumsum(q)
        s_incl.append(cs)
        s_excl.append(cs - q)
        group_of.extend([n] * len(q))
    if state.aux_v is None or state.aux_z is None:
        raise ValueError("state aux vars not initialized; call initialize_feasible")
    group_of = np.asarray(group_of)
    z_own = state.aux_z[np.arange(len(p)), group_of]
    return ScaSubproblem(
        M=M, C=C, F=state.analog, D=state.hybrid,
        group_of=group_of, p=p,
        s_incl=np.concatenate(s_incl), s_excl=np.concatenate(s_excl),
        gamma=gam, sigma2=float(sigma2), tau=float(tau) * (1.0 - TAU_MARGIN),
        lam=float(lam), enforce_min_rates=enforce_min_rates,
        v_anchor=state.aux_v.copy(), z_anchor=z_own.astype(float))


# ---------------------------------------------------------------------------
# per-beam convex problem + log-barrier Newton solver


class _ColumnProblem:
    """Convex subproblem restricted to one beam column i.

    Real variable layout: [Re(w,u,v) | Im(w,u,v) | z] so the whole
    quadratic penalty is one stacked complex least-squares residual
    r = Rmat @ (w,u,v) + rb and its Hessian one real embedding.
    """

    def __init__(self, sub: ScaSubproblem, i: int):
        self.sub = sub
        self.i = i
        Nr, NRF = sub.M.shape
        Nt = sub.F.shape[0]
        K = sub.p.shape[0]
        self.Nr, self.NRF, self.K = Nr, NRF, K
        self.nc = NRF + Nr + K            # complex variables
        self.n = 2 * self.nc + K
        self.own = np.where(sub.group_of == i)[0]
        self.cross = np.where(sub.group_of != i)[0]
        self.d = sub.D[:, i]
        lam = sub.lam

        # index helpers
        ov = NRF + Nr                      # v offset inside the complex stack
        self.ivr = ov + np.arange(K)
        self.ivi = self.nc + ov + np.arange(K)
        self.iz = 2 * self.nc + np.arange(K)

        # min-rate constraints a*z - b >= 0 for this beam's own users
        mr_u, mr_a, mr_b = [], [], []
        if sub.enforce_min_rates:
            t = 2.0 ** sub.gamma[self.own] - 1.0
            a = sub.p[self.own] - t * sub.s_excl[self.own]
            b = t * sub.sigma2
            for j, u in enumerate(self.own):
                if b[j] <= 0 and a[j] >= 0:
                    continue                   # vacuous (gamma = 0)
                if a[j] <= 0:
                    raise SubproblemInfeasibleError(
                        f"user {u}: min rate unreachable at current powers")
                mr_u.append(int(u))
                mr_a.append(float(a[j]))
                mr_b.append(float(b[j]))
        self.mr_u = np.asarray(mr_u, dtype=int)
        self.mr_a = np.asarray(mr_a)
        self.mr_b = np.asarray(mr_b)

        # stacked least-squares operator: r = Rmat @ (w, u, v) + rb, with
        # r = [u - M w, d - F w, v - C u] and quadratic penalty lam*|r|^2
        Rmat = np.zeros((Nr + Nt + K, self.nc), dtype=complex)
        Rmat[:Nr, :NRF] = -sub.M
        Rmat[:Nr, NRF:NRF + Nr] = np.eye(Nr)
        Rmat[Nr:Nr + Nt, :NRF] = -sub.F
        Rmat[Nr + Nt:, NRF:NRF + Nr] = -sub.C
        Rmat[Nr + Nt:, NRF + Nr:] = np.eye(K)
        rb = np.zeros(Nr + Nt + K, dtype=complex)
        rb[Nr:Nr + Nt] = self.d
        self.Rmat = Rmat
        self.RmatH = Rmat.conj().T
        self.rb = rb
        S = self.RmatH @ Rmat
        Hq = np.zeros((self.n, self.n))
        Hq[:self.nc, :self.nc] = 2 * lam * S.real
        Hq[:self.nc, self.nc:2 * self.nc] = -2 * lam * S.imag
        Hq[self.nc:2 * self.nc, :self.nc] = 2 * lam * S.imag
        Hq[self.nc:2 * self.nc, self.nc:2 * self.nc] = 2 * lam * S.real
        self.Hq = Hq

        self.z_coef = np.zeros(K)      # surrogate minuend coefficients
        self.v_anchor = sub.v_anchor[:, i].copy()
        self.const = 0.0

    # -- anchors ----------------------------------------------------------

    def set_anchor(self, v_anchor_col: np.ndarray, z_coef: np.ndarray,
                   const: float = 0.0):
        """Install the surrogate anchors; z_coef applies to own users only."""
        self.v_anchor = v_anchor_col.copy()
        c = np.zeros(self.K)
        c[self.own] = z_coef[self.own]
        self.z_coef = c
        self.const = const

    # -- packing ----------------------------------------------------------

    def pack(self, w, u, v, z) -> np.ndarray:
        xc = np.concatenate([w, u, v])
        return np.concatenate([xc.real, xc.imag, z])

    def unpack(self, x):
        xc = x[:self.nc] + 1j * x[self.nc:2 * self.nc]
        NRF, Nr = self.NRF, self.Nr
        return xc[:NRF], xc[NRF:NRF + Nr], xc[NRF + Nr:], x[2 * self.nc:]

    def _xc(self, x):
        return x[:self.nc] + 1j * x[self.nc:2 * self.nc]

    def state_vector(self, state: BeamformingState) -> np.ndarray:
        i = self.i
        return self.pack(state.digital[:, i], state.aux_u[i],
                         state.aux_v[:, i], state.aux_z[:, i])

    # -- objective (surrogate) ----------------------------------------------

    def value(self, x) -> float:
        sub = self.sub
        r = self.Rmat @ self._xc(x) + self.rb
        z = x[self.iz]
        quad = sub.lam * float(np.real(np.vdot(r, r)))
        vr = x[self.ivr]
        vi = x[self.ivi]
        lin = sub.lam * z.sum() + float(self.z_coef @ z)
        lin -= 2 * sub.lam * float(vr @ self.v_anchor.real
                                   + vi @ self.v_anchor.imag)
        args = z[self.own] * sub.s_incl[self.own] + sub.sigma2
        if np.any(args <= 0):
            return np.inf
        logs = -float(np.sum(np.log2(args)))
        consts = self.const + sub.lam * float(np.sum(np.abs(self.v_anchor) ** 2))
        return quad + lin + logs + consts

    def grad(self, x, true_grad: bool = False) -> np.ndarray:
        """Gradient of the surrogate (default) or of the true penalized
        objective (``true_grad``, for KKT reporting)."""
        sub = self.sub
        lam = sub.lam
        z = x[self.iz]
        r = self.Rmat @ self._xc(x) + self.rb
        gc = 2 * lam * (self.RmatH @ r)
        if true_grad:
            v = x[self.ivr] + 1j * x[self.ivi]
            gc[self.NRF + self.Nr:] -= 2 * lam * v
        else:
            gc[self.NRF + self.Nr:] -= 2 * lam * self.v_anchor
        gz = np.full(self.K, lam)
        own = self.own
        s_in = sub.s_incl[own]
        gz[own] -= s_in / (LN2 * (z[own] * s_in + sub.sigma2))
        if true_grad:
            s_ex = sub.s_excl[own]
            gz[own] += s_ex / (LN2 * (z[own] * s_ex + sub.sigma2))
        else:
            gz += self.z_coef
        return np.concatenate([gc.real, gc.imag, gz])

    def hess_log_diag(self, x) -> np.ndarray:
        """Diagonal z-entries contributed by the convex log terms."""
        sub = self.sub
        z = x[self.iz]
        d = np.zeros(self.K)
        s_in = sub.s_incl[self.own]
        d[self.own] = (s_in / (z[self.own] * s_in + sub.sigma2)) ** 2 / LN2
        return d

    # -- constraints ----------------------------------------------------------

    def slacks(self, x) -> np.ndarray:
        """Barrier slacks, ordered [min-rate..., leakage..., soc...]."""
        z = x[self.iz]
        v2 = x[self.ivr] ** 2 + x[self.ivi] ** 2
        return np.concatenate([
            self.mr_a * z[self.mr_u] - self.mr_b,
            self.sub.tau - z[self.cross],
            z - v2,
        ])

    def n_constraints(self) -> int:
        return len(self.mr_u) + len(self.cross) + self.K

    def _barrier_terms(self, x, g, H) -> float:
        """Add the -sum log(s) gradient/Hessian terms in place; returns
        the minimum slack (caller handles <= 0)."""
        z = x[self.iz]
        vr = x[self.ivr]
        vi = x[self.ivi]
        smin = np.inf
        if len(self.mr_u):
            s = self.mr_a * z[self.mr_u] - self.mr_b
            smin = min(smin, float(s.min()))
            if smin <= 0:
                return smin
            idx = self.iz[self.mr_u]
            g[idx] -= self.mr_a / s
            H[idx, idx] += (self.mr_a / s) ** 2
        if len(self.cross):
            s = self.sub.tau - z[self.cross]
            smin = min(smin, float(s.min()))
            if smin <= 0:
                return smin
            idx = self.iz[self.cross]
            g[idx] += 1.0 / s
            H[idx, idx] += 1.0 / s ** 2
        s = z - vr ** 2 - vi ** 2
        smin = min(smin, float(s.min()))
        if smin <= 0:
            return smin
        ir, ii, iz = self.ivr, self.ivi, self.iz
        g[ir] += 2 * vr / s
        g[ii] += 2 * vi / s
        g[iz] -= 1.0 / s
        s2 = s ** 2
        H[ir, ir] += 4 * vr ** 2 / s2 + 2.0 / s
        H[ii, ii] += 4 * vi ** 2 / s2 + 2.0 / s
        H[iz, iz] += 1.0 / s2
        H[ir, ii] += 4 * vr * vi / s2
        H[ii, ir] += 4 * vr * vi / s2
        H[ir, iz] -= 2 * vr / s2
        H[iz, ir] -= 2 * vr / s2
        H[ii, iz] -= 2 * vi / s2
        H[iz, ii] -= 2 * vi / s2
        return smin

    # -- solver ------------------------------------------------------------

    def _phi(self, x, t) -> float:
        s = self.slacks(x)
        if s.size and s.min() <= 0:
            return np.inf
        return t * self.value(x) - float(np.sum(np.log(s)))

    def _center(self, x, t, newton_cap=50, newton_tol=1e-11):
        repairs = 0
        for _ in range(newton_cap):
            g = t * self.grad(x)
            H = t * self.Hq.copy()
            H[self.iz, self.iz] += t * self.hess_log_diag(x)
            smin = self._barrier_terms(x, g, H)
            if smin <= 0:
                # float cancellation can push a slack to ~ -1e-18 right
                # at the boundary; nudge back inside instead of giving up
                repairs += 1
                if repairs > 3:
                    raise SubproblemInfeasibleError("barrier iterate left the domain")
                x = _push_interior(self, x)
                continue
            # Jacobi preconditioning: the barrier makes a few diagonal
            # entries ~1/s^2 huge, which otherwise destroys the solve
            d = 1.0 / np.sqrt(np.maximum(np.diag(H), 1e-30))
            Hs = H * d[:, None] * d[None, :]
            try:
                dx = d * np.linalg.solve(Hs, -g * d)
            except np.linalg.LinAlgError:
                dx = d * np.linalg.solve(Hs + 1e-12 * np.eye(self.n), -g * d)
            dec = float(-g @ dx)
            if dec <= 2 * newton_tol:
                break
            s_old = self.slacks(x)
            phi0 = t * self.value(x) - float(np.sum(np.log(s_old)))
            alpha = 1.0
            accepted = False
            for _ls in range(60):
                xn = x + alpha * dx
                s_new = self.slacks(xn)
                ok = s_new.size == 0 or s_new.min() > 0
                # fraction-to-boundary on large steps only: keeps one
                # overshooting step from collapsing a slack to float-
                # cancellation scale, without stalling short steps
                if ok and alpha > 1e-2 and s_new.size:
                    ok = bool(np.all(s_new >= 5e-3 * s_old))
                if ok:
                    phin = t * self.value(xn) - float(np.sum(np.log(s_new)))
                    if phin <= phi0 - 1e-4 * alpha * dec:
                        x = xn
                        accepted = True
                        break
                alpha *= 0.5
            if not accepted:
                break
        return x

    def solve(self, x0: np.ndarray, tol: float = 1e-9, mu: float = 20.0,
              t0: float = 1.0):
        """Log-barrier loop; returns (x, multipliers, info).  ``tol``
        bounds the final duality gap m/t; ``t0`` warm-starts the barrier
        parameter (re-solves near a previous solution)."""
        s0 = self.slacks(x0)
        if s0.size and s0.min() <= 0:
            raise SubproblemInfeasibleError(
                f"starting point infeasible (min slack {s0.min():.3e})")
        m = max(self.n_constraints(), 1)
        t = max(1.0, t0)
        x = x0
        stages = 0
        while True:
            x = self._center(x, t)
            stages += 1
            if m / t <= tol:
                break
            t *= mu
        mults = 1.0 / (t * self.slacks(x))
        return x, mults, {"stages": stages, "t_final": t, "gap": m / t}


# ---------------------------------------------------------------------------
# module-level operations


def initialize_feasible(state: BeamformingState, channels, powers,
                        gammas_by_group, sigma2: float, tau: float,
                        enforce_min_rates: bool = True) -> tuple[BeamformingState, dict]:
    """Build a strictly feasible starting point for the SCA.

    Sets u_i = G F w_i, v = h^H Theta u, z = max(|v|^2, floors); beams
    whose cross-group |v|^2 would exceed the leakage cap are scaled
    down.  Returns the updated state plus flags (scaled beams, relaxed
    min-rate start).
    """
    st = state.copy()
    H = channels.stacked_users()
    C = np.conj(H) * st.theta[None, :]
    M = channels.ap_ris @ st.analog
    N = st.digital.shape[1]
    group_of = np.concatenate([[n] * len(q) for n, q in enumerate(powers.user_powers)])
    tau_eff = tau * (1.0 - TAU_MARGIN)
    flags = {"scaled_beams": [], "relaxed": False}

    W = st.digital.copy()
    for i in range(N):
        for _ in range(8):
            v_col = C @ (M @ W[:, i])
            cross = np.abs(v_col[group_of != i]) ** 2
            worst = cross.max() if cross.size else 0.0
            if worst <= 0.8 * tau_eff:
                break
            W[:, i] *= math.sqrt(0.5 * tau_eff / worst)
            if i not in flags["scaled_beams"]:
                flags["scaled_beams"].append(i)
    st.digital = W

    U = (M @ W).T                                  # (N, N_r) rows u_i
    V = C @ U.T                                    # (K, N)
    # generous interior margins: a Newton centering from slack ~1e-9
    # must double the slack dozens of times before it reaches the
    # central path, so start it at a healthy distance instead
    pad = 0.02 * sigma2
    Z = np.abs(V) ** 2 * 1.05 + pad

    # min-rate floors on own-beam z
    pos = 0
    for n, q in enumerate(powers.user_powers):
        gam = np.asarray(gammas_by_group[n], dtype=float)
        cs = np.cumsum(q) - q                      # S_excl
        for k, pk in enumerate(q):
            u = pos + k
            tgt = 2.0 ** gam[k] - 1.0
            if enforce_min_rates and tgt > 0:
                a = pk - tgt * cs[k]
                if a <= 0:
                    flags["relaxed"] = True
                else:
                    Z[u, n] = max(Z[u, n], tgt * sigma2 / a * 1.05 + pad)
        pos += len(q)

    # leakage ceilings on cross-beam z
    for i in range(N):
        rows = group_of != i
        Z[rows, i] = np.minimum(Z[rows, i], tau_eff * (1 - 1e-3))
        if np.any(Z[rows, i] <= np.abs(V[rows, i]) ** 2):
            flags["relaxed"] = True

    st.aux_u, st.aux_v, st.aux_z = U, V, Z
    return st, flags


def _push_interior(col: _ColumnProblem, x: np.ndarray,
                   rel: float = 1e-9, floor: float = 1e-12) -> np.ndarray:
    """Lift z so every barrier slack is at least a healthy margin.

    With the defaults this is a minimal repair for slacks at float-
    cancellation scale; ``rel`` ~ 1e-3 turns it into the generous
    pre-solve lift that lets a fresh barrier ramp start far from the
    boundary.  Lifting z can only increase the surrogate objective of
    the *starting point*, never the constrained minimum, so the MM
    descent chain is unaffected.  z may ride both its leakage cap and
    the |v|^2 floor, so repairs respect whichever bound is active.
    """
    x = x.copy()
    z = x[col.iz].copy()
    v2 = x[col.ivr] ** 2 + x[col.ivi] ** 2
    sub = col.sub

    def lift(scale):
        return np.maximum(rel * scale, floor)

    z = np.maximum(z, v2 + lift(np.maximum(v2, sub.sigma2)))
    if len(col.mr_u):
        fl = col.mr_b / col.mr_a
        z[col.mr_u] = np.maximum(z[col.mr_u], fl + lift(fl))
    if len(col.cross):
        zb = z[col.cross]
        vb = v2[col.cross]
        room = sub.tau - vb
        if np.any(room <= 0):
            raise SubproblemInfeasibleError(
                f"beam {col.i}: leakage cap below |v|^2; scale the beam first")
        cap = sub.tau - np.minimum(lift(sub.tau), room / 2)
        zb = np.minimum(zb, cap)
        under = zb <= vb
        zb[under] = vb[under] + np.minimum(lift(vb[under]), room[under] / 2)
        z[col.cross] = zb
    x[col.iz] = z
    if col.slacks(x).min() <= 0:
        raise SubproblemInfeasibleError("could not repair the interior point")
    return x


def _anchor_columns(sub: ScaSubproblem, columns: list[_ColumnProblem]):
    """Refresh every column's surrogate from the subproblem anchors."""
    coef, _ = linearize(sub.z_anchor, sub.s_excl, sub.sigma2)
    args = sub.z_anchor * sub.s_excl + sub.sigma2
    per_user_const = np.log2(args) - coef * sub.z_anchor
    for col in columns:
        col.set_anchor(sub.v_anchor[:, col.i], coef,
                       float(per_user_const[col.own].sum()))


def solve_subproblem(sub: ScaSubproblem, state: BeamformingState,
                     tol: float = 1e-9, columns: list[_ColumnProblem] | None = None):
    """Solve the convex subproblem at the current anchors.

    Returns ((W, U, V, Z), columns, multipliers, infos); ``columns`` can
    be passed back in to reuse the precomputed operators and barrier
    warm starts.
    """
    if columns is None:
        columns = [_ColumnProblem(sub, i) for i in range(sub.n_beams)]
    _anchor_columns(sub, columns)
    W = state.digital.copy()
    U = state.aux_u.copy()
    V = state.aux_v.copy()
    Z = state.aux_z.copy()
    mults, infos = [], []
    for col in columns:
        # lift the start away from the boundary and ramp t from scratch:
        # re-centering a boundary point at high t is numerically hopeless
        # once the anchors have moved
        x0 = _push_interior(col, col.state_vector(state), rel=1e-3,
                            floor=1e-3 * col.sub.sigma2)
        x, mu_i, info = col.solve(x0, tol=tol)
        w, u, v, z = col.unpack(x)
        W[:, col.i], U[col.i], V[:, col.i], Z[:, col.i] = w, u, v, z
        mults.append(mu_i)
        infos.append(info)
    return (W, U, V, Z), columns, mults, infos


def penalized_objective(state: BeamformingState, channels, powers,
                        sigma2: float, lam: float) -> float:
    """True (non-linearized) penalized DC objective at the current state.

    ``channels`` rows must be in the same (decoding) order as the power
    solution and the state aux rows.
    """
    if state.aux_u is None:
        raise ValueError("aux vars not set")
    H = channels.stacked_users()
    C = np.conj(H) * state.theta[None, :]
    U, V, Z = state.aux_u, state.aux_v, state.aux_z
    val = 0.0
    pos = 0
    for n, q in enumerate(powers.user_powers):
        cs = np.cumsum(q)
        for k in range(len(q)):
            u = pos + k
            a_excl = Z[u, n] * (cs[k] - q[k]) + sigma2
            a_incl = Z[u, n] * cs[k] + sigma2
            if a_excl <= 0 or a_incl <= 0:
                raise DomainError("log argument <= 0 in penalized objective")
            val += math.log2(a_excl) - math.log2(a_incl)
        pos += len(q)
    GFW = channels.ap_ris @ (state.analog @ state.digital)
    pen = float(np.sum(np.abs(U.T - GFW) ** 2))
    pen += float(np.sum(np.abs(state.hybrid - state.analog @ state.digital) ** 2))
    pen += float(np.sum(np.abs(V - C @ U.T) ** 2))
    pen += float(np.sum(Z - np.abs(V) ** 2))
    return val + lam * pen


def _constraint_jacobian(col: _ColumnProblem, x: np.ndarray) -> np.ndarray:
    """(n x m) matrix whose columns are the slack gradients at x."""
    m = col.n_constraints()
    A = np.zeros((col.n, m))
    j = 0
    for u, a in zip(col.mr_u, col.mr_a):
        A[col.iz[u], j] = a
        j += 1
    for u in col.cross:
        A[col.iz[u], j] = -1.0
        j += 1
    vr = x[col.ivr]
    vi = x[col.ivi]
    for u in range(col.K):
        A[col.ivr[u], j] = -2 * vr[u]
        A[col.ivi[u], j] = -2 * vi[u]
        A[col.iz[u], j] = 1.0
        j += 1
    return A


def kkt_residual(col: _ColumnProblem, x: np.ndarray,
                 mults: np.ndarray | None = None) -> float:
    """Max-norm KKT residual of the *true* penalized problem at x.

    Stationarity uses the true objective gradient (the surrogate is
    tangent at the anchor, so they agree there), plus complementary
    slackness and primal feasibility violations.  When ``mults`` is not
    given, multipliers are estimated by non-negative least squares,
    which is robust to the barrier slacks sitting at float-cancellation
    scale on strongly active constraints.
    """
    from scipy.optimize import nnls

    g = col.grad(x, true_grad=True)
    s = col.slacks(x)
    A = _constraint_jacobian(col, x)
    if mults is None:
        if s.size:
            mults, _ = nnls(A, g)
        else:
            mults = np.zeros(0)
    stat = float(np.max(np.abs(g - A @ mults))) if s.size else float(np.max(np.abs(g)))
    comp = float(np.max(np.abs(mults * s))) if s.size else 0.0
    viol = float(max(0.0, -s.min())) if s.size else 0.0
    return max(stat, comp, viol)


def sca_optimize(state: BeamformingState, channels, powers, gammas_by_group, *,
                 sigma2: float, tau: float, lam: float, eps: float = 1e-5,
                 iter_cap: int = 30, barrier_tol: float = 1e-9,
                 enforce_min_rates: bool = True,
                 collect_trace: bool = False) -> tuple[BeamformingState, dict]:
    """Iterate linearize -> solve -> re-anchor until the iterate stops
    moving.

    ``channels`` must be the ranked, gain-normalized view.  Returns the
    updated state and an info dict with the objective history, terminal
    KKT residual, and max |z - |v|^2| pinch.  The penalized objective is
    non-increasing across iterations up to the barrier duality gap.
    """
    st, flags = initialize_feasible(state, channels, powers, gammas_by_group,
                                    sigma2, tau,
                                    enforce_min_rates=enforce_min_rates)
    enforce = enforce_min_rates and not flags["relaxed"]
    sub = build_subproblem(st, channels, powers, gammas_by_group, sigma2,
                           tau, lam, enforce_min_rates=enforce)

    history = [penalized_objective(st, channels, powers, sigma2, lam)]
    trace = [] if collect_trace else None
    columns = None
    mults = None
    for it in range(iter_cap):
        W_prev = st.digital.copy()
        prev = (st.aux_u.copy(), st.aux_v.copy(), st.aux_z.copy())
        # early iterations move far; solve them to looser duality gaps
        tol_it = max(barrier_tol, 1e-6 * 0.1 ** it)
        (W, U, V, Z), columns, mults, _ = solve_subproblem(
            sub, st, tol=tol_it, columns=columns)
        st.digital = W
        st.aux_u, st.aux_v, st.aux_z = U, V, Z
        obj = penalized_objective(st, channels, powers, sigma2, lam)
        sub.v_anchor = V.copy()
        sub.z_anchor = Z[np.arange(len(sub.p)), sub.group_of].copy()
        # W is norm-anchored through D, so convergence is measured on the
        # full iterate (W, u, v, z), not W alone
        dW = float(np.sum(np.abs(st.digital - W_prev) ** 2))
        move = dW + sum(float(np.sum(np.abs(a - b) ** 2))
                        for a, b in zip((U, V, Z), prev))
        history.append(obj)
        if trace is not None:
            trace.append((it, obj, move))
        if move <= eps:
            break

    kkt = 0.0
    pinch = 0.0
    if columns is not None:
        _anchor_columns(sub, columns)
        for col in columns:
            kkt = max(kkt, kkt_residual(col, col.state_vector(st)))
        pinch = float(np.max(np.abs(st.aux_z - np.abs(st.aux_v) ** 2)))

    info = {"iterations": len(history) - 1, "objective_history": history,
            "kkt_residual": kkt, "pinch": pinch, "flags": flags,
            "enforced_min_rates": enforce, "trace": trace}
    return st, info
