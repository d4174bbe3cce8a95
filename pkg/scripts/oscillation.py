"""
Oscillationsteori i Jacobi-koordinater + konstruktive løsninger.

    (H u)(n) = a u(n+1) + a u(n-1) - b(n) u(n) = lambda u(n),   a = -1, b = V, lambda = -E

Nodes:     u(j) = 0  eller  a u(j) u(j+1) > 0            (tælles for m < j < n, og j = m hvis u(m) != 0)
W-nodes:   W(j) = 0  eller  W(j) W(j+1) < 0              (samme konvention; højre endepunkt tælles aldrig)

Løsninger holdes som (mantissa, log_scale) pr. site, renormaliseret blokvis med
2-potenser, så backward recurrence over 10^5 sites ikke overflower.
"""

import math
import os
import sys
from dataclasses import dataclass, replace

import numpy as np
from scipy import signal
from scipy.special import logsumexp

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
import cocycle as CO
import lattice_ops as LO
import spectral_box as SB

CONFIG = {
    "rescale_bits": 128,
    "edge_delta0": 1e-2,
    "edge_steps": 20,
    "edge_tol": 1e-6,
    "min_tail_blocks": 3,
    "spectrum_growth_slack": 4,
    "dependence_tol": 1e-6,
    "fixed_point_tol": 1e-13,
    "fixed_point_max_iter": 200,
    "hyperbolic_eps": 0.5,
    "parabolic_threshold": 0.5,
}

CONSTRUCTIONS = ("BackwardRecurrence", "ParabolicFixedPoint", "HyperbolicFixedPoint")


class DegenerateTrace(ValueError):
    pass


class NotInGap(RuntimeError):
    pass


class NonConvergent(RuntimeError):
    pass


class Unstable(RuntimeError):
    pass


class NoContraction(RuntimeError):
    pass


# =============================================================================
# JACOBI FORM
# =============================================================================

@dataclass(frozen=True)
class JacobiForm:
    """a = -1, b(n) = V(n) + shift, lambda = -(E + shift)."""
    op: LO.OperatorSpec
    shift: float = 0.0
    a: float = -1.0

    def b(self, ns):
        return self.op.values_at(ns) + self.shift

    def lam(self, E):
        return -(float(E) + self.shift)

    def energy(self, lam):
        return -float(lam) - self.shift

    def shifted(self, c):
        return replace(self, shift=self.shift + float(c))

    def dense(self, N1, N2):
        """Dirichlet Jacobi matrix on [N1, N2]."""
        n = N2 - N1 + 1
        off = np.full(n - 1, self.a)
        return np.diag(-self.b(np.arange(N1, N2 + 1))) + np.diag(off, 1) + np.diag(off, -1)


def to_jacobi(op):
    return JacobiForm(op)


# =============================================================================
# SOLUTION TRACES
# =============================================================================

@dataclass(frozen=True, eq=False)
class SolutionTrace:
    window: tuple
    mantissa: np.ndarray
    log_scale: np.ndarray
    lam: float
    a: float = -1.0

    @property
    def sites(self):
        return np.arange(self.window[0], self.window[1] + 1)

    @property
    def values(self):
        with np.errstate(over="ignore"):
            return self.mantissa * np.exp(self.log_scale)

    def index(self, n):
        m, N = self.window
        if not m <= n <= N:
            raise LO.InvalidInterval(f"site {n} outside trace window [{m}, {N}]")
        return n - m

    def at(self, n):
        i = self.index(n)
        return float(self.mantissa[i] * math.exp(self.log_scale[i]))

    def log_abs(self):
        with np.errstate(divide="ignore"):
            return np.log(np.abs(self.mantissa)) + self.log_scale

    def signs(self, m, n):
        i, j = self.index(m), self.index(n)
        return np.sign(self.mantissa[i:j + 1])

    def normalized(self, n):
        """Rescaled so that u(n) = 1 (same window)."""
        i = self.index(n)
        if self.mantissa[i] == 0.0:
            raise DegenerateTrace(f"cannot normalize at a zero of the trace (site {n})")
        return replace(self, mantissa=self.mantissa / self.mantissa[i], log_scale=self.log_scale - self.log_scale[i])

    def reflected(self):
        """w(n) = u(-n)."""
        m, N = self.window
        return replace(self, window=(-N, -m), mantissa=self.mantissa[::-1].copy(),
                       log_scale=self.log_scale[::-1].copy())


def trace_from_values(values, start=0, lam=0.0, a=-1.0):
    values = np.asarray(values, dtype=np.float64)
    return SolutionTrace((int(start), int(start) + len(values) - 1), values.copy(), np.zeros(len(values)), float(lam), a)


def _sweep(bs, lam, u_prev, u_cur, scale):
    """u_next = -(lam + b) u_cur - u_prev along bs. Returns (mantissas, log scales) of new sites."""
    limit = math.ldexp(1.0, CONFIG["rescale_bits"])
    mant = np.empty(len(bs))
    logs = np.empty(len(bs))
    for i, b in enumerate(bs):
        u_prev, u_cur = u_cur, -(lam + b) * u_cur - u_prev
        m = max(abs(u_prev), abs(u_cur))
        if m > limit or 0.0 < m < 1.0 / limit:
            e = math.frexp(m)[1]
            u_prev, u_cur = math.ldexp(u_prev, -e), math.ldexp(u_cur, -e)
            scale += e * CO.LN2
        mant[i], logs[i] = u_cur, scale
    return mant, logs


def solution_trace(jacobi, lam, start, stop, seed_site, seed_values, seed_log_scale=0.0):
    """Solution of Hu = lam u on [start, stop] through u(seed_site), u(seed_site+1)."""
    if not start <= seed_site < stop:
        raise LO.InvalidInterval(f"seed site {seed_site} must satisfy {start} <= seed < {stop}")
    u0, u1 = map(float, seed_values)
    if u0 == 0.0 and u1 == 0.0:
        raise DegenerateTrace("seed pair is zero")
    lam = float(lam)
    n = stop - start + 1
    mant = np.empty(n)
    logs = np.empty(n)
    i0 = seed_site - start
    mant[i0], mant[i0 + 1] = u0, u1
    logs[i0] = logs[i0 + 1] = float(seed_log_scale)
    if seed_site + 1 < stop:
        fm, fl = _sweep(jacobi.b(np.arange(seed_site + 1, stop)), lam, u0, u1, float(seed_log_scale))
        mant[i0 + 2:], logs[i0 + 2:] = fm, fl
    if seed_site > start:
        bm, bl = _sweep(jacobi.b(np.arange(seed_site, start, -1)), lam, u1, u0, float(seed_log_scale))
        mant[:i0], logs[:i0] = bm[::-1], bl[::-1]
    return SolutionTrace((int(start), int(stop)), mant, logs, lam, jacobi.a)


def _check_consecutive_zeros(s, what):
    z = s == 0
    if np.any(z[:-1] & z[1:]):
        raise DegenerateTrace(f"{what} vanishes on two consecutive sites")


def _count(node, s):
    # node[j] for j = m..n-1; j = m only counts when the value at m is nonzero
    total = int(np.count_nonzero(node[1:]))
    if len(node) and node[0] and s[0] != 0:
        total += 1
    return total


def count_nodes(u, m, n, sign_flip=False):
    """Nodes of u on [m, n) per the between-m-and-n convention."""
    if n <= m:
        return 0
    s = u.signs(m, n)
    if sign_flip:
        s = s * np.where(np.arange(m, n + 1) % 2 == 0, 1.0, -1.0)
    _check_consecutive_zeros(s, "solution")
    node = (s[:-1] == 0) | (u.a * s[:-1] * s[1:] > 0)
    return _count(node, s)


def _wronskian_scaled(u1, u2, m, n):
    """(mantissa, log scale) of W(j) for j = m..n."""
    i1, i2 = u1.index(m), u2.index(m)
    u1.index(n + 1), u2.index(n + 1)
    k = n - m + 1
    m1, l1 = u1.mantissa[i1:i1 + k + 1], u1.log_scale[i1:i1 + k + 1]
    m2, l2 = u2.mantissa[i2:i2 + k + 1], u2.log_scale[i2:i2 + k + 1]
    L1 = l1[:-1] + l2[1:]
    L2 = l1[1:] + l2[:-1]
    ref = np.maximum(L1, L2)
    w = u1.a * (m1[:-1] * m2[1:] * np.exp(L1 - ref) - m1[1:] * m2[:-1] * np.exp(L2 - ref))
    return w, ref


def wronskian(u1, u2, n):
    """a(n) (u1(n) u2(n+1) - u1(n+1) u2(n))."""
    w, ref = _wronskian_scaled(u1, u2, n, n)
    return float(w[0] * math.exp(ref[0])) if w[0] != 0.0 else 0.0


def count_wronskian_nodes(u1, u2, m, n):
    w, _ = _wronskian_scaled(u1, u2, m, n)
    s = np.sign(w)
    if not np.any(s):
        raise DegenerateTrace(f"Wronskian vanishes identically on [{m}, {n}]")
    node = (s[:-1] == 0) | (s[:-1] * s[1:] < 0)
    return _count(node, s)


# =============================================================================
# WEYL SOLUTIONS
# =============================================================================

@dataclass(frozen=True, eq=False)
class WeylSolution:
    side: int
    trace: SolutionTrace
    construction: str
    E: float
    edge_limit: bool = False
    tail_log_ratio: float = math.nan
    report: object = None


def _contracting_ratio(t):
    """Small eigenvalue of [[t, -1], [1, 0]]; t/2 inside the band."""
    if abs(t) <= 2.0:
        return t / 2.0
    return (t - math.copysign(math.sqrt(t * t - 4.0), t)) / 2.0


def _backward_trace(op, E, side, horizon):
    jac = to_jacobi(op)
    lam = jac.lam(E)
    H = int(horizon)
    if side > 0:
        mu = _contracting_ratio(E - LO.eval_site(op, H))
        return solution_trace(jac, lam, -H - 1, H + 1, H, (1.0, mu))
    mu = _contracting_ratio(E - LO.eval_site(op, -H))
    return solution_trace(jac, lam, -H - 1, H + 1, -H - 1, (mu, 1.0))


def _tail_blocks(trace, side, H):
    """log l2 norms of u over dyadic blocks [2^j, 2^{j+1}) at distance <= H on the given side."""
    la = trace.log_abs()
    out = []
    j = 0
    while 2 ** (j + 1) - 1 <= H:
        d = np.arange(2 ** j, 2 ** (j + 1))
        idx = side * d - trace.window[0]
        out.append(0.5 * float(logsumexp(2.0 * la[idx])))
        j += 1
    return out


def _tail_ratio(trace, side, H):
    """(passes, last log ratio): the trailing block norms strictly decrease."""
    blocks = _tail_blocks(trace, side, H)
    k = CONFIG["min_tail_blocks"]
    if len(blocks) < k:
        raise ValueError(f"horizon {H} too small for a tail check")
    tail = blocks[-k:]
    ok = all(b < a for a, b in zip(tail, tail[1:]))
    return ok, blocks[-1] - blocks[-2]


def _near_angle(trace):
    a, b = trace.mantissa[trace.index(0)], trace.mantissa[trace.index(1)]
    sa, sb = trace.log_scale[trace.index(0)], trace.log_scale[trace.index(1)]
    ref = max(sa, sb)
    x, y = a * math.exp(sa - ref), b * math.exp(sb - ref)
    return math.atan2(y, x) % math.pi


def _aitken_table(xs):
    """Repeated Delta^2 columns; returns the list of columns."""
    cols = [list(xs)]
    while len(cols[-1]) >= 3:
        x = cols[-1]
        nxt = []
        for i in range(len(x) - 2):
            d1, d2 = x[i + 1] - x[i], x[i + 2] - x[i + 1]
            den = d2 - d1
            nxt.append(x[i + 2] if abs(den) <= 1e-15 * max(1.0, abs(x[i + 2])) else x[i + 2] - d2 * d2 / den)
        cols.append(nxt)
    return cols


def _edge_limit(op, E, side, H, direction, log):
    """Near-end angle of u_side at E + direction*delta_j, extrapolated to delta -> 0."""
    angles = []
    for j in range(CONFIG["edge_steps"] + 1):
        delta = CONFIG["edge_delta0"] * 2.0 ** (-j)
        tr = _backward_trace(op, E + direction * delta, side, H)
        ok, _ = _tail_ratio(tr, side, H)
        if not ok:
            break
        angles.append(_near_angle(tr))
    if len(angles) < 3:
        raise NonConvergent(f"edge ladder at E={E} resolved only {len(angles)} energies within horizon {H}")
    # unwrap mod pi before extrapolating
    angles = list(np.unwrap(np.array(angles) * 2.0) / 2.0)
    cols = [c for c in _aitken_table(angles) if len(c) >= 2]
    deep = cols[-1]
    limit, prev = deep[-1], deep[-2]
    log(f"[oscillation] edge E={E:+.6f} ladder={len(angles)} angle={limit:.10f} change={abs(limit - prev):.2e}")
    if abs(limit - prev) > CONFIG["edge_tol"]:
        raise NonConvergent(f"edge extrapolation at E={E} moved {abs(limit - prev):.2e} > {CONFIG['edge_tol']}")
    jac = to_jacobi(op)
    tr = solution_trace(jac, jac.lam(E), -H - 1, H + 1, 0, (math.cos(limit), math.sin(limit)))
    return tr


def _reflected(op):
    g = op.perturbation
    return replace(op, perturbation=replace(g, table=tuple((-n, v) for n, v in g.table)))


def weyl_solution(op, E, side=1, horizon=1000, construction="auto", log=lambda m: None):
    """u_side(E) on [-horizon-1, horizon+1].

    construction: auto (backward recurrence, gap-edge ladder on failure), backward, fixed_point.
    """
    E = float(E)
    side = 1 if side > 0 else -1
    H = int(horizon)
    if construction == "fixed_point":
        return _fixed_point_weyl(op, E, side, H)
    if construction not in ("auto", "backward"):
        raise ValueError(f"Unknown Weyl construction: {construction}")
    tr = _backward_trace(op, E, side, H)
    ok, ratio = _tail_ratio(tr, side, H)
    if ok:
        return WeylSolution(side, tr, "BackwardRecurrence", E, False, ratio)
    if construction == "backward":
        raise NotInGap(f"no decaying solution at E={E} on side {side:+d} within horizon {H}")
    d0 = CONFIG["edge_delta0"]
    for direction in (1.0, -1.0):
        probe = _backward_trace(op, E + direction * d0, side, H)
        if _tail_ratio(probe, side, H)[0]:
            tr = _edge_limit(op, E, side, H, direction, log)
            return WeylSolution(side, tr, "BackwardRecurrence", E, True, math.nan)
    raise NotInGap(f"E={E} is not in a gap: no decaying solution at E or E±{d0} (side {side:+d}, horizon {H})")


def _free_frame(E):
    """(A, P) with P^{-1} [[E,-1],[1,0]] P = A."""
    if abs(E) == 2.0:
        s = math.copysign(1.0, E)
        return np.array([[s, s], [0.0, s]]), np.array([[1.0, 1.0], [s, 0.0]])
    r = (E + math.copysign(math.sqrt(E * E - 4.0), E)) / 2.0
    return np.diag([r, 1.0 / r]), np.array([[r, 1.0 / r], [1.0, 1.0]])


def _frame_perturbation(op, P):
    Pinv = np.linalg.inv(P)
    col, row = Pinv[:, 0], P[0, :]

    def R(ns):
        g = op.perturbation.values(ns)
        return -g[:, None, None] * np.outer(col, row)[None, :, :]
    return R


def _fixed_point_weyl(op, E, side, H):
    if not op.potential.is_zero:
        raise ValueError("fixed_point construction needs a free far field (zero potential)")
    if abs(E) < 2.0:
        raise NotInGap(f"E={E} lies inside [-2, 2]")
    jac_lam = -E
    A, P = _free_frame(E)
    if abs(E) == 2.0:
        # bounded at +inf; side -1 by reflection
        work = op if side > 0 else _reflected(op)
        res = parabolic_solutions(A, _frame_perturbation(work, P), H + 1)
        X = res.phi @ P.T
        u = X[:, 0]
        n0 = int(res.ns[0])
        tr = solution_trace(to_jacobi(work), jac_lam, -H - 1, n0 + 1, n0, (u[0], u[1]))
        mant = np.concatenate([tr.mantissa, u[2:]])
        logs = np.concatenate([tr.log_scale, np.zeros(len(u) - 2)])
        trace = SolutionTrace((-H - 1, H + 1), mant, logs, jac_lam)
        kind = "ParabolicFixedPoint"
        if side < 0:
            trace = trace.reflected()
    else:
        # decaying at -inf; side +1 by reflection
        work = op if side < 0 else _reflected(op)
        res = hyperbolic_solutions(A, _frame_perturbation(work, P), H + 1, half_line="left")
        X = res.weighted @ P.T
        lam_abs = math.log(abs(res.lam))
        sgn = np.where((res.ns % 2 == 0) | (res.lam > 0), 1.0, -1.0)
        mant = X[:, 0] * sgn
        logs = res.ns * lam_abs
        n0 = int(res.ns[-1])
        if n0 < H + 1:
            ext = solution_trace(to_jacobi(work), jac_lam, n0 - 1, H + 1, n0 - 1,
                                 (mant[-2], mant[-1] * math.exp(logs[-1] - logs[-2])), logs[-2])
            mant = np.concatenate([mant[:-2], ext.mantissa])
            logs = np.concatenate([logs[:-2], ext.log_scale])
        trace = SolutionTrace((-H - 1, H + 1), mant, logs, jac_lam)
        kind = "HyperbolicFixedPoint"
        if side > 0:
            trace = trace.reflected()
    return WeylSolution(side, trace, kind, E, False, math.nan, res)


# =============================================================================
# GAP-EIGENVÆRDIER
# =============================================================================

@dataclass(frozen=True)
class GapCount:
    count: int
    stable: bool
    horizon: int
    half_horizon_count: int
    edge_limit: bool


def _wronskian_count(op, E1, E2, horizon, side, construction, log):
    # Jacobi: lambda1 = -E2 < lambda2 = -E1
    u1 = weyl_solution(op, E2, side, horizon, construction, log)
    u2 = weyl_solution(op, E1, side, horizon, construction, log)
    count = count_wronskian_nodes(u1.trace, u2.trace, -horizon, horizon)
    return count, u1.edge_limit or u2.edge_limit


def window_box_counts(op, E1, E2, horizon):
    """Dirichlet eigenvalues in (E1, E2) on [-H, H] and [-2H, 2H]."""
    counts = []
    for H in (int(horizon), 2 * int(horizon)):
        box = LO.build_box(op, -H, H)
        lo, hi = SB.sturm_counts(box, [E1, E2])
        counts.append(int(hi - lo))
    return tuple(counts)


def gap_eigenvalue_count(op, E1, E2, horizon=2000, side=1, construction="auto", strict=True,
                         log=lambda m: None):
    """Eigenvalues of the whole-line operator in (E1, E2) via Wronskian nodes of Weyl solutions."""
    if not E1 < E2:
        raise ValueError(f"gap_eigenvalue_count needs E1 < E2, got {E1}, {E2}")
    # box counts grow with the box size only when the window meets the essential spectrum
    small, big = window_box_counts(op, E1, E2, horizon)
    if big - small > CONFIG["spectrum_growth_slack"]:
        raise NotInGap(f"({E1}, {E2}) meets the spectrum: box counts {small} -> {big} "
                       f"when the box grows from {2 * horizon + 1} to {4 * horizon + 1} sites")
    count, edge = _wronskian_count(op, E1, E2, horizon, side, construction, log)
    half, _ = _wronskian_count(op, E1, E2, horizon // 2, side, construction, log)
    stable = count == half
    log(f"[oscillation] W-count ({E1:+.4f}, {E2:+.4f}) H={horizon}: {count} (H/2: {half})")
    if strict and not stable:
        raise Unstable(f"W-node count changed between horizons {horizon // 2} and {horizon}: {half} -> {count}")
    return GapCount(count, stable, int(horizon), half, edge)


def solutions_dependent(u, v, n=0, tol=None):
    """|W(u,v)(n)| relative to |(u(n),u(n+1))| |(v(n),v(n+1))|."""
    tol = CONFIG["dependence_tol"] if tol is None else tol
    w, ref = _wronskian_scaled(u, v, n, n)
    iu, iv = u.index(n), v.index(n)
    nu = math.hypot(u.mantissa[iu] * math.exp(u.log_scale[iu] - u.log_scale[iu + 1]), u.mantissa[iu + 1])
    nv = math.hypot(v.mantissa[iv] * math.exp(v.log_scale[iv] - v.log_scale[iv + 1]), v.mantissa[iv + 1])
    scale = math.log(nu) + math.log(nv) + u.log_scale[iu + 1] + v.log_scale[iv + 1]
    rel = abs(w[0]) * math.exp(ref[0] - scale) if w[0] != 0 else 0.0
    return rel < tol, rel


# =============================================================================
# FIXED-POINT KONSTRUKTIONER
# =============================================================================

def _norms(R):
    return np.linalg.norm(R, ord=2, axis=(1, 2)) if len(R) else np.zeros(0)


def _terms(Rm, Z):
    """t[i] = R(ns[i-1]) Z[i-1], t[0] = 0."""
    t = np.zeros_like(Z)
    t[1:] = np.einsum("nij,nj->ni", Rm[:-1], Z[:-1])
    return t


def _substitution_residual(A, Rm, Z, weight=1.0):
    """max_n ||w Z(n+1) - (A + R(n)) Z(n)|| / (|w| ||Z(n+1)|| + ||A + R(n)|| ||Z(n)||)."""
    if len(Z) < 2:
        return 0.0
    M = A[None, :, :] + Rm[:-1]
    lhs = weight * Z[1:] - np.einsum("nij,nj->ni", M, Z[:-1])
    scale = abs(weight) * np.linalg.norm(Z[1:], axis=1) + _norms(M) * np.linalg.norm(Z[:-1], axis=1)
    scale = np.where(scale == 0.0, 1.0, scale)
    return float(np.max(np.linalg.norm(lhs, axis=1) / scale))


def _iterate(step, Z0, what):
    Z = Z0
    for it in range(1, CONFIG["fixed_point_max_iter"] + 1):
        new = step(Z)
        delta = float(np.max(np.linalg.norm(new - Z, axis=1)))
        Z = new
        if delta <= CONFIG["fixed_point_tol"] * max(1.0, float(np.max(np.linalg.norm(Z, axis=1)))):
            return Z, it
    raise NonConvergent(f"{what} fixed point did not converge in {CONFIG['fixed_point_max_iter']} iterations")


@dataclass(frozen=True, eq=False)
class ParabolicResult:
    ns: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    n0: int
    threshold: float
    iterations: int
    phi_deviation: float
    phi_bound: float
    psi_deviation: float
    psi_bound: float
    residual: float
    min_phi_norm: float
    min_sum_norm: float


def _check_parabolic(A):
    s = A[0, 0]
    if abs(s) != 1.0 or A[1, 1] != s or A[1, 0] != 0.0 or A[0, 1] == 0.0:
        raise ValueError(f"parabolic_solutions needs [[s, c], [0, s]] with s = +-1, c != 0; got {A.tolist()}")
    return float(s), float(A[0, 1])


def parabolic_solutions(A, R, horizon, n0_policy="auto"):
    """Bounded phi ~ (s^n, 0) and linearly growing psi ~ (n c s^{n-1}, s^n) of Z(n+1) = (A + R(n)) Z(n).

    R: callable, R(ns) -> (len(ns), 2, 2).
    """
    A = np.asarray(A, dtype=np.float64)
    s, c = _check_parabolic(A)
    K1 = K2 = math.sqrt(1.0 + c * c)
    all_ns = np.arange(1, int(horizon) + 1)
    Rall = R(all_ns)
    weighted = _norms(Rall) * all_ns
    tail = np.cumsum(weighted[::-1])[::-1]
    if n0_policy == "auto":
        ok = np.flatnonzero((K1 + K2) * tail < CONFIG["parabolic_threshold"])
        if len(ok) == 0:
            raise NoContraction(f"(K1+K2) sum |R(s)| s never drops below {CONFIG['parabolic_threshold']} before {horizon}")
        n0 = int(all_ns[ok[0]])
    else:
        n0 = int(n0_policy)
        if (K1 + K2) * tail[n0 - 1] >= CONFIG["parabolic_threshold"]:
            raise NoContraction(f"n0={n0} does not satisfy the contraction threshold")
    ns = all_ns[n0 - 1:]
    Rm = Rall[n0 - 1:]
    sig = np.ones(len(ns)) if s > 0 else np.where(ns % 2 == 0, 1.0, -1.0)
    phi0 = np.stack([sig, np.zeros(len(ns))], axis=1)
    psi0 = np.stack([ns * c * s * sig, sig], axis=1)

    def phi_step(Z):
        t = _terms(Rm, Z)
        past = np.cumsum(sig * (t[:, 0] - s * c * ns * t[:, 1]))
        fut = np.cumsum((sig * t[:, 1])[::-1])[::-1]
        fut = np.concatenate([fut[1:], [0.0]])
        return phi0 + np.stack([sig * past - sig * s * c * ns * fut, -sig * fut], axis=1)

    def psi_step(Z):
        t = _terms(Rm, Z)
        a = np.cumsum(sig * t[:, 0])
        b = np.cumsum(sig * t[:, 1])
        sb = np.cumsum(sig * ns * t[:, 1])
        return psi0 + np.stack([sig * (a + c * s * (ns * b - sb)), sig * b], axis=1)

    phi, it1 = _iterate(phi_step, phi0, "parabolic phi")
    psi, it2 = _iterate(psi_step, psi0, "parabolic psi")
    sums = float(np.sum(_norms(Rm) * (ns + 1)))
    return ParabolicResult(
        ns=ns, phi=phi, psi=psi, n0=n0, threshold=float((K1 + K2) * tail[n0 - 1]),
        iterations=max(it1, it2),
        phi_deviation=float(np.max(np.linalg.norm(phi - phi0, axis=1))),
        phi_bound=2.0 * 1.0 * (K1 + K2) * sums,
        psi_deviation=float(np.max(np.linalg.norm(psi - psi0, axis=1) / ns)),
        psi_bound=2.0 * math.sqrt(1.0 + c * c) * (K1 + K2) * sums,
        residual=max(_substitution_residual(A, Rm, phi), _substitution_residual(A, Rm, psi)),
        min_phi_norm=float(np.min(np.linalg.norm(phi, axis=1))),
        min_sum_norm=float(np.min(np.linalg.norm(phi + psi, axis=1))),
    )


@dataclass(frozen=True, eq=False)
class HyperbolicResult:
    """Z(n) = lam^n * weighted(n)."""
    ns: np.ndarray
    weighted: np.ndarray
    lam: float
    n0: int
    half_line: str
    iterations: int
    deviation: float
    bound: float
    residual: float

    def values(self):
        return (self.lam ** self.ns.astype(np.float64))[:, None] * self.weighted


def hyperbolic_solutions(A, R, horizon, eps=None, half_line="right", n0_policy="auto"):
    """Solution of Z(n+1) = (A + R(n)) Z(n) with Z(n) ~ (lam^n, 0), A = [[lam, c], [0, 1/lam]], |lam| > 1.

    half_line="right": growing at +inf on [n0, horizon].
    half_line="left":  decaying at -inf on [-horizon, n0] (Volterra sums from -horizon).
    """
    A = np.asarray(A, dtype=np.float64)
    lam, c = float(A[0, 0]), float(A[0, 1])
    if abs(lam) <= 1.0 or A[1, 0] != 0.0 or abs(A[1, 1] * lam - 1.0) > 1e-12:
        raise ValueError(f"hyperbolic_solutions needs [[lam, c], [0, 1/lam]] with |lam| > 1; got {A.tolist()}")
    if half_line not in ("right", "left"):
        raise ValueError(f"Unknown half_line: {half_line}")
    eps = CONFIG["hyperbolic_eps"] if eps is None else eps
    k = c / (lam - 1.0 / lam)
    Q1 = np.array([[0.0, -k], [0.0, 1.0]])
    Q2 = np.array([[1.0, k], [0.0, 0.0]])
    K = max(np.linalg.norm(Q1, 2), np.linalg.norm(Q2, 2))
    H = int(horizon)
    if half_line == "right":
        all_ns = np.arange(1, H + 1)
        norms = _norms(R(all_ns))
        acc = np.cumsum(norms[::-1])[::-1]
        pick = lambda ok: ok[0]
    else:
        all_ns = np.arange(-H, H + 1)
        norms = _norms(R(all_ns))
        acc = np.cumsum(norms)
        pick = lambda ok: ok[-1]
    if n0_policy == "auto":
        ok = np.flatnonzero(2.0 * K * acc < eps)
        if len(ok) == 0:
            raise NoContraction(f"2K sum |R| never drops below eps={eps} within horizon {H}")
        i0 = int(pick(ok))
    else:
        i0 = int(np.searchsorted(all_ns, int(n0_policy)))
        if 2.0 * K * acc[i0] >= eps:
            raise NoContraction(f"n0={n0_policy} does not satisfy 2K sum |R| < {eps}")
    n0 = int(all_ns[i0])
    if half_line == "right":
        ns = all_ns[i0:]
    else:
        ns = all_ns[:i0 + 1]
    Rm = R(ns)
    e1 = np.zeros((len(ns), 2))
    e1[:, 0] = 1.0
    decay = [1.0, -lam ** -2]

    def step(W):
        t = _terms(Rm, W)
        past = signal.lfilter([1.0], decay, (t @ Q1.T) / lam, axis=0)
        if half_line == "right":
            rc = np.cumsum(t[::-1], axis=0)[::-1]
            fut = np.zeros_like(t)
            fut[:-1] = (rc[1:] @ Q2.T) / lam
            return e1 + past - fut
        return e1 + past + (np.cumsum(t, axis=0) @ Q2.T) / lam

    W, its = _iterate(step, e1, f"hyperbolic ({half_line})")
    return HyperbolicResult(
        ns=ns, weighted=W, lam=lam, n0=n0, half_line=half_line, iterations=its,
        deviation=float(np.max(np.linalg.norm(W - e1, axis=1))),
        bound=float(2.0 * K * np.sum(_norms(Rm))),
        residual=_substitution_residual(A, Rm, W, weight=lam),
    )
