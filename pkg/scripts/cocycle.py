"""
Transfer-matrix cocycle: scaled products, telescoping identities, Lyapunov exponents.

    A(n) = [[E - V(n), -1], [1, 0]]          (u(n+1), u(n)) = A(n) (u(n), u(n-1))
    M_k(n) = A(n+k-1) ... A(n)                k > 0
    M_{-k}(n) = M_k(n-k)^{-1}

Alle produkter holdes som (mantissa, log_scale) med mantissa max-entry i [1/2, 2];
rescaling sker med eksakte 2-potenser (frexp/ldexp) så intet bit går tabt.

Grid-løkker (theta, sample) kører via grid_map(): ThreadPoolExecutor når
CONFIG["threads"] > 1, resultater i submit-rækkefølge, reduktion med np.sum
(pairwise), så tallene er ens uanset antal threads.
"""

import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
import lattice_ops as LO

CONFIG = {
    "theta_grid": 64,
    "threads": 1,
    "ladder_points": 24,
    "chunk_sites": 4096,
    "ubc_energies": 8,
    "lyapunov_k": 1000,
}

LN2 = math.log(2.0)


class PerturbationNotAllowed(ValueError):
    pass


class BranchMismatch(ValueError):
    pass


def grid_map(fn, chunks):
    """Ordered map over chunks, threaded when CONFIG['threads'] > 1."""
    chunks = list(chunks)
    threads = int(CONFIG["threads"] or 1)
    if threads <= 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))


def _split_rows(n_rows):
    parts = max(1, int(CONFIG["threads"] or 1))
    return [r for r in np.array_split(np.arange(n_rows), parts) if len(r)]


def transfer_step(E, V):
    return np.array([[E - V, -1.0], [1.0, 0.0]])


def op_norm(m):
    """Spectral norm of a 2x2 matrix (closed form)."""
    a, b, c, d = m[0, 0], m[0, 1], m[1, 0], m[1, 1]
    f = a * a + b * b + c * c + d * d
    det = a * d - b * c
    disc = max(f * f - 4.0 * det * det, 0.0)
    return math.sqrt(max((f + math.sqrt(disc)) / 2.0, 0.0))


def _rescale(a, b, c, d, log_scale):
    m = max(abs(a), abs(b), abs(c), abs(d))
    if m == 0.0 or 0.5 <= m <= 2.0:
        return a, b, c, d, log_scale
    e = math.frexp(m)[1]
    return (math.ldexp(a, -e), math.ldexp(b, -e), math.ldexp(c, -e), math.ldexp(d, -e),
            log_scale + e * LN2)


@dataclass(frozen=True, eq=False)
class ScaledMatrixProduct:
    """e^{log_scale} * mantissa."""
    mantissa: np.ndarray
    log_scale: float = 0.0

    @classmethod
    def identity(cls):
        return cls(np.eye(2), 0.0)

    @classmethod
    def from_entries(cls, a, b, c, d, log_scale=0.0):
        a, b, c, d, log_scale = _rescale(a, b, c, d, log_scale)
        return cls(np.array([[a, b], [c, d]]), log_scale)

    def matrix(self):
        return self.mantissa * math.exp(self.log_scale)

    def log_norm(self):
        n = op_norm(self.mantissa)
        return self.log_scale + math.log(n) if n > 0 else -math.inf

    def log_det(self):
        det = float(np.linalg.det(self.mantissa))
        return 2.0 * self.log_scale + math.log(abs(det)) if det != 0 else -math.inf

    def det_defect(self):
        """|det - 1| without forming the unscaled matrix."""
        m = self.mantissa
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        if det <= 0:
            return math.inf
        return abs(math.expm1(math.log(det) + 2.0 * self.log_scale))

    def inverse(self):
        # unimodular: M^{-1} = adj(M), same scale
        m = self.mantissa
        return ScaledMatrixProduct(np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]), self.log_scale)

    def __matmul__(self, other):
        p = self.mantissa @ other.mantissa
        return ScaledMatrixProduct.from_entries(p[0, 0], p[0, 1], p[1, 0], p[1, 1],
                                                self.log_scale + other.log_scale)

    def scaled_to(self, ref):
        """Unscaled matrix relative to e^{ref} (entries underflow to 0 far below ref)."""
        return self.mantissa * math.exp(self.log_scale - ref)


# =============================================================================
# KÆDER AF PRODUKTER (skalar-løkker)
# =============================================================================

def _left_chain(diag, E, keep_all=False, record=None):
    """P_0 = I, P_{j+1} = A_j P_j over diag. Returns final (or all) scaled products."""
    a, b, c, d, s = 1.0, 0.0, 0.0, 1.0, 0.0
    if keep_all:
        mant = np.empty((len(diag) + 1, 2, 2))
        logs = np.empty(len(diag) + 1)
        mant[0] = np.eye(2)
        logs[0] = 0.0
    rec = {}
    for j, V in enumerate(diag):
        t = E - V
        a, b, c, d = t * a - c, t * b - d, a, b
        a, b, c, d, s = _rescale(a, b, c, d, s)
        if keep_all:
            mant[j + 1] = ((a, b), (c, d))
            logs[j + 1] = s
        if record is not None and (j + 1) in record:
            rec[j + 1] = s + math.log(op_norm(np.array([[a, b], [c, d]])))
    if keep_all:
        return mant, logs
    if record is not None:
        return rec
    return ScaledMatrixProduct(np.array([[a, b], [c, d]]), s)


def _right_chain(diag, E, record=None):
    """Q_0 = I, Q_{j+1} = Q_j A_j; all partial products."""
    a, b, c, d, s = 1.0, 0.0, 0.0, 1.0, 0.0
    mant = np.empty((len(diag) + 1, 2, 2))
    logs = np.empty(len(diag) + 1)
    mant[0] = np.eye(2)
    logs[0] = 0.0
    rec = {}
    for j, V in enumerate(diag):
        t = E - V
        a, b, c, d = a * t + b, -a, c * t + d, -c
        a, b, c, d, s = _rescale(a, b, c, d, s)
        mant[j + 1] = ((a, b), (c, d))
        logs[j + 1] = s
        if record is not None and (j + 1) in record:
            rec[j + 1] = s + math.log(op_norm(mant[j + 1]))
    if record is not None:
        return rec
    return mant, logs


def product(op, E, n, k):
    """M_k(n) for k > 0, M_{-|k|}(n) = M_{|k|}(n-|k|)^{-1} for k < 0."""
    if k == 0:
        raise ValueError("product needs k != 0")
    if k < 0:
        return product(op, E, n + k, -k).inverse()
    return _left_chain(op.site_values(n, k), float(E))


# =============================================================================
# TELESCOPING
# =============================================================================

@dataclass(frozen=True)
class TelescopingResiduals:
    """Relative residuals of the four telescoping identities.

    forward_tilde_left   M~_k = M_k + sum M~_{k-i-1}(n+i+1) diag(-g,0) M_i(n)
    forward_tilde_right  M~_k = M_k + sum M_{k-i-1}(n+i+1) diag(-g,0) M~_i(n)
    inverse_tilde_right  M~_k^{-1} = M_k^{-1} + sum M_i(n)^{-1} diag(0,-g) M~_{k-i-1}(n+i+1)^{-1}
    inverse_tilde_left   M~_k^{-1} = M_k^{-1} + sum M~_i(n)^{-1} diag(0,-g) M_{k-i-1}(n+i+1)^{-1}
    """
    forward_tilde_left: float
    forward_tilde_right: float
    inverse_tilde_right: float
    inverse_tilde_left: float

    def worst(self):
        return max(self.forward_tilde_left, self.forward_tilde_right,
                   self.inverse_tilde_right, self.inverse_tilde_left)


def _chains(op, E, n, k):
    v0 = op.potential.values(np.arange(n, n + k))
    g = op.perturbation.values(np.arange(n, n + k))
    v1 = v0 + g
    P = _left_chain(v0, E, keep_all=True)          # M_i(n), i = 0..k
    Pt = _left_chain(v1, E, keep_all=True)         # M~_i(n)
    # suffix S_i = A_{k-1} ... A_{i+1}, S_{k-1} = I; right chain over reversed sites
    Sm, Sl = _right_chain(v0[:0:-1], E)
    Stm, Stl = _right_chain(v1[:0:-1], E)
    S = (Sm[::-1], Sl[::-1])
    St = (Stm[::-1], Stl[::-1])
    return g, P, Pt, S, St


def _adj(m):
    out = np.empty_like(m)
    out[..., 0, 0] = m[..., 1, 1]
    out[..., 1, 1] = m[..., 0, 0]
    out[..., 0, 1] = -m[..., 0, 1]
    out[..., 1, 0] = -m[..., 1, 0]
    return out


def _log_norms(mant):
    a, b, c, d = mant[..., 0, 0], mant[..., 0, 1], mant[..., 1, 0], mant[..., 1, 1]
    f = a * a + b * b + c * c + d * d
    det = a * d - b * c
    s = np.sqrt(np.maximum((f + np.sqrt(np.maximum(f * f - 4 * det * det, 0.0))) / 2.0, 0.0))
    with np.errstate(divide="ignore"):
        return np.log(s)


def _rank_one_sum(left, right, g, row):
    """sum_i L_i D_i R_i for D_i = diag(-g_i, 0) (row=0) or diag(0, -g_i) (row=1).

    left/right: (mantissas, logs) aligned on i. Returns (scaled terms, term logs, pair logs).
    """
    Lm, Ll = left
    Rm, Rl = right
    outer = np.einsum("ia,ib->iab", Lm[:, :, row], Rm[:, row, :]) * (-g)[:, None, None]
    pair = Ll + Rl + _log_norms(Lm) + _log_norms(Rm)
    return outer, Ll + Rl, pair


def _residual(lhs_parts, terms):
    """max-entry(lhs - sum terms) / largest intermediate norm, all brought to a common scale."""
    outer, term_logs, pair_logs = terms
    logs = [l for _, l in lhs_parts] + list(term_logs) + list(pair_logs)
    ref = max(logs)
    lhs = lhs_parts[0][0] * math.exp(lhs_parts[0][1] - ref) - lhs_parts[1][0] * math.exp(lhs_parts[1][1] - ref)
    total = np.sum(outer * np.exp(term_logs - ref)[:, None, None], axis=0)
    scale = max(
        max(op_norm(m) * math.exp(l - ref) for m, l in lhs_parts),
        float(np.max(np.exp(pair_logs - ref), initial=0.0)),
    )
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(lhs - total))) / scale


def telescoping_residuals(op, E, n, k):
    if k < 1:
        raise ValueError(f"telescoping needs k >= 1, got {k}")
    E = float(E)
    g, P, Pt, S, St = _chains(op, E, n, k)
    Mk = (P[0][k], P[1][k])
    Mtk = (Pt[0][k], Pt[1][k])
    Pi = (P[0][:k], P[1][:k])
    Pti = (Pt[0][:k], Pt[1][:k])
    inv = lambda pair: (_adj(pair[0]), pair[1])
    fwd = [(Mtk[0], Mtk[1]), (Mk[0], Mk[1])]
    bwd = [(_adj(Mtk[0]), Mtk[1]), (_adj(Mk[0]), Mk[1])]
    return TelescopingResiduals(
        forward_tilde_left=_residual(fwd, _rank_one_sum(St, Pi, g, 0)),
        forward_tilde_right=_residual(fwd, _rank_one_sum(S, Pti, g, 0)),
        inverse_tilde_right=_residual(bwd, _rank_one_sum(inv(Pi), inv(St), g, 1)),
        inverse_tilde_left=_residual(bwd, _rank_one_sum(inv(Pti), inv(S), g, 1)),
    )


def _log_norm_of_sum(outer, term_logs):
    if len(term_logs) == 0 or not np.any(outer):
        return -math.inf
    ref = float(np.max(term_logs))
    total = np.sum(outer * np.exp(term_logs - ref)[:, None, None], axis=0)
    nrm = op_norm(total)
    return ref + math.log(nrm) if nrm > 0 else -math.inf


def perturbation_difference(op, E, n, k):
    """log ||M~_k(n) - M_k(n)|| summed term by term (resolves differences below product rounding)."""
    if k == 0:
        raise ValueError("perturbation_difference needs k != 0")
    E = float(E)
    if k > 0:
        g, P, Pt, S, St = _chains(op, E, n, k)
        outer, logs, _ = _rank_one_sum(S, (Pt[0][:k], Pt[1][:k]), g, 0)
    else:
        K = -k
        g, P, Pt, S, St = _chains(op, E, n - K, K)
        outer, logs, _ = _rank_one_sum((_adj(P[0][:K]), P[1][:K]), (_adj(St[0]), St[1]), g, 1)
    return _log_norm_of_sum(outer, logs)


# =============================================================================
# THETA-GRID ESTIMATORER
# =============================================================================

def theta_grid(potential, size):
    """Uniform rank-1 grid theta_0 + (j/size) * (1, 3, 5, ...) mod 1, shape (size, d)."""
    z = np.arange(1, 2 * potential.dim, 2, dtype=np.float64)
    j = np.arange(size, dtype=np.float64)[:, None] / size
    return np.mod(np.asarray(potential.theta)[None, :] + j * z[None, :], 1.0)


def _batch_log_norms(rows, E):
    """log ||M_k|| for each row of site values (rows: iterable of (batch, chunk) blocks)."""
    a = b = c = d = s = None
    for block in rows:
        if a is None:
            m = block.shape[0]
            a, b, c, d = np.ones(m), np.zeros(m), np.zeros(m), np.ones(m)
            s = np.zeros(m)
        for col in range(block.shape[1]):
            t = E - block[:, col]
            a, b, c, d = t * a - c, t * b - d, a, b
            mx = np.maximum(np.maximum(np.abs(a), np.abs(b)), np.maximum(np.abs(c), np.abs(d)))
            e = np.frexp(mx)[1]
            e = np.where((mx > 2.0) | (mx < 0.5), e, 0)
            if np.any(e):
                f = np.ldexp(1.0, -e)
                a, b, c, d = a * f, b * f, c * f, d * f
                s = s + e * LN2
    f = a * a + b * b + c * c + d * d
    det = a * d - b * c
    sig = np.sqrt((f + np.sqrt(np.maximum(f * f - 4 * det * det, 0.0))) / 2.0)
    return s + np.log(sig)


def _grid_blocks(potential, thetas, start, k):
    chunk = int(CONFIG["chunk_sites"])
    for lo in range(start, start + k, chunk):
        ns = np.arange(lo, min(lo + chunk, start + k))
        yield np.stack([potential.values(ns, theta=th) for th in thetas])


def _require_unperturbed(op, what):
    if not op.perturbation.is_zero:
        raise PerturbationNotAllowed(f"{what} is defined for the unperturbed family; got {op.perturbation.kind}")


def lyapunov(op, E, k=None, theta_grid_size=None):
    """L_k(E): theta-grid average of (1/k) log ||M_k(theta, E, 0)||."""
    _require_unperturbed(op, "lyapunov")
    k = int(k or CONFIG["lyapunov_k"])
    size = int(theta_grid_size or CONFIG["theta_grid"])
    if k < 1 or size < 1:
        raise ValueError(f"lyapunov needs k >= 1 and theta_grid >= 1, got k={k}, grid={size}")
    thetas = theta_grid(op.potential, size)
    parts = grid_map(lambda rows: _batch_log_norms(_grid_blocks(op.potential, thetas[rows], 0, k), float(E)),
                     _split_rows(size))
    return float(np.sum(np.concatenate(parts))) / (k * size)


def log_norm_samples(op, E, k, thetas):
    """(1/k) log ||M_k(theta, E, 0)|| for each row of thetas (shape (m, d))."""
    _require_unperturbed(op, "log_norm_samples")
    thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    parts = grid_map(lambda rows: _batch_log_norms(_grid_blocks(op.potential, thetas[rows], 0, k), float(E)),
                     _split_rows(len(thetas)))
    return np.concatenate(parts) / k


def _winding(rows, E):
    """Lifted angle advance of (u(j), u(j-1)) over all blocks, per row."""
    x = y = phi = None
    for block in rows:
        if x is None:
            m = block.shape[0]
            x, y, phi = np.ones(m), np.zeros(m), np.zeros(m)
        for col in range(block.shape[1]):
            x, y = (E - block[:, col]) * x - y, x
            r = np.hypot(x, y)
            x, y = x / r, y / r
            base = np.pi * np.round(phi / np.pi)
            phi = base + np.mod(np.arctan2(y, x) - base, 2 * np.pi)
    return phi


def rotation_number(op, E, k=10000, theta_grid_size=None):
    """Fibered rotation number in [0, 1/2] by projective winding; N(E) = 1 - 2 rho."""
    _require_unperturbed(op, "rotation_number")
    size = int(theta_grid_size or CONFIG["theta_grid"])
    thetas = theta_grid(op.potential, size)
    parts = grid_map(lambda rows: _winding(_grid_blocks(op.potential, thetas[rows], 0, k), float(E)),
                     _split_rows(size))
    return float(np.sum(np.concatenate(parts))) / (2 * np.pi * k * size)


# =============================================================================
# VÆKST / DEVIATION / UPPER BOUND
# =============================================================================

@dataclass(frozen=True)
class GrowthProfile:
    ks: tuple
    log_norms: tuple
    direction: str
    slope: float


def growth_profile(op, E, theta_override=None, k_max=100000, direction="forward", points=None):
    if k_max < 2:
        raise ValueError(f"growth_profile needs k_max >= 2, got {k_max}")
    if direction not in ("forward", "backward"):
        raise ValueError(f"Unknown direction: {direction}")
    if theta_override is not None:
        op = op.with_theta(theta_override)
    pts = int(points or CONFIG["ladder_points"])
    ks = sorted(set(int(round(x)) for x in np.geomspace(2, k_max, pts)))
    if direction == "forward":
        rec = _left_chain(op.site_values(0, k_max), float(E), record=set(ks))
    else:
        # ||M_{-k}(0)|| = ||M_k(-k)||, built by right multiplication A(-1), A(-2), ...
        rec = _right_chain(op.site_values(-k_max, k_max)[::-1], float(E), record=set(ks))
    logs = [rec[k] for k in ks]
    slope = float(np.polyfit(np.log(ks), logs, 1)[0])
    return GrowthProfile(tuple(ks), tuple(logs), direction, slope)


@dataclass(frozen=True)
class DeviationReport:
    branch: str
    measured_log: float
    bound_log: float
    slack: float
    passed: bool
    lyapunov: float
    gronwall_constant: float


def _valid_branches(n, k):
    if k > 0:
        return [b for b, ok in (("a", n >= 0), ("b", n + k - 1 <= 0)) if ok]
    return [b for b, ok in (("c", n + k >= 0), ("d", n - 1 <= 0)) if ok]


def deviation_check(op, E, n, k, eps=0.1, branch=None, slack=0.0, lyapunov_estimate=None,
                    lyapunov_k=None, theta_grid_size=None):
    """Measured log||M~_k - M_k|| against the exponential deviation bound.

    branch a: k>0, n>=0        (L+eps)k - s n
    branch b: k>0, n+k-1<=0    (L+eps)k + s (n+k-1)
    branch c: k<0, n-|k|>=0    (L+eps)|k| - s (n-|k|)
    branch d: k<0, n-1<=0      (L+eps)|k| + s (n-1)
    """
    g = op.perturbation
    if g.kind not in ("exponential", "zero"):
        raise BranchMismatch(f"deviation_check needs an exponential perturbation, got {g.kind}")
    if k == 0:
        raise BranchMismatch("deviation_check needs k != 0")
    valid = _valid_branches(n, k)
    if branch is None and valid:
        branch = valid[0]
    if branch not in valid:
        raise BranchMismatch(f"branch {branch!r} does not apply to n={n}, k={k}")
    L = lyapunov_estimate
    if L is None:
        L = lyapunov(op.unperturbed(), E, lyapunov_k or max(abs(k), CONFIG["lyapunov_k"]), theta_grid_size)
    K = abs(k)
    s = g.rate if g.kind == "exponential" else 0.0
    bound = {
        "a": (L + eps) * K - s * n,
        "b": (L + eps) * K + s * (n + K - 1),
        "c": (L + eps) * K - s * (n - K),
        "d": (L + eps) * K + s * (n - 1),
    }[branch]
    measured = -math.inf if g.is_zero else perturbation_difference(op, E, n, k)
    start = n if k > 0 else n - K
    t = math.exp(-(L + eps)) * np.abs(g.values(np.arange(start, start + K)))
    total = float(np.sum(t))
    gronwall = total * math.exp(total)
    return DeviationReport(branch, measured, bound, slack, bool(measured <= bound + slack), L, gronwall)


@dataclass(frozen=True)
class UpperBoundReport:
    worst: float
    worst_sample: dict
    samples: int
    lyapunov: dict


def uniform_upper_bound_check(op, E_interval, eps, k, samples, seed=0, n_range=None,
                              energies=None, theta_grid_size=None, log=lambda m: None):
    """max over (E, theta, n) of (1/k) log||M~_k(theta, E, n)|| - (L(E) + eps)."""
    E_lo, E_hi = map(float, E_interval)
    n_E = int(energies or min(samples, CONFIG["ubc_energies"]))
    grid_E = np.linspace(E_lo, E_hi, n_E)
    per_E = max(1, samples // n_E)
    n_lo, n_hi = n_range or (-k, k)
    rng = np.random.default_rng(seed)
    base = op.unperturbed()
    worst, worst_sample, lyap = -math.inf, {}, {}
    for E in grid_E:
        L = lyapunov(base, E, k, theta_grid_size)
        lyap[float(E)] = L
        thetas = rng.random((per_E, op.potential.dim))
        starts = rng.integers(n_lo, n_hi + 1, size=per_E)
        rows = np.stack([op.values_at(np.arange(n0, n0 + k), theta=th) for n0, th in zip(starts, thetas)])
        parts = grid_map(lambda idx: _batch_log_norms([rows[idx]], float(E)), _split_rows(per_E))
        excess = np.concatenate(parts) / k - (L + eps)
        i = int(np.argmax(excess))
        if excess[i] > worst:
            worst = float(excess[i])
            worst_sample = {"E": float(E), "theta": thetas[i].tolist(), "n": int(starts[i])}
        log(f"[cocycle] E={E:+.4f} L={L:.4f} worst={excess[i]:+.4f}")
    return UpperBoundReport(worst, worst_sample, per_E * n_E, lyap)
