"""
Finite-volume spectral machinery on boxes [N1, N2] with zero boundary conditions.

    P_k(n) = det[E - D_k(n)],  P_0 = 1, P_{-1} = 0
    P_k    = (E - V(n+k-1)) P_{k-1} - P_{k-2}

    G(n1, n2) = (H_box - E)^{-1}(n1, n2)
              = - P_{n1-N1}(N1) P_{N2-n2}(n2+1) / P_N(N1)      for n1 <= n2

Determinanter holdes som (mantissa, log_scale) pr. indeks, så fortegn og
log-størrelse kan læses uden overflow. Sturm-tælling bruger LDL^T-pivoter.
"""

import math
import os
import sys
from dataclasses import dataclass

import numpy as np
from scipy import linalg

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
import cocycle as CO
import lattice_ops as LO

CONFIG = {
    "bisection_rtol": 1e-12,
    "singular_tol": 1e-13,
    "cramer_limit": 10 ** 4,
    "inverse_iterations": 2,
    "seed": 20240917,
    "residual_rtol": 1e-8,
    "cluster_rtol": 1e-10,
    "ids_theta_grid": 1,
    "edge_state_merge": 2,
    "gap_spacing_factor": 20.0,
    "min_decay_samples": 16,
    "min_decay_length": 64,
    "underflow_floor": 1e-280,
    "label_k_max": 30,
    "label_tol": 1e-3,
}


class SingularBox(RuntimeError):
    pass


class NoLabel(ValueError):
    pass


class IllConditioned(RuntimeError):
    pass


class TooShort(ValueError):
    pass


# =============================================================================
# DETERMINANTER
# =============================================================================

def _determinants(diag, E):
    """Scaled P_0..P_K for the given diagonal: returns (mantissa, log_scale) arrays."""
    K = len(diag)
    mant = np.empty(K + 1)
    logs = np.empty(K + 1)
    prev, cur, s = 0.0, 1.0, 0.0
    mant[0], logs[0] = 1.0, 0.0
    for k, V in enumerate(diag, start=1):
        prev, cur = cur, (E - V) * cur - prev
        m = max(abs(prev), abs(cur))
        if m > 2.0 or 0.0 < m < 0.5:
            e = math.frexp(m)[1]
            prev, cur = math.ldexp(prev, -e), math.ldexp(cur, -e)
            s += e * CO.LN2
        mant[k], logs[k] = cur, s
    return mant, logs


@dataclass(frozen=True, eq=False)
class DeterminantSequence:
    base: int
    E: float
    mantissa: np.ndarray
    log_scale: np.ndarray

    @property
    def K(self):
        return len(self.mantissa) - 1

    @property
    def signs(self):
        return np.sign(self.mantissa).astype(np.int8)

    @property
    def log_magnitudes(self):
        with np.errstate(divide="ignore"):
            return np.log(np.abs(self.mantissa)) + self.log_scale

    def value(self, k):
        if k == -1:
            return 0.0
        return float(self.mantissa[k] * math.exp(self.log_scale[k]))


def determinant_sequence(op, E, n, K):
    if K < 0:
        raise ValueError(f"determinant_sequence needs K >= 0, got {K}")
    mant, logs = _determinants(op.site_values(n, K), float(E))
    return DeterminantSequence(int(n), float(E), mant, logs)


def _signed_logs(mant, logs):
    with np.errstate(divide="ignore"):
        return np.sign(mant), np.log(np.abs(mant)) + logs


def _forward_backward(diag, E):
    """Forward P_m(N1), m=0..N and backward det(E - D[j..N2]), j index 0..N (last = 1)."""
    fs, fl = _signed_logs(*_determinants(diag, E))
    bs, bl = _signed_logs(*_determinants(diag[::-1], E))
    return fs, fl, bs[::-1], bl[::-1]


# =============================================================================
# STURM
# =============================================================================

def sturm_counts(box, energies):
    """Number of eigenvalues strictly below each energy (negative LDL^T pivots)."""
    E = np.atleast_1d(np.asarray(energies, dtype=np.float64))
    tiny = -np.finfo(np.float64).eps * box.norm_bound()
    diag = box.diagonal
    d = diag[0] - E
    d = np.where(d == 0.0, tiny, d)
    count = (d < 0).astype(np.int64)
    for a in diag[1:]:
        d = (a - E) - 1.0 / d
        d = np.where(d == 0.0, tiny, d)
        count += d < 0
    return count


def sturm_count(box, E):
    return int(sturm_counts(box, [E])[0])


def _near_eigenvalue(box, E):
    delta = CONFIG["singular_tol"] * max(1.0, box.norm_bound())
    lo, hi = sturm_counts(box, [E - delta, E + delta])
    return lo != hi


# =============================================================================
# GREEN
# =============================================================================

@dataclass(frozen=True)
class GreenSample:
    interval: tuple
    E: float
    n1: int
    n2: int
    value: float
    log_magnitude: float
    method: str


def _banded_column(box, E, col):
    n = box.size
    ab = np.zeros((3, n))
    ab[0, 1:] = 1.0
    ab[1] = box.diagonal - E
    ab[2, :-1] = 1.0
    rhs = np.zeros(n)
    rhs[col] = 1.0
    return linalg.solve_banded((1, 1), ab, rhs)


def green_entry(box, E, n1, n2, method="auto"):
    """(H_box - E)^{-1}(n1, n2). method: auto | cramer | banded."""
    E = float(E)
    if n1 > n2:
        n1, n2 = n2, n1
    i1, i2 = box.index(n1), box.index(n2)
    if _near_eigenvalue(box, E):
        raise SingularBox(f"E={E} is within {CONFIG['singular_tol']} of an eigenvalue of box {box.interval}")
    if method == "auto":
        method = "cramer" if box.size <= CONFIG["cramer_limit"] else "banded"
    if method == "cramer":
        fs, fl, bs, bl = _forward_backward(box.diagonal, E)
        N = box.size
        sign = -fs[i1] * bs[i2 + 1] * fs[N]
        logmag = fl[i1] + bl[i2 + 1] - fl[N]
        value = float(sign * math.exp(logmag)) if sign != 0 else 0.0
        return GreenSample(box.interval, E, n1, n2, value, float(logmag) if sign != 0 else -math.inf, method)
    if method == "banded":
        value = float(_banded_column(box, E, i2)[i1])
        return GreenSample(box.interval, E, n1, n2, value,
                           math.log(abs(value)) if value else -math.inf, method)
    raise ValueError(f"Unknown Green method: {method}")


def reconstruct_from_boundary(box, E, u_left, u_right):
    """Solution on the box from its outside neighbours:
    u(n) = -G(n, N1) u(N1-1) - G(n, N2) u(N2+1)."""
    E = float(E)
    if _near_eigenvalue(box, E):
        raise SingularBox(f"E={E} is within {CONFIG['singular_tol']} of an eigenvalue of box {box.interval}")
    fs, fl, bs, bl = _forward_backward(box.diagonal, E)
    N = box.size
    i = np.arange(N)
    g_left = -fs[0] * bs[i + 1] * fs[N] * np.exp(fl[0] + bl[i + 1] - fl[N])
    g_right = -fs[i] * bs[N] * fs[N] * np.exp(fl[i] + bl[N] - fl[N])
    return -g_left * float(u_left) - g_right * float(u_right)


def green_matrix_log(box, E):
    """(log|G|, sign(G)) for all entries, from one forward/backward determinant pass."""
    fs, fl, bs, bl = _forward_backward(box.diagonal, float(E))
    N = box.size
    i = np.arange(N)
    lo = np.minimum.outer(i, i)
    hi = np.maximum.outer(i, i)
    logs = fl[lo] + bl[hi + 1] - fl[N]
    signs = -fs[lo] * bs[hi + 1] * fs[N]
    logs = np.where(signs == 0, -np.inf, logs)
    return logs, signs


@dataclass(frozen=True)
class WindowResult:
    interval: tuple
    score: float
    passed: bool
    singular: bool


@dataclass(frozen=True)
class WindowScanReport:
    right: tuple
    left: tuple
    best_right: WindowResult
    best_left: WindowResult

    @property
    def passed(self):
        return self.best_right.passed or self.best_left.passed

    @property
    def both_sides_passed(self):
        return self.best_right.passed and self.best_left.passed


def scan_windows(N, N_prime):
    right = [(1, N), (1, N - 1), (2, N), (2, N - 1)]
    right = [(a + N_prime, b + N_prime) for a, b in right]
    left = [(-N, -1), (-N + 1, -1), (-N, -2), (-N + 1, -2)]
    left = [(a - N_prime, b - N_prime) for a, b in left]
    return right, left


def window_scan(op, E, N, N_prime, decay_rate_target, slack, theta=None):
    """max over (n1,n2) of log|G(n1,n2)| + target|n1-n2| - slack N, for the four right and four left windows."""
    if N < 4 or N_prime < N * N:
        raise ValueError(f"window_scan needs N >= 4 and N' >= N^2, got N={N}, N'={N_prime}")
    results = {}
    for side, windows in zip(("right", "left"), scan_windows(N, N_prime)):
        rows = []
        for N1, N2 in windows:
            box = LO.build_box(op, N1, N2, theta)
            if _near_eigenvalue(box, E):
                rows.append(WindowResult((N1, N2), math.inf, False, True))
                continue
            logs, _ = green_matrix_log(box, E)
            dist = np.abs(np.subtract.outer(np.arange(box.size), np.arange(box.size)))
            score = float(np.max(logs + decay_rate_target * dist)) - slack * N
            rows.append(WindowResult((N1, N2), score, score < 0, False))
        results[side] = tuple(rows)
    best = {side: min(rows, key=lambda r: r.score) for side, rows in results.items()}
    return WindowScanReport(results["right"], results["left"], best["right"], best["left"])


# =============================================================================
# IDS + GAP LABELS
# =============================================================================

@dataclass(frozen=True, eq=False)
class IdsCurve:
    energies: np.ndarray
    values: np.ndarray


def _ids_boxes(op, box_size, theta_grid_size):
    if not op.perturbation.is_zero:
        raise CO.PerturbationNotAllowed(f"ids is defined for the unperturbed family; got {op.perturbation.kind}")
    if box_size < 10:
        raise ValueError(f"ids needs box_size >= 10, got {box_size}")
    size = int(theta_grid_size or CONFIG["ids_theta_grid"])
    thetas = CO.theta_grid(op.potential, size)
    return [LO.build_box(op, 0, box_size - 1, th) for th in thetas]


def ids_curve(op, energies, box_size, theta_grid_size=None):
    energies = np.sort(np.asarray(energies, dtype=np.float64))
    boxes = _ids_boxes(op, box_size, theta_grid_size)
    counts = CO.grid_map(lambda b: sturm_counts(b, energies), boxes)
    values = np.sum(np.stack(counts), axis=0) / (box_size * len(boxes))
    return IdsCurve(energies, values)


def ids(op, E, box_size, theta_grid_size=None):
    return float(ids_curve(op, [E], box_size, theta_grid_size).values[0])


def _alpha_value(alpha):
    if isinstance(alpha, LO.Frequency):
        return alpha.hi, alpha.lo
    return float(alpha), 0.0


def gap_label(ids_value, alpha, k_max=None, tol=None):
    """k with |k| <= k_max minimising dist(N, k alpha mod 1); ties go to smaller |k|."""
    k_max = CONFIG["label_k_max"] if k_max is None else k_max
    tol = CONFIG["label_tol"] if tol is None else tol
    if not 0.0 <= ids_value <= 1.0:
        raise ValueError(f"ids_value must be in [0,1], got {ids_value}")
    hi, lo = _alpha_value(alpha)
    best_k, best_d = None, math.inf
    for k in [0] + [s * j for j in range(1, k_max + 1) for s in (1, -1)]:
        x = (ids_value - k * hi) - k * lo
        d = abs(x - round(x))
        if d < best_d:
            best_k, best_d = k, d
    if best_d > tol:
        raise NoLabel(f"no |k| <= {k_max} within {tol} of N={ids_value} (closest k={best_k}, dist={best_d:.2e})")
    return best_k


@dataclass(frozen=True)
class Gap:
    lower: float
    upper: float
    ids: float
    edge_states: int = 0

    @property
    def width(self):
        return self.upper - self.lower


def spectral_gaps(op, box_size, min_width=0.0, theta=None):
    """Gaps of a finite-volume spectrum, widest first.

    Up to CONFIG['edge_state_merge'] isolated levels between two wide spacings are
    Dirichlet boundary states and are merged into the surrounding gap.
    """
    box = LO.build_box(op.unperturbed(), 0, box_size - 1, theta)
    ev = linalg.eigvalsh_tridiagonal(box.diagonal, np.ones(box.size - 1))
    spacing = np.diff(ev)
    threshold = max(min_width, CONFIG["gap_spacing_factor"] * float(np.median(spacing)))
    wide = np.flatnonzero(spacing > threshold)
    gaps = []
    merge = CONFIG["edge_state_merge"]
    i = 0
    while i < len(wide):
        lo_idx, hi_idx = wide[i], wide[i] + 1
        j = i
        while j + 1 < len(wide) and wide[j + 1] - wide[j] <= merge:
            j += 1
            hi_idx = wide[j] + 1
        inside = hi_idx - lo_idx - 1
        gaps.append(Gap(float(ev[lo_idx]), float(ev[hi_idx]), (lo_idx + 1) / box.size, int(inside)))
        i = j + 1
    return sorted(gaps, key=lambda g: -g.width)


# =============================================================================
# EIGENPAR
# =============================================================================

@dataclass(frozen=True, eq=False)
class Eigenpair:
    value: float
    vector: np.ndarray
    residual: float


def _bisect_eigenvalues(box, E1, E2):
    c1, c2 = sturm_counts(box, [E1, E2])
    idx = np.arange(c1, c2)
    if len(idx) == 0:
        return np.zeros(0)
    lo = np.full(len(idx), float(E1))
    hi = np.full(len(idx), float(E2))
    tol = CONFIG["bisection_rtol"] * box.norm_bound()
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        above = sturm_counts(box, mid) > idx
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
        if np.all(mid == lo) and np.all(mid == hi):
            break
    return 0.5 * (lo + hi)


def _twisted_vector(diag, sigma, r, tiny):
    """Solve (H - sigma) z = gamma e_r with z_r = 1 (products only; tails keep relative accuracy)."""
    n = len(diag)
    t = diag - sigma
    dp = np.empty(n)
    dm = np.empty(n)
    dp[0] = t[0] or tiny
    for i in range(1, n):
        dp[i] = (t[i] - 1.0 / dp[i - 1]) or tiny
    dm[n - 1] = t[n - 1] or tiny
    for i in range(n - 2, -1, -1):
        dm[i] = (t[i] - 1.0 / dm[i + 1]) or tiny
    z = np.zeros(n)
    z[r] = 1.0
    with np.errstate(under="ignore", over="ignore"):
        if r > 0:
            z[:r] = np.cumprod((-1.0 / dp[:r])[::-1])[::-1]
        if r < n - 1:
            z[r + 1:] = np.cumprod(-1.0 / dm[r + 1:])
    return z


def _fix_sign(v):
    v = v / np.linalg.norm(v)
    return -v if v[np.argmax(np.abs(v))] < 0 else v


def eigenpairs_in_window(box, E1, E2, seed=None):
    """Eigenpairs with E1 < lambda < E2: bisection + inverse iteration + Rayleigh polish."""
    if not E1 < E2:
        raise ValueError(f"eigenpairs_in_window needs E1 < E2, got {E1}, {E2}")
    values = _bisect_eigenvalues(box, E1, E2)
    rng = np.random.default_rng(CONFIG["seed"] if seed is None else seed)
    H = box
    norm = box.norm_bound()
    tiny = np.finfo(np.float64).eps * norm
    ab = np.zeros((3, box.size))
    ab[0, 1:] = 1.0
    ab[2, :-1] = 1.0
    apply = lambda v: box.diagonal * v + np.concatenate(([0.0], v[:-1])) + np.concatenate((v[1:], [0.0]))
    out = []
    cluster = []
    for lam in values:
        if cluster and abs(lam - cluster[-1].value) > CONFIG["cluster_rtol"] * norm:
            cluster = []
        x = rng.standard_normal(box.size)
        ab[1] = H.diagonal - lam
        for _ in range(CONFIG["inverse_iterations"]):
            try:
                x = linalg.solve_banded((1, 1), ab, x)
            except np.linalg.LinAlgError:
                ab[1] = H.diagonal - (lam + tiny)
                x = linalg.solve_banded((1, 1), ab, x)
            for p in cluster:
                x = x - (p.vector @ x) * p.vector
            x = x / np.linalg.norm(x)
        rq = float(x @ apply(x))
        best = _fix_sign(x)
        if not cluster:
            # twisted vector keeps relative accuracy far out in the tails
            z = _twisted_vector(H.diagonal, rq, int(np.argmax(np.abs(x))), tiny)
            if np.all(np.isfinite(z)):
                z = _fix_sign(z)
                if np.linalg.norm(apply(z) - (z @ apply(z)) * z) <= CONFIG["residual_rtol"] * norm:
                    best = z
        value = float(best @ apply(best))
        residual = float(np.linalg.norm(apply(best) - value * best))
        if residual > CONFIG["residual_rtol"] * norm:
            raise IllConditioned(f"inverse iteration residual {residual:.2e} at lambda={value}")
        pair = Eigenpair(value, best, residual)
        out.append(pair)
        cluster.append(pair)
    return out


def bulk_eigenvalue_count(box, E1, E2, margin):
    """Eigenvalues in (E1, E2) whose vector keeps >= half its mass >= margin sites from both ends."""
    count = 0
    inner = slice(margin, box.size - margin)
    for pair in eigenpairs_in_window(box, E1, E2):
        if float(np.sum(pair.vector[inner] ** 2)) >= 0.5:
            count += 1
    return count


def decay_rate(eigenvector, center):
    """-slope of log|psi(n)| vs |n - center| over the outer half on each side.

    center is an index into the vector.
    """
    psi = np.abs(np.asarray(eigenvector, dtype=np.float64))
    n = len(psi)
    if n < CONFIG["min_decay_length"]:
        raise TooShort(f"vector length {n} < {CONFIG['min_decay_length']}")
    i = np.arange(n)
    dist = np.abs(i - center)
    outer = ((i < center) & (dist >= center / 2.0)) | ((i > center) & (dist >= (n - 1 - center) / 2.0))
    use = outer & (psi >= CONFIG["underflow_floor"])
    if np.count_nonzero(use) < CONFIG["min_decay_samples"]:
        raise TooShort(f"only {np.count_nonzero(use)} usable samples for the decay fit")
    slope = np.polyfit(dist[use], np.log(psi[use]), 1)[0]
    return float(-slope)


# =============================================================================
# SPECTRAL SAMPLE
# =============================================================================

@dataclass(frozen=True)
class SpectralSample:
    E: float
    lyapunov: float
    ids: float
    rotation: float
    gap_label: int | None
    boundedness: float


def spectral_sample(op, E, k=1000, box_size=1000, k_max=None, tol=None):
    """Per-energy record: L_k, N, rho, gap label, max_{j<=k} log||M_j|| / log(k+1)."""
    base = op.unperturbed()
    N = ids(base, E, box_size)
    try:
        label = gap_label(N, base.potential.alpha[0], k_max, tol) if base.potential.dim == 1 else None
    except NoLabel:
        label = None
    profile = CO.growth_profile(base, E, k_max=k)
    return SpectralSample(
        E=float(E),
        lyapunov=CO.lyapunov(base, E, k),
        ids=N,
        rotation=CO.rotation_number(base, E, k),
        gap_label=label,
        boundedness=max(profile.log_norms) / math.log(k + 1),
    )
