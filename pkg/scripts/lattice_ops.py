"""
Lattice operators for the quasi-periodic lab.

    (H u)(n) = u(n+1) + u(n-1) + (lambda * v(theta + n*alpha) + g(n)) * u(n)

v er en endelig Fourier-sum paa d-torus, g en aftagende perturbation.
Alle typer er immutable efter konstruktion og kan deles mellem threads.

Frekvens-repraesentation (double-double):

    alpha = alpha_hi + alpha_lo      (alpha_lo bærer bits under float-præcision)

orbit_phases() reducerer theta + n*alpha mod 1 uden fase-drift for |n| op til
CONFIG["exact_orbit_limit"]: alpha_hi splittes i 26-bit halvdele så n*halvdel
er eksakt i float64.
"""

import itertools
import math
from dataclasses import dataclass, field, replace
from decimal import Decimal, localcontext
from fractions import Fraction
from functools import cached_property

import numpy as np
from scipy import special

CONFIG = {
    "imag_tol": 1e-12,
    "symmetry_tol": 1e-14,
    "exact_orbit_limit": 2 ** 24,
    "cf_depth": 40,
}

PERTURBATION_KINDS = ("zero", "exponential", "power_law", "table", "inverse_square_tail")

_SPLIT = float(2 ** 26)


class InvalidPotential(ValueError):
    pass


class InvalidInterval(ValueError):
    pass


# =============================================================================
# FREKVENSER
# =============================================================================

@dataclass(frozen=True)
class Frequency:
    """alpha som double-double plus den token brugeren skrev (til lossless round trip)."""
    hi: float
    lo: float = 0.0
    token: str = ""
    exact: Fraction | None = None    # sat når brugeren gav p/q

    @property
    def rational(self):
        return self.exact is not None


def _dd_from_decimal(value):
    hi = float(value)
    lo = float(value - Decimal(hi))
    return hi, lo


def parse_frequency(token):
    """Accepter 'golden', 'sqrt2m1', 'p/q', decimal-streng eller tal. Reduceres mod 1."""
    if isinstance(token, (int, float)) and not isinstance(token, bool):
        f = Fraction(token)
        f -= math.floor(f)
        hi = float(f)
        return Frequency(hi, float(f - Fraction(hi)), token=repr(token))
    text = str(token).strip()
    key = text.lower()
    if key in ("golden", "sqrt2m1"):
        with localcontext() as ctx:
            ctx.prec = 60
            if key == "golden":
                val = (Decimal(5).sqrt() - 1) / 2
            else:
                val = Decimal(2).sqrt() - 1
            hi, lo = _dd_from_decimal(val)
        return Frequency(hi, lo, token=key)
    try:
        f = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise InvalidPotential(f"Unknown frequency token: {text!r}")
    f -= math.floor(f)
    hi = float(f)
    exact = f if "/" in text else None
    return Frequency(hi, float(f - Fraction(hi)), token=text, exact=exact)


def continued_fraction(alpha, depth=None):
    """Partielle kvotienter [a1, a2, ...] af alpha in (0,1). Stopper ved rationalt alpha."""
    depth = depth or CONFIG["cf_depth"]
    if isinstance(alpha, Frequency):
        x = alpha.exact if alpha.exact is not None else Fraction(alpha.hi) + Fraction(alpha.lo)
    else:
        x = Fraction(alpha)
    x -= math.floor(x)
    out = []
    while x and len(out) < depth:
        x = 1 / x
        a = math.floor(x)
        out.append(int(a))
        x -= a
    return out


def convergent_denominators(alpha, depth=None):
    """q_n fra kædebrøken; q_{n+1} = a_{n+1} q_n + q_{n-1}."""
    qs, q_prev, q = [], 0, 1
    for a in continued_fraction(alpha, depth):
        q_prev, q = q, a * q + q_prev
        qs.append(q)
    return qs


def is_rationally_dependent(alpha, k_max=20, tol=1e-12):
    """(1, alpha_1, ..., alpha_d) rationally dependent?

    Et p/q-token er altid afhængigt. For d >= 2 søges heltalsvektorer 0 < |k|_inf <= k_max
    med dist(<k, alpha>, Z) < tol; decimaltal behandles som tilnærmelser til irrationale tal.
    """
    items = alpha if isinstance(alpha, (list, tuple)) else [alpha]
    freqs = [a if isinstance(a, Frequency) else parse_frequency(a) for a in items]
    if any(f.rational for f in freqs):
        return True
    if len(freqs) < 2:
        return False
    hi = np.array([f.hi for f in freqs])
    lo = np.array([f.lo for f in freqs])
    for k in itertools.product(range(-k_max, k_max + 1), repeat=len(freqs)):
        if not any(k):
            continue
        x = float(np.dot(k, hi) + np.dot(k, lo))
        if abs(x - round(x)) < tol:
            return True
    return False


def orbit_phases(alpha, theta, ns):
    """theta + n*alpha mod 1 for alle n, shape (len(ns), d), værdier i [0,1).

    alpha: sekvens af Frequency (én pr. torus-retning), theta: sekvens af floats.
    """
    ns = np.asarray(ns, dtype=np.float64).reshape(-1, 1)
    hi = np.array([a.hi for a in alpha], dtype=np.float64)
    lo = np.array([a.lo for a in alpha], dtype=np.float64)
    th = np.asarray(theta, dtype=np.float64)
    hi_a = np.floor(hi * _SPLIT) / _SPLIT
    hi_b = hi - hi_a
    x = np.mod(ns * hi_a, 1.0)
    x = x + ns * hi_b + (ns * lo + th)
    x = x - np.floor(x)
    x[x >= 1.0] -= 1.0
    return x


# =============================================================================
# POTENTIAL
# =============================================================================

@dataclass(frozen=True)
class PotentialSpec:
    """lambda * v(x), v(x) = sum_k c_k exp(2 pi i <k, x>)."""
    fourier_coeffs: tuple = ()      # ((k1, ..., kd), complex amplitude)
    alpha: tuple = ()               # Frequency pr. retning
    theta: tuple = ()               # floats mod 1
    coupling: float = 1.0

    def __post_init__(self):
        if not self.alpha:
            raise InvalidPotential("alpha must have dimension d >= 1")
        d = len(self.alpha)
        alpha = tuple(a if isinstance(a, Frequency) else parse_frequency(a) for a in self.alpha)
        theta = tuple(float(t) % 1.0 for t in (self.theta or (0.0,) * d))
        if len(theta) != d:
            raise InvalidPotential(f"theta has dimension {len(theta)}, alpha has {d}")
        coeffs = {}
        for mode, amp in self.fourier_coeffs:
            mode = tuple(int(m) for m in np.atleast_1d(mode))
            if len(mode) != d:
                raise InvalidPotential(f"mode {mode} does not match dimension {d}")
            coeffs[mode] = coeffs.get(mode, 0j) + complex(amp)
        tol = CONFIG["symmetry_tol"] * max([1.0] + [abs(c) for c in coeffs.values()])
        for mode, amp in coeffs.items():
            partner = coeffs.get(tuple(-m for m in mode), 0j)
            if abs(partner - amp.conjugate()) > tol:
                raise InvalidPotential(
                    f"Fourier block is not real-symmetric: c{mode}={amp}, c{tuple(-m for m in mode)}={partner}")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "fourier_coeffs", tuple(sorted(coeffs.items())))
        object.__setattr__(self, "coupling", float(self.coupling))

    @property
    def dim(self):
        return len(self.alpha)

    @property
    def is_zero(self):
        return self.coupling == 0.0 or all(c == 0 for _, c in self.fourier_coeffs)

    @cached_property
    def _modes(self):
        if not self.fourier_coeffs:
            return np.zeros((0, self.dim)), np.zeros(0, dtype=complex)
        modes = np.array([m for m, _ in self.fourier_coeffs], dtype=np.float64)
        amps = np.array([c for _, c in self.fourier_coeffs], dtype=complex)
        return modes, amps

    def fourier_sum(self, x):
        """Kompleks sum paa phases x (shape (m, d)); imaginærdelen er afrundingsstøj."""
        modes, amps = self._modes
        if len(amps) == 0:
            return np.zeros(len(x), dtype=complex)
        return np.exp(2j * np.pi * (x @ modes.T)) @ amps

    def sample(self, x):
        return self.coupling * self.fourier_sum(x).real

    def imag_residual(self, x):
        return float(np.max(np.abs(self.fourier_sum(x).imag), initial=0.0))

    def values(self, ns, theta=None):
        """lambda * v(theta + n alpha) for alle n."""
        if self.is_zero:
            return np.zeros(len(np.atleast_1d(ns)))
        return self.sample(orbit_phases(self.alpha, self.theta if theta is None else theta, ns))

    def with_theta(self, theta):
        return replace(self, theta=tuple(np.atleast_1d(theta).tolist()))

    def truncated(self, cutoff):
        """Behold modes med |k|_inf <= cutoff."""
        kept = tuple((m, c) for m, c in self.fourier_coeffs if max(abs(k) for k in m) <= cutoff)
        return replace(self, fourier_coeffs=kept)

    def sup_norm_bound(self):
        """sum |lambda c_k| >= sup |lambda v|."""
        return abs(self.coupling) * sum(abs(c) for _, c in self.fourier_coeffs)


def almost_mathieu(coupling, alpha="golden", theta=0.0):
    """lambda * 2 cos(2 pi (theta + n alpha))."""
    return PotentialSpec(fourier_coeffs=(((1,), 1.0), ((-1,), 1.0)),
                         alpha=(alpha,), theta=(theta,), coupling=coupling)


def zero_potential(alpha="golden"):
    return PotentialSpec(fourier_coeffs=(), alpha=(alpha,), theta=(0.0,), coupling=0.0)


# =============================================================================
# PERTURBATION
# =============================================================================

@dataclass(frozen=True)
class PerturbationSpec:
    """Aftagende g(n).

    exponential          C e^{-s|n|}           (rate = s)
    power_law            C (1+|n|)^{-gamma}    (rate = gamma)
    table                values[n], 0 udenfor
    inverse_square_tail  C/(n^2-1) for |n| >= n0, table inde i (-n0, n0)
    zero
    """
    kind: str = "zero"
    C: float = 0.0
    rate: float = 0.0
    table: tuple = ()               # ((n, value), ...)
    n0: int = 2

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise InvalidPotential(f"Unknown perturbation kind: {self.kind}")
        if self.kind in ("exponential", "power_law"):
            if self.C < 0 or self.rate <= 0:
                raise InvalidPotential(f"{self.kind} needs C >= 0 and rate > 0, got C={self.C}, rate={self.rate}")
        if self.kind == "inverse_square_tail" and self.n0 < 2:
            raise InvalidPotential(f"inverse_square_tail needs n0 >= 2, got {self.n0}")
        items = self.table.items() if isinstance(self.table, dict) else self.table
        object.__setattr__(self, "table", tuple(sorted((int(n), float(v)) for n, v in items)))

    @property
    def is_zero(self):
        if self.kind == "zero":
            return True
        if self.kind == "table":
            return all(v == 0.0 for _, v in self.table)
        return self.C == 0.0 and not any(v for _, v in self.table)

    @cached_property
    def _table_arrays(self):
        if not self.table:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        keys, vals = zip(*self.table)
        return np.array(keys, dtype=np.int64), np.array(vals, dtype=np.float64)

    def _lookup(self, ns):
        keys, vals = self._table_arrays
        out = np.zeros(len(ns))
        if len(keys):
            idx = np.clip(np.searchsorted(keys, ns), 0, len(keys) - 1)
            hit = keys[idx] == ns
            out[hit] = vals[idx[hit]]
        return out

    def values(self, ns):
        ns = np.atleast_1d(np.asarray(ns, dtype=np.int64))
        an = np.abs(ns).astype(np.float64)
        if self.kind == "zero":
            return np.zeros(len(ns))
        if self.kind == "exponential":
            return self.C * np.exp(-self.rate * an)
        if self.kind == "power_law":
            return self.C * (1.0 + an) ** (-self.rate)
        if self.kind == "table":
            return self._lookup(ns)
        out = self._lookup(ns)
        tail = np.abs(ns) >= self.n0
        out[tail] = self.C / (an[tail] ** 2 - 1.0)
        return out

    def support(self):
        """(lo, hi) for endelig støtte, ellers None."""
        if self.kind == "zero":
            return (0, -1)
        if self.kind == "table":
            nz = [n for n, v in self.table if v != 0.0]
            return (min(nz), max(nz)) if nz else (0, -1)
        return None

    def l1_norm(self):
        if self.kind == "zero":
            return 0.0
        if self.kind == "exponential":
            q = math.exp(-self.rate)
            return self.C * (1 + q) / (1 - q)
        if self.kind == "power_law":
            if self.rate <= 1:
                return math.inf
            return self.C * (1 + 2 * float(special.zeta(self.rate, 2)))
        table = sum(abs(v) for _, v in self.table)
        if self.kind == "table":
            return table
        inner = sum(abs(v) for n, v in self.table if abs(n) < self.n0)
        return inner + abs(self.C) * (1.0 / (self.n0 - 1) + 1.0 / self.n0)

    def first_moment(self):
        """sum |n| |g(n)|."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "exponential":
            q = math.exp(-self.rate)
            return 2 * self.C * q / (1 - q) ** 2
        if self.kind == "power_law":
            if self.rate <= 2:
                return math.inf
            g = self.rate
            return 2 * self.C * float(special.zeta(g - 1, 2) - special.zeta(g, 2))
        if self.kind == "table":
            return float(sum(abs(n) * abs(v) for n, v in self.table))
        return math.inf if self.C != 0 else float(
            sum(abs(n) * abs(v) for n, v in self.table if abs(n) < self.n0))

    @property
    def in_l11(self):
        return math.isfinite(self.first_moment())


def exponential(C, s):
    return PerturbationSpec("exponential", C=float(C), rate=float(s))


def power_law(C, gamma):
    return PerturbationSpec("power_law", C=float(C), rate=float(gamma))


def table(values):
    return PerturbationSpec("table", table=values)


def zero_perturbation():
    return PerturbationSpec("zero")


def inverse_square_tail(C, n0=2, interior=None):
    return PerturbationSpec("inverse_square_tail", C=float(C), n0=int(n0), table=interior or {})


# =============================================================================
# OPERATOR + BOX
# =============================================================================

@dataclass(frozen=True)
class OperatorSpec:
    potential: PotentialSpec
    perturbation: PerturbationSpec = field(default_factory=zero_perturbation)

    def site_values(self, start, count, theta=None):
        """Diagonalen paa sites start .. start+count-1."""
        ns = np.arange(start, start + count, dtype=np.int64)
        return self.values_at(ns, theta)

    def values_at(self, ns, theta=None):
        ns = np.atleast_1d(np.asarray(ns, dtype=np.int64))
        out = self.potential.values(ns, theta)
        if not self.perturbation.is_zero:
            out = out + self.perturbation.values(ns)
        return out

    def unperturbed(self):
        return replace(self, perturbation=zero_perturbation())

    def with_theta(self, theta):
        return replace(self, potential=self.potential.with_theta(theta))


def eval_site(op, n):
    return float(op.values_at([n])[0])


def appendix_operator(half_line=False, u0=1.0):
    """V(n) = -2/(n^2-1) for |n| >= 2, u(n) = 1/n er en l2-løsning ved E = 2.

    Hele linjen: u(1) = 1, u(-1) = -1 og et frit u(0) = u0 != 0 giver
    V(0) = 2, V(1) = 3/2 - u0, V(-1) = 3/2 + u0 (u0 = 1: 1/2, 2, 5/2).
    Halvlinjen (Dirichlet u(0)=0): V(1) = 3/2.
    """
    if half_line:
        interior = {1: 1.5}
    else:
        if u0 == 0:
            raise InvalidPotential("appendix completion needs u(0) != 0")
        interior = {-1: 1.5 + u0, 0: 2.0, 1: 1.5 - u0}
    return OperatorSpec(zero_potential(), inverse_square_tail(-2.0, 2, interior))


def appendix_solution(ns, half_line=False, u0=1.0):
    ns = np.atleast_1d(np.asarray(ns, dtype=np.int64))
    out = np.zeros(len(ns))
    nz = ns != 0
    out[nz] = 1.0 / ns[nz]
    if not half_line:
        out[~nz] = u0
    else:
        out[ns < 0] = 0.0
    return out


@dataclass(frozen=True, eq=False)
class BoxOperator:
    """H restricted to [N1, N2] with zero boundary conditions; off-diagonal 1."""
    interval: tuple
    diagonal: np.ndarray

    @property
    def size(self):
        return len(self.diagonal)

    @property
    def sites(self):
        return np.arange(self.interval[0], self.interval[1] + 1)

    def gershgorin(self):
        return float(self.diagonal.min()) - 2.0, float(self.diagonal.max()) + 2.0

    def norm_bound(self):
        return float(np.abs(self.diagonal).max()) + 2.0

    def dense(self):
        n = self.size
        return np.diag(self.diagonal) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)

    def index(self, n):
        N1, N2 = self.interval
        if not N1 <= n <= N2:
            raise InvalidInterval(f"site {n} outside box [{N1}, {N2}]")
        return n - N1


def box_from_diagonal(diagonal, N1=0):
    diag = np.array(diagonal, dtype=np.float64)
    diag.setflags(write=False)
    return BoxOperator((int(N1), int(N1) + len(diag) - 1), diag)


def build_box(op, N1, N2, theta=None):
    if N1 > N2:
        raise InvalidInterval(f"empty box: N1={N1} > N2={N2}")
    return box_from_diagonal(op.site_values(N1, N2 - N1 + 1, theta), N1)


# =============================================================================
# SERIALISERING
# =============================================================================

def frequency_token(freq):
    return freq.token or repr(freq.hi)


def operator_to_dict(op):
    """JSON-sikker beskrivelse; alpha gemmes som brugerens token."""
    pot, g = op.potential, op.perturbation
    return {
        "potential": {
            "alpha": [frequency_token(a) for a in pot.alpha],
            "theta": list(pot.theta),
            "coupling": pot.coupling,
            "fourier": [[list(mode), amp.real, amp.imag] for mode, amp in pot.fourier_coeffs],
        },
        "perturbation": {
            "kind": g.kind,
            "C": g.C,
            "rate": g.rate,
            "table": [[n, v] for n, v in g.table],
            "n0": g.n0,
        },
    }


def operator_from_dict(d):
    p = d["potential"]
    pot = PotentialSpec(
        fourier_coeffs=tuple((tuple(mode), complex(re, im)) for mode, re, im in p.get("fourier", [])),
        alpha=tuple(parse_frequency(a) for a in p["alpha"]),
        theta=tuple(p.get("theta", ())),
        coupling=p.get("coupling", 1.0),
    )
    g = d.get("perturbation") or {"kind": "zero"}
    pert = PerturbationSpec(kind=g.get("kind", "zero"), C=float(g.get("C", 0.0)), rate=float(g.get("rate", 0.0)),
                            table=tuple((int(n), float(v)) for n, v in g.get("table", [])), n0=int(g.get("n0", 2)))
    return OperatorSpec(pot, pert)
