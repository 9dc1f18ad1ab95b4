"""Independent reference pricers: CEV Bessel semi-density, Heston Fourier, Monte Carlo.

All prices are for calls with zero rates; strikes and spots are in original
(not log) units unless a parameter is called ``k`` or ``x``.
"""
from __future__ import annotations

import cmath
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import gammaincc, ive

from .blackscholes import BSContext, bs_price, implied_vol
from .errors import BranchInstability, NoConvergence
from .models import ModelSpec

QUAD_EPSABS = 1e-13
QUAD_EPSREL = 1e-12
MC_BLOCK = 10_000
MC_STEPS_PER_YEAR = 400


# CEV ----------------------------------------------------------------------
@dataclass(frozen=True)
class CEVDensityParams:
    sigma: float
    beta: float
    tau: float
    s: float

    def __post_init__(self):
        if not (self.sigma > 0 and 0 < self.beta < 1 and self.tau > 0 and self.s > 0):
            raise ValueError("need sigma > 0, 0 < beta < 1, tau > 0, s > 0")

    @property
    def nu(self) -> float:
        return 1.0 / (2.0 * (1.0 - self.beta))

    @property
    def scale(self) -> float:
        """(1 - beta)^2 sigma^2 tau, the variance of s^(1-beta) per unit."""
        return (1.0 - self.beta) ** 2 * self.sigma ** 2 * self.tau


def bessel_ive(order: float, x: float) -> float:
    """e^(-x) I_order(x); negative non-integer orders are allowed."""
    if x < 0:
        raise ValueError("Bessel argument must be non-negative")
    return float(ive(order, x))


def _log_prefactor(p: CEVDensityParams, S: float) -> float:
    # log of sqrt(s) S^(1/2 - 2 beta) / ((1 - beta) sigma^2 tau); this is the
    # density in S obtained from the squared Bessel transition law
    return (0.5 * math.log(p.s) + (0.5 - 2 * p.beta) * math.log(S)
            - math.log((1 - p.beta) * p.sigma ** 2 * p.tau))


def cev_semidensity(p: CEVDensityParams, S: float, sign: str = "plus") -> float:
    """Gamma_plus (absorbed at 0) or Gamma_minus (reflected), evaluated in log space."""
    if S <= 0:
        raise ValueError("S must be positive")
    if sign not in ("plus", "minus"):
        raise ValueError("sign must be 'plus' or 'minus'")
    order = p.nu if sign == "plus" else -p.nu
    a, b = p.s ** (1 - p.beta), S ** (1 - p.beta)
    x = a * b / p.scale
    bes = bessel_ive(order, x)
    if bes <= 0.0:
        return 0.0
    return math.exp(_log_prefactor(p, S) - (a - b) ** 2 / (2 * p.scale) + math.log(bes))


def _u_integral(p: CEVDensityParams, fn, lower_S: float = 0.0, sign: str = "plus") -> float:
    """int fn(S) Gamma(S) dS over (lower_S, inf), integrated in u = S^(1 - beta)."""
    g = 1.0 - p.beta
    a, width = p.s ** g, math.sqrt(p.scale)
    lo = max(lower_S ** g, 0.0)
    hi = a + 40.0 * width
    if lo >= hi:
        return 0.0

    def integrand(u):
        if u <= 0.0:
            return 0.0
        S = u ** (1.0 / g)
        return fn(S) * cev_semidensity(p, S, sign) * S / (g * u)

    pts = sorted({max(lo, a - k * width) for k in (8, 4, 2, 1, 0)} | {a + k * width for k in (1, 2, 4, 8)})
    pts = [q for q in pts if lo < q < hi]
    val, err = integrate.quad(integrand, lo, hi, points=pts or None, limit=400,
                              epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL)
    if not math.isfinite(val):
        raise NoConvergence("CEV density quadrature failed")
    return val


def cev_total_mass(p: CEVDensityParams, sign: str = "plus") -> float:
    return _u_integral(p, lambda S: 1.0, sign=sign)


def cev_absorption_probability(p: CEVDensityParams) -> float:
    """Closed-form mass absorbed at the origin by time tau."""
    return float(gammaincc(p.nu, p.s ** (2 * (1 - p.beta)) / (2 * p.scale)))


def cev_call_price(p: CEVDensityParams, K: float) -> float:
    """int (S - K)^+ Gamma_plus(S) dS."""
    if K <= 0:
        raise ValueError("strike must be positive")
    return _u_integral(p, lambda S: S - K, lower_S=K)


# Heston -------------------------------------------------------------------
@dataclass(frozen=True)
class HestonParams:
    kappa: float
    theta: float
    rho: float
    y: float
    delta: float = 1.0

    def __post_init__(self):
        if not (self.kappa > 0 and self.theta > 0 and self.delta > 0 and self.y >= 0 and -1 < self.rho < 1):
            raise ValueError("invalid Heston parameters")


def heston_cf(p: HestonParams, u: float, xi: complex, eta: complex = 0.0, x: float = 0.0,
              track_branch: bool = False) -> complex:
    """E[exp(i xi X_T - eta Y_T)] with X = log S and u = T - t.

    Written as exp(i xi x - y A) B with A, B, g, a, b, D as in the Riccati
    solution; for delta != 1 the standard rescaling by delta^2 is applied.
    """
    if u < 0:
        raise ValueError("u must be non-negative")
    if xi == 0 and eta == 0:
        return 1.0 + 0.0j
    k, th, r, d2 = p.kappa, p.theta, p.rho, p.delta ** 2
    c = 1j * xi * r * p.delta - k
    D = cmath.sqrt(c * c + d2 * xi * (xi + 1j))
    # a = c + D, written to avoid cancellation when delta is small; Re(D - c) >= kappa
    a = d2 * xi * (xi + 1j) / (D - c)
    b = c - D
    g = (a - d2 * eta) / (b - d2 * eta)
    e = cmath.exp(-D * u)
    # A = (b g e - a) / (delta^2 (g e - 1)); numerator rewritten with a b = -delta^2 xi (xi + i)
    num = (-xi * (xi + 1j) * (e - 1.0) - eta * (b * e - a)) / (b - d2 * eta)
    A = num / (g * e - 1.0)
    # log((g - 1) / (g e - 1)) = log(1 + g (1 - e) / (g e - 1))
    log_ratio = _log1p(g * (1.0 - e) / (g * e - 1.0))
    if track_branch:
        _check_branch(g, D, u, log_ratio)
    B = cmath.exp(-k * th * a * u / d2 + (2 * k * th / d2) * log_ratio)
    return cmath.exp(1j * xi * x - p.y * A) * B


def _log1p(z: complex) -> complex:
    w = 1.0 + z
    if w == 1.0:
        return z
    return cmath.log(w) * z / (w - 1.0)


def _check_branch(g, D, u, log_ratio, steps: int = 64):
    """Follow log((g - 1)/(g e^{-Ds} - 1)) for s in [0, u]; a 2 pi jump means the principal branch is wrong."""
    prev = 0.0
    for i in range(1, steps + 1):
        cur = cmath.log((g - 1.0) / (g * cmath.exp(-D * u * i / steps) - 1.0)).imag
        if abs(cur - prev) > math.pi:
            raise BranchInstability(f"log branch jump at s={u * i / steps}")
        prev = cur
    if abs(prev - log_ratio.imag) > 1e-12:
        raise BranchInstability("tracked log differs from principal value")


def heston_call_price(p: HestonParams, tau: float, x: float, k: float, damping: float = 0.5) -> float:
    """Call price by Fourier inversion on the contour Im z = damping, 0 < damping < 1.

    C = e^x - (1/pi) int_0^inf Re[ e^{i z k} phi(-z) K / (z^2 - i z) ] du,  z = u + i damping,
    where the second term is the covered call E[min(S_T, K)].
    """
    if tau <= 0:
        raise ValueError("need tau > 0")
    if not 0 < damping < 1:
        raise ValueError("damping must lie in (0, 1)")
    K = math.exp(k)

    def integrand(v):
        z = complex(v, damping)
        phi = heston_cf(p, tau, -z, 0.0, x)
        return (cmath.exp(1j * z * k) * phi * K / (z * z - 1j * z)).real

    with warnings.catch_warnings():
        # roundoff notices from quad on chunks far in the tail are harmless
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        return math.exp(x) - _fourier_integral(integrand, p, tau) / math.pi


def _fourier_integral(integrand, p: HestonParams, tau: float) -> float:
    width = 4.0 / max(math.sqrt(max(p.y, p.theta) * tau), 1e-3)
    total, lo = 0.0, 0.0
    for _ in range(2000):
        piece, _err = integrate.quad(integrand, lo, lo + width, limit=200,
                                     epsabs=QUAD_EPSABS * 0.1, epsrel=QUAD_EPSREL)
        total += piece
        lo += width
        if abs(piece) < 1e-17 * max(1.0, abs(total)) and lo > 4 * width:
            break
    else:
        raise NoConvergence("Heston Fourier integral did not decay")
    return total


# Monte Carlo ----------------------------------------------------------------
def _batched_cholesky(A):
    """Lower-triangular L with L L^T = A per path; negative pivots floored at 0."""
    d = len(A)
    n = np.shape(A[0][0])[0]
    L = [[np.zeros(n) for _ in range(d)] for _ in range(d)]
    for j in range(d):
        diag = A[j][j] - sum(L[j][k] ** 2 for k in range(j))
        L[j][j] = np.sqrt(np.maximum(diag, 0.0))
        safe = np.where(L[j][j] > 0.0, L[j][j], 1.0)
        for i in range(j + 1, d):
            off = A[i][j] - sum(L[i][k] * L[j][k] for k in range(j))
            L[i][j] = np.where(L[j][j] > 0.0, off / safe, 0.0)
    return L


def _mc_block(model: ModelSpec, T: float, K: float, steps: int, n: int, seed_seq) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(seed_seq))
    d = model.dim
    dt = T / steps
    sq = math.sqrt(dt)
    S = np.full(n, model.spot[0])
    ys = [np.full(n, float(v)) for v in model.spot[1:]]
    floors = list(model.factor_floors) + [None] * (d - 1 - len(model.factor_floors))
    alive = np.ones(n, dtype=bool)
    for i in range(steps):
        t = i * dt
        ys_eval = [y if f is None else np.maximum(y, f) for y, f in zip(ys, floors)]
        A, v = model.abar_paths(t, np.maximum(S, 0.0), ys_eval)
        L = _batched_cholesky(A)
        Z = rng.standard_normal((d, n))
        dS = L[0][0] * Z[0] * sq + v[0] * dt
        new_ys = []
        for j in range(1, d):
            dW = sum(L[j][k] * Z[k] for k in range(j + 1)) * sq
            new_ys.append(ys[j - 1] + v[j] * dt + dW)
        S = np.where(alive, S + dS, 0.0)
        alive &= S > 0.0
        S = np.where(alive, S, 0.0)
        ys = new_ys
    return np.maximum(S - K, 0.0)


def mc_price(model: ModelSpec, T: float, K: float, paths: int = 100_000, steps: int | None = None,
             seed: int = 0, threads: int | None = None) -> tuple[float, float]:
    """Euler-Maruyama call price and standard error; reproducible for a given seed."""
    if paths < 1 or T <= 0 or K <= 0:
        raise ValueError("need paths >= 1, T > 0, K > 0")
    steps = steps or max(int(math.ceil(MC_STEPS_PER_YEAR * T)), 20)
    sizes = [MC_BLOCK] * (paths // MC_BLOCK) + ([paths % MC_BLOCK] if paths % MC_BLOCK else [])
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    threads = threads or int(os.environ.get("IVEXPAND_THREADS", "1"))
    jobs = [(model, T, K, steps, n, s) for n, s in zip(sizes, seeds)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            blocks = list(pool.map(lambda a: _mc_block(*a), jobs))
    else:
        blocks = [_mc_block(*a) for a in jobs]
    payoff = np.concatenate(blocks)
    if np.all(payoff == payoff[0]):
        # degenerate (deterministic) payoff: avoid rounding noise in mean and std
        return float(payoff[0]), 0.0
    se = float(payoff.std(ddof=1) / math.sqrt(len(payoff)))
    return float(payoff.mean()), se


# reference implied vols -------------------------------------------------------
def reference_price(model: ModelSpec, T: float, k: float, method: str | None = None, **opts) -> float:
    """Reference call price at log-strike k, maturity T (valuation time 0)."""
    method = method or model.name
    pr = model.params
    if method == "bs":
        return bs_price(BSContext(pr["sigma"], T, math.log(model.spot[0]), k))
    if method == "displaced":
        a = pr["shift"]
        return bs_price(BSContext(pr["sigma"], T, math.log(model.spot[0] + a), math.log(math.exp(k) + a)))
    if method == "cev":
        return cev_call_price(CEVDensityParams(pr["sigma"], pr["beta"], T, model.spot[0]), math.exp(k))
    if method == "heston":
        hp = HestonParams(pr["kappa"], pr["theta"], pr["rho"], model.spot[1], pr["delta"])
        return heston_call_price(hp, T, math.log(model.spot[0]), k, **opts)
    if method == "mc":
        return mc_price(model, T, math.exp(k), **opts)[0]
    raise ValueError(f"no reference pricer {method!r} for model {model.name}")


def reference_iv(model: ModelSpec, T: float, k: float, method: str | None = None, **opts) -> float:
    price = reference_price(model, T, k, method, **opts)
    return implied_vol(price, T, math.log(model.spot[0]), k)
