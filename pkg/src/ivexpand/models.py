"""Model registry: generator coefficients, log-coordinate transform, Taylor data.

A model is described by the coefficients of its generator in original
coordinates (s, y_2, ..., y_d),

    A = 1/2 sum abar_ij(t, s, y) d_ij + sum abar_i(t, s, y) d_i,

with abar_1 = 0 (zero rates). Everything downstream works in log
coordinates z = (x, y) with x = log s.

When the coefficient callbacks accept sympy symbols the model keeps exact
expressions and differentiates them symbolically; otherwise spatial
derivatives come from Richardson-extrapolated central differences.
"""
from __future__ import annotations

import configparser
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import sympy as sp

from .errors import DerivativeUnavailable

MAX_TAYLOR_ORDER = 6
T_SYM = sp.Symbol("t", real=True)
S_SYM = sp.Symbol("s", positive=True)
X_SYM = sp.Symbol("x", real=True)


def _factor_symbols(dim):
    return tuple(sp.Symbol(f"y{i}", real=True) for i in range(2, dim + 1))


def log_transform(abar: Callable, dim: int, exp: Callable = math.exp) -> Callable:
    """Map original-coordinate coefficients to log coordinates.

    a_11 = e^{-2x} abar_11, a_1 = -a_11 / 2, a_1i = e^{-x} abar_1i,
    a_ij = abar_ij, a_i = abar_i (i, j >= 2). Pass ``exp=sympy.exp`` for
    symbolic use.
    """

    def a(t, z):
        x, ys = z[0], tuple(z[1:])
        A_bar, v_bar = abar(t, exp(x), ys)
        A = [[None] * dim for _ in range(dim)]
        v = [None] * dim
        em2x, emx = exp(-2 * x), exp(-x)
        A[0][0] = em2x * A_bar[0][0]
        v[0] = -A[0][0] / 2
        for i in range(1, dim):
            A[0][i] = A[i][0] = emx * A_bar[0][i]
            v[i] = v_bar[i]
            for j in range(1, dim):
                A[i][j] = A_bar[i][j]
        return A, v

    return a


@dataclass
class TaylorTensor:
    """D^beta a_alpha(t, zbar) for |beta| <= order.

    ``entries[beta] = (matrix of D^beta a_ij, vector of D^beta a_i)``.
    """

    dim: int
    center: tuple
    t: float
    order: int
    entries: dict

    def second_order(self, beta) -> dict:
        A, _ = self._get(beta)
        return {(i, j): float(A[i, j]) for i in range(self.dim) for j in range(i, self.dim)}

    def first_order(self, beta) -> list:
        _, v = self._get(beta)
        return [float(c) for c in v]

    def _get(self, beta):
        beta = tuple(beta)
        if sum(beta) > self.order:
            raise KeyError(f"|beta| = {sum(beta)} beyond stored order {self.order}")
        return self.entries[beta]

    def __getitem__(self, key):
        """tensor[(alpha, beta)] with alpha = (i, j) or (i,), zero-based."""
        alpha, beta = key
        A, v = self._get(beta)
        return float(A[alpha[0], alpha[1]]) if len(alpha) == 2 else float(v[alpha[0]])


@dataclass(eq=False)
class ModelSpec:
    """Immutable description of a diffusion model for the expansion.

    Attributes:
        name: registry name.
        dim: number of state variables d (price first).
        abar: callable (t, s, ys) -> (matrix, vector) in original coordinates.
        spot: current state (s, y_2, ..., y_d) in original coordinates.
        radius: radius r of the validity cylinder around the log spot.
        time_homogeneous: whether the coefficients are free of t.
        ellipticity: declared (eps, M) for the log-coordinate diffusion matrix.
        factor_floors: lower bound per factor y_i (None if unbounded); used
            for full truncation in Monte Carlo.
        horizon: T_0, the largest maturity the model is meant for.
    """

    name: str
    dim: int
    abar: Callable
    spot: tuple
    radius: float
    time_homogeneous: bool
    params: dict = field(default_factory=dict)
    ellipticity: tuple = (None, None)
    factor_floors: tuple = ()
    horizon: float = 1.0
    closed_form: Callable | None = None
    abar_vectorized: Callable | None = None
    _sym: dict | None = field(default=None, repr=False)
    _lambdas: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._coeff = log_transform(self.abar, self.dim)

    # geometry ---------------------------------------------------------
    @property
    def z0(self) -> tuple:
        return (math.log(self.spot[0]),) + tuple(float(y) for y in self.spot[1:])

    @property
    def M(self) -> float:
        return self.ellipticity[1]

    def in_cylinder(self, z) -> bool:
        z0 = self.z0
        if abs(z[0] - z0[0]) >= self.radius:
            return False
        if self.dim > 1:
            dy = np.asarray(z[1:], float) - np.asarray(z0[1:], float)
            return float(np.linalg.norm(dy)) < self.radius
        return True

    # coefficients -----------------------------------------------------
    def coefficients(self, t: float, z) -> tuple[np.ndarray, np.ndarray]:
        """Log-coordinate (a_ij, a_i) at (t, z)."""
        A, v = self._coeff(t, tuple(z))
        return np.array(A, dtype=float), np.array(v, dtype=float)

    @property
    def symbolic(self) -> bool:
        return self._sym is not None

    def derivative(self, t: float, z, beta, numeric: bool = False):
        """D^beta of the log-coordinate coefficients at (t, z)."""
        beta = tuple(beta)
        if sum(beta) == 0:
            return self.coefficients(t, z)
        if not numeric and self._sym is not None:
            return self._symbolic_derivative(t, z, beta)
        if not numeric and self.closed_form is not None:
            A, v = self.closed_form(t, tuple(z), beta)
            return np.array(A, float), np.array(v, float)
        return _numeric_derivative(lambda zz: self.coefficients(t, zz), tuple(z), beta, self.dim,
                                   max_step=2.0 * self.radius / sum(beta))

    def _symbolic_derivative(self, t, z, beta):
        fn = self._lambdas.get(beta)
        if fn is None:
            syms = self._sym["symbols"]
            mats, vec = self._sym["A"], self._sym["v"]
            d = self.dim
            exprs = []
            for e in [mats[i][j] for i in range(d) for j in range(d)] + list(vec):
                for s_, b in zip(syms, beta):
                    if b:
                        e = sp.diff(e, s_, b)
                exprs.append(e)
            fn = sp.lambdify((T_SYM,) + syms, exprs, modules="math")
            self._lambdas[beta] = fn
        vals = np.array(fn(t, *z), dtype=float)
        d = self.dim
        return vals[: d * d].reshape(d, d), vals[d * d:]

    def abar_paths(self, t: float, s: np.ndarray, ys: Sequence[np.ndarray]):
        """Original-coordinate coefficients evaluated on arrays of states."""
        if self.abar_vectorized is not None:
            A, v = self.abar_vectorized(t, s, *ys)
            shape = np.shape(s)
            A = [[np.broadcast_to(np.asarray(c, float), shape) for c in row] for row in A]
            v = [np.broadcast_to(np.asarray(c, float), shape) for c in v]
            return A, v
        n = len(s)
        d = self.dim
        A = [[np.empty(n) for _ in range(d)] for _ in range(d)]
        v = [np.empty(n) for _ in range(d)]
        for p in range(n):
            Ap, vp = self.abar(t, float(s[p]), tuple(float(y[p]) for y in ys))
            for i in range(d):
                v[i][p] = vp[i]
                for j in range(d):
                    A[i][j][p] = Ap[i][j]
        return A, v

    # validation -------------------------------------------------------
    def ellipticity_witness(self, samples: int = 200, seed: int = 0, t: float = 0.0) -> bool:
        """Sample the cylinder and check eps*M <= eig(a) <= M."""
        eps, M = self.ellipticity
        rng = np.random.default_rng(seed)
        z0 = np.asarray(self.z0)
        for _ in range(samples):
            z = z0.copy()
            z[0] += rng.uniform(-1, 1) * self.radius
            if self.dim > 1:
                direction = rng.normal(size=self.dim - 1)
                direction /= np.linalg.norm(direction)
                z[1:] += direction * self.radius * rng.uniform() ** (1.0 / (self.dim - 1))
            A, _ = self.coefficients(t, z)
            eig = np.linalg.eigvalsh(A)
            if eig.min() < eps * M * (1 - 1e-12) or eig.max() > M * (1 + 1e-12):
                return False
        return True


def _declared_ellipticity(model: ModelSpec, t: float = 0.0, grid: int = 9) -> tuple[float, float]:
    """Scan the closed cylinder on a product grid; small safety margins."""
    z0 = np.asarray(model.z0)
    axes = [np.linspace(-1.0, 1.0, grid)] * model.dim
    lo, hi = math.inf, 0.0
    for offs in itertools.product(*axes):
        offs = np.array(offs)
        if model.dim > 1 and np.linalg.norm(offs[1:]) > 1.0:
            continue
        A, _ = model.coefficients(t, z0 + offs * model.radius)
        eig = np.linalg.eigvalsh(A)
        lo, hi = min(lo, eig.min()), max(hi, eig.max())
    if lo <= 0.0:
        raise ValueError(f"model {model.name} is not elliptic on its cylinder")
    M = 1.01 * hi
    return 0.99 * lo / M, M


def _numeric_derivative(fn, z, beta, dim, check_rtol: float = 1e-6, max_step: float = math.inf):
    """Tensor central differences with three Richardson steps and a self-check.

    The estimate from the step ladder h, h/2, h/4, h/8 must agree with the one
    from 0.75 h to check_rtol (relative to the coefficient scale). The stencil
    reaches at most order * h / 2 from z, so h is capped by max_step.
    """
    order = sum(beta)
    base_A, base_v = fn(z)
    scale = max(np.max(np.abs(base_A)), np.max(np.abs(base_v)), 1e-300)
    h0 = 4.0 * np.finfo(float).eps ** (1.0 / (order + 8)) * max(1.0, max(abs(c) for c in z))
    h0 = min(h0, max_step)

    def stencil(h):
        acc_A = np.zeros((dim, dim))
        acc_v = np.zeros(dim)
        per_axis = []
        for b in beta:
            per_axis.append([((b / 2.0 - k) * h, (-1) ** k * math.comb(b, k)) for k in range(b + 1)])
        for combo in itertools.product(*per_axis):
            zz = tuple(zi + off for zi, (off, _) in zip(z, combo))
            w = math.prod(c for _, c in combo)
            A, v = fn(zz)
            acc_A += w * A
            acc_v += w * v
        return acc_A / h ** order, acc_v / h ** order

    def ladder(h):
        D = [stencil(h / 2 ** i) for i in range(4)]
        for j in range(1, 4):
            D = [[(4 ** j * b - a) / (4 ** j - 1) for a, b in zip(lo, hi)] for lo, hi in zip(D, D[1:])]
        return D[0]

    est, check = ladder(h0), ladder(0.75 * h0)
    for a, b in zip(est, check):
        if np.any(np.abs(a - b) > check_rtol * np.maximum(np.abs(a), scale)):
            raise DerivativeUnavailable(f"finite differences for beta={beta} disagree")
    return est[0], est[1]


def taylor_tensor(model: ModelSpec, t: float, zbar, order: int, numeric: bool = False) -> TaylorTensor:
    """All D^beta a(t, zbar) with |beta| <= order."""
    zbar = tuple(float(c) for c in zbar)
    if order > MAX_TAYLOR_ORDER:
        raise ValueError(f"Taylor order capped at {MAX_TAYLOR_ORDER}")
    if not model.in_cylinder(zbar):
        raise ValueError(f"expansion point {zbar} outside the validity cylinder of {model.name}")
    entries = {}
    for n in range(order + 1):
        for beta in _multi_indices(model.dim, n):
            entries[beta] = model.derivative(t, zbar, beta, numeric=numeric)
    return TaylorTensor(model.dim, zbar, t, order, entries)


def _multi_indices(dim, order):
    if dim == 1:
        yield (order,)
        return
    for first in range(order, -1, -1):
        for rest in _multi_indices(dim - 1, order - first):
            yield (first,) + rest


# construction ---------------------------------------------------------
def _try_symbolic(abar, dim):
    """Run abar on sympy symbols; None if the callback is not symbolic-friendly."""
    ys = _factor_symbols(dim)
    try:
        A_bar, v_bar = abar(T_SYM, S_SYM, ys)
        A_bar = [[sp.sympify(c) for c in row] for row in A_bar]
        v_bar = [sp.sympify(c) for c in v_bar]
    except (TypeError, ValueError, AttributeError, sp.SympifyError):
        return None
    A_log, v_log = log_transform(lambda t, s, y: (_subs_matrix(A_bar, s, ys, y), _subs_vector(v_bar, s, ys, y)),
                                 dim, exp=sp.exp)(T_SYM, (X_SYM,) + ys)
    A_log = [[sp.powsimp(sp.expand_power_base(sp.sympify(c), force=True), force=True) for c in row]
             for row in A_log]
    v_log = [sp.powsimp(sp.expand_power_base(sp.sympify(c), force=True), force=True) for c in v_log]
    free = set().union(*(e.free_symbols for row in A_log for e in row), *(e.free_symbols for e in v_log))
    vec = sp.lambdify((T_SYM, S_SYM) + ys, (A_bar, v_bar), modules="numpy")
    return {
        "symbols": (X_SYM,) + ys,
        "A": A_log,
        "v": v_log,
        "homogeneous": T_SYM not in free,
        "vectorized": vec,
    }


def _subs_matrix(A_bar, s, ys, y):
    sub = {S_SYM: s, **dict(zip(ys, y))}
    return [[c.subs(sub) for c in row] for row in A_bar]


def _subs_vector(v_bar, s, ys, y):
    sub = {S_SYM: s, **dict(zip(ys, y))}
    return [c.subs(sub) for c in v_bar]


def custom_model(name: str, abar: Callable, dim: int, spot: Sequence[float], radius: float,
                 params: dict | None = None, time_homogeneous: bool | None = None,
                 closed_form: Callable | None = None, factor_floors: Sequence | None = None,
                 horizon: float = 1.0, ellipticity: tuple | None = None) -> ModelSpec:
    """Build a ModelSpec from original-coordinate coefficient callbacks."""
    sym = _try_symbolic(abar, dim)
    if sym is not None:
        lam = sp.lambdify((T_SYM, X_SYM) + _factor_symbols(dim), (sym["A"], sym["v"]), modules="math")

        def abar_eval(t, s, ys, _f=sym["vectorized"]):
            A, v = _f(t, s, *ys)
            return [[float(c) for c in row] for row in A], [float(c) for c in v]

        numeric_abar = abar_eval
        homogeneous = sym["homogeneous"]
        vectorized = sym["vectorized"]
    else:
        numeric_abar = abar
        homogeneous = bool(time_homogeneous) if time_homogeneous is not None else False
        vectorized = None
    model = ModelSpec(
        name=name, dim=dim, abar=numeric_abar, spot=tuple(float(c) for c in spot), radius=float(radius),
        time_homogeneous=homogeneous if time_homogeneous is None else bool(time_homogeneous),
        params=dict(params or {}), factor_floors=tuple(factor_floors or (None,) * (dim - 1)),
        horizon=horizon, closed_form=closed_form, abar_vectorized=vectorized, _sym=sym,
    )
    if sym is not None:
        model._coeff = lambda t, z, _l=lam: _l(t, *z)
    model.ellipticity = ellipticity or _declared_ellipticity(model)
    return model


def builtin_bs(sigma: float, s0: float = 1.0, radius: float = 1.0) -> ModelSpec:
    """Black-Scholes dS = sigma S dW; every correction vanishes."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return custom_model("bs", lambda t, s, y: ([[sigma ** 2 * s ** 2]], [0]), 1, (s0,), radius,
                        params={"sigma": sigma, "s0": s0})


def builtin_cev(sigma: float, beta: float, s0: float = 1.0, radius: float = 0.5) -> ModelSpec:
    """dS = sigma S^beta dW, 0 < beta < 1."""
    if not sigma > 0:
        raise ValueError("CEV needs sigma > 0")
    if not 0 < beta < 1:
        raise ValueError("CEV needs 0 < beta < 1")
    b = sp.Rational(str(beta)) if isinstance(beta, float) else beta
    return custom_model("cev", lambda t, s, y: ([[sigma ** 2 * s ** (2 * b)]], [0]), 1, (s0,), radius,
                        params={"sigma": sigma, "beta": beta, "s0": s0})


def builtin_heston(kappa: float, theta: float, delta: float, rho: float, s0: float = 1.0,
                   y0: float | None = None, radius: float | None = None) -> ModelSpec:
    """Heston: dS = S sqrt(Y) dW1, dY = kappa (theta - Y) dt + delta sqrt(Y) dW2."""
    if not (kappa > 0 and theta > 0 and delta > 0):
        raise ValueError("Heston needs kappa, theta, delta > 0")
    if not -1 < rho < 1:
        raise ValueError("Heston needs rho in (-1, 1)")
    y0 = theta if y0 is None else y0
    if y0 <= 0:
        raise ValueError("Heston needs y0 > 0")
    radius = 0.5 * y0 if radius is None else radius
    if radius >= y0:
        raise ValueError("cylinder must stay inside y > 0")

    def abar(t, s, ys):
        y = ys[0]
        return ([[y * s ** 2, rho * delta * y * s], [rho * delta * y * s, delta ** 2 * y]],
                [0, kappa * (theta - y)])

    return custom_model("heston", abar, 2, (s0, y0), radius,
                        params={"kappa": kappa, "theta": theta, "delta": delta, "rho": rho,
                                "s0": s0, "y0": y0},
                        factor_floors=(0.0,))


def builtin_displaced(sigma: float, shift: float, s0: float = 1.0, radius: float = 0.5) -> ModelSpec:
    """Displaced diffusion dS = sigma (S + shift) dW: a local-vol model priced exactly by Black-Scholes on S + shift."""
    if not sigma > 0:
        raise ValueError("displaced diffusion needs sigma > 0")
    if not shift >= 0:
        raise ValueError("displaced diffusion needs shift >= 0")
    return custom_model("displaced", lambda t, s, y: ([[sigma ** 2 * (s + shift) ** 2]], [0]), 1, (s0,),
                        radius, params={"sigma": sigma, "shift": shift, "s0": s0})


def _stirling2(n, k):
    return sum((-1) ** (k - i) * math.comb(k, i) * i ** n for i in range(k + 1)) // math.factorial(k)


def builtin_lv(eta: Callable, eta_derivs: Sequence[Callable] | None = None, s0: float = 1.0,
               radius: float = 0.5, name: str = "lv") -> ModelSpec:
    """Local volatility dS = eta(S) S dW.

    ``eta`` may be sympy-friendly (exact derivatives); otherwise pass
    ``eta_derivs = [eta', eta'', ...]`` for closed-form Taylor data, or
    nothing for finite differences.
    """
    closed = None
    if eta_derivs is not None:
        derivs = [eta] + list(eta_derivs)

        def closed(t, z, beta):
            n = beta[0]
            if n >= len(derivs):
                raise DerivativeUnavailable(f"need {n} derivatives of eta")
            s = math.exp(z[0])
            # g(x) = eta(e^x); D^m g = sum_k S(m, k) s^k eta^(k)(s)
            g = [derivs[0](s)] + [sum(_stirling2(m, k) * s ** k * derivs[k](s) for k in range(1, m + 1))
                                  for m in range(1, n + 1)]
            a11 = sum(math.comb(n, i) * g[i] * g[n - i] for i in range(n + 1))
            return [[a11]], [-0.5 * a11]

    return custom_model(name, lambda t, s, y: ([[eta(s) ** 2 * s ** 2]], [0]), 1, (s0,), radius,
                        params={"s0": s0}, time_homogeneous=None if eta_derivs is None else True,
                        closed_form=closed)


def builtin_lsv(vol_s: Callable, vol_y: Callable, drift_y: Callable, rho: float, s0: float, y0: float,
                radius: float, y_floor: float | None = None, name: str = "lsv") -> ModelSpec:
    """Two-factor LSV: dS = vol_s(S, Y) S dW1, dY = drift_y dt + vol_y dW2, d<W1, W2> = rho dt."""

    def abar(t, s, ys):
        y = ys[0]
        vs, vy = vol_s(s, y), vol_y(s, y)
        return ([[vs ** 2 * s ** 2, rho * vs * vy * s], [rho * vs * vy * s, vy ** 2]],
                [0, drift_y(s, y)])

    return custom_model(name, abar, 2, (s0, y0), radius, params={"rho": rho, "s0": s0, "y0": y0},
                        factor_floors=(y_floor,))


# config / registry ----------------------------------------------------
def _lv_from_expression(eta: str, s0: float = 1.0, radius: float = 0.5):
    """Local vol dS = eta(S) S dW with eta given as an expression in s."""
    expr = sp.sympify(eta, locals={"s": S_SYM})
    return builtin_lv(lambda s: expr.subs(S_SYM, s), s0=s0, radius=radius)


MODEL_REGISTRY = {
    "bs": (builtin_bs, {"sigma": float, "s0": float, "radius": float}),
    "cev": (builtin_cev, {"sigma": float, "beta": float, "s0": float, "radius": float}),
    "heston": (builtin_heston, {"kappa": float, "theta": float, "delta": float, "rho": float,
                                "s0": float, "y0": float, "radius": float}),
    "displaced": (builtin_displaced, {"sigma": float, "shift": float, "s0": float, "radius": float}),
    "lv": (_lv_from_expression, {"eta": str, "s0": float, "radius": float}),
}


def build_model(name: str, **params) -> ModelSpec:
    try:
        builder, schema = MODEL_REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; known: {sorted(MODEL_REGISTRY)}") from None
    unknown = set(params) - set(schema)
    if unknown:
        raise ValueError(f"unknown parameters for {name}: {sorted(unknown)}")
    return builder(**{k: schema[k](v) for k, v in params.items()})


def read_config(path) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser()
    with open(path) as fh:
        cfg.read_file(fh)
    return cfg


def model_from_config(cfg: configparser.ConfigParser) -> ModelSpec:
    """Build the model described by the ``[model]`` section (``name`` + parameters)."""
    if "model" not in cfg:
        raise ValueError("config has no [model] section")
    section = dict(cfg["model"])
    name = section.pop("name", None)
    if name is None:
        raise ValueError("[model] needs a name")
    return build_model(name, **section)
