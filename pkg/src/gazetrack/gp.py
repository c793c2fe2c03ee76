"""Gaussian-process reward model and GP-UCB gaze selection over a continuous box."""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, special

from .direct import direct_optimize
from .errors import GpFitWarning, SingularGram
from .policies import GazePolicy

JITTER_START = 1e-10
JITTER_MAX = 1e-4


@dataclass(frozen=True)
class GpHyperparams:
    signal_var: float
    noise_var: float
    length_scales: tuple

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.length_scales))
        object.__setattr__(self, "length_scales", ls)
        if not (self.signal_var > 0 and self.noise_var > 0 and all(v > 0 for v in ls)):
            raise ValueError("hyperparameters must be strictly positive")

    def to_log(self):
        return np.log([self.signal_var, self.noise_var, *self.length_scales])

    @classmethod
    def from_log(cls, phi):
        v = np.exp(np.asarray(phi, dtype=float))
        return cls(float(v[0]), float(v[1]), tuple(v[2:]))


@dataclass(frozen=True)
class ActionDomain:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or not all(a < b for a, b in zip(lo, hi)):
            raise ValueError("domain must be a nonempty box")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def square(cls, half_width, dim=2):
        return cls((-half_width,) * dim, (half_width,) * dim)

    @property
    def sides(self):
        return np.subtract(self.upper, self.lower)

    @property
    def center(self):
        return 0.5 * (np.asarray(self.lower) + np.asarray(self.upper))

    @property
    def diagonal(self):
        return float(np.linalg.norm(self.sides))

    def contains(self, point):
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.lower) and np.all(p <= self.upper))

    def clip(self, point):
        return np.clip(np.asarray(point, dtype=float), self.lower, self.upper)


@dataclass(frozen=True)
class HyperPriors:
    """Student-t priors on each length scale (truncated to > 0); uniform on the variances."""

    nu: float = 4.0
    length_loc: tuple = (0.25,)
    length_scale: tuple = (0.25,)
    signal_var_bounds: tuple = (1e-4, 10.0)
    noise_var_bounds: tuple = (1e-6, 1.0)
    length_bounds: tuple = (1e-3, 1e3)

    def __post_init__(self):
        if not (self.nu > 0 and all(s > 0 for s in self.length_scale)):
            raise ValueError("Student-t nu and scale must be > 0")
        for lo, hi in (self.signal_var_bounds, self.noise_var_bounds, self.length_bounds):
            if not 0 < lo < hi:
                raise ValueError("prior bounds must be positive and ordered")

    @classmethod
    def for_domain(cls, domain, nu=4.0, **kw):
        sides = domain.sides
        kw.setdefault("length_bounds", (float(sides.min()) / 100.0, float(sides.max()) * 10.0))
        return cls(
            nu=nu,
            length_loc=tuple(0.25 * sides),
            length_scale=tuple(sides / 4.0),
            **kw,
        )

    def log_bounds(self, dim):
        lo = [math.log(self.signal_var_bounds[0]), math.log(self.noise_var_bounds[0])]
        hi = [math.log(self.signal_var_bounds[1]), math.log(self.noise_var_bounds[1])]
        lo += [math.log(self.length_bounds[0])] * dim
        hi += [math.log(self.length_bounds[1])] * dim
        return np.array(lo), np.array(hi)

    def _expand(self, vals, dim):
        vals = tuple(vals)
        return np.array(vals * dim if len(vals) == 1 else vals, dtype=float)

    def in_support(self, theta):
        sv, nv = theta.signal_var, theta.noise_var
        a, b = self.signal_var_bounds
        c, d = self.noise_var_bounds
        # exp(log(b)) may round just past a bound that the optimizer hits exactly
        tol = 1e-9
        return (
            a * (1 - tol) <= sv <= b * (1 + tol)
            and c * (1 - tol) <= nv <= d * (1 + tol)
            and all(v > 0 for v in theta.length_scales)
        )

    def log_density(self, theta):
        """Log prior density and its gradient with respect to log-parameters."""
        dim = len(theta.length_scales)
        grad = np.zeros(2 + dim)
        if not self.in_support(theta):
            return -np.inf, grad
        a, b = self.signal_var_bounds
        c, d = self.noise_var_bounds
        value = -math.log(b - a) - math.log(d - c)
        nu = self.nu
        loc = self._expand(self.length_loc, dim)
        scale = self._expand(self.length_scale, dim)
        ell = np.asarray(theta.length_scales)
        u = (ell - loc) / scale
        log_norm = (
            special.gammaln((nu + 1) / 2)
            - special.gammaln(nu / 2)
            - 0.5 * math.log(nu * math.pi)
            - np.log(scale)
        )
        # renormalize the truncation to ell > 0
        log_mass = np.log(special.stdtr(nu, loc / scale))
        value += float(np.sum(log_norm - log_mass - (nu + 1) / 2 * np.log1p(u * u / nu)))
        dlog_dell = -(nu + 1) / (nu * scale) * u / (1 + u * u / nu)
        grad[2:] = dlog_dell * ell
        return value, grad


def se_kernel(a, b, theta):
    """Squared-exponential covariance; ``a`` (M, D) and ``b`` (P, D) give (M, P)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    ell = np.asarray(theta.length_scales)
    diff = (a[:, None, :] - b[None, :, :]) / ell
    out = theta.signal_var * np.exp(-0.5 * np.sum(diff * diff, axis=-1))
    return out


def se_kernel_value(a, b, theta):
    return float(se_kernel(a, b, theta)[0, 0])


def _factorize(gram, signal_var, jitter_start=JITTER_START):
    """Cholesky of ``gram + jitter*signal_var*I`` with escalating jitter."""
    n = gram.shape[0]
    jitter = jitter_start
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            L = linalg.cholesky(gram + jitter * signal_var * np.eye(n), lower=True)
            return L, jitter
        except linalg.LinAlgError:
            jitter *= 10.0
    raise SingularGram("gram matrix is not positive definite after jitter escalation")


@dataclass
class GpModel:
    """Observed (action, reward) pairs with a cached Cholesky factor."""

    hyper: GpHyperparams
    X: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    y: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float)).reshape(-1, len(self.hyper.length_scales))
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        self.jitter = JITTER_START
        self.refactor()

    @property
    def n(self):
        return self.y.size

    def gram(self):
        """``K + sigma_n^2 I`` without jitter."""
        K = se_kernel(self.X, self.X, self.hyper)
        return K + self.hyper.noise_var * np.eye(self.n)

    def refactor(self, jitter_start=JITTER_START):
        if self.n == 0:
            self.L = np.zeros((0, 0))
            self.alpha = np.zeros(0)
            self.jitter = jitter_start
            return
        self.L, self.jitter = _factorize(self.gram(), self.hyper.signal_var, jitter_start)
        self._solve_alpha()

    def _solve_alpha(self):
        tmp = linalg.solve_triangular(self.L, self.y, lower=True)
        self.alpha = linalg.solve_triangular(self.L.T, tmp, lower=False)

    def set_hyper(self, hyper):
        old = self.hyper
        self.hyper = hyper
        try:
            self.refactor()
        except SingularGram:
            self.hyper = old
            self.refactor()
            raise

    def add(self, action, reward):
        """Insert one observation with a rank-1 extension of the factor."""
        a = np.asarray(action, dtype=float).reshape(1, -1)
        if self.n == 0:
            self.X = a
            self.y = np.array([float(reward)])
            self.refactor(self.jitter)
            return
        k = se_kernel(self.X, a, self.hyper)[:, 0]
        kss = self.hyper.signal_var + self.hyper.noise_var + self.jitter * self.hyper.signal_var
        row = linalg.solve_triangular(self.L, k, lower=True)
        d2 = kss - row @ row
        self.X = np.vstack([self.X, a])
        self.y = np.append(self.y, float(reward))
        if d2 <= 1e-14 * kss:
            self.refactor(self.jitter)
            return
        n = self.n
        L = np.zeros((n, n))
        L[: n - 1, : n - 1] = self.L
        L[n - 1, : n - 1] = row
        L[n - 1, n - 1] = math.sqrt(d2)
        self.L = L
        self._solve_alpha()

    def predict(self, A):
        """Posterior mean and variance at each row of ``A``."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        prior = np.full(A.shape[0], self.hyper.signal_var)
        if self.n == 0:
            return np.zeros(A.shape[0]), prior
        Ks = se_kernel(self.X, A, self.hyper)  # (n, M)
        mean = Ks.T @ self.alpha
        v = linalg.solve_triangular(self.L, Ks, lower=True)
        var = prior - np.sum(v * v, axis=0)
        return mean, np.maximum(var, 0.0)


def gp_posterior(model, a):
    mean, var = model.predict(np.asarray(a, dtype=float).reshape(1, -1))
    return float(mean[0]), float(var[0])


def log_marginal_likelihood(X, y, theta, jitter=JITTER_START):
    """GP log evidence and its gradient in log-parameter space.

    The jitter term ``jitter * signal_var`` is differentiated along with the
    signal variance so the gradient is exact for the matrix that is factored.
    """
    X = np.atleast_2d(X)
    y = np.asarray(y, dtype=float)
    n = y.size
    dim = len(theta.length_scales)
    if n == 0:
        return 0.0, np.zeros(2 + dim)
    K = se_kernel(X, X, theta)
    Ky = K + (theta.noise_var + jitter * theta.signal_var) * np.eye(n)
    try:
        L = linalg.cholesky(Ky, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularGram(str(exc)) from exc
    alpha = linalg.cho_solve((L, True), y)
    value = -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * math.log(2 * math.pi)
    Kinv = linalg.cho_solve((L, True), np.eye(n))
    inner = np.outer(alpha, alpha) - Kinv
    grad = np.empty(2 + dim)
    grad[0] = 0.5 * np.sum(inner * (K + jitter * theta.signal_var * np.eye(n)))
    grad[1] = 0.5 * theta.noise_var * np.trace(inner)
    ell = np.asarray(theta.length_scales)
    for k in range(dim):
        sq = (X[:, None, k] - X[None, :, k]) ** 2 / ell[k] ** 2
        grad[2 + k] = 0.5 * np.sum(inner * K * sq)
    return float(value), grad


def log_posterior_hyper(X, y, theta, priors, jitter=JITTER_START):
    """Log marginal likelihood plus log prior; gradient w.r.t. log-parameters."""
    lp, gp = priors.log_density(theta)
    if not np.isfinite(lp):
        return lp, gp
    ll, gl = log_marginal_likelihood(X, y, theta, jitter)
    return ll + lp, gl + gp


def map_fit(model, priors, warmup_count=10, max_iter=200, gtol=1e-6):
    """MAP hyperparameters by bounded quasi-Newton ascent in log space.

    Returns ``model.hyper`` unchanged while fewer than ``warmup_count``
    observations exist. A :class:`GpFitWarning` is emitted and the previous
    hyperparameters returned if the gram matrix becomes singular.
    """
    theta0 = model.hyper
    if model.n < warmup_count:
        return theta0
    dim = len(theta0.length_scales)
    lo, hi = priors.log_bounds(dim)
    phi0 = np.clip(theta0.to_log(), lo, hi)

    def neg(phi):
        theta = GpHyperparams.from_log(phi)
        val, grad = log_posterior_hyper(model.X, model.y, theta, priors)
        if not np.isfinite(val):
            return 1e300, np.zeros_like(phi)
        return -val, -grad

    try:
        res = optimize.minimize(
            neg,
            phi0,
            jac=True,
            method="L-BFGS-B",
            bounds=list(zip(lo, hi)),
            options={"maxiter": max_iter, "gtol": gtol},
        )
    except SingularGram:
        warnings.warn("gram matrix singular during MAP fit; keeping previous hyperparameters", GpFitWarning)
        return theta0
    phi = np.clip(res.x, lo, hi)
    if not np.all(np.isfinite(phi)):
        return theta0
    return GpHyperparams.from_log(phi)


def ucb_beta(t, delta=0.001):
    """Exploration weight ``2 log(t^3 pi^2 / (3 delta))``."""
    if t < 1:
        raise ValueError("t must be >= 1")
    return 2.0 * math.log(t**3 * math.pi**2 / (3.0 * delta))


def ucb_acquire(model, t, domain, delta=0.001, budget=300):
    """Maximize ``m_t(a) + sqrt(beta_t) s_t(a)`` over the domain by DIRECT."""
    root_beta = math.sqrt(ucb_beta(t, delta))

    def acq(A):
        mean, var = model.predict(A)
        return mean + root_beta * np.sqrt(var)

    point, _ = direct_optimize(acq, domain.lower, domain.upper, budget=budget, vectorized=True)
    return domain.clip(point)


def reward_surface(model, domain, n=64):
    """Posterior mean and std on an ``n x n`` grid; rows of ``(x, y, mean, std)``."""
    xs = np.linspace(domain.lower[0], domain.upper[0], n)
    ys = np.linspace(domain.lower[1], domain.upper[1], n)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    mean, var = model.predict(pts)
    return np.column_stack([pts, mean, np.sqrt(var)])


class BayesOptPolicy(GazePolicy):
    """GP-UCB over a continuous fixation domain (partial information)."""

    name = "bayesopt"
    information = "partial"
    discrete = False

    def __init__(
        self,
        domain,
        hyper,
        priors=None,
        delta=0.001,
        budget=300,
        warmup=10,
        refit_every=5,
    ):
        self.domain = domain
        self.priors = priors if priors is not None else HyperPriors.for_domain(domain)
        self.model = GpModel(hyper)
        self.delta = delta
        self.budget = budget
        self.warmup = warmup
        self.refit_every = refit_every
        self.fit_warnings = 0
        self.best_action = None
        self.best_reward = -np.inf

    def choose(self, t, rng):
        return ucb_acquire(self.model, max(int(t), 1), self.domain, self.delta, self.budget)

    def update_partial(self, action, reward):
        self.model.add(action, reward)
        if reward > self.best_reward:
            self.best_reward = float(reward)
            self.best_action = np.asarray(action, dtype=float).copy()
        n = self.model.n
        if n >= self.warmup and (n - self.warmup) % self.refit_every == 0:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", GpFitWarning)
                hyper = map_fit(self.model, self.priors, self.warmup)
            self.fit_warnings += sum(issubclass(w.category, GpFitWarning) for w in caught)
            try:
                self.model.set_hyper(hyper)
            except SingularGram:
                self.fit_warnings += 1

    @property
    def incumbent(self):
        """Observed action with the highest posterior mean (robust to reward noise)."""
        if self.model.n == 0:
            return None
        mean, _ = self.model.predict(self.model.X)
        return self.model.X[int(np.argmax(mean))].copy()
