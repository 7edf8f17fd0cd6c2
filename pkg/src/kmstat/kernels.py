"""Symmetric kernels on the positive half-line.

A :class:`Kernel` is a vectorised ``K(x, y)`` plus optional closed-form
*rules*. A rule receives ``(model, tau)`` and returns a function when it
knows an exact expression for that model, or ``None`` to fall back to
quadrature in :mod:`kmstat.operators`.

Kernel spec strings (CLI)::

    ou            exp(-|x - y|)
    gauss:BW      exp(-(x - y)^2 / (2 BW^2))
    prod:CENTER   (x - CENTER)(y - CENTER)
    cvm           Cramer-von Mises kernel of the configured null model
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidParameter, ModelNotContinuous


@dataclass(frozen=True)
class Kernel:
    name: str
    params: tuple
    func: Callable = field(compare=False, repr=False)
    positive_definite: bool = False
    bounded: bool = False
    phi_rule: Optional[Callable] = field(default=None, compare=False, repr=False)
    kprime_rule: Optional[Callable] = field(default=None, compare=False, repr=False)
    # K(x, y) = factor(x) factor(y): lets quadratic forms skip the Gram matrix
    factor: Optional[Callable] = field(default=None, compare=False, repr=False)

    def __call__(self, x, y):
        return self.func(np.asarray(x, dtype=float), np.asarray(y, dtype=float))

    def diagonal(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self(x, x), x.shape)

    def gram(self, x):
        x = np.asarray(x, dtype=float)
        return self(x[:, None], x[None, :])

    @property
    def spec(self):
        if self.name == "ou":
            return "ou"
        if self.name == "gauss":
            return f"gauss:{self.params[0]!r}"
        if self.name == "prod":
            return f"prod:{self.params[0]!r}"
        if self.name == "cvm":
            return "cvm"
        return self.name


def _is_exponential(model):
    return getattr(model, "family", None) == "exponential"


def _full_mass(model, tau):
    return np.isinf(tau) or float(model.cdf(tau)) == 1.0


# -- Ornstein-Uhlenbeck ------------------------------------------------------

def _ou(x, y):
    return np.exp(-np.abs(x - y))


def _ou_phi(model, tau):
    if not (_is_exponential(model) and _full_mass(model, tau)):
        return None
    lam = model.params[0]

    def phi(y):
        y = np.asarray(y, dtype=float)
        if abs(lam - 1.0) < 1e-8:
            below = y * np.exp(-y)
        else:
            below = lam * (np.exp(-lam * y) - np.exp(-y)) / (1.0 - lam)
        return below + lam * np.exp(-lam * y) / (1.0 + lam)

    return phi


def _ou_kprime(model, tau):
    if not (_is_exponential(model) and _full_mass(model, tau)):
        return None
    lam = model.params[0]

    def kp(x, y):
        d = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
        if abs(lam - 1.0) < 1e-6:
            return 0.5 * (1.0 - d) * np.exp(-d)
        return (np.exp(-d) - lam * np.exp(-lam * d)) / (1.0 - lam * lam)

    return kp


def ou_kernel() -> Kernel:
    """``K(x, y) = exp(-|x - y|)``, bounded and positive definite.

    Under an exponential(rate) law the transformed kernel depends only on
    ``d = |x - y|``: ``(e^{-d} - rate e^{-rate d}) / (1 - rate^2)``, which
    is ``(1 - d) e^{-d} / 2`` at rate 1.
    """
    return Kernel("ou", (), _ou, positive_definite=True, bounded=True,
                  phi_rule=_ou_phi, kprime_rule=_ou_kprime)


# -- Gaussian ----------------------------------------------------------------

def gaussian_kernel(bandwidth) -> Kernel:
    bw = float(bandwidth)
    if not (bw > 0 and np.isfinite(bw)):
        raise InvalidParameter(f"bandwidth must be > 0, got {bandwidth!r}")
    scale = 1.0 / (2.0 * bw * bw)

    def func(x, y):
        return np.exp(-scale * (x - y) ** 2)

    return Kernel("gauss", (bw,), func, positive_definite=True, bounded=True)


# -- product (rank one) ------------------------------------------------------

def product_kernel(center=0.0) -> Kernel:
    """``K(x, y) = (x - c)(y - c)``.

    ``c = 0`` is non-degenerate under any law with nonzero mean; ``c`` equal
    to the mean makes the projection vanish.
    """
    c = float(center)

    def func(x, y):
        return (x - c) * (y - c)

    def phi_rule(model, tau):
        if not (_is_exponential(model) and _full_mass(model, tau)):
            return None
        m = 1.0 / model.params[0]
        return lambda y: (np.asarray(y, dtype=float) - c) * (m - c)

    def kprime_rule(model, tau):
        if not (_is_exponential(model) and _full_mass(model, tau)):
            return None
        # A(x - c) = x - c - E[T - c | T > x] = -1/rate
        v = 1.0 / model.params[0] ** 2
        return lambda x, y: np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, v)

    return Kernel("prod", (c,), func, positive_definite=True, bounded=False,
                  phi_rule=phi_rule, kprime_rule=kprime_rule, factor=lambda x: x - c)


def constant_kernel(value=1.0) -> Kernel:
    v = float(value)

    def func(x, y):
        return np.full(np.broadcast(x, y).shape, v)

    def phi_rule(model, tau):
        mass = 1.0 if np.isinf(tau) else float(model.cdf(tau))
        return lambda y: np.full(np.shape(y), v * mass)

    def kprime_rule(model, tau):
        if not _full_mass(model, tau):
            return None
        return lambda x, y: np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)

    return Kernel("const", (v,), func, positive_definite=v >= 0, bounded=True,
                  phi_rule=phi_rule, kprime_rule=kprime_rule,
                  factor=(lambda x: np.full(np.shape(x), np.sqrt(v))) if v >= 0 else None)


# -- Cramer-von Mises --------------------------------------------------------

def cvm_kernel(null_model) -> Kernel:
    """Kernel whose V-statistic is the Cramer-von Mises distance to ``null_model``.

    Closed form for continuous ``F0``::

        K(x, y) = S0(max(x, y)) + (F0(x)^2 + F0(y)^2) / 2 - 2/3
    """
    if not getattr(null_model, "continuous", False):
        raise ModelNotContinuous("the Cramer-von Mises closed form needs a continuous null model")
    m0 = null_model

    def func(x, y):
        fx, fy = m0.cdf(x), m0.cdf(y)
        return m0.sf(np.maximum(x, y)) + 0.5 * (fx * fx + fy * fy) - 2.0 / 3.0

    def phi_rule(model, tau):
        if model == m0 and _full_mass(model, tau):
            return lambda y: np.zeros(np.shape(y))
        return None

    def kprime_rule(model, tau):
        if not (model == m0 and _full_mass(model, tau)):
            return None

        def kp(x, y):
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            # S(max)^3 / (3 S(x) S(y)) = S(max)^2 / (3 S(min)), in logs
            return np.exp(2.0 * m0.logsf(np.maximum(x, y)) - m0.logsf(np.minimum(x, y))) / 3.0

        return kp

    return Kernel("cvm", (m0,), func, positive_definite=True, bounded=True,
                  phi_rule=phi_rule, kprime_rule=kprime_rule)


def cvm_defining_integral(null_model, x, y):
    """Evaluate the CvM kernel from its defining integral over ``dF0(t)``.

    Substituting ``u = F0(t)`` turns the integrand into a piecewise
    polynomial with breaks at ``F0(x)`` and ``F0(y)``, which Gauss-Legendre
    integrates exactly. Used to validate the closed form.
    """
    from .quadrature import integrate_batch
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    ux = np.atleast_1d(null_model.cdf(x)).ravel()
    uy = np.atleast_1d(null_model.cdf(y)).ravel()

    def f(u, i):
        return ((ux[i] <= u) - u) * ((uy[i] <= u) - u)

    n = ux.size
    vals, _ = integrate_batch(f, np.zeros(n), np.ones(n), breaks=np.stack([ux, uy], axis=1),
                              rtol=1e-13, atol=1e-16)
    return vals.reshape(x.shape) if x.ndim else float(vals[0])


def parse_kernel_spec(spec: str, null_model=None) -> Kernel:
    spec = spec.strip()
    kind, _, arg = spec.partition(":")
    try:
        if kind == "ou" and not arg:
            return ou_kernel()
        if kind == "gauss" and arg:
            return gaussian_kernel(float(arg))
        if kind == "prod":
            return product_kernel(float(arg) if arg else 0.0)
    except ValueError as exc:
        if isinstance(exc, InvalidParameter):
            raise
        raise InvalidParameter(f"bad number in kernel spec {spec!r}") from None
    if kind == "cvm" and not arg:
        if null_model is None:
            raise InvalidParameter("kernel 'cvm' needs a null model (--null exp:RATE)")
        return cvm_kernel(null_model)
    raise InvalidParameter(f"unknown kernel spec {spec!r} (expected ou, gauss:BW, prod:C or cvm)")
