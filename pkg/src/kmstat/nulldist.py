"""Limit law of the n-scaled statistic in the degenerate regime.

The limit is ``m + sum_i lambda_i (xi_i^2 - 1)`` where ``m`` is the
asymptotic mean and ``lambda_i`` are eigenvalues of the integral operator
with kernel ``J`` on the space of observed pairs ``(x, r)``::

    J((x, r), (x', r')) = int int Kt(s, t) dm_{x,r}(s) dm_{x',r'}(t)
    dm_{x,r}(s) = r delta_x(s) - 1{s <= x} dLambda(s)
    Kt(s, t) = K'(s, t) / ((1 - G(s)) (1 - G(t)))

The spectrum is approximated by Nystrom: the eigenvalues of
``J(p_k, p_l) / m`` over ``m`` nodes drawn from the observed-data law.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (DivergentIntegral, InvalidParameter, NonConvergedEigensolve)
from .models import as_generator, require_continuous, sample_censored
from .operators import weighted_integral
from .quadrature import gauss_legendre_rule, integrate_batch, integrate_tail_batch

_CHUNK = 2048


def _composite(lo, hi, panels, order):
    """Composite Gauss-Legendre nodes/weights on ``[lo_i, hi_i]``; shape (B, panels*order)."""
    u, w = gauss_legendre_rule(order)
    edges = np.linspace(0.0, 1.0, panels + 1)
    pu = (edges[:-1, None] + np.diff(edges)[:, None] * u[None, :]).ravel()
    pw = (np.diff(edges)[:, None] * w[None, :]).ravel()
    width = (hi - lo)[:, None]
    return lo[:, None] + width * pu[None, :], width * pw[None, :]


class JKernel:
    """The ``J`` kernel of a joint model and a transformed kernel.

    Parameters
    ----------
    joint : JointModel
        Continuous survival law with independent censoring.
    kprime : TransformedKernel
    panels, order : int
        Composite Gauss-Legendre resolution for pointwise evaluation.
    """

    def __init__(self, joint, kprime, panels=6, order=8):
        require_continuous(joint.survival)
        self.joint = joint
        self.kprime = kprime
        self.panels = panels
        self.order = order
        self._model = joint.survival
        self._log_cs = joint.censoring.logsurvivor

    def ktilde(self, s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        return np.asarray(self.kprime(s, t), dtype=float) * np.exp(-self._log_cs(s) - self._log_cs(t))

    def hazard(self, t):
        return self._model.hazard(t)

    # -- pointwise -----------------------------------------------------------

    def _single(self, x, b):
        """``int_0^b Kt(x, t) dLambda(t)``, split at ``min(x, b)``."""
        mid = np.minimum(x, b)
        total = np.zeros_like(x)
        for lo, hi in ((np.zeros_like(x), mid), (mid, b)):
            t, w = _composite(lo, hi, self.panels, self.order)
            total += np.sum(w * self.hazard(t) * self.ktilde(x[:, None], t), axis=1)
        return total

    def _double(self, a, b):
        """``int_0^a int_0^b Kt(s, t) dLambda(s) dLambda(t)``.

        The square ``[0, min]^2`` is twice the triangle ``s < t``, mapped by
        ``s = t u``; the remaining rectangle does not meet the diagonal.
        """
        lo_, hi_ = np.minimum(a, b), np.maximum(a, b)
        t, wt = _composite(np.zeros_like(lo_), lo_, self.panels, self.order)
        u, wu = gauss_legendre_rule(self.order * 2)
        ht = self.hazard(t)
        s = t[:, :, None] * u[None, None, :]
        inner = np.sum(wu * self.hazard(s) * self.ktilde(s, t[:, :, None]), axis=2)
        tri = np.sum(wt * ht * t * inner, axis=1)
        # rectangle [0, lo] x [lo, hi]
        s2, ws = _composite(np.zeros_like(lo_), lo_, self.panels, self.order)
        t2, wt2 = _composite(lo_, hi_, self.panels, self.order)
        vals = self.ktilde(s2[:, :, None], t2[:, None, :])
        rect = np.einsum("bi,bj,bij->b", ws * self.hazard(s2), wt2 * self.hazard(t2), vals)
        return 2.0 * tri + rect

    def __call__(self, x, r, x2, r2):
        """Evaluate ``J((x, r), (x2, r2))`` elementwise with broadcasting."""
        x, r, x2, r2 = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, r, x2, r2)))
        shape = x.shape
        x, r, x2, r2 = (a.ravel() for a in (x, r, x2, r2))
        out = np.empty(x.size)
        for a in range(0, x.size, _CHUNK):
            sl = slice(a, a + _CHUNK)
            xa, ra, xb, rb = x[sl], r[sl], x2[sl], r2[sl]
            out[sl] = (ra * rb * self.ktilde(xa, xb)
                       - ra * self._single(xa, xb)
                       - rb * self._single(xb, xa)
                       + self._double(xa, xb))
        out = out.reshape(shape)
        return float(out) if out.ndim == 0 else out

    # -- Gram matrix on a node set -------------------------------------------

    def gram(self, x, r, refine=256, order=3):
        """Matrix ``J(p_k, p_l)`` over nodes ``p_k = (x_k, r_k)``.

        The ``dLambda`` integrals run on one shared grid whose cell edges
        include every node, so each truncated integral ``int_0^{x_l}`` is a
        prefix sum over cells and the double integral a 2-D prefix sum.
        """
        x = np.asarray(x, dtype=float).ravel()
        r = np.asarray(r, dtype=float).ravel()
        edges = np.unique(np.concatenate([[0.0], x, np.linspace(0.0, x.max(), refine + 1)]))
        pos = np.searchsorted(edges, x)
        lo, hi = edges[:-1], edges[1:]
        n_cells = lo.size
        u, w = gauss_legendre_rule(order)
        t = (lo[:, None] + (hi - lo)[:, None] * u[None, :]).ravel()
        wt = ((hi - lo)[:, None] * w[None, :]).ravel() * self.hazard(t)
        cell = np.repeat(np.arange(n_cells), order)

        A = self.ktilde(x[:, None], x[None, :])

        B = np.empty((x.size, x.size))
        for a in range(0, x.size, 256):
            P = self.ktilde(x[a:a + 256, None], t[None, :]) * wt[None, :]
            Pc = np.zeros((P.shape[0], n_cells + 1))
            np.add.at(Pc.T, cell + 1, P.T)
            B[a:a + 256] = np.cumsum(Pc, axis=1)[:, pos]

        R = np.zeros((n_cells + 1, n_cells + 1))
        step = max(1, 4_000_000 // t.size)
        for a in range(0, t.size, step):
            blk = self.ktilde(t[a:a + step, None], t[None, :]) * wt[a:a + step, None] * wt[None, :]
            rows = np.zeros((blk.shape[0], n_cells + 1))
            np.add.at(rows.T, cell + 1, blk.T)
            np.add.at(R, cell[a:a + step] + 1, rows)
        D = np.cumsum(np.cumsum(R, axis=0), axis=1)[np.ix_(pos, pos)]

        rB = r[:, None] * B
        return np.outer(r, r) * A - rB - rB.T + D


def j_kernel(joint, kprime) -> JKernel:
    return JKernel(joint, kprime)


def asymptotic_mean(joint, kprime) -> float:
    """``int K'(x, x) / (1 - G(x)) dF(x)``."""
    return weighted_integral(joint, lambda x: kprime.diagonal(x) * joint.weighted_pdf(x),
                             "asymptotic mean")


def asymptotic_variance(joint, kprime) -> float:
    """``2 int int K'(x, y)^2 / ((1 - G(x)) (1 - G(y))) dF(x) dF(y)``."""
    start = float(joint.survival.isf(0.1))
    tau = joint.tau

    def inner(x):
        def g(y, idx):
            return np.asarray(kprime(x[idx], y), dtype=float) ** 2 * joint.weighted_pdf(y)

        if np.isfinite(tau):
            vals, _ = integrate_batch(g, np.zeros(x.size), np.full(x.size, tau),
                                      breaks=x[:, None], rtol=1e-10)
            return vals
        res = integrate_tail_batch(g, np.zeros(x.size), start, breaks=x[:, None], rtol=1e-10)
        if not np.all(res.finite):
            i = int(np.flatnonzero(~res.finite)[0])
            raise DivergentIntegral("asymptotic variance diverges in the inner integral",
                                    res.evidence(i))
        return res.values

    def outer(x):
        w = joint.weighted_pdf(x)
        out = np.zeros_like(w)
        live = w > 0
        if np.any(live):
            out[live] = w[live] * inner(x[live])
        return out

    return 2.0 * weighted_integral(joint, outer, "asymptotic variance")


def eigenvalues(joint, kprime, truncation=100, m_nodes=2000, rng=None):
    """Nystrom eigenvalues of the ``J`` operator, largest magnitude first, with sign."""
    truncation = int(truncation)
    m_nodes = int(m_nodes)
    if truncation < 1 or m_nodes < 1:
        raise InvalidParameter("truncation and m_nodes must be positive")
    rng = as_generator(rng)
    sample = sample_censored(joint, m_nodes, rng)
    J = JKernel(joint, kprime).gram(sample.times, sample.events.astype(float))
    J = 0.5 * (J + J.T) / m_nodes
    try:
        lam = np.linalg.eigvalsh(J)
    except np.linalg.LinAlgError as exc:
        raise NonConvergedEigensolve(f"symmetric eigensolver failed: {exc}") from None
    order = np.argsort(-np.abs(lam), kind="stable")
    lam = lam[order][:truncation]
    if lam.size < truncation:
        lam = np.concatenate([lam, np.zeros(truncation - lam.size)])
    return lam


@dataclass(frozen=True)
class LimitDistribution:
    """``mean_offset + sum_i eigenvalues[i] (xi_i^2 - 1)``."""

    mean_offset: float
    eigenvalues: np.ndarray
    variance_closed: float
    variance_spectral: float
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return {"mean": self.mean_offset, "variance_closed": self.variance_closed,
                "variance_spectral": self.variance_spectral,
                "eigenvalues": [float(v) for v in self.eigenvalues],
                "metadata": dict(self.metadata)}


def limit_distribution(joint, kprime, truncation=100, m_nodes=2000, rng=None,
                       seed=None) -> LimitDistribution:
    if rng is None and seed is not None:
        from .models import make_rng
        rng = make_rng(seed)
    lam = eigenvalues(joint, kprime, truncation, m_nodes, rng)
    return LimitDistribution(
        mean_offset=asymptotic_mean(joint, kprime),
        eigenvalues=lam,
        variance_closed=asymptotic_variance(joint, kprime),
        variance_spectral=float(2.0 * np.sum(lam * lam)),
        metadata={"truncation": int(truncation), "m_nodes": int(m_nodes), "seed": seed,
                  "kprime": kprime.provenance})


def sample_limit(dist: LimitDistribution, draws, rng=None, chunk=20_000):
    """Independent draws of ``m + sum lambda_i (xi_i^2 - 1)``."""
    draws = int(draws)
    if draws < 1:
        raise InvalidParameter(f"draws must be >= 1, got {draws}")
    rng = as_generator(rng)
    lam = np.asarray(dist.eigenvalues, dtype=float)
    out = np.empty(draws)
    for a in range(0, draws, chunk):
        k = min(chunk, draws - a)
        xi = rng.standard_normal((k, lam.size))
        out[a:a + k] = dist.mean_offset + (xi * xi - 1.0) @ lam
    return out


@dataclass(frozen=True)
class MonteCarloQuantile:
    value: float
    p: float
    draws: int


def quantile(dist: LimitDistribution, p, draws=100_000, rng=None) -> MonteCarloQuantile:
    p = float(p)
    if not 0.0 < p < 1.0:
        raise InvalidParameter(f"p must lie in (0, 1), got {p!r}")
    sample = sample_limit(dist, draws, rng)
    return MonteCarloQuantile(float(np.quantile(sample, p)), p, int(draws))


def p_value(dist: LimitDistribution, statistic, draws=100_000, rng=None):
    """Upper-tail Monte Carlo p-value ``(1 + #{draws >= s}) / (1 + draws)``."""
    sample = sample_limit(dist, draws, rng)
    return (1.0 + np.count_nonzero(sample >= statistic)) / (1.0 + sample.size)


def ustat_limit_adjust(dist: LimitDistribution, joint, kernel) -> LimitDistribution:
    """Limit law for the U-statistic from that of the V-statistic.

    Removes the diagonal contribution ``int K(x, x) / (1 - G(x)) dF(x)`` from
    the mean and divides by ``F(tau)^2``.
    """
    m = joint.survival
    diag = weighted_integral(joint, lambda x: np.asarray(kernel.diagonal(x), dtype=float)
                             * joint.weighted_pdf(x), "diagonal mass")
    ftau = 1.0 if np.isinf(joint.tau) else float(m.cdf(joint.tau))
    c = 1.0 / (ftau * ftau)
    meta = dict(dist.metadata, ustat_adjusted=True, diagonal_integral=diag)
    return replace(dist, mean_offset=(dist.mean_offset - diag) * c,
                   eigenvalues=np.asarray(dist.eigenvalues) * c,
                   variance_closed=dist.variance_closed * c * c,
                   variance_spectral=dist.variance_spectral * c * c, metadata=meta)
