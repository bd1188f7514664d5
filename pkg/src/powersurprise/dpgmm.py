"""Truncated variational Dirichlet-process Gaussian mixture.

The mixture weights follow a stick-breaking construction with Beta(1, alpha)
sticks, truncated at K components (the final stick absorbs the remainder).
Each component carries a normal-inverse-Wishart posterior. Inference is
coordinate ascent on the evidence lower bound over three blocks: stick Beta
parameters, component NIW parameters, and per-event responsibilities.

Model states are immutable snapshots; :func:`fit_update` returns a new
state and never mutates its input, so a pipeline can hold the before and
after states of a window side by side.
"""

import json
import os
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import digamma, gammaln, logsumexp, multigammaln

from .blockfilter import events_to_matrix
from .errors import ConfigError, NumericError
from .validation import as_float_array, check_positive, check_positive_int, check_spd

LOG_2PI = float(np.log(2.0 * np.pi))
COV_FLOOR = 1e-6  # watts^2, keeps scale matrices non-singular on duplicate events


@dataclass(frozen=True)
class NiwParams:
    """Normal-inverse-Wishart hyperparameters.

    Covariance ~ inverse-Wishart(nu, delta_scale); mean | covariance ~
    Normal(phi_mean, covariance / kappa).
    """

    phi_mean: np.ndarray
    kappa: float
    nu: float
    delta_scale: np.ndarray

    def __post_init__(self):
        phi = as_float_array(self.phi_mean, "phi_mean", ndim=1)
        delta = check_spd(self.delta_scale, "delta_scale")
        d = phi.size
        if delta.shape != (d, d):
            raise ConfigError(
                f"delta_scale shape {delta.shape} does not match dimension {d}")
        check_positive(self.kappa, "kappa")
        if not self.nu > d - 1:
            raise ConfigError(f"nu must exceed dim - 1 = {d - 1}, got {self.nu!r}")
        phi.flags.writeable = False
        delta.flags.writeable = False
        object.__setattr__(self, "phi_mean", phi)
        object.__setattr__(self, "delta_scale", delta)
        object.__setattr__(self, "kappa", float(self.kappa))
        object.__setattr__(self, "nu", float(self.nu))

    @property
    def dim(self):
        return self.phi_mean.size

    @staticmethod
    def default(dim=1, phi_mean=None, kappa=0.01, nu=None, scale_watts=50.0):
        """Weak prior wide enough to span typical appliance deltas."""
        phi = np.zeros(dim) if phi_mean is None else np.asarray(phi_mean, float)
        nu = float(dim + 2) if nu is None else float(nu)
        return NiwParams(phi, kappa, nu, (scale_watts ** 2) * np.eye(dim))


def _frozen(arr):
    a = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class MixtureState:
    """Immutable snapshot of the variational posterior.

    ``stick_a``/``stick_b`` are the K-1 Beta parameters of the stick
    fractions. ``kappa``, ``mean``, ``dof``, ``scale`` are the per-component
    NIW posteriors. ``counts``, ``xbar``, ``scatter`` are the
    responsibility-weighted sufficient statistics of the last fit.
    """

    alpha: float
    truncation: int
    prior: NiwParams
    stick_a: np.ndarray
    stick_b: np.ndarray
    kappa: np.ndarray
    mean: np.ndarray
    dof: np.ndarray
    scale: np.ndarray
    counts: np.ndarray
    xbar: np.ndarray
    scatter: np.ndarray
    n_observed: float
    seed: int
    elbo_trace: tuple = ()

    def __post_init__(self):
        for name in ("stick_a", "stick_b", "kappa", "mean", "dof", "scale",
                     "counts", "xbar", "scatter"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "elbo_trace", tuple(self.elbo_trace))

    @property
    def dim(self):
        return self.prior.dim


def init_model(truncation, alpha, base, seed):
    """Fresh model: prior sticks Beta(1, alpha), all components at the base NIW.

    Parameters
    ----------
    truncation : int
        Maximum number of components K, at least 2.
    alpha : float
        DP concentration, fixed for the run.
    base : NiwParams
    seed : int
        Drives the deterministic symmetry-breaking initialization of the
        first fit.
    """
    K = check_positive_int(truncation, "truncation", minimum=2)
    alpha = check_positive(alpha, "alpha")
    if not isinstance(base, NiwParams):
        raise ConfigError("base must be a NiwParams instance")
    d = base.dim
    return MixtureState(
        alpha=alpha,
        truncation=K,
        prior=base,
        stick_a=np.ones(K - 1),
        stick_b=np.full(K - 1, alpha),
        kappa=np.full(K, base.kappa),
        mean=np.tile(base.phi_mean, (K, 1)),
        dof=np.full(K, base.nu),
        scale=np.tile(base.delta_scale, (K, 1, 1)),
        counts=np.zeros(K),
        xbar=np.tile(base.phi_mean, (K, 1)),
        scatter=np.zeros((K, d, d)),
        n_observed=0.0,
        seed=int(seed),
    )


def _as_features(events, dim):
    if isinstance(events, np.ndarray):
        X = events
    else:
        X = events_to_matrix(list(events))
    X = as_float_array(X, "events", ndim=2)
    if X.shape[1] != dim:
        raise ValueError(
            f"dimension mismatch: events have {X.shape[1]} features, "
            f"model expects {dim}")
    return X


def _mvdigamma(x, d):
    return sum(digamma(x + (1 - i) / 2.0) for i in range(1, d + 1))


def _expected_log_sticks(stick_a, stick_b, K):
    """E[log pi_k] under the truncated stick-breaking posterior."""
    total = digamma(stick_a + stick_b)
    elog_v = digamma(stick_a) - total
    elog_1mv = digamma(stick_b) - total
    elog_pi = np.concatenate([[0.0], np.cumsum(elog_1mv)])
    elog_pi[:K - 1] += elog_v
    return elog_pi, elog_v, elog_1mv


def _component_log_density(X, kappa, mean, dof, scale):
    """E[log N(x | mu_k, Sigma_k)] for every event and component."""
    N, d = X.shape
    K = mean.shape[0]
    if d == 1:
        s = scale[:, 0, 0]
        elogdet_prec = digamma(dof / 2.0) + np.log(2.0) - np.log(s)
        quad = dof / s * (X - mean[:, 0][None, :]) ** 2
        return (0.5 * (elogdet_prec - LOG_2PI)
                - 0.5 * (1.0 / kappa + quad))
    out = np.empty((N, K))
    for k in range(K):
        chol = np.linalg.cholesky(scale[k])
        logdet_scale = 2.0 * np.sum(np.log(np.diag(chol)))
        elogdet_prec = (_mvdigamma(dof[k] / 2.0, d)
                        + d * np.log(2.0) - logdet_scale)
        diff = X - mean[k]
        y = np.linalg.solve(chol, diff.T)
        quad = np.einsum("ij,ij->j", y, y)
        out[:, k] = 0.5 * (elogdet_prec - d * LOG_2PI) \
            - 0.5 * (d / kappa[k] + dof[k] * quad)
    return out


def _log_responsibilities(X, stick_a, stick_b, kappa, mean, dof, scale, K):
    elog_pi, _, _ = _expected_log_sticks(stick_a, stick_b, K)
    log_rho = elog_pi[None, :] + _component_log_density(X, kappa, mean, dof, scale)
    lse = logsumexp(log_rho, axis=1)
    return log_rho - lse[:, None], lse


def _suff_stats(X, resp):
    counts = resp.sum(axis=0)
    safe = np.maximum(counts, 1e-300)
    xbar = (resp.T @ X) / safe[:, None]
    K, d = xbar.shape
    if d == 1:
        diff = X - xbar[:, 0][None, :]  # (N, K)
        scatter = np.einsum("nk,nk->k", resp, diff * diff).reshape(K, 1, 1)
        return counts, xbar, scatter
    scatter = np.empty((K, d, d))
    for k in range(K):
        diff = X - xbar[k]
        scatter[k] = (resp[:, k] * diff.T) @ diff
    return counts, xbar, scatter


def _m_step(counts, xbar, scatter, prior, alpha, K):
    """Closed-form coordinate updates for sticks and NIW posteriors."""
    stick_a = 1.0 + counts[:K - 1]
    suffix = np.cumsum(counts[::-1])[::-1]  # suffix[k] = sum_{j >= k} counts[j]
    stick_b = alpha + suffix[1:]

    kappa = prior.kappa + counts
    mean = (prior.kappa * prior.phi_mean + counts[:, None] * xbar) / kappa[:, None]
    dof = prior.nu + counts
    d = prior.dim
    dev = xbar - prior.phi_mean
    coef = prior.kappa * counts / kappa
    scale = (prior.delta_scale[None, :, :] + scatter
             + coef[:, None, None] * np.einsum("ki,kj->kij", dev, dev)
             + COV_FLOOR * np.eye(d)[None, :, :])
    return stick_a, stick_b, kappa, mean, dof, scale


def _kl_beta(a, b, a0, b0):
    """KL(Beta(a, b) || Beta(a0, b0)), elementwise over arrays."""
    def logbeta(x, y):
        return gammaln(x) + gammaln(y) - gammaln(x + y)

    return (logbeta(a0, b0) - logbeta(a, b)
            + (a - a0) * digamma(a)
            + (b - b0) * digamma(b)
            - (a + b - a0 - b0) * digamma(a + b))


def _kl_niw(kappa, mean, dof, scale, prior):
    """KL of each component's NIW posterior from the NIW prior."""
    d = prior.dim
    k0, phi, nu0, delta = prior.kappa, prior.phi_mean, prior.nu, prior.delta_scale
    sign0, logdet_delta = np.linalg.slogdet(delta)
    total = 0.0
    K = kappa.size
    for k in range(K):
        chol = np.linalg.cholesky(scale[k])
        logdet_scale = 2.0 * np.sum(np.log(np.diag(chol)))
        diff = mean[k] - phi
        y = np.linalg.solve(chol, diff)
        maha = float(y @ y)
        inv_trace = float(np.trace(
            np.linalg.solve(scale[k], delta)))
        kl_mean = 0.5 * (d * k0 / kappa[k] - d + d * np.log(kappa[k] / k0)
                         + k0 * dof[k] * maha)
        kl_iw = ((dof[k] - nu0) / 2.0 * _mvdigamma(dof[k] / 2.0, d)
                 - dof[k] * d / 2.0
                 + dof[k] / 2.0 * inv_trace
                 + nu0 / 2.0 * (logdet_scale - logdet_delta)
                 + multigammaln(nu0 / 2.0, d) - multigammaln(dof[k] / 2.0, d))
        total += kl_mean + kl_iw
    return total


def _elbo_from_estep(lse, state_globals, alpha, prior, K):
    stick_a, stick_b, kappa, mean, dof, scale = state_globals
    kl_sticks = float(np.sum(_kl_beta(stick_a, stick_b, 1.0, alpha)))
    kl_comp = _kl_niw(kappa, mean, dof, scale, prior)
    return float(lse.sum() - kl_sticks - kl_comp)


def _initial_responsibilities(X, K, k_eff, seed):
    """Deterministic symmetry-breaking init: hard k-means labels.

    Clusters are re-indexed by decreasing size (ties broken by mean) so
    the dominant cluster lands on the stick with the largest prior
    weight; this also makes the init invariant to event order on
    separated data.
    """
    N = X.shape[0]
    uniq = np.unique(X, axis=0)
    k_eff = int(min(K, k_eff, uniq.shape[0]))
    if k_eff < 2:
        labels = np.zeros(N, dtype=int)
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _, labels = kmeans2(X, k_eff, minit="++",
                                seed=np.random.default_rng(seed))
    counts = np.bincount(labels, minlength=K)
    means = np.full(K, np.inf)
    for k in range(K):
        if counts[k]:
            means[k] = float(np.mean(X[labels == k, 0]))
    order = np.lexsort((means, -counts))
    relabel = np.empty(K, dtype=int)
    relabel[order] = np.arange(K)
    resp = np.zeros((N, K))
    resp[np.arange(N), relabel[labels]] = 1.0
    return resp


def _run_cavi(X, globals_, alpha, prior, K, tol, max_iter):
    """Iterate (E-step, bound, M-step) from the given global parameters."""
    trace = []
    prev = None
    log_resp = None
    for _ in range(max_iter):
        log_resp, lse = _log_responsibilities(X, *globals_, K)
        cur = _elbo_from_estep(lse, globals_, alpha, prior, K)
        if not np.isfinite(cur):
            raise NumericError("non-finite ELBO during fit_update")
        trace.append(cur)
        if prev is not None and abs(cur - prev) < tol:
            break
        prev = cur
        resp = np.exp(log_resp)
        counts, xbar, scatter = _suff_stats(X, resp)
        globals_ = _m_step(counts, xbar, scatter, prior, alpha, K)
    return globals_, log_resp, trace


def fit_update(model, events, tol=1e-5, max_iter=500, n_init=4):
    """Coordinate ascent on the cumulative event set, warm-started.

    Parameters
    ----------
    model : MixtureState
        Previous state. A model that has already absorbed events is the
        warm start for a single ascent run. A fresh model instead fits
        ``n_init`` deterministic k-means-seeded restarts and keeps the
        run with the best bound, which avoids the local optima where one
        cluster stays split across two components.
    events : sequence of Event or (n, d) array
        The full set of events observed so far.
    tol : float
        Stop when the bound improves by less than this (absolute).
    max_iter : int
    n_init : int
        Restarts for the symmetry-breaking first fit; ignored on warm
        starts.

    Returns
    -------
    MixtureState
        New state; ``elbo_trace`` holds the winning run's per-iteration
        bound values, non-decreasing up to floating-point noise.
    """
    X = _as_features(events, model.dim)
    K = model.truncation
    alpha, prior = model.alpha, model.prior
    check_positive(tol, "tol")
    check_positive_int(max_iter, "max_iter")
    check_positive_int(n_init, "n_init")

    if model.n_observed == 0:
        best = None
        children = np.random.SeedSequence(model.seed).spawn(n_init)
        # restarts seed k-means at K, K/2, K/4, ... centroids: coarse inits
        # escape the local optima where one cluster stays sharded
        ladder = [max(2, -(-K // (2 ** i))) for i in range(n_init)]
        for child, k_eff in zip(children, ladder):
            resp = _initial_responsibilities(X, K, k_eff, child)
            counts, xbar, scatter = _suff_stats(X, resp)
            start = _m_step(counts, xbar, scatter, prior, alpha, K)
            run = _run_cavi(X, start, alpha, prior, K, tol, max_iter)
            if best is None or run[2][-1] > best[2][-1]:
                best = run
        globals_, log_resp, trace = best
    else:
        start = (model.stick_a, model.stick_b, model.kappa,
                 model.mean, model.dof, model.scale)
        globals_, log_resp, trace = _run_cavi(
            X, start, alpha, prior, K, tol, max_iter)

    # final M-step keeps posteriors consistent with the stored statistics
    resp = np.exp(log_resp)
    counts, xbar, scatter = _suff_stats(X, resp)
    stick_a, stick_b, kappa, mean, dof, scale = _m_step(
        counts, xbar, scatter, prior, alpha, K)
    return replace(
        model,
        stick_a=stick_a, stick_b=stick_b, kappa=kappa, mean=mean,
        dof=dof, scale=scale, counts=counts, xbar=xbar, scatter=scatter,
        n_observed=float(X.shape[0]), elbo_trace=tuple(trace))


def elbo(model, events):
    """Evidence lower bound of the model on the given events.

    Responsibilities are set to their optimum for the current global
    parameters, so the value matches the fixed point of the coordinate
    ascent when called on a converged model.
    """
    X = _as_features(events, model.dim)
    globals_ = (model.stick_a, model.stick_b, model.kappa,
                model.mean, model.dof, model.scale)
    _, lse = _log_responsibilities(X, *globals_, model.truncation)
    value = _elbo_from_estep(lse, globals_, model.alpha, model.prior,
                             model.truncation)
    if not np.isfinite(value):
        raise NumericError("non-finite ELBO")
    return value


def responsibilities(model, events):
    """Posterior component responsibilities, one simplex row per event."""
    X = _as_features(events, model.dim)
    log_resp, _ = _log_responsibilities(
        X, model.stick_a, model.stick_b, model.kappa, model.mean,
        model.dof, model.scale, model.truncation)
    return np.exp(log_resp)


def expected_weights(model):
    """E[pi_k]: stick means with the last component taking the remainder."""
    ev = model.stick_a / (model.stick_a + model.stick_b)
    weights = np.empty(model.truncation)
    remainder = 1.0
    for k in range(model.truncation - 1):
        weights[k] = ev[k] * remainder
        remainder *= 1.0 - ev[k]
    weights[-1] = remainder
    return weights


def plugin_components(model):
    """Weights, means, and expected covariances of the plug-in predictive."""
    d = model.dim
    if np.any(model.dof <= d + 1):
        raise NumericError(
            "expected covariance undefined: component degrees of freedom "
            f"must exceed dim + 1 = {d + 1}")
    covs = model.scale / (model.dof - d - 1.0)[:, None, None]
    return expected_weights(model), model.mean, covs


def predictive_density(model, x):
    """Plug-in posterior predictive density at x.

    Mixture of Gaussians at the variational-expected parameters,
    weighted by the expected stick weights. Accepts a scalar (for 1-D
    models), a d-vector, or an (n, d) batch.
    """
    weights, means, covs = plugin_components(model)
    d = model.dim
    X = np.asarray(x, dtype=np.float64)
    scalar = X.ndim == 0
    single = X.ndim == 1 and d > 1 and X.size == d
    X = X.reshape(-1, d)
    if not np.all(np.isfinite(X)):
        raise ValueError("x contains non-finite values")
    dens = mixture_pdf(weights, means, covs, X)
    if scalar or single:
        return float(dens[0])
    return dens


def mixture_pdf(weights, means, covs, X):
    """Density of a Gaussian mixture at the rows of X."""
    N, d = X.shape
    if d == 1:
        var = covs[:, 0, 0]
        quad = (X - means[:, 0][None, :]) ** 2 / var
        log_norm = -0.5 * (np.log(var) + LOG_2PI)
        return np.exp(log_norm - 0.5 * quad) @ weights
    out = np.zeros(N)
    for k in range(weights.size):
        if weights[k] <= 0.0:
            continue
        chol = np.linalg.cholesky(covs[k])
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        y = np.linalg.solve(chol, (X - means[k]).T)
        quad = np.einsum("ij,ij->j", y, y)
        out += weights[k] * np.exp(-0.5 * (quad + logdet + d * LOG_2PI))
    return out


def assign_states(model, events):
    """Hard state labels: argmax responsibility, ties to the lowest index."""
    return np.argmax(responsibilities(model, events), axis=1)


CHECKPOINT_VERSION = 1


def to_dict(model):
    """JSON-ready dict; floats survive a round trip bit-exactly."""
    return {
        "format_version": CHECKPOINT_VERSION,
        "kind": "dpgmm-checkpoint",
        "alpha": model.alpha,
        "truncation": model.truncation,
        "seed": model.seed,
        "n_observed": model.n_observed,
        "prior": {
            "phi_mean": model.prior.phi_mean.tolist(),
            "kappa": model.prior.kappa,
            "nu": model.prior.nu,
            "delta_scale": model.prior.delta_scale.tolist(),
        },
        "stick_a": model.stick_a.tolist(),
        "stick_b": model.stick_b.tolist(),
        "kappa": model.kappa.tolist(),
        "mean": model.mean.tolist(),
        "dof": model.dof.tolist(),
        "scale": model.scale.tolist(),
        "counts": model.counts.tolist(),
        "xbar": model.xbar.tolist(),
        "scatter": model.scatter.tolist(),
        "elbo_trace": list(model.elbo_trace),
    }


def from_dict(payload):
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version!r}")
    prior = NiwParams(
        np.asarray(payload["prior"]["phi_mean"], float),
        payload["prior"]["kappa"],
        payload["prior"]["nu"],
        np.asarray(payload["prior"]["delta_scale"], float),
    )
    return MixtureState(
        alpha=payload["alpha"],
        truncation=payload["truncation"],
        prior=prior,
        stick_a=payload["stick_a"],
        stick_b=payload["stick_b"],
        kappa=payload["kappa"],
        mean=payload["mean"],
        dof=payload["dof"],
        scale=payload["scale"],
        counts=payload["counts"],
        xbar=payload["xbar"],
        scatter=payload["scatter"],
        n_observed=payload["n_observed"],
        seed=payload["seed"],
        elbo_trace=tuple(payload["elbo_trace"]),
    )


def save_checkpoint(model, path):
    """Write the model as versioned JSON (atomic: write-temp-then-rename)."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(to_dict(model), fh, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def load_checkpoint(path):
    with open(path, "r", encoding="utf-8") as fh:
        return from_dict(json.load(fh))
