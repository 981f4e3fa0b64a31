"""Binary restricted Boltzmann machine.

Visible units take values in [0, 1] (normalized pixel intensities read as
Bernoulli means), hidden units are binary. Everything is plain numpy; a
parameter set is an immutable-by-convention value and training works on a
private copy.

The ``exact_*`` functions enumerate the model and are only meant for tiny
RBMs, mainly as test oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

MAX_ENUMERATION_UNITS = 24


def sigmoid(x):
    return expit(np.asarray(x, dtype=np.float64))


def softplus(x):
    return np.logaddexp(0.0, x)


@dataclass
class RbmParams:
    """Parameters of an RBM with ``M`` visible and ``K`` hidden units.

    Attributes:
        visible_bias: shape (M,).
        hidden_bias: shape (K,).
        weights: shape (M, K); ``weights[i, j]`` couples v_i and h_j.
    """

    visible_bias: np.ndarray
    hidden_bias: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.visible_bias = np.asarray(self.visible_bias, dtype=np.float64)
        self.hidden_bias = np.asarray(self.hidden_bias, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.visible_bias.ndim != 1 or self.hidden_bias.ndim != 1 or self.weights.ndim != 2:
            raise ValueError("biases must be vectors and weights a matrix")
        if self.weights.shape != (self.visible_bias.size, self.hidden_bias.size):
            raise ValueError(
                f"weights shape {self.weights.shape} inconsistent with "
                f"biases ({self.visible_bias.size}, {self.hidden_bias.size})"
            )

    @property
    def n_visible(self) -> int:
        return self.visible_bias.size

    @property
    def n_hidden(self) -> int:
        return self.hidden_bias.size

    @classmethod
    def zeros(cls, n_visible: int, n_hidden: int) -> "RbmParams":
        return cls(np.zeros(n_visible), np.zeros(n_hidden), np.zeros((n_visible, n_hidden)))

    @classmethod
    def initialize(cls, n_visible: int, n_hidden: int, rng: np.random.Generator,
                   weight_std: float = 0.01) -> "RbmParams":
        """Zero biases, weights drawn from N(0, weight_std**2)."""
        w = rng.normal(0.0, weight_std, size=(n_visible, n_hidden)) if weight_std > 0 \
            else np.zeros((n_visible, n_hidden))
        return cls(np.zeros(n_visible), np.zeros(n_hidden), w)

    def copy(self) -> "RbmParams":
        return RbmParams(self.visible_bias.copy(), self.hidden_bias.copy(), self.weights.copy())

    def is_finite(self) -> bool:
        return bool(
            np.isfinite(self.visible_bias).all()
            and np.isfinite(self.hidden_bias).all()
            and np.isfinite(self.weights).all()
        )

    def __eq__(self, other):
        if not isinstance(other, RbmParams):
            return NotImplemented
        return (
            np.array_equal(self.visible_bias, other.visible_bias)
            and np.array_equal(self.hidden_bias, other.hidden_bias)
            and np.array_equal(self.weights, other.weights)
        )


@dataclass
class RbmGradient:
    d_visible_bias: np.ndarray
    d_hidden_bias: np.ndarray
    d_weights: np.ndarray

    def norm(self) -> float:
        return float(np.sqrt(
            np.sum(self.d_visible_bias ** 2)
            + np.sum(self.d_hidden_bias ** 2)
            + np.sum(self.d_weights ** 2)
        ))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.d_visible_bias, self.d_hidden_bias, self.d_weights.ravel()])


@dataclass
class TrainConfig:
    """Minibatch CD training settings.

    ``momentum`` and ``weight_decay`` are off by default.
    """

    n_hidden: int = 100
    learning_rate: float = 0.1
    cd_steps: int = 1
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    init_weight_std: float = 0.01
    persistent: bool = False
    momentum: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.cd_steps < 1:
            raise ValueError("cd_steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.n_hidden < 1:
            raise ValueError("n_hidden must be >= 1")
        if self.init_weight_std < 0:
            raise ValueError("init_weight_std must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")


def _check_visible(v, params: RbmParams) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != params.n_visible:
        raise ValueError(f"visible vector has length {v.shape[-1]}, expected {params.n_visible}")
    return v


def _check_hidden(h, params: RbmParams) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != params.n_hidden:
        raise ValueError(f"hidden vector has length {h.shape[-1]}, expected {params.n_hidden}")
    return h


def energy(v, h, params: RbmParams):
    """E(v, h) = -(a.v + b.h + v.W.h). Broadcasts over leading axes."""
    v = _check_visible(v, params)
    h = _check_hidden(h, params)
    return -(v @ params.visible_bias + h @ params.hidden_bias
             + np.sum((v @ params.weights) * h, axis=-1))


def hidden_conditional(v, params: RbmParams) -> np.ndarray:
    """p(h_j = 1 | v) for every hidden unit; rows of a 2-D ``v`` are independent."""
    v = _check_visible(v, params)
    return sigmoid(params.hidden_bias + v @ params.weights)


def visible_conditional(h, params: RbmParams) -> np.ndarray:
    """p(v_i = 1 | h) for every visible unit."""
    h = _check_hidden(h, params)
    return sigmoid(params.visible_bias + h @ params.weights.T)


def sample_bernoulli(probs, rng: np.random.Generator) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if np.any(probs < 0) or np.any(probs > 1) or np.any(np.isnan(probs)):
        raise ValueError("probabilities must lie in [0, 1]")
    return (rng.random(probs.shape) < probs).astype(np.float64)


def gibbs_chain(v0, steps: int, params: RbmParams, rng: np.random.Generator):
    """Run ``steps`` rounds of h ~ p(h|v), v ~ p(v|h) starting at ``v0``.

    Returns:
        (v_m, p(h | v_m)): the final binary visible sample and the hidden
        conditional evaluated at it.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    v = _check_visible(v0, params)
    for _ in range(steps):
        h = sample_bernoulli(hidden_conditional(v, params), rng)
        v = sample_bernoulli(visible_conditional(h, params), rng)
    return v, hidden_conditional(v, params)


def _as_batch(batch, params: RbmParams) -> np.ndarray:
    x = _check_visible(batch, params)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("batch must be a non-empty sequence of vectors")
    return x


def _positive_phase(x: np.ndarray, params: RbmParams):
    ph = hidden_conditional(x, params)
    n = x.shape[0]
    return x.mean(axis=0), ph.mean(axis=0), x.T @ ph / n


def _sample_statistics(v: np.ndarray, ph: np.ndarray):
    n = v.shape[0]
    return v.mean(axis=0), ph.mean(axis=0), v.T @ ph / n


def cd_gradient(batch, params: RbmParams, cd_steps: int = 1,
                rng: np.random.Generator | None = None,
                persistent_state: np.ndarray | None = None,
                exact_negative: bool = False) -> RbmGradient:
    """Batch-averaged log-likelihood gradient estimate.

    The positive phase is analytic (hidden probabilities at the data). The
    negative phase comes from ``cd_steps`` Gibbs steps started at the data,
    or, when ``persistent_state`` is given, from advancing those chains; the
    array is overwritten with the new chain states (PCD). With
    ``exact_negative`` the model expectation is computed by enumeration.
    """
    x = _as_batch(batch, params)
    pos_a, pos_b, pos_w = _positive_phase(x, params)
    if exact_negative:
        neg_a, neg_b, neg_w = exact_model_expectations(params)
    else:
        if rng is None:
            raise ValueError("rng is required for sampled negative phase")
        if persistent_state is not None:
            start = _check_visible(persistent_state, params)
            v_neg, ph_neg = gibbs_chain(start, cd_steps, params, rng)
            persistent_state[...] = v_neg
        else:
            v_neg, ph_neg = gibbs_chain(x, cd_steps, params, rng)
        neg_a, neg_b, neg_w = _sample_statistics(np.atleast_2d(v_neg), np.atleast_2d(ph_neg))
    return RbmGradient(pos_a - neg_a, pos_b - neg_b, pos_w - neg_w)


def apply_update(params: RbmParams, gradient: RbmGradient, learning_rate: float) -> RbmParams:
    """Gradient ascent step; returns a new parameter set."""
    if not learning_rate > 0:
        raise ValueError("learning_rate must be > 0")
    if gradient.d_weights.shape != params.weights.shape \
            or gradient.d_visible_bias.shape != params.visible_bias.shape \
            or gradient.d_hidden_bias.shape != params.hidden_bias.shape:
        raise ValueError("gradient dimensions do not match parameters")
    new = RbmParams(
        params.visible_bias + learning_rate * gradient.d_visible_bias,
        params.hidden_bias + learning_rate * gradient.d_hidden_bias,
        params.weights + learning_rate * gradient.d_weights,
    )
    if not new.is_finite():
        raise FloatingPointError("parameter update produced non-finite values")
    return new


def train(patches, config: TrainConfig, init: RbmParams | None = None) -> RbmParams:
    """Minibatch contrastive-divergence training.

    Args:
        patches: array (N, M) with entries in [0, 1].
        config: training settings; ``config.seed`` drives initialization,
            shuffling and sampling.
        init: starting parameters (used for incremental updates). When
            omitted, weights are drawn from N(0, init_weight_std**2) and
            biases start at zero.

    Returns:
        The trained parameters. ``init`` is left untouched.
    """
    x = np.asarray(patches, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("patches must be a 2-D array of equal-length vectors")
    if x.size and (x.min() < 0 or x.max() > 1):
        raise ValueError("patch values must lie in [0, 1]")
    rng = np.random.default_rng(config.seed)
    if init is None:
        params = RbmParams.initialize(x.shape[1], config.n_hidden, rng, config.init_weight_std)
    else:
        if init.n_visible != x.shape[1]:
            raise ValueError("patch length does not match the initial model")
        params = init.copy()
    if config.epochs == 0 or x.shape[0] == 0:
        return params

    n = x.shape[0]
    chains = None
    if config.persistent:
        chains = x[rng.integers(0, n, size=min(config.batch_size, n))].copy()
    velocity = None
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = x[order[start:start + config.batch_size]]
            grad = cd_gradient(batch, params, config.cd_steps, rng, persistent_state=chains)
            if config.weight_decay:
                grad.d_weights = grad.d_weights - config.weight_decay * params.weights
            if config.momentum:
                if velocity is None:
                    velocity = grad
                else:
                    velocity = RbmGradient(
                        config.momentum * velocity.d_visible_bias + grad.d_visible_bias,
                        config.momentum * velocity.d_hidden_bias + grad.d_hidden_bias,
                        config.momentum * velocity.d_weights + grad.d_weights,
                    )
                grad = velocity
            params = apply_update(params, grad, config.learning_rate)
    return params


def reconstruct(v, params: RbmParams, sample: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Propagate up to the hidden layer and back down.

    The default is deterministic mean-field: hidden probabilities are fed
    back directly. With ``sample=True`` both layers are sampled instead.
    """
    v = _check_visible(v, params)
    ph = hidden_conditional(v, params)
    if not sample:
        return visible_conditional(ph, params)
    if rng is None:
        raise ValueError("rng is required when sampling")
    h = sample_bernoulli(ph, rng)
    return sample_bernoulli(visible_conditional(h, params), rng)


# ---------------------------------------------------------------------------
# Exact enumeration (tiny models only)


def all_binary_states(n: int) -> np.ndarray:
    """Every vector in {0,1}^n, first coordinate most significant."""
    codes = np.arange(2 ** n, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((codes[:, None] >> shifts) & 1).astype(np.float64)


def _guard(params: RbmParams):
    if params.n_visible + params.n_hidden > MAX_ENUMERATION_UNITS:
        raise ValueError(
            f"exact enumeration limited to M + K <= {MAX_ENUMERATION_UNITS}, "
            f"got {params.n_visible + params.n_hidden}"
        )


def free_energy(v, params: RbmParams):
    """F(v) = -log sum_h exp(-E(v, h)), with h summed out analytically."""
    v = _check_visible(v, params)
    return -(v @ params.visible_bias) - np.sum(
        softplus(params.hidden_bias + v @ params.weights), axis=-1)


def _hidden_free_energy(h, params: RbmParams):
    return -(h @ params.hidden_bias) - np.sum(
        softplus(params.visible_bias + h @ params.weights.T), axis=-1)


def _logsumexp(x: np.ndarray) -> float:
    m = np.max(x)
    return float(m + np.log(np.sum(np.exp(x - m))))


def exact_partition(params: RbmParams) -> float:
    """log Z, exact.

    Enumerates the smaller layer and sums the other one out in closed form,
    which is exact and keeps memory at 2**min(M, K) rows.
    """
    _guard(params)
    if params.n_visible <= params.n_hidden:
        return _logsumexp(-free_energy(all_binary_states(params.n_visible), params))
    return _logsumexp(-_hidden_free_energy(all_binary_states(params.n_hidden), params))


def exact_log_likelihood(data, params: RbmParams) -> float:
    """Mean log p(v) over the rows of ``data``."""
    x = _as_batch(data, params)
    return float(np.mean(-free_energy(x, params)) - exact_partition(params))


def exact_model_expectations(params: RbmParams):
    """(<v>, <h>, <v h^T>) under the model distribution, by enumeration."""
    _guard(params)
    log_z = exact_partition(params)
    if params.n_visible <= params.n_hidden:
        vs = all_binary_states(params.n_visible)
        p = np.exp(-free_energy(vs, params) - log_z)
        ph = hidden_conditional(vs, params)
        return p @ vs, p @ ph, (vs * p[:, None]).T @ ph
    hs = all_binary_states(params.n_hidden)
    p = np.exp(-_hidden_free_energy(hs, params) - log_z)
    pv = visible_conditional(hs, params)
    return p @ pv, p @ hs, (pv * p[:, None]).T @ hs


def exact_gradient(v, params: RbmParams) -> RbmGradient:
    """Exact gradient of the (batch-mean) log-likelihood of ``v``."""
    return cd_gradient(v, params, exact_negative=True)
