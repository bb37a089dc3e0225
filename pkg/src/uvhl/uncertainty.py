"""Dual-head perceptron with loss attenuation and Monte-Carlo dropout scoring.

The network maps a feature vector to class probabilities (softmax head) and
to a log-variance ``alpha`` (linear head). Training minimizes

    mean_i  0.5 * exp(-alpha_i) * CE(y_i, p_i) + 0.5 * alpha_i

so cases whose labels the network cannot fit are pushed toward large
``alpha``. At scoring time dropout stays on and every case is passed through
the network ``T`` times.
"""

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.special import expit, log_softmax

from uvhl.errors import ShapeError, TrainingError

LOG_EPS = np.log(1e-12)


@dataclass(frozen=True)
class TrainConfig:
    hidden: tuple = (64, 32)
    dropout: float = 0.5
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0


@dataclass(frozen=True, eq=False)
class UncertaintyModel:
    """Trained weights. ``params`` holds ``W0, b0, ..., Wc, bc, Wa, ba``."""

    params: dict
    hidden: tuple
    dropout: float
    seed: int = 0
    n_features: int = field(init=False)

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "n_features", self.params["W0"].shape[0])

    def predict(self, X):
        """Deterministic pass with dropout off; returns ``(probs, alpha)``."""
        probs, alpha, _ = _forward(self.params, len(self.hidden), np.atleast_2d(X), None)
        return probs, alpha

    def save(self, path):
        meta = {"hidden": list(self.hidden), "dropout": self.dropout, "seed": self.seed}
        np.savez(Path(path), __meta__=np.array(json.dumps(meta)), **self.params)

    @classmethod
    def load(cls, path):
        with np.load(Path(path), allow_pickle=False) as archive:
            meta = json.loads(str(archive["__meta__"]))
            params = {k: archive[k].copy() for k in archive.files if k != "__meta__"}
        return cls(params, tuple(meta["hidden"]), meta["dropout"], meta["seed"])


@dataclass(frozen=True, eq=False)
class VertexWeights:
    weights: np.ndarray
    lambda_u: float
    mu_e: float
    s_e: float
    aleatoric: np.ndarray = None
    epistemic: np.ndarray = None


def init_params(n_features, hidden, rng):
    """He-normal weights for ReLU layers, zero biases."""
    params = {}
    sizes = (n_features, *hidden)
    for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        params[f"W{layer}"] = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        params[f"b{layer}"] = np.zeros(fan_out)
    last = sizes[-1]
    params["Wc"] = rng.standard_normal((last, 2)) * np.sqrt(1.0 / last)
    params["bc"] = np.zeros(2)
    params["Wa"] = rng.standard_normal((last, 1)) * np.sqrt(1.0 / last)
    params["ba"] = np.zeros(1)
    return params


def _forward(params, n_hidden, X, masks):
    """``masks`` is None or one pre-scaled keep mask per hidden layer."""
    acts, pre = [X], []
    a = X
    for layer in range(n_hidden):
        z = a @ params[f"W{layer}"] + params[f"b{layer}"]
        a = np.maximum(z, 0.0)
        if masks is not None:
            a = a * masks[layer]
        pre.append(z)
        acts.append(a)
    logits = a @ params["Wc"] + params["bc"]
    alpha = (a @ params["Wa"] + params["ba"])[:, 0]
    logp = log_softmax(logits, axis=1)
    return np.exp(logp), alpha, (acts, pre, logp)


def _dropout_masks(rng, shape_rows, hidden, rate):
    if rate == 0.0:
        return None
    keep = 1.0 - rate
    return [(rng.random((shape_rows, h)) < keep) / keep for h in hidden]


def attenuated_loss(prob, alpha, label):
    """Loss of one case: ``0.5*exp(-alpha)*CE + 0.5*alpha`` with CE in nats."""
    prob = np.asarray(prob, dtype=float)
    p = max(float(prob[label]), 1e-12)
    ce = -np.log(p)
    return 0.5 * np.exp(-alpha) * ce + 0.5 * alpha


def loss_and_grads(params, n_hidden, X, y, masks=None):
    """Mean attenuated loss over a batch and its gradient for every parameter."""
    probs, alpha, (acts, pre, logp) = _forward(params, n_hidden, X, masks)
    n = X.shape[0]
    rows = np.arange(n)
    true_logp = logp[rows, y]
    clamped = true_logp < LOG_EPS
    ce = -np.maximum(true_logp, LOG_EPS)
    scale = np.exp(-alpha)
    loss = np.mean(0.5 * scale * ce + 0.5 * alpha)

    onehot = np.zeros_like(probs)
    onehot[rows, y] = 1.0
    d_logits = (0.5 * scale * ~clamped)[:, None] * (probs - onehot) / n
    d_alpha = (0.5 * (1.0 - scale * ce) / n)[:, None]

    a = acts[-1]
    grads = {
        "Wc": a.T @ d_logits,
        "bc": d_logits.sum(axis=0),
        "Wa": a.T @ d_alpha,
        "ba": d_alpha.sum(axis=0),
    }
    da = d_logits @ params["Wc"].T + d_alpha @ params["Wa"].T
    for layer in reversed(range(n_hidden)):
        if masks is not None:
            da = da * masks[layer]
        dz = da * (pre[layer] > 0)
        grads[f"W{layer}"] = acts[layer].T @ dz
        grads[f"b{layer}"] = dz.sum(axis=0)
        if layer:
            da = dz @ params[f"W{layer}"].T
    return loss, grads


def train(train_features, train_labels, config=TrainConfig()):
    """Fit the dual-head network with Adam on the attenuated loss.

    Deterministic for a given ``config.seed``: initialization, shuffling and
    dropout masks all draw from a single generator.
    """
    X = np.asarray(train_features, dtype=float)
    y = np.asarray(train_labels, dtype=int)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ShapeError("train_features must be (n, d) and train_labels length n")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("train_labels must be class indices 0/1")
    if np.unique(y).size < 2:
        raise ValueError("training set needs at least one case of each class")

    rng = np.random.default_rng(config.seed)
    hidden = tuple(config.hidden)
    params = init_params(X.shape[1], hidden, rng)
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(v) for k, v in params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    n = X.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            masks = _dropout_masks(rng, batch.size, hidden, config.dropout)
            loss, grads = loss_and_grads(params, len(hidden), X[batch], y[batch], masks)
            if not np.isfinite(loss):
                raise TrainingError(f"loss became {loss} in epoch {epoch}", epoch=epoch)
            step += 1
            lr_t = config.lr * np.sqrt(1 - beta2**step) / (1 - beta1**step)
            for key, g in grads.items():
                m[key] = beta1 * m[key] + (1 - beta1) * g
                v[key] = beta2 * v[key] + (1 - beta2) * g * g
                params[key] -= lr_t * m[key] / (np.sqrt(v[key]) + eps)
    return UncertaintyModel(params, hidden, config.dropout, config.seed)


def _mc_arrays(model, x, passes, rng):
    X = np.broadcast_to(np.asarray(x, dtype=float), (passes, model.n_features))
    masks = _dropout_masks(rng, passes, model.hidden, model.dropout)
    probs, alpha, _ = _forward(model.params, len(model.hidden), X, masks)
    return probs, alpha


def mc_forward(model, x, passes=20, seed=0):
    """``passes`` stochastic forward passes of one case with dropout active.

    ``seed`` may be an int or a sequence of ints (e.g. ``(seed, case_index)``).
    Returns a list of ``(prob_vector, alpha)`` pairs.
    """
    if passes < 1:
        raise ValueError("passes must be at least 1")
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n_features,):
        raise ShapeError(f"expected a feature vector of length {model.n_features}")
    probs, alpha = _mc_arrays(model, x, passes, np.random.default_rng(seed))
    return [(probs[t], float(alpha[t])) for t in range(passes)]


def mean_prediction(passes):
    """Average the probability vectors of the MC passes."""
    probs = _pass_probs(passes)
    return probs.mean(axis=0)


def _pass_probs(passes):
    if len(passes) == 0:
        raise ValueError("need at least one pass")
    first = passes[0]
    if isinstance(first, tuple):
        return np.array([p for p, _ in passes], dtype=float)
    return np.asarray(passes, dtype=float)


def _pass_alphas(passes):
    if len(passes) == 0:
        raise ValueError("need at least one pass")
    return np.array([a for _, a in passes], dtype=float)


def aleatoric_score(passes):
    """Mean predicted variance ``exp(alpha)`` over the passes."""
    return float(np.mean(np.exp(_pass_alphas(passes))))


def epistemic_score(passes):
    """Aleatoric score plus the spread of the MC probability vectors.

    ``A + mean_k(f_k . f_k) - mean(f) . mean(f)``; the second part is a
    variance and never negative.
    """
    probs = _pass_probs(passes)
    mean = probs.mean(axis=0)
    spread = np.mean(np.sum(probs * probs, axis=1)) - mean @ mean
    return aleatoric_score(passes) + max(float(spread), 0.0)


def score_cases(model, X, passes=20, seed=0):
    """Aleatoric and epistemic scores for every row of ``X``.

    Row ``i`` draws its dropout masks from a stream keyed by ``(seed, i)``,
    so a case's score does not depend on the other rows.
    """
    X = np.asarray(X, dtype=float)
    if passes < 1:
        raise ValueError("passes must be at least 1")
    aleatoric = np.empty(X.shape[0])
    epistemic = np.empty(X.shape[0])
    for i, x in enumerate(X):
        probs, alpha = _mc_arrays(model, x, passes, np.random.default_rng((seed, i)))
        pairs = list(zip(probs, alpha))
        aleatoric[i] = aleatoric_score(pairs)
        epistemic[i] = epistemic_score(pairs)
    return aleatoric, epistemic


def normalize_scores(epistemic, lambda_u=-1.0, aleatoric=None):
    """Squash scores into (0, 1) vertex weights.

    ``sigmoid(lambda_u * (e - mean) / std)`` over all given vertices; a zero
    standard deviation gives every vertex 0.5. Negative ``lambda_u`` gives
    uncertain vertices small weights.
    """
    e = np.asarray(epistemic, dtype=float)
    if e.size == 0:
        raise ValueError("need at least one score")
    if not np.isfinite(lambda_u):
        raise ValueError("lambda_u must be finite")
    mu, s = float(e.mean()), float(e.std())
    if s == 0.0:
        w = np.full(e.shape, 0.5)
    else:
        w = expit(lambda_u * (e - mu) / s)
    return VertexWeights(w, float(lambda_u), mu, s,
                         None if aleatoric is None else np.asarray(aleatoric, dtype=float), e)


def config_dict(config):
    out = asdict(config)
    out["hidden"] = list(out["hidden"])
    return out
