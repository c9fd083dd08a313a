"""Single-hidden-layer MLP with batch normalization.

Forward/backward passes are hand-written for this fixed architecture:
linear -> batchnorm -> ReLU -> linear -> softmax. All ops work in the
dtype of the model arrays; simulation uses float32, tests may build
float64 models for tight finite-difference comparisons. Loss and
statistics accumulate in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

TRAINABLE_FIELDS = ("w1", "b1", "bn_gamma", "bn_beta", "w2", "b2")
RUNNING_FIELDS = ("bn_mean", "bn_var")


class ShapeError(ValueError):
    """Raised when array dimensions do not line up."""


@dataclass
class MlpModel:
    """Parameters of the two-layer perceptron, including batch-norm state."""

    w1: np.ndarray  # [n2, n1]
    b1: np.ndarray  # [n2]
    bn_gamma: np.ndarray  # [n2]
    bn_beta: np.ndarray  # [n2]
    bn_mean: np.ndarray  # [n2], running
    bn_var: np.ndarray  # [n2], running
    w2: np.ndarray  # [n3, n2]
    b2: np.ndarray  # [n3]

    @property
    def dims(self) -> tuple[int, int, int]:
        n2, n1 = self.w1.shape
        n3 = self.w2.shape[0]
        return (n1, n2, n3)

    @property
    def dtype(self) -> np.dtype:
        return self.w1.dtype

    def copy(self) -> "MlpModel":
        fields = ("w1", "b1", "bn_gamma", "bn_beta", "bn_mean", "bn_var", "w2", "b2")
        return MlpModel(*(getattr(self, f).copy() for f in fields))

    def trainable(self) -> tuple[np.ndarray, ...]:
        return tuple(getattr(self, f) for f in TRAINABLE_FIELDS)


def parameter_count(model: MlpModel) -> int:
    """Exact parameter count: n1*n2 + n2 + 4*n2 + n2*n3 + n3."""
    n1, n2, n3 = model.dims
    return n1 * n2 + n2 + 4 * n2 + n2 * n3 + n3


def init_model(n1: int, n2: int, n3: int, rng: np.random.Generator,
               dtype=np.float32) -> MlpModel:
    """Fan-in uniform init for weights, zero biases, identity batch norm."""
    if min(n1, n2, n3) < 1:
        raise ShapeError(f"dimensions must be >= 1, got ({n1}, {n2}, {n3})")
    lim1 = 1.0 / np.sqrt(n1)
    lim2 = 1.0 / np.sqrt(n2)
    return MlpModel(
        w1=rng.uniform(-lim1, lim1, size=(n2, n1)).astype(dtype),
        b1=np.zeros(n2, dtype=dtype),
        bn_gamma=np.ones(n2, dtype=dtype),
        bn_beta=np.zeros(n2, dtype=dtype),
        bn_mean=np.zeros(n2, dtype=dtype),
        bn_var=np.ones(n2, dtype=dtype),
        w2=rng.uniform(-lim2, lim2, size=(n3, n2)).astype(dtype),
        b2=np.zeros(n3, dtype=dtype),
    )


@dataclass
class Batch:
    """A minibatch of feature vectors with integer class labels."""

    features: np.ndarray  # [b, n1]
    labels: np.ndarray  # [b]


@dataclass
class Gradients:
    """Gradients for the trainable parameters (same shapes as the model)."""

    w1: np.ndarray
    b1: np.ndarray
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.w1, self.b1, self.bn_gamma, self.bn_beta, self.w2, self.b2)


def zeros_like_grads(model: MlpModel) -> Gradients:
    return Gradients(*(np.zeros_like(getattr(model, f)) for f in TRAINABLE_FIELDS))


@dataclass
class OptimizerState:
    """Momentum-SGD velocity buffers; fresh (zero) at construction."""

    velocity: Gradients
    learning_rate: float
    momentum: float

    @classmethod
    def fresh(cls, model: MlpModel, learning_rate: float, momentum: float) -> "OptimizerState":
        if learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 <= momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        return cls(zeros_like_grads(model), learning_rate, momentum)


@dataclass
class ForwardCache:
    """Intermediate activations needed by backward()."""

    features: np.ndarray  # input [b, n1]
    pre_bn: np.ndarray  # [b, n2]
    xhat: np.ndarray  # normalized pre-activation [b, n2]
    inv_std: np.ndarray  # [n2]
    z: np.ndarray  # post-ReLU representation [b, n2]
    probs: np.ndarray  # softmax [b, n3]


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(model: MlpModel, batch: Batch, mode: str = "train") -> tuple[np.ndarray, ForwardCache]:
    """Run the network on a batch.

    In train mode batch statistics normalize the pre-activations and the
    running stats are EMA-updated in place (momentum 0.1, unbiased variance
    stored). Eval mode uses the running stats and mutates nothing.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    n1, n2, n3 = model.dims
    x = batch.features
    if x.ndim != 2 or x.shape[1] != n1:
        raise ShapeError(f"batch features {x.shape} incompatible with input width {n1}")
    b = x.shape[0]

    a1 = x @ model.w1.T + model.b1
    if mode == "train":
        mean = a1.mean(axis=0)
        var = a1.var(axis=0)  # biased
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (a1 - mean) * inv_std
        if b > 1:
            unbiased = var * (b / (b - 1))
        else:
            unbiased = var
        model.bn_mean[...] = (1 - BN_MOMENTUM) * model.bn_mean + BN_MOMENTUM * mean
        model.bn_var[...] = (1 - BN_MOMENTUM) * model.bn_var + BN_MOMENTUM * unbiased
    else:
        inv_std = 1.0 / np.sqrt(model.bn_var + BN_EPS)
        xhat = (a1 - model.bn_mean) * inv_std
    y = model.bn_gamma * xhat + model.bn_beta
    z = np.maximum(y, 0)
    logits = z @ model.w2.T + model.b2
    probs = _softmax(logits)
    cache = ForwardCache(features=x, pre_bn=a1, xhat=xhat,
                         inv_std=np.broadcast_to(inv_std, (n2,)).copy(),
                         z=z, probs=probs)
    return logits, cache


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log softmax probability of the true class."""
    if logits.shape[0] != labels.shape[0]:
        raise ShapeError("logits/labels batch size mismatch")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    true_logit = shifted[np.arange(len(labels)), labels]
    return float(np.mean((log_norm - true_logit).astype(np.float64)))


def backward(model: MlpModel, cache: ForwardCache, labels: np.ndarray,
             extra_dz: np.ndarray | None = None) -> Gradients:
    """Analytic gradient of mean cross-entropy, through the batch statistics.

    `extra_dz` is an optional gradient w.r.t. the post-ReLU representation
    (used by the contrastive objective); it is added before the ReLU gate.
    """
    b = cache.features.shape[0]
    if labels.shape[0] != b:
        raise ShapeError("labels do not match cached batch")
    dlogits = cache.probs.copy()
    dlogits[np.arange(b), labels] -= 1.0
    dlogits /= b

    dw2 = dlogits.T @ cache.z
    db2 = dlogits.sum(axis=0)
    dz = dlogits @ model.w2
    if extra_dz is not None:
        dz = dz + extra_dz
    dy = dz * (cache.z > 0)
    dgamma = (dy * cache.xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * model.bn_gamma
    # batch-norm backward through the batch mean and (biased) variance
    da1 = (cache.inv_std / b) * (
        b * dxhat - dxhat.sum(axis=0) - cache.xhat * (dxhat * cache.xhat).sum(axis=0)
    )
    dw1 = da1.T @ cache.features
    db1 = da1.sum(axis=0)
    dt = model.dtype
    return Gradients(dw1.astype(dt), db1.astype(dt), dgamma.astype(dt),
                     dbeta.astype(dt), dw2.astype(dt), db2.astype(dt))


def add_proximal(grads: Gradients, model: MlpModel, anchor: MlpModel, mu: float) -> Gradients:
    """Add the gradient of (mu/2)*||w - w_anchor||^2 over trainable params."""
    if model.dims != anchor.dims:
        raise ShapeError("model and anchor dims differ")
    if mu < 0:
        raise ValueError("mu must be >= 0")
    if mu == 0:
        return grads
    out = []
    for g, f in zip(grads.arrays(), TRAINABLE_FIELDS):
        out.append(g + mu * (getattr(model, f) - getattr(anchor, f)))
    return Gradients(*out)


COSINE_EPS = 1e-12


def _cosine_rows(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    na = np.maximum(np.linalg.norm(a, axis=1), COSINE_EPS)
    nb = np.maximum(np.linalg.norm(b, axis=1), COSINE_EPS)
    sim = (a * b).sum(axis=1) / (na * nb)
    return sim, na, nb


def moon_contrastive(z: np.ndarray, z_glob: np.ndarray, z_prev: np.ndarray,
                     mu: float, tau: float) -> tuple[float, np.ndarray]:
    """Model-contrastive penalty and its gradient w.r.t. z.

    loss = -mu * mean log[ e^{sim(z,z_glob)/tau} /
                           (e^{sim(z,z_glob)/tau} + e^{sim(z,z_prev)/tau}) ]
    """
    if tau <= 0:
        raise ValueError("tau must be > 0")
    if mu == 0:
        return 0.0, np.zeros_like(z)
    b = z.shape[0]
    s_g, nz, ng = _cosine_rows(z, z_glob)
    s_p, _, np_ = _cosine_rows(z, z_prev)
    m = np.maximum(s_g, s_p) / tau
    e_g = np.exp(s_g / tau - m)
    e_p = np.exp(s_p / tau - m)
    frac = e_g / (e_g + e_p)
    loss = float(-mu * np.mean(np.log(frac).astype(np.float64)))
    # d loss / d s_g = -(mu/b)*(1 - frac)/tau ; d loss / d s_p = +(mu/b)*(1 - frac)/tau
    dsg = (-(mu / b) * (1 - frac) / tau)[:, None]
    dsp = ((mu / b) * (1 - frac) / tau)[:, None]
    # d sim(z, c) / dz = c/(|z||c|) - sim * z/|z|^2
    grad_g = z_glob / (nz * ng)[:, None] - s_g[:, None] * z / (nz ** 2)[:, None]
    grad_p = z_prev / (nz * np_)[:, None] - s_p[:, None] * z / (nz ** 2)[:, None]
    grad_z = dsg * grad_g + dsp * grad_p
    return loss, grad_z.astype(z.dtype)


def sgd_step(model: MlpModel, grads: Gradients, state: OptimizerState) -> None:
    """In-place momentum SGD: v <- m*v + g; p <- p - lr*v. Running stats untouched."""
    for f, g, v in zip(TRAINABLE_FIELDS, grads.arrays(), state.velocity.arrays()):
        p = getattr(model, f)
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != param {f} shape {p.shape}")
        v *= state.momentum
        v += g
        p -= state.learning_rate * v


def predict(model: MlpModel, features: np.ndarray) -> np.ndarray:
    """Top-1 class per row in eval mode; argmax ties go to the lowest index."""
    logits, _ = forward(model, Batch(features, np.zeros(len(features), dtype=np.int64)),
                        mode="eval")
    return np.argmax(logits, axis=1)


def evaluate_accuracy(model: MlpModel, features: np.ndarray, labels: np.ndarray,
                      chunk: int = 4096) -> float:
    """Fraction of top-1 predictions matching the labels."""
    if len(features) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    correct = 0
    for i in range(0, len(features), chunk):
        pred = predict(model, features[i:i + chunk])
        correct += int((pred == labels[i:i + chunk]).sum())
    return correct / len(features)
