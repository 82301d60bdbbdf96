"""
Toy Feature Extractor
Two-layer perceptron, momentum SGD and the synthetic clustered dataset
"""

import math
from typing import Dict, Tuple

import numpy as np
from numpy.typing import NDArray

from src.core.exceptions import NonFiniteGradient, RejectionExhausted
from src.core.logger import logger
from src.domain.models import EmbeddingBatch, Labels, SynthSpec, ToyNet
from src.services.hypersphere import angle, sample_uniform_sphere
from src.utils.rng import SeedLike, make_rng

Params = Dict[str, NDArray[np.float64]]

MIN_MEAN_SEPARATION = math.radians(15.0)
MAX_REJECTION_ATTEMPTS = 10_000


def init_net(d_in: int, hidden: int, d_emb: int, seed: SeedLike) -> ToyNet:
    """
    He-initialised ToyNet with zero biases

    Args:
        d_in: Input dimension
        hidden: Width of the rectified layer
        d_emb: Embedding dimension
        seed: Generator or seed

    Returns:
        ToyNet instance
    """
    rng = make_rng(seed)
    return ToyNet(
        w1=rng.standard_normal((d_in, hidden)) * math.sqrt(2.0 / d_in),
        b1=np.zeros(hidden),
        w2=rng.standard_normal((hidden, d_emb)) * math.sqrt(2.0 / hidden),
        b2=np.zeros(d_emb),
    )


def forward(net: ToyNet, inputs) -> EmbeddingBatch:
    """Raw embeddings relu(x W1 + b1) W2 + b2"""
    inputs = np.asarray(inputs, dtype=np.float64)
    hidden = np.maximum(inputs @ net.w1 + net.b1, 0.0)
    return hidden @ net.w2 + net.b2


def backward(net: ToyNet, inputs, grad_embeddings) -> Params:
    """
    Parameter gradients for an upstream gradient on the raw embeddings

    Args:
        net: Network the embeddings came from
        inputs: N x d_in batch
        grad_embeddings: N x d_emb upstream gradient

    Returns:
        Gradient per parameter name
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    grad_embeddings = np.asarray(grad_embeddings, dtype=np.float64)
    pre = inputs @ net.w1 + net.b1
    hidden = np.maximum(pre, 0.0)

    grad_hidden = (grad_embeddings @ net.w2.T) * (pre > 0.0)
    return {
        "w1": inputs.T @ grad_hidden,
        "b1": grad_hidden.sum(axis=0),
        "w2": hidden.T @ grad_embeddings,
        "b2": grad_embeddings.sum(axis=0),
    }


def sgd_step(params: Params, grads: Params, state: Params, lr: float,
             momentum: float, weight_decay: float) -> Tuple[Params, Params]:
    """
    One momentum SGD step with L2 weight decay folded into the velocity

    v <- momentum * v + grad + weight_decay * param;  param <- param - lr * v

    Args:
        params: Current parameters by name
        grads: Gradients by name
        state: Velocities by name; missing entries start at zero
        lr: Learning rate
        momentum: Velocity decay
        weight_decay: L2 coefficient

    Returns:
        (new params, new state); the inputs are left untouched

    Raises:
        NonFiniteGradient: If any gradient entry is NaN or infinite
    """
    new_params: Params = {}
    new_state: Params = {}
    for name, param in params.items():
        grad = grads[name]
        if grad.shape != param.shape:
            raise ValueError(f"Gradient for '{name}' has shape {grad.shape}, expected {param.shape}")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradient(f"Gradient for '{name}' is not finite")
        velocity = momentum * state.get(name, np.zeros_like(param)) + grad + weight_decay * param
        new_state[name] = velocity
        new_params[name] = param - lr * velocity
    return new_params, new_state


def _class_means(spec: SynthSpec, rng: np.random.Generator) -> NDArray[np.float64]:
    means = []
    attempts = 0
    while len(means) < spec.n_classes:
        if attempts >= MAX_REJECTION_ATTEMPTS:
            raise RejectionExhausted(
                f"Could not place {spec.n_classes} means at >= 15 degrees apart in d={spec.d_in} "
                f"after {MAX_REJECTION_ATTEMPTS} attempts"
            )
        attempts += 1
        candidate = sample_uniform_sphere(spec.d_in, rng)
        if all(angle(candidate, m) >= MIN_MEAN_SEPARATION for m in means):
            means.append(candidate)
    return np.stack(means)


def synth_dataset(spec: SynthSpec) -> Tuple[NDArray[np.float64], Labels]:
    """
    Clustered synthetic identities around well separated unit means

    Args:
        spec: Dataset parameters

    Returns:
        (inputs, labels), rows grouped by class

    Raises:
        RejectionExhausted: If the class means cannot be separated by 15 degrees
    """
    rng = make_rng(spec.seed)
    means = _class_means(spec, rng)
    scale = 0.0 if math.isinf(spec.kappa) else 1.0 / math.sqrt(spec.kappa)

    labels = np.repeat(np.arange(spec.n_classes, dtype=np.int64), spec.samples_per_class)
    noise = rng.standard_normal((labels.size, spec.d_in)) * scale
    inputs = means[labels] + noise
    logger.info(f"Synthesised {labels.size} samples over {spec.n_classes} classes in d={spec.d_in}")
    return inputs, labels


def split_holdout(labels, fraction: float, seed: SeedLike) -> Tuple[NDArray[np.int64], NDArray[np.int64]]:
    """
    Stratified train / held-out split of row indices

    Args:
        labels: Class id per row
        fraction: Share of each class held out
        seed: Generator or seed

    Returns:
        (train indices, held-out indices), both sorted
    """
    rng = make_rng(seed)
    labels = np.asarray(labels, dtype=np.int64)
    train, held = [], []
    for label in np.unique(labels):
        rows = rng.permutation(np.flatnonzero(labels == label))
        cut = int(round(fraction * rows.size))
        held.append(rows[:cut])
        train.append(rows[cut:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(held))
