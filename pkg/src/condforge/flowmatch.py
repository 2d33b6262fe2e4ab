"""Desk-scale conditional flow matching with exact oracles.

A linear probability path runs from data (t = 0) to noise (t = 1); the target
velocity is constant along it.  The velocity model is deliberately affine so
the regression has a closed-form optimum and an analytic gradient, making the
objective fully checkable against finite differences and least squares.
"""

import math
from dataclasses import dataclass

import numpy as np


class FlowMatchError(ValueError):
    pass


@dataclass(frozen=True)
class FlowSample:
    """One training draw: endpoints, time, and the two conditioning vectors."""

    x0: np.ndarray  # data endpoint
    x1: np.ndarray  # noise endpoint
    t: float
    c_cond: np.ndarray
    c_text: np.ndarray

    def __post_init__(self):
        if self.x0.shape != self.x1.shape:
            raise FlowMatchError(f"x0/x1 dimension mismatch: {self.x0.shape} vs {self.x1.shape}")
        if not 0.0 <= self.t <= 1.0:
            raise FlowMatchError(f"t must lie in [0, 1], got {self.t}")


def interpolate(sample):
    """Position on the linear path: (1 - t) * x0 + t * x1."""
    return (1.0 - sample.t) * sample.x0 + sample.t * sample.x1


def target_velocity(sample):
    """Target velocity of the linear path: x1 - x0 (constant in t)."""
    return sample.x1 - sample.x0


class LinearVelocityModel:
    """Affine map from concat(x_t, t, c_text, c_cond) to a velocity vector."""

    def __init__(self, weights, bias):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise FlowMatchError("weights must be (out, in) with matching bias")

    @classmethod
    def zeros(cls, data_dim, text_dim, cond_dim):
        d_in = data_dim + 1 + text_dim + cond_dim
        return cls(np.zeros((data_dim, d_in)), np.zeros(data_dim))

    def features(self, x_t, t, c_text, c_cond):
        return np.concatenate([x_t, [t], c_text, c_cond])

    def predict(self, x_t, t, c_text, c_cond):
        z = self.features(x_t, t, c_text, c_cond)
        if z.shape[0] != self.weights.shape[1]:
            raise FlowMatchError(
                f"feature dimension {z.shape[0]} does not match weights {self.weights.shape}"
            )
        return self.weights @ z + self.bias

    def copy(self):
        return LinearVelocityModel(self.weights.copy(), self.bias.copy())


def _batch_arrays(model, batch):
    if len(batch) == 0:
        raise FlowMatchError("empty batch")
    feats = np.stack(
        [model.features(interpolate(s), s.t, s.c_text, s.c_cond) for s in batch]
    )
    targets = np.stack([target_velocity(s) for s in batch])
    if feats.shape[1] != model.weights.shape[1]:
        raise FlowMatchError(
            f"feature dimension {feats.shape[1]} does not match weights {model.weights.shape}"
        )
    return feats, targets


def fm_loss(model, batch):
    """Mean squared velocity-matching error over the batch."""
    feats, targets = _batch_arrays(model, batch)
    preds = feats @ model.weights.T + model.bias
    err = preds - targets
    return float((err * err).sum(axis=1).mean())


def fm_loss_gradient(model, batch):
    """Analytic gradient of ``fm_loss`` w.r.t. weights and bias."""
    feats, targets = _batch_arrays(model, batch)
    preds = feats @ model.weights.T + model.bias
    err = preds - targets
    scale = 2.0 / len(batch)
    grad_w = scale * (err.T @ feats)
    grad_b = scale * err.sum(axis=0)
    return grad_w, grad_b


def least_squares_optimum(model_shape, batch):
    """Closed-form optimum of the objective for the affine family.

    ``model_shape`` is any model with the target dimensions; returns a new
    fitted model (the acceptance oracle for ``fit``).
    """
    feats, targets = _batch_arrays(model_shape, batch)
    design = np.column_stack([feats, np.ones(len(feats))])
    sol, *_ = np.linalg.lstsq(design, targets, rcond=None)
    return LinearVelocityModel(sol[:-1].T, sol[-1])


def fit(model, dataset, steps, lr, on_step=None):
    """Full-batch gradient descent; returns the fitted model.

    Raises when the loss diverges past 1e12, reporting the step index.
    ``on_step(step, loss)`` is called once per step when given.
    """
    if lr < 0.0:
        raise FlowMatchError("lr must be non-negative")
    fitted = model.copy()
    for step in range(steps):
        loss = fm_loss(fitted, dataset)
        if loss > 1e12 or math.isnan(loss):
            raise FlowMatchError(f"divergence at step {step}: loss {loss}")
        if on_step is not None:
            on_step(step, loss)
        grad_w, grad_b = fm_loss_gradient(fitted, dataset)
        fitted.weights -= lr * grad_w
        fitted.bias -= lr * grad_b
    return fitted


def make_planted_dataset(n, data_dim=2, text_dim=4, cond_dim=4, seed=0, cond_coupling=1.0):
    """Dataset whose true velocities come from a known affine field.

    The planted field reads only (t, c_text, c_cond, bias), never x_t, so the
    samples are exactly realizable: x1 is chosen as x0 + planted_velocity.
    ``cond_coupling`` scales the c_cond block, which is what the conditioning
    ablation flips.
    """
    rng = np.random.default_rng(seed)
    d_in = data_dim + 1 + text_dim + cond_dim
    weights = np.zeros((data_dim, d_in))
    weights[:, data_dim : data_dim + 1] = rng.normal(size=(data_dim, 1))
    weights[:, data_dim + 1 : data_dim + 1 + text_dim] = rng.normal(size=(data_dim, text_dim))
    weights[:, data_dim + 1 + text_dim :] = cond_coupling * rng.normal(
        size=(data_dim, cond_dim)
    )
    bias = rng.normal(size=data_dim)
    planted = LinearVelocityModel(weights, bias)

    samples = []
    for _ in range(n):
        x0 = rng.normal(size=data_dim)
        t = float(rng.uniform())
        c_text = rng.normal(size=text_dim)
        c_cond = rng.normal(size=cond_dim)
        v = planted.predict(np.zeros(data_dim), t, c_text, c_cond)
        samples.append(FlowSample(x0=x0, x1=x0 + v, t=t, c_cond=c_cond, c_text=c_text))
    return planted, samples
