"""Finite-difference verification of the reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .model import ModelConfig, RegressionModel, build_model, reduced_config


def _loss_and_grads(model: RegressionModel, frames: np.ndarray, targets_mm: np.ndarray):
    z = model.normalize_targets(targets_mm)
    model.zero_grad()
    out = model.forward_normalized(frames, training=True)
    resid = out - z
    loss = float(np.mean(resid * resid))
    model.backward((2.0 / resid.size) * resid)
    return loss


def _loss_only(model: RegressionModel, frames: np.ndarray, targets_mm: np.ndarray):
    z = model.normalize_targets(targets_mm)
    out = model.forward_normalized(frames, training=True)
    resid = out - z
    return float(np.mean(resid * resid))


def grad_check(
    model: RegressionModel,
    frames: np.ndarray,
    targets_mm: np.ndarray,
    epsilon: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients,
    taken over every element of every parameter tensor.

    Intended for small double-precision models (see ``reduced_config``);
    batch-norm runs in training mode, so running statistics are frozen
    around each probe to keep the two loss evaluations consistent.
    """
    _loss_and_grads(model, frames, targets_mm)
    analytic = {p.name: p.grad.copy() for p in model.parameters()}
    worst = 0.0
    for p in model.parameters():
        saved_buffers = [
            (b, b.data.copy()) for layer in model.layers for b in layer.buffers
        ]
        num = np.zeros_like(p.data)
        flat = p.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            lp = _loss_only(model, frames, targets_mm)
            flat[i] = orig - epsilon
            lm = _loss_only(model, frames, targets_mm)
            flat[i] = orig
            num.ravel()[i] = (lp - lm) / (2.0 * epsilon)
        for b, data in saved_buffers:
            b.data[...] = data
        a = analytic[p.name]
        denom = np.maximum(np.abs(a) + np.abs(num), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - num) / denom)))
    return worst


def grad_check_reduced(seed: int = 0, epsilon: float = 1e-5, batch: int = 2) -> float:
    """Run the standard reduced-model check: 2 blocks, 4 filters, 16x16 input."""
    cfg = reduced_config()
    model = build_model(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    frames = rng.random((batch, cfg.input_resolution, cfg.input_resolution))
    lo = np.asarray(cfg.target_low)
    hi = np.asarray(cfg.target_high)
    targets = rng.uniform(lo, hi, size=(batch, cfg.n_outputs))
    return grad_check(model, frames, targets, epsilon=epsilon)
