"""
Continual training of a local field.

Total loss L = lambda_b L_B + lambda_e L_E + lambda_EWC L_EWC. Decoder weights
step with Adam; map-point features step with plain gradient descent,
f_k <- f_k - lambda dL/df_k, where dL/df_k accumulates the interpolation
weights of every sample that touched f_k.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from torch.func import functional_call, grad, vmap

from core.exceptions import ConfigError, DivergenceError, EmptyInputError
from sampling.replay import mix_replay
from sampling.sampler import SampleSet

from .losses import bce_terms, loss_bce, loss_eikonal, loss_ewc
from .network import DTYPE, forward

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.001  # lambda
    bce_weight: float = 1.0  # lambda_b
    eikonal_weight: float = 0.5  # lambda_e
    ewc_weight: float = 0.1  # lambda_EWC
    convergence_threshold: float = 0.0001  # thres_l
    sigma: float = 0.05
    feature_learning_rate: Optional[float] = None
    batch_size: int = 4096
    new_fraction: float = 0.5
    max_iters: int = 300
    window: int = 10
    smoothing: float = 0.3
    fisher_samples: int = 256
    cadence: int = 5

    def __post_init__(self):
        if self.max_iters < 1 or self.window < 1:
            raise ConfigError('max_iters and window must be at least 1')
        if self.sigma <= 0:
            raise ConfigError('sigma must be positive')
        if not 0 < self.new_fraction <= 1:
            raise ConfigError('new_fraction must lie in (0, 1]')
        if not 0 < self.smoothing <= 1:
            raise ConfigError('smoothing must lie in (0, 1]')

    @property
    def feature_lr(self):
        if self.feature_learning_rate is None:
            return self.learning_rate
        return self.feature_learning_rate


@dataclass
class TrainingReport:
    iterations: int
    initial_loss: float
    final_loss: float
    initial_bce: float
    final_bce: float
    stop_reason: str
    floor_bce: float = 0.0  # entropy of the soft targets, the lowest reachable BCE


def _inputs(batch, store):
    """Tensors for the samples that have map points nearby."""
    hood = store.neighborhood(batch.positions)
    keep = hood.valid
    if not keep.any():
        raise EmptyInputError('No training sample lies near the feature store')
    sub = type(hood)(hood.ids[keep], hood.weights[keep], hood.valid[keep])
    p = torch.as_tensor(batch.positions[keep], dtype=DTYPE).requires_grad_(True)
    c = torch.as_tensor(batch.colors[keep], dtype=DTYPE)
    label = torch.as_tensor(batch.sdf[keep], dtype=DTYPE)
    return p, c, store.gather(sub), label


def total_loss(batch, store, params, cfg):
    """Weighted loss as a differentiable tensor, plus its detached parts."""
    p, c, f, label = _inputs(batch, store)
    out = forward(p, c, f, params, create_graph=True)
    bce = loss_bce(out.sdf, label, cfg.sigma)
    eikonal = loss_eikonal(out.grad_p)
    ewc = loss_ewc(params)
    loss = cfg.bce_weight * bce + cfg.eikonal_weight * eikonal + cfg.ewc_weight * ewc
    parts = {'bce': float(bce.detach()), 'eikonal': float(eikonal.detach()), 'ewc': float(ewc.detach())}
    return loss, parts


def train_step(batch, store, params, cfg):
    """One optimization step; returns (params, store, loss before the step)."""
    if len(batch) == 0:
        raise EmptyInputError('Cannot train on an empty batch')
    optimizer = params.optimizer(cfg.learning_rate)
    optimizer.zero_grad(set_to_none=True)
    store.features.grad = None
    loss, parts = total_loss(batch, store, params, cfg)
    value = float(loss.detach())
    if not math.isfinite(value):
        raise DivergenceError(f'Training loss became non-finite ({parts})')
    loss.backward()
    optimizer.step()
    if store.features.grad is not None:
        with torch.no_grad():
            store.features -= cfg.feature_lr * store.features.grad
        store.features.grad = None
    return params, store, value


def converged(history, window, threshold):
    """True once the loss moved less than ``threshold`` either way over the last ``window`` steps."""
    return len(history) >= window and abs(history[-window] - history[-1]) < threshold


def adaptive_train(samples, store, params, cfg, buffer=None, seed=0):
    """
    Train until the smoothed loss improves by less than the convergence
    threshold over ``cfg.window`` steps, or ``cfg.max_iters`` is reached.
    """
    if len(samples) == 0 and (buffer is None or len(buffer) == 0):
        raise EmptyInputError('adaptive_train needs samples')
    reference = mix_replay(buffer, samples, cfg.new_fraction, cfg.batch_size, seed)
    initial_bce = _bce_only(reference, store, params, cfg)
    floor_bce = _bce_floor(reference, store, cfg)
    history = []
    smoothed = None
    initial_loss = None
    stop_reason = 'max_iters'
    iteration = 0
    for iteration in range(1, cfg.max_iters + 1):
        batch = mix_replay(buffer, samples, cfg.new_fraction, cfg.batch_size, seed + iteration)
        _, _, value = train_step(batch, store, params, cfg)
        if initial_loss is None:
            initial_loss = value
        smoothed = value if smoothed is None else cfg.smoothing * value + (1.0 - cfg.smoothing) * smoothed
        history.append(smoothed)
        if converged(history, cfg.window, cfg.convergence_threshold):
            stop_reason = 'converged'
            break

    final_loss, parts = total_loss(reference, store, params, cfg)
    report = TrainingReport(
        iterations=iteration,
        initial_loss=initial_loss,
        final_loss=float(final_loss.detach()),
        initial_bce=initial_bce,
        final_bce=parts['bce'],
        stop_reason=stop_reason,
        floor_bce=floor_bce,
    )
    logger.debug(
        f'Training stopped after {iteration} iterations ({stop_reason}), '
        f'loss {report.initial_loss:.5f} -> {report.final_loss:.5f}'
    )
    return report


def _bce_only(batch, store, params, cfg):
    p, c, f, label = _inputs(batch, store)
    with torch.no_grad():
        out = forward(p, c, f.detach(), params)
    return float(loss_bce(out.sdf, label, cfg.sigma))


def _bce_floor(batch, store, cfg):
    _, _, _, label = _inputs(batch, store)
    return float(loss_bce(label, label, cfg.sigma))


def consolidate_ewc(params, recent_batches, store, cfg, seed=0):
    """
    Anchor theta* at the current weights and fold squared per-sample
    gradients of the weighted BCE term into the running diagonal Fisher estimate G.
    """
    batches = [b for b in recent_batches if b is not None and len(b)]
    if not batches:
        raise EmptyInputError('consolidate_ewc needs at least one batch')
    pool = SampleSet.concatenate(batches)
    pool = pool.subset(np.flatnonzero(store.neighborhood(pool.positions).valid))
    if not len(pool):
        raise EmptyInputError('No consolidation sample lies near the feature store')
    rng = np.random.default_rng(seed)
    if len(pool) > cfg.fisher_samples:
        pool = pool.subset(np.sort(rng.choice(len(pool), size=cfg.fisher_samples, replace=False)))
    p, c, f, label = _inputs(pool, store)
    p, f = p.detach(), f.detach()

    theta = {name: value.detach() for name, value in params.named_parameters()}
    decoder = params.decoder
    sigma, weight = cfg.sigma, cfg.bce_weight

    def sample_loss(weights, p_i, c_i, f_i, label_i):
        pred = functional_call(decoder, weights, (p_i.unsqueeze(0), c_i.unsqueeze(0), f_i.unsqueeze(0)))
        return weight * bce_terms(pred, label_i.unsqueeze(0), sigma).sum()

    per_sample = vmap(grad(sample_loss), in_dims=(None, 0, 0, 0, 0))(theta, p, c, f, label)
    n = p.shape[0]
    total = params.ewc_count + n
    for name in theta:
        squared_sum = (per_sample[name] ** 2).sum(dim=0)
        params.ewc_importance[name] = (params.ewc_importance[name] * params.ewc_count + squared_sum) / total
        params.ewc_anchor[name] = theta[name].clone()
    params.ewc_count = total
    logger.debug(f'Consolidated EWC over {n} samples ({total} total)')
    return params
