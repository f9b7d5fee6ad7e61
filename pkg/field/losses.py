"""Training losses for the SDF decoder."""
import torch
import torch.nn.functional as F

LOGIT_CLAMP = 15.0


def bce_terms(pred, label, sigma):
    """Per-sample BCE between sigmoid(pred / sigma) and sigmoid(label / sigma)."""
    logits = torch.clamp(pred / sigma, -LOGIT_CLAMP, LOGIT_CLAMP)
    target = torch.sigmoid(label / sigma)
    return F.binary_cross_entropy_with_logits(logits, target, reduction='none')


def loss_bce(pred_sdf, label_sdf, sigma):
    """Soft-target binary cross-entropy averaged over the batch."""
    if sigma <= 0:
        raise ValueError('sigma must be positive')
    pred = torch.as_tensor(pred_sdf, dtype=torch.float64)
    label = torch.as_tensor(label_sdf, dtype=torch.float64)
    return bce_terms(pred, label, sigma).mean()


def loss_eikonal(grad_p):
    """Mean of (|g| - 1)^2 over the batch."""
    grad_p = torch.as_tensor(grad_p, dtype=torch.float64)
    return ((torch.linalg.vector_norm(grad_p, dim=-1) - 1.0) ** 2).mean()


def loss_ewc(params):
    """Sum_i G_i (theta_i - theta*_i)^2."""
    total = torch.zeros((), dtype=torch.float64)
    for name, theta in params.named_parameters():
        anchor = params.ewc_anchor[name]
        total = total + (params.ewc_importance[name] * (theta - anchor) ** 2).sum()
    return total
