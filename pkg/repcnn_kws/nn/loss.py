import numpy as np

from .._errors import ConfigError, ShapeError
from .._utils import check_finite

FOCAL_GAMMA = 2.0
""" Default focusing parameter """

FOCAL_ALPHA = 0.25
""" Default weight of the positive class """


def _validate(logits: np.ndarray, labels: np.ndarray):
    logits = np.asarray(logits).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if logits.size == 0:
        raise ShapeError("focal loss of an empty batch")
    if logits.shape != labels.shape:
        raise ShapeError(f"{logits.size} logits but {labels.size} labels")
    if not np.all((labels == 0) | (labels == 1)):
        raise ConfigError("focal loss labels must be 0 or 1")
    return logits, labels


def focal_loss_per_sample(logits: np.ndarray, labels: np.ndarray,
                          gamma: float = FOCAL_GAMMA, alpha: float = FOCAL_ALPHA):
    """ Binary focal loss and its gradient for every sample

    loss = -alpha_t * (1 - p_t)^gamma * log(p_t), where p_t is the sigmoid
    probability of the true class and alpha_t is alpha for positives and
    1 - alpha for negatives.

    Args:
        logits (np.ndarray): Logits, any shape (flattened)
        labels (np.ndarray): 0/1 labels, same size
        gamma (float, optional): Focusing parameter, default is FOCAL_GAMMA
        alpha (float, optional): Positive class weight, default is FOCAL_ALPHA

    Returns:
        tuple: (losses, grads), both 1-D of the batch size, not averaged
    """
    logits, labels = _validate(logits, labels)
    if gamma < 0 or not 0 <= alpha <= 1:
        raise ConfigError(f"focal loss needs gamma >= 0 and alpha in [0, 1], got {gamma}, {alpha}")
    sign = np.where(labels == 1, 1.0, -1.0)
    alpha_t = np.where(labels == 1, alpha, 1.0 - alpha)
    z = sign * logits.astype(np.float64)
    log_p = -np.logaddexp(0.0, -z)
    p = np.exp(log_p)
    one_minus_p = np.exp(-np.logaddexp(0.0, z))
    modulator = one_minus_p ** gamma
    losses = -alpha_t * modulator * log_p
    grads = alpha_t * sign * modulator * (gamma * p * log_p - one_minus_p)
    check_finite(losses, "focal loss")
    return losses, grads


def focal_loss(logits: np.ndarray, labels: np.ndarray,
               gamma: float = FOCAL_GAMMA, alpha: float = FOCAL_ALPHA):
    """ Mean binary focal loss

    Args:
        logits (np.ndarray): Logits
        labels (np.ndarray): 0/1 labels
        gamma (float, optional): Focusing parameter, default is FOCAL_GAMMA
        alpha (float, optional): Positive class weight, default is FOCAL_ALPHA

    Returns:
        tuple: (loss, grad_logits) with grad_logits shaped like logits

    Raises:
        ShapeError: Empty batch or size mismatch
    """
    shape = np.shape(logits)
    losses, grads = focal_loss_per_sample(logits, labels, gamma, alpha)
    n = losses.size
    return float(losses.mean()), (grads / n).reshape(shape)
