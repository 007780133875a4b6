"""Loss terms with analytic gradients.

Every term returns its value together with exact gradients wrt its inputs;
the trainer composes them and the test suite checks each against central
finite differences.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .util import sigmoid

log = logging.getLogger(__name__)

KL_VAR_FLOOR = 1e-8


@dataclass
class ObjectiveWeights:
    """Scalar weights of the composite objectives.

    lambda_theta regularizes the pairwise ranking loss.  alpha and beta are
    required for the adversarial kinds; lambda_model weights the baseline
    penalty terms; gamma is the baseline L2 weight and falls back to
    lambda_theta when unset.  All weights must be non-negative.
    """

    lambda_theta: float = 0.1
    alpha: float = None
    beta: float = None
    lambda_model: float = None
    gamma: float = None

    def gamma_or_default(self):
        return self.lambda_theta if self.gamma is None else self.gamma


def bpr_pair_loss(score_pos, score_neg):
    """-ln sigma(score_pos - score_neg); returns (loss, d_pos, d_neg)."""
    d = score_pos - score_neg
    loss = np.logaddexp(0.0, -d)
    g_pos = -sigmoid(-d)  # equals sigma(d) - 1
    return float(loss), float(g_pos), float(-g_pos)


def bpr_pair_loss_batch(score_pos, score_neg):
    """Vectorized pair loss; d_neg is the negation of the returned d_pos."""
    d = np.asarray(score_pos, dtype=np.float64) - np.asarray(
        score_neg, dtype=np.float64
    )
    return np.logaddexp(0.0, -d), -sigmoid(-d)


def kl_loss_user(scores):
    """Moment-matched KL(Normal(mean, var) || Normal(0, 1)) of one user's
    batch scores: (mean^2 + var - 1)/2 - ln(var)/2 with population variance.

    Fewer than two scores contributes nothing.  The variance is floored at
    1e-8; in the floored regime the gradient flows through the mean only.

    Returns:
        (loss, grad) with grad shaped like scores.
    """
    s = np.asarray(scores, dtype=np.float64)
    n = s.size
    if n < 2:
        return 0.0, np.zeros_like(s)
    mu = s.mean()
    var = s.var()
    if var < KL_VAR_FLOOR:
        loss = (mu * mu + KL_VAR_FLOOR - 1.0) / 2.0 - 0.5 * np.log(KL_VAR_FLOOR)
        grad = np.full_like(s, mu / n)
        return float(loss), grad
    loss = (mu * mu + var - 1.0) / 2.0 - 0.5 * np.log(var)
    grad = mu / n + (1.0 - 1.0 / var) * (s - mu) / n
    return float(loss), grad


def fatr_reg(item_free, item_sensitive):
    """Half squared Frobenius norm of the cross-Gram between the sensitive
    and free item blocks (rows correlated across the item axis).

    Args:
        item_free: (d - A, M) trained block.
        item_sensitive: (A, M) frozen indicator block.

    Returns:
        (loss, grad wrt item_free), gradient shape (d - A, M).
    """
    qf = np.asarray(item_free, dtype=np.float64)
    qs = np.asarray(item_sensitive, dtype=np.float64)
    if qf.shape[1] != qs.shape[1]:
        raise ValueError(
            f"item axis mismatch: {qf.shape[1]} != {qs.shape[1]}"
        )
    cross = qs @ qf.T  # (A, d - A)
    loss = 0.5 * float(np.sum(cross * cross))
    grad = cross.T @ qs
    return loss, grad


def _mean_gap_penalty(scores_a, scores_b, label):
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        log.debug("%s: a group is absent from the batch, penalty 0", label)
        return 0.0, np.zeros_like(a), np.zeros_like(b)
    gap = a.mean() - b.mean()
    loss = 0.5 * gap * gap
    return (
        float(loss),
        np.full_like(a, gap / a.size),
        np.full_like(b, -gap / b.size),
    )


def reg_rsp_penalty(scores_g1, scores_g2):
    """Half squared gap between the two groups' mean batch scores.

    Returns (loss, grad_g1, grad_g2); an empty side yields zero penalty.
    """
    return _mean_gap_penalty(scores_g1, scores_g2, "reg_rsp_penalty")


def reg_reo_penalty(pos_scores_g1, pos_scores_g2):
    """Same gap penalty restricted to positive-pair scores."""
    return _mean_gap_penalty(pos_scores_g1, pos_scores_g2, "reg_reo_penalty")
