"""Training loops for the ranking models.

Three families share one engine:

* plain pairwise ranking ("bpr"): shuffled mini-batches of positives, each
  positive paired with freshly sampled negatives, sparse Adam updates with
  per-triple L2 on the touched rows;
* adversarial kinds ("dpr-rsp", "dpr-reo"): pairwise pretraining, then
  alternating rounds of one full discriminator sweep over the training
  positives (gradient ascent on its log-likelihood) and
  ``theta_batches_per_round`` factor mini-batches descending the combined
  objective with the discriminator frozen;
* penalized baselines ("fatr", "reg-rsp", "reg-reo"): the pairwise loop plus
  their respective penalty term and the per-user score-normalization term.

Randomness is split into independent streams (factor init, batch shuffling
and negative sampling, discriminator init, discriminator sweeps) so that an
adversarial run with zeroed adversary and normalization weights reproduces a
plain pairwise run bit for bit.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import adversary as adv
from .errors import ConfigError, DataError, TrainingDiverged
from .evaluation import f1_at_k, rank_topk
from .mf import (
    AdamState,
    FatrParams,
    adam_step,
    init_fatr_params,
    init_params,
)
from .objectives import (
    KL_VAR_FLOOR,
    ObjectiveWeights,
    bpr_pair_loss_batch,
    fatr_reg,
    reg_reo_penalty,
    reg_rsp_penalty,
)

log = logging.getLogger(__name__)

MODEL_KINDS = ("bpr", "dpr-rsp", "dpr-reo", "fatr", "reg-rsp", "reg-reo")
_DPR_KINDS = ("dpr-rsp", "dpr-reo")
_BASELINE_KINDS = ("fatr", "reg-rsp", "reg-reo")

VAL_K = 15
_COLLAPSE_FRACTION = 0.1
_COLLAPSE_STREAK = 5


@dataclass
class TrainConfig:
    """Everything a training run depends on, seed included."""

    kind: str = "bpr"
    dim: int = 20
    lr_bpr: float = 0.01
    lr_adv: float = 0.005
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    negative_rate: int = 5
    batch_size: int = 1024
    epochs: int = 50
    pretrain_epochs: int = 10
    adv_layers: int = 4
    adv_hidden: int = 50
    theta_batches_per_round: int = 1
    eval_every: int = 5
    seed: int = 0

    def validate(self, num_groups=None):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"train.model: unknown kind '{self.kind}'")
        if self.dim < 1:
            raise ConfigError("train.dim: must be >= 1")
        if self.lr_bpr <= 0 or self.lr_adv <= 0:
            raise ConfigError("train.lr_bpr/lr_adv: must be positive")
        if self.negative_rate < 1:
            raise ConfigError("train.negative_rate: must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size: must be >= 1")
        if self.epochs < 0 or self.pretrain_epochs < 0:
            raise ConfigError("train.epochs: must be >= 0")
        if self.adv_layers < 0:
            raise ConfigError("train.adv_layers: must be >= 0")
        if self.adv_layers > 0 and self.adv_hidden < 1:
            raise ConfigError("train.adv_hidden: must be >= 1")
        if self.theta_batches_per_round < 1:
            raise ConfigError("train.theta_batches_per_round: must be >= 1")
        if self.eval_every < 0:
            raise ConfigError("train.eval_every: must be >= 0")
        w = self.weights
        if w.lambda_theta < 0:
            raise ConfigError("train.lambda_theta: must be >= 0")
        for name in ("alpha", "beta", "lambda_model", "gamma"):
            v = getattr(w, name)
            if v is not None and v < 0:
                raise ConfigError(f"train.{name}: must be >= 0")
        if self.kind in _DPR_KINDS:
            if w.alpha is None:
                raise ConfigError(
                    f"train.alpha required for kind {self.kind}"
                )
            if w.beta is None:
                raise ConfigError(
                    f"train.beta required for kind {self.kind}"
                )
        if self.kind in _BASELINE_KINDS:
            if w.lambda_model is None:
                raise ConfigError(
                    f"train.lambda_model required for kind {self.kind}"
                )
            if w.beta is None:
                raise ConfigError(
                    f"train.beta required for kind {self.kind}"
                )
        if num_groups is not None:
            if self.kind == "fatr" and num_groups >= self.dim:
                raise ConfigError(
                    f"train.dim: fatr needs num_groups < dim "
                    f"({num_groups} >= {self.dim})"
                )
            if self.kind in ("reg-rsp", "reg-reo") and num_groups != 2:
                raise ConfigError(
                    f"train.model: {self.kind} supports exactly 2 groups, "
                    f"got {num_groups}"
                )


@dataclass
class EpochRecord:
    epoch: int
    loss_bpr: float
    loss_adv: float
    loss_kl: float
    val_f1_15: float
    seconds: float


def _fmt(x):
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    return repr(float(x))


@dataclass
class TrainLog:
    """Per-epoch records, serialized as CSV."""

    records: list = field(default_factory=list)

    CSV_HEADER = "epoch,loss_bpr,loss_adv,loss_kl,val_f1_15,seconds"

    def to_csv(self):
        lines = [self.CSV_HEADER]
        for r in self.records:
            lines.append(
                f"{r.epoch},{_fmt(r.loss_bpr)},{_fmt(r.loss_adv)},"
                f"{_fmt(r.loss_kl)},{_fmt(r.val_f1_15)},{_fmt(r.seconds)}"
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())


@dataclass
class TrainResult:
    """Outcome of a run.

    params carries the best-validation-F1@15 snapshot when validation ran,
    otherwise the final parameters (final_params always holds the latter).
    """

    params: object
    final_params: object
    adversary: object
    log: TrainLog
    adv_samples_per_sweep: int = 0
    best_val_f1: float = float("nan")


def _sample_neg_matrix(dataset, users, count, rng):
    """(len(users), count) negatives, uniform with replacement outside each
    user's training positives."""
    m = dataset.num_items
    uniq = np.unique(users)
    if (dataset.train_sizes[uniq] >= m).any():
        full = int(uniq[dataset.train_sizes[uniq] >= m][0])
        raise DataError(f"user {full} has no candidate negative items")
    out = rng.integers(0, m, size=(len(users), count))
    rep_users = np.repeat(users, count)
    bad = dataset.in_train(rep_users, out.ravel()).reshape(out.shape)
    while bad.any():
        out[bad] = rng.integers(0, m, size=int(bad.sum()))
        bad = dataset.in_train(rep_users, out.ravel()).reshape(out.shape)
    return out


class _BatchStream:
    """Cycling shuffled mini-batches of training positives.

    One shuffle per pass over the data; pulling ``batches_per_epoch``
    batches consumes exactly one pass no matter who pulls, which is what
    makes the adversarial schedule reduce to the plain one when its extra
    terms are zeroed.
    """

    def __init__(self, dataset, batch_size, negative_rate, rng):
        self.dataset = dataset
        self.batch_size = batch_size
        self.negative_rate = negative_rate
        self.rng = rng
        self.n = dataset.num_train_pairs
        if self.n == 0:
            raise DataError("no training pairs")
        self.batches_per_epoch = -(-self.n // batch_size)
        self._order = None
        self._cursor = 0

    def next_batch(self):
        if self._order is None or self._cursor >= self.n:
            self._order = self.rng.permutation(self.n)
            self._cursor = 0
        sel = self._order[self._cursor : self._cursor + self.batch_size]
        self._cursor += self.batch_size
        users = self.dataset.pos_users[sel]
        items = self.dataset.pos_items[sel]
        negs = _sample_neg_matrix(
            self.dataset, users, self.negative_rate, self.rng
        )
        return users, items, negs


def _scatter_rows(nrows, ncols, parts):
    """Sum (idx, vals) contributions into a dense (nrows, ncols) array."""
    acc = np.zeros((nrows, ncols))
    if not parts:
        return acc
    idx = np.concatenate([p[0] for p in parts])
    vals = np.concatenate([p[1] for p in parts], axis=0)
    for c in range(ncols):
        acc[:, c] += np.bincount(idx, weights=vals[:, c], minlength=nrows)
    return acc


class _Trainer:
    def __init__(self, config, dataset, catalog=None):
        config.validate(None if catalog is None else catalog.num_groups)
        if config.kind != "bpr" and catalog is None:
            raise ConfigError(
                f"train.model: kind {config.kind} requires group labels"
            )
        self.cfg = config
        self.ds = dataset
        self.catalog = catalog
        seeds = np.random.SeedSequence(config.seed).generate_state(4)
        if config.kind == "fatr":
            self.params = init_fatr_params(
                dataset.num_users,
                dataset.num_items,
                config.dim,
                catalog.memberships,
                np.random.default_rng(int(seeds[0])),
            )
        else:
            self.params = init_params(
                dataset.num_users,
                dataset.num_items,
                config.dim,
                np.random.default_rng(int(seeds[0])),
            )
        self.adam_theta = AdamState(self.params.blocks())
        self.stream = _BatchStream(
            dataset,
            config.batch_size,
            config.negative_rate,
            np.random.default_rng(int(seeds[1])),
        )
        self.psi = None
        self.adam_psi = None
        self.sweep_rng = None
        if config.kind in _DPR_KINDS:
            self.psi = adv.init_adversary(
                catalog.num_groups,
                config.adv_layers,
                config.adv_hidden,
                np.random.default_rng(int(seeds[2])),
            )
            self.adam_psi = AdamState(self.psi.blocks())
            self.sweep_rng = np.random.default_rng(int(seeds[3]))
        self.G = (
            catalog.memberships.astype(np.float64)
            if catalog is not None
            else None
        )
        self.log = TrainLog()
        self.best = None  # (val_f1, params copy, psi copy or None)
        self._streak = 0
        self.adv_samples_per_sweep = 0

    # ---- factor (theta) updates -------------------------------------

    def _theta_update(self, batch, alpha, beta, l2, include_ranking=True):
        """One descent step on the composite batch objective.

        include_ranking=False restricts the step to the adversary and
        normalization terms (used to probe the minimax direction).

        Returns (pair_loss_mean, kl_value) with kl_value nan when beta == 0.
        """
        users, items, negs = batch
        params = self.params
        p_mat = params.user_factors
        imat = params.item_matrix()
        b, r = negs.shape
        dim = p_mat.shape[1]
        pu = p_mat[users]
        vi = imat[items]
        vj = imat[negs]
        s_pos = (pu * vi).sum(axis=1)
        s_neg = np.einsum("bd,brd->br", pu, vj)
        losses, g_pos = bpr_pair_loss_batch(s_pos[:, None], s_neg)
        pair_loss = float(losses.mean())
        total = pair_loss if include_ranking else 0.0
        scale = 1.0 / (b * r)
        user_parts, item_parts = [], []
        if include_ranking:
            du = (g_pos[:, :, None] * (vi[:, None, :] - vj)).sum(axis=1)
            user_parts.append((users, (du + l2 * r * pu) * scale))
            di = g_pos.sum(axis=1)[:, None] * pu + l2 * r * vi
            item_parts.append((items, di * scale))
            dj = (-g_pos)[:, :, None] * pu[:, None, :] + l2 * vj
            item_parts.append((negs.ravel(), dj.reshape(-1, dim) * scale))
        rep_users = np.repeat(users, r)
        if alpha != 0.0 and self.psi is not None:
            ll_i, _, dy_i = adv.loglik_and_grads(self.psi, s_pos, self.G[items])
            adv_value = r * float(ll_i.sum()) * scale
            coef_i = (alpha * r * scale) * dy_i
            user_parts.append((users, coef_i[:, None] * vi))
            item_parts.append((items, coef_i[:, None] * pu))
            if self.cfg.kind == "dpr-rsp":
                ll_j, _, dy_j = adv.loglik_and_grads(
                    self.psi, s_neg.ravel(), self.G[negs.ravel()]
                )
                adv_value += float(ll_j.sum()) * scale
                coef_j = (alpha * scale) * dy_j
                user_parts.append(
                    (rep_users, coef_j[:, None] * vj.reshape(-1, dim))
                )
                item_parts.append(
                    (negs.ravel(), coef_j[:, None] * p_mat[rep_users])
                )
            total += alpha * adv_value
        kl_value = float("nan")
        if beta != 0.0:
            s_inst = np.concatenate([s_pos, s_neg.ravel()])
            u_inst = np.concatenate([users, rep_users])
            i_inst = np.concatenate([items, negs.ravel()])
            kl_value, g_inst = _batch_kl(s_inst, u_inst)
            user_parts.append((u_inst, (beta * g_inst)[:, None] * imat[i_inst]))
            item_parts.append((i_inst, (beta * g_inst)[:, None] * p_mat[u_inst]))
            total += beta * kl_value
        if self.cfg.kind in ("reg-rsp", "reg-reo"):
            lam = self.cfg.weights.lambda_model
            if self.cfg.kind == "reg-rsp":
                s_sel = np.concatenate([s_pos, s_neg.ravel()])
                u_sel = np.concatenate([users, rep_users])
                i_sel = np.concatenate([items, negs.ravel()])
            else:
                s_sel, u_sel, i_sel = s_pos, users, items
            in_g1 = self.G[i_sel, 0] > 0
            in_g2 = self.G[i_sel, 1] > 0
            pen, grad1, grad2 = reg_rsp_penalty(s_sel[in_g1], s_sel[in_g2])
            g_sel = np.zeros(len(s_sel))
            g_sel[in_g1] += grad1
            g_sel[in_g2] += grad2
            g_sel *= lam
            user_parts.append((u_sel, g_sel[:, None] * imat[i_sel]))
            item_parts.append((i_sel, g_sel[:, None] * p_mat[u_sel]))
            total += lam * pen
        reg_grad = None
        if self.cfg.kind == "fatr":
            lam = self.cfg.weights.lambda_model
            reg_loss, reg_grad = fatr_reg(
                params.item_free, params.item_sensitive
            )
            reg_grad = lam * reg_grad
            total += lam * reg_loss
        if not np.isfinite(total):
            raise TrainingDiverged(
                f"batch loss is not finite ({total}); try a smaller "
                "learning rate"
            )
        acc_u = _scatter_rows(params.num_users, dim, user_parts)
        acc_i = _scatter_rows(params.num_items, dim, item_parts)
        touched_u = np.unique(users)
        if isinstance(params, FatrParams):
            n_free = params.item_free.shape[0]
            g_free = acc_i[:, :n_free].T
            if reg_grad is not None:
                g_free = g_free + reg_grad
            grads = {
                "user_factors": (touched_u, acc_u[touched_u]),
                "item_free": (None, g_free),
            }
        else:
            touched_i = np.unique(np.concatenate([items, negs.ravel()]))
            grads = {
                "user_factors": (touched_u, acc_u[touched_u]),
                "item_factors": (touched_i, acc_i[touched_i]),
            }
        adam_step(self.adam_theta, params.blocks(), grads, self.cfg.lr_bpr)
        return pair_loss, kl_value

    def _theta_batches(self, n_batches, alpha, beta, l2):
        pair_sum = 0.0
        kl_sum = 0.0
        kl_n = 0
        for _ in range(n_batches):
            pair, kl = self._theta_update(
                self.stream.next_batch(), alpha, beta, l2
            )
            pair_sum += pair
            if not np.isnan(kl):
                kl_sum += kl
                kl_n += 1
        return (
            pair_sum / n_batches,
            kl_sum / kl_n if kl_n else float("nan"),
        )

    # ---- discriminator (psi) sweep ----------------------------------

    def _psi_update(self, scores, labels):
        ll, grads, _ = adv.loglik_and_grads(self.psi, scores, labels)
        # ascend the log-likelihood: descend its negated mean
        scaled = {
            k: (None, -(g / len(scores))) for k, g in grads.items()
        }
        adam_step(self.adam_psi, self.psi.blocks(), scaled, self.cfg.lr_adv)
        return float(ll.sum()), len(scores)

    def _psi_sweep(self):
        """One shuffled pass over all training positives updating the
        discriminator; rsp also visits one sampled negative per positive.

        Returns the mean per-sample log-likelihood seen during the sweep.
        """
        ds = self.ds
        order = self.sweep_rng.permutation(ds.num_train_pairs)
        p_mat = self.params.user_factors
        imat = self.params.item_matrix()
        total = 0.0
        count = 0
        bs = self.cfg.batch_size
        for start in range(0, len(order), bs):
            sel = order[start : start + bs]
            u_b = ds.pos_users[sel]
            i_b = ds.pos_items[sel]
            s_i = (p_mat[u_b] * imat[i_b]).sum(axis=1)
            ll, n = self._psi_update(s_i, self.G[i_b])
            total += ll
            count += n
            if self.cfg.kind == "dpr-rsp":
                j_b = _sample_neg_matrix(ds, u_b, 1, self.sweep_rng)[:, 0]
                s_j = (p_mat[u_b] * imat[j_b]).sum(axis=1)
                ll, n = self._psi_update(s_j, self.G[j_b])
                total += ll
                count += n
        self.adv_samples_per_sweep = count
        mean_ll = total / count
        self._check_collapse(mean_ll)
        return mean_ll

    def _check_collapse(self, mean_ll):
        threshold = -_COLLAPSE_FRACTION * self.catalog.num_groups * np.log(2.0)
        if mean_ll > threshold:
            self._streak += 1
            if self._streak == _COLLAPSE_STREAK:
                log.warning(
                    "possible adversary collapse: sweep log-likelihood above "
                    "%.4f for %d consecutive sweeps (groups are nearly "
                    "perfectly separable from scores)",
                    threshold,
                    _COLLAPSE_STREAK,
                )
        else:
            self._streak = 0

    # ---- orchestration ----------------------------------------------

    def _validate_now(self):
        ranking = rank_topk(self.params, self.ds, VAL_K, exclude="train")
        return f1_at_k(ranking, self.ds, k=VAL_K, split="val")

    def _finish_epoch(self, epoch, pair, sweep_ll, kl, seconds):
        val = float("nan")
        if self.cfg.eval_every > 0 and epoch % self.cfg.eval_every == 0:
            val = self._validate_now()
            if self.best is None or val > self.best[0]:
                self.best = (
                    val,
                    self.params.copy(),
                    self.psi.copy() if self.psi is not None else None,
                )
        self.log.records.append(
            EpochRecord(epoch, pair, sweep_ll, kl, val, seconds)
        )

    def run(self):
        cfg = self.cfg
        epoch = 0
        w = cfg.weights
        if cfg.kind in _DPR_KINDS:
            for _ in range(cfg.pretrain_epochs):
                epoch += 1
                t0 = time.perf_counter()
                pair, _ = self._theta_batches(
                    self.stream.batches_per_epoch, 0.0, 0.0, w.lambda_theta
                )
                self._finish_epoch(
                    epoch,
                    pair,
                    float("nan"),
                    float("nan"),
                    time.perf_counter() - t0,
                )
            for _ in range(cfg.epochs):
                epoch += 1
                t0 = time.perf_counter()
                sweep_ll = self._psi_sweep()
                pair, kl = self._theta_batches(
                    cfg.theta_batches_per_round,
                    w.alpha,
                    w.beta,
                    w.lambda_theta,
                )
                self._finish_epoch(
                    epoch, pair, sweep_ll, kl, time.perf_counter() - t0
                )
        else:
            if cfg.kind == "bpr":
                alpha, beta, l2 = 0.0, 0.0, w.lambda_theta
            else:
                alpha, beta, l2 = 0.0, w.beta, w.gamma_or_default()
            for _ in range(cfg.epochs):
                epoch += 1
                t0 = time.perf_counter()
                pair, kl = self._theta_batches(
                    self.stream.batches_per_epoch, alpha, beta, l2
                )
                self._finish_epoch(
                    epoch, pair, float("nan"), kl, time.perf_counter() - t0
                )
        if self.best is not None:
            best_f1, best_params, best_psi = self.best
            return TrainResult(
                best_params,
                self.params,
                best_psi if best_psi is not None else self.psi,
                self.log,
                self.adv_samples_per_sweep,
                best_f1,
            )
        return TrainResult(
            self.params,
            self.params,
            self.psi,
            self.log,
            self.adv_samples_per_sweep,
        )


def _batch_kl(scores, users):
    """Mean per-user score-normalization term over one batch.

    Users are represented by their score instances in the batch; those with
    fewer than two are skipped.  Returns (value, per-instance gradient of
    the mean).
    """
    uniq, inv = np.unique(users, return_inverse=True)
    cnt = np.bincount(inv).astype(np.float64)
    mu = np.bincount(inv, weights=scores) / cnt
    var = np.bincount(inv, weights=scores * scores) / cnt - mu * mu
    var = np.maximum(var, 0.0)
    ok = cnt >= 2
    n_ok = int(ok.sum())
    if n_ok == 0:
        return 0.0, np.zeros_like(scores)
    floored = var < KL_VAR_FLOOR
    var_eff = np.maximum(var, KL_VAR_FLOOR)
    per_user = (mu * mu + var_eff - 1.0) / 2.0 - 0.5 * np.log(var_eff)
    value = float(per_user[ok].sum() / n_ok)
    centered = scores - mu[inv]
    var_term = np.where(floored[inv], 0.0, 1.0 - 1.0 / var_eff[inv])
    g = (mu[inv] + var_term * centered) / cnt[inv]
    g = np.where(ok[inv], g, 0.0) / n_ok
    return value, g


def train_bpr(config, dataset):
    """Plain pairwise ranking; see the module docstring for the loop."""
    if config.kind != "bpr":
        raise ConfigError("train.model: train_bpr expects kind 'bpr'")
    return _Trainer(config, dataset).run()


def train_dpr(config, dataset, catalog):
    """Adversarial minimax training (kinds dpr-rsp and dpr-reo)."""
    if config.kind not in _DPR_KINDS:
        raise ConfigError(
            "train.model: train_dpr expects kind 'dpr-rsp' or 'dpr-reo'"
        )
    return _Trainer(config, dataset, catalog).run()


def train_baseline(config, dataset, catalog):
    """Penalty-based baselines (kinds fatr, reg-rsp, reg-reo)."""
    if config.kind not in _BASELINE_KINDS:
        raise ConfigError(
            "train.model: train_baseline expects a baseline kind"
        )
    return _Trainer(config, dataset, catalog).run()


def train(config, dataset, catalog=None):
    """Dispatch on config.kind."""
    if config.kind == "bpr":
        return train_bpr(config, dataset)
    if config.kind in _DPR_KINDS:
        return train_dpr(config, dataset, catalog)
    return train_baseline(config, dataset, catalog)
