"""Matrix-factorization parameters, scoring, Adam updates, checkpoints."""

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
INIT_STD = 0.01

_CKPT_MAGIC = "fairrank-checkpoint"
_CKPT_VERSION = 1


@dataclass
class MfParams:
    """Dense user/item factor matrices; score is the plain inner product."""

    user_factors: np.ndarray  # (N, d)
    item_factors: np.ndarray  # (M, d)

    @property
    def num_users(self):
        return self.user_factors.shape[0]

    @property
    def num_items(self):
        return self.item_factors.shape[0]

    @property
    def dim(self):
        return self.user_factors.shape[1]

    def item_matrix(self):
        return self.item_factors

    def blocks(self):
        # trainable blocks, keyed for the optimizer
        return {
            "user_factors": self.user_factors,
            "item_factors": self.item_factors,
        }

    def arrays(self):
        return self.blocks()

    def copy(self):
        return MfParams(self.user_factors.copy(), self.item_factors.copy())


@dataclass
class FatrParams:
    """Factors with a frozen group-indicator block stacked under the free one.

    item_free is (d - A, M); item_sensitive is the constant (A, M) 0/1 group
    indicator.  The effective item matrix is their vertical concatenation.
    """

    user_factors: np.ndarray    # (N, d)
    item_free: np.ndarray       # (d - A, M), trained
    item_sensitive: np.ndarray  # (A, M), frozen

    @property
    def num_users(self):
        return self.user_factors.shape[0]

    @property
    def num_items(self):
        return self.item_free.shape[1]

    @property
    def dim(self):
        return self.item_free.shape[0] + self.item_sensitive.shape[0]

    def item_matrix(self):
        return np.vstack([self.item_free, self.item_sensitive]).T

    def blocks(self):
        # item_sensitive stays out: it is never updated
        return {
            "user_factors": self.user_factors,
            "item_free": self.item_free,
        }

    def arrays(self):
        return {
            "user_factors": self.user_factors,
            "item_free": self.item_free,
            "item_sensitive": self.item_sensitive,
        }

    def copy(self):
        return FatrParams(
            self.user_factors.copy(),
            self.item_free.copy(),
            self.item_sensitive.copy(),
        )


def _rng_of(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def init_params(num_users, num_items, dim, seed):
    """Normal(0, 0.01) entries; bit-identical matrices for a given seed."""
    if dim < 1:
        raise ConfigError("dim: must be >= 1")
    rng = _rng_of(seed)
    p = rng.normal(0.0, INIT_STD, size=(num_users, dim))
    q = rng.normal(0.0, INIT_STD, size=(num_items, dim))
    return MfParams(p, q)


def init_fatr_params(num_users, num_items, dim, memberships, seed):
    """Free block initialized like init_params; indicator block frozen to
    the catalog memberships."""
    num_groups = memberships.shape[1]
    if num_groups >= dim:
        raise ConfigError(
            f"dim: fatr needs num_groups < dim, got {num_groups} >= {dim}"
        )
    rng = _rng_of(seed)
    p = rng.normal(0.0, INIT_STD, size=(num_users, dim))
    q_free = rng.normal(0.0, INIT_STD, size=(dim - num_groups, num_items))
    q_sens = memberships.T.astype(np.float64)
    return FatrParams(p, q_free, q_sens)


def score(params, user, item):
    """Predicted preference of one user for one item."""
    if not (0 <= user < params.num_users):
        raise IndexError(f"user index {user} out of range")
    if not (0 <= item < params.num_items):
        raise IndexError(f"item index {item} out of range")
    return float(params.user_factors[user] @ params.item_matrix()[item])


def score_all(params, user):
    """Scores of one user against every item, shape (M,)."""
    if not (0 <= user < params.num_users):
        raise IndexError(f"user index {user} out of range")
    return params.item_matrix() @ params.user_factors[user]


class AdamState:
    """Adam moments stored per leading-dim row, decayed lazily.

    A row untouched for k steps catches up with a single beta**k decay when
    it is next updated, which reproduces the moment trajectory of an eager
    implementation that decays every row each step but only applies
    parameter deltas to touched rows.
    """

    def __init__(self, blocks):
        self.step = 0
        self.m = {k: np.zeros_like(a) for k, a in blocks.items()}
        self.v = {k: np.zeros_like(a) for k, a in blocks.items()}
        self.last = {
            k: np.zeros(a.shape[0], dtype=np.int64) for k, a in blocks.items()
        }


def adam_step(state, blocks, grads, lr):
    """One global Adam step over the listed gradients, in place.

    Args:
        state: AdamState built over ``blocks``.
        blocks: name -> parameter array (mutated).
        grads: name -> (rows, g).  ``rows`` is a unique int array selecting
            leading-dim rows (g holds just those rows), or None for a dense
            update of the whole block.
        lr: step size.

    Raises:
        ValueError: if a gradient contains a non-finite entry.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    for name, (rows, g) in grads.items():
        g = np.asarray(g, dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for block '{name}'")
        sel = slice(None) if rows is None else rows
        k = t - state.last[name][sel]
        d1 = ADAM_BETA1 ** k
        d2 = ADAM_BETA2 ** k
        while d1.ndim < g.ndim:
            d1 = d1[..., None]
            d2 = d2[..., None]
        m = state.m[name]
        v = state.v[name]
        m[sel] = d1 * m[sel] + (1.0 - ADAM_BETA1) * g
        v[sel] = d2 * v[sel] + (1.0 - ADAM_BETA2) * g * g
        state.last[name][sel] = t
        mhat = m[sel] / bc1
        vhat = v[sel] / bc2
        blocks[name][sel] -= lr * mhat / (np.sqrt(vhat) + ADAM_EPS)


def save_checkpoint(path, params, config_hash="", adversary=None):
    """Write a versioned, byte-deterministic dump of the model.

    Layout: magic JSON header line describing every array, then the raw
    little-endian float64 bytes in header order.  Round-trips losslessly.
    """
    arrays = dict(params.arrays())
    kind = "fatr" if isinstance(params, FatrParams) else "mf"
    adv_meta = None
    if adversary is not None:
        for idx, w in enumerate(adversary.weights):
            arrays[f"adv_w{idx}"] = w
        for idx, b in enumerate(adversary.biases):
            arrays[f"adv_b{idx}"] = b
        adv_meta = {"num_layers": len(adversary.weights)}
    header = {
        "magic": _CKPT_MAGIC,
        "version": _CKPT_VERSION,
        "kind": kind,
        "num_users": params.num_users,
        "num_items": params.num_items,
        "dim": params.dim,
        "config_hash": config_hash,
        "adversary": adv_meta,
        "arrays": [
            {"name": k, "shape": list(a.shape)} for k, a in arrays.items()
        ],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Inverse of save_checkpoint.

    Returns:
        (params, adversary or None, config_hash)
    """
    from .adversary import AdversaryParams

    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: not a checkpoint file") from exc
        if header.get("magic") != _CKPT_MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        if header.get("version") != _CKPT_VERSION:
            raise DataError(
                f"{path}: unsupported checkpoint version {header.get('version')}"
            )
        arrays = {}
        for meta in header["arrays"]:
            shape = tuple(meta["shape"])
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(n * 8)
            if len(buf) != n * 8:
                raise DataError(f"{path}: truncated checkpoint")
            arrays[meta["name"]] = (
                np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
            )
    if header["kind"] == "fatr":
        params = FatrParams(
            arrays["user_factors"],
            arrays["item_free"],
            arrays["item_sensitive"],
        )
    else:
        params = MfParams(arrays["user_factors"], arrays["item_factors"])
    adversary = None
    if header.get("adversary"):
        n_layers = header["adversary"]["num_layers"]
        adversary = AdversaryParams(
            [arrays[f"adv_w{i}"] for i in range(n_layers)],
            [arrays[f"adv_b{i}"] for i in range(n_layers)],
        )
    return params, adversary, header.get("config_hash", "")
