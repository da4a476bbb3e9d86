"""Shared-private multi-domain classifier with adversarial domain head.

One shared feature extractor serves every domain; each domain adds a private
extractor and a linear classifier over the concatenated features. A linear
domain discriminator sits behind a gradient-reversal layer on the shared
features, pushing them toward domain invariance. All extractors are
one-hidden-layer MLPs (linear + ReLU), so the extracted feature IS the hidden
layer.
"""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import NonFiniteError, ShapeError, ValidationError
from .kernels import softmax_rows
from .nncore import (
    Linear,
    RngStream,
    grad_reversal,
    grad_reversal_backward,
    relu,
    relu_backward,
    sgd_step,
    softmax_cross_entropy,
)


@dataclass
class ModelConfig:
    input_dim: int
    num_classes: tuple  # classes per domain, length = number of domains
    shared_hidden: int = 64
    private_hidden: int = 64
    lam_adv: float = 0.05
    lam_diff: float = 0.0
    lr: float = 0.01
    batch_size: int = 8
    epochs_per_round: int = 30

    def __post_init__(self):
        self.num_classes = tuple(int(c) for c in self.num_classes)
        if self.num_domains < 1:
            raise ValidationError("need at least one domain")
        if min(self.input_dim, self.shared_hidden, self.private_hidden) < 1:
            raise ValidationError("dimensions must be >= 1")
        if any(c < 2 for c in self.num_classes):
            raise ValidationError("every domain needs >= 2 classes")
        if self.lam_adv < 0 or self.lam_diff < 0:
            raise ValidationError("loss weights must be >= 0")
        if self.lr <= 0 or self.batch_size < 1 or self.epochs_per_round < 0:
            raise ValidationError("invalid training hyperparameters")

    @property
    def num_domains(self):
        return len(self.num_classes)

    def to_dict(self):
        d = asdict(self)
        d["num_classes"] = list(self.num_classes)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class FeatureMlp:
    """One-hidden-layer extractor: h = relu(W x + b)."""

    def __init__(self, lin):
        self.lin = lin

    @classmethod
    def init(cls, in_dim, width, gen):
        return cls(Linear.init(in_dim, width, gen))

    @property
    def out_dim(self):
        return self.lin.out_dim

    def params(self):
        return self.lin.params()

    def forward(self, X):
        Z, xcache = self.lin.forward(X)
        return relu(Z), (xcache, Z)

    def backward(self, cache, dH):
        xcache, Z = cache
        return self.lin.backward(xcache, relu_backward(Z, dH))


class AspMtlModel:
    def __init__(self, config, shared, privates, classifiers, discriminator):
        self.config = config
        self.shared = shared
        self.privates = privates
        self.classifiers = classifiers
        self.discriminator = discriminator

    @classmethod
    def init(cls, config, rng):
        """Fresh parameters drawn from the stream's `init` child."""
        gen = rng.child("init").generator()
        shared = FeatureMlp.init(config.input_dim, config.shared_hidden, gen)
        privates = [
            FeatureMlp.init(config.input_dim, config.private_hidden, gen)
            for _ in range(config.num_domains)
        ]
        feat_dim = config.shared_hidden + config.private_hidden
        classifiers = [
            Linear.init(feat_dim, c, gen) for c in config.num_classes
        ]
        disc = Linear.init(config.shared_hidden, config.num_domains, gen)
        return cls(config, shared, privates, classifiers, disc)

    # ------------------------------------------------------------- plumbing

    def params(self):
        out = list(self.shared.params())
        for p in self.privates:
            out.extend(p.params())
        for c in self.classifiers:
            out.extend(c.params())
        out.extend(self.discriminator.params())
        return out

    def _check_domain(self, k):
        if not 0 <= k < self.config.num_domains:
            raise ValidationError(
                f"domain id {k} out of range [0, {self.config.num_domains})"
            )

    def _as_batch(self, x):
        X = np.asarray(x, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.config.input_dim:
            raise ShapeError(
                f"input shape {X.shape} incompatible with input_dim "
                f"{self.config.input_dim}"
            )
        return X, single

    # ------------------------------------------------------- read-only pass

    def features_batch(self, X, k):
        """(h_shared, h_private) for a batch, no gradient caches kept."""
        self._check_domain(k)
        X, _ = self._as_batch(X)
        hs, _ = self.shared.forward(X)
        hp, _ = self.privates[k].forward(X)
        return hs, hp

    def penultimate_features(self, x, k):
        """Concatenated shared+private feature h = F_s(x) (+) F_p_k(x)."""
        X, single = self._as_batch(x)
        hs, hp = self.features_batch(X, k)
        h = np.concatenate([hs, hp], axis=1)
        return h[0] if single else h

    def predict_proba_batch(self, X, k):
        self._check_domain(k)
        X, _ = self._as_batch(X)
        hs, hp = self.features_batch(X, k)
        h = np.concatenate([hs, hp], axis=1)
        logits, _ = self.classifiers[k].forward(h)
        return softmax_rows(logits)

    def forward(self, x, k):
        """Predicted class distribution of a single sample."""
        return self.predict_proba_batch(x, k)[0]

    def forward_perturbed(self, x, k, delta):
        """Forward with noise added to the shared feature only."""
        delta = np.asarray(delta, dtype=np.float64).ravel()
        if delta.shape[0] != self.config.shared_hidden:
            raise ShapeError(
                f"perturbation dim {delta.shape[0]} does not match shared "
                f"feature dim {self.config.shared_hidden}"
            )
        return self.perturbed_probs(x, k, delta[None, :])[0]

    def perturbed_probs(self, x, k, deltas):
        """Class distributions under many shared-feature perturbations.

        deltas has shape (T, shared_hidden); returns (T, classes_k). The
        extractors run once, only the classifier is re-run per draw.
        """
        self._check_domain(k)
        X, single = self._as_batch(x)
        if not single:
            raise ShapeError("perturbed_probs expects a single sample")
        deltas = np.atleast_2d(np.asarray(deltas, dtype=np.float64))
        if deltas.shape[1] != self.config.shared_hidden:
            raise ShapeError(
                f"perturbation dim {deltas.shape[1]} does not match shared "
                f"feature dim {self.config.shared_hidden}"
            )
        hs, hp = self.features_batch(X, k)
        H = np.concatenate(
            [hs + deltas, np.repeat(hp, deltas.shape[0], axis=0)], axis=1
        )
        logits, _ = self.classifiers[k].forward(H)
        return softmax_rows(logits)

    def gradient_embeddings(self, X, k):
        """Last-layer weight gradients under the predicted pseudo-label.

        Row i is (p - onehot(argmax p)) outer h, flattened to
        classes_k * (shared+private) entries.
        """
        self._check_domain(k)
        X, single = self._as_batch(X)
        hs, hp = self.features_batch(X, k)
        h = np.concatenate([hs, hp], axis=1)
        logits, _ = self.classifiers[k].forward(h)
        probs = softmax_rows(logits)
        yhat = np.argmax(probs, axis=1)
        resid = probs.copy()
        resid[np.arange(X.shape[0]), yhat] -= 1.0
        E = (resid[:, :, None] * h[:, None, :]).reshape(X.shape[0], -1)
        return E[0] if single else E

    def gradient_embedding(self, x, k):
        return self.gradient_embeddings(x, k)


def evaluate(model, test_sets):
    """Per-domain argmax accuracy plus unweighted macro average.

    test_sets is a list of (X, y) pairs, one per domain.
    """
    if len(test_sets) != model.config.num_domains:
        raise ValidationError(
            f"got {len(test_sets)} test sets for "
            f"{model.config.num_domains} domains"
        )
    accs = []
    for k, (X, y) in enumerate(test_sets):
        y = np.asarray(y, dtype=np.int64)
        if y.size == 0:
            raise ValidationError(f"test set for domain {k} is empty")
        pred = np.argmax(model.predict_proba_batch(X, k), axis=1)
        accs.append(float((pred == y).mean()))
    return accs, float(np.mean(accs))


# ------------------------------------------------------------------ training


@dataclass
class EpochLog:
    sup: float
    adv: float
    diff: float
    total: float


def _gather_rows(store, pool_domain, pool_index, rows, input_dim):
    X = np.empty((rows.shape[0], input_dim))
    for j, r in enumerate(rows):
        X[j] = store[pool_domain[r]].X[pool_index[r]]
    return X


def accumulate_training_gradients(model, X, y, k, X_adv, d_adv, config):
    """One step's gradient accumulation, no parameter update.

    Supervised cross-entropy through domain k's head, domain-id
    cross-entropy through the discriminator behind the reversal layer
    (scaled by lam_adv), optional shared/private orthogonality penalty.
    Returns (loss_sup, loss_adv, loss_diff) with loss_adv the raw
    cross-entropy before weighting.
    """
    S = config.shared_hidden

    hs, cs = model.shared.forward(X)
    hp, cp = model.privates[k].forward(X)
    h = np.concatenate([hs, hp], axis=1)
    logits, cc = model.classifiers[k].forward(h)
    loss_sup, dlogits, _ = softmax_cross_entropy(logits, y)
    dh = model.classifiers[k].backward(cc, dlogits)
    dhs, dhp = dh[:, :S], dh[:, S:]

    loss_diff = 0.0
    if config.lam_diff > 0:
        M = hs.T @ hp
        loss_diff = float((M * M).sum())
        dhs = dhs + config.lam_diff * 2.0 * (hp @ M.T)
        dhp = dhp + config.lam_diff * 2.0 * (hs @ M)

    model.shared.backward(cs, dhs)
    model.privates[k].backward(cp, dhp)

    hs_a, cs_a = model.shared.forward(X_adv)
    rev, rcache = grad_reversal(hs_a, 1.0)
    logits_a, cd = model.discriminator.forward(rev)
    loss_adv, dlog_a, _ = softmax_cross_entropy(logits_a, d_adv)
    drev = model.discriminator.backward(cd, config.lam_adv * dlog_a)
    model.shared.backward(cs_a, grad_reversal_backward(rcache, drev))
    return loss_sup, loss_adv, loss_diff


def train_round(model, store, labeled, config, rng):
    """One training round over the current labeled sets.

    Each step takes a supervised batch from one domain (round-robin) and an
    adversarial domain-id batch drawn uniformly from the union of all pools.
    Returns the per-epoch mean losses.
    """
    K = config.num_domains
    labeled = [np.asarray(l, dtype=np.int64) for l in labeled]
    for k in range(K):
        if labeled[k].size == 0:
            raise ValidationError(f"domain {k} has no labeled samples")
        if store[k].X.shape[0] == 0:
            raise ValidationError(f"domain {k} pool is empty")

    pool_domain = np.concatenate(
        [np.full(store[k].X.shape[0], k, dtype=np.int64) for k in range(K)]
    )
    pool_index = np.concatenate(
        [np.arange(store[k].X.shape[0], dtype=np.int64) for k in range(K)]
    )
    n_pool = pool_domain.shape[0]

    gen = rng.child("batches").generator()
    total_labeled = int(sum(l.size for l in labeled))
    steps_per_epoch = max(1, math.ceil(total_labeled / config.batch_size))
    params = model.params()

    logs = []
    step_counter = 0
    for _ in range(config.epochs_per_round):
        sums = np.zeros(4)
        for _ in range(steps_per_epoch):
            k = step_counter % K
            step_counter += 1

            pool = labeled[k]
            take = gen.choice(
                pool, size=config.batch_size, replace=pool.size < config.batch_size
            )
            X = store[k].X[take]
            y = store[k].y[take]

            rows = gen.choice(
                n_pool, size=config.batch_size, replace=n_pool < config.batch_size
            )
            Xa = _gather_rows(store, pool_domain, pool_index, rows, config.input_dim)
            da = pool_domain[rows]

            loss_sup, loss_adv, loss_diff = accumulate_training_gradients(
                model, X, y, k, Xa, da, config
            )

            total = (
                loss_sup
                + config.lam_adv * loss_adv
                + config.lam_diff * loss_diff
            )
            if not np.isfinite(total):
                raise NonFiniteError(
                    f"non-finite loss (sup={loss_sup}, adv={loss_adv}, "
                    f"diff={loss_diff}) at step {step_counter}"
                )
            sgd_step(params, config.lr)
            sums += (loss_sup, loss_adv, loss_diff, total)

        means = sums / steps_per_epoch
        logs.append(EpochLog(*(float(v) for v in means)))
    return logs


# --------------------------------------------------------------- checkpoints

CHECKPOINT_VERSION = 1


def _param_arrays(model):
    out = {"shared.W": model.shared.lin.W.value, "shared.b": model.shared.lin.b.value}
    for k, p in enumerate(model.privates):
        out[f"private.{k}.W"] = p.lin.W.value
        out[f"private.{k}.b"] = p.lin.b.value
    for k, c in enumerate(model.classifiers):
        out[f"classifier.{k}.W"] = c.W.value
        out[f"classifier.{k}.b"] = c.b.value
    out["disc.W"] = model.discriminator.W.value
    out["disc.b"] = model.discriminator.b.value
    return out


def save_checkpoint(model, path):
    meta = json.dumps(
        {"version": CHECKPOINT_VERSION, "config": model.config.to_dict()},
        sort_keys=True,
    )
    np.savez(path, __meta__=np.array(meta), **_param_arrays(model))


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValidationError(
                f"unsupported checkpoint version {meta.get('version')}"
            )
        config = ModelConfig.from_dict(meta["config"])
        arrays = {k: data[k] for k in data.files if k != "__meta__"}

    def lin(prefix):
        return Linear(arrays[f"{prefix}.W"], arrays[f"{prefix}.b"])

    shared = FeatureMlp(lin("shared"))
    privates = [FeatureMlp(lin(f"private.{k}")) for k in range(config.num_domains)]
    classifiers = [lin(f"classifier.{k}") for k in range(config.num_domains)]
    return AspMtlModel(config, shared, privates, classifiers, lin("disc"))
