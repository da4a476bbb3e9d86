"""Acquisition strategies.

Five conventional baselines (random, bvsb, egl, coreset, badge) plus the
two-stage pipeline: proportional per-domain budget allocation, k-Means region
building over last-layer gradient embeddings, and a per-region winner picked
by a scorer. The full method uses the perturbation scorer (expected KL shift
of the prediction under Gaussian noise on the shared feature); the ablation
variants swap the scorer or drop the region stage.

Tie-breaking is lexicographic on (domain id, sample index) everywhere, and
every strategy is a deterministic function of the context snapshot and seed.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .kernels import (
    assign_nearest,
    kl_rows,
    pairwise_sq_dists,
    sq_dists_to_point,
)
from .nncore import RngStream

STRATEGY_NAMES = (
    "random",
    "bvsb",
    "egl",
    "coreset",
    "badge",
    "p2s",
    "2s-center",
    "2s-bvsb",
    "2s-egl",
    "p2s-no-region",
    "p2s-no-perturb",
)


@dataclass
class SelectionContext:
    """Frozen view of everything a strategy may look at.

    store holds the per-domain training pools; labeled/unlabeled are sorted
    index arrays into them. The model is treated as read-only.
    """

    model: object
    store: list
    labeled: list
    unlabeled: list
    budget: int
    rng: RngStream
    sigma: float = 0.01
    num_perturbations: int = 20
    budget_counts: str = "unlabeled"  # or "pool": full pool sizes in Eq-3 role

    def __post_init__(self):
        self.labeled = [np.asarray(a, dtype=np.int64) for a in self.labeled]
        self.unlabeled = [np.asarray(a, dtype=np.int64) for a in self.unlabeled]

    @property
    def num_domains(self):
        return len(self.unlabeled)

    def total_unlabeled(self):
        return int(sum(a.size for a in self.unlabeled))

    def validate(self):
        if self.budget < 1:
            raise ValidationError(f"budget must be >= 1, got {self.budget}")
        total = self.total_unlabeled()
        if self.budget > total:
            raise ValidationError(
                f"budget {self.budget} exceeds unlabeled pool size {total}"
            )
        if self.budget_counts not in ("unlabeled", "pool"):
            raise ValidationError(
                f"budget_counts must be 'unlabeled' or 'pool', "
                f"got {self.budget_counts!r}"
            )
        if self.sigma <= 0 or self.num_perturbations < 1:
            raise ValidationError("sigma must be > 0 and num_perturbations >= 1")


def _check_batch(ctx, batch):
    if len(batch) != ctx.budget:
        raise ValidationError(
            f"strategy returned {len(batch)} items, budget is {ctx.budget}"
        )
    if len(set(batch)) != len(batch):
        raise ValidationError("strategy returned duplicate items")
    pools = [set(a.tolist()) for a in ctx.unlabeled]
    for k, i in batch:
        if i not in pools[k]:
            raise ValidationError(f"selected item ({k}, {i}) is not unlabeled")
    return batch


def select(name, ctx):
    """Dispatch to the named strategy; returns a sorted list of (domain, idx)."""
    ctx.validate()
    try:
        fn = _DISPATCH[name]
    except KeyError:
        raise ValidationError(
            f"unknown strategy {name!r}; expected one of {STRATEGY_NAMES}"
        ) from None
    return _check_batch(ctx, fn(ctx))


# ----------------------------------------------------------------- baselines


def _all_items(ctx):
    """Global unlabeled pool as (domain, index) pairs, lexicographic order."""
    items = []
    for k in range(ctx.num_domains):
        items.extend((k, int(i)) for i in ctx.unlabeled[k])
    return items


def random_select(ctx):
    items = _all_items(ctx)
    gen = ctx.rng.child("random").generator()
    pick = gen.choice(len(items), size=ctx.budget, replace=False)
    return sorted(items[i] for i in pick)


def _margins(ctx, k):
    X = ctx.store[k].X[ctx.unlabeled[k]]
    probs = ctx.model.predict_proba_batch(X, k)
    top2 = np.partition(probs, probs.shape[1] - 2, axis=1)[:, -2:]
    return top2[:, 1] - top2[:, 0]


def bvsb_select(ctx):
    """Smallest top-1 minus top-2 probability margin (most uncertain first)."""
    return _take_global(ctx, _margins, largest=False)


def _egl_scores(ctx, k):
    X = ctx.store[k].X[ctx.unlabeled[k]]
    probs = ctx.model.predict_proba_batch(X, k)
    h = ctx.model.penultimate_features(X, k)
    h_norm = np.sqrt(np.einsum("ij,ij->i", h, h))
    p_sq = np.einsum("ij,ij->i", probs, probs)
    # || p - e_c ||_2 = sqrt(|p|^2 - 2 p_c + 1), weighted by p_c over classes
    grad_norms = np.sqrt(np.maximum(p_sq[:, None] - 2.0 * probs + 1.0, 0.0))
    return h_norm * np.einsum("ij,ij->i", probs, grad_norms)


def egl_select(ctx):
    """Largest expected last-layer gradient length."""
    return _take_global(ctx, _egl_scores, largest=True)


def _take_global(ctx, score_fn, largest):
    keyed = []
    for k in range(ctx.num_domains):
        if ctx.unlabeled[k].size == 0:
            continue
        scores = score_fn(ctx, k)
        sign = -1.0 if largest else 1.0
        keyed.extend(
            (sign * float(s), k, int(i))
            for s, i in zip(scores, ctx.unlabeled[k])
        )
    keyed.sort()
    return sorted((k, i) for _, k, i in keyed[: ctx.budget])


def coreset_select(ctx):
    """Greedy farthest-first cover in penultimate-feature space."""
    feats = []
    items = []
    labeled_feats = []
    for k in range(ctx.num_domains):
        if ctx.unlabeled[k].size:
            X = ctx.store[k].X[ctx.unlabeled[k]]
            feats.append(ctx.model.penultimate_features(X, k))
            items.extend((k, int(i)) for i in ctx.unlabeled[k])
        if ctx.labeled[k].size:
            XL = ctx.store[k].X[ctx.labeled[k]]
            labeled_feats.append(ctx.model.penultimate_features(XL, k))
    if not labeled_feats:
        raise ValidationError("coreset needs at least one labeled item")
    U = np.ascontiguousarray(np.vstack(feats))
    L = np.ascontiguousarray(np.vstack(labeled_feats))
    # squared distances preserve the argmax of Euclidean farthest-first
    min_d = pairwise_sq_dists(U, L).min(axis=1)
    picked = []
    for _ in range(ctx.budget):
        j = int(np.argmax(min_d))
        picked.append(items[j])
        d_new = sq_dists_to_point(U, U[j])
        np.minimum(min_d, d_new, out=min_d)
        min_d[j] = -np.inf
    return sorted(picked)


def kmeans_pp_indices(points, k, gen):
    """k-Means++ seeding; returns the chosen row indices."""
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValidationError(f"cannot seed {k} centers from {n} points")
    points = np.ascontiguousarray(points, dtype=np.float64)
    chosen = [int(gen.integers(n))]
    d2 = sq_dists_to_point(points, points[chosen[0]])
    d2[chosen[0]] = 0.0
    for _ in range(k - 1):
        total = d2.sum()
        if total > 0.0:
            nxt = int(gen.choice(n, p=d2 / total))
        else:
            # remaining mass exhausted (duplicates): uniform over unchosen
            mask = np.ones(n, dtype=bool)
            mask[chosen] = False
            cand = np.flatnonzero(mask)
            nxt = int(cand[gen.integers(cand.size)])
        chosen.append(nxt)
        np.minimum(d2, sq_dists_to_point(points, points[nxt]), out=d2)
        d2[nxt] = 0.0
    return np.asarray(chosen, dtype=np.int64)


def badge_select(ctx):
    """k-Means++ seeding over pseudo-label gradient embeddings, global pool."""
    embeds = []
    items = []
    for k in range(ctx.num_domains):
        if ctx.unlabeled[k].size == 0:
            continue
        X = ctx.store[k].X[ctx.unlabeled[k]]
        embeds.append(ctx.model.gradient_embeddings(X, k))
        items.extend((k, int(i)) for i in ctx.unlabeled[k])
    E = np.vstack(embeds)
    gen = ctx.rng.child("badge").generator()
    chosen = kmeans_pp_indices(E, ctx.budget, gen)
    return sorted(items[j] for j in chosen)


# ------------------------------------------------------------ stage 1: setup


def allocate_budget(counts, budget, capacities=None):
    """Largest-remainder proportional split of `budget` across domains.

    counts drive the proportions; capacities (default: counts) cap each
    domain's share, with overflow re-handed to the largest remainders that
    still have room. Exact integer arithmetic, ties broken by domain id.
    """
    counts = [int(c) for c in counts]
    caps = counts if capacities is None else [int(c) for c in capacities]
    if len(caps) != len(counts):
        raise ValidationError("counts and capacities length mismatch")
    if budget < 1:
        raise ValidationError(f"budget must be >= 1, got {budget}")
    if any(c < 0 for c in counts):
        raise ValidationError("counts must be >= 0")
    if budget > sum(caps):
        raise ValidationError(
            f"budget {budget} exceeds total capacity {sum(caps)}"
        )
    total = sum(counts)
    if total == 0:
        raise ValidationError("cannot allocate from all-zero counts")

    floors = [budget * n // total for n in counts]
    rems = [budget * n % total for n in counts]
    order = sorted(range(len(counts)), key=lambda k: (-rems[k], k))

    alloc = list(floors)
    for k in order[: budget - sum(floors)]:
        alloc[k] += 1

    # capacity clamp; push overflow to largest remainders with room
    overflow = sum(max(0, a - c) for a, c in zip(alloc, caps))
    alloc = [min(a, c) for a, c in zip(alloc, caps)]
    while overflow > 0:
        progressed = False
        for k in order:
            if overflow == 0:
                break
            if alloc[k] < caps[k]:
                alloc[k] += 1
                overflow -= 1
                progressed = True
        if not progressed:
            raise ValidationError("insufficient capacity for budget")
    return alloc


def kmeans(points, k, rng, max_iter=100, n_init=8):
    """k-Means++ seeding plus Lloyd iterations, best of n_init restarts.

    Each restart stops when assignments stop changing or after max_iter
    rounds; the restart with the lowest final SSE wins. An empty cluster
    seizes the point farthest from its own center (never draining a
    singleton). Returns (labels, centers, sse_history) for the winning
    restart; centers are the means of the returned clusters and sse_history
    interleaves the SSE after each assignment and each recentering.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValidationError(f"cannot form {k} clusters from {n} points")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    best = None
    for _ in range(max(1, n_init)):
        result = _lloyd_once(points, k, gen, max_iter)
        if best is None or result[2][-1] < best[2][-1]:
            best = result
    return best


def _lloyd_once(points, k, gen, max_iter):
    n = points.shape[0]
    centers = points[kmeans_pp_indices(points, k, gen)].copy()
    labels = None
    sse_history = []
    for _ in range(max_iter):
        new_labels, d2 = assign_nearest(points, centers)
        new_labels = new_labels.astype(np.int64, copy=False)
        sse_history.append(float(d2.sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        counts = np.bincount(new_labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            eligible = counts[new_labels] > 1
            cand = np.where(eligible, d2, -np.inf)
            i = int(np.argmax(cand))
            counts[new_labels[i]] -= 1
            new_labels[i] = j
            counts[j] += 1
            d2[i] = 0.0
        labels = new_labels
        for j in range(k):
            centers[j] = points[labels == j].mean(axis=0)
        diff = points - centers[labels]
        sse_history.append(float(np.einsum("ij,ij->", diff, diff)))
    for j in range(k):
        centers[j] = points[labels == j].mean(axis=0)
    return labels, centers, sse_history


@dataclass
class RegionPartition:
    """Per-domain clusters of unlabeled items in gradient-embedding space.

    regions[k] is a list of arrays of store indices (disjoint, covering that
    domain's scored candidates); centers[k] stacks the cluster means;
    embeddings[k] is aligned with ctx.unlabeled[k].
    """

    regions: dict = field(default_factory=dict)
    centers: dict = field(default_factory=dict)
    embeddings: dict = field(default_factory=dict)
    member_positions: dict = field(default_factory=dict)


def build_regions(ctx, budgets):
    """Cluster each domain's unlabeled gradient embeddings into B_k regions."""
    part = RegionPartition()
    for k in range(ctx.num_domains):
        bk = budgets[k]
        if bk < 1:
            continue
        idx = ctx.unlabeled[k]
        X = ctx.store[k].X[idx]
        E = ctx.model.gradient_embeddings(X, k)
        labels, centers, _ = kmeans(E, bk, ctx.rng.child(f"kmeans/{k}"))
        part.embeddings[k] = E
        part.centers[k] = centers
        part.regions[k] = [idx[labels == j] for j in range(bk)]
        part.member_positions[k] = [
            np.flatnonzero(labels == j) for j in range(bk)
        ]
    return part


# ------------------------------------------------------- stage 2: the scorer


def perturbation_score(model, x, k, sigma, num_draws, rng):
    """Mean KL(original || perturbed) over Gaussian shared-feature noise."""
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    if num_draws < 1:
        raise ValidationError(f"need >= 1 perturbation draws, got {num_draws}")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    deltas = gen.normal(0.0, sigma, size=(num_draws, model.config.shared_hidden))
    p0 = model.forward(x, k)
    perturbed = model.perturbed_probs(x, k, deltas)
    base = np.ascontiguousarray(np.repeat(p0[None, :], num_draws, axis=0))
    return float(kl_rows(base, perturbed).mean())


def _perturbation_scores_domain(ctx, k):
    """Score every unlabeled item of domain k; stream label is per-sample."""
    idx = ctx.unlabeled[k]
    out = np.empty(idx.size)
    for pos, i in enumerate(idx):
        stream = ctx.rng.child(f"perturbation/{k}/{int(i)}")
        out[pos] = perturbation_score(
            ctx.model,
            ctx.store[k].X[int(i)],
            k,
            ctx.sigma,
            ctx.num_perturbations,
            stream,
        )
    return out


SECOND_STAGE_SCORERS = ("perturbation", "center", "bvsb", "egl")


def _domain_scores(ctx, k, scorer, partition=None):
    """(scores, pick_largest) for every unlabeled item of domain k."""
    if scorer == "perturbation":
        return _perturbation_scores_domain(ctx, k), True
    if scorer == "bvsb":
        return _margins(ctx, k), False
    if scorer == "egl":
        return _egl_scores(ctx, k), True
    if scorer == "center":
        # distance to the owning region's centroid (or the domain centroid
        # when there are no regions); nearest wins
        if partition is not None and k in partition.embeddings:
            E = partition.embeddings[k]
            dists = np.empty(E.shape[0])
            for j, members in enumerate(partition.member_positions[k]):
                dists[members] = sq_dists_to_point(
                    np.ascontiguousarray(E[members]), partition.centers[k][j]
                )
        else:
            idx = ctx.unlabeled[k]
            E = ctx.model.gradient_embeddings(ctx.store[k].X[idx], k)
            dists = sq_dists_to_point(E, E.mean(axis=0))
        return dists, False
    raise ValidationError(
        f"unknown second-stage scorer {scorer!r}; "
        f"expected one of {SECOND_STAGE_SCORERS}"
    )


def two_stage_variant_select(ctx, scorer, region_stage=True):
    """Budget allocation, optional region building, per-region winner."""
    counts = [
        (ctx.store[k].X.shape[0] if ctx.budget_counts == "pool" else ctx.unlabeled[k].size)
        for k in range(ctx.num_domains)
    ]
    caps = [ctx.unlabeled[k].size for k in range(ctx.num_domains)]
    budgets = allocate_budget(counts, ctx.budget, capacities=caps)

    batch = []
    if region_stage:
        partition = build_regions(ctx, budgets)
        for k in sorted(partition.regions):
            scores, largest = _domain_scores(ctx, k, scorer, partition)
            for members in partition.member_positions[k]:
                vals = scores[members]
                pos = int(np.argmax(vals) if largest else np.argmin(vals))
                batch.append((k, int(ctx.unlabeled[k][members[pos]])))
    else:
        for k in range(ctx.num_domains):
            bk = budgets[k]
            if bk < 1:
                continue
            scores, largest = _domain_scores(ctx, k, scorer)
            keys = -scores if largest else scores
            order = np.lexsort((ctx.unlabeled[k], keys))
            batch.extend((k, int(ctx.unlabeled[k][p])) for p in order[:bk])
    return sorted(batch)


def p2s_select(ctx, sigma=None, num_draws=None):
    """Full two-stage pipeline with the perturbation scorer."""
    if sigma is not None or num_draws is not None:
        ctx = replace(
            ctx,
            sigma=ctx.sigma if sigma is None else sigma,
            num_perturbations=(
                ctx.num_perturbations if num_draws is None else num_draws
            ),
        )
    return two_stage_variant_select(ctx, "perturbation", region_stage=True)


_DISPATCH = {
    "random": random_select,
    "bvsb": bvsb_select,
    "egl": egl_select,
    "coreset": coreset_select,
    "badge": badge_select,
    "p2s": p2s_select,
    "2s-center": lambda ctx: two_stage_variant_select(ctx, "center", True),
    "2s-bvsb": lambda ctx: two_stage_variant_select(ctx, "bvsb", True),
    "2s-egl": lambda ctx: two_stage_variant_select(ctx, "egl", True),
    "p2s-no-region": lambda ctx: two_stage_variant_select(
        ctx, "perturbation", False
    ),
    # the no-perturbation ablation keeps the regions and takes each
    # region's most central item
    "p2s-no-perturb": lambda ctx: two_stage_variant_select(ctx, "center", True),
}
