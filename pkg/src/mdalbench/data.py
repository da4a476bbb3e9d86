"""Dataset loading, synthetic generation, splitting, standardization.

Data files are headerless CSV: integer label in the first column, float
features after it. A JSON manifest names the domains and declares the shared
feature dimension, so loading can validate shapes up front.
"""

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .nncore import RngStream


@dataclass
class DomainDataset:
    X: np.ndarray
    y: np.ndarray
    domain_id: int
    name: str = ""

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.y.ndim != 1 or self.X.shape[0] != self.y.shape[0]:
            raise ValidationError(
                f"inconsistent dataset shapes X={self.X.shape} y={self.y.shape}"
            )
        if not np.isfinite(self.X).all():
            raise ValidationError(f"domain {self.domain_id} has non-finite features")

    def __len__(self):
        return self.X.shape[0]


@dataclass
class DomainSpec:
    name: str
    file: str
    classes: int


@dataclass
class DatasetManifest:
    name: str
    dim: int
    domains: list
    root: Path = Path(".")

    @property
    def num_domains(self):
        return len(self.domains)


def load_manifest(path):
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"manifest not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest {path} is not valid JSON: {exc}") from exc
    problems = []
    name = raw.get("name")
    dim = raw.get("dim")
    if not isinstance(name, str) or not name:
        problems.append("name: expected a non-empty string")
    if not isinstance(dim, int) or dim < 1:
        problems.append("dim: expected a positive integer")
    domains = []
    raw_domains = raw.get("domains")
    if not isinstance(raw_domains, list) or not raw_domains:
        problems.append("domains: expected a non-empty list")
    else:
        for i, d in enumerate(raw_domains):
            for key, kind in (("name", str), ("file", str), ("classes", int)):
                if not isinstance(d.get(key), kind):
                    problems.append(f"domains[{i}].{key}: expected {kind.__name__}")
            if isinstance(d.get("classes"), int) and d["classes"] < 2:
                problems.append(f"domains[{i}].classes: must be >= 2")
        if not problems:
            domains = [DomainSpec(d["name"], d["file"], d["classes"]) for d in raw_domains]
    if problems:
        raise ValidationError(
            "invalid manifest " + str(path) + ": " + "; ".join(problems)
        )
    return DatasetManifest(name=name, dim=dim, domains=domains, root=path.parent)


def load_domain(manifest, k):
    if not 0 <= k < manifest.num_domains:
        raise ValidationError(f"domain id {k} out of range")
    spec = manifest.domains[k]
    path = manifest.root / spec.file
    if not path.is_file():
        raise ValidationError(f"data file not found: {path}")
    labels = []
    rows = []
    expected = manifest.dim + 1
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != expected:
                raise ValidationError(
                    f"{path}:{lineno}: expected {expected} columns "
                    f"(label + dim={manifest.dim}), got {len(parts)}"
                )
            try:
                label = int(parts[0])
                feats = [float(v) for v in parts[1:]]
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
            if not 0 <= label < spec.classes:
                raise ValidationError(
                    f"{path}:{lineno}: label {label} outside "
                    f"[0, {spec.classes})"
                )
            if not all(math.isfinite(v) for v in feats):
                raise ValidationError(f"{path}:{lineno}: non-finite feature")
            labels.append(label)
            rows.append(feats)
    if not rows:
        raise ValidationError(f"{path}: file is empty")
    return DomainDataset(
        X=np.asarray(rows, dtype=np.float64),
        y=np.asarray(labels, dtype=np.int64),
        domain_id=k,
        name=spec.name,
    )


def save_domain_csv(dataset, path):
    """Write label,features rows; floats via repr so values round-trip."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for label, row in zip(dataset.y, dataset.X):
            fh.write(str(int(label)))
            for v in row:
                fh.write("," + repr(float(v)))
            fh.write("\n")


def save_manifest(manifest, path):
    doc = {
        "name": manifest.name,
        "dim": manifest.dim,
        "domains": [asdict(d) for d in manifest.domains],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- synthetic


@dataclass
class SyntheticSpec:
    num_domains: int = 3
    samples_per_domain: int = 400
    input_dim: int = 20
    num_classes: int = 2
    shared_strength: float = 1.0
    shift_strength: float = 1.0
    label_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_domains < 1 or self.samples_per_domain < 1:
            raise ValidationError("need >= 1 domain and >= 1 sample per domain")
        if self.input_dim < 1 or self.num_classes < 2:
            raise ValidationError("need input_dim >= 1 and >= 2 classes")
        if self.shared_strength < 0 or self.shift_strength < 0:
            raise ValidationError("strengths must be >= 0")
        if not 0 <= self.label_noise < 0.5:
            raise ValidationError("label_noise must lie in [0, 0.5)")

    def to_dict(self):
        return asdict(self)


def _unit(gen, dim):
    v = gen.normal(size=dim)
    return v / np.linalg.norm(v)


def generate_synthetic(spec):
    """Sample one Gaussian blob pair (or C blobs) per domain.

    Class means combine a direction shared by every domain with a per-domain
    nuisance direction, so part of the signal transfers across domains and
    part does not. With two classes the means are antipodal:
    x = s * (shared_strength * w_shared + shift_strength * w_k) + N(0, I)
    for s = +/-1. Labels are flipped to a random other class at the noise
    rate. Deterministic under the spec seed.
    """
    gen = RngStream(spec.seed, "synthetic").generator()
    C, d = spec.num_classes, spec.input_dim
    if C == 2:
        w = _unit(gen, d)
        shared_dirs = np.stack([-w, w])
    else:
        shared_dirs = np.stack([_unit(gen, d) for _ in range(C)])
    datasets = []
    for k in range(spec.num_domains):
        if C == 2:
            wk = _unit(gen, d)
            domain_dirs = np.stack([-wk, wk])
        else:
            domain_dirs = np.stack([_unit(gen, d) for _ in range(C)])
        y = gen.integers(0, C, size=spec.samples_per_domain)
        means = (
            spec.shared_strength * shared_dirs[y]
            + spec.shift_strength * domain_dirs[y]
        )
        X = means + gen.normal(size=(spec.samples_per_domain, d))
        flips = gen.random(spec.samples_per_domain) < spec.label_noise
        offsets = gen.integers(1, C, size=spec.samples_per_domain)
        y_obs = np.where(flips, (y + offsets) % C, y)
        datasets.append(
            DomainDataset(X=X, y=y_obs, domain_id=k, name=f"domain{k}")
        )
    return datasets


# ------------------------------------------------------------------ splitting


def train_test_split(dataset, test_fraction, rng):
    """Stratified per-class split; deterministic under the stream."""
    if not 0 < test_fraction < 1:
        raise ValidationError(
            f"test_fraction must lie in (0, 1), got {test_fraction}"
        )
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    test_idx = []
    for c in np.unique(dataset.y):
        members = np.flatnonzero(dataset.y == c)
        if members.size < 2:
            raise ValidationError(
                f"class {c} in domain {dataset.domain_id} has "
                f"{members.size} sample(s); need >= 2 to split"
            )
        n_test = int(round(test_fraction * members.size))
        n_test = min(max(n_test, 1), members.size - 1)
        perm = gen.permutation(members.size)
        test_idx.extend(members[perm[:n_test]])
    test_mask = np.zeros(len(dataset), dtype=bool)
    test_mask[np.asarray(test_idx)] = True
    train_rows = np.flatnonzero(~test_mask)
    test_rows = np.flatnonzero(test_mask)
    train = DomainDataset(
        dataset.X[train_rows], dataset.y[train_rows], dataset.domain_id, dataset.name
    )
    test = DomainDataset(
        dataset.X[test_rows], dataset.y[test_rows], dataset.domain_id, dataset.name
    )
    return train, test


def standardize(train, test):
    """Scale both splits with the train split's per-feature mean/std."""
    if len(train) == 0:
        raise ValidationError("cannot standardize an empty training set")
    mean = train.X.mean(axis=0)
    std = np.maximum(train.X.std(axis=0), 1e-8)
    train_s = DomainDataset((train.X - mean) / std, train.y, train.domain_id, train.name)
    test_s = DomainDataset((test.X - mean) / std, test.y, test.domain_id, test.name)
    return train_s, test_s, (mean, std)
