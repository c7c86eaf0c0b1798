"""Synthetic attribute/feature datasets and their text serialization.

Each record pairs a subject id with the subject's binary attribute vector
and one image feature vector.  Synthetic data draws per-subject attributes
from a Bernoulli distribution, embeds them through one fixed random linear
map into feature space, and perturbs each image around that subject
prototype with Gaussian noise.

An image is similar to an attribute vector when the image's subject
possesses every attribute the vector sets, so the similarity matrix is
superset containment: S[i, j] = 1 iff attributes_j is a subset of
attributes_i.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DatasetFormatError(ValueError):
    """Malformed dataset file; message carries the offending line number."""


@dataclass(frozen=True)
class SyntheticSpec:
    n_subjects: int
    images_per_subject: int
    d_attr: int = 40
    d_img: int = 128
    attribute_density: float = 0.5
    feature_noise_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("n_subjects", "images_per_subject", "d_attr", "d_img"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 < self.attribute_density < 1.0:
            raise ValueError("attribute_density must be strictly inside (0, 1)")
        if self.feature_noise_std < 0:
            raise ValueError("feature_noise_std cannot be negative")


@dataclass(frozen=True)
class Dataset:
    subject_ids: np.ndarray  # (n,)
    attributes: np.ndarray   # (n, d_attr) entries in {0, 1}
    features: np.ndarray     # (n, d_img) float64

    def __post_init__(self):
        n = self.subject_ids.shape[0]
        if self.attributes.shape[0] != n or self.features.shape[0] != n:
            raise ValueError("record counts disagree across fields")
        if self.attributes.size and not np.isin(self.attributes, (0, 1)).all():
            raise ValueError("attribute entries must be 0 or 1")
        if not np.isfinite(self.features).all():
            raise ValueError("feature entries must be finite")

    def __len__(self) -> int:
        return self.subject_ids.shape[0]

    @property
    def d_attr(self) -> int:
        return self.attributes.shape[1]

    @property
    def d_img(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        if idx.dtype != bool:
            idx = idx.astype(np.int64, copy=False)
        return Dataset(self.subject_ids[idx].copy(),
                       self.attributes[idx].copy(),
                       self.features[idx].copy())


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic synthetic dataset for a given spec (seed included)."""
    rng = np.random.default_rng(spec.seed)
    embed = rng.normal(size=(spec.d_attr, spec.d_img)) / np.sqrt(spec.d_attr)
    subject_attrs = (rng.random((spec.n_subjects, spec.d_attr))
                     < spec.attribute_density).astype(np.uint8)
    prototypes = subject_attrs.astype(np.float64) @ embed
    n = spec.n_subjects * spec.images_per_subject
    subject_ids = np.repeat(np.arange(spec.n_subjects, dtype=np.int64),
                            spec.images_per_subject)
    attributes = np.repeat(subject_attrs, spec.images_per_subject, axis=0)
    noise = rng.normal(0.0, 1.0, size=(n, spec.d_img))
    features = (np.repeat(prototypes, spec.images_per_subject, axis=0)
                + spec.feature_noise_std * noise)
    return Dataset(subject_ids, attributes, features)


def similarity_matrix(attributes, other=None) -> np.ndarray:
    """S[i, j] = 1 iff row j's attribute set is contained in row i's.

    With one argument the matrix is square over the same records; the
    optional second argument supplies the column-side attribute vectors.
    """
    a = np.asarray(attributes, dtype=np.int64)
    b = a if other is None else np.asarray(other, dtype=np.int64)
    # count the attributes j sets that i lacks; containment means zero
    missing = (1 - a) @ b.T
    return (missing == 0).astype(np.uint8)


# ---------------------------------------------------------------------------
# Text files
# ---------------------------------------------------------------------------

def save_dataset(dataset: Dataset, path) -> None:
    """Lines of `subject_id | 0/1 attributes | full-precision features`."""
    with open(path, "w") as fh:
        for sid, attrs, feats in zip(dataset.subject_ids,
                                     dataset.attributes, dataset.features):
            attr_part = " ".join(str(int(a)) for a in attrs)
            feat_part = " ".join(repr(float(v)) for v in feats)
            fh.write(f"{int(sid)} | {attr_part} | {feat_part}\n")


def load_dataset(path) -> Dataset:
    subject_ids = []
    attributes = []
    features = []
    d_attr = None
    d_img = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("|")
            if len(parts) != 3:
                raise DatasetFormatError(
                    f"{path}:{lineno}: expected 3 '|'-separated fields, "
                    f"got {len(parts)}")
            try:
                sid = int(parts[0])
            except ValueError:
                raise DatasetFormatError(
                    f"{path}:{lineno}: bad subject id {parts[0].strip()!r}")
            attr_tokens = parts[1].split()
            if any(tok not in ("0", "1") for tok in attr_tokens):
                raise DatasetFormatError(
                    f"{path}:{lineno}: attribute values must be 0 or 1")
            try:
                feats = [float(tok) for tok in parts[2].split()]
            except ValueError:
                raise DatasetFormatError(
                    f"{path}:{lineno}: unparseable feature value")
            if not all(np.isfinite(feats)):
                raise DatasetFormatError(
                    f"{path}:{lineno}: non-finite feature value")
            if d_attr is None:
                d_attr, d_img = len(attr_tokens), len(feats)
            elif len(attr_tokens) != d_attr or len(feats) != d_img:
                raise DatasetFormatError(
                    f"{path}:{lineno}: inconsistent field widths")
            subject_ids.append(sid)
            attributes.append([int(t) for t in attr_tokens])
            features.append(feats)
    if not subject_ids:
        return Dataset(np.zeros(0, dtype=np.int64),
                       np.zeros((0, 0), dtype=np.uint8),
                       np.zeros((0, 0)))
    return Dataset(np.array(subject_ids, dtype=np.int64),
                   np.array(attributes, dtype=np.uint8),
                   np.array(features, dtype=np.float64))
