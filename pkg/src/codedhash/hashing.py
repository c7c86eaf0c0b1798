"""Coupled image/attribute hash encoders and their training objective.

Both branches are small MLPs (ReLU hidden layers, tanh output) mapping
their modality into a common c-dimensional real space; binary codes are the
elementwise sign of the activations, with sign(0) = +1.

Pairs are scored by a margin-based logistic probability of matching given
their squared Euclidean distance,

    r(D) = (1 + exp(-margin)) / (1 + exp(D - margin)),

which is 1 exactly at D = 0 and decays toward 0 past the margin.  The
training objective sums the resulting cross-entropy over all image/attribute
pairs of a batch, rewards activations of large norm (pushing them toward
+-1), and penalizes bitwise imbalance across the batch:

    J = sum_ij loss(r(D_ij), S_ij)
        - (theta / c) * (sum_i |P_i|^2 + sum_j |Q_j|^2)
        + lambda * sum_b [(sum_i P_ib)^2 + (sum_j Q_jb)^2]

Since squared Euclidean distance between +-1 codes is 4x their Hamming
distance, a margin expressed in Hamming units must be scaled by
HAMMING_MARGIN_SCALE before entering r(D).

All gradients here are exact reverse-mode derivatives of the expressions
above (clamps included), suitable for verification against central finite
differences in float64.
"""

from __future__ import annotations

import struct

import numpy as np

PROB_CLAMP = 1e-12
HAMMING_MARGIN_SCALE = 4.0

_MAGIC = b"ENCW"
_VERSION = 1


# ---------------------------------------------------------------------------
# MLP branches
# ---------------------------------------------------------------------------

class Mlp:
    """Dense ReLU network with a tanh output layer and manual backprop."""

    def __init__(self, layer_sizes, rng, init_std: float = 0.01):
        if len(layer_sizes) < 2:
            raise ValueError("need at least an input and an output size")
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.weights = []
        self.biases = []
        for d_in, d_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            self.weights.append(rng.normal(0.0, init_std, size=(d_in, d_out)))
            self.biases.append(np.zeros(d_out))

    @property
    def d_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def d_out(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x) -> np.ndarray:
        return self.forward_cache(x)[0]

    def forward_cache(self, x):
        a = np.asarray(x, dtype=np.float64)
        single = a.ndim == 1
        if single:
            a = a[None, :]
        if a.shape[1] != self.d_in:
            raise ValueError(f"expected inputs of width {self.d_in}, "
                             f"got {a.shape[1]}")
        acts = [a]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ w + b
            a = np.tanh(z) if i == last else np.maximum(z, 0.0)
            acts.append(a)
        out = acts[-1][0] if single else acts[-1]
        return out, acts

    def backward(self, acts, dout):
        """Parameter gradients and the input gradient for a cached forward."""
        grads = [None] * (2 * len(self.weights))
        da = np.atleast_2d(dout)
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            a = acts[i + 1]
            if i == last:
                dz = da * (1.0 - a * a)
            else:
                dz = da * (a > 0.0)
            grads[2 * i] = acts[i].T @ dz
            grads[2 * i + 1] = dz.sum(axis=0)
            da = dz @ self.weights[i].T
        return grads, da


class Encoders:
    """The coupled pair of modality branches sharing a code length."""

    def __init__(self, image: Mlp, attribute: Mlp):
        if image.d_out != attribute.d_out:
            raise ValueError("branches must share the output code length")
        self.image = image
        self.attribute = attribute

    @classmethod
    def build(cls, d_img: int, d_attr: int, code_length: int,
              hidden=(512, 512), init_std: float = 0.01, seed=0) -> "Encoders":
        rng = seed if isinstance(seed, np.random.Generator) \
            else np.random.default_rng(seed)
        image = Mlp((d_img, *hidden, code_length), rng, init_std)
        attribute = Mlp((d_attr, *hidden, code_length), rng, init_std)
        return cls(image, attribute)

    @property
    def code_length(self) -> int:
        return self.image.d_out

    def encode_images(self, x) -> np.ndarray:
        return self.image.forward(x)

    def encode_attributes(self, y) -> np.ndarray:
        return self.attribute.forward(y)


def sign_hash(activations) -> np.ndarray:
    """Elementwise sign with sign(0) = +1, as int8 codes."""
    a = np.asarray(activations)
    return np.where(a >= 0, 1, -1).astype(np.int8)


# ---------------------------------------------------------------------------
# Pairwise objective
# ---------------------------------------------------------------------------

def squared_distance(p, q) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return np.sum((p - q) ** 2, axis=-1)


def match_probability(d_sq, margin: float):
    """Probability that a pair at squared distance d_sq is a match."""
    if margin <= 0:
        raise ValueError(f"margin must be positive, got {margin}")
    d = np.asarray(d_sq, dtype=np.float64)
    if (d < 0).any():
        raise ValueError("squared distances cannot be negative")
    # cap the exponent: beyond it the probability underflows the clamp
    # floor anyway, and uncapped values would overflow float64
    z = np.minimum(d - margin, 700.0)
    return (1.0 + np.exp(-margin)) / (1.0 + np.exp(z))


def dll_loss(prob, similar):
    """Cross-entropy of the match probability against the 0/1 label."""
    r = np.clip(np.asarray(prob, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    s = np.asarray(similar, dtype=np.float64)
    return -s * np.log(r) - (1.0 - s) * np.log(1.0 - r)


def _pair_distances(p, q):
    p2 = np.sum(p * p, axis=1)
    q2 = np.sum(q * q, axis=1)
    d = p2[:, None] + q2[None, :] - 2.0 * (p @ q.T)
    return np.maximum(d, 0.0), d > 0.0


def _check_batch(p, q, s):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if p.ndim != 2 or q.ndim != 2 or p.shape[1] != q.shape[1]:
        raise ValueError("activation matrices must be (n, c) with equal c")
    if s.shape != (p.shape[0], q.shape[0]):
        raise ValueError(f"similarity must be {(p.shape[0], q.shape[0])}, "
                         f"got {s.shape}")
    if s.size and not np.isin(s, (0, 1)).all():
        raise ValueError("similarity entries must be 0 or 1")
    return p, q, s


def objective(p, q, s, margin: float, theta: float, lam: float):
    """Value of J and its three parts (pair loss, norm reward, balance).

    The norm-reward part carries its negative sign, so the parts always sum
    to J.
    """
    p, q, s = _check_batch(p, q, s)
    c = p.shape[1]
    d, _ = _pair_distances(p, q)
    dll = float(np.sum(dll_loss(match_probability(d, margin), s)))
    quant = -(theta / c) * float(np.sum(p * p) + np.sum(q * q))
    balance = lam * float(np.sum(p.sum(axis=0) ** 2) + np.sum(q.sum(axis=0) ** 2))
    return dll + quant + balance, (dll, quant, balance)


def objective_grads(p, q, s, margin: float, theta: float, lam: float):
    """Exact gradients of J with respect to both activation matrices.

    Returns (dP, dQ, J, parts).  The pair-loss term is differentiated
    through the same clamps the value uses, so clamped pairs contribute
    zero gradient.
    """
    p, q, s = _check_batch(p, q, s)
    n_p, c = p.shape
    d, d_mask = _pair_distances(p, q)
    a_const = 1.0 + np.exp(-margin)
    r = a_const / (1.0 + np.exp(np.minimum(d - margin, 700.0)))
    j, parts = objective(p, q, s, margin, theta, lam)

    interior = (r > PROB_CLAMP) & (r < 1.0 - PROB_CLAMP)
    ratio = r / np.maximum(1.0 - r, PROB_CLAMP)
    g = (1.0 - r / a_const) * (s - (1.0 - s) * ratio)
    g = g * interior * d_mask
    # g is d loss / dD; dD_ij/dP_i = 2 (P_i - Q_j)
    row = g.sum(axis=1)
    col = g.sum(axis=0)
    dp = 2.0 * (row[:, None] * p - g @ q)
    dq = 2.0 * (col[:, None] * q - g.T @ p)

    dp += -(theta / c) * 2.0 * p
    dq += -(theta / c) * 2.0 * q
    dp += lam * 2.0 * p.sum(axis=0)[None, :]
    dq += lam * 2.0 * q.sum(axis=0)[None, :]
    return dp, dq, j, parts


def gradients(encoders: Encoders, x, y, s, margin: float, theta: float,
              lam: float):
    """Full-chain gradients of J for every weight of both branches.

    x and y are the raw modality inputs of one batch; s is their pairwise
    0/1 match matrix.  Returns (image_grads, attribute_grads, J, parts)
    where the grad lists parallel Mlp.parameters().
    """
    p, img_cache = encoders.image.forward_cache(x)
    q, attr_cache = encoders.attribute.forward_cache(y)
    dp, dq, j, parts = objective_grads(p, q, s, margin, theta, lam)
    img_grads, _ = encoders.image.backward(img_cache, dp)
    attr_grads, _ = encoders.attribute.backward(attr_cache, dq)
    return img_grads, attr_grads, j, parts


# ---------------------------------------------------------------------------
# Weight files
# ---------------------------------------------------------------------------

def save_encoders(encoders: Encoders, path) -> None:
    """Versioned binary: dims and hidden sizes, then row-major float64
    weight matrices and bias vectors in layer order, image branch first."""
    img, attr = encoders.image, encoders.attribute
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<BIII", _VERSION, img.d_in, attr.d_in,
                             encoders.code_length))
        for net in (img, attr):
            hidden = net.layer_sizes[1:-1]
            fh.write(struct.pack("<B", len(hidden)))
            for h in hidden:
                fh.write(struct.pack("<I", h))
        for net in (img, attr):
            for w, b in zip(net.weights, net.biases):
                fh.write(w.astype("<f8").tobytes())
                fh.write(b.astype("<f8").tobytes())


def load_encoders(path) -> Encoders:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not an encoder weight file")
        version, d_img, d_attr, c = struct.unpack("<BIII", fh.read(13))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        sizes = []
        for _ in range(2):
            (n_hidden,) = struct.unpack("<B", fh.read(1))
            sizes.append([struct.unpack("<I", fh.read(4))[0]
                          for _ in range(n_hidden)])
        rng = np.random.default_rng(0)
        image = Mlp((d_img, *sizes[0], c), rng)
        attribute = Mlp((d_attr, *sizes[1], c), rng)
        for net in (image, attribute):
            for i, (w, b) in enumerate(zip(net.weights, net.biases)):
                net.weights[i] = np.frombuffer(
                    fh.read(w.size * 8), dtype="<f8").reshape(w.shape).copy()
                net.biases[i] = np.frombuffer(
                    fh.read(b.size * 8), dtype="<f8").copy()
    return Encoders(image, attribute)
