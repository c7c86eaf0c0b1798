"""An unrolled, weighted sum-product decoder with trainable edge weights.

The network mirrors L flooding iterations as 2L hidden layers of width E
(one unit per Tanner-graph edge).  Odd layers compute weighted
variable-to-check messages squashed through tanh(. / 2); even layers are
the unweighted check-side product update followed by 2 atanh.  The output
layer combines the channel LLR and the final check messages per variable
and applies a sigmoid, yielding the probability that the bit is 1 under
the positive-LLR-means-0 convention.  With every weight at 1.0 the hard
decisions coincide exactly with plain sum-product decoding.

Weights, in the order used by the serialized format and weight_vector():
for each layer, per edge, one channel weight then one weight per incoming
sibling edge (ascending); then per variable one output channel weight and
one weight per incident edge.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .bp import TannerGraph, check_products_except_self, segment_sum
from .channel import noise_sigma
from .gf2 import LinearCode
from .optim import Adam

DEFAULT_ATANH_CLAMP = 1e-7
_PRESIGMOID_LIMIT = 36.0

_MAGIC = b"NBPW"
_VERSION = 1


class TrainingDivergedError(RuntimeError):
    pass


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class NeuralBpDecoder:
    """Trainable unrolled decoder over a fixed Tanner graph.

    iterations is the number of unrolled flooding iterations L; the network
    has 2L hidden layers of width num_edges.  All weights start at 1.0.
    """

    def __init__(self, graph: TannerGraph, iterations: int,
                 atanh_clamp: float = DEFAULT_ATANH_CLAMP):
        if iterations < 1:
            raise ValueError("iterations must be >= 1")
        self.graph = graph
        self.iterations = iterations
        self.atanh_clamp = atanh_clamp
        E = graph.num_edges
        M = len(graph.pair_src)
        self.w_chan = np.ones((iterations, E))
        self.w_in = np.ones((iterations, M))
        self.w_out_chan = np.ones(graph.n_var)
        self.w_out_edge = np.ones(E)

    # -- parameter plumbing -------------------------------------------------

    @property
    def num_edges(self) -> int:
        return self.graph.num_edges

    def parameters(self):
        return [self.w_chan, self.w_in, self.w_out_chan, self.w_out_edge]

    @property
    def num_weights(self) -> int:
        return sum(p.size for p in self.parameters())

    def weight_vector(self) -> np.ndarray:
        """All weights in serialization order (see module docstring)."""
        g = self.graph
        parts = []
        for j in range(self.iterations):
            for e in range(g.num_edges):
                parts.append(self.w_chan[j, e:e + 1])
                parts.append(self.w_in[j, g.pair_offsets[e]:g.pair_offsets[e + 1]])
        for v in range(g.n_var):
            parts.append(self.w_out_chan[v:v + 1])
            parts.append(self.w_out_edge[g.var_offsets[v]:g.var_offsets[v + 1]])
        return np.concatenate(parts)

    def set_weight_vector(self, vec) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.num_weights,):
            raise ValueError(f"expected {self.num_weights} weights, got {vec.shape}")
        g = self.graph
        pos = 0
        for j in range(self.iterations):
            for e in range(g.num_edges):
                self.w_chan[j, e] = vec[pos]
                pos += 1
                width = g.pair_offsets[e + 1] - g.pair_offsets[e]
                self.w_in[j, g.pair_offsets[e]:g.pair_offsets[e + 1]] = \
                    vec[pos:pos + width]
                pos += width
        for v in range(g.n_var):
            self.w_out_chan[v] = vec[pos]
            pos += 1
            width = g.var_offsets[v + 1] - g.var_offsets[v]
            self.w_out_edge[g.var_offsets[v]:g.var_offsets[v + 1]] = \
                vec[pos:pos + width]
            pos += width

    def copy(self) -> "NeuralBpDecoder":
        dup = NeuralBpDecoder(self.graph, self.iterations, self.atanh_clamp)
        dup.w_chan = self.w_chan.copy()
        dup.w_in = self.w_in.copy()
        dup.w_out_chan = self.w_out_chan.copy()
        dup.w_out_edge = self.w_out_edge.copy()
        return dup

    # -- forward ------------------------------------------------------------

    def _forward_t(self, llr_t, keep_cache: bool):
        """Core forward pass on an (n_var, batch) LLR array."""
        g = self.graph
        lo = 1.0 - self.atanh_clamp
        l_edge = llr_t[g.edge_var]
        x = np.zeros((g.num_edges, llr_t.shape[1]))
        layers = []
        for j in range(self.iterations):
            x_prev = x
            src = x_prev[g.pair_src]
            contrib = self.w_in[j][:, None] * src
            pre = self.w_chan[j][:, None] * l_edge + \
                segment_sum(contrib, g.pair_offsets)
            x_odd = np.tanh(0.5 * pre)
            prod = check_products_except_self(x_odd, g)
            p_clip = np.clip(prod, -lo, lo)
            clip_mask = np.abs(prod) < lo
            x = 2.0 * np.arctanh(p_clip)
            if keep_cache:
                layers.append((x_prev, x_odd, p_clip, clip_mask))
        s = self.w_out_chan[:, None] * llr_t + \
            segment_sum(self.w_out_edge[:, None] * x, g.var_offsets)
        z = np.clip(-s, -_PRESIGMOID_LIMIT, _PRESIGMOID_LIMIT)
        z_mask = np.abs(s) < _PRESIGMOID_LIMIT
        o = _sigmoid(z)
        cache = (llr_t, l_edge, layers, x, z, z_mask) if keep_cache else None
        return o, cache

    def forward(self, llr):
        """Soft outputs (bit-1 probabilities) and hard bits.

        Accepts a single length-n LLR vector or a (batch, n) array and
        returns arrays of matching shape.  Hard decision: output > 0.5 is
        bit 1, ties resolve to bit 0.
        """
        a = np.asarray(llr, dtype=np.float64)
        single = a.ndim == 1
        if single:
            a = a[None, :]
        if a.ndim != 2 or a.shape[1] != self.graph.n_var:
            raise ValueError(f"expected LLR vectors of length {self.graph.n_var}, "
                             f"got shape {np.shape(llr)}")
        if not np.isfinite(a).all():
            raise ValueError("LLR inputs must be finite")
        o, _ = self._forward_t(a.T.copy(), keep_cache=False)
        outputs = o.T
        hard = (outputs > 0.5).astype(np.uint8)
        if single:
            return outputs[0], hard[0]
        return outputs, hard

    def decode_batch(self, llrs) -> np.ndarray:
        _, hard = self.forward(np.atleast_2d(np.asarray(llrs, dtype=np.float64)))
        return hard

    # -- training -----------------------------------------------------------

    def loss_and_grads(self, llrs, targets):
        """Mean bitwise cross-entropy against target bits, with exact
        gradients for every weight.

        llrs is (batch, n); targets is (batch, n) bits.  Returns
        (loss, [grad arrays matching parameters()]).
        """
        g = self.graph
        llrs = np.asarray(llrs, dtype=np.float64)
        y = np.asarray(targets, dtype=np.float64)
        if llrs.shape != y.shape or llrs.ndim != 2:
            raise ValueError("llrs and targets must share a (batch, n) shape")
        o, cache = self._forward_t(llrs.T.copy(), keep_cache=True)
        llr_t, l_edge, layers, x_final, z, z_mask = cache
        y_t = y.T
        count = y_t.size
        loss = float(np.mean(np.logaddexp(0.0, z) - y_t * z))

        dz = (o - y_t) / count
        ds = -dz * z_mask
        d_out_chan = (ds * llr_t).sum(axis=1)
        ds_edge = ds[g.edge_var]
        d_out_edge = (ds_edge * x_final).sum(axis=1)
        dx = self.w_out_edge[:, None] * ds_edge

        d_chan = np.zeros_like(self.w_chan)
        d_in = np.zeros_like(self.w_in)
        for j in reversed(range(self.iterations)):
            x_prev, x_odd, p_clip, clip_mask = layers[j]
            dp = dx * (2.0 / (1.0 - p_clip * p_clip)) * clip_mask
            dx_odd = _product_except_self_backward(x_odd, dp, g)
            dpre = dx_odd * 0.5 * (1.0 - x_odd * x_odd)
            d_chan[j] = (dpre * l_edge).sum(axis=1)
            flat = dpre[g.pair_dst] * x_prev[g.pair_src]
            d_in[j] = flat.sum(axis=1)
            if j > 0:
                back = self.w_in[j][:, None] * dpre[g.pair_dst]
                dx = segment_sum(back[g.pair_by_src], g.src_offsets)
        return loss, [d_chan, d_in, d_out_chan, d_out_edge]


def _product_except_self_backward(values, grads, graph: TannerGraph):
    """Reverse-mode step for check_products_except_self.

    Given d(loss)/d(output) per edge, returns d(loss)/d(values) per edge
    without dividing by any factor (stable at zeros).
    """
    mask = graph.check_pad_mask
    gathered = graph.check_pad_edge[mask]
    a = np.ones(mask.shape + values.shape[1:], dtype=values.dtype)
    a[mask] = values[gathered]
    gpad = np.zeros_like(a)
    gpad[mask] = grads[gathered]
    pre = np.ones_like(a)
    np.cumprod(a[:, :-1], axis=1, out=pre[:, 1:])
    suf = np.ones_like(a)
    np.cumprod(a[:, :0:-1], axis=1, out=suf[:, -2::-1])
    dmax = a.shape[1]
    acc_lo = np.zeros_like(a)
    for i in range(dmax - 1):
        acc_lo[:, i + 1] = acc_lo[:, i] * a[:, i] + gpad[:, i] * pre[:, i]
    acc_hi = np.zeros_like(a)
    for i in range(dmax - 2, -1, -1):
        acc_hi[:, i] = acc_hi[:, i + 1] * a[:, i + 1] + gpad[:, i + 1] * suf[:, i + 1]
    r = acc_lo * suf + acc_hi * pre
    out = np.zeros_like(values)
    out[gathered] = r[mask]
    return out


@dataclass
class DecoderTrainConfig:
    """Settings for training on noisy transmissions of the zero codeword."""

    snr_db_list: tuple = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)
    frames_per_epoch: int = 256
    epochs: int = 150
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not self.snr_db_list:
            raise ValueError("snr_db_list must not be empty")
        if self.frames_per_epoch < 1 or self.epochs < 0:
            raise ValueError("frames_per_epoch must be >= 1 and epochs >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


def train_decoder(net: NeuralBpDecoder, code: LinearCode,
                  config: DecoderTrainConfig) -> NeuralBpDecoder:
    """Train the decoder weights on noisy zero-codeword frames.

    Each epoch draws fresh AWGN at SNRs sampled from config.snr_db_list
    (rate-adjusted), computes the bitwise cross-entropy toward the all-zero
    target, and takes one Adam step.  The graph topology and weight count
    never change; with epochs = 0 the weights stay at initialization.
    """
    if code.n != net.graph.n_var:
        raise ValueError(f"code length {code.n} does not match graph "
                         f"width {net.graph.n_var}")
    rng = np.random.default_rng(config.seed)
    adam = Adam(net.parameters(), lr=config.learning_rate)
    sigmas = np.array([noise_sigma(s, code.rate) for s in config.snr_db_list])
    targets = np.zeros((config.frames_per_epoch, code.n))
    for epoch in range(config.epochs):
        pick = rng.integers(0, len(sigmas), size=config.frames_per_epoch)
        sig = sigmas[pick][:, None]
        received = 1.0 + sig * rng.standard_normal((config.frames_per_epoch, code.n))
        llrs = 2.0 * received / (sig * sig)
        loss, grads = net.loss_and_grads(llrs, targets)
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
        adam.step(net.parameters(), grads)
    return net


def evaluate_error_rates(decoder, code: LinearCode, snr_db: float, frames: int,
                         seed, zero_codeword: bool = False,
                         batch_size: int = 2048):
    """Monte-Carlo bit and frame error rates over an AWGN channel.

    `decoder` is anything with decode_batch (a NeuralBpDecoder or a plain
    BpDecoder).  Transmits random codewords unless zero_codeword is set.
    Deterministic for a fixed seed.
    """
    if frames < 1:
        raise ValueError("frames must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) \
        else np.random.default_rng(seed)
    sigma = noise_sigma(snr_db, code.rate)
    bit_errors = 0
    frame_errors = 0
    done = 0
    gen = code.generator.astype(np.int64)
    while done < frames:
        b = min(batch_size, frames - done)
        if zero_codeword:
            words = np.zeros((b, code.n), dtype=np.uint8)
        else:
            msgs = rng.integers(0, 2, size=(b, code.k))
            words = (msgs @ gen % 2).astype(np.uint8)
        symbols = 1.0 - 2.0 * words
        received = symbols + sigma * rng.standard_normal((b, code.n))
        llrs = 2.0 * received / (sigma * sigma)
        hard = decoder.decode_batch(llrs)
        errs = hard != words
        bit_errors += int(errs.sum())
        frame_errors += int(errs.any(axis=1).sum())
        done += b
    return bit_errors / (frames * code.n), frame_errors / frames


# -- serialization ----------------------------------------------------------

def save_decoder(net: NeuralBpDecoder, code: LinearCode, path) -> None:
    """Binary format: magic, version, (n, k, t, L), then the packed weight
    vector as little-endian float64."""
    if code.n != net.graph.n_var:
        raise ValueError("code length does not match decoder graph")
    vec = net.weight_vector()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<BIIIIQ", _VERSION, code.n, code.k, code.t,
                             net.iterations, vec.size))
        fh.write(vec.astype("<f8").tobytes())


def load_decoder(path, code: LinearCode) -> NeuralBpDecoder:
    """Rebuild a decoder over the graph of `code` from a saved weight file."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a decoder weight file")
        version, n, k, t, iterations, count = struct.unpack(
            "<BIIIIQ", fh.read(struct.calcsize("<BIIIIQ")))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        if (n, k, t) != (code.n, code.k, code.t):
            raise ValueError(f"{path}: weights are for an ({n}, {k}) t={t} code, "
                             f"not ({code.n}, {code.k}) t={code.t}")
        raw = fh.read(count * 8)
    vec = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    net = NeuralBpDecoder(TannerGraph(code.parity_check), iterations)
    net.set_weight_vector(vec)
    return net
