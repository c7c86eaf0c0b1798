"""Tanner graphs and flooding sum-product decoding.

Edges are indexed in (variable, check) lexicographic order, so the edges of
one variable node occupy a contiguous index range.  All message updates are
vectorized over a batch of LLR vectors:

  variable -> check:  m_vc = llr(v) + sum of incoming check messages,
                      excluding the target edge
  check -> variable:  m_cv = 2 atanh( prod tanh(m_vc / 2) ),
                      excluding the target edge
  posterior:          llr(v) + sum of all incoming check messages

A positive LLR (and posterior) means bit 0; hard decisions use
posterior >= 0 -> 0.  Products fed to atanh are clamped away from +-1 by
`clamp` (default 1e-12).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gf2 import as_gf2

DEFAULT_CLAMP = 1e-12


class TannerGraph:
    """Bipartite factor graph of a parity-check matrix.

    Attributes:
        h: the (n_check, n_var) parity-check matrix.
        n_var, n_check, num_edges: sizes.
        edge_var, edge_check: endpoint arrays, one entry per edge.
        var_checks, check_vars: per-node adjacency lists, sorted ascending.
    """

    def __init__(self, parity_check):
        h = as_gf2(parity_check)
        if h.size == 0:
            raise ValueError("empty parity-check matrix")
        if (h.sum(axis=1) == 0).any():
            raise ValueError("degenerate graph: all-zero parity-check row")
        if (h.sum(axis=0) == 0).any():
            raise ValueError("degenerate graph: all-zero parity-check column")
        self.h = h
        self.n_check, self.n_var = h.shape

        vs, cs = np.nonzero(h.T)  # (v, c) lexicographic order
        self.edge_var = vs.astype(np.int64)
        self.edge_check = cs.astype(np.int64)
        self.num_edges = len(vs)

        var_deg = h.sum(axis=0).astype(np.int64)
        self.var_offsets = np.concatenate([[0], np.cumsum(var_deg)])
        self.var_checks = [self.edge_check[self.var_offsets[v]:self.var_offsets[v + 1]]
                           for v in range(self.n_var)]
        self.check_vars = [np.nonzero(h[c])[0] for c in range(self.n_check)]

        self._edge_id = {(int(v), int(c)): e
                        for e, (v, c) in enumerate(zip(vs, cs))}

        # padded per-check edge table for product-except-self updates
        check_deg = h.sum(axis=1).astype(np.int64)
        dmax = int(check_deg.max())
        self.check_pad_edge = np.zeros((self.n_check, dmax), dtype=np.int64)
        self.check_pad_mask = np.zeros((self.n_check, dmax), dtype=bool)
        fill = np.zeros(self.n_check, dtype=np.int64)
        for e in range(self.num_edges):
            c = self.edge_check[e]
            self.check_pad_edge[c, fill[c]] = e
            self.check_pad_mask[c, fill[c]] = True
            fill[c] += 1

        # (target, source) edge pairs sharing a variable, target-major order
        pair_src = []
        counts = np.empty(self.num_edges, dtype=np.int64)
        for e in range(self.num_edges):
            v = self.edge_var[e]
            lo, hi = self.var_offsets[v], self.var_offsets[v + 1]
            sibs = [f for f in range(lo, hi) if f != e]
            pair_src.extend(sibs)
            counts[e] = len(sibs)
        self.pair_src = np.asarray(pair_src, dtype=np.int64)
        self.pair_offsets = np.concatenate([[0], np.cumsum(counts)])
        self.pair_dst = np.repeat(np.arange(self.num_edges), counts)
        # the same pairs sorted source-major, for reverse-mode accumulation;
        # each edge is a source for its deg(v) - 1 siblings, so the segment
        # counts coincide with `counts`
        self.pair_by_src = np.argsort(self.pair_src, kind="stable")
        self.src_offsets = self.pair_offsets

    @classmethod
    def from_parity_check(cls, parity_check) -> "TannerGraph":
        return cls(parity_check)

    def edge_id(self, v: int, c: int) -> int:
        return self._edge_id[(v, c)]

    def syndrome_ok(self, hard_bits) -> np.ndarray:
        """True per column of an (n_var, batch) bit array iff all checks pass."""
        return ~((self.h.astype(np.int64) @ hard_bits) % 2).any(axis=0)


def segment_sum(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Sum contiguous row segments of `values`; empty segments give zero."""
    starts = offsets[:-1]
    counts = np.diff(offsets)
    if values.shape[0] == 0:
        return np.zeros((len(starts),) + values.shape[1:], dtype=values.dtype)
    idx = np.minimum(starts, values.shape[0] - 1)
    out = np.add.reduceat(values, idx, axis=0)
    out[counts == 0] = 0
    return out


def check_products_except_self(values: np.ndarray, graph: TannerGraph) -> np.ndarray:
    """For each edge, the product of same-check values excluding that edge.

    `values` is (num_edges, batch) in edge order; so is the result.
    """
    pad = np.ones(graph.check_pad_mask.shape + values.shape[1:], dtype=values.dtype)
    pad[graph.check_pad_mask] = values[graph.check_pad_edge[graph.check_pad_mask]]
    pre = np.ones_like(pad)
    np.cumprod(pad[:, :-1], axis=1, out=pre[:, 1:])
    suf = np.ones_like(pad)
    np.cumprod(pad[:, :0:-1], axis=1, out=suf[:, -2::-1])
    prod = pre * suf
    out = np.empty_like(values)
    out[graph.check_pad_edge[graph.check_pad_mask]] = prod[graph.check_pad_mask]
    return out


def check_messages(m_vc: np.ndarray, graph: TannerGraph,
                   clamp: float = DEFAULT_CLAMP) -> np.ndarray:
    """Check-to-variable messages from variable-to-check messages (LLR domain)."""
    t = np.tanh(0.5 * m_vc)
    prod = check_products_except_self(t, graph)
    np.clip(prod, -1.0 + clamp, 1.0 - clamp, out=prod)
    return 2.0 * np.arctanh(prod)


def _validate_llr_batch(llrs, n_var):
    a = np.asarray(llrs, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != n_var:
        raise ValueError(f"expected shape (batch, {n_var}), got {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError("LLR inputs must be finite")
    return a


def bp_decode_batch(llrs, graph: TannerGraph, iterations: int,
                    early_stop: bool = True, clamp: float = DEFAULT_CLAMP):
    """Flooding sum-product decoding of a batch of LLR vectors.

    Returns (hard_bits (batch, n) uint8, posteriors (batch, n), converged
    (batch,) bool).  With early_stop, a frame freezes at the first iteration
    whose hard decision satisfies every check, so a converged frame always
    carries a codeword.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    llrs = _validate_llr_batch(llrs, graph.n_var)
    batch = llrs.shape[0]
    out_hard = np.zeros((graph.n_var, batch), dtype=np.uint8)
    out_soft = np.zeros((graph.n_var, batch))
    out_conv = np.zeros(batch, dtype=bool)
    if batch == 0:
        return out_hard.T, out_soft.T, out_conv

    llr_t = llrs.T.copy()
    l_edge = llr_t[graph.edge_var]
    m_vc = l_edge.copy()
    cols = np.arange(batch)

    for it in range(iterations):
        m_cv = check_messages(m_vc, graph, clamp)
        post = llr_t + segment_sum(m_cv, graph.var_offsets)
        hard = (post < 0).astype(np.uint8)
        ok = graph.syndrome_ok(hard)
        last = it == iterations - 1
        if last:
            freeze = np.ones_like(ok)
        elif early_stop:
            freeze = ok
        else:
            freeze = np.zeros_like(ok)
        if freeze.any():
            sel = cols[freeze]
            out_hard[:, sel] = hard[:, freeze]
            out_soft[:, sel] = post[:, freeze]
            out_conv[sel] = ok[freeze]
        if last or freeze.all():
            break
        if freeze.any():
            keep = ~freeze
            cols = cols[keep]
            llr_t = llr_t[:, keep]
            l_edge = l_edge[:, keep]
            m_cv = m_cv[:, keep]
        src = m_cv[graph.pair_src]
        m_vc = l_edge + segment_sum(src, graph.pair_offsets)

    return out_hard.T, out_soft.T, out_conv


def bp_decode(llr, graph: TannerGraph, iterations: int,
              early_stop: bool = True, clamp: float = DEFAULT_CLAMP):
    """Single-vector wrapper around bp_decode_batch."""
    llr = np.asarray(llr, dtype=np.float64)
    if llr.ndim != 1:
        raise ValueError(f"expected a 1-D LLR vector, got shape {llr.shape}")
    hard, soft, conv = bp_decode_batch(llr[None, :], graph, iterations,
                                       early_stop=early_stop, clamp=clamp)
    return hard[0], soft[0], bool(conv[0])


@dataclass
class BpDecoder:
    """A fixed-iteration sum-product decoder usable wherever a trained
    network is (both expose decode_batch)."""

    graph: TannerGraph
    iterations: int
    early_stop: bool = True
    clamp: float = DEFAULT_CLAMP

    def decode_batch(self, llrs) -> np.ndarray:
        hard, _, _ = bp_decode_batch(llrs, self.graph, self.iterations,
                                     early_stop=self.early_stop, clamp=self.clamp)
        return hard
