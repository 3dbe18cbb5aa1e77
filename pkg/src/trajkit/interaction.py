"""Social attention: interaction graph, gated graph convolution, MHSA.

Agents of every scene in a batch share one node-feature matrix; per-scene
isolation is enforced by pair masks (graph messages) and additive -inf logits
(attention), so batched execution matches per-scene sequential execution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IndivisibleHeads, ShapeMismatch, SliceMismatch
from .nn.layers import BatchNorm1d, Linear, Module
from .nn.tensor import (
    Tensor,
    add,
    concat,
    gather_rows,
    matmul,
    mul,
    relu,
    sigmoid,
    softmax,
    softplus,
)

NEG_INF = -1e30  # additive logit that zeroes cross-scene attention


@dataclass
class InteractionGraph:
    """Fully connected per-scene graph over agent feature rows.

    ``edges[k, l]`` is the position difference (agent k minus agent l) at the
    last observed frame in the target frame; cross-scene entries are zero.
    Message passing uses the flattened same-scene pair lists so batched cost
    scales with the sum of per-scene squares, not the global square.
    """

    node_features: Tensor  # (N, h)
    edges: np.ndarray  # (N, N, 2)
    scene_slices: list[tuple[int, int]]
    pair_mask: np.ndarray  # (N, N) True where k != l and same scene
    pair_src: np.ndarray  # (P,) receiving node of each same-scene pair
    pair_dst: np.ndarray  # (P,) sending node
    selector: np.ndarray  # (N, P) 0/1 matrix summing messages per receiver
    target_indices: np.ndarray  # (num_scenes,) global row of each scene's target

    @property
    def pair_edges(self) -> np.ndarray:
        return self.edges[self.pair_src, self.pair_dst]


def build_graph(
    encoded: Tensor,
    last_obs_positions: np.ndarray,
    scene_slices: list[tuple[int, int]],
    target_indices: np.ndarray | None = None,
) -> InteractionGraph:
    """Assemble the interaction graph from encoder outputs and positions."""
    n = encoded.data.shape[0]
    pos = np.asarray(last_obs_positions, dtype=np.float64)
    if pos.shape != (n, 2):
        raise ShapeMismatch(f"positions {pos.shape} vs {n} nodes")
    bounds = [0]
    for lo, hi in scene_slices:
        if lo != bounds[-1] or hi <= lo:
            raise SliceMismatch(f"scene slices {scene_slices} do not tile 0..{n}")
        bounds.append(hi)
    if bounds[-1] != n:
        raise SliceMismatch(f"scene slices cover {bounds[-1]} of {n} rows")

    same = np.zeros((n, n), dtype=bool)
    for lo, hi in scene_slices:
        same[lo:hi, lo:hi] = True
    pair_mask = same & ~np.eye(n, dtype=bool)

    edges = pos[:, None, :] - pos[None, :, :]
    edges[~same] = 0.0

    pair_src, pair_dst = np.nonzero(pair_mask)  # row-major: grouped by receiver
    selector = np.zeros((n, pair_src.shape[0]))
    selector[pair_src, np.arange(pair_src.shape[0])] = 1.0

    if target_indices is None:
        target_indices = np.array([lo for lo, _ in scene_slices], dtype=np.intp)
    else:
        target_indices = np.asarray(target_indices, dtype=np.intp)
        for (lo, hi), t in zip(scene_slices, target_indices):
            if not lo <= t < hi:
                raise SliceMismatch(f"target row {t} outside scene slice ({lo}, {hi})")
    return InteractionGraph(
        node_features=encoded,
        edges=edges,
        scene_slices=list(scene_slices),
        pair_mask=pair_mask,
        pair_src=pair_src,
        pair_dst=pair_dst,
        selector=selector,
        target_indices=target_indices,
    )


class CrystalGCNLayer(Module):
    """Gated edge-aware graph convolution with a residual node update.

    Message from j to i: sigmoid(z W_f + b_f) * softplus(z W_s + b_s) with
    z = (v_i || v_j || e_ij); messages are summed over same-scene neighbours.
    """

    def __init__(self, hidden: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.hidden = hidden
        z_dim = 2 * hidden + 2
        self.gate = Linear(z_dim, hidden, rng, dtype)
        self.update = Linear(z_dim, hidden, rng, dtype)

    def __call__(self, v: Tensor, graph: InteractionGraph) -> Tensor:
        n, h = v.data.shape
        if h != self.hidden:
            raise ShapeMismatch(f"GCN hidden {self.hidden} got features {h}")
        z = concat(
            [
                gather_rows(v, graph.pair_src),
                gather_rows(v, graph.pair_dst),
                Tensor(graph.pair_edges.astype(v.data.dtype)),
            ],
            axis=1,
        )
        msg = mul(sigmoid(self.gate(z)), softplus(self.update(z)))
        return add(v, matmul(Tensor(graph.selector.astype(v.data.dtype)), msg))


class MultiHeadSelfAttention(Module):
    """Scaled dot-product self-attention over agent rows, masked per scene."""

    def __init__(self, hidden: int, heads: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        if hidden % heads != 0:
            raise IndivisibleHeads(f"hidden {hidden} not divisible by {heads} heads")
        self.hidden = hidden
        self.heads = heads
        self.head_dim = hidden // heads
        self.q_proj = Linear(hidden, hidden, rng, dtype)
        self.k_proj = Linear(hidden, hidden, rng, dtype)
        self.v_proj = Linear(hidden, hidden, rng, dtype)
        self.out_proj = Linear(hidden, hidden, rng, dtype)

    def attention_weights(self, x: Tensor, graph: InteractionGraph) -> list[np.ndarray]:
        """Per-head (N, N) softmax rows, for inspection and tests."""
        out, weights = self._run(x, graph)
        return weights

    def _run(self, x: Tensor, graph: InteractionGraph):
        n = x.data.shape[0]
        if x.data.shape[1] != self.hidden:
            raise ShapeMismatch(f"MHSA hidden {self.hidden} got {x.data.shape}")
        same = graph.pair_mask | np.eye(n, dtype=bool)
        logits_mask = np.where(same, 0.0, NEG_INF).astype(x.data.dtype)
        q, k, v = self.q_proj(x), self.k_proj(x), self.v_proj(x)
        scale = 1.0 / np.sqrt(self.head_dim)
        heads_out, weights = [], []
        for hd in range(self.heads):
            sl = slice(hd * self.head_dim, (hd + 1) * self.head_dim)
            qh, kh, vh = q[:, sl], k[:, sl], v[:, sl]
            scores = add(mul(matmul(qh, kh.T), Tensor(np.asarray(scale, dtype=x.data.dtype))),
                         Tensor(logits_mask))
            attn = softmax(scores, axis=1)
            weights.append(attn.data.copy())
            heads_out.append(matmul(attn, vh))
        return self.out_proj(concat(heads_out, axis=1)), weights

    def __call__(self, x: Tensor, graph: InteractionGraph) -> Tensor:
        out, _ = self._run(x, graph)
        return out


class SocialAttention(Module):
    """Two gated GCN layers (batch norm + ReLU between them) followed by MHSA;
    returns the target agent's row per scene."""

    def __init__(self, hidden: int, gcn_layers: int, heads: int,
                 rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.gcn = [CrystalGCNLayer(hidden, rng, dtype) for _ in range(gcn_layers)]
        self.norms = [BatchNorm1d(hidden, dtype=dtype) for _ in range(max(gcn_layers - 1, 0))]
        self.attn = MultiHeadSelfAttention(hidden, heads, rng, dtype)

    def node_update(self, graph: InteractionGraph) -> Tensor:
        v = graph.node_features
        for i, layer in enumerate(self.gcn):
            v = layer(v, graph)
            if i < len(self.norms):
                v = relu(self.norms[i](v))
        return self.attn(v, graph)

    def __call__(self, graph: InteractionGraph) -> Tensor:
        rows = self.node_update(graph)
        return gather_rows(rows, graph.target_indices)


def social_context(graph: InteractionGraph, module: SocialAttention) -> Tensor:
    """Functional alias: run the social attention stack on a built graph."""
    return module(graph)
