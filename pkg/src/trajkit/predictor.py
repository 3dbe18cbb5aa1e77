"""End-to-end multimodal predictor.

History LSTM -> social attention -> autoregressive temporal decoder with
per-mode regression heads and a residual confidence MLP. The map variant adds
MLP-encoded plausible-area and centerline context, cycling the k modes over
the M candidate centerlines.

FLOP accounting counts one multiply-accumulate as one FLOP (the convention
used by common profilers) and one FLOP per element for activations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MissingPrior, ShapeMismatch
from .interaction import InteractionGraph, SocialAttention, build_graph
from .map_prior import CenterlinePrior
from .nn.layers import Linear, LSTMCell, MapMLP, Module
from .nn.tensor import Tensor, add, concat, gather_rows, no_grad, relu, softmax
from .scenario import OBS_LEN, PRED_LEN, Scenario, relative_displacements


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "social"  # social | map
    h_social: int = 64
    h_map: int = 128
    heads: int = 4
    gcn_layers: int = 2
    window: int = 20
    k_modes: int = 6
    pred_len: int = PRED_LEN
    obs_len: int = OBS_LEN
    max_centerlines: int = 3
    area_points: int = 200
    dropout: float = 0.1
    decoder_hidden_map: int = 192
    dtype: str = "float64"  # float32 | float64
    seed: int = 0

    def __post_init__(self):
        if self.variant not in ("social", "map"):
            raise ValueError(f"unknown variant {self.variant}")
        if self.window > self.obs_len:
            raise ValueError("window must be <= obs_len")
        if self.h_social % self.heads != 0:
            raise ValueError("h_social must be divisible by heads")

    @property
    def context_dim(self) -> int:
        if self.variant == "social":
            return self.h_social
        return self.h_social + 2 * self.h_map

    @property
    def decoder_hidden(self) -> int:
        return self.h_social if self.variant == "social" else self.decoder_hidden_map

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass(frozen=True)
class PredictionSet:
    """k candidate futures (target frame) with one confidence per mode."""

    trajectories: np.ndarray  # (k, pred_len, 2)
    confidences: np.ndarray  # (k,)

    def __post_init__(self):
        traj = np.ascontiguousarray(self.trajectories, dtype=np.float64)
        conf = np.ascontiguousarray(self.confidences, dtype=np.float64)
        if traj.ndim != 3 or traj.shape[0] != conf.shape[0] or traj.shape[2] != 2:
            raise ShapeMismatch(f"trajectories {traj.shape} vs confidences {conf.shape}")
        if not np.all(np.isfinite(traj)):
            raise ValueError("non-finite trajectory")
        if np.any(conf < 0.0) or abs(float(conf.sum()) - 1.0) > 1e-6:
            raise ValueError("confidences must be a distribution (sum 1 within 1e-6)")
        traj.flags.writeable = False
        conf.flags.writeable = False
        object.__setattr__(self, "trajectories", traj)
        object.__setattr__(self, "confidences", conf)


@dataclass
class Batch:
    """Model-ready arrays for a list of target-framed scenarios."""

    displacements: np.ndarray  # (N, obs_len-1, 2) all agents
    last_positions: np.ndarray  # (N, 2)
    scene_slices: list[tuple[int, int]]
    target_indices: np.ndarray  # (B,)
    window_disp: np.ndarray  # (B, window, 2) zero-padded at the front
    window_abs: np.ndarray  # (B, window, 2)
    centerlines: np.ndarray | None = None  # (B, M, pred_len, 2)
    valid_mask: np.ndarray | None = None  # (B, M)
    area_points: np.ndarray | None = None  # (B, r, 2)
    gt_future: np.ndarray | None = None  # (B, pred_len, 2)
    scenario_ids: list[str] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.scene_slices)


def prepare_batch(
    scenarios: list[Scenario],
    cfg: ModelConfig,
    priors: list[CenterlinePrior] | None = None,
) -> Batch:
    """Stack target-framed scenarios into one batch.

    Scenarios must already be in the target frame (origin at the target's
    last observation). Agent rows are ordered scenario by scenario with the
    target first.
    """
    if priors is not None and len(priors) != len(scenarios):
        raise ShapeMismatch("one prior per scenario required")
    disp, last, slices, tidx, wdisp, wabs, gts, ids = [], [], [], [], [], [], [], []
    offset = 0
    for s in scenarios:
        agents = [s.target] + [a for a in s.agents if not a.is_target]
        for a in agents:
            obs = a.positions[: cfg.obs_len]
            disp.append(relative_displacements(obs))
            last.append(obs[-1])
        slices.append((offset, offset + len(agents)))
        tidx.append(offset)
        offset += len(agents)

        tgt_obs = s.target.positions[: cfg.obs_len]
        tgt_disp = relative_displacements(tgt_obs)
        w = cfg.window
        tail = tgt_disp[max(tgt_disp.shape[0] - w, 0) :]
        wdisp.append(np.vstack([np.zeros((w - tail.shape[0], 2)), tail]))
        wabs.append(tgt_obs[-w:])
        if s.n_frames >= cfg.obs_len + cfg.pred_len:
            gts.append(s.target.positions[cfg.obs_len : cfg.obs_len + cfg.pred_len])
        ids.append(s.scenario_id)

    batch = Batch(
        displacements=np.stack(disp).astype(np.float64),
        last_positions=np.stack(last),
        scene_slices=slices,
        target_indices=np.asarray(tidx, dtype=np.intp),
        window_disp=np.stack(wdisp),
        window_abs=np.stack(wabs),
        gt_future=np.stack(gts) if len(gts) == len(scenarios) else None,
        scenario_ids=ids,
    )
    if priors is not None:
        batch.centerlines = np.stack([p.centerlines for p in priors])
        batch.valid_mask = np.stack([p.valid for p in priors])
        batch.area_points = np.stack([p.plausible_points for p in priors])
    return batch


@dataclass
class DecoderState:
    h: Tensor
    c: Tensor
    window_disp: Tensor  # (B, 2*window) flattened
    window_abs: Tensor | None  # map variant only
    position: Tensor  # (B, 2) current absolute position
    step: int  # next step to predict (1-based)


@dataclass
class ForwardResult:
    mode_trajectories: list[Tensor]  # k tensors (B, 2*pred_len), absolute
    confidences: Tensor  # (B, k)

    def prediction_sets(self, pred_len: int) -> list[PredictionSet]:
        k = len(self.mode_trajectories)
        batch = self.confidences.data.shape[0]
        out = []
        for b in range(batch):
            traj = np.stack(
                [t.data[b].reshape(pred_len, 2).astype(np.float64)
                 for t in self.mode_trajectories])
            conf = self.confidences.data[b].astype(np.float64)
            conf = conf / conf.sum()  # renormalize float32 rounding
            out.append(PredictionSet(trajectories=traj, confidences=conf))
        return out


class TrajectoryPredictor(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        dtype = cfg.np_dtype
        rng = np.random.default_rng(cfg.seed)
        self.encoder = LSTMCell(2, cfg.h_social, rng, dtype)
        self.social = SocialAttention(cfg.h_social, cfg.gcn_layers, cfg.heads, rng, dtype)
        if cfg.variant == "map":
            self.area_mlp = MapMLP(2 * cfg.area_points, cfg.h_map, rng, cfg.dropout, dtype)
            self.centerline_mlp = MapMLP(2 * cfg.pred_len, cfg.h_map, rng, cfg.dropout, dtype)
            self.ctx_proj = Linear(cfg.context_dim, cfg.decoder_hidden, rng, dtype)
            self.dist_embed = Linear(2 * cfg.window, 2 * cfg.window, rng, dtype)
        self.spatial_embed = Linear(2 * cfg.window, 2 * cfg.window, rng, dtype)
        self.decoder = LSTMCell(2 * cfg.window + 1, cfg.decoder_hidden, rng, dtype)
        self.mode_heads = [Linear(cfg.decoder_hidden, 2, rng, dtype)
                           for _ in range(cfg.k_modes)]
        conf_in = cfg.k_modes * cfg.pred_len * 2
        self.conf_fc1 = Linear(conf_in, 60, rng, dtype)
        self.conf_fc2 = Linear(60, 60, rng, dtype)
        self.conf_fc3 = Linear(60, cfg.k_modes, rng, dtype)

    # -- components ----------------------------------------------------------

    def encode_history(self, displacements: np.ndarray) -> Tensor:
        """Shared-parameter LSTM over each agent's displacement sequence."""
        n, steps, _ = displacements.shape
        h, c = self.encoder.zero_state(n)
        for t in range(steps):
            x = Tensor(displacements[:, t, :].astype(self.cfg.np_dtype))
            h, c = self.encoder(x, h, c)
        return h

    def encode_map(self, batch: Batch,
                   rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        """(static area context (B, h_map), specific contexts (B*M, h_map))."""
        cfg = self.cfg
        if batch.area_points is None or batch.centerlines is None:
            raise MissingPrior("map variant needs centerline priors")
        b = batch.size
        area_flat = batch.area_points.reshape(b, 2 * cfg.area_points)
        static = self.area_mlp(Tensor(area_flat.astype(cfg.np_dtype)), rng)
        cl_flat = batch.centerlines.reshape(b * cfg.max_centerlines, 2 * cfg.pred_len)
        specific = self.centerline_mlp(Tensor(cl_flat.astype(cfg.np_dtype)), rng)
        return static, specific

    def _aligned_centerline_window(self, centerline: np.ndarray, step: int) -> np.ndarray:
        """Centerline points matched to the window's timesteps at *step*."""
        cfg = self.cfg
        steps = np.arange(step - cfg.window, step)  # timesteps covered by the window
        idx = np.clip(steps - 1, 0, cfg.pred_len - 1)
        return centerline[:, idx, :].reshape(centerline.shape[0], 2 * cfg.window)

    def init_decoder_state(self, h0: Tensor, batch: Batch) -> DecoderState:
        cfg = self.cfg
        b = batch.size
        c0 = Tensor(np.zeros((b, cfg.decoder_hidden), dtype=cfg.np_dtype))
        wd = Tensor(batch.window_disp.reshape(b, 2 * cfg.window).astype(cfg.np_dtype))
        wa = None
        if cfg.variant == "map":
            wa = Tensor(batch.window_abs.reshape(b, 2 * cfg.window).astype(cfg.np_dtype))
        pos = Tensor(batch.window_abs[:, -1, :].astype(cfg.np_dtype))
        return DecoderState(h=h0, c=c0, window_disp=wd, window_abs=wa, position=pos, step=1)

    def decode(
        self,
        state: DecoderState,
        head: Linear,
        centerline: np.ndarray | None = None,
        n_steps: int | None = None,
    ) -> tuple[list[Tensor], DecoderState]:
        """Run the autoregressive decoder for n_steps; returns per-step
        absolute positions and the state for resuming."""
        cfg = self.cfg
        b = state.h.data.shape[0]
        n_steps = cfg.pred_len - state.step + 1 if n_steps is None else n_steps
        positions: list[Tensor] = []
        h, c, wd, wa, pos = state.h, state.c, state.window_disp, state.window_abs, state.position
        step = state.step
        if cfg.variant == "map" and centerline is None:
            raise MissingPrior("map-variant decode requires a centerline")
        for _ in range(n_steps):
            emb = self.spatial_embed(wd)
            if cfg.variant == "map":
                aligned = self._aligned_centerline_window(centerline, step)
                dist = add(wa, Tensor(-aligned.astype(cfg.np_dtype)))
                emb = add(emb, self.dist_embed(dist))
            t_col = np.full((b, 1), step / cfg.pred_len, dtype=cfg.np_dtype)
            x = concat([emb, Tensor(t_col)], axis=1)
            h, c = self.decoder(x, h, c)
            d = head(h)
            pos = add(pos, d)
            positions.append(pos)
            wd = concat([wd[:, 2:], d], axis=1)
            if wa is not None:
                wa = concat([wa[:, 2:], pos], axis=1)
            step += 1
        return positions, DecoderState(h=h, c=c, window_disp=wd, window_abs=wa,
                                       position=pos, step=step)

    def confidence_head(self, mode_trajectories: list[Tensor]) -> Tensor:
        """Flatten all modes, residual MLP, softmax to a distribution."""
        x = concat(mode_trajectories, axis=1)
        h1 = relu(self.conf_fc1(x))
        h2 = relu(add(h1, self.conf_fc2(h1)))
        return softmax(self.conf_fc3(h2), axis=1)

    # -- full pass -------------------------------------------------------------

    def forward(self, batch: Batch, rng: np.random.Generator | None = None) -> ForwardResult:
        cfg = self.cfg
        if cfg.variant == "map" and batch.centerlines is None:
            raise MissingPrior("map variant forward requires priors in the batch")
        enc = self.encode_history(batch.displacements)
        graph = build_graph(enc, batch.last_positions, batch.scene_slices,
                            batch.target_indices)
        social_ctx = self.social(graph)  # (B, h_social)

        b = batch.size
        trajs: list[Tensor] = []
        if cfg.variant == "social":
            for m in range(cfg.k_modes):
                st = self.init_decoder_state(social_ctx, batch)
                positions, _ = self.decode(st, self.mode_heads[m])
                trajs.append(concat(positions, axis=1))
        else:
            static, specific = self.encode_map(batch, rng)
            for m in range(cfg.k_modes):
                cl = m % cfg.max_centerlines
                rows = np.arange(b) * cfg.max_centerlines + cl
                ctx = concat([social_ctx, static, gather_rows(specific, rows)], axis=1)
                h0 = self.ctx_proj(ctx)
                st = self.init_decoder_state(h0, batch)
                positions, _ = self.decode(st, self.mode_heads[m],
                                           centerline=batch.centerlines[:, cl])
                trajs.append(concat(positions, axis=1))

        conf = self.confidence_head(trajs)
        return ForwardResult(mode_trajectories=trajs, confidences=conf)

    def predict(self, batch: Batch) -> list[PredictionSet]:
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                result = self.forward(batch)
        finally:
            self.train(was_training)
        return result.prediction_sets(self.cfg.pred_len)


# --- accounting -----------------------------------------------------------------


def count_params(cfg: ModelConfig) -> dict:
    """Exact trainable-parameter counts per component (matches the model)."""
    h, hm = cfg.h_social, cfg.h_map
    w, k, L = cfg.window, cfg.k_modes, cfg.pred_len

    def linear(i, o):
        return i * o + o

    def lstm(i, hid):
        return i * 4 * hid + hid * 4 * hid + 4 * hid

    def bn(f):
        return 2 * f

    def map_mlp(i, hid):
        return linear(i, hid) + bn(hid) + linear(hid, hid) + linear(hid, hid)

    parts = {
        "history_encoder": lstm(2, h),
        "gcn": cfg.gcn_layers * 2 * linear(2 * h + 2, h) + (cfg.gcn_layers - 1) * bn(h),
        "mhsa": 4 * linear(h, h),
        "spatial_embed": linear(2 * w, 2 * w),
        "decoder_lstm": lstm(2 * w + 1, cfg.decoder_hidden),
        "mode_heads": k * linear(cfg.decoder_hidden, 2),
        "confidence": linear(k * L * 2, 60) + linear(60, 60) + linear(60, k),
    }
    if cfg.variant == "map":
        parts["area_mlp"] = map_mlp(2 * cfg.area_points, hm)
        parts["centerline_mlp"] = map_mlp(2 * L, hm)
        parts["ctx_proj"] = linear(cfg.context_dim, cfg.decoder_hidden)
        parts["dist_embed"] = linear(2 * w, 2 * w)
    parts["total"] = sum(parts.values())
    return parts


def count_flops(cfg: ModelConfig, n_agents: int = 10) -> dict:
    """Forward-pass FLOPs for one scenario with *n_agents* agents.

    Convention: 1 multiply-accumulate = 1 FLOP; activations and other
    elementwise ops = 1 FLOP per element. The centerline count is fixed at
    cfg.max_centerlines.
    """
    h, hm = cfg.h_social, cfg.h_map
    w, k, L, n = cfg.window, cfg.k_modes, cfg.pred_len, n_agents
    H = cfg.decoder_hidden

    def linear(i, o, rows=1):
        return rows * (i * o + o)

    def lstm_step(i, hid, rows=1):
        # two matmuls + bias + gate nonlinearities and elementwise updates
        return rows * (i * 4 * hid + hid * 4 * hid + 4 * hid + 10 * hid)

    parts = {}
    parts["history_encoder"] = (cfg.obs_len - 1) * lstm_step(2, h, rows=n)
    pairs = n * n
    per_gcn = (
        2 * linear(2 * h + 2, h, rows=pairs)  # gate and update projections
        + 3 * pairs * h  # softplus/sigmoid activations and gating product
        + pairs * h  # per-node message summation
        + n * h  # residual add
    )
    parts["gcn"] = cfg.gcn_layers * per_gcn + (cfg.gcn_layers - 1) * 6 * n * h
    parts["mhsa"] = (
        3 * linear(h, h, rows=n)
        + 2 * n * n * h  # scores and weighted values across heads
        + cfg.heads * 6 * n * n  # scaling, masking, softmax
        + linear(h, h, rows=n)
    )
    dec_step = linear(2 * w, 2 * w) + lstm_step(2 * w + 1, H) + linear(H, 2) + 2
    if cfg.variant == "map":
        dec_step += 2 * w + linear(2 * w, 2 * w) + 2 * w  # dist features + embed + add
    parts["decoder"] = k * L * dec_step
    parts["confidence"] = (
        linear(k * L * 2, 60) + 60 + linear(60, 60) + 2 * 60 + linear(60, k) + 6 * k
    )
    if cfg.variant == "map":
        mlp = lambda i: linear(i, hm) + 6 * hm + linear(hm, hm) + hm + linear(hm, hm)
        parts["area_mlp"] = mlp(2 * cfg.area_points)
        parts["centerline_mlp"] = cfg.max_centerlines * mlp(2 * L)
        parts["ctx_proj"] = k * linear(cfg.context_dim, H)
    parts["total"] = sum(parts.values())
    return parts
