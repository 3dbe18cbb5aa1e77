"""Training objective and loop.

Stage 1 minimizes the mixture NLL; after the first validation plateau the
winner-takes-all and hinge regularizers switch on together with hard-mined
batch sampling, mirroring how the regression and confidence heads are
sharpened once the plain model has converged.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import NonFiniteLoss, ShapeMismatch
from .kinematics import estimate_state
from .map_prior import CenterlinePrior, build_prior
from .metrics import min_ade, min_fde
from .nn.checkpoint import save_checkpoint
from .nn.optim import Adam, PlateauScheduler
from .nn.tensor import (
    Tensor,
    add,
    concat,
    gather_rows,
    log,
    logsumexp_rows,
    mul,
    neg,
    reduce_mean,
    reduce_sum,
    relu,
    smooth_l1,
    sub,
)
from .predictor import Batch, ForwardResult, ModelConfig, TrajectoryPredictor, prepare_batch
from .scenario import Scenario, to_target_frame

log_ = logging.getLogger("trajkit.training")

CONFIDENCE_FLOOR = 1e-12  # keeps log(c) finite when softmax underflows


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.1
    gamma: float = 0.65
    epsilon_margin: float = 1e-4

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma, self.epsilon_margin) < 0.0:
            raise ValueError("loss weights must be >= 0")

    def stage1(self) -> "LossWeights":
        return replace(self, beta=0.0, gamma=0.0)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 50
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    hard_mining_fraction: float = 0.10
    seed: int = 0
    weights: LossWeights = LossWeights()
    two_stage: bool = True

    def __post_init__(self):
        if self.lr <= 0.0:
            raise ValueError("lr must be > 0")
        if not 0.0 <= self.hard_mining_fraction < 1.0:
            raise ValueError("hard_mining_fraction must be in [0, 1)")


# --- losses (public numpy forms) -------------------------------------------------


def nll_loss(gt: np.ndarray, preds: np.ndarray, conf: np.ndarray) -> float:
    """Mixture negative log-likelihood with unit covariance.

    -log sum_k exp(log c_k - 0.5 sum_t ||p_hat - p||^2), evaluated with the
    max-shift trick; confidences are floored at 1e-12 inside the log.
    """
    gt = np.asarray(gt, dtype=np.float64)
    preds = np.asarray(preds, dtype=np.float64)
    conf = np.asarray(conf, dtype=np.float64)
    if preds.ndim != 3 or preds.shape[1:] != gt.shape or preds.shape[0] != conf.shape[0]:
        raise ShapeMismatch(f"nll on gt {gt.shape}, preds {preds.shape}, conf {conf.shape}")
    err = 0.5 * np.sum((preds - gt) ** 2, axis=(1, 2))
    logits = np.log(np.maximum(conf, CONFIDENCE_FLOOR)) - err
    m = logits.max()
    return float(-(m + np.log(np.sum(np.exp(logits - m)))))


def wta_hinge(
    gt: np.ndarray, preds: np.ndarray, conf: np.ndarray, eps: float = 1e-4
) -> tuple[float, float, int]:
    """Winner-takes-all regression and hinge confidence losses.

    The winner m* minimizes the end-point L2 distance (ties to the lowest
    index); WTA is the mean Smooth-L1 over the winner's full horizon, hinge
    averages max(0, c_m + eps - c_m*) over the losing modes.
    """
    gt = np.asarray(gt, dtype=np.float64)
    preds = np.asarray(preds, dtype=np.float64)
    conf = np.asarray(conf, dtype=np.float64)
    k = preds.shape[0]
    d_end = np.linalg.norm(preds[:, -1, :] - gt[-1], axis=1)
    m_star = int(np.argmin(d_end))
    diff = preds[m_star] - gt
    absd = np.abs(diff)
    l_wta = float(np.mean(np.where(absd < 1.0, 0.5 * diff**2, absd - 0.5)))
    if k == 1:
        return l_wta, 0.0, m_star
    others = np.delete(conf, m_star)
    l_hinge = float(np.mean(np.maximum(0.0, others + eps - conf[m_star])))
    return l_wta, l_hinge, m_star


def combined_loss(parts: tuple[float, float, float], weights: LossWeights) -> float:
    """alpha * NLL + beta * hinge + gamma * WTA."""
    nll, hinge, wta = parts
    return weights.alpha * nll + weights.beta * hinge + weights.gamma * wta


# --- losses (autodiff graph forms) ------------------------------------------------


def nll_loss_graph(result: ForwardResult, gt_flat: np.ndarray) -> Tensor:
    """Batched NLL over a forward result; mean over scenarios."""
    dtype = result.confidences.data.dtype
    errs = []
    for traj in result.mode_trajectories:
        diff = sub(traj, Tensor(gt_flat.astype(dtype)))
        errs.append(mul(reduce_sum(mul(diff, diff), axis=1, keepdims=True),
                        Tensor(np.asarray(0.5, dtype=dtype))))
    err = concat(errs, axis=1)  # (B, k)
    # additive floor keeps log finite on underflowed confidences without
    # killing their gradient the way a hard max would
    logc = log(add(result.confidences,
                   Tensor(np.asarray(CONFIDENCE_FLOOR, dtype=dtype))))
    logits = sub(logc, err)
    return neg(reduce_mean(logsumexp_rows(logits)))


def wta_hinge_graph(
    result: ForwardResult, gt_flat: np.ndarray, eps: float = 1e-4
) -> tuple[Tensor, Tensor, np.ndarray]:
    """Batched WTA and hinge losses; winners chosen outside the tape."""
    dtype = result.confidences.data.dtype
    b = gt_flat.shape[0]
    k = len(result.mode_trajectories)
    ends = np.stack([t.data[:, -2:] for t in result.mode_trajectories], axis=1)
    d_end = np.linalg.norm(ends - gt_flat[:, None, -2:], axis=2)
    winners = np.argmin(d_end, axis=1)

    onehot = np.zeros((b, k), dtype=dtype)
    onehot[np.arange(b), winners] = 1.0
    winner_traj = None
    for m, traj in enumerate(result.mode_trajectories):
        term = mul(traj, Tensor(onehot[:, m : m + 1]))
        winner_traj = term if winner_traj is None else add(winner_traj, term)
    l_wta = reduce_mean(reduce_mean(smooth_l1(winner_traj, gt_flat.astype(dtype)), axis=1))

    if k == 1:
        return l_wta, Tensor(np.asarray(0.0, dtype=dtype)), winners
    conf = result.confidences
    c_star = reduce_sum(mul(conf, Tensor(onehot)), axis=1, keepdims=True)
    margins = relu(add(sub(conf, c_star), Tensor(np.asarray(eps, dtype=dtype))))
    loser_sum = reduce_sum(mul(margins, Tensor(1.0 - onehot)), axis=1, keepdims=True)
    l_hinge = reduce_mean(mul(loser_sum, Tensor(np.asarray(1.0 / (k - 1), dtype=dtype))))
    return l_wta, l_hinge, winners


def combined_loss_graph(nll: Tensor, hinge: Tensor, wta: Tensor,
                        weights: LossWeights) -> Tensor:
    dtype = nll.data.dtype
    total = mul(nll, Tensor(np.asarray(weights.alpha, dtype=dtype)))
    if weights.beta > 0.0:
        total = add(total, mul(hinge, Tensor(np.asarray(weights.beta, dtype=dtype))))
    if weights.gamma > 0.0:
        total = add(total, mul(wta, Tensor(np.asarray(weights.gamma, dtype=dtype))))
    return total


# --- augmentation and mining ----------------------------------------------------


@dataclass(frozen=True)
class AugmentPolicy:
    p_drop: float = 0.1
    p_swap: float = 0.05
    sigma: float = 0.2

    def is_noop(self) -> bool:
        return self.p_drop == 0.0 and self.p_swap == 0.0 and self.sigma == 0.0


def augment(scenario: Scenario, policy: AugmentPolicy, rng: np.random.Generator,
            obs_len: int | None = None) -> Scenario:
    """Perturb observed frames only: dropped points are rebuilt by linear
    interpolation of their neighbours, some points swap with their successor,
    then Gaussian position noise is added. Future frames are never touched."""
    from .scenario import OBS_LEN

    obs_len = OBS_LEN if obs_len is None else obs_len
    if policy.is_noop():
        return scenario
    agents = []
    for a in scenario.agents:
        pos = a.positions.copy()
        obs = pos[:obs_len]
        n = obs.shape[0]
        if policy.p_drop > 0.0:
            drop = rng.random(n) < policy.p_drop
            for i in range(1, n - 1):  # interior points have both neighbours
                if drop[i]:
                    obs[i] = 0.5 * (obs[i - 1] + obs[i + 1])
        if policy.p_swap > 0.0:
            swap = rng.random(n - 1) < policy.p_swap
            for i in range(n - 1):
                if swap[i]:
                    obs[[i, i + 1]] = obs[[i + 1, i]]
        if policy.sigma > 0.0:
            obs += rng.normal(0.0, policy.sigma, size=obs.shape)
        pos[:obs_len] = obs
        agents.append(replace(a, positions=pos))
    return replace(scenario, agents=tuple(agents))


def hard_mine(
    model: TrajectoryPredictor,
    train_set: "PreparedData | list[Scenario]",
    fraction: float = 0.10,
) -> np.ndarray:
    """Sampling probabilities that double the weight of the hardest scenarios,
    ranked by per-scenario minADE over all modes."""
    data = (train_set if isinstance(train_set, PreparedData)
            else prepare_dataset(list(train_set), model.cfg))
    n = len(data.scenarios)
    if fraction <= 0.0:
        return np.ones(n) / n
    return _mining_probabilities(model, data, model.cfg, fraction)


# --- the loop ---------------------------------------------------------------------


@dataclass
class PreparedData:
    """Target-framed scenarios plus cached priors and eval batches."""

    scenarios: list[Scenario]
    priors: list[CenterlinePrior] | None


def prepare_dataset(scenarios: list[Scenario], cfg: ModelConfig) -> PreparedData:
    """Rotate every scenario into its target frame; build priors for map runs."""
    framed, priors = [], []
    for s in scenarios:
        tf, _ = to_target_frame(s, obs_len=cfg.obs_len)
        framed.append(tf)
        if cfg.variant == "map":
            state = estimate_state(tf.target.positions[: cfg.obs_len])
            priors.append(
                build_prior(tf, state, max_candidates=cfg.max_centerlines,
                            r=cfg.area_points, pred_len=cfg.pred_len,
                            obs_len=cfg.obs_len, seed=abs(hash(s.scenario_id)) % (2**31)))
    return PreparedData(scenarios=framed, priors=priors if cfg.variant == "map" else None)


def evaluate(model: TrajectoryPredictor, data: PreparedData,
             batch_size: int = 256) -> dict:
    """minADE/minFDE at k=1 and k=6 over a prepared dataset."""
    cfg = model.cfg
    sums = {"minade_k1": 0.0, "minfde_k1": 0.0, "minade_k6": 0.0, "minfde_k6": 0.0}
    n = len(data.scenarios)
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        batch = prepare_batch(
            data.scenarios[lo:hi], cfg,
            data.priors[lo:hi] if data.priors is not None else None)
        sets = model.predict(batch)
        for row in range(hi - lo):
            gt = batch.gt_future[row]
            ps = sets[row]
            sums["minade_k1"] += min_ade(gt, ps.trajectories, ps.confidences, k_eval=1)
            sums["minfde_k1"] += min_fde(gt, ps.trajectories, ps.confidences, k_eval=1)
            sums["minade_k6"] += min_ade(gt, ps.trajectories, ps.confidences,
                                         k_eval=cfg.k_modes)
            sums["minfde_k6"] += min_fde(gt, ps.trajectories, ps.confidences,
                                         k_eval=cfg.k_modes)
    return {k: v / n for k, v in sums.items()}


def train(
    config: TrainConfig,
    train_scenarios: list[Scenario],
    val_scenarios: list[Scenario],
    model: TrajectoryPredictor,
    out_dir: str | Path | None = None,
    augment_policy: AugmentPolicy | None = None,
) -> tuple[TrajectoryPredictor, list[dict]]:
    """Two-stage training; returns the model and the per-epoch metrics log.

    When *out_dir* is given, writes ``checkpoint.{json,bin}`` and
    ``metrics.jsonl`` there.
    """
    cfg = model.cfg
    train_data = prepare_dataset(train_scenarios, cfg)
    val_data = prepare_dataset(val_scenarios, cfg)
    policy = augment_policy if augment_policy is not None else AugmentPolicy()

    root = np.random.SeedSequence(config.seed)
    shuffle_rng, aug_rng, drop_rng = (np.random.default_rng(s) for s in root.spawn(3))

    opt = Adam(model.parameters(), lr=config.lr)
    sched = PlateauScheduler(opt, factor=config.plateau_factor,
                             patience=config.plateau_patience)
    stage = 1
    weights = config.weights.stage1()
    sample_p = np.ones(len(train_data.scenarios)) / len(train_data.scenarios)
    history: list[dict] = []
    n = len(train_data.scenarios)
    steps_per_epoch = max(n // config.batch_size, 1)

    for epoch in range(1, config.epochs + 1):
        model.train()
        epoch_loss, n_batches = 0.0, 0
        if stage == 2 and config.hard_mining_fraction > 0.0:
            order = shuffle_rng.choice(n, size=steps_per_epoch * config.batch_size,
                                       replace=True, p=sample_p)
        else:
            order = shuffle_rng.permutation(n)
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            if idx.size == 0:
                continue
            scen = []
            for i in idx:
                s = train_data.scenarios[i]
                scen.append(augment(s, policy, aug_rng, obs_len=cfg.obs_len))
            priors = [train_data.priors[i] for i in idx] if train_data.priors else None
            batch = prepare_batch(scen, cfg, priors)
            result = model.forward(batch, rng=drop_rng)
            gt_flat = batch.gt_future.reshape(batch.size, -1)
            nll = nll_loss_graph(result, gt_flat)
            if weights.beta > 0.0 or weights.gamma > 0.0:
                wta, hinge, _ = wta_hinge_graph(result, gt_flat, weights.epsilon_margin)
            else:
                zero = Tensor(np.asarray(0.0, dtype=nll.data.dtype))
                wta, hinge = zero, zero
            loss = combined_loss_graph(nll, hinge, wta, weights)
            if not np.isfinite(loss.data):
                raise NonFiniteLoss(
                    f"epoch {epoch} batch {n_batches}: loss {float(loss.data)}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.data)
            n_batches += 1

        model.eval()
        val = evaluate(model, val_data)
        entry = {
            "epoch": epoch,
            "lr": opt.lr,
            "train_loss": epoch_loss / max(n_batches, 1),
            "val_minade_k1": val["minade_k1"],
            "val_minfde_k1": val["minfde_k1"],
            "val_minade_k6": val["minade_k6"],
            "val_minfde_k6": val["minfde_k6"],
        }
        history.append(entry)
        log_.info("epoch %d loss %.4f minADE6 %.3f", epoch, entry["train_loss"],
                  entry["val_minade_k6"])

        if sched.step(val["minade_k6"]) and config.two_stage and stage == 1:
            stage = 2
            weights = config.weights
            if config.hard_mining_fraction > 0.0:
                sample_p = _mining_probabilities(model, train_data, cfg,
                                                 config.hard_mining_fraction)
            log_.info("epoch %d: stage 2 (hinge/WTA + hard mining)", epoch)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, out / "checkpoint")
        with (out / "metrics.jsonl").open("w") as fh:
            for entry in history:
                fh.write(json.dumps(entry) + "\n")
    return model, history


def _mining_probabilities(model: TrajectoryPredictor, data: PreparedData,
                          cfg: ModelConfig, fraction: float,
                          batch_size: int = 256) -> np.ndarray:
    n = len(data.scenarios)
    scores = np.empty(n)
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        batch = prepare_batch(data.scenarios[lo:hi], cfg,
                              data.priors[lo:hi] if data.priors else None)
        sets = model.predict(batch)
        for row in range(hi - lo):
            scores[lo + row] = min_ade(batch.gt_future[row], sets[row].trajectories,
                                       sets[row].confidences, k_eval=cfg.k_modes)
    weights = np.ones(n)
    n_hard = int(round(fraction * n))
    if n_hard > 0:
        weights[np.argsort(-scores)[:n_hard]] = 2.0
    return weights / weights.sum()
