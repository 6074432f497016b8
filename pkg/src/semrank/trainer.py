"""The three training stages: causal-LM pre-training, supervised fine-tuning
with prompt masking, and GRPO.

GRPO, per step: sample K completions per prompt at the configured
temperature, score each with the reward pipeline, standardize rewards
within each group into advantages, then minimize

    loss_t = -min(rho_t * A, clip(rho_t, 1-eps, 1+eps) * A) + beta * kl_t

per completion token, averaged over tokens, then over the group and the
prompt batch. rho_t compares the current policy to the sampling-time
snapshot (both at the sampling temperature); kl_t is the non-negative k3
estimator exp(d) - d - 1 with d = logpi_ref - logpi_new against the frozen
reference policy. Only the LoRA adapter is updated; the reference is the
base model with the adapter detached.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import policy
from .errors import SemrankError
from .optim import AdamWState, LrSchedule, MuonState, lr_at, optimizer_step
from .rewards import RewardBreakdown
from .tokenizers import EOS_ID

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ("step", "mean_total", "mean_semantic", "mean_rouge",
                   "mean_answer", "mean_format", "mean_think", "mean_kl",
                   "loss", "lr")


class GrpoNaNError(SemrankError):
    """Loss went non-finite; carries the step and offending prompt context."""

    def __init__(self, message: str, step: int, prompt_index: int,
                 rewards: list[RewardBreakdown]):
        super().__init__(message)
        self.step = step
        self.prompt_index = prompt_index
        self.rewards = rewards


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 6
    clip_eps: float = 0.2
    kl_coeff: float = 0.05
    temperature: float = 0.7
    steps: int = 1000
    adv_eps: float = 1e-4
    prompts_per_step: int = 4
    max_new_tokens: int = 128
    inner_epochs: int = 1
    lr: float = 1e-3
    weight_decay: float = 0.0
    checkpoint_interval: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must be in (0, 1)")
        if self.kl_coeff < 0:
            raise ValueError("kl_coeff must be >= 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.inner_epochs < 1:
            raise ValueError("inner_epochs must be >= 1")


@dataclass(frozen=True)
class GrpoItem:
    """One prompt plus whatever the reward pipeline needs to score it."""

    item_id: str
    prompt_tokens: tuple[int, ...]
    payload: object = None


# Maps (item, decoded generation text) to a scored breakdown.
ScoreFn = Callable[[GrpoItem, str], RewardBreakdown]


@dataclass
class RolloutGroup:
    prompt: tuple[int, ...]
    samples: list[policy.SampledSequence]
    rewards: list[RewardBreakdown]
    advantages: np.ndarray


@dataclass
class TrainState:
    params: policy.PolicyParams
    ref_params: policy.PolicyParams
    optimizer: AdamWState | MuonState
    step: int = 0
    history: list[dict] = field(default_factory=list)


def group_advantages(rewards: Sequence[float], adv_eps: float = 1e-4) -> np.ndarray:
    """Group-standardized advantages A_i = (r_i - mean) / (std_pop + adv_eps).

    A group whose population std is below adv_eps (uniform rewards) gets
    exactly zero advantages rather than a division blow-up.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.shape[0] < 2:
        raise ValueError("group_advantages needs K >= 2 rewards")
    std = float(r.std())  # population std
    if std < adv_eps:
        return np.zeros_like(r)
    return (r - r.mean()) / (std + adv_eps)


def k3_kl(logp_ref: np.ndarray, logp_new: np.ndarray) -> np.ndarray:
    """Per-token k3 KL estimate exp(d) - d - 1, d = logp_ref - logp_new.

    Non-negative for every input pair, zero iff the logprobs agree.
    """
    d = np.asarray(logp_ref) - np.asarray(logp_new)
    return np.expm1(d) - d


def _epoch_order(n: int, steps_needed: int, rng: np.random.Generator) -> list[int]:
    """Seeded shuffled indices, reshuffling epoch by epoch, long enough to
    cover steps_needed draws."""
    order: list[int] = []
    while len(order) < steps_needed:
        order.extend(rng.permutation(n).tolist())
    return order


def _mean_or_none(values: list[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    if not present:
        return None
    return float(np.mean(present))


def _collect_rollouts(state: TrainState, items: Sequence[GrpoItem],
                      score_fn: ScoreFn, decode: Callable[[Sequence[int]], str],
                      cfg: GrpoConfig, step_seed: int) -> list[RolloutGroup]:
    groups = []
    for prompt_index, item in enumerate(items):
        prompt = list(item.prompt_tokens)
        samples = []
        rewards = []
        for k in range(cfg.group_size):
            seed = np.random.SeedSequence(
                entropy=cfg.seed, spawn_key=(step_seed, prompt_index, k))
            seq = policy.sample_sequence(
                state.params, prompt, temperature=cfg.temperature,
                max_len=cfg.max_new_tokens, stop_token=EOS_ID,
                rng_seed=seed)
            samples.append(seq)
            rewards.append(score_fn(item, decode(seq.tokens)))
        advantages = group_advantages([b.total for b in rewards], cfg.adv_eps)
        groups.append(RolloutGroup(prompt=tuple(prompt), samples=samples,
                                   rewards=rewards, advantages=advantages))
    return groups


def _grpo_pass(state: TrainState, groups: list[RolloutGroup],
               cfg: GrpoConfig) -> dict:
    """One optimization pass over fixed rollouts: compute the clipped
    surrogate + KL loss, its exact gradient, and take one optimizer step."""
    params = state.params
    grad_acc: dict[str, np.ndarray] = {
        name: np.zeros_like(t) for name, t in params.trainable().items()}
    n_prompts = len(groups)
    K = cfg.group_size
    loss_sum = 0.0
    kl_values: list[float] = []
    max_term_ratio = 0.0

    for prompt_index, grp in enumerate(groups):
        prompt = list(grp.prompt)
        for k, seq in enumerate(grp.samples):
            completion = np.asarray(seq.tokens, dtype=np.int64)
            adv = float(grp.advantages[k])
            logp_old = np.asarray(seq.logprobs, dtype=np.float64)
            logp_new = policy.logprob_sequence(params, prompt, completion,
                                               temperature=cfg.temperature)
            logp_ref = policy.logprob_sequence(state.ref_params, prompt, completion,
                                               temperature=cfg.temperature)
            rho = np.exp(logp_new - logp_old)
            unclipped = rho * adv
            clipped = np.clip(rho, 1 - cfg.clip_eps, 1 + cfg.clip_eps) * adv
            surrogate = np.minimum(unclipped, clipped)
            kl = k3_kl(logp_ref, logp_new)
            T = len(completion)
            sample_loss = float(np.mean(-surrogate + cfg.kl_coeff * kl))
            if not np.isfinite(sample_loss):
                raise GrpoNaNError(
                    f"non-finite GRPO loss at step {state.step}, prompt "
                    f"{prompt_index}",
                    step=state.step, prompt_index=prompt_index, rewards=grp.rewards)
            loss_sum += sample_loss / (K * n_prompts)
            kl_values.extend(kl.tolist())
            if adv != 0.0:
                bound = (1 + cfg.clip_eps) * abs(adv)
                max_term_ratio = max(max_term_ratio,
                                     float(np.max(np.abs(surrogate))) / bound)

            # d loss / d logp_new, per token, with all averaging folded in:
            # the min() gate passes gradient only where the unclipped branch
            # is active, and d(kl)/d(logp_new) = 1 - exp(logp_ref - logp_new).
            active = unclipped <= clipped
            g = (-rho * adv * active + cfg.kl_coeff * (1.0 - np.exp(logp_ref - logp_new)))
            g /= T * K * n_prompts
            sample_grads = policy.backward(params, prompt, completion, g,
                                           temperature=cfg.temperature)
            for name, value in sample_grads.items():
                grad_acc[name] += value

    optimizer_step(state.optimizer, params.trainable(), grad_acc, lr=cfg.lr)
    return {
        "loss": loss_sum,
        "mean_kl": float(np.mean(kl_values)) if kl_values else 0.0,
        "max_policy_term_ratio": max_term_ratio,
    }


def grpo_step(state: TrainState, items: Sequence[GrpoItem], score_fn: ScoreFn,
              decode: Callable[[Sequence[int]], str], cfg: GrpoConfig,
              step_seed: int) -> tuple[dict, list[RolloutGroup]]:
    """One GRPO step: sample the groups, then cfg.inner_epochs optimization
    passes over them. Returns (metrics, rollouts).

    Sampling seeds derive from (cfg.seed, step_seed), so a fixed run seed
    reproduces the rollouts bit for bit. Reported loss/KL come from the
    first pass, where rho = 1 (on-policy).
    """
    groups = _collect_rollouts(state, items, score_fn, decode, cfg, step_seed)
    first = _grpo_pass(state, groups, cfg)
    for _ in range(cfg.inner_epochs - 1):
        _grpo_pass(state, groups, cfg)
    state.step += 1

    metrics = {
        "step": state.step,
        "mean_total": float(np.mean([b.total for grp in groups for b in grp.rewards])),
        "mean_semantic": _mean_or_none([b.semantic for grp in groups for b in grp.rewards]),
        "mean_rouge": _mean_or_none([b.rouge for grp in groups for b in grp.rewards]),
        "mean_answer": _mean_or_none([b.answer for grp in groups for b in grp.rewards]),
        "mean_format": _mean_or_none([b.format for grp in groups for b in grp.rewards]),
        "mean_think": _mean_or_none([b.think for grp in groups for b in grp.rewards]),
        "mean_kl": first["mean_kl"],
        "loss": first["loss"],
        "lr": cfg.lr,
        "max_policy_term_ratio": first["max_policy_term_ratio"],
    }
    return metrics, groups


def write_metrics_csv(path, rows: list[dict],
                      columns: Sequence[str] = METRICS_COLUMNS) -> None:
    """Stable column order; absent (None) components become empty cells."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(["" if row.get(c) is None else row.get(c) for c in columns])


def run_grpo(state: TrainState, dataset: Sequence[GrpoItem], score_fn: ScoreFn,
             decode: Callable[[Sequence[int]], str], cfg: GrpoConfig,
             out_dir: str | Path | None = None,
             run_id: str = "grpo") -> tuple[policy.PolicyParams, list[dict]]:
    """cfg.steps GRPO steps over a seeded shuffle of the dataset.

    Emits metrics.csv and step{N}.ckpt checkpoints under out_dir/run_id
    when out_dir is given; partial artifacts survive an aborted run.
    """
    if not dataset:
        raise ValueError("run_grpo needs a non-empty dataset")
    ref_digest = state.ref_params.digest()
    ckpt_dir = None
    if out_dir is not None:
        ckpt_dir = Path(out_dir) / run_id
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(np.random.SeedSequence(
        entropy=cfg.seed, spawn_key=(0xC0FFEE,)))
    order = _epoch_order(len(dataset), cfg.steps * cfg.prompts_per_step, rng)

    try:
        for step in range(cfg.steps):
            take = order[step * cfg.prompts_per_step:(step + 1) * cfg.prompts_per_step]
            batch = [dataset[i] for i in take]
            metrics, _ = grpo_step(state, batch, score_fn, decode, cfg,
                                   step_seed=step)
            state.history.append(metrics)
            if step % 50 == 0:
                logger.info("grpo step %d: mean_total=%.4f loss=%.5f kl=%.5f",
                            metrics["step"], metrics["mean_total"],
                            metrics["loss"], metrics["mean_kl"])
            if ckpt_dir is not None and cfg.checkpoint_interval > 0 \
                    and (step + 1) % cfg.checkpoint_interval == 0:
                policy.save_checkpoint(state.params, ckpt_dir / f"step{step + 1}.ckpt",
                                       extra={"seed": cfg.seed, "step": step + 1})
    finally:
        if ckpt_dir is not None:
            policy.save_checkpoint(state.params, ckpt_dir / f"step{state.step}.ckpt",
                                   extra={"seed": cfg.seed, "step": state.step})
            write_metrics_csv(ckpt_dir / "metrics.csv", state.history)

    if state.ref_params.digest() != ref_digest:
        raise SemrankError("reference params changed during GRPO (bug)")
    return state.params, state.history


# ---------------------------------------------------------------------------
# Stage I / II: causal-LM training and SFT
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SftItem:
    prompt_tokens: tuple[int, ...]
    completion_tokens: tuple[int, ...]


def _lm_batch_update(params: policy.PolicyParams, optimizer, lr: float,
                     batch: list[tuple[list[int], list[int]]]) -> float:
    """Accumulate cross-entropy gradients over (prompt, completion) pairs and
    take one optimizer step. Returns the batch's mean loss per token."""
    grad_acc = {name: np.zeros_like(t) for name, t in params.trainable().items()}
    loss = 0.0
    for prompt, completion in batch:
        logp = policy.logprob_sequence(params, prompt, completion)
        T = len(completion)
        loss += float(-logp.mean()) / len(batch)
        g = np.full(T, -1.0 / (T * len(batch)))
        for name, value in policy.backward(params, prompt, completion, g).items():
            grad_acc[name] += value
    optimizer_step(optimizer, params.trainable(), grad_acc, lr=lr)
    return loss


def train_clm(chunks: Sequence[Sequence[int]], params: policy.PolicyParams,
              optimizer, schedule: LrSchedule, epochs: int = 5,
              seq_len: int = 128, batch_size: int = 8,
              seed: int = 0) -> tuple[policy.PolicyParams, list[float]]:
    """Next-token cross-entropy over all positions of the corpus chunks.

    Chunks are cut into seq_len training sequences; order is reshuffled
    per epoch with the given seed. Returns (params, per-epoch mean loss).
    """
    sequences: list[list[int]] = []
    for chunk in chunks:
        chunk = list(chunk)
        for start in range(0, len(chunk), seq_len):
            piece = chunk[start:start + seq_len]
            if piece:
                sequences.append(piece)
    if not sequences:
        raise ValueError("train_clm needs a non-empty tokenized corpus")

    rng = np.random.default_rng(seed)
    step = 0
    epoch_losses: list[float] = []
    for _ in range(epochs):
        order = rng.permutation(len(sequences))
        losses = []
        for start in range(0, len(order), batch_size):
            batch = [([], sequences[i]) for i in order[start:start + batch_size]]
            losses.append(_lm_batch_update(params, optimizer,
                                           lr_at(schedule, step), batch))
            step += 1
        epoch_losses.append(float(np.mean(losses)))
    return params, epoch_losses


def train_sft(items: Sequence[SftItem], params: policy.PolicyParams,
              optimizer, schedule: LrSchedule, epochs: int = 1,
              batch_size: int = 8, seed: int = 0,
              mask_prompt: bool = True) -> tuple[policy.PolicyParams, list[float]]:
    """Cross-entropy on completion tokens only (prompt masked from the loss).

    mask_prompt=False folds the prompt into the scored tokens instead, for
    the masking ablation.
    """
    for it in items:
        if len(it.completion_tokens) == 0:
            raise ValueError(f"SFT item with empty completion: {it!r}")
    if not items:
        raise ValueError("train_sft needs at least one item")

    rng = np.random.default_rng(seed)
    step = 0
    epoch_losses: list[float] = []
    for _ in range(epochs):
        order = rng.permutation(len(items))
        losses = []
        for start in range(0, len(order), batch_size):
            batch = []
            for i in order[start:start + batch_size]:
                it = items[i]
                if mask_prompt:
                    batch.append((list(it.prompt_tokens), list(it.completion_tokens)))
                else:
                    batch.append(([], list(it.prompt_tokens) + list(it.completion_tokens)))
            losses.append(_lm_batch_update(params, optimizer,
                                           lr_at(schedule, step), batch))
            step += 1
        epoch_losses.append(float(np.mean(losses)))
    return params, epoch_losses


def sft_loss(items: Sequence[SftItem], params: policy.PolicyParams,
             mask_prompt: bool = True) -> float:
    """Mean per-token SFT loss without updating anything."""
    losses = []
    for it in items:
        if mask_prompt:
            logp = policy.logprob_sequence(params, list(it.prompt_tokens),
                                           list(it.completion_tokens))
        else:
            logp = policy.logprob_sequence(
                params, [], list(it.prompt_tokens) + list(it.completion_tokens))
        losses.append(float(-logp.mean()))
    return float(np.mean(losses))
