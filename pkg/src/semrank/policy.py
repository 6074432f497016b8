"""A tiny fixed-context autoregressive LM with exact analytic gradients.

Architecture: the C most recent token ids are embedded and concatenated,
pushed through one tanh hidden layer, and projected to vocabulary logits:

    x      = concat(E[ctx])                       (C*d_e,)
    h      = tanh(W1_eff^T x + b1)                (h,)
    logits = W2_eff^T h + b2                      (V,)

where X_eff = X + (alpha/r) * B @ A when a LoRA adapter is attached to X.
Every training objective in this package reduces to a weighted sum of
completion-token log-probabilities, so `backward` computes the exact
gradient of sum_t g_t * log pi(o_t) for caller-supplied weights g_t; in
LoRA mode only the adapter factors receive gradients, the host tensors are
frozen.

Contexts shorter than C are left-padded with PAD_ID. Sampling and
log-probability bookkeeping share one temperature convention: logits are
divided by the temperature before the softmax, and recorded logprobs are
those of the tempered distribution actually sampled from.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError
from .tokenizers import EOS_ID, PAD_ID

GREEDY_TEMPERATURE_CUTOFF = 1e-6

LORA_TARGETS = ("W1", "W2")
BASE_TENSORS = ("E", "W1", "b1", "W2", "b2")

CKPT_MAGIC = b"SRCK0001"


@dataclass(frozen=True)
class LoraConfig:
    rank: int = 32
    alpha: float = 64.0
    targets: tuple[str, ...] = ("W1", "W2")

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("LoRA rank must be >= 1")
        if self.alpha <= 0:
            raise ValueError("LoRA alpha must be positive")
        bad = set(self.targets) - set(LORA_TARGETS)
        if bad:
            raise ValueError(f"LoRA targets must be among {LORA_TARGETS}, got {sorted(bad)}")

    @property
    def scale(self) -> float:
        return self.alpha / self.rank


@dataclass
class PolicyParams:
    """All model tensors plus the optional LoRA factor pairs.

    lora maps a target name to (A, B) with A: (rank, cols) and B: (rows,
    rank) for a host of shape (rows, cols); the adapter delta is
    scale * B @ A.
    """

    E: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    context_size: int
    lora: dict[str, tuple[np.ndarray, np.ndarray]] | None = None
    lora_cfg: LoraConfig | None = None

    @property
    def vocab_size(self) -> int:
        return self.E.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.E.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.b1.shape[0]

    def base_tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in BASE_TENSORS}

    def trainable(self) -> dict[str, np.ndarray]:
        """Tensors the optimizer may update: LoRA factors when an adapter
        is attached, otherwise all base tensors."""
        if self.lora is not None:
            out = {}
            for name, (a, b) in self.lora.items():
                out[f"lora.{name}.A"] = a
                out[f"lora.{name}.B"] = b
            return out
        return self.base_tensors()

    def effective(self, name: str) -> np.ndarray:
        """Host matrix with its LoRA delta applied (the host itself when no
        adapter targets it)."""
        base = getattr(self, name)
        if self.lora is not None and name in self.lora:
            a, b = self.lora[name]
            return base + self.lora_cfg.scale * (b @ a)
        return base

    def copy(self) -> "PolicyParams":
        lora = None
        if self.lora is not None:
            lora = {k: (a.copy(), b.copy()) for k, (a, b) in self.lora.items()}
        return PolicyParams(
            E=self.E.copy(), W1=self.W1.copy(), b1=self.b1.copy(),
            W2=self.W2.copy(), b2=self.b2.copy(),
            context_size=self.context_size, lora=lora, lora_cfg=self.lora_cfg)

    def digest(self) -> str:
        """Stable content hash, used by the reference-freezing check."""
        h = hashlib.sha256()
        for name in BASE_TENSORS:
            h.update(name.encode())
            h.update(np.ascontiguousarray(getattr(self, name)).tobytes())
        if self.lora is not None:
            for name in sorted(self.lora):
                a, b = self.lora[name]
                h.update(name.encode())
                h.update(np.ascontiguousarray(a).tobytes())
                h.update(np.ascontiguousarray(b).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class SampledSequence:
    """One sampled completion with its sampling-time log-probabilities."""

    tokens: tuple[int, ...]
    logprobs: tuple[float, ...]
    prompt_len: int

    def __post_init__(self):
        if len(self.tokens) != len(self.logprobs):
            raise ValueError("tokens and logprobs must have equal length")


def init_params(vocab_size: int = 64, context_size: int = 16, embed_dim: int = 32,
                hidden_dim: int = 64, seed: int = 0, init_scale: float = 0.08) -> PolicyParams:
    """Gaussian-initialized weights, zero biases."""
    rng = np.random.default_rng(seed)
    return PolicyParams(
        E=rng.normal(0.0, init_scale, (vocab_size, embed_dim)),
        W1=rng.normal(0.0, init_scale, (context_size * embed_dim, hidden_dim)),
        b1=np.zeros(hidden_dim),
        W2=rng.normal(0.0, init_scale, (hidden_dim, vocab_size)),
        b2=np.zeros(vocab_size),
        context_size=context_size)


def attach_lora(params: PolicyParams, cfg: LoraConfig, seed: int = 0) -> PolicyParams:
    """Fresh adapter: A ~ N(0, 1/rank), B = 0, so the initial delta is zero."""
    rng = np.random.default_rng(seed)
    lora = {}
    for name in cfg.targets:
        host = getattr(params, name)
        rows, cols = host.shape
        if cfg.rank > min(rows, cols):
            raise ValueError(
                f"LoRA rank {cfg.rank} exceeds min dimension of {name} {host.shape}")
        a = rng.normal(0.0, 1.0 / cfg.rank, (cfg.rank, cols))
        b = np.zeros((rows, cfg.rank))
        lora[name] = (a, b)
    out = params.copy()
    out.lora = lora
    out.lora_cfg = cfg
    return out


def merge_lora(params: PolicyParams) -> PolicyParams:
    """Fold the adapter into the hosts (W <- W + scale*B@A) and drop it.

    forward_logits of the merged model matches the adapted model exactly.
    """
    if params.lora is None:
        return params.copy()
    merged = params.copy()
    for name in params.lora:
        setattr(merged, name, params.effective(name).copy())
    merged.lora = None
    merged.lora_cfg = None
    return merged


def detach_lora(params: PolicyParams) -> PolicyParams:
    """Base weights with the adapter removed (the GRPO reference policy)."""
    out = params.copy()
    out.lora = None
    out.lora_cfg = None
    return out


def _check_tokens(params: PolicyParams, tokens) -> np.ndarray:
    arr = np.asarray(tokens, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= params.vocab_size):
        raise ValueError(
            f"token id out of range [0, {params.vocab_size}): "
            f"min={arr.min()}, max={arr.max()}")
    return arr


def forward_logits(params: PolicyParams, context) -> np.ndarray:
    """Logits for the next token after an exactly-C-token context."""
    ctx = _check_tokens(params, context)
    if ctx.shape != (params.context_size,):
        raise ValueError(
            f"context must have exactly {params.context_size} tokens, got {ctx.shape}")
    x = params.E[ctx].ravel()
    h = np.tanh(x @ params.effective("W1") + params.b1)
    return h @ params.effective("W2") + params.b2


def _pad_context(ids: np.ndarray, context_size: int) -> np.ndarray:
    """Last context_size ids, left-padded with PAD_ID."""
    if len(ids) >= context_size:
        return ids[-context_size:]
    out = np.full(context_size, PAD_ID, dtype=np.int64)
    if len(ids):
        out[-len(ids):] = ids
    return out


def _context_windows(params: PolicyParams, prompt: np.ndarray,
                     completion: np.ndarray) -> np.ndarray:
    """(T, C) matrix whose row t is the context preceding completion[t]."""
    C = params.context_size
    full = np.concatenate([np.full(C, PAD_ID, dtype=np.int64), prompt, completion])
    windows = np.lib.stride_tricks.sliding_window_view(full, C)
    return windows[len(prompt):len(prompt) + len(completion)].copy()


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def logprob_sequence(params: PolicyParams, prompt, completion,
                     temperature: float = 1.0) -> np.ndarray:
    """Teacher-forced log-probabilities of each completion token.

    Logits are divided by the temperature before the log-softmax, matching
    the bookkeeping convention of sample_sequence.
    """
    prompt = _check_tokens(params, prompt)
    completion = _check_tokens(params, completion)
    if len(completion) == 0:
        raise ValueError("completion must be non-empty")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    ctx = _context_windows(params, prompt, completion)
    X = params.E[ctx].reshape(len(completion), -1)
    H = np.tanh(X @ params.effective("W1") + params.b1)
    logits = H @ params.effective("W2") + params.b2
    logp = _log_softmax(logits / temperature)
    return logp[np.arange(len(completion)), completion]


def sample_sequence(params: PolicyParams, prompt, temperature: float = 1.0,
                    max_len: int = 128, stop_token: int = EOS_ID,
                    rng_seed: int = 0) -> SampledSequence:
    """Ancestral sampling from softmax(logits / temperature).

    Stops after emitting stop_token or at max_len. Temperatures below
    1e-6 switch to greedy argmax; the recorded logprob of a greedy token
    is 0.0 (the log-probability under the degenerate argmax distribution).
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if temperature <= 0:
        raise ValueError("temperature must be positive (use <1e-6 for greedy)")
    prompt = _check_tokens(params, prompt)
    rng = np.random.default_rng(rng_seed)
    greedy = temperature < GREEDY_TEMPERATURE_CUTOFF

    w1 = params.effective("W1")
    w2 = params.effective("W2")
    ctx = _pad_context(prompt, params.context_size).copy()
    tokens: list[int] = []
    logprobs: list[float] = []
    for _ in range(max_len):
        x = params.E[ctx].ravel()
        logits = np.tanh(x @ w1 + params.b1) @ w2 + params.b2
        if greedy:
            tok = int(np.argmax(logits))
            lp = 0.0
        else:
            logp = _log_softmax(logits / temperature)
            p = np.exp(logp)
            p /= p.sum()
            tok = int(rng.choice(params.vocab_size, p=p))
            lp = float(logp[tok])
        tokens.append(tok)
        logprobs.append(lp)
        if tok == stop_token:
            break
        ctx[:-1] = ctx[1:]
        ctx[-1] = tok
    return SampledSequence(tokens=tuple(tokens), logprobs=tuple(logprobs),
                           prompt_len=len(prompt))


def greedy_decode(params: PolicyParams, prompt, max_len: int = 128,
                  stop_token: int = EOS_ID) -> list[int]:
    seq = sample_sequence(params, prompt, temperature=GREEDY_TEMPERATURE_CUTOFF / 10,
                          max_len=max_len, stop_token=stop_token)
    return list(seq.tokens)


def backward(params: PolicyParams, prompt, completion, per_token_loss_grads,
             temperature: float = 1.0) -> dict[str, np.ndarray]:
    """Exact gradient of L = sum_t g_t * log pi(o_t | ctx_t) w.r.t. the
    trainable tensors.

    Returns a dict keyed like params.trainable(). In LoRA mode the host
    tensors are frozen: only the adapter factors appear (their hosts'
    gradients are exactly zero by construction).
    """
    prompt = _check_tokens(params, prompt)
    completion = _check_tokens(params, completion)
    g = np.asarray(per_token_loss_grads, dtype=np.float64)
    if g.shape != (len(completion),):
        raise ValueError(f"need one loss gradient per completion token, "
                         f"got {g.shape} for {len(completion)} tokens")
    if temperature <= 0:
        raise ValueError("temperature must be positive")

    C = params.context_size
    T = len(completion)
    ctx = _context_windows(params, prompt, completion)
    w1 = params.effective("W1")
    w2 = params.effective("W2")

    X = params.E[ctx].reshape(T, -1)
    H = np.tanh(X @ w1 + params.b1)
    logits = H @ w2 + params.b2
    P = np.exp(_log_softmax(logits / temperature))

    # dL/dlogits = g * (onehot(o_t) - softmax) / temperature
    dlogits = -P * (g / temperature)[:, None]
    dlogits[np.arange(T), completion] += g / temperature

    dW2_eff = H.T @ dlogits
    db2 = dlogits.sum(axis=0)
    dH = dlogits @ w2.T
    dA1 = dH * (1.0 - H * H)
    dW1_eff = X.T @ dA1
    db1 = dA1.sum(axis=0)

    if params.lora is not None:
        scale = params.lora_cfg.scale
        grads: dict[str, np.ndarray] = {}
        host_grads = {"W1": dW1_eff, "W2": dW2_eff}
        for name, (a, b) in params.lora.items():
            dhost = host_grads[name]
            grads[f"lora.{name}.A"] = scale * (b.T @ dhost)
            grads[f"lora.{name}.B"] = scale * (dhost @ a.T)
        return grads

    dX = dA1 @ w1.T
    dE = np.zeros_like(params.E)
    np.add.at(dE, ctx.ravel(), dX.reshape(T * C, params.embed_dim))
    return {"E": dE, "W1": dW1_eff, "b1": db1, "W2": dW2_eff, "b2": db2}


# ---------------------------------------------------------------------------
# Checkpoint container: deterministic bytes (no timestamps), exact float64.
# Layout: magic, u32 header length, UTF-8 JSON header, then the raw C-order
# float64 buffers in header order.
# ---------------------------------------------------------------------------

def save_checkpoint(params: PolicyParams, path, extra: dict | None = None) -> None:
    tensors: list[tuple[str, np.ndarray]] = list(params.base_tensors().items())
    if params.lora is not None:
        for name in sorted(params.lora):
            a, b = params.lora[name]
            tensors.append((f"lora.{name}.A", a))
            tensors.append((f"lora.{name}.B", b))
    header = {
        "format_version": 1,
        "context_size": params.context_size,
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in tensors],
        "lora_cfg": (
            {"rank": params.lora_cfg.rank, "alpha": params.lora_cfg.alpha,
             "targets": list(params.lora_cfg.targets)}
            if params.lora_cfg is not None else None),
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, t in tensors:
            f.write(np.ascontiguousarray(t, dtype=np.float64).tobytes())


def load_checkpoint(path) -> tuple[PolicyParams, dict]:
    """Returns (params, extra metadata dict)."""
    try:
        with open(path, "rb") as f:
            magic = f.read(len(CKPT_MAGIC))
            if magic != CKPT_MAGIC:
                raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
            (hlen,) = struct.unpack("<I", f.read(4))
            header = json.loads(f.read(hlen).decode("utf-8"))
            if header.get("format_version") != 1:
                raise CheckpointError(
                    f"{path}: unsupported checkpoint version {header.get('format_version')}")
            loaded: dict[str, np.ndarray] = {}
            for spec in header["tensors"]:
                shape = tuple(spec["shape"])
                count = int(np.prod(shape)) if shape else 1
                buf = f.read(count * 8)
                if len(buf) != count * 8:
                    raise CheckpointError(f"{path}: truncated tensor {spec['name']}")
                loaded[spec["name"]] = np.frombuffer(buf, dtype=np.float64).reshape(shape).copy()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc

    lora_cfg = None
    lora = None
    if header.get("lora_cfg"):
        c = header["lora_cfg"]
        lora_cfg = LoraConfig(rank=c["rank"], alpha=c["alpha"],
                              targets=tuple(c["targets"]))
        lora = {name: (loaded[f"lora.{name}.A"], loaded[f"lora.{name}.B"])
                for name in lora_cfg.targets}
    params = PolicyParams(
        E=loaded["E"], W1=loaded["W1"], b1=loaded["b1"],
        W2=loaded["W2"], b2=loaded["b2"],
        context_size=int(header["context_size"]),
        lora=lora, lora_cfg=lora_cfg)
    return params, header.get("extra", {})
