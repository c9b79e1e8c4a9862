"""Autoregressive GRU policy over the trace vocabulary.

Parameters live in one flat float64 vector with named views (descriptor-defined
slot order), which keeps optimizers, checkpoints, and finite-difference tests
trivial. The same forward math serves three callers:

  - bind(..., requires_grad=True) + step_hidden/step_logits builds the autodiff
    graph for trainers,
  - bind(..., requires_grad=False) runs the identical code tape-free for
    sampling, greedy decoding, and log-prob queries.

Scoring convention: for a sequence prompt+out, step t consumes token t and
predicts token t+1, so completion tokens are predicted at steps
len(prompt)-1 .. len(full)-2 and no begin-of-sequence token is needed (prompts
always end with <go>). Sampled rollouts record the policy's own temperature-1
log-probs of the drawn tokens; temperature only reshapes the proposal.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .errors import ConfigError, NumericsError, ParseError

CHECKPOINT_MAGIC = b"RCRLCKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PolicyDescriptor:
    vocab_size: int
    embedding_dim: int = 32
    hidden_dim: int = 64
    n_layers: int = 1
    cell: str = "gru"

    def validate(self) -> None:
        if self.cell != "gru":
            raise ConfigError(f"unsupported cell {self.cell!r} (only 'gru')")
        if min(self.vocab_size, self.embedding_dim, self.hidden_dim, self.n_layers) < 1:
            raise ConfigError("descriptor dims must be positive")

    def slots(self) -> list[tuple[str, tuple[int, ...]]]:
        """Named parameter blocks in flat-vector order."""
        v, e, h = self.vocab_size, self.embedding_dim, self.hidden_dim
        out: list[tuple[str, tuple[int, ...]]] = [("embedding", (v, e))]
        for layer in range(self.n_layers):
            in_d = e if layer == 0 else h
            out += [
                (f"layer{layer}.wx", (in_d, 3 * h)),   # fused z|r|c input weights
                (f"layer{layer}.wh_zr", (h, 2 * h)),   # fused z|r recurrent weights
                (f"layer{layer}.wh_c", (h, h)),        # candidate recurrent weights
                (f"layer{layer}.bias", (3 * h,)),
            ]
        out += [("out_w", (h, v)), ("out_b", (v,))]
        return out

    def param_count(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.slots())


def init_policy(desc: PolicyDescriptor, rng: np.random.Generator) -> np.ndarray:
    """Uniform fan-in init for weights, zeros for biases, slot order fixed."""
    desc.validate()
    flat = np.zeros(desc.param_count())
    for name, view in param_views(desc, flat).items():
        if name.endswith(("bias", "out_b")):
            continue
        fan_in = desc.embedding_dim if name == "embedding" else view.shape[0]
        bound = 1.0 / np.sqrt(fan_in)
        view[...] = rng.uniform(-bound, bound, view.shape)
    return flat


def param_views(desc: PolicyDescriptor, flat: np.ndarray) -> dict[str, np.ndarray]:
    if flat.shape != (desc.param_count(),):
        raise ConfigError(
            f"parameter vector has shape {flat.shape}, descriptor wants ({desc.param_count()},)"
        )
    views = {}
    offset = 0
    for name, shape in desc.slots():
        size = int(np.prod(shape))
        views[name] = flat[offset : offset + size].reshape(shape)
        offset += size
    return views


@dataclass
class Binding:
    """Parameter tensors for one forward graph (or a tape-free pass)."""

    desc: PolicyDescriptor
    tensors: dict[str, ag.Tensor]

    def flat_grad(self) -> np.ndarray:
        chunks = []
        for name, _ in self.desc.slots():
            t = self.tensors[name]
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            chunks.append(g.ravel())
        return np.concatenate(chunks)


def bind(desc: PolicyDescriptor, flat: np.ndarray, requires_grad: bool) -> Binding:
    tensors = {
        name: ag.Tensor(view, requires_grad=requires_grad)
        for name, view in param_views(desc, flat).items()
    }
    return Binding(desc, tensors)


def init_hidden(binding: Binding, batch: int) -> list[ag.Tensor]:
    h = binding.desc.hidden_dim
    return [ag.Tensor(np.zeros((batch, h))) for _ in range(binding.desc.n_layers)]


def step_hidden(binding: Binding, hidden: list[ag.Tensor], ids: np.ndarray) -> list[ag.Tensor]:
    """Advance every layer one step on a batch of token ids."""
    h_dim = binding.desc.hidden_dim
    x = ag.take_rows(binding.tensors["embedding"], ids)
    new_hidden = []
    for layer, h in enumerate(hidden):
        p = binding.tensors
        zrc_x = ag.add(ag.matmul(x, p[f"layer{layer}.wx"]), p[f"layer{layer}.bias"])
        zr_h = ag.matmul(h, p[f"layer{layer}.wh_zr"])
        z = ag.sigmoid(ag.add(ag.slice_cols(zrc_x, 0, h_dim), ag.slice_cols(zr_h, 0, h_dim)))
        r = ag.sigmoid(
            ag.add(ag.slice_cols(zrc_x, h_dim, 2 * h_dim), ag.slice_cols(zr_h, h_dim, 2 * h_dim))
        )
        c = ag.tanh(
            ag.add(
                ag.slice_cols(zrc_x, 2 * h_dim, 3 * h_dim),
                ag.matmul(ag.mul(r, h), p[f"layer{layer}.wh_c"]),
            )
        )
        h_new = ag.add(h, ag.mul(z, ag.sub(c, h)))  # (1-z)*h + z*c
        new_hidden.append(h_new)
        x = h_new
    return new_hidden


def step_logits(binding: Binding, hidden: list[ag.Tensor]) -> ag.Tensor:
    return ag.add(ag.matmul(hidden[-1], binding.tensors["out_w"]), binding.tensors["out_b"])


@dataclass(frozen=True)
class Rollout:
    prompt_ids: tuple[int, ...]
    token_ids: tuple[int, ...]  # generated tokens, including <eos> when emitted
    logprobs: np.ndarray  # temperature-1 log-probs of token_ids, same length


def _prompt_states(binding: Binding, prompts: list[list[int]], pad_id: int = 0) -> list[np.ndarray]:
    """Hidden state of each row just before its final prompt token (right-padded)."""
    n = len(prompts)
    lens = np.asarray([len(p) for p in prompts])
    if n == 0 or lens.min() < 1:
        raise ConfigError("need at least one non-empty prompt")
    t_max = int(lens.max())
    mat = np.full((n, t_max), pad_id)
    for i, p in enumerate(prompts):
        mat[i, : len(p)] = p
    hidden = init_hidden(binding, n)
    boundary = [np.zeros((n, binding.desc.hidden_dim)) for _ in range(binding.desc.n_layers)]
    for t in range(t_max):
        at_boundary = lens == t + 1
        if at_boundary.any():
            for layer in range(binding.desc.n_layers):
                boundary[layer] = np.where(at_boundary[:, None], hidden[layer].data, boundary[layer])
        if t == t_max - 1:
            break
        hidden = step_hidden(binding, hidden, mat[:, t])
    return boundary


def _generate(
    binding: Binding,
    states: list[np.ndarray],
    last: np.ndarray,
    eos_id: int,
    max_new_tokens: int,
    rng: np.random.Generator | None,
    temperature: float,
    greedy: bool,
    explore_eps: float = 0.0,
) -> tuple[list[list[int]], list[list[float]]]:
    n = last.shape[0]
    hidden = [ag.Tensor(s) for s in states]
    tokens: list[list[int]] = [[] for _ in range(n)]
    logprobs: list[list[float]] = [[] for _ in range(n)]
    alive = np.ones(n, dtype=bool)
    for _ in range(max_new_tokens):
        hidden = step_hidden(binding, hidden, last)
        logits = step_logits(binding, hidden).data
        logp1 = logits - logits.max(axis=1, keepdims=True)
        logp1 = logp1 - np.log(np.exp(logp1).sum(axis=1, keepdims=True))
        if greedy:
            chosen = logits.argmax(axis=1)
        else:
            scaled = logits / temperature
            scaled -= scaled.max(axis=1, keepdims=True)
            probs = np.exp(scaled)
            probs /= probs.sum(axis=1, keepdims=True)
            if explore_eps > 0.0:
                # uniform floor on the behavior distribution only: recorded
                # logprobs stay the policy's own, so a trained-down token can
                # still be rediscovered no matter how far the tail has decayed
                probs = (1.0 - explore_eps) * probs + explore_eps / probs.shape[1]
            u = rng.random(n)  # one draw per row per step keeps runs replayable
            chosen = np.minimum(
                (u[:, None] >= np.cumsum(probs, axis=1)).sum(axis=1), logits.shape[1] - 1
            )
        for i in np.flatnonzero(alive):
            tokens[i].append(int(chosen[i]))
            logprobs[i].append(float(logp1[i, chosen[i]]))
            if chosen[i] == eos_id:
                alive[i] = False
        if not alive.any():
            break
        last = np.where(alive, chosen, 0)
    return tokens, logprobs


def sample_prompt_batch(
    desc: PolicyDescriptor,
    flat: np.ndarray,
    prompts: list[list[int]],
    group_size: int,
    eos_id: int,
    max_new_tokens: int,
    rng: np.random.Generator | None,
    temperature: float = 1.0,
    greedy: bool = False,
    explore_eps: float = 0.0,
) -> list[list[Rollout]]:
    """group_size rollouts per prompt, all generated in one padded batch."""
    binding = bind(desc, flat, requires_grad=False)
    states = [np.repeat(s, group_size, axis=0) for s in _prompt_states(binding, prompts)]
    last = np.repeat(np.asarray([p[-1] for p in prompts]), group_size)
    tokens, logprobs = _generate(
        binding, states, last, eos_id, max_new_tokens, rng, temperature, greedy, explore_eps
    )
    out = []
    for i, prompt in enumerate(prompts):
        rows = range(i * group_size, (i + 1) * group_size)
        out.append(
            [Rollout(tuple(prompt), tuple(tokens[r]), np.asarray(logprobs[r])) for r in rows]
        )
    return out


def sample_group(
    desc, flat, prompt_ids, group_size, eos_id, max_new_tokens, rng, temperature=1.0, greedy=False
) -> list[Rollout]:
    return sample_prompt_batch(
        desc, flat, [list(prompt_ids)], group_size, eos_id, max_new_tokens, rng, temperature, greedy
    )[0]


def sample(
    desc, flat, prompt_ids, eos_id, max_new_tokens, rng, temperature=1.0, greedy=False
) -> Rollout:
    return sample_group(
        desc, flat, prompt_ids, 1, eos_id, max_new_tokens, rng, temperature, greedy
    )[0]


def greedy_decode_batch(
    desc: PolicyDescriptor,
    flat: np.ndarray,
    prompts: list[list[int]],
    eos_id: int,
    max_new_tokens: int,
    pad_id: int = 0,
) -> list[list[int]]:
    """Argmax decode many different prompts at once."""
    if not prompts:
        return []
    groups = sample_prompt_batch(
        desc, flat, prompts, 1, eos_id, max_new_tokens, rng=None, greedy=True
    )
    return [list(g[0].token_ids) for g in groups]


def log_probs(desc: PolicyDescriptor, flat: np.ndarray, prompt_ids, out_ids) -> np.ndarray:
    """Temperature-1 log-probs the policy assigns to out_ids after prompt_ids."""
    full = list(prompt_ids) + list(out_ids)
    if len(prompt_ids) < 1 or not out_ids:
        raise ConfigError("need a non-empty prompt and output")
    binding = bind(desc, flat, requires_grad=False)
    hidden = init_hidden(binding, 1)
    start = len(prompt_ids) - 1
    for t in range(start):
        hidden = step_hidden(binding, hidden, np.asarray([full[t]]))
    lps = []
    for t in range(start, len(full) - 1):
        hidden = step_hidden(binding, hidden, np.asarray([full[t]]))
        logits = step_logits(binding, hidden).data[0]
        shifted = logits - logits.max()
        lps.append(shifted[full[t + 1]] - np.log(np.exp(shifted).sum()))
    return np.asarray(lps)


# --- checkpoints ------------------------------------------------------------


def save_checkpoint(
    path: str | Path,
    desc: PolicyDescriptor,
    flat: np.ndarray,
    vocab_sha256: str,
    optimizer: dict | None = None,
    trainer: dict | None = None,
) -> None:
    """Binary layout: magic | u32 version | u64 header_len | header JSON | arrays.

    Arrays are raw little-endian float64 in header-declared order, so reloads
    are bit-exact.
    """
    arrays: list[np.ndarray] = [np.ascontiguousarray(flat, dtype="<f8")]
    array_names = ["params"]
    opt_header = None
    if optimizer is not None:
        opt_header = {k: v for k, v in optimizer.items() if not isinstance(v, np.ndarray)}
        opt_header["arrays"] = []
        for key in sorted(k for k, v in optimizer.items() if isinstance(v, np.ndarray)):
            opt_header["arrays"].append(key)
            arrays.append(np.ascontiguousarray(optimizer[key], dtype="<f8"))
            array_names.append(f"optimizer.{key}")
    header = {
        "format_version": CHECKPOINT_VERSION,
        "descriptor": asdict(desc),
        "vocab_sha256": vocab_sha256,
        "param_count": int(flat.size),
        "array_order": array_names,
        "optimizer": opt_header,
        "trainer": trainer,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for arr in arrays:
            fh.write(arr.tobytes())


@dataclass
class Checkpoint:
    desc: PolicyDescriptor
    params: np.ndarray
    vocab_sha256: str
    optimizer: dict | None
    trainer: dict | None


def load_checkpoint(path: str | Path, expect_vocab_sha256: str | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ParseError(f"{path} is not a policy checkpoint (bad magic)")
    off = len(CHECKPOINT_MAGIC)
    version, header_len = struct.unpack_from("<IQ", raw, off)
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}")
    off += struct.calcsize("<IQ")
    try:
        header = json.loads(raw[off : off + header_len])
        desc = PolicyDescriptor(**header["descriptor"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"corrupt checkpoint header ({exc!r})") from exc
    desc.validate()
    if header["param_count"] != desc.param_count():
        raise ParseError("checkpoint param_count disagrees with its descriptor")
    if expect_vocab_sha256 is not None and header["vocab_sha256"] != expect_vocab_sha256:
        raise ConfigError(
            "checkpoint was trained against a different vocabulary "
            f"({header['vocab_sha256'][:12]}.. != {expect_vocab_sha256[:12]}..)"
        )
    off += header_len
    sizes = {"params": desc.param_count()}
    opt = header.get("optimizer")
    if opt:
        for key in opt["arrays"]:
            sizes[f"optimizer.{key}"] = desc.param_count()
    arrays = {}
    for name in header["array_order"]:
        n = sizes[name]
        end = off + 8 * n
        if end > len(raw):
            raise ParseError("checkpoint truncated")
        arrays[name] = np.frombuffer(raw[off:end], dtype="<f8").astype(np.float64)
        off += 8 * n
    if off != len(raw):
        raise ParseError("trailing bytes after checkpoint arrays")
    optimizer = None
    if opt:
        optimizer = {k: v for k, v in opt.items() if k != "arrays"}
        for key in opt["arrays"]:
            optimizer[key] = arrays[f"optimizer.{key}"]
    params = arrays["params"]
    if not np.isfinite(params).all():
        raise NumericsError("checkpoint parameters contain non-finite values")
    return Checkpoint(desc, params, header["vocab_sha256"], optimizer, header.get("trainer"))
