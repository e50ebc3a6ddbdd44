"""Policy and baseline networks plus their sampling heads.

Negotiation uses a recurrent trunk whose LSTM state persists across the
turns of one episode (reset at episode start). Sequence Guess agents are
encoder-decoder stacks re-run fresh every turn, with the current turn
injected as a one-hot appended to the context vector.

Continuous actions are sampled from diagonal Gaussians and squashed
(sigmoid for proposals, tanh for messages); log-densities are taken at the
pre-squash sample with no Jacobian correction, so the learned policy
absorbs the squashing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

HIDDEN = 100
STD_FLOOR = 1e-6
_LOG_2PI = math.log(2.0 * math.pi)

CHECKPOINT_FORMAT = "emcomm-checkpoint"
CHECKPOINT_VERSION = 1


def init_linear_(layer: nn.Linear, generator: torch.Generator | None = None) -> None:
    bound = 1.0 / math.sqrt(layer.in_features)
    layer.weight.data.uniform_(-bound, bound, generator=generator)
    if layer.bias is not None:
        layer.bias.data.zero_()


def init_lstm_cell_(cell, generator: torch.Generator | None = None) -> None:
    """Uniform fan-in weights, zero biases except a forget-gate bias of 1.

    Works for both nn.LSTMCell and single-layer nn.LSTM (same layout).
    """
    hidden = cell.hidden_size
    for name, param in cell.named_parameters():
        if name.startswith("weight_ih"):
            param.data.uniform_(
                -1.0 / math.sqrt(cell.input_size), 1.0 / math.sqrt(cell.input_size),
                generator=generator,
            )
        elif name.startswith("weight_hh"):
            param.data.uniform_(
                -1.0 / math.sqrt(hidden), 1.0 / math.sqrt(hidden), generator=generator
            )
        elif name.startswith("bias_ih"):
            param.data.zero_()
            param.data[hidden : 2 * hidden] = 1.0
        elif name.startswith("bias_hh"):
            param.data.zero_()


@dataclass
class GaussianHead:
    """Diagonal Gaussian parameters; stds come sigmoid-squashed into (0,1)."""

    means: torch.Tensor
    stds: torch.Tensor

    def sample(self, generator: torch.Generator | None = None) -> torch.Tensor:
        eps = torch.randn(self.means.shape, generator=generator, dtype=self.means.dtype)
        return self.means + self.stds * eps

    def log_prob(self, value: torch.Tensor) -> torch.Tensor:
        """Log-density of the pre-squash value, summed over the last axis."""
        z = (value - self.means) / self.stds
        return (-0.5 * z * z - torch.log(self.stds) - 0.5 * _LOG_2PI).sum(dim=-1)


def split_gaussian(raw: torch.Tensor, dims: int) -> GaussianHead:
    means = raw[..., :dims]
    stds = torch.sigmoid(raw[..., dims : 2 * dims]).clamp(min=STD_FLOOR)
    return GaussianHead(means=means, stds=stds)


def bernoulli_log_prob(prob: torch.Tensor, value: torch.Tensor) -> torch.Tensor:
    p = prob.clamp(1e-7, 1.0 - 1e-7)
    return value * torch.log(p) + (1.0 - value) * torch.log1p(-p)


def sample_categorical(
    logits: torch.Tensor, generator: torch.Generator | None = None
) -> tuple[torch.Tensor, torch.Tensor]:
    """Sample per-position symbols from [B, P, A] logits.

    Returns (symbols [B, P], summed log-probability [B]).
    """
    batch, positions, alphabet = logits.shape
    probs = torch.softmax(logits.detach(), dim=-1).reshape(-1, alphabet)
    idx = torch.multinomial(probs, 1, generator=generator).reshape(batch, positions)
    logp = torch.log_softmax(logits, dim=-1).gather(-1, idx.unsqueeze(-1)).squeeze(-1)
    return idx, logp.sum(dim=-1)


@dataclass
class NegotiationPolicyOutput:
    proposal: GaussianHead     # 3 means + 3 stds
    message: GaussianHead      # 3 means + 3 stds
    accept_prob: torch.Tensor  # [B]


class NegotiationPolicyNet(nn.Module):
    """obs -> LSTM(100) -> dense(100, leaky ReLU) -> dense(13) -> heads."""

    def __init__(self, items: int, message_dim: int, generator: torch.Generator | None = None):
        super().__init__()
        self.items = items
        self.message_dim = message_dim
        obs_dim = items + message_dim + 1
        out_dim = 2 * (items + message_dim) + 1  # k+n means, k+n stds, one termination logit
        self.cell = nn.LSTMCell(obs_dim, HIDDEN)
        self.dense = nn.Linear(HIDDEN, HIDDEN)
        self.head = nn.Linear(HIDDEN, out_dim)
        init_lstm_cell_(self.cell, generator)
        init_linear_(self.dense, generator)
        init_linear_(self.head, generator)

    def initial_state(self, batch: int) -> tuple[torch.Tensor, torch.Tensor]:
        p = next(self.parameters())
        return (
            torch.zeros(batch, HIDDEN, dtype=p.dtype),
            torch.zeros(batch, HIDDEN, dtype=p.dtype),
        )

    def forward(self, obs, state):
        h, c = self.cell(obs, state)
        x = torch.nn.functional.leaky_relu(self.dense(h))
        raw = self.head(x)
        k, n = self.items, self.message_dim
        proposal = split_gaussian(raw[..., : 2 * k], k)
        message = split_gaussian(raw[..., 2 * k : 2 * k + 2 * n], n)
        accept_prob = torch.sigmoid(raw[..., -1])
        return NegotiationPolicyOutput(proposal, message, accept_prob), (h, c)


class NegotiationBaselineNet(nn.Module):
    """Centralized return predictor: same trunk, width-1 tanh head."""

    def __init__(self, items: int, message_dim: int, generator: torch.Generator | None = None):
        super().__init__()
        obs_dim = items + message_dim + 1
        self.cell = nn.LSTMCell(obs_dim, HIDDEN)
        self.dense = nn.Linear(HIDDEN, HIDDEN)
        self.head = nn.Linear(HIDDEN, 1)
        init_lstm_cell_(self.cell, generator)
        init_linear_(self.dense, generator)
        init_linear_(self.head, generator)

    def initial_state(self, batch: int) -> tuple[torch.Tensor, torch.Tensor]:
        p = next(self.parameters())
        return (
            torch.zeros(batch, HIDDEN, dtype=p.dtype),
            torch.zeros(batch, HIDDEN, dtype=p.dtype),
        )

    def forward(self, obs, state):
        h, c = self.cell(obs, state)
        x = torch.nn.functional.leaky_relu(self.dense(h))
        return torch.tanh(self.head(x)).squeeze(-1), (h, c)


def sample_negotiation_action(
    out: NegotiationPolicyOutput,
    generator: torch.Generator | None = None,
    reparameterized: bool = False,
):
    """Draw (proposal, message, accept) and score the two log-prob streams.

    Returns (proposal [B,k] in (0,1), message [B,n] in (-1,1),
    accept [B] bool, log_prob_action [B], log_prob_message [B]).
    The message keeps its pathwise gradient when `reparameterized`;
    otherwise it is detached at the sampling boundary.
    """
    y1 = out.proposal.sample(generator)
    y2 = out.message.sample(generator)
    u = torch.rand(out.accept_prob.shape, generator=generator, dtype=out.accept_prob.dtype)
    accept = u < out.accept_prob.detach()
    log_prob_action = out.proposal.log_prob(y1.detach()) + bernoulli_log_prob(
        out.accept_prob, accept.to(out.accept_prob.dtype)
    )
    log_prob_message = out.message.log_prob(y2.detach())
    proposal = torch.sigmoid(y1.detach())
    message = torch.tanh(y2) if reparameterized else torch.tanh(y2.detach())
    return proposal, message, accept, log_prob_action, log_prob_message


class SeqEncoder(nn.Module):
    """LSTM over the symbol positions of one input sequence."""

    def __init__(self, input_dim: int, generator: torch.Generator | None = None):
        super().__init__()
        self.lstm = nn.LSTM(input_dim, HIDDEN, batch_first=True)
        init_lstm_cell_(self.lstm, generator)

    def forward(self, steps: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Consume [B, L, input_dim]; returns the final (hidden, cell)."""
        _, (h, c) = self.lstm(steps)
        return h.squeeze(0), c.squeeze(0)


class SeqDecoder(nn.Module):
    """Zero-input LSTM unroll from a context vector, with per-step logits.

    The context (encoder summary plus the turn one-hot) seeds the hidden
    state, so the decoder width is HIDDEN + max_turns.
    """

    def __init__(self, max_turns: int, out_symbols: int, generator: torch.Generator | None = None):
        super().__init__()
        self.width = HIDDEN + max_turns
        self.lstm = nn.LSTM(1, self.width, batch_first=True)
        self.bridge = nn.Linear(self.width, HIDDEN)
        self.head = nn.Linear(HIDDEN, out_symbols)
        init_lstm_cell_(self.lstm, generator)
        init_linear_(self.bridge, generator)
        init_linear_(self.head, generator)

    def forward(self, context: torch.Tensor, cell_init: torch.Tensor | None, steps: int) -> torch.Tensor:
        batch = context.shape[0]
        h0 = context.unsqueeze(0)
        c0 = (cell_init if cell_init is not None else torch.zeros_like(context)).unsqueeze(0)
        x = torch.zeros(batch, steps, 1, dtype=context.dtype)
        out, _ = self.lstm(x, (h0, c0))          # [B, steps, width]
        return self.head(torch.relu(self.bridge(out)))  # [B, steps, out_symbols]


def one_hot(idx: torch.Tensor, width: int, dtype=torch.float32) -> torch.Tensor:
    return torch.nn.functional.one_hot(idx.long(), width).to(dtype)


def turn_one_hot(turn: int, batch: int, max_turns: int, dtype=torch.float32) -> torch.Tensor:
    out = torch.zeros(batch, max_turns, dtype=dtype)
    out[:, turn] = 1.0
    return out


class DMMastermindNet(nn.Module):
    """Encode (target, guess) pairs, decode a string of message symbols."""

    def __init__(self, alphabet: int, target_length: int, message_length: int,
                 message_alphabet: int, max_turns: int, generator: torch.Generator | None = None):
        super().__init__()
        self.alphabet = alphabet
        self.target_length = target_length
        self.message_length = message_length
        self.max_turns = max_turns
        self.encoder = SeqEncoder(2 * alphabet, generator)
        self.decoder = SeqDecoder(max_turns, message_alphabet, generator)

    def forward(self, target: torch.Tensor, guess: torch.Tensor, turn: int) -> torch.Tensor:
        dtype = next(self.parameters()).dtype
        t_oh = one_hot(target, self.alphabet, dtype)
        g_oh = one_hot(guess, self.alphabet, dtype)
        h, c = self.encoder(torch.cat([t_oh, g_oh], dim=-1))
        turn_oh = turn_one_hot(turn, target.shape[0], self.max_turns, dtype)
        context = torch.cat([h, turn_oh], dim=-1)
        cell_init = torch.cat([c, torch.zeros_like(turn_oh)], dim=-1)
        return self.decoder(context, cell_init, self.message_length)  # [B, P, A_msg]


class DMGuesserNet(nn.Module):
    """Encode the received message symbols, decode a guess string."""

    def __init__(self, alphabet: int, target_length: int, message_length: int,
                 message_alphabet: int, max_turns: int, generator: torch.Generator | None = None):
        super().__init__()
        self.message_alphabet = message_alphabet
        self.message_length = message_length
        self.target_length = target_length
        self.max_turns = max_turns
        self.encoder = SeqEncoder(message_alphabet, generator)
        self.decoder = SeqDecoder(max_turns, alphabet, generator)

    def forward(self, message: torch.Tensor, turn: int) -> torch.Tensor:
        dtype = next(self.parameters()).dtype
        m_oh = one_hot(message, self.message_alphabet, dtype)
        h, c = self.encoder(m_oh)
        turn_oh = turn_one_hot(turn, message.shape[0], self.max_turns, dtype)
        context = torch.cat([h, turn_oh], dim=-1)
        cell_init = torch.cat([c, torch.zeros_like(turn_oh)], dim=-1)
        return self.decoder(context, cell_init, self.target_length)  # [B, k, A]


class CMMastermindNet(nn.Module):
    """Encoder-only mastermind emitting a Gaussian head over torus points."""

    def __init__(self, alphabet: int, target_length: int, message_dim: int,
                 max_turns: int, generator: torch.Generator | None = None):
        super().__init__()
        self.alphabet = alphabet
        self.target_length = target_length
        self.message_dim = message_dim
        self.max_turns = max_turns
        self.encoder = SeqEncoder(2 * alphabet, generator)
        self.dense = nn.Linear(HIDDEN + max_turns, HIDDEN)
        self.head = nn.Linear(HIDDEN, 2 * message_dim)
        init_linear_(self.dense, generator)
        init_linear_(self.head, generator)

    def forward(self, target: torch.Tensor, guess: torch.Tensor, turn: int) -> GaussianHead:
        dtype = next(self.parameters()).dtype
        t_oh = one_hot(target, self.alphabet, dtype)
        g_oh = one_hot(guess, self.alphabet, dtype)
        h, _ = self.encoder(torch.cat([t_oh, g_oh], dim=-1))
        turn_oh = turn_one_hot(turn, target.shape[0], self.max_turns, dtype)
        x = torch.relu(self.dense(torch.cat([h, turn_oh], dim=-1)))
        return split_gaussian(self.head(x), self.message_dim)


class CMGuesserNet(nn.Module):
    """Decoder-only guesser fed a dense embedding of the continuous message."""

    def __init__(self, alphabet: int, target_length: int, message_dim: int,
                 max_turns: int, generator: torch.Generator | None = None):
        super().__init__()
        self.target_length = target_length
        self.embed = nn.Linear(message_dim, HIDDEN)
        self.decoder = SeqDecoder(max_turns, alphabet, generator)
        self.max_turns = max_turns
        init_linear_(self.embed, generator)

    def forward(self, message: torch.Tensor, turn: int) -> torch.Tensor:
        dtype = next(self.parameters()).dtype
        emb = self.embed(message.to(dtype))
        turn_oh = turn_one_hot(turn, message.shape[0], self.max_turns, dtype)
        context = torch.cat([emb, turn_oh], dim=-1)
        return self.decoder(context, None, self.target_length)  # [B, k, A]


def sample_continuous_message(
    head: GaussianHead, generator: torch.Generator | None = None, reparameterized: bool = False
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Returns (message in (-1,1)^n, log_prob [B], pre-noise means tanh(mu))."""
    y = head.sample(generator)
    log_prob = head.log_prob(y.detach())
    message = torch.tanh(y) if reparameterized else torch.tanh(y.detach())
    return message, log_prob, torch.tanh(head.means)


def save_checkpoint(path, modules: dict[str, nn.Module], config: dict, iteration: int) -> None:
    """Self-describing parameter container; round-trips bit-exactly."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config,
        "iteration": int(iteration),
        "params": {name: mod.state_dict() for name, mod in modules.items()},
        "shapes": {
            name: {k: list(v.shape) for k, v in mod.state_dict().items()}
            for name, mod in modules.items()
        },
    }
    torch.save(payload, path)


def load_checkpoint(path) -> dict:
    payload = torch.load(path, weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not an emcomm checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {payload.get('version')!r}")
    return payload


def restore_modules(payload: dict, modules: dict[str, nn.Module]) -> None:
    for name, mod in modules.items():
        mod.load_state_dict(payload["params"][name])
