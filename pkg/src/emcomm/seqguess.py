"""The Sequence Guess game.

A mastermind knows a hidden target sequence over a small alphabet; a
guesser has to reproduce it, guided only by the mastermind's learned
messages (discrete symbol strings or continuous torus points -- the
meaning of either has to emerge in training). Each turn the guesser
guesses, then the mastermind replies with a message built from the target,
the guess just made, and the turn number. An exact guess, or exhausting
the turn budget, ends the game; the reward is the fraction of correctly
placed symbols minus a time penalty per elapsed turn.

Reported returns are shifted by a constant so that an optimal
communication protocol scores an expected 1; the shift never touches the
training signal.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch

MESSAGE_DISCRETE = "discrete"
MESSAGE_CONTINUOUS = "continuous"


@dataclass(frozen=True)
class SeqGuessConfig:
    alphabet_size: int = 3     # A, symbols in the target alphabet
    target_length: int = 3     # k, symbols per target
    max_turns: int = 3         # T, guesses before forced termination
    message_kind: str = MESSAGE_CONTINUOUS
    message_length: int = 3    # P, symbols per discrete message
    message_alphabet: int = 3  # alphabet of discrete messages
    message_dim: int = 3       # n, floats per continuous message
    time_penalty: float = 0.1
    initial_message_value: float = 0.0  # continuous initial constant; discrete uses symbol 0

    def __post_init__(self):
        if self.alphabet_size < 2:
            raise ValueError("alphabet_size must be >= 2")
        if self.target_length < 1:
            raise ValueError("target_length must be >= 1")
        if self.max_turns < 1:
            raise ValueError("max_turns must be >= 1")
        if self.message_kind not in (MESSAGE_DISCRETE, MESSAGE_CONTINUOUS):
            raise ValueError(f"unknown message_kind: {self.message_kind!r}")
        if self.message_kind == MESSAGE_DISCRETE and (self.message_length < 1 or self.message_alphabet < 2):
            raise ValueError("discrete messages need message_length >= 1 and message_alphabet >= 2")
        if self.message_kind == MESSAGE_CONTINUOUS and self.message_dim < 1:
            raise ValueError("continuous messages need message_dim >= 1")


@dataclass(frozen=True)
class SeqGuessState:
    target: tuple[int, ...]
    turn: int
    last_guess: tuple[int, ...] | None
    last_message: np.ndarray   # int symbols (discrete) or float coordinates (continuous)
    terminated: bool
    awaiting_reply: bool       # a non-terminal guess was made; the mastermind must reply


def initial_message(cfg: SeqGuessConfig) -> np.ndarray:
    if cfg.message_kind == MESSAGE_DISCRETE:
        return np.zeros(cfg.message_length, dtype=np.int64)
    return np.full(cfg.message_dim, cfg.initial_message_value, dtype=np.float64)


def reset(cfg: SeqGuessConfig, rng: np.random.Generator) -> SeqGuessState:
    """Fresh episode: target uniform over the A^k sequences, constant message."""
    target = tuple(int(s) for s in rng.integers(0, cfg.alphabet_size, cfg.target_length))
    return SeqGuessState(
        target=target,
        turn=0,
        last_guess=None,
        last_message=initial_message(cfg),
        terminated=False,
        awaiting_reply=False,
    )


def reward(cfg: SeqGuessConfig, turn: int, guess, target) -> float:
    """Terminal reward: matched-symbol fraction minus the per-turn penalty.

    `turn` is the 0-based index of the guess that ended the game, so an
    immediate exact guess earns 1.0 and a second-turn exact guess 0.9.
    """
    guess = np.asarray(guess)
    target = np.asarray(target)
    if guess.shape != target.shape:
        raise ValueError("guess and target lengths differ")
    return float(-cfg.time_penalty * turn + np.mean(guess == target))


def return_shift(cfg: SeqGuessConfig) -> float:
    """Additive reporting constant: 1 minus the optimal expected raw return.

    An optimal protocol guesses blind first (exact with probability
    A^-target_length) and is told the answer for the second turn.
    """
    q = float(cfg.alphabet_size) ** (-cfg.target_length)
    optimal = q * 1.0 + (1.0 - q) * (1.0 - cfg.time_penalty)
    return 1.0 - optimal


def shifted_return(raw: float, cfg: SeqGuessConfig) -> float:
    """Raw return moved onto the reporting scale where the optimum is 1."""
    return raw + return_shift(cfg)


def step_guess(cfg: SeqGuessConfig, state: SeqGuessState, guess) -> tuple[SeqGuessState, float | None]:
    """Apply the guesser's move; terminal on exact match or the last turn."""
    if state.terminated:
        raise RuntimeError("cannot step a terminated game")
    if state.awaiting_reply:
        raise RuntimeError("mastermind reply pending; call step_reply first")
    guess_t = tuple(int(g) for g in guess)
    if len(guess_t) != cfg.target_length:
        raise ValueError("guess length differs from target length")
    exact = guess_t == state.target
    if exact or state.turn >= cfg.max_turns - 1:
        r = reward(cfg, state.turn, guess_t, state.target)
        return replace(state, last_guess=guess_t, terminated=True), r
    return replace(state, last_guess=guess_t, awaiting_reply=True), None


def step_reply(cfg: SeqGuessConfig, state: SeqGuessState, message) -> SeqGuessState:
    """Store the mastermind's message and advance to the next turn."""
    if state.terminated:
        raise RuntimeError("cannot step a terminated game")
    if not state.awaiting_reply:
        raise RuntimeError("no reply expected; call step_guess first")
    msg = np.asarray(message)
    if cfg.message_kind == MESSAGE_DISCRETE:
        if msg.shape != (cfg.message_length,):
            raise ValueError("discrete message has the wrong length")
        msg = msg.astype(np.int64)
    else:
        if msg.shape != (cfg.message_dim,):
            raise ValueError("continuous message has the wrong dimension")
        msg = msg.astype(np.float64)
    return replace(state, turn=state.turn + 1, last_message=msg, awaiting_reply=False)


class VectorSeqGuess:
    """B independent Sequence Guess episodes advanced in lockstep.

    Finished episodes drop out of the computation entirely: callers fetch
    `live_rows()` and pass compact per-row tensors back in.
    """

    def __init__(self, cfg: SeqGuessConfig, batch_size: int, generator: torch.Generator):
        self.cfg = cfg
        self.batch = batch_size
        self.targets = torch.randint(
            0, cfg.alphabet_size, (batch_size, cfg.target_length), generator=generator
        )
        if cfg.message_kind == MESSAGE_DISCRETE:
            self.last_message = torch.zeros(batch_size, cfg.message_length, dtype=torch.long)
        else:
            self.last_message = torch.full(
                (batch_size, cfg.message_dim), float(cfg.initial_message_value)
            )
        self.turn = 0
        self.alive = torch.ones(batch_size, dtype=torch.bool)
        self.rewards = torch.zeros(batch_size)
        self.termination_turns = torch.zeros(batch_size, dtype=torch.long)
        self.exact = torch.zeros(batch_size, dtype=torch.bool)

    def live_rows(self) -> torch.Tensor:
        return self.alive.nonzero(as_tuple=False).squeeze(1)

    def step_guess_rows(self, rows: torch.Tensor, guesses: torch.Tensor) -> torch.Tensor:
        """Guesser move for the episodes in `rows` (guesses: [r, k]).

        Returns the per-row terminal mask ([r] bool). Termination: exact
        match, or this was the last allowed guess.
        """
        matches = guesses == self.targets[rows]
        exact = matches.all(dim=-1)
        frac = matches.float().mean(dim=-1)
        terminal = torch.ones_like(exact) if self.turn >= self.cfg.max_turns - 1 else exact
        if terminal.any():
            t_rows = rows[terminal]
            self.rewards[t_rows] = (-self.cfg.time_penalty * self.turn + frac)[terminal]
            self.termination_turns[t_rows] = self.turn
            self.exact[t_rows] = exact[terminal]
            self.alive[t_rows] = False
        return terminal

    def step_reply_rows(self, rows: torch.Tensor, messages: torch.Tensor) -> None:
        """Store replies for the still-live episodes in `rows`, advance turn."""
        self.last_message = self.last_message.index_copy(0, rows, messages)
        self.advance_turn()

    def advance_turn(self) -> None:
        """Move to the next turn without a reply (ablated-channel play)."""
        self.turn += 1
