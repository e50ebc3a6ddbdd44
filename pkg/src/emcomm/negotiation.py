"""The Negotiation game.

Two agents, A and B, split k divisible item types. Each agent only sees its
own utility vector, drawn uniformly on (0,1)^k at reset. Play alternates:
the active agent makes a partitioning proposal in (0,1)^k, sends a message,
and may accept the partner's standing proposal. Acceptance ends the game
with a shared reward normalised so that the best achievable split scores 1;
accepting on the very first move (before anything could have been
communicated) is ignored. Running out of turns is punished with -1.

The scalar API below is the reference implementation: pure transitions on
immutable states. `VectorNegotiation` runs B independent episodes in
lockstep on torch tensors for training throughput; tests pin it to the
scalar semantics.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch

AGENT_A = "A"
AGENT_B = "B"

OUTCOME_IN_PROGRESS = "in-progress"
OUTCOME_AGREEMENT = "agreement"
OUTCOME_TIMEOUT = "timeout"


@dataclass(frozen=True)
class NegotiationConfig:
    items: int = 3             # k, number of item types
    message_dim: int = 3       # n, floats per message
    max_turns: int = 6         # T, total moves before timeout
    punishment: float = -1.0   # reward when no agreement is reached
    initial_message_value: float = 0.0  # constant filling the first observation's message slot

    def __post_init__(self):
        if self.items < 1:
            raise ValueError("items must be >= 1")
        if self.message_dim < 1:
            raise ValueError("message_dim must be >= 1")
        if self.max_turns < 2:
            raise ValueError("max_turns must be >= 2")


@dataclass(frozen=True)
class NegotiationState:
    u_a: np.ndarray
    u_b: np.ndarray
    turn: int
    active_agent: str
    last_proposal: np.ndarray | None
    last_message: np.ndarray
    terminated: bool
    outcome: str


@dataclass(frozen=True)
class NegotiationAction:
    proposal: np.ndarray       # fractions the mover keeps, in (0,1)^k
    message: np.ndarray        # torus point in (-1,1)^n
    accept: bool


def _draw_open_unit(rng: np.random.Generator, size: int) -> np.ndarray:
    """Uniform on the open interval (0,1); exact endpoints are redrawn."""
    out = rng.uniform(0.0, 1.0, size)
    while np.any(out <= 0.0) or np.any(out >= 1.0):
        bad = (out <= 0.0) | (out >= 1.0)
        out[bad] = rng.uniform(0.0, 1.0, int(bad.sum()))
    return out


def reset(cfg: NegotiationConfig, rng: np.random.Generator) -> NegotiationState:
    """Fresh episode: i.i.d. uniform hidden utilities, A to move at turn 0."""
    return NegotiationState(
        u_a=_draw_open_unit(rng, cfg.items),
        u_b=_draw_open_unit(rng, cfg.items),
        turn=0,
        active_agent=AGENT_A,
        last_proposal=None,
        last_message=np.full(cfg.message_dim, cfg.initial_message_value, dtype=np.float64),
        terminated=False,
        outcome=OUTCOME_IN_PROGRESS,
    )


def individual_reward(proposal: np.ndarray, utilities: np.ndarray) -> float:
    """Utility-weighted value of the kept fractions: sum_i p_i * u_i."""
    return float(np.dot(np.asarray(proposal, dtype=np.float64), np.asarray(utilities, dtype=np.float64)))


def shared_reward(p_proposer: np.ndarray, u_proposer: np.ndarray, u_acceptor: np.ndarray) -> float:
    """Normalised joint reward of an accepted proposal.

    The acceptor receives the complement 1 - p of every item. Dividing by
    r_max = sum_i max(u_proposer_i, u_acceptor_i) makes the best achievable
    split worth exactly 1 regardless of the drawn utilities.
    """
    p = np.asarray(p_proposer, dtype=np.float64)
    r_prop = individual_reward(p, u_proposer)
    r_acc = individual_reward(1.0 - p, u_acceptor)
    r_max = float(np.sum(np.maximum(u_proposer, u_acceptor)))
    return (r_prop + r_acc) / r_max


def step(
    cfg: NegotiationConfig, state: NegotiationState, action: NegotiationAction
) -> tuple[NegotiationState, float | None]:
    """Advance one move. Returns (next_state, reward), reward None while live.

    Accepting ends the game with the partner's standing proposal (acceptance
    on turn 0 is ignored; the proposal and message of that move still
    count). Reaching max_turns moves without agreement pays the punishment.
    """
    if state.terminated:
        raise RuntimeError("cannot step a terminated negotiation")
    if action.accept and state.turn >= 1:
        u_active = state.u_a if state.active_agent == AGENT_A else state.u_b
        u_partner = state.u_b if state.active_agent == AGENT_A else state.u_a
        reward = shared_reward(state.last_proposal, u_partner, u_active)
        return replace(state, terminated=True, outcome=OUTCOME_AGREEMENT), reward
    next_state = replace(
        state,
        turn=state.turn + 1,
        active_agent=AGENT_B if state.active_agent == AGENT_A else AGENT_A,
        last_proposal=np.asarray(action.proposal, dtype=np.float64),
        last_message=np.asarray(action.message, dtype=np.float64),
    )
    if next_state.turn >= cfg.max_turns:
        return replace(next_state, terminated=True, outcome=OUTCOME_TIMEOUT), cfg.punishment
    return next_state, None


def observation(cfg: NegotiationConfig, state: NegotiationState, agent: str) -> np.ndarray:
    """What `agent` sees before moving: [own utilities, last message, t/T].

    Never includes the partner's utilities or the raw standing proposal.
    """
    own = state.u_a if agent == AGENT_A else state.u_b
    return np.concatenate([own, state.last_message, [state.turn / cfg.max_turns]])


class VectorNegotiation:
    """B independent Negotiation episodes advanced in lockstep.

    Bookkeeping lives in torch tensors; the reward arithmetic mirrors
    `shared_reward` exactly. Finished episodes drop out of the
    computation: callers fetch `live_rows()` and act on compact tensors.
    """

    def __init__(self, cfg: NegotiationConfig, batch_size: int, generator: torch.Generator):
        self.cfg = cfg
        self.batch = batch_size
        k = cfg.items
        self.utilities = torch.rand(2, batch_size, k, generator=generator, dtype=torch.float32)
        # exact 0.0 draws have measure ~2^-24 per entry; nudge them inside the open interval
        self.utilities[self.utilities == 0.0] = 0.5
        self.r_max = torch.maximum(self.utilities[0], self.utilities[1]).sum(dim=-1)
        self.last_proposal = torch.zeros(batch_size, k)
        self.last_message = torch.full((batch_size, cfg.message_dim), float(cfg.initial_message_value))
        self.turn = 0
        self.alive = torch.ones(batch_size, dtype=torch.bool)
        self.rewards = torch.zeros(batch_size)
        self.termination_turns = torch.full((batch_size,), cfg.max_turns - 1, dtype=torch.long)
        self.agreed = torch.zeros(batch_size, dtype=torch.bool)

    @property
    def active_agent(self) -> int:
        return self.turn % 2

    def live_rows(self) -> torch.Tensor:
        return self.alive.nonzero(as_tuple=False).squeeze(1)

    def observations_rows(self, rows: torch.Tensor, message_override: torch.Tensor | None = None) -> torch.Tensor:
        """[r, k + n + 1] inputs for the active agent over the live rows.

        `message_override` substitutes the stored messages, which lets the
        trainer ablate the channel.
        """
        msg = self.last_message[rows] if message_override is None else message_override
        frac = torch.full((rows.shape[0], 1), self.turn / self.cfg.max_turns)
        return torch.cat([self.utilities[self.active_agent][rows], msg, frac], dim=1)

    def step_rows(
        self, rows: torch.Tensor, proposals: torch.Tensor, messages: torch.Tensor, accepts: torch.Tensor
    ) -> torch.Tensor:
        """One batched move over `rows`; returns the per-row continue mask.

        Accepting rows terminate with the shared reward of the partner's
        standing proposal (ignored on turn 0). Continuing rows record their
        proposal and message. Hitting the turn limit punishes all survivors.
        """
        if self.turn >= 1:
            accepting = accepts.bool()
        else:
            accepting = torch.zeros_like(accepts, dtype=torch.bool)
        if accepting.any():
            a_rows = rows[accepting]
            u_active = self.utilities[self.active_agent][a_rows]
            u_partner = self.utilities[1 - self.active_agent][a_rows]
            p = self.last_proposal[a_rows]
            r = ((p * u_partner).sum(-1) + ((1.0 - p) * u_active).sum(-1)) / self.r_max[a_rows]
            self.rewards[a_rows] = r
            self.termination_turns[a_rows] = self.turn
            self.agreed[a_rows] = True
            self.alive[a_rows] = False
        cont = ~accepting
        c_rows = rows[cont]
        self.last_proposal = self.last_proposal.index_copy(0, c_rows, proposals[cont].detach())
        self.last_message = self.last_message.index_copy(0, c_rows, messages[cont])
        self.turn += 1
        if self.turn >= self.cfg.max_turns and bool(self.alive.any()):
            self.rewards[self.alive] = self.cfg.punishment
            self.termination_turns[self.alive] = self.cfg.max_turns - 1
            self.alive = torch.zeros_like(self.alive)
        return cont
