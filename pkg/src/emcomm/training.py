"""Episodic REINFORCE with baselines for both games.

One trainer instance owns its networks, optimizers, and random streams.
Each iteration plays a mini-batch of episodes in lockstep, assembles the
policy-gradient losses (action stream and message stream kept separate),
adds the enabled positive-signaling bias, and takes one optimizer step.
Finished episodes drop out of the per-turn computation; every logged
tensor is compact, carrying the episode indices it covers.

Interagent gradients (IG) are implemented with reparameterized continuous
messages: the sampled message keeps its pathwise gradient and the two
agents share a single optimizer. Without IG every message is detached at
the channel boundary and each agent owns its optimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch

from . import nets, signaling
from .negotiation import NegotiationConfig, VectorNegotiation
from .seqguess import (
    MESSAGE_CONTINUOUS,
    MESSAGE_DISCRETE,
    SeqGuessConfig,
    VectorSeqGuess,
    return_shift,
)

GAME_NEGOTIATION = "negotiation"
GAME_SEQGUESS = "seqguess"


class TrainingDiverged(RuntimeError):
    """A non-finite loss or return was produced; the run is aborted."""


@dataclass
class TrainerConfig:
    """Hyperparameters of one training run (defaults fit Negotiation)."""

    rc_enabled: bool = True
    ps_enabled: bool = True
    interagent_gradients: bool = False
    channel_enabled: bool = True
    batch_size: int = 2048
    iterations: int = 50_000
    lr: float = 1e-3
    lr_after_threshold: float = 1e-4
    threshold_return: float = 0.9
    use_lr_schedule: bool = True          # latched drop; Negotiation only
    clip_norm: float | None = 1.0         # None disables clipping
    weight_decay: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    lambda1: float = 250.0
    lambda2: float = 10.0
    lambda_ib: float = 1.0
    lambda_ps: float = 1.0
    h_target_ratio: float = 0.1           # H_target = ratio * ln(message alphabet)
    baseline_decay: float = 0.7           # moving-average baseline (Sequence Guess)
    shared_parameters: bool = False       # Negotiation agents share one network

    def __post_init__(self):
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size must be >= 1 and iterations >= 0")
        for name in ("lr", "lr_after_threshold", "lambda1", "lambda2", "lambda_ps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lambda_ib < 0 or self.weight_decay < 0:
            raise ValueError("lambda_ib and weight_decay must be nonnegative")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive when set")
        if not 0.0 <= self.h_target_ratio <= 1.0:
            raise ValueError("h_target_ratio must lie in [0, 1]")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ValueError("baseline_decay must lie in [0, 1)")
        if not self.channel_enabled and (self.rc_enabled or self.ps_enabled):
            raise ValueError("rc/ps require a communication channel")


def negotiation_trainer_defaults(**overrides) -> TrainerConfig:
    base = dict(lambda1=250.0, lambda2=10.0, clip_norm=1.0, iterations=50_000,
                weight_decay=1e-4, use_lr_schedule=True)
    base.update(overrides)
    return TrainerConfig(**base)


def seqguess_trainer_defaults(message_kind: str = MESSAGE_CONTINUOUS, **overrides) -> TrainerConfig:
    base = dict(lambda1=100.0, lambda2=10.0, clip_norm=None, iterations=100_000,
                weight_decay=1e-4 if message_kind == MESSAGE_CONTINUOUS else 0.0,
                use_lr_schedule=False)
    base.update(overrides)
    return TrainerConfig(**base)


@dataclass
class TurnLog:
    """Compact per-turn slice of an episode batch.

    `rows` indexes the episodes that took this turn's action; the message
    fields cover `message_rows`, the subset whose message was actually
    transmitted (an accepted or final move sends nothing anywhere).
    """

    agent: str
    turn: int
    rows: torch.Tensor | None = None             # [r] long
    log_prob_action: torch.Tensor | None = None  # [r]
    baseline_pred: torch.Tensor | None = None    # [r]
    message_rows: torch.Tensor | None = None     # [m] long
    log_prob_message: torch.Tensor | None = None # [m]
    message_means: torch.Tensor | None = None    # [m, n] pre-noise tanh(mu)
    message_probs: torch.Tensor | None = None    # [m, P, A]


@dataclass
class EpisodeBatch:
    """Everything one rollout produced that the losses need."""

    rewards: torch.Tensor            # [B] terminal rewards, one per episode
    termination_turns: torch.Tensor  # [B] 0-based index of the final move
    turns: list[TurnLog] = field(default_factory=list)
    agreed: torch.Tensor | None = None   # Negotiation: episodes that ended in agreement
    exact: torch.Tensor | None = None    # Sequence Guess: episodes guessed exactly


def reinforce_loss(batch: EpisodeBatch, baseline_values) -> tuple[torch.Tensor, torch.Tensor]:
    """Score-function losses for the action and message streams.

    `baseline_values` aligns with batch.turns: each entry is a scalar or a
    detached full-batch [B] tensor. The advantage (R - b) is a constant to
    autograd. Each loss is the negative mean over all valid
    (episode, turn) entries of advantage times log-probability.
    """
    action_sum = batch.rewards.new_zeros(())
    action_count = 0
    msg_sum = batch.rewards.new_zeros(())
    msg_count = 0
    for log, base in zip(batch.turns, baseline_values):
        base_t = base if torch.is_tensor(base) else torch.as_tensor(float(base), dtype=batch.rewards.dtype)
        adv_full = (batch.rewards - base_t).detach()
        if log.log_prob_action is not None and log.rows is not None and log.rows.numel() > 0:
            action_sum = action_sum + (adv_full[log.rows] * log.log_prob_action).sum()
            action_count += int(log.rows.numel())
        if (
            log.log_prob_message is not None
            and log.message_rows is not None
            and log.message_rows.numel() > 0
        ):
            msg_sum = msg_sum + (adv_full[log.message_rows] * log.log_prob_message).sum()
            msg_count += int(log.message_rows.numel())
    action_loss = -action_sum / action_count if action_count > 0 else action_sum
    message_rc_loss = -msg_sum / msg_count if msg_count > 0 else msg_sum
    return action_loss, message_rc_loss


def ps_loss_from_batch(
    batch: EpisodeBatch,
    repulsion: signaling.RepulsionParams | None,
    discrete: signaling.DiscretePSParams | None,
) -> torch.Tensor:
    """Positive-signaling bias averaged uniformly over message-emitting turns."""
    terms = []
    for log in batch.turns:
        if log.message_means is not None and log.message_means.shape[0] > 0:
            terms.append(signaling.continuous_ps_loss(log.message_means, repulsion))
        elif log.message_probs is not None and log.message_probs.shape[0] > 0:
            cat = signaling.CategoricalPolicyBatch(log.message_probs)
            terms.append(signaling.discrete_ps_loss(cat, discrete))
    if not terms:
        return batch.rewards.new_zeros(())
    return torch.stack(terms).mean()


def moving_baseline_update(baseline: float, batch_return: float, decay: float = 0.7) -> float:
    """Exponential moving average: decay*b + (1-decay)*G."""
    return decay * baseline + (1.0 - decay) * batch_return


class LRSchedule:
    """Latched learning-rate drop once the mean batch return hits a threshold."""

    def __init__(self, cfg: TrainerConfig):
        self.cfg = cfg
        self.dropped = False

    def update(self, mean_return: float) -> float:
        if self.cfg.use_lr_schedule and not self.dropped and mean_return >= self.cfg.threshold_return:
            self.dropped = True
        return self.cfg.lr_after_threshold if self.dropped else self.cfg.lr


@dataclass
class IterationStats:
    iteration: int
    mean_return: float
    shifted_return: float | None
    action_loss: float
    message_rc_loss: float | None
    ps_loss: float | None
    baseline_loss: float | None
    grad_norm: float
    lr: float
    timeout_rate: float | None = None
    exact_rate: float | None = None


def _scalar(value) -> float:
    return float(value.detach()) if torch.is_tensor(value) else float(value)


def _generators(seed: int) -> tuple[torch.Generator, torch.Generator]:
    words = np.random.SeedSequence(seed).generate_state(2, dtype=np.uint64)
    init_gen = torch.Generator().manual_seed(int(words[0]))
    rollout_gen = torch.Generator().manual_seed(int(words[1]))
    return init_gen, rollout_gen


def _global_grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(p.grad.detach().pow(2).sum())
    return math.sqrt(total)


class _TrainerBase:
    """Shared optimizer/stat plumbing; subclasses supply rollout and losses."""

    def __init__(self, cfg: TrainerConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        self.iteration = 0
        self.init_gen, self.gen = _generators(seed)
        self.modules: dict[str, torch.nn.Module] = {}
        self.optimizers: list[torch.optim.Optimizer] = []

    def _make_optimizer(self, params) -> torch.optim.Optimizer:
        opt = torch.optim.AdamW(
            params,
            lr=self.cfg.lr,
            betas=(self.cfg.adam_beta1, self.cfg.adam_beta2),
            weight_decay=self.cfg.weight_decay,
        )
        self.optimizers.append(opt)
        return opt

    def _set_lr(self, lr: float) -> None:
        for opt in self.optimizers:
            for group in opt.param_groups:
                group["lr"] = lr

    def _all_params(self):
        seen = set()
        for opt in self.optimizers:
            for group in opt.param_groups:
                for p in group["params"]:
                    if id(p) not in seen:
                        seen.add(id(p))
                        yield p

    def _clip_and_step(self) -> float:
        grad_norm = _global_grad_norm(self._all_params())
        if self.cfg.clip_norm is not None:
            for opt in self.optimizers:
                params = [p for g in opt.param_groups for p in g["params"]]
                torch.nn.utils.clip_grad_norm_(params, self.cfg.clip_norm)
        for opt in self.optimizers:
            opt.step()
        return grad_norm

    def _zero_grad(self) -> None:
        for opt in self.optimizers:
            opt.zero_grad(set_to_none=True)

    def run(self, iterations: int | None = None, callback=None) -> list[IterationStats]:
        """Train for `iterations` steps (config default), collecting stats."""
        n = self.cfg.iterations if iterations is None else iterations
        stats = []
        for _ in range(n):
            s = self.train_iteration()
            stats.append(s)
            if callback is not None:
                callback(s)
        return stats

    def state_config(self) -> dict:
        return {"trainer": asdict(self.cfg), "game": asdict(self.game_cfg), "seed": self.seed}

    def save_checkpoint(self, path) -> None:
        nets.save_checkpoint(path, self.modules, self.state_config(), self.iteration)

    def load_checkpoint(self, path) -> None:
        payload = nets.load_checkpoint(path)
        nets.restore_modules(payload, self.modules)
        self.iteration = payload["iteration"]


class NegotiationTrainer(_TrainerBase):
    """REINFORCE with a centralized parameterized baseline."""

    def __init__(self, cfg: TrainerConfig, game_cfg: NegotiationConfig | None = None, seed: int = 0):
        super().__init__(cfg, seed)
        self.game_cfg = game_cfg or NegotiationConfig()
        k, n = self.game_cfg.items, self.game_cfg.message_dim
        net_a = nets.NegotiationPolicyNet(k, n, self.init_gen)
        net_b = net_a if cfg.shared_parameters else nets.NegotiationPolicyNet(k, n, self.init_gen)
        self.agents = [net_a, net_b]
        self.baseline = nets.NegotiationBaselineNet(k, n, self.init_gen)
        self.modules = {"agent_a": net_a, "agent_b": net_b, "baseline": self.baseline}
        if cfg.shared_parameters:
            self._make_optimizer(net_a.parameters())
        elif cfg.interagent_gradients:
            # centralized training: one optimizer updates both agents jointly
            self._make_optimizer(list(net_a.parameters()) + list(net_b.parameters()))
        else:
            self._make_optimizer(net_a.parameters())
            self._make_optimizer(net_b.parameters())
        self._make_optimizer(self.baseline.parameters())
        self.lr_schedule = LRSchedule(cfg)

    def rollout(self) -> EpisodeBatch:
        cfg, game = self.cfg, self.game_cfg
        env = VectorNegotiation(game, cfg.batch_size, self.gen)
        agent_states = [self.agents[i].initial_state(cfg.batch_size) for i in range(2)]
        base_state = self.baseline.initial_state(cfg.batch_size)
        turns: list[TurnLog] = []
        for t in range(game.max_turns):
            rows = env.live_rows()
            if rows.numel() == 0:
                break
            idx = env.active_agent
            override = None
            if not cfg.channel_enabled:
                override = torch.full(
                    (rows.shape[0], game.message_dim), float(game.initial_message_value)
                )
            obs = env.observations_rows(rows, message_override=override)
            h, c = agent_states[idx]
            out, (h_r, c_r) = self.agents[idx](obs, (h[rows], c[rows]))
            agent_states[idx] = (h.index_copy(0, rows, h_r), c.index_copy(0, rows, c_r))
            proposal, message, accept, lpa, lpm = nets.sample_negotiation_action(
                out, self.gen, reparameterized=cfg.interagent_gradients
            )
            bh, bc = base_state
            base_pred, (bh_r, bc_r) = self.baseline(obs.detach(), (bh[rows], bc[rows]))
            base_state = (bh.index_copy(0, rows, bh_r), bc.index_copy(0, rows, bc_r))
            cont = env.step_rows(rows, proposal, message, accept)
            # a message only counts as transmitted if the episode continues
            # past this move and the channel actually exists
            if t < game.max_turns - 1 and cfg.channel_enabled:
                transmitted = cont
            else:
                transmitted = torch.zeros_like(cont)
            turns.append(
                TurnLog(
                    agent="A" if idx == 0 else "B",
                    turn=t,
                    rows=rows,
                    log_prob_action=lpa,
                    baseline_pred=base_pred,
                    message_rows=rows[transmitted],
                    log_prob_message=lpm[transmitted],
                    message_means=torch.tanh(out.message.means)[transmitted],
                )
            )
        return EpisodeBatch(
            rewards=env.rewards,
            termination_turns=env.termination_turns,
            turns=turns,
            agreed=env.agreed,
        )

    def train_iteration(self) -> IterationStats:
        cfg = self.cfg
        self._zero_grad()
        batch = self.rollout()
        mean_return = float(batch.rewards.mean())
        if not math.isfinite(mean_return):
            raise TrainingDiverged(f"iteration {self.iteration}: non-finite batch return")
        baseline_values = []
        for log in batch.turns:
            full = batch.rewards.new_zeros(batch.rewards.shape)
            full[log.rows] = log.baseline_pred.detach()
            baseline_values.append(full)
        action_loss, message_rc_loss = reinforce_loss(batch, baseline_values)
        ps = batch.rewards.new_zeros(())
        if cfg.ps_enabled and cfg.channel_enabled:
            ps = ps_loss_from_batch(
                batch, signaling.RepulsionParams(cfg.lambda1, cfg.lambda2), None
            )
        weights = signaling.CommLossWeights(
            lambda_ib=cfg.lambda_ib,
            rc_enabled=cfg.rc_enabled and cfg.channel_enabled,
            ps_enabled=cfg.ps_enabled and cfg.channel_enabled,
        )
        comm_loss = signaling.compose_comm_loss(message_rc_loss, ps, weights)
        baseline_loss = self._baseline_mse(batch)
        total = action_loss + comm_loss + baseline_loss
        if not torch.isfinite(total):
            raise TrainingDiverged(f"iteration {self.iteration}: non-finite loss")
        lr = self.lr_schedule.update(mean_return)
        self._set_lr(lr)
        total.backward()
        grad_norm = self._clip_and_step()
        self.iteration += 1
        return IterationStats(
            iteration=self.iteration,
            mean_return=mean_return,
            shifted_return=None,
            action_loss=_scalar(action_loss),
            message_rc_loss=_scalar(message_rc_loss),
            ps_loss=_scalar(ps),
            baseline_loss=_scalar(baseline_loss),
            grad_norm=grad_norm,
            lr=lr,
            timeout_rate=float((~batch.agreed).float().mean()),
        )

    def _baseline_mse(self, batch: EpisodeBatch) -> torch.Tensor:
        total = batch.rewards.new_zeros(())
        count = 0
        for log in batch.turns:
            err = (log.baseline_pred - batch.rewards[log.rows]) ** 2
            total = total + err.sum()
            count += int(log.rows.numel())
        return total / count if count > 0 else total


class SeqGuessTrainer(_TrainerBase):
    """REINFORCE with a scalar moving-average baseline."""

    def __init__(self, cfg: TrainerConfig, game_cfg: SeqGuessConfig | None = None, seed: int = 0):
        super().__init__(cfg, seed)
        self.game_cfg = game_cfg or SeqGuessConfig()
        game = self.game_cfg
        if cfg.interagent_gradients and game.message_kind != MESSAGE_CONTINUOUS:
            raise ValueError("interagent gradients require continuous messages")
        gen = self.init_gen
        if game.message_kind == MESSAGE_DISCRETE:
            self.guesser = nets.DMGuesserNet(
                game.alphabet_size, game.target_length, game.message_length,
                game.message_alphabet, game.max_turns, gen,
            )
            mastermind = nets.DMMastermindNet(
                game.alphabet_size, game.target_length, game.message_length,
                game.message_alphabet, game.max_turns, gen,
            )
        else:
            self.guesser = nets.CMGuesserNet(
                game.alphabet_size, game.target_length, game.message_dim, game.max_turns, gen
            )
            mastermind = nets.CMMastermindNet(
                game.alphabet_size, game.target_length, game.message_dim, game.max_turns, gen
            )
        self.mastermind = mastermind if cfg.channel_enabled else None
        self.modules = {"guesser": self.guesser}
        if self.mastermind is not None:
            self.modules["mastermind"] = self.mastermind
        if cfg.interagent_gradients and self.mastermind is not None:
            self._make_optimizer(
                list(self.guesser.parameters()) + list(self.mastermind.parameters())
            )
        else:
            self._make_optimizer(self.guesser.parameters())
            if self.mastermind is not None:
                self._make_optimizer(self.mastermind.parameters())
        self.baseline = 0.0
        self.shift = return_shift(game)
        if game.message_kind == MESSAGE_DISCRETE:
            self.discrete_params = signaling.DiscretePSParams(
                cfg.lambda_ps, cfg.h_target_ratio * math.log(game.message_alphabet)
            )
        else:
            self.discrete_params = None

    def rollout(self) -> EpisodeBatch:
        cfg, game = self.cfg, self.game_cfg
        env = VectorSeqGuess(game, cfg.batch_size, self.gen)
        initial_message = env.last_message
        turns: list[TurnLog] = []
        for t in range(game.max_turns):
            rows = env.live_rows()
            r = int(rows.numel())
            if r == 0:
                break
            message_in = env.last_message[rows] if cfg.channel_enabled else initial_message[rows]
            if t == 0 or not cfg.channel_enabled:
                # every live episode sees the same constant message: run one
                # row through the net and broadcast the resulting policy
                guess_logits = self.guesser(message_in[:1], t).expand(r, -1, -1)
            else:
                guess_logits = self.guesser(message_in, t)
            guesses, lp_guess = nets.sample_categorical(guess_logits, self.gen)
            terminal = env.step_guess_rows(rows, guesses)
            turns.append(TurnLog(agent="guesser", turn=t, rows=rows, log_prob_action=lp_guess))
            if t >= game.max_turns - 1:
                continue
            cont = ~terminal
            rows2 = rows[cont]
            if self.mastermind is None or rows2.numel() == 0:
                env.advance_turn()
                continue
            targets2, guesses2 = env.targets[rows2], guesses[cont]
            if game.message_kind == MESSAGE_DISCRETE:
                msg_logits = self.mastermind(targets2, guesses2, t)
                message, lpm = nets.sample_categorical(msg_logits, self.gen)
                turns.append(
                    TurnLog(
                        agent="mastermind",
                        turn=t,
                        message_rows=rows2,
                        log_prob_message=lpm,
                        message_probs=torch.softmax(msg_logits, dim=-1),
                    )
                )
            else:
                head = self.mastermind(targets2, guesses2, t)
                message, lpm, means = nets.sample_continuous_message(
                    head, self.gen, reparameterized=cfg.interagent_gradients
                )
                turns.append(
                    TurnLog(
                        agent="mastermind",
                        turn=t,
                        message_rows=rows2,
                        log_prob_message=lpm,
                        message_means=means,
                    )
                )
            env.step_reply_rows(rows2, message)
        return EpisodeBatch(
            rewards=env.rewards,
            termination_turns=env.termination_turns,
            turns=turns,
            exact=env.exact,
        )

    def train_iteration(self) -> IterationStats:
        cfg = self.cfg
        self._zero_grad()
        batch = self.rollout()
        mean_return = float(batch.rewards.mean())
        if not math.isfinite(mean_return):
            raise TrainingDiverged(f"iteration {self.iteration}: non-finite batch return")
        baseline_values = [self.baseline] * len(batch.turns)
        action_loss, message_rc_loss = reinforce_loss(batch, baseline_values)
        ps = batch.rewards.new_zeros(())
        if cfg.ps_enabled and cfg.channel_enabled:
            ps = ps_loss_from_batch(
                batch,
                signaling.RepulsionParams(cfg.lambda1, cfg.lambda2),
                self.discrete_params,
            )
        weights = signaling.CommLossWeights(
            lambda_ib=cfg.lambda_ib,
            rc_enabled=cfg.rc_enabled and cfg.channel_enabled,
            ps_enabled=cfg.ps_enabled and cfg.channel_enabled,
        )
        comm_loss = signaling.compose_comm_loss(message_rc_loss, ps, weights)
        total = action_loss + comm_loss
        if not torch.isfinite(total):
            raise TrainingDiverged(f"iteration {self.iteration}: non-finite loss")
        total.backward()
        grad_norm = self._clip_and_step()
        self.baseline = moving_baseline_update(self.baseline, mean_return, cfg.baseline_decay)
        self.iteration += 1
        return IterationStats(
            iteration=self.iteration,
            mean_return=mean_return,
            shifted_return=mean_return + self.shift,
            action_loss=_scalar(action_loss),
            message_rc_loss=_scalar(message_rc_loss),
            ps_loss=_scalar(ps),
            baseline_loss=None,
            grad_norm=grad_norm,
            lr=cfg.lr,
            exact_rate=float(batch.exact.float().mean()),
        )


def make_trainer(game: str, cfg: TrainerConfig, game_cfg=None, seed: int = 0):
    if game == GAME_NEGOTIATION:
        return NegotiationTrainer(cfg, game_cfg, seed)
    if game == GAME_SEQGUESS:
        return SeqGuessTrainer(cfg, game_cfg, seed)
    raise ValueError(f"unknown game: {game!r}")
