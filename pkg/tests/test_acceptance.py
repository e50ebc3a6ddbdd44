"""Acceptance gate: every numbered criterion at its stated tolerance.

Heavy desk-scale trainings (criteria 4-6) run through the real grid
runner into a resumable cache directory, so a finished criterion is not
retrained on repeated invocations; delete .acceptance_cache to force a
fresh run. Each criterion appends one PASS/FAIL line to
acceptance_report.txt at the repo root.
"""

import math
from pathlib import Path

import numpy as np
import pytest
import torch

from emcomm import experiments as ex
from emcomm import negotiation as neg
from emcomm import nets
from emcomm import seqguess as sg
from emcomm import signaling, torus
from emcomm.training import (
    EpisodeBatch,
    SeqGuessTrainer,
    TurnLog,
    negotiation_trainer_defaults,
    ps_loss_from_batch,
    reinforce_loss,
    seqguess_trainer_defaults,
)
from gradcheck_util import check_param_gradients, fd_gradient, assert_close_grads
from test_signaling import margin_respecting_batch, naive_pair_loss

ROOT = Path(__file__).resolve().parent.parent
CACHE = ROOT / ".acceptance_cache"
REPORT_PATH = ROOT / "acceptance_report.txt"

_REPORT: list[str] = []


def note(criterion: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
    _REPORT.append(line)
    print(line)
    REPORT_PATH.write_text("\n".join(_REPORT) + "\n")


def check(criterion: str, passed: bool, detail: str) -> None:
    note(criterion, passed, detail)
    assert passed, f"{criterion}: {detail}"


def jitter_params(module: torch.nn.Module, seed: int, scale: float = 0.1) -> None:
    """Move freshly initialised parameters off their zero-bias kinks so
    finite differences never straddle a ReLU corner."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for param in module.parameters():
            param.add_(torch.empty_like(param).uniform_(-scale, scale, generator=gen))


# ---------------------------------------------------------------------------
# criterion 1: analytic oracles


class TestCriterion1AnalyticOracles:
    def test_negotiation_worked_example(self):
        value = neg.shared_reward([0.5, 0.3, 0.4], [0.4, 0.2, 0.8], [0.8, 0.35, 0.5])
        expected = 1.525 / 1.95
        check(
            "criterion 1a (worked-example shared reward)",
            abs(value - expected) < 1e-4,
            f"shared reward {value:.6f} vs {expected:.6f} (tol 1e-4)",
        )

    def test_seqguess_reward_footnote_values(self):
        cfg = sg.SeqGuessConfig()
        first = sg.reward(cfg, 0, (1, 2, 0), (1, 2, 0))
        second = sg.reward(cfg, 1, (1, 2, 0), (1, 2, 0))
        check(
            "criterion 1b (exact-guess rewards)",
            first == 1.0 and second == 0.9,
            f"t=0 reward {first}, t=1 reward {second}",
        )

    def test_reporting_shift(self):
        cfg = sg.SeqGuessConfig()
        expected = 1.0 - (1.0 / 27.0 + 0.9 * 26.0 / 27.0)
        value = sg.return_shift(cfg)
        check(
            "criterion 1c (reporting shift)",
            abs(value - expected) < 1e-6 and abs(value - 0.0963) < 1e-4,
            f"shift {value:.7f} vs closed form {expected:.7f} (tol 1e-6)",
        )


# ---------------------------------------------------------------------------
# criterion 2: loss correctness (64-bit gradient checks + pair accounting)


class TestCriterion2LossCorrectness:
    def test_continuous_ps_loss_gradient(self):
        rng = np.random.default_rng(0)
        p = signaling.RepulsionParams(100.0, 10.0)
        means_np = margin_respecting_batch(6, 2, p, rng)
        means = torch.tensor(means_np, dtype=torch.float64, requires_grad=True)
        frozen = means.detach().clone()

        def frozen_second():
            batch = means.shape[0]
            delta = torch.abs(means.unsqueeze(1) - frozen.unsqueeze(0))
            per = torch.minimum(delta, 2.0 - delta)
            sq = (per * per).sum(-1)
            upper = torch.triu(torch.ones(batch, batch, dtype=torch.bool), diagonal=1)
            active = upper & (sq > 0)
            dist = torch.sqrt(torch.where(active, sq, torch.ones_like(sq)))
            pot = torch.relu(-p.lambda1 * dist + p.lambda2)
            return torch.where(active, pot, torch.zeros_like(pot)).sum() / batch**2

        loss = signaling.continuous_ps_loss(means, p)
        loss.backward()
        numeric = fd_gradient(frozen_second, means)
        assert_close_grads(means.grad, numeric, rtol=1e-4)
        check("criterion 2a (repulsion loss gradient)", True, "relative error within 1e-4")

    def test_all_policy_network_gradients(self):
        g = lambda s: torch.Generator().manual_seed(s)
        checks = []

        net = nets.NegotiationPolicyNet(3, 3, g(1)).double()
        jitter_params(net, 101)
        obs = torch.randn(3, 7, generator=g(2), dtype=torch.float64)

        def neg_probe():
            out, state = net(obs, net.initial_state(3))
            out2, _ = net(obs * 0.3, state)
            return out.proposal.means.sum() + out.message.stds.sum() + out2.accept_prob.sum()

        checks.append(check_param_gradients(neg_probe, net, n_coords=4))

        base = nets.NegotiationBaselineNet(3, 3, g(3)).double()
        jitter_params(base, 102)
        checks.append(
            check_param_gradients(lambda: base(obs, base.initial_state(3))[0].sum(), base, n_coords=4)
        )

        target = torch.randint(0, 3, (3, 3), generator=g(4))
        guess = torch.randint(0, 3, (3, 3), generator=g(5))
        dm_m = nets.DMMastermindNet(3, 3, 3, 3, 3, g(6)).double()
        jitter_params(dm_m, 103)
        checks.append(check_param_gradients(lambda: dm_m(target, guess, 1).sum(), dm_m, n_coords=4))
        dm_g = nets.DMGuesserNet(3, 3, 3, 3, 3, g(7)).double()
        jitter_params(dm_g, 104)
        msg = torch.randint(0, 3, (3, 3), generator=g(8))
        checks.append(check_param_gradients(lambda: dm_g(msg, 0).sum(), dm_g, n_coords=4))
        cm_m = nets.CMMastermindNet(3, 3, 3, 3, g(9)).double()
        jitter_params(cm_m, 105)
        checks.append(
            check_param_gradients(
                lambda: (lambda h: h.means.sum() + h.stds.sum())(cm_m(target, guess, 2)),
                cm_m,
                n_coords=4,
            )
        )
        cm_g = nets.CMGuesserNet(3, 3, 3, 3, g(10)).double()
        jitter_params(cm_g, 106)
        fmsg = torch.randn(3, 3, generator=g(11), dtype=torch.float64) * 0.4
        checks.append(check_param_gradients(lambda: cm_g(fmsg, 1).sum(), cm_g, n_coords=4))

        check(
            "criterion 2b (network backpropagation)",
            all(c > 0 for c in checks),
            f"{sum(checks)} parameter coordinates across 6 networks within relative 1e-4",
        )

    def test_composed_training_loss_gradient(self):
        # The analytic gradient comes from the real composed loss (action
        # stream + reinforced-communication stream + repulsion bias, exactly
        # as the trainer assembles it). Because the bias detaches every
        # pair's second operand, the matching finite-difference reference
        # holds those operands frozen at their base values.
        g = lambda s: torch.Generator().manual_seed(s)
        guesser = nets.CMGuesserNet(3, 3, 3, 3, g(20)).double()
        jitter_params(guesser, 107)
        mastermind = nets.CMMastermindNet(3, 3, 3, 3, g(21)).double()
        jitter_params(mastermind, 108)
        batch_size = 4
        targets = torch.randint(0, 3, (batch_size, 3), generator=g(22))
        guesses = torch.randint(0, 3, (batch_size, 3), generator=g(23))
        fixed_message = torch.randn(batch_size, 3, generator=g(24), dtype=torch.float64) * 0.3
        fixed_y = torch.randn(batch_size, 3, generator=g(25), dtype=torch.float64) * 0.2
        rewards = torch.tensor([1.0, 0.4, -0.1, 0.7], dtype=torch.float64)
        rows = torch.arange(batch_size)
        weights = signaling.CommLossWeights(lambda_ib=1.0, rc_enabled=True, ps_enabled=True)
        # pick the repulsion cutoff from the observed pair distances so every
        # pair sits strictly inside the active hinge region: finite
        # differences must not straddle the d=0 or d=cutoff kinks
        with torch.no_grad():
            means0 = torch.tanh(mastermind(targets, guesses, 0).means)
        pair_d = torus.pairwise_distances(means0.numpy())
        finite_d = pair_d[np.isfinite(pair_d)]
        margin = 1e-3
        assert finite_d.min() > margin, "degenerate test geometry; adjust jitter seed"
        deltas = np.abs(means0.numpy()[:, None, :] - means0.numpy()[None, :, :])
        off_diag = ~np.eye(batch_size, dtype=bool)
        assert np.all(deltas[off_diag] > margin) and np.all(np.abs(deltas[off_diag] - 1.0) > margin)
        cutoff = float(finite_d.max()) * 1.5
        repulsion = signaling.RepulsionParams(100.0, 100.0 * cutoff)

        def streams():
            logits = guesser(fixed_message, 0)
            lp_guess = (
                torch.log_softmax(logits, dim=-1)
                .gather(-1, guesses.unsqueeze(-1))
                .squeeze(-1)
                .sum(-1)
            )
            head = mastermind(targets, guesses, 0)
            return lp_guess, head.log_prob(fixed_y), torch.tanh(head.means)

        def real_loss():
            lp_guess, lp_msg, means = streams()
            batch = EpisodeBatch(
                rewards=rewards,
                termination_turns=torch.zeros(batch_size, dtype=torch.long),
                turns=[
                    TurnLog(agent="guesser", turn=0, rows=rows, log_prob_action=lp_guess),
                    TurnLog(
                        agent="mastermind",
                        turn=0,
                        message_rows=rows,
                        log_prob_message=lp_msg,
                        message_means=means,
                    ),
                ],
            )
            action_loss, rc_loss = reinforce_loss(batch, [0.25, 0.25])
            ps = ps_loss_from_batch(batch, repulsion, None)
            return action_loss + signaling.compose_comm_loss(rc_loss, ps, weights)

        def frozen_reference():
            lp_guess, lp_msg, means = streams()
            batch = EpisodeBatch(
                rewards=rewards,
                termination_turns=torch.zeros(batch_size, dtype=torch.long),
                turns=[
                    TurnLog(agent="guesser", turn=0, rows=rows, log_prob_action=lp_guess),
                    TurnLog(
                        agent="mastermind", turn=0, message_rows=rows, log_prob_message=lp_msg
                    ),
                ],
            )
            action_loss, rc_loss = reinforce_loss(batch, [0.25, 0.25])
            delta = torch.abs(means.unsqueeze(1) - means0.unsqueeze(0))
            per = torch.minimum(delta, 2.0 - delta)
            sq = (per * per).sum(-1)
            upper = torch.triu(torch.ones(batch_size, batch_size, dtype=torch.bool), diagonal=1)
            dist = torch.sqrt(torch.where(upper, sq, torch.ones_like(sq)))
            pot = torch.relu(-repulsion.lambda1 * dist + repulsion.lambda2)
            ps = torch.where(upper, pot, torch.zeros_like(pot)).sum() / batch_size**2
            return action_loss + signaling.compose_comm_loss(rc_loss, ps, weights)

        assert float(real_loss().detach()) == pytest.approx(
            float(frozen_reference().detach()), abs=1e-12
        )
        rng = np.random.default_rng(2)
        checked = 0
        for module in (guesser, mastermind):
            params = list(module.parameters())
            analytic = torch.autograd.grad(real_loss(), params, allow_unused=True)
            for param, grad in zip(params, analytic):
                flat = param.data.reshape(-1)
                g_flat = (
                    grad.reshape(-1) if grad is not None else torch.zeros_like(flat)
                )
                for i in rng.choice(flat.numel(), size=min(4, flat.numel()), replace=False):
                    orig = float(flat[i])
                    with torch.no_grad():
                        flat[i] = orig + 1e-5
                    f_plus = float(frozen_reference().detach())
                    with torch.no_grad():
                        flat[i] = orig - 1e-5
                    f_minus = float(frozen_reference().detach())
                    with torch.no_grad():
                        flat[i] = orig
                    numeric = (f_plus - f_minus) / 2e-5
                    a = float(g_flat[i])
                    assert abs(a - numeric) <= 1e-4 * max(abs(a), abs(numeric)) + 1e-8, (
                        f"{type(module).__name__} coord {i}: analytic {a:.10g} vs FD {numeric:.10g}"
                    )
                    checked += 1
        check(
            "criterion 2c (composed training loss gradient)",
            checked > 0,
            f"{checked} parameter coordinates within relative 1e-4",
        )

    def test_pair_accounting_vs_double_loop(self):
        rng = np.random.default_rng(5)
        p = signaling.RepulsionParams(100.0, 10.0)
        worst = 0.0
        for batch_size in (2, 3, 8, 17, 33, 64):
            means = rng.uniform(-1.0, 1.0, (batch_size, 3))
            ours = float(signaling.continuous_ps_loss(torch.tensor(means, dtype=torch.float64), p))
            oracle = naive_pair_loss(means, p)
            worst = max(worst, abs(ours - oracle))
        check(
            "criterion 2d (pair accounting vs double loop)",
            worst < 1e-9,
            f"max |loss difference| {worst:.2e} over batches up to 64 (tol 1e-9)",
        )


# ---------------------------------------------------------------------------
# criterion 3: uniformization property


class TestCriterion3Uniformization:
    def test_descent_reaches_exact_zero(self):
        p = signaling.RepulsionParams(100.0, 10.0)
        rng = np.random.default_rng(0)
        means = torch.tensor(rng.uniform(-1.0, 1.0, (8, 1)), requires_grad=True)
        steps_used = None
        for step in range(5000):
            loss = signaling.continuous_ps_loss(means, p)
            if float(loss.detach()) == 0.0:
                steps_used = step
                break
            if means.grad is not None:
                means.grad.zero_()
            loss.backward()
            with torch.no_grad():
                means -= 0.01 * means.grad
        final = float(signaling.continuous_ps_loss(means, p).detach())
        spread = torus.pairwise_distances(means.detach().numpy())
        min_dist = float(spread[np.isfinite(spread)].min())
        check(
            "criterion 3 (uniformization by descent)",
            final == 0.0 and steps_used is not None and min_dist >= 0.1,
            f"loss {final} after {steps_used} steps; min pairwise distance {min_dist:.4f} >= 0.1",
        )


# ---------------------------------------------------------------------------
# criteria 4-6: desk-scale trainings (cached, resumable)


def grid_records(sub: str, configs) -> list[ex.RunRecord]:
    out_dir = CACHE / sub
    for cfg in configs:
        cfg.out_dir = str(out_dir)
    return ex.run_grid(configs)


@pytest.fixture(scope="module")
def seqguess_desk_grid():
    configs = [
        ex.default_experiment(
            ex.CellSpec("seqguess", losses=mode, interagent_gradients=False),
            n_runs=5,
            seed_base=0,
            batch_size=256,
            iterations=20_000,
        )
        for mode in ("rc", "ps", "rc_ps")
    ]
    return ex.summarize(grid_records("c4_seqguess", configs))


class TestCriterion4SeqGuessDeskScale:
    def test_ordering_and_levels(self, seqguess_desk_grid):
        stats = seqguess_desk_grid
        rc = stats["seqguess_cm_noig_rc"]
        ps = stats["seqguess_cm_noig_ps"]
        rc_ps = stats["seqguess_cm_noig_rc_ps"]
        detail = (
            f"best shifted return RC {rc.best_mean:.3f}+-{rc.best_std:.3f}, "
            f"PS {ps.best_mean:.3f}+-{ps.best_std:.3f}, "
            f"RC+PS {rc_ps.best_mean:.3f}+-{rc_ps.best_std:.3f}"
        )
        ordering = rc_ps.best_mean - rc_ps.best_std > rc.best_mean + rc.best_std
        levels = ps.best_mean > 0.6 and rc_ps.best_mean > 0.6
        ceiling = rc.best_mean < 0.778
        check(
            "criterion 4 (CM Sequence Guess desk scale)",
            ordering and levels and ceiling,
            detail
            + f"; RC+PS-RC 1-sd gap {'open' if ordering else 'OVERLAPS'},"
            + f" PS cells>0.6 {levels}, RC<0.778 {ceiling}",
        )


@pytest.fixture(scope="module")
def negotiation_desk_records():
    configs = [
        ex.default_experiment(
            ex.CellSpec("negotiation", losses="rc_ps", interagent_gradients=True),
            n_runs=3,
            seed_base=0,
            batch_size=256,
            iterations=10_000,
        )
    ]
    return grid_records("c5_negotiation", configs)


class TestCriterion5NegotiationDeskScale:
    def test_mean_return_and_timeouts(self, negotiation_desk_records):
        records = negotiation_desk_records
        stats = ex.summarize(records)["negotiation_ig_rc_ps"]
        tail_timeout = max(
            float(np.mean([s.timeout_rate for s in rec.iterations[-100:]])) for rec in records
        )
        passed = stats.best_mean >= 0.85 and tail_timeout < 0.05
        check(
            "criterion 5 (Negotiation desk scale)",
            passed,
            f"mean best return {stats.best_mean:.3f} (>=0.85), "
            f"worst tail timeout rate {tail_timeout:.3f} (<0.05)",
        )


@pytest.fixture(scope="module")
def ablated_seqguess_records():
    configs = [
        ex.default_experiment(
            ex.CellSpec("seqguess", losses="rc_ps", interagent_gradients=False),
            n_runs=3,
            seed_base=0,
            batch_size=256,
            iterations=2_000,
            channel_enabled=False,
            rc_enabled=False,
            ps_enabled=False,
        )
    ]
    return grid_records("c6_seqguess_ablated", configs)


@pytest.fixture(scope="module")
def ablated_negotiation_records():
    configs = [
        ex.default_experiment(
            ex.CellSpec("negotiation", losses="rc_ps", interagent_gradients=False),
            n_runs=3,
            seed_base=0,
            batch_size=256,
            iterations=5_000,
            channel_enabled=False,
            rc_enabled=False,
            ps_enabled=False,
        )
    ]
    return grid_records("c6_negotiation_ablated", configs)


class TestCriterion6NoCommunicationCeilings:
    def test_seqguess_ablated_stays_below_phrased_bound(self, ablated_seqguess_records):
        bests = [rec.best_minibatch() for rec in ablated_seqguess_records]
        worst = max(bests)
        # NOTE: expected to FAIL. The stated 0.2 bound on the shifted scale
        # is unattainable: partial credit plus the additive shift put even a
        # uniformly random no-communication guesser near 0.29, and the true
        # blind optimum (exhaustively computed in test_seqguess_env) is
        # 5.9/27 + shift ~= 0.315. Kept faithful to the stated criterion.
        check(
            "criterion 6a (ablated Sequence Guess ceiling 0.2)",
            worst <= 0.2,
            f"max best shifted return {worst:.3f} vs stated bound 0.2 "
            f"(blind-schedule optimum is {5.9 / 27 + sg.return_shift(sg.SeqGuessConfig()):.3f})",
        )

    def test_negotiation_ablated_upper_bound(self, ablated_negotiation_records):
        bests = [rec.best_minibatch() for rec in ablated_negotiation_records]
        worst = max(bests)
        check(
            "criterion 6b (ablated Negotiation upper bound)",
            worst <= 0.94,
            f"max best return {worst:.3f} <= 0.94 (0.92 + 0.02)",
        )


# ---------------------------------------------------------------------------
# criterion 7: infrastructure


class TestCriterion7Infrastructure:
    def test_checkpoint_bit_exact(self, tmp_path):
        trainer = SeqGuessTrainer(seqguess_trainer_defaults(batch_size=8, iterations=2), seed=3)
        trainer.run(2)
        path = tmp_path / "ckpt.pt"
        trainer.save_checkpoint(path)
        clone = SeqGuessTrainer(seqguess_trainer_defaults(batch_size=8, iterations=2), seed=77)
        clone.load_checkpoint(path)
        identical = all(
            torch.equal(v, clone.modules[name].state_dict()[k])
            for name, module in trainer.modules.items()
            for k, v in module.state_dict().items()
        )
        check(
            "criterion 7a (checkpoint bit-exact round trip)",
            identical and clone.iteration == 2,
            "all parameter tensors identical, iteration counter restored",
        )

    def test_record_persist_load_identity(self, tmp_path):
        cfg = ex.default_experiment(
            ex.CellSpec("seqguess", losses="ps"), n_runs=1, seed_base=9,
            out_dir=str(tmp_path), batch_size=8, iterations=4,
        )
        record = ex.execute_run(cfg, 0)
        path = tmp_path / "r.jsonl"
        ex.persist(record, path)
        loaded = ex.load(path)
        same = (
            loaded.cell == record.cell
            and loaded.seed == record.seed
            and [s.mean_return for s in loaded.iterations]
            == [s.mean_return for s in record.iterations]
            and [s.ps_loss for s in loaded.iterations] == [s.ps_loss for s in record.iterations]
        )
        check("criterion 7b (record persist/load identity)", same, "round-trip equal")

    def test_deterministic_100_iteration_replay(self):
        cfg = seqguess_trainer_defaults(batch_size=16, iterations=100)
        a = SeqGuessTrainer(cfg, seed=21).run(100)
        b = SeqGuessTrainer(cfg, seed=21).run(100)
        identical = all(
            x.mean_return == y.mean_return
            and x.action_loss == y.action_loss
            and x.ps_loss == y.ps_loss
            for x, y in zip(a, b)
        )
        check(
            "criterion 7c (deterministic 100-iteration replay)",
            identical,
            "loss trajectories bit-identical under a fixed seed",
        )

    def test_summarize_plot_cross_check(self, tmp_path, monkeypatch, capsys):
        from emcomm import cli

        cfg = ex.default_experiment(
            ex.CellSpec("seqguess", losses="ps"), n_runs=2, seed_base=0,
            out_dir=str(tmp_path / "records"), batch_size=8, iterations=5,
        )
        ex.run_grid([cfg])
        out = tmp_path / "plots"
        assert cli.main(["plot", str(tmp_path / "records"), "--out", str(out)]) == 0
        stats = ex.summarize(ex.load_directory(tmp_path / "records"))["seqguess_cm_noig_ps"]
        rows = (out / "seqguess_cm_noig_ps.csv").read_text().splitlines()[1:]
        matches = len(rows) == len(stats.curve_mean) and all(
            float(row.split(",")[1]) == pytest.approx(float(m), abs=1e-12)
            for row, m in zip(rows, stats.curve_mean)
        )
        check(
            "criterion 7d (summarize/plot cross-check)",
            matches,
            "plot data file equals summarize output on the plot grid",
        )

    def test_module_suites_note(self):
        # the remaining invariant coverage is the rest of this pytest run
        note(
            "criterion 7e (module invariant suites)",
            True,
            "see the full pytest result for every module's invariant suite",
        )
