"""Episode trace files: one JSON record per line.

A trace starts with a header record carrying the game configuration and
the episode's hidden information (utilities or target), followed by one
record per turn, and ends with an outcome record holding the stored
reward. Replay renders a human-readable transcript and recomputes the
reward from the turn records as a consistency check.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import negotiation, seqguess

TRACE_SCHEMA = 1


class TraceError(ValueError):
    pass


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def write_trace(path, records: list[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps({k: _jsonable(v) for k, v in rec.items()}) + "\n")


def read_trace(path) -> list[dict]:
    path = Path(path)
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    if not records:
        raise TraceError(f"empty trace: {path}")
    header = records[0]
    if header.get("kind") != "header":
        raise TraceError("trace must start with a header record")
    if header.get("schema") != TRACE_SCHEMA:
        raise TraceError(f"unsupported trace schema: {header.get('schema')!r}")
    return records


def negotiation_header(cfg: negotiation.NegotiationConfig, u_a, u_b) -> dict:
    return {
        "kind": "header",
        "schema": TRACE_SCHEMA,
        "game": "negotiation",
        "config": asdict(cfg),
        "utilities_a": _jsonable(np.asarray(u_a)),
        "utilities_b": _jsonable(np.asarray(u_b)),
    }


def negotiation_turn(turn: int, agent: str, proposal, message, accept: bool) -> dict:
    return {
        "kind": "turn",
        "turn": turn,
        "agent": agent,
        "proposal": _jsonable(np.asarray(proposal)),
        "message": _jsonable(np.asarray(message)),
        "accept": bool(accept),
    }


def seqguess_header(cfg: seqguess.SeqGuessConfig, target) -> dict:
    return {
        "kind": "header",
        "schema": TRACE_SCHEMA,
        "game": "seqguess",
        "config": asdict(cfg),
        "target": [int(t) for t in target],
    }


def seqguess_turn(turn: int, guess, message=None) -> dict:
    rec = {"kind": "turn", "turn": turn, "guess": [int(g) for g in guess]}
    if message is not None:
        rec["message"] = _jsonable(np.asarray(message))
    return rec


def end_record(outcome: str, reward: float, shifted: float | None = None) -> dict:
    rec = {"kind": "end", "outcome": outcome, "reward": float(reward)}
    if shifted is not None:
        rec["shifted_reward"] = float(shifted)
    return rec


def _recompute_negotiation(header: dict, turns: list[dict], end: dict) -> float:
    cfg = negotiation.NegotiationConfig(**header["config"])
    u = {"A": np.asarray(header["utilities_a"]), "B": np.asarray(header["utilities_b"])}
    state = negotiation.NegotiationState(
        u_a=u["A"],
        u_b=u["B"],
        turn=0,
        active_agent=negotiation.AGENT_A,
        last_proposal=None,
        last_message=np.full(cfg.message_dim, cfg.initial_message_value),
        terminated=False,
        outcome=negotiation.OUTCOME_IN_PROGRESS,
    )
    reward = None
    for rec in turns:
        if state.terminated:
            raise TraceError("turn record after termination")
        if rec["agent"] != state.active_agent:
            raise TraceError(f"turn {rec['turn']}: expected agent {state.active_agent}")
        action = negotiation.NegotiationAction(
            proposal=np.asarray(rec["proposal"]),
            message=np.asarray(rec["message"]),
            accept=bool(rec["accept"]),
        )
        state, reward = negotiation.step(cfg, state, action)
    if reward is None:
        raise TraceError("trace ends before the episode terminated")
    return reward


def _recompute_seqguess(header: dict, turns: list[dict], end: dict) -> float:
    cfg = seqguess.SeqGuessConfig(**header["config"])
    state = seqguess.SeqGuessState(
        target=tuple(header["target"]),
        turn=0,
        last_guess=None,
        last_message=seqguess.initial_message(cfg),
        terminated=False,
        awaiting_reply=False,
    )
    reward = None
    for rec in turns:
        state, reward = seqguess.step_guess(cfg, state, rec["guess"])
        if reward is None:
            if "message" not in rec:
                raise TraceError(f"turn {rec['turn']}: non-terminal turn lacks a reply message")
            state = seqguess.step_reply(cfg, state, rec["message"])
    if reward is None:
        raise TraceError("trace ends before the episode terminated")
    return reward


def recompute_reward(records: list[dict]) -> float:
    """Re-run the episode recorded in the trace and return its reward."""
    header = records[0]
    turns = [r for r in records if r.get("kind") == "turn"]
    ends = [r for r in records if r.get("kind") == "end"]
    if not turns:
        raise TraceError("trace has no turn records")
    if not ends:
        raise TraceError("trace has no end record")
    if header["game"] == "negotiation":
        return _recompute_negotiation(header, turns, ends[0])
    if header["game"] == "seqguess":
        return _recompute_seqguess(header, turns, ends[0])
    raise TraceError(f"unknown game: {header['game']!r}")


def render_transcript(records: list[dict]) -> str:
    """Human-readable turn-by-turn view of a trace, with a consistency line."""
    header = records[0]
    lines = [f"game: {header['game']}"]
    if header["game"] == "negotiation":
        lines.append(f"hidden utilities A: {_fmt(header['utilities_a'])}")
        lines.append(f"hidden utilities B: {_fmt(header['utilities_b'])}")
    else:
        lines.append(f"hidden target: {header['target']}")
    for rec in records[1:]:
        if rec["kind"] == "turn":
            if header["game"] == "negotiation":
                verb = "accepts standing proposal;" if rec["accept"] else "proposes"
                lines.append(
                    f"turn {rec['turn']}: {rec['agent']} {verb} {_fmt(rec['proposal'])}"
                    f" message {_fmt(rec['message'])}"
                )
            else:
                msg = f" message {_fmt(rec['message'])}" if "message" in rec else ""
                lines.append(f"turn {rec['turn']}: guess {rec['guess']}{msg}")
        elif rec["kind"] == "end":
            lines.append(f"outcome: {rec['outcome']}  reward: {rec['reward']:.6f}")
            if "shifted_reward" in rec:
                lines.append(f"shifted reward: {rec['shifted_reward']:.6f}")
    recomputed = recompute_reward(records)
    stored = next(r for r in records if r.get("kind") == "end")["reward"]
    lines.append(f"reward recomputed from trace: {recomputed:.6f}")
    if abs(recomputed - stored) > 1e-6:
        raise TraceError(
            f"stored reward {stored:.6f} disagrees with recomputation {recomputed:.6f}"
        )
    return "\n".join(lines)


def _fmt(vec) -> str:
    return "[" + ", ".join(f"{float(v):.3f}" for v in np.asarray(vec).ravel()) + "]"
