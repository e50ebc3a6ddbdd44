"""Play one scripted Negotiation episode, write its trace, and replay it.

Demonstrates the trace format end to end: the episode reproduces the
worked three-beverage example, whose accepted split is worth
1.525 / 1.95 of the best achievable joint value.
"""

import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from emcomm import negotiation as neg
from emcomm import traces
from emcomm.cli import main as cli_main


def main() -> int:
    cfg = neg.NegotiationConfig()
    u_a = np.array([0.8, 0.35, 0.5])
    u_b = np.array([0.4, 0.2, 0.8])
    moves = [
        ("A", [0.9, 0.3, 0.5], [0.1, -0.4, 0.7], False),
        ("B", [0.5, 0.3, 0.4], [-0.2, 0.9, 0.0], False),
        ("A", [0.6, 0.6, 0.6], [0.0, 0.0, 0.0], True),
    ]
    state = neg.NegotiationState(
        u_a=u_a, u_b=u_b, turn=0, active_agent="A", last_proposal=None,
        last_message=np.zeros(3), terminated=False, outcome=neg.OUTCOME_IN_PROGRESS,
    )
    records = [traces.negotiation_header(cfg, u_a, u_b)]
    reward = None
    for agent, proposal, message, accept in moves:
        records.append(traces.negotiation_turn(state.turn, agent, proposal, message, accept))
        state, reward = neg.step(
            cfg, state, neg.NegotiationAction(np.array(proposal), np.array(message), accept)
        )
    records.append(traces.end_record(state.outcome, reward))

    path = Path(tempfile.mkdtemp()) / "worked_example.jsonl"
    traces.write_trace(path, records)
    print(f"trace written to {path}\n")
    return cli_main(["replay", str(path)])


if __name__ == "__main__":
    sys.exit(main())
