"""Emergent-communication MARL lab.

Two cooperative games (Negotiation, Sequence Guess), continuous and
discrete message channels, a toroidal repulsion bias for continuous
positive signaling, REINFORCE training, and an ablation-grid harness.
"""

from . import cli, configfile, experiments, negotiation, nets, seqguess, signaling, torus, traces, training

__all__ = [
    "cli",
    "configfile",
    "experiments",
    "negotiation",
    "nets",
    "seqguess",
    "signaling",
    "torus",
    "traces",
    "training",
]
