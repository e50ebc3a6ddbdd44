"""Flat key-value experiment configuration files.

INI-style sections, one per concern:

    [experiment]   game, losses, interagent_gradients, runs, seed, out
    [trainer]      every TrainerConfig field
    [negotiation]  NegotiationConfig fields (when game = negotiation)
    [seqguess]     SeqGuessConfig fields (when game = seqguess)

`losses` and `interagent_gradients` accept comma-separated lists
("rc, rc_ps" / "true, false"), expanding into a grid of cells. Unknown
sections or keys are hard errors. `resolve` returns fully populated
configs, so every defaulted knob (entropy target, turn budget, initial
message constant, parameter sharing) is visible to the caller.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .experiments import CellSpec, ExperimentConfig, LOSS_MODES
from .negotiation import NegotiationConfig
from .seqguess import MESSAGE_CONTINUOUS, SeqGuessConfig
from .training import (
    GAME_NEGOTIATION,
    GAME_SEQGUESS,
    TrainerConfig,
    negotiation_trainer_defaults,
    seqguess_trainer_defaults,
)


class ConfigError(ValueError):
    pass


_EXPERIMENT_KEYS = {"game", "message_kind", "losses", "interagent_gradients", "runs", "seed", "out"}


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _coerce(raw: str, target_type, key: str):
    raw = raw.strip()
    if target_type is bool:
        return _parse_bool(raw, key)
    if target_type is int:
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from exc
    if target_type is float:
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from exc
    return raw


def _apply_section(section, dataclass_type, defaults: dict, section_name: str) -> dict:
    """Overlay file keys onto dataclass defaults, rejecting unknown keys."""
    fields = {f.name: f for f in dataclasses.fields(dataclass_type)}
    out = dict(defaults)
    for key, raw in section.items():
        if key not in fields:
            raise ConfigError(f"unknown key [{section_name}] {key}")
        f = fields[key]
        base = f.type
        if isinstance(base, str):
            base = base.replace(" ", "")
            if base in ("float|None", "None|float"):
                if raw.strip().lower() in ("none", ""):
                    out[key] = None
                    continue
                base = "float"
            base = {"bool": bool, "int": int, "float": float, "str": str}.get(base, str)
        out[key] = _coerce(raw, base, f"[{section_name}] {key}")
    return out


@dataclass
class ResolvedConfig:
    """Everything a `train` invocation needs, fully defaulted."""

    experiments: list[ExperimentConfig]
    game: str
    out_dir: str

    def echo(self) -> str:
        """Render every resolved value, including gap-filling defaults."""
        lines = [f"game = {self.game}", f"out = {self.out_dir}", ""]
        for exp in self.experiments:
            lines.append(f"[cell {exp.cell.name}]")
            lines.append(f"runs = {exp.n_runs}")
            lines.append(f"seed_base = {exp.seed_base}")
            for name, value in sorted(dataclasses.asdict(exp.trainer).items()):
                lines.append(f"trainer.{name} = {value}")
            for name, value in sorted(dataclasses.asdict(exp.game_cfg).items()):
                lines.append(f"game.{name} = {value}")
            if exp.cell.game == GAME_SEQGUESS:
                lines.append(f"derived.return_shift = {_shift_of(exp.game_cfg):.6f}")
            lines.append("")
        return "\n".join(lines)


def _shift_of(game_cfg) -> float:
    from .seqguess import return_shift

    return return_shift(game_cfg)


def parse_config(path, runs=None, seed=None, out=None) -> ResolvedConfig:
    """Read, validate, and fully resolve a config file.

    `runs`, `seed`, and `out` are command-line overrides applied on top.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    known_sections = {"experiment", "trainer", "negotiation", "seqguess"}
    for section in parser.sections():
        if section not in known_sections:
            raise ConfigError(f"unknown section [{section}]")
    if "experiment" not in parser:
        raise ConfigError("missing [experiment] section")

    exp = dict(parser["experiment"])
    for key in exp:
        if key not in _EXPERIMENT_KEYS:
            raise ConfigError(f"unknown key [experiment] {key}")
    game = exp.get("game", "").strip()
    if game not in (GAME_NEGOTIATION, GAME_SEQGUESS):
        raise ConfigError(f"[experiment] game must be negotiation or seqguess, got {game!r}")
    if game == GAME_NEGOTIATION and "seqguess" in parser:
        raise ConfigError("[seqguess] section is invalid for the negotiation game")
    if game == GAME_SEQGUESS and "negotiation" in parser:
        raise ConfigError("[negotiation] section is invalid for the seqguess game")

    message_kind = exp.get("message_kind", MESSAGE_CONTINUOUS).strip()
    loss_list = [tok.strip() for tok in exp.get("losses", "rc_ps").split(",") if tok.strip()]
    for mode in loss_list:
        if mode not in LOSS_MODES:
            raise ConfigError(f"[experiment] losses: unknown mode {mode!r}")
    ig_raw = exp.get("interagent_gradients", "false")
    ig_list = []
    for tok in ig_raw.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if tok.lower() == "both":
            ig_list.extend([True, False])
        else:
            ig_list.append(_parse_bool(tok, "[experiment] interagent_gradients"))
    n_runs = int(runs) if runs is not None else _coerce(exp.get("runs", "30"), int, "[experiment] runs")
    seed_base = int(seed) if seed is not None else _coerce(exp.get("seed", "0"), int, "[experiment] seed")
    out_dir = str(out) if out is not None else exp.get("out", "runs").strip()

    if game == GAME_NEGOTIATION:
        game_defaults = dataclasses.asdict(NegotiationConfig())
        game_section = parser["negotiation"] if "negotiation" in parser else {}
        game_values = _apply_section(game_section, NegotiationConfig, game_defaults, "negotiation")
        game_cfg = NegotiationConfig(**game_values)
        trainer_defaults = dataclasses.asdict(negotiation_trainer_defaults())
    else:
        game_defaults = dataclasses.asdict(SeqGuessConfig(message_kind=message_kind))
        game_section = parser["seqguess"] if "seqguess" in parser else {}
        game_values = _apply_section(game_section, SeqGuessConfig, game_defaults, "seqguess")
        game_values["message_kind"] = message_kind
        game_cfg = SeqGuessConfig(**game_values)
        trainer_defaults = dataclasses.asdict(seqguess_trainer_defaults(message_kind))

    trainer_section = parser["trainer"] if "trainer" in parser else {}
    trainer_values = _apply_section(trainer_section, TrainerConfig, trainer_defaults, "trainer")

    experiments = []
    try:
        for ig in ig_list or [False]:
            for losses in loss_list:
                cell = CellSpec(
                    game=game,
                    losses=losses,
                    interagent_gradients=ig,
                    message_kind=message_kind,
                )
                values = dict(trainer_values)
                values["rc_enabled"], values["ps_enabled"] = cell.rc_ps_flags()
                values["interagent_gradients"] = ig
                experiments.append(
                    ExperimentConfig(
                        cell=cell,
                        trainer=TrainerConfig(**values),
                        game_cfg=game_cfg,
                        n_runs=n_runs,
                        seed_base=seed_base,
                        out_dir=out_dir,
                    )
                )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return ResolvedConfig(experiments=experiments, game=game, out_dir=out_dir)
