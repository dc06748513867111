"""JSON run configuration shared by every CLI command.

Top-level sections are all optional; anything omitted takes the library
default.  Unknown keys are rejected at every level.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .channel import ChannelParams
from .core import EPS_USE_NAMES, ProtocolParams, SecurityParams
from .finite_key import BOUND_FORMS, FLUCTUATION_MODES, PHASE_SCALES, AnalysisSettings
from .session import SessionConfig

_prob = {"type": "number", "minimum": 0, "maximum": 1}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}


def _obj(props: dict) -> dict:
    return {"type": "object", "additionalProperties": False, "properties": props}


_detectors = {"type": "object", "additionalProperties": False, "required": ["D0", "D1", "D2"],
              "properties": {"D0": _nonneg, "D1": _nonneg, "D2": _nonneg}}

CONFIG_SCHEMA = _obj({
    "protocol": _obj({
        "mu": _pos, "p_z": _prob, "p_0": _prob, "p_alpha_alpha": _prob,
        "z_split": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "repetition_hz": _pos,
    }),
    "security": _obj({
        "eps_cor": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "eps_sec": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "eps_overrides": {"type": "object", "additionalProperties": False,
                          "properties": {k: {"type": "number", "exclusiveMinimum": 0,
                                             "exclusiveMaximum": 1} for k in EPS_USE_NAMES}},
    }),
    "channel": _obj({
        "distance_km": _nonneg, "atten_db_per_km": _nonneg, "eff": _detectors,
        "dark_hz": _detectors, "gate_s": _nonneg, "visibility": _prob,
        "window_loss_db": _nonneg,
        "insertion_losses_db": {"type": "object", "additionalProperties": _nonneg},
        "d1_thinning": _prob, "z_flip_prob": _prob, "interferometer_phase": {"type": "number"},
    }),
    "analysis": _obj({
        "form": {"enum": list(BOUND_FORMS)},
        "fluctuation": {"enum": list(FLUCTUATION_MODES)},
        "phase_scale": {"enum": list(PHASE_SCALES)},
        "p_z": _prob, "f": _pos, "kato_k": {"enum": ["N", "NP"]},
    }),
    "run": _obj({
        "refined": {"type": "boolean"},
        "leak_bits": {"type": ["integer", "null"], "minimum": 0},
        "N": _pos,
    }),
    "session": _obj({
        "N": {"type": "integer", "minimum": 1},
        "channel_seed": {"type": "integer", "minimum": 0},
        "sample_fraction": _prob,
        "verify_bits": {"type": "integer", "minimum": 0, "maximum": 4096},
        "cascade_K": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "cascade_rounds": {"type": "integer", "minimum": 1, "maximum": 3},
        "cascade_frame_bits": {"type": "integer", "minimum": 64},
        "cascade_growth": _pos,
        "timeout_s": _pos,
    }),
})


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    protocol: ProtocolParams = field(default_factory=ProtocolParams)
    security: SecurityParams = field(default_factory=SecurityParams)
    channel: ChannelParams = field(default_factory=ChannelParams)
    analysis: AnalysisSettings = field(default_factory=AnalysisSettings)
    refined: bool = False
    leak_bits: int | None = None
    N: float = 1e12
    session: dict = field(default_factory=dict)

    def session_config(self) -> SessionConfig:
        return SessionConfig(protocol=self.protocol, channel=self.channel, security=self.security,
                             analysis=self.analysis, refined=self.refined, **self.session)


def parse_config(raw: dict) -> RunConfig:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config field {where}: {exc.message}") from None
    try:
        run = raw.get("run", {})
        ch = dict(raw.get("channel", {}))
        if "eff" in ch or "dark_hz" in ch:
            base = ChannelParams()
            ch.setdefault("eff", base.eff)
            ch.setdefault("dark_hz", base.dark_hz)
        return RunConfig(
            protocol=ProtocolParams(**raw.get("protocol", {})),
            security=SecurityParams(**raw.get("security", {})),
            channel=ChannelParams(**ch),
            analysis=AnalysisSettings(**raw.get("analysis", {})),
            refined=run.get("refined", False),
            leak_bits=run.get("leak_bits"),
            N=run.get("N", 1e12),
            session=dict(raw.get("session", {})),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return parse_config(raw)
