"""Demodulated traces and their CSV interchange format.

A trace CSV is self-describing: ``# key=value`` comment lines echo the
producing configuration, then a ``control,value`` table follows.  Floats are
written with shortest round-trip precision (17 significant digits), so a
write/read cycle is bit exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .atoms import ScanAxis
from .exceptions import ConfigError, SchemaError

TRACE_SCHEMA = "magscan-trace/1"

CHANNELS = ("CPT", "MM_x", "MM_y", "MM_z")
CONTROL_UNITS = ("uT", "V", "kHz")


def mm_channel_for(axis: ScanAxis) -> str:
    """MM channel name for the modulated field axis."""
    return {"BX": "MM_x", "BY": "MM_y", "BZ": "MM_z"}[axis.value]


@dataclass
class Trace:
    """Ordered (control value, demodulated value) samples with provenance."""

    channel: str
    scan_axis: ScanAxis
    control_unit: str
    controls: np.ndarray
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.controls = np.asarray(self.controls, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.channel not in CHANNELS:
            raise ConfigError(f"unknown channel {self.channel!r}")
        if self.control_unit not in CONTROL_UNITS:
            raise ConfigError(f"unknown control unit {self.control_unit!r}")
        if self.controls.shape != self.values.shape or self.controls.ndim != 1:
            raise ConfigError("controls and values must be matching 1-D arrays")
        diffs = np.diff(self.controls)
        if len(diffs) and not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ConfigError("control values must be strictly monotone")
        mod_axis = self.metadata.get("modulation.b_axis")
        if self.channel.startswith("MM_") and mod_axis:
            expected = mm_channel_for(ScanAxis.from_string(mod_axis))
            if expected != self.channel:
                raise ConfigError(
                    f"channel {self.channel} does not match modulated axis {mod_axis}"
                )

    def __len__(self):
        return len(self.controls)

    @property
    def step(self) -> float:
        return float(np.median(np.diff(self.controls)))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())

    def dumps(self) -> str:
        lines = [f"# schema={TRACE_SCHEMA}"]
        lines.append(f"# channel={self.channel}")
        lines.append(f"# scan_axis={self.scan_axis.value}")
        lines.append(f"# control_unit={self.control_unit}")
        for key in sorted(self.metadata):
            lines.append(f"# {key}={self.metadata[key]}")
        lines.append("control,value")
        for c, v in zip(self.controls, self.values):
            lines.append(f"{float(c)!r},{float(v)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, path) -> "Trace":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.loads(fh.read())

    @classmethod
    def loads(cls, text: str) -> "Trace":
        metadata = {}
        controls, values = [], []
        saw_header = False
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" not in body:
                    raise SchemaError("comment header without key=value", lineno)
                key, _, value = body.partition("=")
                metadata[key.strip()] = value.strip()
                continue
            if not saw_header:
                if line != "control,value":
                    raise SchemaError(f"expected 'control,value' header, got {line!r}", lineno)
                saw_header = True
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise SchemaError(f"expected two comma-separated numbers, got {line!r}", lineno)
            try:
                controls.append(float(parts[0]))
                values.append(float(parts[1]))
            except ValueError:
                raise SchemaError(f"unparseable number in {line!r}", lineno) from None
        schema = metadata.pop("schema", None)
        if schema is None:
            raise SchemaError("missing '# schema=' header")
        _check_schema(schema, TRACE_SCHEMA)
        if not saw_header or not controls:
            raise SchemaError("no data rows")
        channel = metadata.pop("channel", None)
        axis = metadata.pop("scan_axis", None)
        unit = metadata.pop("control_unit", None)
        if channel is None or axis is None or unit is None:
            raise SchemaError("missing channel/scan_axis/control_unit headers")
        return cls(
            channel=channel,
            scan_axis=ScanAxis.from_string(axis),
            control_unit=unit,
            controls=np.array(controls),
            values=np.array(values),
            metadata=metadata,
        )


def _check_schema(found: str, expected: str) -> None:
    exp_name, _, exp_major = expected.partition("/")
    name, _, major = found.partition("/")
    if name != exp_name or major.split(".")[0] != exp_major:
        raise SchemaError(f"unsupported schema {found!r} (reader supports {expected})")
