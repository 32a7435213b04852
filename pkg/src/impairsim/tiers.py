"""Built-in network tiers and NetEm command rendering."""
from __future__ import annotations

import configparser
import enum
import math
import re
from dataclasses import dataclass, fields

from .channel import (
    DEFAULT_OVERHEAD_BYTES,
    DEFAULT_QUEUE_CAPACITY,
    NS_PER_MS,
    GilbertElliottParams,
    ImpairmentProfile,
    ge_from_targets,
)


class TierError(ValueError):
    pass


class TierName(enum.Enum):
    HospitalLAN = "HospitalLAN"
    FiveGUrban = "FiveGUrban"
    FourGRural = "FourGRural"
    LEOSatellite = "LEOSatellite"
    GEOSatellite = "GEOSatellite"


@dataclass(frozen=True)
class TierSpec:
    name: str
    bandwidth_mbps: float
    nominal_delay_ms: float
    jitter_ms: float
    target_p_E: float  # percent
    target_L_B: float  # packets

    def validate(self):
        if not self.name:
            raise TierError("tier name must be non-empty")
        if not self.bandwidth_mbps > 0:
            raise TierError(f"{self.name}: bandwidth must be positive")
        if self.nominal_delay_ms < 0 or self.jitter_ms < 0:
            raise TierError(f"{self.name}: delay and jitter must be non-negative")
        if not 0 <= self.target_p_E < 100:
            raise TierError(f"{self.name}: loss percent must lie in [0, 100)")
        if not self.target_L_B >= 1:
            raise TierError(f"{self.name}: mean burst length must be >= 1")
        return self


BUILTIN_TIERS = {
    spec.name: spec
    for spec in (
        TierSpec("HospitalLAN", 100, 3, 1, 0.01, 2),
        TierSpec("FiveGUrban", 20, 35, 8, 0.50, 3),
        TierSpec("FourGRural", 5, 150, 30, 2.00, 6),
        TierSpec("LEOSatellite", 30, 30, 10, 1.50, 5),
        TierSpec("GEOSatellite", 10, 600, 50, 0.50, 2),
    )
}
TIER_ORDER = [t.value for t in TierName]


def _norm(name):
    return re.sub(r"[^a-z0-9]", "", name.lower())


def get_tier(name: str, extra: dict | None = None) -> TierSpec:
    """Look up a tier by name, case- and punctuation-insensitively."""
    pool = dict(BUILTIN_TIERS)
    if extra:
        pool.update(extra)
    wanted = _norm(name)
    for key, spec in pool.items():
        if _norm(key) == wanted:
            return spec
    raise TierError(f"unknown tier {name!r}; known: {', '.join(pool)}")


def round_sig(x: float, digits: int = 3) -> float:
    return float(f"{x:.{digits}g}")


def gemodel_params(spec: TierSpec) -> GilbertElliottParams:
    """Transition probabilities as ``tc ... loss gemodel P R`` carries them.

    R is 1/L_B rounded to three significant figures in percent; P is derived
    from that rounded R and rounded the same way.
    """
    r_pct = round_sig(100.0 / spec.target_L_B)
    p_e = spec.target_p_E / 100.0
    p_pct = round_sig(100.0 * p_e * (r_pct / 100.0) / (1.0 - p_e))
    return GilbertElliottParams(p=p_pct / 100.0, r=r_pct / 100.0)


def tier_profile(
    spec: TierSpec,
    queue_capacity: int = DEFAULT_QUEUE_CAPACITY,
    overhead_bytes: int = DEFAULT_OVERHEAD_BYTES,
    exact_ge: bool = False,
) -> ImpairmentProfile:
    """Channel profile for ``spec``.

    By default the loss chain uses the rounded gemodel parameters, so the
    simulation matches the rendered NetEm command; ``exact_ge`` uses the
    unrounded inversion instead.
    """
    spec.validate()
    ge = ge_from_targets(spec.target_p_E / 100.0, spec.target_L_B) if exact_ge else gemodel_params(spec)
    return ImpairmentProfile(
        bandwidth_bps=spec.bandwidth_mbps * 1e6,
        nominal_delay_ns=int(round(spec.nominal_delay_ms * NS_PER_MS)),
        jitter_std_ns=spec.jitter_ms * NS_PER_MS,
        ge=ge,
        queue_capacity=queue_capacity,
        overhead_bytes=overhead_bytes,
    )


def format_percent(value: float) -> str:
    """Three significant figures; trailing zeros trimmed down to one decimal."""
    if value == 0:
        return "0.0"
    digits = max(0, 2 - int(math.floor(math.log10(abs(value)))))
    text = f"{value:.{digits}f}"
    if "." not in text:
        return text + ".0"
    text = text.rstrip("0")
    return text + "0" if text.endswith(".") else text


def _num(x: float) -> str:
    return f"{x:g}"


def render_netem_commands(spec: TierSpec, interface_name: str, limit: int = DEFAULT_QUEUE_CAPACITY) -> list[str]:
    """The single ``tc qdisc add`` line applying every impairment of ``spec``."""
    if not interface_name or not interface_name.strip():
        raise TierError("interface name must be non-empty")
    ge = gemodel_params(spec)
    parts = [
        f"tc qdisc add dev {interface_name} root netem",
        f"rate {_num(spec.bandwidth_mbps)}mbit",
        f"delay {_num(spec.nominal_delay_ms)}ms",
    ]
    if spec.jitter_ms > 0:
        parts[-1] += f" {_num(spec.jitter_ms)}ms"
    if ge.p > 0:
        parts.append(f"loss gemodel {format_percent(ge.p * 100)}% {format_percent(ge.r * 100)}%")
    parts.append(f"limit {limit}")
    return [" ".join(parts)]


def load_tier_file(path) -> dict[str, TierSpec]:
    """Read ``[TierName]`` sections of ``key = value`` lines matching TierSpec fields.

    A section named after a built-in tier overrides only the keys it sets.
    """
    parser = configparser.ConfigParser()
    parser.optionxform = str
    with open(path) as fh:
        parser.read_file(fh)
    numeric = [f.name for f in fields(TierSpec) if f.name != "name"]
    out = {}
    for section in parser.sections():
        try:
            base = get_tier(section)
            values = {k: getattr(base, k) for k in numeric}
            name = base.name
        except TierError:
            values = {}
            name = section
        for key, raw in parser[section].items():
            if key not in numeric:
                raise TierError(f"[{section}]: unknown key {key!r}; expected one of {', '.join(numeric)}")
            try:
                values[key] = float(raw)
            except ValueError:
                raise TierError(f"[{section}] {key}: not a number: {raw!r}") from None
        missing = [k for k in numeric if k not in values]
        if missing:
            raise TierError(f"[{section}]: missing keys {', '.join(missing)}")
        out[name] = TierSpec(name=name, **values).validate()
    return out


def tier_table(specs) -> str:
    header = f"{'tier':<14}{'Mbps':>7}{'delay ms':>10}{'jitter ms':>11}{'p %':>9}{'r %':>8}{'p_E %':>8}{'L_B':>6}"
    lines = [header]
    for spec in specs:
        ge = gemodel_params(spec)
        lines.append(
            f"{spec.name:<14}{_num(spec.bandwidth_mbps):>7}{_num(spec.nominal_delay_ms):>10}"
            f"{_num(spec.jitter_ms):>11}{format_percent(ge.p * 100):>9}{format_percent(ge.r * 100):>8}"
            f"{spec.target_p_E:>8.2f}{_num(spec.target_L_B):>6}"
        )
    return "\n".join(lines)
