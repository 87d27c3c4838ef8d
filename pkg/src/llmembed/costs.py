"""Runtime, electricity, and token-budget accounting.

Energy is watts x seconds / 3.6e6 (kWh); a bill is energy x tariff; a token
budget is tokens / 1000 x price.  Currency is held in integer micro-dollars
so repeated arithmetic cannot drift, and rendered at 2-5 decimals.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import PhaseError, ValidationError

JOULES_PER_KWH = 3.6e6

DEFAULT_WATTS = {"extract": 240.0, "train": 45.0, "infer": 45.0}
DEFAULT_TARIFF = 0.065  # $/kWh
DEFAULT_TOKEN_PRICE = 0.002  # $/1k tokens


@dataclass(frozen=True)
class PhaseTiming:
    phase: str
    seconds: float

    def __post_init__(self):
        if self.seconds < 0:
            raise ValidationError(f"phase '{self.phase}': duration must be >= 0")


@dataclass(frozen=True)
class PowerProfile:
    watts: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_WATTS))

    def __post_init__(self):
        for phase, w in self.watts.items():
            if w <= 0:
                raise ValidationError(f"phase '{phase}': wattage must be > 0, got {w}")

    def for_phase(self, phase: str) -> float:
        if phase not in self.watts:
            raise PhaseError(
                f"no wattage for phase '{phase}' (known: {sorted(self.watts)})"
            )
        return self.watts[phase]


def _micro(amount: float) -> int:
    return round(amount * 1e6)


def format_usd(micro: int, places: int = 4) -> str:
    return f"${micro / 1e6:.{places}f}"


def energy_kwh(
    timings: Iterable[PhaseTiming], profile: PowerProfile
) -> tuple[dict[str, float], float]:
    """Per-phase kWh and their total; every phase must have a wattage."""
    per_phase: dict[str, float] = {}
    for t in timings:
        kwh = profile.for_phase(t.phase) * t.seconds / JOULES_PER_KWH
        per_phase[t.phase] = per_phase.get(t.phase, 0.0) + kwh
    return per_phase, sum(per_phase.values())


def electricity_bill(kwh: float, tariff_per_kwh: float) -> float:
    """Dollars for ``kwh`` at the tariff, exact at micro-dollar resolution."""
    if kwh < 0 or tariff_per_kwh < 0:
        raise ValidationError("kwh and tariff must be >= 0")
    return _micro(kwh * tariff_per_kwh) / 1e6


def token_budget(token_count: int, price_per_1k: float) -> float:
    """Dollars for ``token_count`` tokens at a per-1k-token price."""
    if token_count < 0 or price_per_1k < 0:
        raise ValidationError("token count and price must be >= 0")
    return _micro(token_count / 1000.0 * price_per_1k) / 1e6


@dataclass(frozen=True)
class CostReport:
    """Energy and money for one workload; token fields only when priced."""

    phase_seconds: dict[str, float]
    phase_kwh: dict[str, float]
    total_kwh: float
    tariff_per_kwh: float
    bill_micro: int
    token_count: int | None = None
    token_price_per_1k: float | None = None
    token_bill_micro: int | None = None

    def __post_init__(self):
        if abs(self.total_kwh - sum(self.phase_kwh.values())) > 1e-9:
            raise ValidationError("total_kwh does not equal the sum of phases")

    @property
    def total_cost_micro(self) -> int:
        return self.bill_micro + (self.token_bill_micro or 0)

    def to_json_dict(self) -> dict:
        doc = {
            "phase_seconds": self.phase_seconds,
            "phase_kwh": self.phase_kwh,
            "total_kwh": self.total_kwh,
            "tariff_per_kwh": self.tariff_per_kwh,
            "bill_microusd": self.bill_micro,
            "bill_usd": self.bill_micro / 1e6,
        }
        if self.token_count is not None:
            doc["tokens"] = {
                "count": self.token_count,
                "price_per_1k": self.token_price_per_1k,
                "bill_microusd": self.token_bill_micro,
                "bill_usd": (self.token_bill_micro or 0) / 1e6,
            }
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "CostReport":
        tokens = doc.get("tokens")
        return cls(
            phase_seconds=dict(doc["phase_seconds"]),
            phase_kwh=dict(doc["phase_kwh"]),
            total_kwh=doc["total_kwh"],
            tariff_per_kwh=doc["tariff_per_kwh"],
            bill_micro=doc["bill_microusd"],
            token_count=tokens["count"] if tokens else None,
            token_price_per_1k=tokens["price_per_1k"] if tokens else None,
            token_bill_micro=tokens["bill_microusd"] if tokens else None,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CostReport":
        return cls.from_json_dict(json.loads(text))

    def render_text(self) -> str:
        rows = [("process", "seconds", "kWh", "bill")]
        for phase in self.phase_kwh:
            rows.append(
                (
                    phase,
                    f"{self.phase_seconds.get(phase, 0.0):.1f}",
                    f"{self.phase_kwh[phase]:.4f}",
                    "",
                )
            )
        rows.append(
            ("total", "", f"{self.total_kwh:.4f}", format_usd(self.bill_micro, 4))
        )
        if self.token_count is not None:
            rows.append(
                (
                    "tokens",
                    f"{self.token_count}",
                    "",
                    format_usd(self.token_bill_micro or 0, 2),
                )
            )
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
        return "\n".join(lines) + "\n"


def build_report(
    timings: Iterable[PhaseTiming],
    profile: PowerProfile,
    tariff_per_kwh: float = DEFAULT_TARIFF,
    token_count: int | None = None,
    token_price_per_1k: float | None = None,
) -> CostReport:
    timings = list(timings)
    per_phase, total = energy_kwh(timings, profile)
    seconds: dict[str, float] = {}
    for t in timings:
        seconds[t.phase] = seconds.get(t.phase, 0.0) + t.seconds
    token_micro = None
    if token_count is not None:
        price = DEFAULT_TOKEN_PRICE if token_price_per_1k is None else token_price_per_1k
        token_price_per_1k = price
        token_micro = _micro(token_budget(token_count, price))
    return CostReport(
        phase_seconds=seconds,
        phase_kwh=per_phase,
        total_kwh=total,
        tariff_per_kwh=tariff_per_kwh,
        bill_micro=_micro(electricity_bill(total, tariff_per_kwh)),
        token_count=token_count,
        token_price_per_1k=token_price_per_1k,
        token_bill_micro=token_micro,
    )


def _two_sig_figs(value: float) -> float:
    if value == 0:
        return 0.0
    exponent = math.floor(math.log10(abs(value)))
    return round(value, -exponent + 1)


def compare_report(local: CostReport, remote: CostReport) -> dict:
    """Local-total / remote-total as a percentage with 2 significant digits."""
    local_total = local.total_cost_micro
    remote_total = remote.total_cost_micro
    if remote_total == 0:
        return {
            "local_usd": local_total / 1e6,
            "remote_usd": 0.0,
            "ratio": None,
            "percent": "undefined",
        }
    ratio = local_total / remote_total
    percent = _two_sig_figs(100.0 * ratio)
    return {
        "local_usd": local_total / 1e6,
        "remote_usd": remote_total / 1e6,
        "ratio": ratio,
        "percent": f"{percent:g}%",
    }
