import pytest

from llmembed.costs import (
    CostReport,
    PhaseTiming,
    PowerProfile,
    build_report,
    compare_report,
    electricity_bill,
    energy_kwh,
    format_usd,
    token_budget,
)
from llmembed.errors import PhaseError, ValidationError


def test_energy_sst2_extraction():
    # 13m30s train extraction + 10s test extraction at 240 W
    timings = [PhaseTiming("extract", 13 * 60 + 30), PhaseTiming("extract", 10)]
    per_phase, total = energy_kwh(timings, PowerProfile())
    assert round(total, 4) == 0.0547
    assert per_phase["extract"] == total


def test_energy_zero_duration():
    _, total = energy_kwh([PhaseTiming("train", 0.0)], PowerProfile())
    assert total == 0.0


def test_energy_unit_identity():
    _, total = energy_kwh([PhaseTiming("heater", 3600.0)], PowerProfile({"heater": 1000.0}))
    assert total == 1.0


def test_energy_unknown_phase():
    with pytest.raises(PhaseError, match="mystery"):
        energy_kwh([PhaseTiming("mystery", 5.0)], PowerProfile())


def test_negative_duration_rejected():
    with pytest.raises(ValidationError):
        PhaseTiming("train", -1.0)


def test_bill_values_from_reference_rows():
    assert electricity_bill(0.06, 0.065) == 0.0039
    assert electricity_bill(1.51, 0.065) == 0.09815
    assert electricity_bill(0.0, 0.065) == 0.0


def test_token_budget_values():
    assert token_budget(28_719_397, 0.002) == pytest.approx(57.438794, abs=1e-9)
    assert round(token_budget(28_719_397, 0.002), 2) == 57.44
    assert round(token_budget(107_027_342, 0.002), 2) == 214.05
    assert token_budget(0, 0.002) == 0.0


def test_linearity_of_energy_and_bills():
    timings = [PhaseTiming("extract", 820.0), PhaseTiming("train", 511.0)]
    profile = PowerProfile()
    _, total = energy_kwh(timings, profile)
    _, doubled = energy_kwh([PhaseTiming(t.phase, 2 * t.seconds) for t in timings], profile)
    assert doubled == 2 * total
    assert electricity_bill(2 * 0.06, 0.065) == 2 * electricity_bill(0.06, 0.065)


def test_report_totals_and_json_round_trip():
    report = build_report(
        [PhaseTiming("extract", 900.0), PhaseTiming("train", 510.0), PhaseTiming("infer", 1.0)],
        PowerProfile(),
        tariff_per_kwh=0.065,
        token_count=28_719_397,
        token_price_per_1k=0.002,
    )
    assert abs(report.total_kwh - sum(report.phase_kwh.values())) <= 1e-9
    back = CostReport.from_json(report.to_json())
    assert back == report
    assert back.token_bill_micro == 57_438_794


def test_compare_reproduces_reference_ratio():
    local = build_report([PhaseTiming("extract", 900.0)], PowerProfile(), tariff_per_kwh=0.065)
    assert local.total_kwh == 0.06
    assert local.bill_micro == 3900
    remote = build_report([], PowerProfile(), token_count=28_719_397, token_price_per_1k=0.002)
    cmp = compare_report(local, remote)
    assert cmp["percent"] == "0.0068%"
    assert cmp["local_usd"] == 0.0039


def test_compare_equal_totals():
    r = build_report([PhaseTiming("train", 100.0)], PowerProfile())
    assert compare_report(r, r)["percent"] == "100%"


def test_compare_zero_remote():
    local = build_report([PhaseTiming("train", 100.0)], PowerProfile())
    empty = build_report([], PowerProfile())
    out = compare_report(local, empty)
    assert out["percent"] == "undefined"
    assert out["ratio"] is None


def test_format_usd():
    assert format_usd(3900, 4) == "$0.0039"
    assert format_usd(98150, 5) == "$0.09815"
    assert format_usd(57_438_794, 2) == "$57.44"


def test_render_text_contains_totals():
    report = build_report(
        [PhaseTiming("extract", 900.0)], PowerProfile(), tariff_per_kwh=0.065
    )
    text = report.render_text()
    assert "total" in text and "$0.0039" in text
